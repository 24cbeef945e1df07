#pragma once

#include <string>

#include <json.hpp>

#include "nmpose/error.hpp"
#include "nmpose/raster.hpp"
#include "nmpose/so3.hpp"

namespace nmpose::detail {

using nlohmann::json;

inline json to_json(const Camera& c) {
  return json{{"distance", c.distance}, {"focal", c.focal}, {"image_w", c.image_w},
              {"image_h", c.image_h}, {"stride", c.stride}};
}

inline Camera camera_from_json(const json& j) {
  Camera c;
  c.distance = j.at("distance").get<double>();
  c.focal = j.at("focal").get<double>();
  c.image_w = j.at("image_w").get<int>();
  c.image_h = j.at("image_h").get<int>();
  c.stride = j.at("stride").get<int>();
  return c;
}

inline json to_json(const Rotation& r) {
  json arr = json::array();
  for (double v : r.row_major()) arr.push_back(v);
  return arr;
}

// Throws Error(kInvalidRotation) for non-rotations, json errors for bad shape.
inline Rotation rotation_from_json(const json& j) {
  if (!j.is_array() || j.size() != 9) {
    throw Error(ErrorCode::kInvalidArgument, "pose must be an array of 9 reals");
  }
  std::array<double, 9> v{};
  for (int i = 0; i < 9; ++i) v[i] = j.at(i).get<double>();
  return Rotation::from_row_major(v);
}

}  // namespace nmpose::detail
