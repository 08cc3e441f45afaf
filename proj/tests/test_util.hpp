#pragma once

#include <cmath>

#include "airslab/channel.hpp"
#include "airslab/scene.hpp"

namespace airslab::testing {

/// AIRS facing -Y at (x, y, h): the BS and every UE with smaller y are in front.
inline scene::AirsConfig facing_south(double x, double y, double h, int wy, int wz) {
  scene::AirsConfig a;
  a.pos = {x, y, h};
  a.rot = {0.0, 0.0, -kPi / 2};
  a.grid_y = wy;
  a.grid_z = wz;
  return a;
}

inline scene::SceneConfig small_scene(int n_airs = 1, int wy = 4, int wz = 4, int n_rb = 4) {
  scene::SceneConfig sc;
  sc.n_rb = n_rb;
  sc.n_slots = 2;
  if (n_airs >= 1) sc.airs.push_back(facing_south(80.0, 120.0, 15.0, wy, wz));
  if (n_airs >= 2) sc.airs.push_back(facing_south(-90.0, 110.0, 15.0, wy, wz));
  for (int i = 2; i < n_airs; ++i) sc.airs.push_back(facing_south(30.0 * i, 150.0, 15.0, wy, wz));
  return sc;
}

inline channel::FadingSpec small_spec(int n_large = 2, int n_small = 20, std::uint64_t seed = 7) {
  channel::FadingSpec f;
  f.n_large = n_large;
  f.n_small = n_small;
  f.seed = seed;
  return f;
}

}  // namespace airslab::testing
