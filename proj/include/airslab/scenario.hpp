#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "airslab/channel.hpp"
#include "airslab/oracle.hpp"
#include "airslab/scene.hpp"

namespace airslab::scenario {

/// A parsed scenario file: radio and AIRS layout, optional UE list, UE
/// sampler for scenarios without fixed UEs, and the fading settings.
struct Scenario {
  scene::SceneConfig scene;
  oracle::UeSampler sampler;
  channel::FadingSpec fading;
};

/// Parses and validates a scenario document. Angles are read in degrees.
/// Errors are ValidationError with the offending JSON path, e.g. "airs[0].grid".
Scenario parse(const std::string& text);

/// Reads `path`; IoError if it cannot be opened.
Scenario load(const std::filesystem::path& path);

/// The scenario's UEs, or `sampler.count` drops seeded from `seed` when the
/// file lists none.
std::vector<scene::UePos> ues_for(const Scenario& s, std::uint64_t seed);

}  // namespace airslab::scenario
