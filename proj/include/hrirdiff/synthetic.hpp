#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hrirdiff/dataset.hpp"

namespace hrirdiff {

/// Spherical-head toy model used for fixtures: Woodworth delay, contralateral shadow,
/// an elevation-dependent pinna echo and a short concha resonance.
struct SyntheticOptions {
  int subjects = 3;
  int first_id = 1;
  int length = 256;
  std::uint32_t sample_rate = 44100;
  int azimuths = 12;
  std::vector<double> elevations_deg{-30.0, 0.0, 30.0};
  std::uint64_t seed = 7;
};

/// 37 raw features per subject: 17 head/torso, 10 left pinna, 10 right pinna.
std::vector<double> synthetic_features(int subject_index, std::uint64_t seed);

HrirPair synthesize_hrir(double azimuth, double elevation, const AnthroValues& anthro, int length, double sample_rate);

std::vector<SubjectRecord> make_synthetic_subjects(const SyntheticOptions& options);

/// Writes the exchange layout (subjects/<id>/hrir.bin and anthropometry.csv with 37 columns).
void write_synthetic_bundle(const std::filesystem::path& dir, const SyntheticOptions& options);

}  // namespace hrirdiff
