#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

namespace hrirdiff {

/// Two-channel head-related impulse response. Row 0 is the left ear, row 1 the right ear.
struct HrirPair {
  Eigen::Matrix<double, 2, Eigen::Dynamic> samples;
  double sample_rate = 0.0;

  Eigen::Index length() const { return samples.cols(); }
  auto left() const { return samples.row(0); }
  auto right() const { return samples.row(1); }
  auto left() { return samples.row(0); }
  auto right() { return samples.row(1); }
};

/// Source direction of arrival. `label` indexes the dataset's DOA grid.
struct Doa {
  double azimuth = 0.0;    // radians, [0, 2*pi)
  double elevation = 0.0;  // radians, [-pi/2, pi/2]
  int label = 0;
};

struct HrirMeasurement {
  Doa doa;
  HrirPair hrir;
};

// Contents of one `hrir.bin` file:
//   "HRIR" u8 version=1, u32le T, u32le L, u32le sample_rate_hz,
//   then L x (f32le azimuth, f32le elevation, T f32le left, T f32le right).
struct HrirSet {
  std::uint32_t sample_rate_hz = 0;
  std::uint32_t length = 0;
  std::vector<HrirMeasurement> measurements;
};

inline constexpr std::uint8_t kHrirFormatVersion = 1;

HrirSet read_hrir_file(const std::filesystem::path& path);
void write_hrir_file(const std::filesystem::path& path, const HrirSet& set);

}  // namespace hrirdiff
