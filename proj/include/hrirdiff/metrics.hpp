#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "hrirdiff/hrir.hpp"

namespace hrirdiff {

struct MagnitudeSpectrum {
  Eigen::VectorXd magnitudes;   // |DFT|, bins 0 .. nfft/2
  Eigen::VectorXd frequencies;  // Hz, ascending
  int doa_label = -1;
};

/// K contiguous bands given by K+1 strictly increasing edges in Hz.
struct BandSpec {
  Eigen::VectorXd edges;

  int count() const { return static_cast<int>(edges.size()) - 1; }
};

enum class BandSpacing { kLinear, kLog };
enum class ItdMethod { kCrossCorrelation, kOnset };

inline constexpr double kMagnitudeFloor = 1e-6;

struct MetricsConfig {
  int nfft = 2048;
  int num_bands = 44;
  double max_frequency_hz = 15000.0;
  BandSpacing spacing = BandSpacing::kLinear;
  double log_min_frequency_hz = 200.0;  // lower edge of the first log band above 0 Hz
  double magnitude_floor = kMagnitudeFloor;
  ItdMethod itd_method = ItdMethod::kCrossCorrelation;
  double itd_lowpass_hz = 1500.0;
  double itd_max_lag_s = 1e-3;
  double onset_threshold_db = -20.0;
  double horizontal_tolerance_rad = 0.0087;  // ~0.5 degrees
};

MagnitudeSpectrum hrtf_magnitude(const Eigen::Ref<const Eigen::VectorXd>& channel, int nfft, double sample_rate);

BandSpec make_linear_bands(int count, double max_frequency_hz);
/// Band 0 spans [0, min_frequency_hz]; the remaining edges are geometric up to max_frequency_hz.
BandSpec make_log_bands(int count, double min_frequency_hz, double max_frequency_hz);
BandSpec make_bands(const MetricsConfig& config);

/// Mean bin magnitude per band. A bin at frequency f belongs to band b when
/// edges[b] <= f < edges[b+1]; the last band also includes its upper edge.
Eigen::VectorXd band_average(const MagnitudeSpectrum& spectrum, const BandSpec& bands);

Eigen::MatrixXd apply_floor(const Eigen::MatrixXd& magnitudes, double floor = kMagnitudeFloor);

/// Root-mean-square dB ratio over all entries of two (bands x directions) magnitude tables.
double lsd(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& estimate);

struct ItdOptions {
  ItdMethod method = ItdMethod::kCrossCorrelation;
  double lowpass_hz = 1500.0;
  double max_lag_s = 1e-3;
  double onset_threshold_db = -20.0;
  double silence_floor = 1e-6;
};

ItdOptions itd_options(const MetricsConfig& config);

/// Interaural time difference in seconds; positive when the left ear leads.
double compute_itd(const HrirPair& h, const ItdOptions& options = {});

struct ItdPoint {
  double azimuth_deg = 0.0;  // wrapped to (-180, 180]
  double itd_s = 0.0;
};

/// ITD for horizontal-plane directions (|elevation| <= tolerance), ordered by azimuth.
std::vector<ItdPoint> itd_curve(std::span<const HrirMeasurement> measurements, const ItdOptions& options = {},
                                double elevation_tolerance_rad = 0.0087);

/// Linear convolution of a mono source with each ear: length source + T - 1.
Eigen::Matrix<double, 2, Eigen::Dynamic> render_binaural(const HrirPair& h,
                                                         const Eigen::Ref<const Eigen::VectorXd>& source,
                                                         double source_rate);

/// Band magnitudes for every (direction, ear) of a measurement set: K x 2L, ear-major per direction.
Eigen::MatrixXd banded_magnitudes(std::span<const HrirMeasurement> measurements, const MetricsConfig& config);

struct SubjectMetrics {
  int subject_id = 0;
  double lsd_db = 0.0;
  double itd_error_us = 0.0;  // mean absolute over directions
  std::size_t directions = 0;
};

struct MetricsSummary {
  std::vector<SubjectMetrics> subjects;
  double global_lsd_db = 0.0;          // mean of per-subject LSD
  double mean_abs_itd_error_us = 0.0;  // mean of per-subject ITD error
};

/// `truth` and `generated` must list the same directions in the same order.
SubjectMetrics evaluate_subject(int subject_id, std::span<const HrirMeasurement> truth,
                                std::span<const HrirMeasurement> generated, const MetricsConfig& config);

MetricsSummary summarize(std::vector<SubjectMetrics> subjects);

void write_itd_csv(const std::filesystem::path& path, std::span<const ItdPoint> points);
void write_spectrum_csv(const std::filesystem::path& path, const MagnitudeSpectrum& truth,
                        const MagnitudeSpectrum& predicted, double floor = kMagnitudeFloor);
void write_waveform_csv(const std::filesystem::path& path, const Eigen::Ref<const Eigen::VectorXd>& truth,
                        const Eigen::Ref<const Eigen::VectorXd>& predicted, double sample_rate);

}  // namespace hrirdiff
