#include "hrirdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

#include <unsupported/Eigen/FFT>

#include "hrirdiff/error.hpp"

namespace hrirdiff {
namespace {

Eigen::VectorXd lowpass_kernel(double cutoff_hz, double sample_rate, int half_width) {
  const double fc = cutoff_hz / sample_rate;
  Eigen::VectorXd h(2 * half_width + 1);
  for (int n = -half_width; n <= half_width; ++n) {
    const double sinc = n == 0 ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * n) / (std::numbers::pi * n);
    const double window = 0.54 + 0.46 * std::cos(std::numbers::pi * n / half_width);
    h(n + half_width) = sinc * window;
  }
  return h / h.sum();
}

Eigen::VectorXd convolve_direct(const Eigen::VectorXd& x, const Eigen::VectorXd& h) {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(x.size() + h.size() - 1);
  for (Eigen::Index i = 0; i < x.size(); ++i) y.segment(i, h.size()) += x(i) * h;
  return y;
}

double peak(const Eigen::VectorXd& x) { return x.cwiseAbs().maxCoeff(); }

double itd_cross_correlation(const Eigen::VectorXd& left, const Eigen::VectorXd& right, double fs,
                             const ItdOptions& o) {
  const int half = std::max(8, static_cast<int>(std::lround(2.0 * fs / o.lowpass_hz)));
  const Eigen::VectorXd k = lowpass_kernel(o.lowpass_hz, fs, half);
  const Eigen::VectorXd l = convolve_direct(left, k);
  const Eigen::VectorXd r = convolve_direct(right, k);
  const Eigen::Index n = l.size();
  const Eigen::Index max_lag =
      std::min<Eigen::Index>(n - 1, std::max<Eigen::Index>(1, std::lround(o.max_lag_s * fs)));

  Eigen::VectorXd corr(2 * max_lag + 1);
  for (Eigen::Index lag = -max_lag; lag <= max_lag; ++lag) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, -lag);
    const Eigen::Index hi = std::min<Eigen::Index>(n, n - lag);
    corr(lag + max_lag) = hi > lo ? l.segment(lo, hi - lo).dot(r.segment(lo + lag, hi - lo)) : 0.0;
  }
  Eigen::Index best;
  corr.maxCoeff(&best);
  double offset = 0.0;
  if (best > 0 && best < corr.size() - 1) {
    const double a = corr(best - 1), b = corr(best), c = corr(best + 1);
    const double denom = a - 2.0 * b + c;
    if (denom < 0.0) offset = 0.5 * (a - c) / denom;
  }
  return (static_cast<double>(best - max_lag) + offset) / fs;
}

double onset_time(const Eigen::VectorXd& x, double threshold_db) {
  const double threshold = peak(x) * std::pow(10.0, threshold_db / 20.0);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = std::abs(x(i));
    if (v >= threshold) {
      if (i == 0) return 0.0;
      const double prev = std::abs(x(i - 1));
      return static_cast<double>(i - 1) + (threshold - prev) / (v - prev);
    }
  }
  return static_cast<double>(x.size());
}

double wrap_degrees(double azimuth_rad) {
  double deg = azimuth_rad * 180.0 / std::numbers::pi;
  deg = std::fmod(deg, 360.0);
  if (deg > 180.0) deg -= 360.0;
  if (deg <= -180.0) deg += 360.0;
  return deg;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.precision(10);
  return out;
}

}  // namespace

MagnitudeSpectrum hrtf_magnitude(const Eigen::Ref<const Eigen::VectorXd>& channel, int nfft, double sample_rate) {
  require(nfft >= channel.size() && nfft >= 2, ErrorKind::kConfiguration,
          "nfft " + std::to_string(nfft) + " shorter than signal of length " + std::to_string(channel.size()));
  require(sample_rate > 0, ErrorKind::kConfiguration, "sample rate must be positive");
  std::vector<double> padded(static_cast<std::size_t>(nfft), 0.0);
  for (Eigen::Index i = 0; i < channel.size(); ++i) padded[static_cast<std::size_t>(i)] = channel(i);
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> bins;
  fft.fwd(bins, padded);
  const int half = nfft / 2;
  MagnitudeSpectrum s;
  s.magnitudes.resize(half + 1);
  s.frequencies.resize(half + 1);
  for (int k = 0; k <= half; ++k) {
    s.magnitudes(k) = std::abs(bins[static_cast<std::size_t>(k)]);
    s.frequencies(k) = k * sample_rate / nfft;
  }
  return s;
}

BandSpec make_linear_bands(int count, double max_frequency_hz) {
  require(count >= 1 && max_frequency_hz > 0, ErrorKind::kConfiguration, "invalid band configuration");
  BandSpec b;
  b.edges = Eigen::VectorXd::LinSpaced(count + 1, 0.0, max_frequency_hz);
  return b;
}

BandSpec make_log_bands(int count, double min_frequency_hz, double max_frequency_hz) {
  require(count >= 2 && min_frequency_hz > 0 && max_frequency_hz > min_frequency_hz, ErrorKind::kConfiguration,
          "invalid log band configuration");
  BandSpec b;
  b.edges.resize(count + 1);
  b.edges(0) = 0.0;
  const double ratio = std::log(max_frequency_hz / min_frequency_hz);
  for (int i = 1; i <= count; ++i) b.edges(i) = min_frequency_hz * std::exp(ratio * (i - 1) / (count - 1));
  return b;
}

BandSpec make_bands(const MetricsConfig& config) {
  return config.spacing == BandSpacing::kLinear
             ? make_linear_bands(config.num_bands, config.max_frequency_hz)
             : make_log_bands(config.num_bands, config.log_min_frequency_hz, config.max_frequency_hz);
}

Eigen::VectorXd band_average(const MagnitudeSpectrum& spectrum, const BandSpec& bands) {
  const int k = bands.count();
  require(k >= 1, ErrorKind::kConfiguration, "band spec needs at least one band");
  for (int b = 0; b < k; ++b)
    require(bands.edges(b) < bands.edges(b + 1), ErrorKind::kConfiguration, "band edges must be strictly increasing");
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(k);
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(k);
  for (Eigen::Index i = 0; i < spectrum.frequencies.size(); ++i) {
    const double f = spectrum.frequencies(i);
    if (f < bands.edges(0) || f > bands.edges(k)) continue;
    const double* upper = std::upper_bound(bands.edges.data(), bands.edges.data() + k + 1, f);
    int b = static_cast<int>(upper - bands.edges.data()) - 1;
    b = std::min(b, k - 1);
    sums(b) += spectrum.magnitudes(i);
    counts(b) += 1;
  }
  for (int b = 0; b < k; ++b)
    require(counts(b) > 0, ErrorKind::kConfiguration,
            "band " + std::to_string(b) + " [" + std::to_string(bands.edges(b)) + ", " +
                std::to_string(bands.edges(b + 1)) + ") Hz contains no FFT bin");
  return sums.cwiseQuotient(counts.cast<double>());
}

Eigen::MatrixXd apply_floor(const Eigen::MatrixXd& magnitudes, double floor) { return magnitudes.cwiseMax(floor); }

double lsd(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& estimate) {
  require(reference.rows() == estimate.rows() && reference.cols() == estimate.cols() && reference.size() > 0,
          ErrorKind::kShape, "lsd: banding or direction grid mismatch");
  require((reference.array() > 0).all() && (estimate.array() > 0).all() && reference.allFinite() &&
              estimate.allFinite(),
          ErrorKind::kDomain, "lsd: magnitudes must be positive and finite (apply the magnitude floor first)");
  const Eigen::ArrayXXd db = 20.0 * (reference.array() / estimate.array()).log10();
  return std::sqrt(db.square().mean());
}

ItdOptions itd_options(const MetricsConfig& config) {
  ItdOptions o;
  o.method = config.itd_method;
  o.lowpass_hz = config.itd_lowpass_hz;
  o.max_lag_s = config.itd_max_lag_s;
  o.onset_threshold_db = config.onset_threshold_db;
  return o;
}

double compute_itd(const HrirPair& h, const ItdOptions& options) {
  require(h.sample_rate > 0, ErrorKind::kContract, "HRIR sample rate must be positive");
  const Eigen::VectorXd left = h.left().transpose();
  const Eigen::VectorXd right = h.right().transpose();
  if (left.size() == 0 || peak(left) < options.silence_floor || peak(right) < options.silence_floor)
    fail(ErrorKind::kUndefinedItd, "silent channel");
  if (options.method == ItdMethod::kOnset)
    return (onset_time(right, options.onset_threshold_db) - onset_time(left, options.onset_threshold_db)) / h.sample_rate;
  return itd_cross_correlation(left, right, h.sample_rate, options);
}

std::vector<ItdPoint> itd_curve(std::span<const HrirMeasurement> measurements, const ItdOptions& options,
                                double elevation_tolerance_rad) {
  std::vector<ItdPoint> points;
  for (const auto& m : measurements) {
    if (std::abs(m.doa.elevation) > elevation_tolerance_rad) continue;
    points.push_back({wrap_degrees(m.doa.azimuth), compute_itd(m.hrir, options)});
  }
  if (points.empty()) fail(ErrorKind::kEmptySelection, "no horizontal-plane directions");
  std::sort(points.begin(), points.end(), [](const ItdPoint& a, const ItdPoint& b) { return a.azimuth_deg < b.azimuth_deg; });
  return points;
}

Eigen::Matrix<double, 2, Eigen::Dynamic> render_binaural(const HrirPair& h, const Eigen::Ref<const Eigen::VectorXd>& source,
                                                         double source_rate) {
  require(source_rate == h.sample_rate, ErrorKind::kContract, "source and HRIR sample rates differ");
  const Eigen::Index n = source.size() + h.length() - 1;
  Eigen::Matrix<double, 2, Eigen::Dynamic> out = Eigen::Matrix<double, 2, Eigen::Dynamic>::Zero(2, std::max<Eigen::Index>(n, 0));
  if (source.size() == 0 || h.length() == 0) return out;
  Eigen::Index nfft = 1;
  while (nfft < n) nfft <<= 1;
  Eigen::FFT<double> fft;
  std::vector<double> x(static_cast<std::size_t>(nfft), 0.0);
  for (Eigen::Index i = 0; i < source.size(); ++i) x[static_cast<std::size_t>(i)] = source(i);
  std::vector<std::complex<double>> xs;
  fft.fwd(xs, x);
  for (int ch = 0; ch < 2; ++ch) {
    std::vector<double> hv(static_cast<std::size_t>(nfft), 0.0);
    for (Eigen::Index i = 0; i < h.length(); ++i) hv[static_cast<std::size_t>(i)] = h.samples(ch, i);
    std::vector<std::complex<double>> hs;
    fft.fwd(hs, hv);
    for (std::size_t k = 0; k < hs.size(); ++k) hs[k] *= xs[k];
    std::vector<double> y;
    fft.inv(y, hs);
    for (Eigen::Index i = 0; i < n; ++i) out(ch, i) = y[static_cast<std::size_t>(i)];
  }
  return out;
}

Eigen::MatrixXd banded_magnitudes(std::span<const HrirMeasurement> measurements, const MetricsConfig& config) {
  const BandSpec bands = make_bands(config);
  Eigen::MatrixXd out(bands.count(), 2 * static_cast<Eigen::Index>(measurements.size()));
  for (std::size_t l = 0; l < measurements.size(); ++l) {
    const auto& h = measurements[l].hrir;
    for (int ch = 0; ch < 2; ++ch) {
      const auto spec = hrtf_magnitude(h.samples.row(ch).transpose(), config.nfft, h.sample_rate);
      out.col(2 * static_cast<Eigen::Index>(l) + ch) = band_average(spec, bands);
    }
  }
  return out;
}

SubjectMetrics evaluate_subject(int subject_id, std::span<const HrirMeasurement> truth,
                                std::span<const HrirMeasurement> generated, const MetricsConfig& config) {
  require(truth.size() == generated.size() && !truth.empty(), ErrorKind::kShape,
          "subject " + std::to_string(subject_id) + ": direction count mismatch");
  SubjectMetrics m;
  m.subject_id = subject_id;
  m.directions = truth.size();
  m.lsd_db = lsd(apply_floor(banded_magnitudes(truth, config), config.magnitude_floor),
                 apply_floor(banded_magnitudes(generated, config), config.magnitude_floor));
  const ItdOptions opts = itd_options(config);
  double total = 0.0;
  for (std::size_t l = 0; l < truth.size(); ++l)
    total += std::abs(compute_itd(truth[l].hrir, opts) - compute_itd(generated[l].hrir, opts));
  m.itd_error_us = 1e6 * total / static_cast<double>(truth.size());
  return m;
}

MetricsSummary summarize(std::vector<SubjectMetrics> subjects) {
  MetricsSummary s;
  s.subjects = std::move(subjects);
  if (s.subjects.empty()) return s;
  for (const auto& m : s.subjects) {
    s.global_lsd_db += m.lsd_db;
    s.mean_abs_itd_error_us += m.itd_error_us;
  }
  s.global_lsd_db /= static_cast<double>(s.subjects.size());
  s.mean_abs_itd_error_us /= static_cast<double>(s.subjects.size());
  return s;
}

void write_itd_csv(const std::filesystem::path& path, std::span<const ItdPoint> points) {
  auto out = open_csv(path);
  out << "azimuth_deg,itd_us\n";
  for (const auto& p : points) out << p.azimuth_deg << ',' << p.itd_s * 1e6 << '\n';
}

void write_spectrum_csv(const std::filesystem::path& path, const MagnitudeSpectrum& truth,
                        const MagnitudeSpectrum& predicted, double floor) {
  require(truth.magnitudes.size() == predicted.magnitudes.size(), ErrorKind::kShape, "spectrum length mismatch");
  auto out = open_csv(path);
  out << "freq_hz,mag_db_gt,mag_db_pred\n";
  for (Eigen::Index k = 0; k < truth.magnitudes.size(); ++k)
    out << truth.frequencies(k) << ',' << 20.0 * std::log10(std::max(truth.magnitudes(k), floor)) << ','
        << 20.0 * std::log10(std::max(predicted.magnitudes(k), floor)) << '\n';
}

void write_waveform_csv(const std::filesystem::path& path, const Eigen::Ref<const Eigen::VectorXd>& truth,
                        const Eigen::Ref<const Eigen::VectorXd>& predicted, double sample_rate) {
  require(truth.size() == predicted.size(), ErrorKind::kShape, "waveform length mismatch");
  auto out = open_csv(path);
  out << "t_s,amp_gt,amp_pred\n";
  for (Eigen::Index i = 0; i < truth.size(); ++i) out << i / sample_rate << ',' << truth(i) << ',' << predicted(i) << '\n';
}

}  // namespace hrirdiff
