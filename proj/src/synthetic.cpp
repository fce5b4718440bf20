#include "hrirdiff/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "hrirdiff/error.hpp"
#include "hrirdiff/rng.hpp"

namespace hrirdiff {
namespace {

constexpr double kSpeedOfSound = 343.0;
constexpr double kPi = std::numbers::pi;

using ChannelRef = Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

// Windowed-sinc fractional delay added into `out`.
void add_impulse(ChannelRef out, double delay, double gain) {
  constexpr int kHalf = 16;
  const auto centre = static_cast<int>(std::floor(delay));
  for (int n = centre - kHalf; n <= centre + kHalf; ++n) {
    if (n < 0 || n >= out.size()) continue;
    const double x = n - delay;
    const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(kPi * x) / (kPi * x);
    const double window = 0.5 + 0.5 * std::cos(kPi * x / (kHalf + 1));
    out(n) += gain * sinc * window;
  }
}

void one_pole_lowpass(ChannelRef x, double coefficient) {
  double state = 0.0;
  for (Eigen::Index n = 0; n < x.size(); ++n) {
    state = (1.0 - coefficient) * x(n) + coefficient * state;
    x(n) = state;
  }
}

}  // namespace

std::vector<double> synthetic_features(int subject_index, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(subject_index)}));
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  std::vector<double> f(kHeadTorsoFeatures + 2 * kPinnaFeatures);
  for (std::size_t n = 0; n < f.size(); ++n) {
    const double base = 2.0 + 0.5 * static_cast<double>(n % 11);
    f[n] = base * (1.0 + 0.12 * jitter(rng));
  }
  f[0] = 14.5 + 1.5 * jitter(rng);  // head width, cm
  for (int side = 0; side < 2; ++side) {
    const int p = kHeadTorsoFeatures + side * kPinnaFeatures;
    f[p] = 1.8 + 0.4 * jitter(rng);      // concha height, cm
    f[p + 1] = 6.2 + 0.8 * jitter(rng);  // pinna height, cm
  }
  return f;
}

HrirPair synthesize_hrir(double azimuth, double elevation, const AnthroValues& anthro, int length, double sample_rate) {
  const double radius = 0.01 * anthro(0) / 2.0;
  const double concha = anthro(kHeadTorsoFeatures);
  const double pinna = anthro(kHeadTorsoFeatures + 1);
  const double lateral = std::asin(std::sin(azimuth) * std::cos(elevation));  // > 0 towards the left ear
  const double itd = radius / kSpeedOfSound * (lateral + std::sin(lateral));
  const double onset = 24.0;

  HrirPair h;
  h.sample_rate = sample_rate;
  h.samples = Eigen::Matrix<double, 2, Eigen::Dynamic>::Zero(2, length);
  for (int ch = 0; ch < 2; ++ch) {
    const double towards = ch == 0 ? std::sin(lateral) : -std::sin(lateral);  // +1 fully ipsilateral
    const double delay = onset + (ch == 0 ? -0.5 : 0.5) * itd * sample_rate;
    auto row = h.samples.row(ch);
    const double gain = std::pow(10.0, (2.0 * towards - 2.0 * std::max(0.0, -towards)) / 20.0);
    add_impulse(row, delay, gain);
    const double echo = 2.0 + 0.6 * pinna * (1.2 - std::sin(elevation));
    add_impulse(row, delay + echo, -0.35 * gain);
    const double f0 = 2500.0 + 700.0 * concha;
    for (int n = 0; n < length; ++n) {
      const double t = n - delay - 3.0;
      if (t > 0) row(n) += 0.12 * gain * std::exp(-t / 18.0) * std::sin(2.0 * kPi * f0 * t / sample_rate);
    }
    if (towards < 0) one_pole_lowpass(row, 0.45 * -towards);
  }
  return h;
}

std::vector<SubjectRecord> make_synthetic_subjects(const SyntheticOptions& o) {
  std::vector<SubjectRecord> out;
  for (int s = 0; s < o.subjects; ++s) {
    SubjectRecord r;
    r.subject_id = o.first_id + s;
    r.sample_rate = o.sample_rate;
    const auto features = synthetic_features(s, o.seed);
    r.anthro.values = *select_anthro_features(features, PinnaSide::kLeft);
    for (double el_deg : o.elevations_deg)
      for (int a = 0; a < o.azimuths; ++a) {
        HrirMeasurement m;
        m.doa.azimuth = static_cast<float>(2.0 * kPi * a / o.azimuths);
        m.doa.elevation = static_cast<float>(el_deg * kPi / 180.0);
        m.doa.label = static_cast<int>(r.hrirs.size());
        m.hrir = synthesize_hrir(m.doa.azimuth, m.doa.elevation, r.anthro.values, o.length, o.sample_rate);
        m.hrir.samples = m.hrir.samples.cast<float>().cast<double>();
        r.hrirs.push_back(std::move(m));
      }
    out.push_back(std::move(r));
  }
  return out;
}

void write_synthetic_bundle(const std::filesystem::path& dir, const SyntheticOptions& o) {
  const auto subjects = make_synthetic_subjects(o);
  for (const auto& r : subjects) {
    HrirSet set;
    set.sample_rate_hz = o.sample_rate;
    set.length = static_cast<std::uint32_t>(o.length);
    set.measurements = r.hrirs;
    write_hrir_file(dir / "subjects" / std::to_string(r.subject_id) / "hrir.bin", set);
  }
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "anthropometry.csv", std::ios::trunc);
  if (!csv) fail(ErrorKind::kIo, "cannot write " + (dir / "anthropometry.csv").string());
  csv.precision(10);
  csv << "subject_id";
  for (int n = 1; n <= kHeadTorsoFeatures; ++n) csv << ",x" << n;
  for (const char* side : {"L", "R"})
    for (int n = 1; n <= kPinnaFeatures; ++n) csv << ",d" << n << "_" << side;
  csv << '\n';
  for (int s = 0; s < o.subjects; ++s) {
    csv << o.first_id + s;
    for (double v : synthetic_features(s, o.seed)) csv << ',' << v;
    csv << '\n';
  }
}

}  // namespace hrirdiff
