#include <cmath>
#include <fstream>
#include <numbers>

#include <gtest/gtest.h>

#include "hrirdiff/metrics.hpp"
#include "hrirdiff/rng.hpp"
#include "test_util.hpp"

using namespace hrirdiff;
using hrirdiff::testing::error_kind_of;

namespace {

constexpr double kFs = 44100.0;

Eigen::VectorXd naive_convolution(const Eigen::VectorXd& x, const Eigen::VectorXd& h) {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(x.size() + h.size() - 1);
  for (Eigen::Index n = 0; n < y.size(); ++n)
    for (Eigen::Index k = 0; k < h.size(); ++k)
      if (n - k >= 0 && n - k < x.size()) y(n) += h(k) * x(n - k);
  return y;
}

// Band-limited click: Hann-windowed burst centred at `centre`.
Eigen::VectorXd click(Eigen::Index length, double centre) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(length);
  for (Eigen::Index n = 0; n < length; ++n) {
    const double t = n - centre;
    if (std::abs(t) < 16) x(n) = std::cos(std::numbers::pi * t / 32) * std::cos(std::numbers::pi * t / 32) *
                                 std::cos(2 * std::numbers::pi * 600.0 * t / kFs);
  }
  return x;
}

HrirPair shifted_pair(int shift, Eigen::Index length = 256) {
  HrirPair h;
  h.sample_rate = kFs;
  h.samples.resize(2, length);
  const double base = 60.0;
  h.samples.row(0) = click(length, shift >= 0 ? base : base - shift).transpose();
  h.samples.row(1) = click(length, shift >= 0 ? base + shift : base).transpose();
  return h;
}

Eigen::VectorXd random_vector(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian<double>(n, 1, rng);
}

}  // namespace

TEST(Spectrum, ImpulseIsFlat) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(256);
  x(0) = 1.0;
  const auto s = hrtf_magnitude(x, 2048, kFs);
  ASSERT_EQ(s.magnitudes.size(), 1025);
  EXPECT_LT((s.magnitudes.array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_DOUBLE_EQ(s.frequencies(1), kFs / 2048);
  EXPECT_DOUBLE_EQ(s.frequencies(1024), kFs / 2);
}

TEST(Spectrum, DelayDoesNotChangeMagnitude) {
  const Eigen::VectorXd x = random_vector(200, 1);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(256);
  y.segment(37, 200) = x;
  Eigen::VectorXd xp = Eigen::VectorXd::Zero(256);
  xp.head(200) = x;
  const auto a = hrtf_magnitude(xp, 512, kFs), b = hrtf_magnitude(y, 512, kFs);
  EXPECT_LT((a.magnitudes - b.magnitudes).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Spectrum, SinusoidPeaksAtItsBin) {
  const int nfft = 256, bin = 9;
  Eigen::VectorXd x(nfft);
  for (int n = 0; n < nfft; ++n) x(n) = std::sin(2 * std::numbers::pi * bin * n / nfft);
  const auto s = hrtf_magnitude(x, nfft, kFs);
  Eigen::Index arg;
  s.magnitudes.maxCoeff(&arg);
  EXPECT_EQ(arg, bin);
  EXPECT_NEAR(s.magnitudes(bin), nfft / 2.0, 1e-9);
}

TEST(Spectrum, NfftBelowLengthRejected) {
  EXPECT_EQ(error_kind_of([] { hrtf_magnitude(Eigen::VectorXd::Ones(300), 256, kFs); }), ErrorKind::kConfiguration);
}

TEST(Bands, DefaultLinearLayout) {
  const BandSpec b = make_bands(MetricsConfig{});
  ASSERT_EQ(b.count(), 44);
  EXPECT_EQ(b.edges(0), 0.0);
  EXPECT_EQ(b.edges(44), 15000.0);
  for (int k = 0; k < 44; ++k) EXPECT_GT(b.edges(k + 1), b.edges(k));
  MetricsConfig log;
  log.spacing = BandSpacing::kLog;
  const BandSpec l = make_bands(log);
  ASSERT_EQ(l.count(), 44);
  EXPECT_NEAR(l.edges(1), 200.0, 1e-9);
  EXPECT_NEAR(l.edges(2) / l.edges(1), l.edges(44) / l.edges(43), 1e-9);
  // Every band holds at least one bin at nfft 2048 and 44.1 kHz.
  const auto s = hrtf_magnitude(Eigen::VectorXd::Ones(256), 2048, kFs);
  EXPECT_NO_THROW(band_average(s, b));
  EXPECT_NO_THROW(band_average(s, l));
}

TEST(Bands, FlatAndSingleBand) {
  MagnitudeSpectrum s;
  s.frequencies = Eigen::VectorXd::LinSpaced(101, 0, 1000);
  s.magnitudes = Eigen::VectorXd::Constant(101, 2.5);
  const auto flat = band_average(s, make_linear_bands(4, 1000));
  EXPECT_LT((flat.array() - 2.5).abs().maxCoeff(), 1e-15);
  s.magnitudes = random_vector(101, 2).cwiseAbs();
  const auto one = band_average(s, make_linear_bands(1, 1000));
  EXPECT_NEAR(one(0), s.magnitudes.mean(), 1e-14);
}

TEST(Bands, StepSpectrumMatchesBruteForce) {
  MagnitudeSpectrum s;
  s.frequencies = Eigen::VectorXd::LinSpaced(64, 0, 630);
  s.magnitudes.resize(64);
  for (int i = 0; i < 64; ++i) s.magnitudes(i) = s.frequencies(i) < 250 ? 1.0 : 3.0;
  BandSpec two;
  two.edges.resize(3);
  two.edges << 0, 300, 630;
  const auto got = band_average(s, two);
  double lo = 0, hi = 0;
  int nlo = 0, nhi = 0;
  for (int i = 0; i < 64; ++i) {
    if (s.frequencies(i) < 300) {
      lo += s.magnitudes(i);
      ++nlo;
    } else {
      hi += s.magnitudes(i);
      ++nhi;
    }
  }
  EXPECT_NEAR(got(0), lo / nlo, 1e-15);
  EXPECT_NEAR(got(1), hi / nhi, 1e-15);
}

TEST(Bands, EmptyBandNamed) {
  MagnitudeSpectrum s;
  s.frequencies = Eigen::VectorXd::LinSpaced(3, 0, 1000);
  s.magnitudes = Eigen::VectorXd::Ones(3);
  try {
    band_average(s, make_linear_bands(8, 1000));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfiguration);
    EXPECT_NE(std::string(e.what()).find("band 1"), std::string::npos) << e.what();
  }
}

TEST(Lsd, IdentityAndHalf) {
  const Eigen::MatrixXd h = random_vector(44 * 6, 3).cwiseAbs().array() + 0.01;
  EXPECT_EQ(lsd(h, h), 0.0);
  EXPECT_NEAR(lsd(h, h / 2), 6.0206, 1e-3);
  EXPECT_NEAR(lsd(h, h / 2), 20 * std::log10(2.0), 1e-12);
}

TEST(Lsd, SymmetricAndScaleInvariant) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::MatrixXd a = gaussian<double>(44, 5, rng).cwiseAbs().array() + 1e-3;
    const Eigen::MatrixXd b = gaussian<double>(44, 5, rng).cwiseAbs().array() + 1e-3;
    EXPECT_NEAR(lsd(a, b), lsd(b, a), 1e-12);
    EXPECT_NEAR(lsd(3.7 * a, 3.7 * b), lsd(a, b), 1e-10);
  }
}

TEST(Lsd, SingleBinBandsMatchBinLevel) {
  const Eigen::VectorXd x = random_vector(64, 5), y = random_vector(64, 6);
  const auto sx = hrtf_magnitude(x, 64, kFs), sy = hrtf_magnitude(y, 64, kFs);
  BandSpec single;
  const Eigen::Index bins = sx.frequencies.size();
  single.edges.resize(bins + 1);
  single.edges(0) = 0.0;
  single.edges(bins) = sx.frequencies(bins - 1);
  for (Eigen::Index k = 1; k < bins; ++k) single.edges(k) = sx.frequencies(k) - kFs / 128;
  const Eigen::VectorXd bx = band_average(sx, single), by = band_average(sy, single);
  double acc = 0;
  for (Eigen::Index k = 0; k < bins; ++k) acc += std::pow(20 * std::log10(sx.magnitudes(k) / sy.magnitudes(k)), 2);
  EXPECT_NEAR(lsd(bx, by), std::sqrt(acc / bins), 1e-10);
}

TEST(Lsd, DomainAndShapeErrors) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Ones(3, 2), b = a;
  b(1, 1) = 0.0;
  EXPECT_EQ(error_kind_of([&] { lsd(a, b); }), ErrorKind::kDomain);
  EXPECT_EQ(error_kind_of([&] { lsd(a, Eigen::MatrixXd::Ones(2, 2)); }), ErrorKind::kShape);
  EXPECT_GT(apply_floor(b).minCoeff(), 0.0);
}

TEST(Itd, IdenticalEarsGiveZero) {
  EXPECT_NEAR(compute_itd(shifted_pair(0)), 0.0, 1e-9);
}

TEST(Itd, TenSampleShift) {
  const double itd = compute_itd(shifted_pair(10));
  EXPECT_NEAR(itd * 1e6, 226.76, 22.7);
  EXPECT_NEAR(itd, 10 / kFs, 0.5 / kFs);
}

TEST(Itd, SwapNegates) {
  for (int shift : {-17, -3, 4, 12, 30}) {
    HrirPair h = shifted_pair(shift);
    HrirPair swapped = h;
    swapped.samples.row(0) = h.samples.row(1);
    swapped.samples.row(1) = h.samples.row(0);
    EXPECT_NEAR(compute_itd(swapped), -compute_itd(h), 1.0 / kFs) << shift;
    EXPECT_NEAR(compute_itd(h), shift / kFs, 1.0 / kFs) << shift;
  }
}

TEST(Itd, OnsetMode) {
  ItdOptions opt;
  opt.method = ItdMethod::kOnset;
  EXPECT_NEAR(compute_itd(shifted_pair(10), opt), 10 / kFs, 1.0 / kFs);
  EXPECT_NEAR(compute_itd(shifted_pair(-6), opt), -6 / kFs, 1.0 / kFs);
}

TEST(Itd, SilentChannelUndefined) {
  HrirPair h = shifted_pair(0);
  h.samples.row(1).setZero();
  EXPECT_EQ(error_kind_of([&] { compute_itd(h); }), ErrorKind::kUndefinedItd);
}

TEST(ItdCurve, ConstructedShiftsAndSymmetry) {
  std::vector<HrirMeasurement> ms;
  for (int k = 0; k < 12; ++k) {
    const double az = 2 * std::numbers::pi * k / 12;
    const int shift = static_cast<int>(std::lround(20 * std::sin(az)));
    ms.push_back({Doa{az, 0.0, k}, shifted_pair(shift)});
    ms.push_back({Doa{az, 0.5, 12 + k}, shifted_pair(0)});
  }
  const auto curve = itd_curve(ms);
  ASSERT_EQ(curve.size(), 12u);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_LT(curve[i - 1].azimuth_deg, curve[i].azimuth_deg);
  EXPECT_EQ(curve.back().azimuth_deg, 180.0);
  for (const auto& p : curve) {
    const double expect = std::lround(20 * std::sin(p.azimuth_deg * std::numbers::pi / 180)) / kFs;
    EXPECT_NEAR(p.itd_s, expect, 1.0 / kFs) << p.azimuth_deg;
  }
  // Odd symmetry about 0 degrees.
  for (const auto& p : curve)
    for (const auto& q : curve)
      if (std::abs(p.azimuth_deg + q.azimuth_deg) < 1e-9) EXPECT_NEAR(p.itd_s, -q.itd_s, 1.0 / kFs);
  std::vector<HrirMeasurement> elevated(ms.begin() + 1, ms.begin() + 2);
  EXPECT_EQ(error_kind_of([&] { itd_curve(elevated); }), ErrorKind::kEmptySelection);
}

TEST(Render, MatchesNaiveConvolution) {
  HrirPair h;
  h.sample_rate = kFs;
  h.samples.resize(2, 40);
  h.samples.row(0) = random_vector(40, 7).transpose();
  h.samples.row(1) = random_vector(40, 8).transpose();
  const Eigen::VectorXd src = random_vector(64, 9);
  const auto out = render_binaural(h, src, kFs);
  ASSERT_EQ(out.cols(), 64 + 40 - 1);
  for (int ear = 0; ear < 2; ++ear)
    EXPECT_LT((out.row(ear).transpose() - naive_convolution(src, h.samples.row(ear).transpose())).cwiseAbs().maxCoeff(),
              1e-10);
}

TEST(Render, ImpulseZerosAndLinearity) {
  HrirPair h = shifted_pair(5, 48);
  Eigen::VectorXd imp = Eigen::VectorXd::Zero(10);
  imp(0) = 1.0;
  const auto id = render_binaural(h, imp, kFs);
  EXPECT_LT((id.leftCols(48) - h.samples).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(id.rightCols(9).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(render_binaural(h, Eigen::VectorXd::Zero(20), kFs).cwiseAbs().maxCoeff(), 1e-15);
  const Eigen::VectorXd x = random_vector(30, 10), y = random_vector(30, 11);
  const auto lhs = render_binaural(h, 2.0 * x - 0.5 * y, kFs);
  const auto rhs = 2.0 * render_binaural(h, x, kFs) - 0.5 * render_binaural(h, y, kFs);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(error_kind_of([&] { render_binaural(h, x, 48000.0); }), ErrorKind::kContract);
}

TEST(Evaluate, IdentityAndHalfScale) {
  std::vector<HrirMeasurement> truth, half;
  for (int k = 0; k < 6; ++k) {
    HrirMeasurement m{Doa{k * 0.5, 0.0, k}, shifted_pair(k - 3)};
    truth.push_back(m);
    m.hrir.samples *= 0.5;
    half.push_back(m);
  }
  const MetricsConfig cfg;
  const auto same = evaluate_subject(1, truth, truth, cfg);
  EXPECT_EQ(same.lsd_db, 0.0);
  EXPECT_EQ(same.itd_error_us, 0.0);
  EXPECT_EQ(same.directions, 6u);
  const auto scaled = evaluate_subject(2, truth, half, cfg);
  EXPECT_NEAR(scaled.lsd_db, 6.0206, 1e-3);
  EXPECT_NEAR(scaled.itd_error_us, 0.0, 1e-6);
  const auto summary = summarize({same, scaled});
  EXPECT_NEAR(summary.global_lsd_db, 6.0206 / 2, 1e-3);
  EXPECT_EQ(summary.subjects.size(), 2u);
}

TEST(Csv, Schemas) {
  hrirdiff::testing::TempDir dir("csv");
  const std::vector<ItdPoint> pts{{-90.0, 6e-4}, {0.0, 0.0}};
  write_itd_csv(dir.path() / "itd.csv", pts);
  const auto s = hrtf_magnitude(click(64, 20), 128, kFs);
  write_spectrum_csv(dir.path() / "spec.csv", s, s);
  write_waveform_csv(dir.path() / "wave.csv", click(64, 20), click(64, 21), kFs);
  auto header_and_rows = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    std::string line, header;
    std::getline(in, header);
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    return std::make_pair(header, rows);
  };
  EXPECT_EQ(header_and_rows(dir.path() / "itd.csv"), std::make_pair(std::string("azimuth_deg,itd_us"), 2));
  EXPECT_EQ(header_and_rows(dir.path() / "spec.csv"),
            std::make_pair(std::string("freq_hz,mag_db_gt,mag_db_pred"), 65));
  EXPECT_EQ(header_and_rows(dir.path() / "wave.csv"), std::make_pair(std::string("t_s,amp_gt,amp_pred"), 64));
}
