#include <cmath>

#include <gtest/gtest.h>

#include "hrirdiff/diffusion.hpp"
#include "test_util.hpp"

using namespace hrirdiff;
using hrirdiff::testing::error_kind_of;

namespace {

struct Unit {};

auto zero_model = [](const Matrix<double>& x, std::span<const int>, const Unit&) {
  return Matrix<double>::Zero(x.rows(), x.cols()).eval();
};

}  // namespace

TEST(Schedule, DefaultEndpointsExact) {
  const auto s = make_linear_schedule<double>(600, 1e-4, 0.02);
  EXPECT_EQ(s.steps(), 600);
  EXPECT_EQ(s.betas(0), 1e-4);
  EXPECT_EQ(s.betas(599), 0.02);
  for (int i = 1; i < 600; ++i) {
    EXPECT_GE(s.betas(i), s.betas(i - 1));
    EXPECT_NEAR(s.alpha_bars(i), s.alpha_bars(i - 1) * s.alphas(i), 1e-12);
    EXPECT_LT(s.alpha_bars(i), s.alpha_bars(i - 1));
  }
}

TEST(Schedule, SingleStep) {
  const auto s = make_linear_schedule<double>(1, 0.3, 0.3);
  EXPECT_DOUBLE_EQ(s.alpha_bars(0), 0.7);
}

TEST(Schedule, ConstantBetaProduct) {
  const auto s = make_linear_schedule<double>(5, 0.01, 0.01);
  EXPECT_NEAR(s.alpha_bars(4), std::pow(0.99, 5), 1e-15);
  EXPECT_NEAR(s.alpha_bars(4), 0.950990, 1e-6);
}

TEST(Schedule, InvalidRange) {
  EXPECT_EQ(error_kind_of([] { make_linear_schedule<double>(10, 0.0, 0.1); }), ErrorKind::kConfiguration);
  EXPECT_EQ(error_kind_of([] { make_linear_schedule<double>(10, 0.2, 0.1); }), ErrorKind::kConfiguration);
  EXPECT_EQ(error_kind_of([] { make_linear_schedule<double>(10, 0.1, 1.0); }), ErrorKind::kConfiguration);
  EXPECT_EQ(error_kind_of([] { make_linear_schedule<double>(0, 0.1, 0.2); }), ErrorKind::kConfiguration);
}

TEST(Schedule, PosteriorVariance) {
  auto s = make_linear_schedule<double>(10, 0.01, 0.1);
  s.variance = ReverseVariance::kPosterior;
  const double expected = s.betas(5) * (1 - s.alpha_bars(4)) / (1 - s.alpha_bars(5));
  EXPECT_NEAR(s.sigma(5) * s.sigma(5), expected, 1e-15);
  EXPECT_LT(s.sigma(5), std::sqrt(s.betas(5)));
}

TEST(Forward, ZeroNoiseScalesSignal) {
  const auto s = make_linear_schedule<double>(600, 1e-4, 0.02);
  Rng rng(1);
  const Matrix<double> h0 = gaussian<double>(2, 32, rng);
  const auto out = forward_sample(h0, 300, Matrix<double>::Zero(2, 32), s);
  EXPECT_TRUE(out.data.isApprox(std::sqrt(s.alpha_bars(300)) * h0, 1e-15));
  EXPECT_EQ(out.step, 300);
}

TEST(Forward, ZeroBetaIsIdentity) {
  const auto s = make_schedule_from_betas<double>(Vector<double>::Zero(8), true);
  Rng rng(2);
  const Matrix<double> h0 = gaussian<double>(2, 16, rng);
  for (int i = 0; i < 8; ++i) EXPECT_TRUE(forward_sample(h0, i, gaussian<double>(2, 16, rng), s).data == h0);
  EXPECT_EQ(error_kind_of([] { make_schedule_from_betas<double>(Vector<double>::Zero(3)); }), ErrorKind::kConfiguration);
}

TEST(Forward, ShapeMismatch) {
  const auto s = make_linear_schedule<double>(10, 0.01, 0.1);
  EXPECT_EQ(error_kind_of([&] { forward_sample(Matrix<double>::Zero(2, 8), 1, Matrix<double>::Zero(2, 9), s); }),
            ErrorKind::kShape);
  EXPECT_EQ(error_kind_of([&] { forward_sample(Matrix<double>::Zero(2, 8), 10, Matrix<double>::Zero(2, 8), s); }),
            ErrorKind::kContract);
}

TEST(Forward, TerminalVarianceMonteCarlo) {
  const auto s = make_linear_schedule<double>(600, 1e-4, 0.02);
  Rng rng(3);
  const Matrix<double> eps = gaussian<double>(1, 100000, rng);
  const auto out = forward_sample(Matrix<double>::Zero(1, 100000), 599, eps, s);
  const double var = out.data.squaredNorm() / 100000.0;
  EXPECT_NEAR(var / (1 - s.alpha_bars(599)), 1.0, 0.03);
}

TEST(Reverse, OracleInvertsForwardStep) {
  const auto s = make_linear_schedule<double>(600, 1e-4, 0.02);
  Rng rng(4);
  for (int i : {1, 37, 300, 599}) {
    const Matrix<double> prev = gaussian<double>(2, 64, rng);
    const Matrix<double> eps = gaussian<double>(2, 64, rng);
    const Matrix<double> hi = forward_step(prev, i, eps, s);
    // noise prediction that makes the reverse mean land on the pre-image
    const Matrix<double> oracle = std::sqrt(1 - s.alpha_bars(i)) / std::sqrt(s.betas(i)) * eps;
    EXPECT_LT((reverse_step(hi, i, oracle, s) - prev).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Reverse, ZeroEpsIsRescale) {
  const auto s = make_linear_schedule<double>(10, 0.01, 0.1);
  Rng rng(5);
  const Matrix<double> h = gaussian<double>(2, 8, rng);
  EXPECT_TRUE(reverse_step(h, 4, Matrix<double>::Zero(2, 8), s).isApprox(h / std::sqrt(s.alphas(4)), 1e-15));
}

TEST(Reverse, NoNoiseAtStepZero) {
  const auto s = make_linear_schedule<double>(10, 0.01, 0.1);
  Rng rng(6);
  const Matrix<double> h = gaussian<double>(2, 8, rng);
  const Matrix<double> z = gaussian<double>(2, 8, rng);
  EXPECT_TRUE(reverse_step(h, 0, Matrix<double>::Zero(2, 8), s, z) == reverse_step(h, 0, Matrix<double>::Zero(2, 8), s));
  EXPECT_FALSE(reverse_step(h, 1, Matrix<double>::Zero(2, 8), s, z) == reverse_step(h, 1, Matrix<double>::Zero(2, 8), s));
}

TEST(Reverse, TinyBetaIsNearIdentity) {
  const auto s = make_linear_schedule<double>(10, 1e-12, 1e-12);
  Rng rng(7);
  const Matrix<double> h = gaussian<double>(2, 8, rng);
  const Matrix<double> e = gaussian<double>(2, 8, rng);
  EXPECT_LT((reverse_step(h, 5, e, s) - h).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Reverse, StepOutOfRange) {
  const auto s = make_linear_schedule<double>(10, 0.01, 0.1);
  EXPECT_EQ(error_kind_of([&] { reverse_step(Matrix<double>::Zero(2, 4), -1, Matrix<double>::Zero(2, 4), s); }),
            ErrorKind::kContract);
}

TEST(Loss, PerfectPredictorIsZero) {
  const auto s = make_linear_schedule<double>(600, 1e-4, 0.02);
  Rng rng(8), replay(8);
  const Matrix<double> clean = gaussian<double>(2, 4 * 32, rng);
  // The stub reconstructs eps from the noisy input using the known clean batch and steps.
  auto oracle = [&](const Matrix<double>& noisy, std::span<const int> steps, const Unit&) {
    Matrix<double> eps(noisy.rows(), noisy.cols());
    for (std::size_t b = 0; b < steps.size(); ++b) {
      const double ab = s.alpha_bars(steps[b]);
      const auto cols = Eigen::seqN(static_cast<Eigen::Index>(b) * 32, 32);
      eps(Eigen::all, cols) = (noisy(Eigen::all, cols) - std::sqrt(ab) * clean(Eigen::all, cols)) / std::sqrt(1 - ab);
    }
    return eps;
  };
  EXPECT_NEAR(training_loss(oracle, clean, 32, Unit{}, s, replay), 0.0, 1e-18);
}

TEST(Loss, ZeroPredictorIsTwoT) {
  const auto s = make_linear_schedule<double>(600, 1e-4, 0.02);
  Rng rng(9);
  const int T = 64, B = 2000;
  const Matrix<double> clean = Matrix<double>::Zero(2, T * B);
  const double loss = training_loss(zero_model, clean, T, Unit{}, s, rng);
  EXPECT_NEAR(loss / (2.0 * T), 1.0, 0.01);
}

TEST(Loss, NonFiniteOutputIsNumericError) {
  const auto s = make_linear_schedule<double>(10, 0.01, 0.1);
  Rng rng(10);
  auto bad = [](const Matrix<double>& x, std::span<const int>, const Unit&) {
    return Matrix<double>::Constant(x.rows(), x.cols(), std::nan("")).eval();
  };
  const Matrix<double> clean = Matrix<double>::Zero(2, 8);
  EXPECT_EQ(error_kind_of([&] { training_loss(bad, clean, 4, Unit{}, s, rng); }), ErrorKind::kNumeric);
}

TEST(Sampler, ZeroStubFollowsVarianceRecursion) {
  const auto s = make_linear_schedule<double>(600, 1e-4, 0.02);
  double var = 1.0;
  for (int i = 599; i >= 0; --i) var = var / s.alphas(i) + (i > 0 ? s.betas(i) : 0.0);
  Rng rng(11);
  const Matrix<double> out = sample(zero_model, 2, 50, 200, Unit{}, s, rng);
  const double empirical = std::sqrt(out.squaredNorm() / static_cast<double>(out.size()));
  EXPECT_NEAR(empirical / std::sqrt(var), 1.0, 0.05);
}

TEST(Sampler, DeterministicPerSeed) {
  const auto s = make_linear_schedule<double>(50, 1e-4, 0.02);
  auto model = [](const Matrix<double>& x, std::span<const int>, const Unit&) { return (0.5 * x).eval(); };
  Rng a(12), b(12);
  EXPECT_TRUE(sample(model, 2, 16, 3, Unit{}, s, a) == sample(model, 2, 16, 3, Unit{}, s, b));
}

TEST(Sampler, DivergenceReportsStep) {
  const auto s = make_linear_schedule<double>(20, 1e-4, 0.02);
  auto blowup = [](const Matrix<double>& x, std::span<const int> steps, const Unit&) {
    if (steps[0] == 7) return Matrix<double>::Constant(x.rows(), x.cols(), std::numeric_limits<double>::infinity()).eval();
    return Matrix<double>::Zero(x.rows(), x.cols()).eval();
  };
  Rng rng(13);
  try {
    sample(blowup, 2, 8, 1, Unit{}, s, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kSamplingDivergence);
    EXPECT_NE(std::string(e.what()).find("step 7"), std::string::npos);
  }
}
