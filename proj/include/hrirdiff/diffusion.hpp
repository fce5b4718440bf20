#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hrirdiff/error.hpp"
#include "hrirdiff/rng.hpp"

namespace hrirdiff {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Variance of the noise injected by each reverse step.
enum class ReverseVariance {
  kBeta,       // sigma_i^2 = beta_i
  kPosterior,  // sigma_i^2 = beta_i (1 - abar_{i-1}) / (1 - abar_i)
};

/// beta_i, alpha_i = 1 - beta_i and abar_i = prod_{s<=i} alpha_s, with zero-based i.
template <typename Scalar>
struct NoiseSchedule {
  Vector<Scalar> betas;
  Vector<Scalar> alphas;
  Vector<Scalar> alpha_bars;
  ReverseVariance variance = ReverseVariance::kBeta;

  int steps() const { return static_cast<int>(betas.size()); }

  Scalar sigma(int i) const {
    if (variance == ReverseVariance::kBeta || i == 0) return std::sqrt(betas(i));
    return std::sqrt(betas(i) * (Scalar(1) - alpha_bars(i - 1)) / (Scalar(1) - alpha_bars(i)));
  }
};

/// Builds a schedule from explicit betas. `allow_zero` admits beta = 0, which is only
/// meaningful for tests of the degenerate identity process.
template <typename Scalar>
NoiseSchedule<Scalar> make_schedule_from_betas(const Vector<Scalar>& betas, bool allow_zero = false) {
  require(betas.size() >= 1, ErrorKind::kConfiguration, "noise schedule needs at least one step");
  for (Eigen::Index i = 0; i < betas.size(); ++i) {
    const bool ok = allow_zero ? (betas(i) >= 0 && betas(i) < 1) : (betas(i) > 0 && betas(i) < 1);
    require(ok, ErrorKind::kConfiguration, "beta_" + std::to_string(i) + " outside (0, 1)");
  }
  NoiseSchedule<Scalar> s;
  s.betas = betas;
  s.alphas = (Scalar(1) - betas.array()).matrix();
  s.alpha_bars.resize(betas.size());
  Scalar running = 1;
  for (Eigen::Index i = 0; i < betas.size(); ++i) {
    running *= s.alphas(i);
    s.alpha_bars(i) = running;
  }
  return s;
}

template <typename Scalar>
NoiseSchedule<Scalar> make_linear_schedule(int steps, double beta_start, double beta_end) {
  require(steps >= 1, ErrorKind::kConfiguration, "schedule steps must be >= 1");
  require(beta_start > 0 && beta_start <= beta_end && beta_end < 1, ErrorKind::kConfiguration,
          "schedule requires 0 < beta_start <= beta_end < 1");
  Vector<Scalar> betas(steps);
  for (int i = 0; i < steps; ++i) {
    const double t = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    betas(i) = static_cast<Scalar>(beta_start + t * (beta_end - beta_start));
  }
  betas(steps - 1) = static_cast<Scalar>(beta_end);
  betas(0) = static_cast<Scalar>(beta_start);
  return make_schedule_from_betas(betas);
}

/// Serializable description of a linear schedule.
struct ScheduleConfig {
  int steps = 600;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  ReverseVariance variance = ReverseVariance::kBeta;

  template <typename Scalar>
  NoiseSchedule<Scalar> build() const {
    auto s = make_linear_schedule<Scalar>(steps, beta_start, beta_end);
    s.variance = variance;
    return s;
  }
};

template <typename Scalar>
struct NoisyHrir {
  Matrix<Scalar> data;
  int step = 0;
  Matrix<Scalar> noise;
};

namespace detail {
inline void check_step(int i, int steps) {
  require(i >= 0 && i < steps, ErrorKind::kContract,
          "diffusion step " + std::to_string(i) + " outside [0, " + std::to_string(steps) + ")");
}
}  // namespace detail

/// Direct marginal: sqrt(abar_i) h0 + sqrt(1 - abar_i) eps.
template <typename Derived, typename NoiseDerived, typename Scalar>
NoisyHrir<Scalar> forward_sample(const Eigen::MatrixBase<Derived>& h0, int i,
                                 const Eigen::MatrixBase<NoiseDerived>& eps,
                                 const NoiseSchedule<Scalar>& schedule) {
  detail::check_step(i, schedule.steps());
  require(h0.rows() == eps.rows() && h0.cols() == eps.cols(), ErrorKind::kShape,
          "forward_sample: noise shape does not match signal");
  const Scalar ab = schedule.alpha_bars(i);
  return {std::sqrt(ab) * h0 + std::sqrt(Scalar(1) - ab) * eps, i, eps};
}

/// One Markov transition of the forward chain: sqrt(alpha_i) h_{i-1} + sqrt(beta_i) eps.
template <typename Derived, typename NoiseDerived, typename Scalar>
Matrix<Scalar> forward_step(const Eigen::MatrixBase<Derived>& previous, int i,
                            const Eigen::MatrixBase<NoiseDerived>& eps, const NoiseSchedule<Scalar>& schedule) {
  detail::check_step(i, schedule.steps());
  require(previous.rows() == eps.rows() && previous.cols() == eps.cols(), ErrorKind::kShape,
          "forward_step: noise shape does not match signal");
  return std::sqrt(schedule.alphas(i)) * previous + std::sqrt(schedule.betas(i)) * eps;
}

/// Ancestral step from h_i to h_{i-1}; the added noise is suppressed at i == 0.
template <typename Derived, typename EpsDerived, typename ZDerived, typename Scalar>
Matrix<Scalar> reverse_step(const Eigen::MatrixBase<Derived>& h_i, int i, const Eigen::MatrixBase<EpsDerived>& eps_hat,
                            const NoiseSchedule<Scalar>& schedule, const Eigen::MatrixBase<ZDerived>& z) {
  detail::check_step(i, schedule.steps());
  require(h_i.rows() == eps_hat.rows() && h_i.cols() == eps_hat.cols(), ErrorKind::kShape,
          "reverse_step: predicted noise shape does not match signal");
  const Scalar beta = schedule.betas(i);
  const Scalar one_minus_ab = Scalar(1) - schedule.alpha_bars(i);
  const Scalar eps_coeff = one_minus_ab > 0 ? beta / std::sqrt(one_minus_ab) : Scalar(0);
  Matrix<Scalar> out = (h_i - eps_coeff * eps_hat) / std::sqrt(schedule.alphas(i));
  if (i > 0) {
    require(z.rows() == h_i.rows() && z.cols() == h_i.cols(), ErrorKind::kShape, "reverse_step: z shape mismatch");
    out += schedule.sigma(i) * z;
  }
  return out;
}

template <typename Derived, typename EpsDerived, typename Scalar>
Matrix<Scalar> reverse_step(const Eigen::MatrixBase<Derived>& h_i, int i, const Eigen::MatrixBase<EpsDerived>& eps_hat,
                            const NoiseSchedule<Scalar>& schedule) {
  return reverse_step(h_i, i, eps_hat, schedule, Matrix<Scalar>::Zero(h_i.rows(), h_i.cols()));
}

/// A batch of clean signals laid out item-major: item b occupies columns [b*T, (b+1)*T).
template <typename Scalar>
struct NoisedBatch {
  Matrix<Scalar> noisy;
  Matrix<Scalar> noise;
  std::vector<int> steps;
  Eigen::Index length = 0;

  int batch_size() const { return static_cast<int>(steps.size()); }
};

/// Draws i ~ U[0, I) and eps ~ N(0, I) per item and forms the marginal sample.
template <typename Scalar>
NoisedBatch<Scalar> draw_noised_batch(const Matrix<Scalar>& clean, Eigen::Index length,
                                      const NoiseSchedule<Scalar>& schedule, Rng& rng) {
  require(length > 0 && clean.cols() % length == 0, ErrorKind::kShape, "batch columns not a multiple of length");
  const Eigen::Index batch = clean.cols() / length;
  require(batch > 0, ErrorKind::kContract, "empty batch");
  NoisedBatch<Scalar> out;
  out.length = length;
  out.noisy.resize(clean.rows(), clean.cols());
  out.noise.resize(clean.rows(), clean.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    const int i = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(schedule.steps())));
    Matrix<Scalar> eps = gaussian<Scalar>(clean.rows(), length, rng);
    auto noisy = forward_sample(clean.middleCols(b * length, length), i, eps, schedule);
    out.noisy.middleCols(b * length, length) = noisy.data;
    out.noise.middleCols(b * length, length) = eps;
    out.steps.push_back(i);
  }
  return out;
}

/// Sum of squared errors over samples and channels, averaged over the batch.
template <typename Scalar>
Scalar epsilon_loss(const Matrix<Scalar>& noise, const Matrix<Scalar>& predicted, int batch_size) {
  require(noise.rows() == predicted.rows() && noise.cols() == predicted.cols(), ErrorKind::kShape,
          "epsilon_loss: prediction shape mismatch");
  return (noise - predicted).squaredNorm() / static_cast<Scalar>(batch_size);
}

/// Diffusion loss for a noise predictor `model(noisy, steps, cond) -> eps_hat`.
template <typename Scalar, typename Model, typename Cond>
Scalar training_loss(Model&& model, const Matrix<Scalar>& clean, Eigen::Index length, const Cond& cond,
                     const NoiseSchedule<Scalar>& schedule, Rng& rng) {
  const NoisedBatch<Scalar> batch = draw_noised_batch(clean, length, schedule, rng);
  const Matrix<Scalar> predicted = model(batch.noisy, std::span<const int>(batch.steps), cond);
  if (!predicted.allFinite())
    fail(ErrorKind::kNumeric, "non-finite network output at step " + std::to_string(batch.steps.front()));
  return epsilon_loss(batch.noise, predicted, batch.batch_size());
}

/// Ancestral sampling of `batch` signals of `channels` x `length`, starting from N(0, I)
/// and running steps I-1 .. 0.
template <typename Scalar, typename Model, typename Cond>
Matrix<Scalar> sample(Model&& model, Eigen::Index channels, Eigen::Index length, int batch, const Cond& cond,
                      const NoiseSchedule<Scalar>& schedule, Rng& rng) {
  Matrix<Scalar> h = gaussian<Scalar>(channels, length * batch, rng);
  std::vector<int> steps(static_cast<std::size_t>(batch));
  for (int i = schedule.steps() - 1; i >= 0; --i) {
    std::fill(steps.begin(), steps.end(), i);
    const Matrix<Scalar> eps_hat = model(h, std::span<const int>(steps), cond);
    if (i > 0) {
      h = reverse_step(h, i, eps_hat, schedule, gaussian<Scalar>(channels, length * batch, rng));
    } else {
      h = reverse_step(h, i, eps_hat, schedule);
    }
    if (!h.allFinite()) fail(ErrorKind::kSamplingDivergence, "non-finite sample at step " + std::to_string(i));
  }
  return h;
}

}  // namespace hrirdiff
