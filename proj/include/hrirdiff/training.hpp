#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hrirdiff/dataset.hpp"
#include "hrirdiff/diffusion.hpp"
#include "hrirdiff/error.hpp"
#include "hrirdiff/network.hpp"

namespace hrirdiff {

struct TrainConfig {
  int epochs = 1000;
  double lr = 0.001;
  double lr_decay = 0.8;
  int lr_decay_every = 100;
  int early_stop_patience = 200;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int val_count = 9;
  int max_steps = 0;  // optimizer-step cap, 0 = none
  double signal_gain = 0.0;  // HRIR amplitude scale seen by the model, 0 = inverse RMS of the training HRIRs

  void validate() const {
    require(epochs > 0, ErrorKind::kConfiguration, "train.epochs must be > 0");
    require(lr > 0 && std::isfinite(lr), ErrorKind::kConfiguration, "train.lr must be > 0");
    require(lr_decay > 0 && lr_decay <= 1, ErrorKind::kConfiguration, "train.lr_decay must be in (0, 1]");
    require(lr_decay_every > 0, ErrorKind::kConfiguration, "train.lr_decay_every must be > 0");
    require(early_stop_patience > 0, ErrorKind::kConfiguration, "train.early_stop_patience must be > 0");
    require(batch_size >= 2, ErrorKind::kConfiguration, "train.batch_size must be >= 2");
    require(val_count >= 0, ErrorKind::kConfiguration, "train.val_count must be >= 0");
    require(max_steps >= 0, ErrorKind::kConfiguration, "train.max_steps must be >= 0");
    require(signal_gain >= 0 && std::isfinite(signal_gain), ErrorKind::kConfiguration,
            "train.signal_gain must be >= 0");
  }
};

template <typename Scalar>
struct AdamState {
  ParamSet<Scalar> first_moment;
  ParamSet<Scalar> second_moment;
  std::int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
AdamState<Scalar> make_adam_state(const ParamSet<Scalar>& params) {
  AdamState<Scalar> s;
  for (const auto& [key, w] : params) {
    s.first_moment.emplace(key, Matrix<Scalar>::Zero(w.rows(), w.cols()));
    s.second_moment.emplace(key, Matrix<Scalar>::Zero(w.rows(), w.cols()));
  }
  return s;
}

/// One bias-corrected Adam update of `params` in place.
template <typename Scalar>
void adam_step(ParamSet<Scalar>& params, const ParamSet<Scalar>& grads, AdamState<Scalar>& state, double lr) {
  require(lr > 0, ErrorKind::kContract, "adam_step: lr must be positive");
  require(grads.size() == params.size(), ErrorKind::kContract, "adam_step: gradient keys differ from parameters");
  if (state.first_moment.empty())
    for (const auto& [key, w] : params) {
      state.first_moment.emplace(key, Matrix<Scalar>::Zero(w.rows(), w.cols()));
      state.second_moment.emplace(key, Matrix<Scalar>::Zero(w.rows(), w.cols()));
    }
  for (const auto& [key, w] : params) {
    const auto g = grads.find(key);
    require(g != grads.end(), ErrorKind::kContract, "adam_step: missing gradient for " + key);
    require(g->second.rows() == w.rows() && g->second.cols() == w.cols(), ErrorKind::kContract,
            "adam_step: gradient shape mismatch for " + key);
    require(state.first_moment.count(key) && state.second_moment.count(key), ErrorKind::kContract,
            "adam_step: optimizer state lacks " + key);
    if (!g->second.allFinite()) fail(ErrorKind::kNumeric, "non-finite gradient for " + key);
  }
  ++state.step_count;
  const Scalar b1 = static_cast<Scalar>(state.beta1);
  const Scalar b2 = static_cast<Scalar>(state.beta2);
  const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(state.beta1, static_cast<double>(state.step_count)));
  const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(state.beta2, static_cast<double>(state.step_count)));
  for (auto& [key, w] : params) {
    const Matrix<Scalar>& g = grads.at(key);
    Matrix<Scalar>& m = state.first_moment.at(key);
    Matrix<Scalar>& v = state.second_moment.at(key);
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    w.array() -= static_cast<Scalar>(lr) * (m.array() / c1) /
                 ((v.array() / c2).sqrt() + static_cast<Scalar>(state.eps));
  }
}

inline double current_lr(int epoch, double base_lr, int decay_every = 100, double factor = 0.8) {
  require(epoch >= 0, ErrorKind::kContract, "current_lr: epoch must be >= 0");
  return base_lr * std::pow(factor, epoch / decay_every);
}

/// Tracks the best validation loss; epochs are 1-based. Improvement means strictly lower.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  bool update(int epoch, double val_loss) {
    if (best_epoch_ == 0 || val_loss < best_loss_) {
      best_epoch_ = epoch;
      best_loss_ = val_loss;
      return true;
    }
    return false;
  }

  bool should_stop(int epoch) const { return best_epoch_ > 0 && epoch - best_epoch_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_loss_ = 0.0;
};

struct EpochResult {
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool budget_exhausted = false;  // stop after this epoch regardless of the stopping rule
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct LoopSummary {
  int epochs_run = 0;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
  bool diverged = false;
};

/// Runs `run_epoch(epoch, lr)` for epochs 1..max_epochs with early stopping. `on_best` fires
/// after each improving epoch. A non-finite loss ends the loop with `diverged` set.
LoopSummary run_epochs(int max_epochs, int patience, double base_lr, int decay_every, double decay,
                       const std::function<EpochResult(int, double)>& run_epoch,
                       const std::function<void(int)>& on_best = {},
                       const std::function<void(const EpochLog&)>& log = {});

struct Checkpoint {
  UNetConfig unet;
  ScheduleConfig schedule;
  TrainConfig train;
  AnthroStats anthro_stats;
  std::vector<Doa> doa_grid;
  double sample_rate = 0.0;
  int test_subject = -1;
  ModelParams<double> params;
  double best_val_loss = 0.0;
  int epoch_of_best = 0;
  int epochs_run = 0;
  bool diverged = false;
  std::string config_hash;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct FoldInputs {
  DatasetFold fold;
  const SubjectSource* data = nullptr;
  TrainConfig train;
  UNetConfig unet;  // num_doas and signal_length are taken from the data
  ScheduleConfig schedule;
  std::optional<AnthroStats> stats;  // computed over train and val subjects when absent
  std::string config_hash;
};

/// Trains one fold. Only subjects listed in the fold's train and val sets are read.
Checkpoint train_fold(const FoldInputs& inputs, const std::function<void(const EpochLog&)>& log = {});

/// Generated HRIRs for every direction of `doas`, in order, with the checkpoint's grid labels.
std::vector<HrirMeasurement> generate_subject(const Checkpoint& ckpt, std::span<const Doa> doas,
                                              const AnthroValues& raw_anthro, std::uint64_t seed, int max_batch = 64);

/// Sampling seed used for a held-out subject.
std::uint64_t sample_seed(std::uint64_t seed, int subject);

struct LoocvOptions {
  std::filesystem::path root;
  TrainConfig train;
  UNetConfig unet;
  ScheduleConfig schedule;
  bool stats_from_all_subjects = false;
  std::string config_hash;
  int jobs = 1;
  int sample_batch = 64;
  bool force = false;
  std::optional<int> only_subject;  // restrict to the fold holding out this subject
  std::function<void(const std::string&)> log;
};

struct FoldOutcome {
  int fold = 0;
  int test_subject = 0;
  std::filesystem::path checkpoint;  // relative to root
  std::filesystem::path generated;   // relative to root
  bool skipped = false;
  bool diverged = false;
  int epoch_of_best = 0;
  double best_val_loss = 0.0;
};

/// Full leave-one-out experiment under `options.root`; writes manifest.json, checkpoints/
/// and generated/subjects/<id>/hrir.bin. Completed folds are skipped unless `force`.
std::vector<FoldOutcome> run_loocv(const SubjectSource& data, const LoocvOptions& options);

}  // namespace hrirdiff
