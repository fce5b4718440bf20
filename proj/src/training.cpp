#include "hrirdiff/training.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "hrirdiff/config.hpp"

namespace hrirdiff {
namespace {

enum SeedTag : std::uint64_t { kInitSeed = 11, kTrainSeed = 12, kValSeed = 13, kSampleSeed = 14 };

struct Example {
  const HrirPair* hrir;
  Doa doa;
  AnthroValues anthro;
};

std::vector<Example> collect_examples(const SubjectSource& data, std::span<const int> ids, const AnthroStats& stats,
                                      std::span<const Doa> grid, Eigen::Index length, double sample_rate) {
  std::vector<Example> out;
  for (int id : ids) {
    const SubjectRecord& rec = data.subject(id);
    require(rec.length() == length && rec.sample_rate == sample_rate, ErrorKind::kShape,
            "subject " + std::to_string(id) + " differs in HRIR length or sample rate");
    const AnthroValues normalized = *normalize_anthro(rec.anthro, stats).normalized;
    for (const auto& m : rec.hrirs) {
      Doa d = m.doa;
      d.label = doa_label(d.azimuth, d.elevation, grid);
      out.push_back({&m.hrir, d, normalized});
    }
  }
  return out;
}

// Consecutive chunks of `size`; a trailing single item joins the previous chunk so that
// batch statistics always see at least two items.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t size, bool merge_single) {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t b = 0; b < n; b += size) ranges.emplace_back(b, std::min(n, b + size));
  if (merge_single && ranges.size() > 1 && ranges.back().second - ranges.back().first == 1) {
    ranges[ranges.size() - 2].second = n;
    ranges.pop_back();
  }
  return ranges;
}

void fill_batch(const std::vector<Example>& examples, std::span<const std::size_t> order, std::size_t begin,
                std::size_t end, std::vector<const HrirPair*>& items, ConditionBatch& cond) {
  items.clear();
  cond = ConditionBatch{};
  for (std::size_t k = begin; k < end; ++k) {
    const Example& e = examples[order[k]];
    items.push_back(e.hrir);
    cond.append(e.doa, e.anthro);
  }
}

}  // namespace

LoopSummary run_epochs(int max_epochs, int patience, double base_lr, int decay_every, double decay,
                       const std::function<EpochResult(int, double)>& run_epoch, const std::function<void(int)>& on_best,
                       const std::function<void(const EpochLog&)>& log) {
  EarlyStopping stopper(patience);
  LoopSummary s;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    const double lr = current_lr(epoch - 1, base_lr, decay_every, decay);
    const EpochResult r = run_epoch(epoch, lr);
    s.epochs_run = epoch;
    if (log) log({epoch, r.train_loss, r.val_loss, lr});
    if (!std::isfinite(r.train_loss) || !std::isfinite(r.val_loss)) {
      s.diverged = true;
      break;
    }
    if (stopper.update(epoch, r.val_loss) && on_best) on_best(epoch);
    if (r.budget_exhausted) break;
    if (stopper.should_stop(epoch)) {
      s.stopped_early = true;
      break;
    }
  }
  s.best_epoch = stopper.best_epoch();
  s.best_val_loss = stopper.best_loss();
  return s;
}

Checkpoint train_fold(const FoldInputs& in, const std::function<void(const EpochLog&)>& log) {
  in.train.validate();
  require(in.data != nullptr, ErrorKind::kContract, "train_fold: no data source");
  const DatasetFold& fold = in.fold;
  require(!fold.train_subjects.empty(), ErrorKind::kConfiguration, "empty train set");
  for (int id : fold.train_subjects)
    require(id != fold.test_subject, ErrorKind::kContract, "test subject listed among training subjects");
  for (int id : fold.val_subjects)
    require(id != fold.test_subject, ErrorKind::kContract, "test subject listed among validation subjects");
  const SubjectSource& data = *in.data;

  std::vector<int> seen(fold.train_subjects);
  seen.insert(seen.end(), fold.val_subjects.begin(), fold.val_subjects.end());
  const AnthroStats stats = in.stats ? *in.stats : compute_anthro_stats(data, seen);

  const SubjectRecord& first = data.subject(fold.train_subjects.front());
  require(!first.hrirs.empty(), ErrorKind::kInsufficientData, "training subject without HRIRs");
  std::vector<Doa> grid;
  for (const auto& m : first.hrirs) grid.push_back({m.doa.azimuth, m.doa.elevation, static_cast<int>(grid.size())});

  UNetConfig unet = in.unet;
  unet.num_doas = static_cast<int>(grid.size());
  unet.signal_length = static_cast<int>(first.length());
  unet.validate();

  const auto train = collect_examples(data, fold.train_subjects, stats, grid, first.length(), first.sample_rate);
  // Without validation subjects the training examples double as the validation set.
  const auto val = fold.val_subjects.empty()
                       ? train
                       : collect_examples(data, fold.val_subjects, stats, grid, first.length(), first.sample_rate);
  require(train.size() >= 2, ErrorKind::kConfiguration, "training needs at least two (subject, DOA) examples");

  double gain = in.train.signal_gain;
  if (gain == 0.0) {
    double energy = 0.0;
    for (const auto& e : train) energy += e.hrir->samples.squaredNorm();
    const double rms = std::sqrt(energy / static_cast<double>(train.size() * 2 * first.length()));
    require(rms > 0, ErrorKind::kInsufficientData, "training HRIRs are silent");
    gain = 1.0 / rms;
  }

  const std::uint64_t seed = in.train.seed;
  const auto test_tag = static_cast<std::uint64_t>(fold.test_subject);
  const auto schedule = in.schedule.build<double>();
  ModelParams<double> params = init_params<double>(unet, derive_seed(seed, {kInitSeed, test_tag}));
  ModelParams<double> best = params;
  AdamState<double> adam = make_adam_state(params.weights);
  Rng rng(derive_seed(seed, {kTrainSeed, test_tag}));
  const Eigen::Index length = unet.signal_length;
  const auto batch_size = static_cast<std::size_t>(in.train.batch_size);
  int steps_done = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> val_order(val.size());
  std::iota(val_order.begin(), val_order.end(), std::size_t{0});
  std::vector<const HrirPair*> items;
  ConditionBatch cond;

  auto run_epoch = [&](int, double lr) -> EpochResult {
    EpochResult r;
    try {
      shuffle(order, rng);
      double total = 0.0;
      std::size_t count = 0;
      for (const auto& [b, e] : batch_ranges(order.size(), batch_size, true)) {
        fill_batch(train, order, b, e, items, cond);
        const auto batch = draw_noised_batch(Matrix<double>(gain * pack_batch<double>(items)), length, schedule, rng);
        auto [loss, grads] = loss_and_gradients(params, unet, batch, cond);
        adam_step(params.weights, grads, adam, lr);
        total += loss * static_cast<double>(e - b);
        count += e - b;
        if (in.train.max_steps > 0 && ++steps_done >= in.train.max_steps) {
          r.budget_exhausted = true;
          break;
        }
      }
      r.train_loss = total / static_cast<double>(count);
      Rng val_rng(derive_seed(seed, {kValSeed, test_tag}));
      const auto denoiser = make_denoiser(params, unet, Mode::kEval);
      double val_total = 0.0;
      for (const auto& [b, e] : batch_ranges(val.size(), batch_size, false)) {
        fill_batch(val, val_order, b, e, items, cond);
        val_total += training_loss(denoiser, Matrix<double>(gain * pack_batch<double>(items)), length, cond, schedule, val_rng) *
                     static_cast<double>(e - b);
      }
      r.val_loss = val_total / static_cast<double>(val.size());
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumeric) throw;
      r.train_loss = std::numeric_limits<double>::quiet_NaN();
      r.val_loss = r.train_loss;
    }
    return r;
  };

  const LoopSummary summary =
      run_epochs(in.train.epochs, in.train.early_stop_patience, in.train.lr, in.train.lr_decay_every,
                 in.train.lr_decay, run_epoch, [&](int) { best = params; }, log);

  Checkpoint c;
  c.unet = unet;
  c.schedule = in.schedule;
  c.train = in.train;
  c.train.signal_gain = gain;
  c.anthro_stats = stats;
  c.doa_grid = std::move(grid);
  c.sample_rate = first.sample_rate;
  c.test_subject = fold.test_subject;
  c.params = std::move(best);
  c.best_val_loss = summary.best_val_loss;
  c.epoch_of_best = summary.best_epoch;
  c.epochs_run = summary.epochs_run;
  c.diverged = summary.diverged;
  c.config_hash = in.config_hash;
  return c;
}

std::vector<HrirMeasurement> generate_subject(const Checkpoint& ckpt, std::span<const Doa> doas,
                                              const AnthroValues& raw_anthro, std::uint64_t seed, int max_batch) {
  require(!doas.empty(), ErrorKind::kContract, "no directions to generate");
  AnthroVector a;
  a.values = raw_anthro;
  const AnthroValues normalized = *normalize_anthro(a, ckpt.anthro_stats).normalized;
  ConditionBatch cond;
  for (const auto& d : doas) {
    Doa labelled = d;
    labelled.label = doa_label(d.azimuth, d.elevation, ckpt.doa_grid);
    cond.append(labelled, normalized);
  }
  Rng rng(seed);
  auto hrirs = sample_hrirs(ckpt.params, ckpt.unet, cond, ckpt.schedule.build<double>(), ckpt.sample_rate, rng, max_batch);
  const double gain = ckpt.train.signal_gain > 0 ? ckpt.train.signal_gain : 1.0;
  std::vector<HrirMeasurement> out;
  for (std::size_t l = 0; l < doas.size(); ++l) {
    hrirs[l].samples /= gain;
    out.push_back({doas[l], std::move(hrirs[l])});
  }
  return out;
}

std::uint64_t sample_seed(std::uint64_t seed, int subject) {
  return derive_seed(seed, {kSampleSeed, static_cast<std::uint64_t>(subject)});
}

std::vector<FoldOutcome> run_loocv(const SubjectSource& data, const LoocvOptions& options) {
  options.train.validate();
  require(options.jobs >= 1, ErrorKind::kConfiguration, "--jobs must be >= 1");
  const std::vector<int> ids = data.subject_ids();
  require(ids.size() >= 3, ErrorKind::kInsufficientData, "leave-one-out needs at least 3 subjects");
  const auto folds = make_loocv_folds(ids, options.train.val_count, options.train.seed);
  const auto& root = options.root;
  const auto manifest_path = root / "manifest.json";

  Json manifest;
  if (std::filesystem::exists(manifest_path)) {
    manifest = read_json_file(manifest_path);
    const std::string previous = manifest.value("config_hash", "");
    if (previous != options.config_hash) {
      if (!options.force)
        fail(ErrorKind::kManifestConflict, manifest_path.string() + " was produced with config " + previous +
                                               ", current config is " + options.config_hash + " (use --force)");
      manifest = Json{};
    }
  }
  if (!manifest.is_object()) manifest = Json::object();
  manifest["config_hash"] = options.config_hash;
  manifest["train"] = to_json(options.train);
  manifest["unet"] = to_json(options.unet);
  manifest["schedule"] = to_json(options.schedule);
  if (!manifest.contains("folds") || !manifest["folds"].is_object()) manifest["folds"] = Json::object();

  std::optional<AnthroStats> shared_stats;
  if (options.stats_from_all_subjects) shared_stats = compute_anthro_stats(data, ids);

  std::mutex mutex;
  auto say = [&](const std::string& line) {
    if (!options.log) return;
    std::lock_guard lock(mutex);
    options.log(line);
  };

  std::vector<FoldOutcome> outcomes;
  std::vector<std::size_t> pending;
  for (std::size_t k = 0; k < folds.size(); ++k) {
    const int id = folds[k].test_subject;
    if (options.only_subject && *options.only_subject != id) continue;
    FoldOutcome o;
    o.fold = static_cast<int>(k);
    o.test_subject = id;
    o.checkpoint = std::filesystem::path("checkpoints") / ("subject_" + std::to_string(id) + ".ckpt");
    o.generated = std::filesystem::path("generated") / "subjects" / std::to_string(id) / "hrir.bin";
    const std::string key = std::to_string(id);
    const bool done = manifest["folds"].contains(key) && manifest["folds"][key].value("status", "") == "complete" &&
                      std::filesystem::exists(root / o.checkpoint) && std::filesystem::exists(root / o.generated);
    if (done && !options.force) {
      o.skipped = true;
      o.epoch_of_best = manifest["folds"][key].value("epoch_of_best", 0);
      o.best_val_loss = manifest["folds"][key].value("best_val_loss", 0.0);
      say("fold=" + std::to_string(k) + " subject=" + key + " skipped");
    } else {
      pending.push_back(outcomes.size());
    }
    outcomes.push_back(o);
  }
  if (options.only_subject && outcomes.empty())
    fail(ErrorKind::kConfiguration, "no fold holds out subject " + std::to_string(*options.only_subject));

  auto run_one = [&](FoldOutcome& o) {
    const DatasetFold& fold = folds[static_cast<std::size_t>(o.fold)];
    FoldInputs in{fold, &data, options.train, options.unet, options.schedule, shared_stats, options.config_hash};
    const std::string prefix = "fold=" + std::to_string(o.fold) + " subject=" + std::to_string(o.test_subject);
    say(prefix + " start train=" + std::to_string(fold.train_subjects.size()) +
        " val=" + std::to_string(fold.val_subjects.size()));
    Checkpoint ckpt = train_fold(in, [&](const EpochLog& e) {
      std::ostringstream line;
      line << prefix << " epoch=" << e.epoch << " train_loss=" << e.train_loss << " val_loss=" << e.val_loss
           << " lr=" << e.lr;
      say(line.str());
    });
    save_checkpoint(root / o.checkpoint, ckpt);
    o.diverged = ckpt.diverged;
    o.epoch_of_best = ckpt.epoch_of_best;
    o.best_val_loss = ckpt.best_val_loss;

    const SubjectRecord& test = data.subject(o.test_subject);
    std::vector<Doa> doas;
    for (const auto& m : test.hrirs) doas.push_back(m.doa);
    const auto seed = sample_seed(options.train.seed, o.test_subject);
    HrirSet set;
    set.sample_rate_hz = static_cast<std::uint32_t>(std::lround(test.sample_rate));
    set.length = static_cast<std::uint32_t>(test.length());
    set.measurements = generate_subject(ckpt, doas, test.anthro.values, seed, options.sample_batch);
    write_hrir_file(root / o.generated, set);
    write_json_file((root / o.generated).parent_path() / "meta.json",
                    {{"config_hash", options.config_hash},
                     {"subject_id", o.test_subject},
                     {"fold", o.fold},
                     {"checkpoint", o.checkpoint.generic_string()},
                     {"seed", seed}});

    std::lock_guard lock(mutex);
    manifest["folds"][std::to_string(o.test_subject)] = {
        {"fold", o.fold},
        {"test_subject", o.test_subject},
        {"train_subjects", fold.train_subjects},
        {"val_subjects", fold.val_subjects},
        {"checkpoint", o.checkpoint.generic_string()},
        {"generated", o.generated.generic_string()},
        {"status", o.diverged ? "diverged" : "complete"},
        {"epoch_of_best", o.epoch_of_best},
        {"epochs_run", ckpt.epochs_run},
        {"best_val_loss", o.best_val_loss}};
    write_json_file(manifest_path, manifest);
    if (options.log) options.log(prefix + " done epoch_of_best=" + std::to_string(o.epoch_of_best) +
                                 (o.diverged ? " status=diverged" : " status=complete"));
  };

  write_json_file(manifest_path, manifest);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < pending.size();) {
      {
        std::lock_guard lock(mutex);
        if (error) return;
      }
      try {
        run_one(outcomes[pending[k]]);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int workers = std::min<int>(options.jobs, static_cast<int>(pending.size()));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (error) std::rethrow_exception(error);
  return outcomes;
}

}  // namespace hrirdiff
