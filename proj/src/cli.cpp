#include "hrirdiff/cli.hpp"

#include <cmath>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "hrirdiff/config.hpp"
#include "hrirdiff/dataset.hpp"
#include "hrirdiff/metrics.hpp"
#include "hrirdiff/training.hpp"

namespace hrirdiff {
namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kSchema:
    case ErrorKind::kConfiguration:
    case ErrorKind::kManifestConflict:
      return kExitUsage;
    default:
      return kExitFailure;
  }
}

struct Options {
  std::string config;
  int jobs = 1;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::optional<int> fold;
  bool all_doas = false;
  // import
  std::string source;
  std::string import_out;
  // sample
  std::string checkpoint;
  std::string anthro;
  std::optional<int> subject;
  std::optional<int> doa;
  std::string sample_out;
  std::string pinna = "left";
  // evaluate
  std::string generated;
  std::string truth;
  std::string eval_out;
};

ExperimentConfig load_experiment(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  ExperimentConfig c = load_config(o.config);
  if (o.seed) c.train.seed = *o.seed;
  return c;
}

Dataset load_experiment_dataset(const ExperimentConfig& c) {
  if (c.dataset.empty()) throw UsageError("config does not name a dataset directory");
  if (!fs::is_directory(c.dataset)) throw UsageError("dataset directory not found: " + c.dataset.string());
  return load_dataset(c.dataset, c.pinna);
}

LoocvOptions loocv_options(const ExperimentConfig& c, const Options& o, std::ostream& out) {
  LoocvOptions l;
  l.root = c.output_root;
  l.train = c.train;
  l.unet = c.unet;
  l.schedule = c.schedule;
  l.stats_from_all_subjects = c.stats_from_all_subjects;
  l.config_hash = config_hash(c);
  l.jobs = o.jobs;
  l.sample_batch = c.sample_batch;
  l.force = o.force;
  l.log = [&out](const std::string& line) { out << line << std::endl; };
  return l;
}

int cmd_import(const Options& o, std::ostream& out, std::ostream& err) {
  fs::path target = o.import_out;
  PinnaSide pinna = PinnaSide::kLeft;
  if (!o.config.empty()) {
    const ExperimentConfig c = load_experiment(o);
    if (target.empty()) target = c.dataset;
    pinna = c.pinna;
  }
  if (target.empty()) throw UsageError("import needs --out or a config naming the dataset directory");
  if (!fs::is_directory(o.source)) throw UsageError("source directory not found: " + o.source);
  const ImportReport report = import_bundle(o.source, target, pinna, o.force);
  for (const auto& line : report.skipped) err << "warning: skipped " << line << '\n';
  if (report.imported == 0) {
    err << "error: no subjects imported from " << o.source << '\n';
    return kExitFailure;
  }
  const Dataset data = load_dataset(target, pinna);
  for (const auto& rec : data.records())
    out << "subject " << rec.subject_id << ": " << rec.hrirs.size() << " directions, " << rec.length()
        << " samples at " << rec.sample_rate << " Hz\n";
  out << report.imported << " subjects imported\n";
  return kExitOk;
}

int cmd_loocv(const Options& o, std::ostream& out, bool single_fold) {
  const ExperimentConfig c = load_experiment(o);
  if (o.jobs < 1) throw UsageError("--jobs must be >= 1");
  const Dataset data = load_experiment_dataset(c);
  LoocvOptions l = loocv_options(c, o, out);
  if (single_fold) {
    const auto ids = data.subject_ids();
    if (std::find(ids.begin(), ids.end(), *o.fold) == ids.end())
      throw UsageError("--fold " + std::to_string(*o.fold) + " is not a subject id of the dataset");
    l.only_subject = o.fold;
  }
  out << "config_hash=" << l.config_hash << " output_root=" << l.root.string() << std::endl;
  const auto outcomes = run_loocv(data, l);
  int diverged = 0;
  for (const auto& f : outcomes) diverged += f.diverged;
  out << outcomes.size() << " folds, " << diverged << " diverged\n";
  return diverged ? kExitFailure : kExitOk;
}

AnthroValues read_subject_anthro(const Options& o, PinnaSide pinna) {
  const AnthroTable table = read_anthro_csv(o.anthro);
  if (table.rows.empty()) throw UsageError(o.anthro + " holds no anthropometry rows");
  const std::vector<double>* row = nullptr;
  if (o.subject) {
    auto it = table.rows.find(*o.subject);
    if (it == table.rows.end()) throw UsageError("subject " + std::to_string(*o.subject) + " not in " + o.anthro);
    row = &it->second;
  } else {
    if (table.rows.size() != 1) throw UsageError(o.anthro + " holds several subjects; pick one with --subject");
    row = &table.rows.begin()->second;
  }
  if (row->size() != static_cast<std::size_t>(kAnthroFeatures) &&
      row->size() != static_cast<std::size_t>(kHeadTorsoFeatures + 2 * kPinnaFeatures))
    throw UsageError("anthropometry has " + std::to_string(row->size()) + " features, the checkpoint expects " +
                     std::to_string(kAnthroFeatures));
  const auto values = select_anthro_features(*row, pinna);
  if (!values) throw UsageError("anthropometry row has missing values");
  return *values;
}

int cmd_sample(const Options& o, std::ostream& out) {
  if (o.all_doas == o.doa.has_value()) throw UsageError("give exactly one of --doa LABEL or --all-doas");
  const fs::path target = o.sample_out;
  if (fs::exists(target) && !o.force) {
    out << target.string() << " exists, skipped (use --force to overwrite)\n";
    return kExitOk;
  }
  PinnaSide pinna = o.pinna == "right" ? PinnaSide::kRight : PinnaSide::kLeft;
  if (!o.config.empty()) pinna = load_experiment(o).pinna;
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const AnthroValues anthro = read_subject_anthro(o, pinna);

  std::vector<Doa> doas;
  if (o.all_doas) {
    doas = ckpt.doa_grid;
  } else {
    const int label = *o.doa;
    if (label < 0 || label >= static_cast<int>(ckpt.doa_grid.size()))
      throw UsageError("DOA label " + std::to_string(label) + " outside [0, " + std::to_string(ckpt.doa_grid.size()) +
                       ")");
    doas.push_back(ckpt.doa_grid[static_cast<std::size_t>(label)]);
  }
  const std::uint64_t seed = sample_seed(o.seed.value_or(0), o.subject.value_or(0));
  HrirSet set;
  set.sample_rate_hz = static_cast<std::uint32_t>(std::lround(ckpt.sample_rate));
  set.length = static_cast<std::uint32_t>(ckpt.unet.signal_length);
  set.measurements = generate_subject(ckpt, doas, anthro, seed);
  write_hrir_file(target, set);
  write_json_file(target.parent_path() / "meta.json", {{"config_hash", ckpt.config_hash},
                                                        {"subject_id", o.subject.value_or(0)},
                                                        {"checkpoint", o.checkpoint},
                                                        {"seed", seed}});
  out << set.measurements.size() << " HRIRs written to " << target.string() << '\n';
  return kExitOk;
}

std::map<int, fs::path> subject_files(const fs::path& root) {
  std::map<int, fs::path> files;
  const fs::path dir = root / "subjects";
  if (!fs::is_directory(dir)) return files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_directory() || !fs::exists(entry.path() / "hrir.bin")) continue;
    try {
      files.emplace(std::stoi(entry.path().filename().string()), entry.path() / "hrir.bin");
    } catch (const std::exception&) {
    }
  }
  return files;
}

bool same_direction(const Doa& a, const Doa& b) {
  constexpr double tol = 1e-5;
  const double d = std::remainder(a.azimuth - b.azimuth, 2 * std::numbers::pi);
  return std::abs(d) < tol && std::abs(a.elevation - b.elevation) < tol;
}

std::string describe(const Doa& d) {
  std::ostringstream s;
  s << "(az " << d.azimuth * 180 / std::numbers::pi << " deg, el " << d.elevation * 180 / std::numbers::pi << " deg)";
  return s.str();
}

// Index of the direction closest to the left-lateral horizontal direction.
std::size_t figure_direction(const std::vector<HrirMeasurement>& ms) {
  std::vector<Doa> grid;
  for (const auto& m : ms) grid.push_back(m.doa);
  return static_cast<std::size_t>(doa_label(std::numbers::pi / 2, 0.0, grid));
}

int cmd_evaluate(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig c = load_experiment(o);
  const fs::path generated_root = o.generated.empty() ? c.output_root / "generated" : fs::path(o.generated);
  const fs::path truth_root = o.truth.empty() ? c.dataset : fs::path(o.truth);
  const fs::path out_dir = o.eval_out.empty() ? c.output_root / "metrics" : fs::path(o.eval_out);
  if (!fs::is_directory(truth_root)) throw UsageError("ground-truth directory not found: " + truth_root.string());

  const auto generated = subject_files(generated_root);
  if (generated.empty()) throw UsageError("no generated subjects under " + generated_root.string());
  const auto truth = subject_files(truth_root);

  std::set<std::string> hashes;
  for (const auto& [id, file] : generated) {
    const fs::path meta = file.parent_path() / "meta.json";
    if (!fs::exists(meta)) throw UsageError("subject " + std::to_string(id) + " has no meta.json with a config hash");
    hashes.insert(read_json_file(meta).value("config_hash", ""));
  }
  if (hashes.size() != 1) {
    std::string list;
    for (const auto& h : hashes) list += " " + (h.empty() ? std::string("<none>") : h);
    throw UsageError("generated sets come from different configs:" + list);
  }

  std::vector<std::string> problems;
  std::map<int, std::pair<std::vector<HrirMeasurement>, std::vector<HrirMeasurement>>> paired;
  for (const auto& [id, file] : generated) {
    auto t = truth.find(id);
    if (t == truth.end()) {
      problems.push_back("subject " + std::to_string(id) + ": no ground truth");
      continue;
    }
    const HrirSet gt = read_hrir_file(t->second);
    const HrirSet gen = read_hrir_file(file);
    std::vector<HrirMeasurement> ordered;
    std::vector<bool> used(gen.measurements.size(), false);
    for (const auto& m : gt.measurements) {
      bool found = false;
      for (std::size_t k = 0; k < gen.measurements.size(); ++k)
        if (!used[k] && same_direction(m.doa, gen.measurements[k].doa)) {
          used[k] = true;
          ordered.push_back(gen.measurements[k]);
          found = true;
          break;
        }
      if (!found) problems.push_back("subject " + std::to_string(id) + ": missing DOA " + describe(m.doa));
    }
    for (std::size_t k = 0; k < used.size(); ++k)
      if (!used[k])
        problems.push_back("subject " + std::to_string(id) + ": DOA " + describe(gen.measurements[k].doa) +
                           " not in ground truth");
    paired.emplace(id, std::make_pair(gt.measurements, std::move(ordered)));
  }
  if (!problems.empty()) {
    for (const auto& p : problems) err << p << '\n';
    throw UsageError("generated and ground-truth DOA grids do not match (" + std::to_string(problems.size()) +
                     " problems)");
  }

  fs::create_directories(out_dir);
  const ItdOptions itd = itd_options(c.metrics);
  std::vector<SubjectMetrics> per_subject;
  Json files = Json::array();
  for (const auto& [id, sets] : paired) {
    const auto& [gt, gen] = sets;
    per_subject.push_back(evaluate_subject(id, gt, gen, c.metrics));
    const std::string stem = "subject_" + std::to_string(id);
    const std::size_t l = figure_direction(gt);
    const double fs_hz = gt[l].hrir.sample_rate;
    write_waveform_csv(out_dir / (stem + "_waveform.csv"), gt[l].hrir.left().transpose(),
                       gen[l].hrir.left().transpose(), fs_hz);
    write_spectrum_csv(out_dir / (stem + "_spectrum.csv"),
                       hrtf_magnitude(gt[l].hrir.left().transpose(), c.metrics.nfft, fs_hz),
                       hrtf_magnitude(gen[l].hrir.left().transpose(), c.metrics.nfft, fs_hz), c.metrics.magnitude_floor);
    files.push_back(stem + "_waveform.csv");
    files.push_back(stem + "_spectrum.csv");
    try {
      write_itd_csv(out_dir / (stem + "_itd_gt.csv"), itd_curve(gt, itd, c.metrics.horizontal_tolerance_rad));
      write_itd_csv(out_dir / (stem + "_itd_pred.csv"), itd_curve(gen, itd, c.metrics.horizontal_tolerance_rad));
      files.push_back(stem + "_itd_gt.csv");
      files.push_back(stem + "_itd_pred.csv");
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kEmptySelection) throw;
      err << "warning: subject " << id << " has no horizontal-plane directions, ITD curve not written\n";
    }
  }
  const MetricsSummary summary = summarize(per_subject);

  Json subjects = Json::array();
  for (const auto& s : summary.subjects) {
    subjects.push_back(
        {{"subject_id", s.subject_id}, {"lsd_db", s.lsd_db}, {"itd_error_us", s.itd_error_us}, {"directions", s.directions}});
    out << "subject " << s.subject_id << ": lsd_db=" << s.lsd_db << " itd_error_us=" << s.itd_error_us << '\n';
  }
  const Json manifest = {{"config_hash", *hashes.begin()},
                         {"generated", generated_root.generic_string()},
                         {"ground_truth", truth_root.generic_string()},
                         {"global_lsd_db", summary.global_lsd_db},
                         {"mean_abs_itd_error_us", summary.mean_abs_itd_error_us},
                         {"subjects", subjects},
                         {"metrics", to_json(c.metrics)},
                         {"reference_targets",
                          {{"global_lsd_db", 5.1},
                           {"baseline_lsd_db_with_sht", 4.74},
                           {"baseline_lsd_db_without_sht", 6.06},
                           {"mean_abs_itd_error_us", 53.93}}},
                         {"figure_csv", files}};
  write_json_file(out_dir / "metrics.json", manifest);
  out << "global_lsd_db=" << summary.global_lsd_db << " mean_abs_itd_error_us=" << summary.mean_abs_itd_error_us
      << '\n'
      << "metrics written to " << (out_dir / "metrics.json").string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conditional diffusion HRIR generator"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* cmd, bool required) {
    auto* opt = cmd->add_option("--config", o.config, "experiment config (JSON)");
    if (required) opt->required();
  };
  auto add_seed = [&](CLI::App* cmd) { cmd->add_option("--seed", o.seed, "experiment seed (overrides the config)"); };

  auto* import = app.add_subcommand("import", "validate a dataset bundle and write the imported layout");
  import->add_option("source", o.source, "bundle directory (subjects/<id>/hrir.bin, anthropometry.csv)")->required();
  import->add_option("--out", o.import_out, "destination directory (defaults to the config's dataset)");
  add_config(import, false);
  import->add_flag("--force", o.force, "overwrite existing files");

  auto* train = app.add_subcommand("train", "train and generate the fold that holds out one subject");
  add_config(train, true);
  train->add_option("--fold", o.fold, "held-out subject id")->required();
  add_seed(train);
  train->add_flag("--force", o.force, "retrain even if the fold is complete");

  auto* loocv = app.add_subcommand("loocv", "run every leave-one-out fold");
  add_config(loocv, true);
  loocv->add_option("--jobs", o.jobs, "folds trained in parallel");
  add_seed(loocv);
  loocv->add_flag("--force", o.force, "recompute completed folds and ignore a conflicting manifest");

  auto* sample = app.add_subcommand("sample", "generate HRIRs from a checkpoint");
  sample->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  sample->add_option("--anthro", o.anthro, "anthropometry CSV (27 or 37 features per row)")->required();
  sample->add_option("--subject", o.subject, "row of the anthropometry CSV");
  sample->add_option("--doa", o.doa, "DOA label of the checkpoint grid");
  sample->add_flag("--all-doas", o.all_doas, "generate every direction of the grid");
  sample->add_option("--out", o.sample_out, "output hrir.bin")->required();
  sample->add_option("--pinna", o.pinna, "pinna of 37-feature rows")->check(CLI::IsMember({"left", "right"}));
  add_config(sample, false);
  add_seed(sample);
  sample->add_flag("--force", o.force, "overwrite an existing output");

  auto* evaluate = app.add_subcommand("evaluate", "compare generated sets with ground truth");
  add_config(evaluate, true);
  evaluate->add_option("--generated", o.generated, "generated root (defaults to <output_root>/generated)");
  evaluate->add_option("--truth", o.truth, "ground-truth dataset (defaults to the config's dataset)");
  evaluate->add_option("--out", o.eval_out, "metrics directory (defaults to <output_root>/metrics)");
  evaluate->add_flag("--force", o.force, "accepted for symmetry; metrics are always rewritten");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (import->parsed()) return cmd_import(o, out, err);
    if (train->parsed()) return cmd_loocv(o, out, true);
    if (loocv->parsed()) return cmd_loocv(o, out, false);
    if (sample->parsed()) return cmd_sample(o, out);
    if (evaluate->parsed()) return cmd_evaluate(o, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace hrirdiff
