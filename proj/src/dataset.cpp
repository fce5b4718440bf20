#include "hrirdiff/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <Eigen/Geometry>

#include "hrirdiff/error.hpp"
#include "hrirdiff/rng.hpp"

namespace fs = std::filesystem;

namespace hrirdiff {
namespace {

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_cell(const std::string& cell) {
  if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::string lower;
  for (char c : cell) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "nan" || lower == "na" || lower == "n/a") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != cell.size()) fail(ErrorKind::kSchema, "non-numeric anthropometry cell '" + cell + "'");
  return v;
}

std::optional<int> parse_subject_dir(const fs::path& p) {
  const std::string name = p.filename().string();
  if (name.empty() || !std::all_of(name.begin(), name.end(), [](unsigned char c) { return std::isdigit(c); }))
    return std::nullopt;
  return std::stoi(name);
}

// All *.bin files of one subject, merged. Every file must agree on T and sample rate.
HrirSet read_subject_hrirs(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".bin") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) fail(ErrorKind::kIo, "no HRIR files in " + dir.string());

  HrirSet merged;
  for (const auto& file : files) {
    HrirSet part = read_hrir_file(file);
    if (merged.measurements.empty() && merged.length == 0) {
      merged.length = part.length;
      merged.sample_rate_hz = part.sample_rate_hz;
    } else if (part.length != merged.length || part.sample_rate_hz != merged.sample_rate_hz) {
      fail(ErrorKind::kFormat, "inconsistent HRIR length or sample rate in " + file.string());
    }
    for (auto& m : part.measurements) merged.measurements.push_back(std::move(m));
  }
  for (std::size_t i = 0; i < merged.measurements.size(); ++i) {
    merged.measurements[i].doa.label = static_cast<int>(i);
    for (std::size_t j = 0; j < i; ++j) {
      const auto& a = merged.measurements[i].doa;
      const auto& b = merged.measurements[j].doa;
      if (a.azimuth == b.azimuth && a.elevation == b.elevation)
        fail(ErrorKind::kFormat, "duplicate DOA in " + dir.string());
    }
  }
  return merged;
}

std::vector<fs::path> subject_dirs(const fs::path& root) {
  std::vector<std::pair<int, fs::path>> dirs;
  const fs::path subjects = root / "subjects";
  if (!fs::is_directory(subjects)) return {};
  for (const auto& entry : fs::directory_iterator(subjects)) {
    if (!entry.is_directory()) continue;
    if (auto id = parse_subject_dir(entry.path())) dirs.emplace_back(*id, entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<fs::path> out;
  for (auto& d : dirs) out.push_back(std::move(d.second));
  return out;
}

std::vector<std::string> selected_names(const std::vector<std::string>& names, PinnaSide pinna) {
  if (static_cast<int>(names.size()) == kAnthroFeatures) return names;
  std::vector<std::string> out(names.begin(), names.begin() + kHeadTorsoFeatures);
  const int offset = kHeadTorsoFeatures + (pinna == PinnaSide::kLeft ? 0 : kPinnaFeatures);
  out.insert(out.end(), names.begin() + offset, names.begin() + offset + kPinnaFeatures);
  return out;
}

}  // namespace

Dataset::Dataset(std::vector<SubjectRecord> records) : records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (!index_.emplace(r.subject_id, i).second)
      fail(ErrorKind::kSchema, "duplicate subject id " + std::to_string(r.subject_id));
    for (std::size_t l = 0; l < r.hrirs.size(); ++l) {
      const auto& m = r.hrirs[l];
      if (m.hrir.length() != r.length() || m.hrir.sample_rate != r.sample_rate)
        fail(ErrorKind::kFormat, "subject " + std::to_string(r.subject_id) + " mixes HRIR lengths or rates");
      if (m.doa.label < 0 || m.doa.label >= static_cast<int>(r.hrirs.size()))
        fail(ErrorKind::kSchema, "DOA label out of range for subject " + std::to_string(r.subject_id));
    }
  }
}

std::vector<int> Dataset::subject_ids() const {
  std::vector<int> ids;
  ids.reserve(records_.size());
  for (const auto& r : records_) ids.push_back(r.subject_id);
  return ids;
}

const SubjectRecord& Dataset::subject(int id) const {
  auto it = index_.find(id);
  if (it == index_.end()) fail(ErrorKind::kContract, "unknown subject id " + std::to_string(id));
  return records_[it->second];
}

AnthroTable read_anthro_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  AnthroTable table;
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::kSchema, "empty anthropometry table " + path.string());
  auto header = split_csv_line(trim(line));
  if (header.size() < 2) fail(ErrorKind::kSchema, "anthropometry header has no feature columns");
  table.feature_names.assign(header.begin() + 1, header.end());
  const std::size_t n = table.feature_names.size();
  if (n != kAnthroFeatures && n != kHeadTorsoFeatures + 2 * kPinnaFeatures)
    fail(ErrorKind::kSchema, path.string() + ": expected 27 or 37 feature columns, got " + std::to_string(n));

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      fail(ErrorKind::kSchema, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                   std::to_string(header.size()) + " columns, got " + std::to_string(fields.size()));
    const double id = parse_cell(fields[0]);
    if (!std::isfinite(id)) fail(ErrorKind::kSchema, path.string() + ":" + std::to_string(line_no) + ": missing subject id");
    std::vector<double> values;
    for (std::size_t i = 1; i < fields.size(); ++i) values.push_back(parse_cell(fields[i]));
    if (!table.rows.emplace(static_cast<int>(id), std::move(values)).second)
      fail(ErrorKind::kSchema, "duplicate anthropometry row for subject " + fields[0]);
  }
  return table;
}

void write_anthro_csv(const fs::path& path, const std::vector<std::string>& feature_names,
                      const std::map<int, AnthroValues>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "subject_id";
  for (const auto& name : feature_names) out << ',' << name;
  out << '\n';
  out.precision(17);
  for (const auto& [id, values] : rows) {
    out << id;
    for (int n = 0; n < kAnthroFeatures; ++n) out << ',' << values(n);
    out << '\n';
  }
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

std::optional<AnthroValues> select_anthro_features(std::span<const double> row, PinnaSide pinna) {
  AnthroValues out;
  if (row.size() == static_cast<std::size_t>(kAnthroFeatures)) {
    for (int n = 0; n < kAnthroFeatures; ++n) out(n) = row[n];
  } else if (row.size() == static_cast<std::size_t>(kHeadTorsoFeatures + 2 * kPinnaFeatures)) {
    const int offset = kHeadTorsoFeatures + (pinna == PinnaSide::kLeft ? 0 : kPinnaFeatures);
    for (int n = 0; n < kHeadTorsoFeatures; ++n) out(n) = row[n];
    for (int n = 0; n < kPinnaFeatures; ++n) out(kHeadTorsoFeatures + n) = row[offset + n];
  } else {
    fail(ErrorKind::kSchema, "anthropometry row has " + std::to_string(row.size()) + " features");
  }
  if (!out.allFinite()) return std::nullopt;
  return out;
}

ImportReport import_bundle(const fs::path& source_dir, const fs::path& out_dir, PinnaSide pinna, bool force) {
  if (!fs::is_directory(source_dir)) fail(ErrorKind::kIo, "source directory not found: " + source_dir.string());
  ImportReport report;
  const auto dirs = subject_dirs(source_dir);
  if (dirs.empty()) return report;

  const AnthroTable table = read_anthro_csv(source_dir / "anthropometry.csv");
  std::map<int, AnthroValues> kept;
  std::uint32_t length = 0, rate = 0;

  for (const auto& dir : dirs) {
    const int id = *parse_subject_dir(dir);
    HrirSet set = read_subject_hrirs(dir);
    if (length == 0) {
      length = set.length;
      rate = set.sample_rate_hz;
    } else if (set.length != length || set.sample_rate_hz != rate) {
      fail(ErrorKind::kFormat, "subject " + std::to_string(id) + " HRIR length/rate differs from other subjects");
    }
    auto row = table.rows.find(id);
    if (row == table.rows.end()) {
      report.skipped.push_back("subject " + std::to_string(id) + ": no anthropometry row");
      continue;
    }
    auto values = select_anthro_features(row->second, pinna);
    if (!values) {
      report.skipped.push_back("subject " + std::to_string(id) + ": missing anthropometric feature");
      continue;
    }
    const fs::path target = out_dir / "subjects" / std::to_string(id) / "hrir.bin";
    if (force || !fs::exists(target)) write_hrir_file(target, set);
    kept.emplace(id, *values);
    ++report.imported;
  }
  if (!kept.empty()) write_anthro_csv(out_dir / "anthropometry.csv", selected_names(table.feature_names, pinna), kept);
  return report;
}

Dataset load_dataset(const fs::path& dir, PinnaSide pinna) {
  if (!fs::is_directory(dir)) fail(ErrorKind::kIo, "dataset directory not found: " + dir.string());
  const auto dirs = subject_dirs(dir);
  const AnthroTable table = read_anthro_csv(dir / "anthropometry.csv");
  std::vector<SubjectRecord> records;
  for (const auto& sub : dirs) {
    const int id = *parse_subject_dir(sub);
    auto row = table.rows.find(id);
    if (row == table.rows.end()) fail(ErrorKind::kSchema, "subject " + std::to_string(id) + " has no anthropometry row");
    auto values = select_anthro_features(row->second, pinna);
    if (!values) fail(ErrorKind::kSchema, "subject " + std::to_string(id) + " has missing anthropometry");
    HrirSet set = read_subject_hrirs(sub);
    SubjectRecord r;
    r.subject_id = id;
    r.sample_rate = set.sample_rate_hz;
    r.anthro.values = *values;
    r.hrirs = std::move(set.measurements);
    records.push_back(std::move(r));
  }
  return Dataset(std::move(records));
}

AnthroStats compute_anthro_stats(std::span<const AnthroVector> anthro) {
  if (anthro.size() < 2)
    fail(ErrorKind::kInsufficientData, "need at least 2 subjects for anthropometric statistics, got " +
                                           std::to_string(anthro.size()));
  AnthroStats stats;
  stats.mean.setZero();
  for (const auto& a : anthro) stats.mean += a.values;
  stats.mean /= static_cast<double>(anthro.size());
  AnthroValues var = AnthroValues::Zero();
  for (const auto& a : anthro) var += (a.values - stats.mean).array().square().matrix();
  var /= static_cast<double>(anthro.size());
  stats.std = var.array().sqrt().matrix();
  for (int n = 0; n < kAnthroFeatures; ++n) {
    const double scale = std::max(1.0, std::abs(stats.mean(n)));
    if (!(stats.std(n) > 1e-12 * scale))
      fail(ErrorKind::kDegenerateFeature, "feature " + std::to_string(n) + " has zero variance");
  }
  return stats;
}

AnthroStats compute_anthro_stats(const SubjectSource& source, std::span<const int> ids) {
  std::vector<AnthroVector> values;
  values.reserve(ids.size());
  for (int id : ids) values.push_back(source.subject(id).anthro);
  return compute_anthro_stats(values);
}

AnthroVector normalize_anthro(const AnthroVector& a, const AnthroStats& stats) {
  if (!(stats.std.array() > 0.0).all()) fail(ErrorKind::kSchema, "anthropometric std must be positive");
  AnthroVector out = a;
  const AnthroValues z = ((a.values - stats.mean).array() / stats.std.array()).matrix();
  out.normalized = (1.0 / (1.0 + (-z.array()).exp())).matrix();
  return out;
}

AnthroValues denormalize_anthro(const AnthroValues& normalized, const AnthroStats& stats) {
  const auto p = normalized.array();
  return (stats.mean.array() + stats.std.array() * (p / (1.0 - p)).log()).matrix();
}

double angular_distance(double az_a, double el_a, double az_b, double el_b) {
  const Eigen::Vector3d u(std::cos(el_a) * std::cos(az_a), std::cos(el_a) * std::sin(az_a), std::sin(el_a));
  const Eigen::Vector3d v(std::cos(el_b) * std::cos(az_b), std::cos(el_b) * std::sin(az_b), std::sin(el_b));
  return std::atan2(u.cross(v).norm(), u.dot(v));
}

int doa_label(double azimuth, double elevation, std::span<const Doa> grid) {
  if (grid.empty()) fail(ErrorKind::kContract, "empty DOA grid");
  int best = grid.front().label;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& g : grid) {
    const double d = angular_distance(azimuth, elevation, g.azimuth, g.elevation);
    if (d < best_d || (d == best_d && g.label < best)) {
      best_d = d;
      best = g.label;
    }
  }
  return best;
}

std::vector<DatasetFold> make_loocv_folds(std::span<const int> subject_ids, int val_count, std::uint64_t seed) {
  const int n = static_cast<int>(subject_ids.size());
  if (val_count < 0 || val_count >= n - 1)
    fail(ErrorKind::kConfiguration, "val_count " + std::to_string(val_count) + " too large for " +
                                        std::to_string(n) + " subjects");
  std::vector<DatasetFold> folds;
  folds.reserve(subject_ids.size());
  for (int k = 0; k < n; ++k) {
    DatasetFold fold;
    fold.test_subject = subject_ids[k];
    std::vector<int> rest;
    for (int j = 0; j < n; ++j)
      if (j != k) rest.push_back(subject_ids[j]);
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(static_cast<std::uint32_t>(fold.test_subject))}));
    shuffle(rest, rng);
    fold.val_subjects.assign(rest.begin(), rest.begin() + val_count);
    fold.train_subjects.assign(rest.begin() + val_count, rest.end());
    std::sort(fold.val_subjects.begin(), fold.val_subjects.end());
    std::sort(fold.train_subjects.begin(), fold.train_subjects.end());
    folds.push_back(std::move(fold));
  }
  return folds;
}

}  // namespace hrirdiff
