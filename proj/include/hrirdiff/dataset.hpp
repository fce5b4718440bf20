#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hrirdiff/hrir.hpp"

namespace hrirdiff {

inline constexpr int kAnthroFeatures = 27;
inline constexpr int kHeadTorsoFeatures = 17;
inline constexpr int kPinnaFeatures = 10;

using AnthroValues = Eigen::Matrix<double, kAnthroFeatures, 1>;

struct AnthroVector {
  AnthroValues values = AnthroValues::Zero();
  std::optional<AnthroValues> normalized;
};

/// Per-feature population mean and standard deviation.
struct AnthroStats {
  AnthroValues mean = AnthroValues::Zero();
  AnthroValues std = AnthroValues::Ones();
};

struct SubjectRecord {
  int subject_id = 0;
  std::vector<HrirMeasurement> hrirs;
  AnthroVector anthro;
  double sample_rate = 0.0;

  Eigen::Index length() const { return hrirs.empty() ? 0 : hrirs.front().hrir.length(); }
};

struct DatasetFold {
  int test_subject = 0;
  std::vector<int> train_subjects;
  std::vector<int> val_subjects;
};

/// Read access to subject records. Training code goes through this interface so
/// tests can audit which subjects are touched.
class SubjectSource {
 public:
  virtual ~SubjectSource() = default;
  virtual std::vector<int> subject_ids() const = 0;
  virtual const SubjectRecord& subject(int id) const = 0;
};

class Dataset : public SubjectSource {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<SubjectRecord> records);

  std::vector<int> subject_ids() const override;
  const SubjectRecord& subject(int id) const override;
  const std::vector<SubjectRecord>& records() const { return records_; }

 private:
  std::vector<SubjectRecord> records_;
  std::map<int, std::size_t> index_;
};

enum class PinnaSide { kLeft, kRight };

struct ImportReport {
  std::size_t imported = 0;
  std::vector<std::string> skipped;  // one human-readable line per skipped subject
};

/// Reads the exchange layout (subjects/<id>/hrir.bin + anthropometry.csv), validates it
/// and writes the same layout to `out_dir` for subjects with complete anthropometry.
ImportReport import_bundle(const std::filesystem::path& source_dir, const std::filesystem::path& out_dir,
                           PinnaSide pinna = PinnaSide::kLeft, bool force = false);

Dataset load_dataset(const std::filesystem::path& dir, PinnaSide pinna = PinnaSide::kLeft);

/// Anthropometry table: subject id -> feature values, with NaN marking a missing entry.
struct AnthroTable {
  std::vector<std::string> feature_names;
  std::map<int, std::vector<double>> rows;
};

AnthroTable read_anthro_csv(const std::filesystem::path& path);
void write_anthro_csv(const std::filesystem::path& path, const std::vector<std::string>& feature_names,
                      const std::map<int, AnthroValues>& rows);

/// Picks the 17 head/torso features and the 10 features of one pinna. Accepts tables with
/// exactly 27 features (already selected) or 37 (head/torso, left pinna, right pinna).
std::optional<AnthroValues> select_anthro_features(std::span<const double> row, PinnaSide pinna);

AnthroStats compute_anthro_stats(std::span<const AnthroVector> anthro);
AnthroStats compute_anthro_stats(const SubjectSource& source, std::span<const int> ids);

AnthroVector normalize_anthro(const AnthroVector& a, const AnthroStats& stats);
AnthroValues denormalize_anthro(const AnthroValues& normalized, const AnthroStats& stats);

double angular_distance(double azimuth_a, double elevation_a, double azimuth_b, double elevation_b);

/// Nearest grid point by great-circle distance; ties go to the lowest label.
int doa_label(double azimuth, double elevation, std::span<const Doa> grid);

std::vector<DatasetFold> make_loocv_folds(std::span<const int> subject_ids, int val_count, std::uint64_t seed);

}  // namespace hrirdiff
