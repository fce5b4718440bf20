#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <set>
#include <string>

#include <gtest/gtest.h>

#include "hrirdiff/dataset.hpp"
#include "hrirdiff/error.hpp"

namespace hrirdiff::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("hrirdiff_" + name + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Records every subject id read through it.
class AuditingSource : public SubjectSource {
 public:
  explicit AuditingSource(const SubjectSource& inner) : inner_(inner) {}
  std::vector<int> subject_ids() const override { return inner_.subject_ids(); }
  const SubjectRecord& subject(int id) const override {
    accessed_.insert(id);
    return inner_.subject(id);
  }
  const std::set<int>& accessed() const { return accessed_; }

 private:
  const SubjectSource& inner_;
  mutable std::set<int> accessed_;
};

template <typename F>
ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected hrirdiff::Error";
  return ErrorKind::kContract;
}

inline std::filesystem::path fixture_dir() { return std::filesystem::path(HRIRDIFF_FIXTURE_DIR); }

}  // namespace hrirdiff::testing
