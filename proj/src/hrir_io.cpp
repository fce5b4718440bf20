#include "hrirdiff/hrir.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hrirdiff/error.hpp"

namespace hrirdiff {
namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::array<std::uint8_t, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.insert(out.end(), bytes.begin(), bytes.end());
}

class Reader {
 public:
  Reader(std::vector<std::uint8_t> data, std::filesystem::path path)
      : data_(std::move(data)), path_(std::move(path)) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size())
      fail(ErrorKind::kFormat, "truncated HRIR file " + path_.string());
    std::array<std::uint8_t, sizeof(T)> bytes;
    std::memcpy(bytes.data(), data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
  }

  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::vector<std::uint8_t> data_;
  std::filesystem::path path_;
  std::size_t pos_ = 0;
};

}  // namespace

HrirSet read_hrir_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::kIo, "read failed for " + path.string());

  Reader r(std::move(bytes), path);
  std::array<char, 4> magic{};
  for (auto& c : magic) c = static_cast<char>(r.get<std::uint8_t>());
  if (std::string(magic.data(), 4) != "HRIR") fail(ErrorKind::kFormat, "bad magic in " + path.string());
  const auto version = r.get<std::uint8_t>();
  if (version != kHrirFormatVersion)
    fail(ErrorKind::kFormat, "unsupported version " + std::to_string(version) + " in " + path.string());

  HrirSet set;
  set.length = r.get<std::uint32_t>();
  const auto count = r.get<std::uint32_t>();
  set.sample_rate_hz = r.get<std::uint32_t>();
  if (set.length == 0 || set.sample_rate_hz == 0)
    fail(ErrorKind::kFormat, "zero length or sample rate in " + path.string());

  set.measurements.reserve(count);
  for (std::uint32_t l = 0; l < count; ++l) {
    HrirMeasurement m;
    m.doa.azimuth = r.get<float>();
    m.doa.elevation = r.get<float>();
    m.doa.label = static_cast<int>(l);
    m.hrir.sample_rate = set.sample_rate_hz;
    m.hrir.samples.resize(2, set.length);
    for (int ch = 0; ch < 2; ++ch)
      for (std::uint32_t t = 0; t < set.length; ++t) m.hrir.samples(ch, t) = r.get<float>();
    set.measurements.push_back(std::move(m));
  }
  if (!r.at_end()) fail(ErrorKind::kFormat, "trailing bytes in " + path.string());
  return set;
}

void write_hrir_file(const std::filesystem::path& path, const HrirSet& set) {
  std::vector<std::uint8_t> out;
  out.reserve(17 + set.measurements.size() * (8 + 8 * set.length));
  for (char c : std::string("HRIR")) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(kHrirFormatVersion);
  put_le<std::uint32_t>(out, set.length);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.measurements.size()));
  put_le<std::uint32_t>(out, set.sample_rate_hz);
  for (const auto& m : set.measurements) {
    if (m.hrir.length() != static_cast<Eigen::Index>(set.length))
      fail(ErrorKind::kFormat, "measurement length differs from set length while writing " + path.string());
    put_le<float>(out, static_cast<float>(m.doa.azimuth));
    put_le<float>(out, static_cast<float>(m.doa.elevation));
    for (int ch = 0; ch < 2; ++ch)
      for (Eigen::Index t = 0; t < m.hrir.length(); ++t) put_le<float>(out, static_cast<float>(m.hrir.samples(ch, t)));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::kIo, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) fail(ErrorKind::kIo, "write failed for " + path.string());
}

}  // namespace hrirdiff
