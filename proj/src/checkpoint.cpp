#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hrirdiff/config.hpp"
#include "hrirdiff/training.hpp"

namespace hrirdiff {
namespace {

constexpr std::uint8_t kCheckpointVersion = 1;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::array<std::uint8_t, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.insert(out.end(), bytes.begin(), bytes.end());
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& data, std::size_t& pos, const std::filesystem::path& path) {
  if (pos + sizeof(T) > data.size()) fail(ErrorKind::kFormat, "truncated checkpoint " + path.string());
  std::array<std::uint8_t, sizeof(T)> bytes;
  std::memcpy(bytes.data(), data.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  pos += sizeof(T);
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

Json tensor_index(const ParamSet<double>& set) {
  Json list = Json::array();
  for (const auto& [key, m] : set) list.push_back({{"name", key}, {"rows", m.rows()}, {"cols", m.cols()}});
  return list;
}

void read_tensors(const Json& index, ParamSet<double>& out, const std::vector<std::uint8_t>& data, std::size_t& pos,
                  const std::filesystem::path& path) {
  for (const auto& entry : index) {
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    Matrix<double> m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = get_le<double>(data, pos, path);
    out.emplace(entry.at("name").get<std::string>(), std::move(m));
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Json grid = Json::array();
  for (const auto& d : ckpt.doa_grid) grid.push_back({d.azimuth, d.elevation});
  Json header = {{"unet", to_json(ckpt.unet)},
                 {"schedule", to_json(ckpt.schedule)},
                 {"train", to_json(ckpt.train)},
                 {"anthro_mean", std::vector<double>(ckpt.anthro_stats.mean.begin(), ckpt.anthro_stats.mean.end())},
                 {"anthro_std", std::vector<double>(ckpt.anthro_stats.std.begin(), ckpt.anthro_stats.std.end())},
                 {"doa_grid", grid},
                 {"sample_rate", ckpt.sample_rate},
                 {"test_subject", ckpt.test_subject},
                 {"best_val_loss", ckpt.best_val_loss},
                 {"epoch_of_best", ckpt.epoch_of_best},
                 {"epochs_run", ckpt.epochs_run},
                 {"diverged", ckpt.diverged},
                 {"config_hash", ckpt.config_hash},
                 {"weights", tensor_index(ckpt.params.weights)},
                 {"buffers", tensor_index(ckpt.params.buffers)}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  for (char c : std::string("HDCK")) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto* set : {&ckpt.params.weights, &ckpt.params.buffers})
    for (const auto& [key, m] : *set)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) put_le<double>(out, m(i, j));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorKind::kIo, "cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) fail(ErrorKind::kIo, "write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  std::string magic;
  for (int k = 0; k < 4; ++k) magic.push_back(static_cast<char>(get_le<std::uint8_t>(data, pos, path)));
  if (magic != "HDCK") fail(ErrorKind::kFormat, "not a checkpoint: " + path.string());
  if (get_le<std::uint8_t>(data, pos, path) != kCheckpointVersion)
    fail(ErrorKind::kFormat, "unsupported checkpoint version in " + path.string());
  const auto size = get_le<std::uint32_t>(data, pos, path);
  if (pos + size > data.size()) fail(ErrorKind::kFormat, "truncated checkpoint " + path.string());
  Json header;
  try {
    header = Json::parse(data.begin() + static_cast<std::ptrdiff_t>(pos),
                         data.begin() + static_cast<std::ptrdiff_t>(pos + size));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  pos += size;

  Checkpoint c;
  try {
    c.unet = unet_config_from_json(header.at("unet"));
    c.schedule = schedule_config_from_json(header.at("schedule"));
    c.train = train_config_from_json(header.at("train"));
    const auto mean = header.at("anthro_mean").get<std::vector<double>>();
    const auto stdev = header.at("anthro_std").get<std::vector<double>>();
    require(mean.size() == kAnthroFeatures && stdev.size() == kAnthroFeatures, ErrorKind::kFormat,
            "checkpoint anthropometric statistics have the wrong dimension");
    c.anthro_stats.mean = Eigen::Map<const AnthroValues>(mean.data());
    c.anthro_stats.std = Eigen::Map<const AnthroValues>(stdev.data());
    int label = 0;
    for (const auto& d : header.at("doa_grid")) c.doa_grid.push_back({d.at(0).get<double>(), d.at(1).get<double>(), label++});
    c.sample_rate = header.at("sample_rate").get<double>();
    c.test_subject = header.at("test_subject").get<int>();
    c.best_val_loss = header.at("best_val_loss").get<double>();
    c.epoch_of_best = header.at("epoch_of_best").get<int>();
    c.epochs_run = header.at("epochs_run").get<int>();
    c.diverged = header.at("diverged").get<bool>();
    c.config_hash = header.at("config_hash").get<std::string>();
    read_tensors(header.at("weights"), c.params.weights, data, pos, path);
    read_tensors(header.at("buffers"), c.params.buffers, data, pos, path);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  if (pos != data.size()) fail(ErrorKind::kFormat, "trailing bytes in checkpoint " + path.string());
  const auto schema = param_schema(c.unet);
  require(schema.size() == c.params.weights.size(), ErrorKind::kFormat, "checkpoint parameters do not match its U-Net config");
  for (const auto& [key, shape] : schema) {
    auto it = c.params.weights.find(key);
    require(it != c.params.weights.end() && it->second.rows() == shape.rows && it->second.cols() == shape.cols,
            ErrorKind::kFormat, "checkpoint parameter " + key + " missing or mis-shaped");
  }
  return c;
}

}  // namespace hrirdiff
