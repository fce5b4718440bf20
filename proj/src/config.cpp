#include "hrirdiff/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace hrirdiff {
namespace {

class Reader {
 public:
  Reader(const Json& j, std::string section) : j_(j), section_(std::move(section)) {
    require(j.is_object(), ErrorKind::kSchema, section_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::kSchema, section_ + "." + key + " has the wrong type");
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      require(seen_.count(it.key()) > 0, ErrorKind::kSchema, "unknown key " + section_ + "." + it.key());
  }

 private:
  const Json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

template <typename E>
E parse_enum(const std::string& value, std::initializer_list<std::pair<const char*, E>> options, const std::string& key) {
  for (const auto& [name, e] : options)
    if (value == name) return e;
  fail(ErrorKind::kSchema, key + ": unsupported value \"" + value + "\"");
}

template <typename E>
std::string enum_name(E value, std::initializer_list<std::pair<const char*, E>> options) {
  for (const auto& [name, e] : options)
    if (value == e) return name;
  return "";
}

const std::initializer_list<std::pair<const char*, DoaEncoding>> kDoaEncodings{{"embedding", DoaEncoding::kEmbedding},
                                                                               {"continuous", DoaEncoding::kContinuous}};
const std::initializer_list<std::pair<const char*, ReverseVariance>> kVariances{
    {"beta", ReverseVariance::kBeta}, {"posterior", ReverseVariance::kPosterior}};
const std::initializer_list<std::pair<const char*, BandSpacing>> kSpacings{{"linear", BandSpacing::kLinear},
                                                                           {"log", BandSpacing::kLog}};
const std::initializer_list<std::pair<const char*, ItdMethod>> kItdMethods{
    {"xcorr", ItdMethod::kCrossCorrelation}, {"onset", ItdMethod::kOnset}};
const std::initializer_list<std::pair<const char*, PinnaSide>> kPinnae{{"left", PinnaSide::kLeft},
                                                                       {"right", PinnaSide::kRight}};

}  // namespace

Json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr", c.lr},
          {"lr_decay", c.lr_decay},
          {"lr_decay_every", c.lr_decay_every},
          {"early_stop_patience", c.early_stop_patience},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"val_count", c.val_count},
          {"max_steps", c.max_steps},
          {"signal_gain", c.signal_gain}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  Reader r(j, "train");
  r.get("epochs", c.epochs);
  r.get("lr", c.lr);
  r.get("lr_decay", c.lr_decay);
  r.get("lr_decay_every", c.lr_decay_every);
  r.get("early_stop_patience", c.early_stop_patience);
  r.get("batch_size", c.batch_size);
  r.get("seed", c.seed);
  r.get("val_count", c.val_count);
  r.get("max_steps", c.max_steps);
  r.get("signal_gain", c.signal_gain);
  r.finish();
  return c;
}

Json to_json(const UNetConfig& c) {
  return {{"input_channels", c.input_channels},
          {"level_channels", c.level_channels},
          {"conv_kernel", c.conv_kernel},
          {"down_kernel", c.down_kernel},
          {"down_stride", c.down_stride},
          {"attention_heads", c.attention_heads},
          {"attention_positional", c.attention_positional},
          {"doa_encoding", enum_name(c.doa_encoding, kDoaEncodings)},
          {"doa_embedding_dim", c.doa_embedding_dim},
          {"num_doas", c.num_doas},
          {"step_embedding_dim", c.step_embedding_dim},
          {"cond_hidden", c.cond_hidden},
          {"signal_length", c.signal_length},
          {"pad_to_multiple", c.pad_to_multiple},
          {"bn_momentum", c.bn_momentum},
          {"bn_eps", c.bn_eps}};
}

UNetConfig unet_config_from_json(const Json& j) {
  UNetConfig c;
  Reader r(j, "unet");
  std::string encoding = enum_name(c.doa_encoding, kDoaEncodings);
  r.get("input_channels", c.input_channels);
  r.get("level_channels", c.level_channels);
  r.get("conv_kernel", c.conv_kernel);
  r.get("down_kernel", c.down_kernel);
  r.get("down_stride", c.down_stride);
  r.get("attention_heads", c.attention_heads);
  r.get("attention_positional", c.attention_positional);
  r.get("doa_encoding", encoding);
  r.get("doa_embedding_dim", c.doa_embedding_dim);
  r.get("num_doas", c.num_doas);
  r.get("step_embedding_dim", c.step_embedding_dim);
  r.get("cond_hidden", c.cond_hidden);
  r.get("signal_length", c.signal_length);
  r.get("pad_to_multiple", c.pad_to_multiple);
  r.get("bn_momentum", c.bn_momentum);
  r.get("bn_eps", c.bn_eps);
  r.finish();
  c.doa_encoding = parse_enum(encoding, kDoaEncodings, "unet.doa_encoding");
  return c;
}

Json to_json(const ScheduleConfig& c) {
  return {{"steps", c.steps},
          {"beta_start", c.beta_start},
          {"beta_end", c.beta_end},
          {"variance", enum_name(c.variance, kVariances)}};
}

ScheduleConfig schedule_config_from_json(const Json& j) {
  ScheduleConfig c;
  Reader r(j, "schedule");
  std::string variance = enum_name(c.variance, kVariances);
  r.get("steps", c.steps);
  r.get("beta_start", c.beta_start);
  r.get("beta_end", c.beta_end);
  r.get("variance", variance);
  r.finish();
  c.variance = parse_enum(variance, kVariances, "schedule.variance");
  return c;
}

Json to_json(const MetricsConfig& c) {
  return {{"nfft", c.nfft},
          {"num_bands", c.num_bands},
          {"max_frequency_hz", c.max_frequency_hz},
          {"spacing", enum_name(c.spacing, kSpacings)},
          {"log_min_frequency_hz", c.log_min_frequency_hz},
          {"magnitude_floor", c.magnitude_floor},
          {"itd_method", enum_name(c.itd_method, kItdMethods)},
          {"itd_lowpass_hz", c.itd_lowpass_hz},
          {"itd_max_lag_s", c.itd_max_lag_s},
          {"onset_threshold_db", c.onset_threshold_db},
          {"horizontal_tolerance_rad", c.horizontal_tolerance_rad}};
}

MetricsConfig metrics_config_from_json(const Json& j) {
  MetricsConfig c;
  Reader r(j, "metrics");
  std::string spacing = enum_name(c.spacing, kSpacings);
  std::string method = enum_name(c.itd_method, kItdMethods);
  r.get("nfft", c.nfft);
  r.get("num_bands", c.num_bands);
  r.get("max_frequency_hz", c.max_frequency_hz);
  r.get("spacing", spacing);
  r.get("log_min_frequency_hz", c.log_min_frequency_hz);
  r.get("magnitude_floor", c.magnitude_floor);
  r.get("itd_method", method);
  r.get("itd_lowpass_hz", c.itd_lowpass_hz);
  r.get("itd_max_lag_s", c.itd_max_lag_s);
  r.get("onset_threshold_db", c.onset_threshold_db);
  r.get("horizontal_tolerance_rad", c.horizontal_tolerance_rad);
  r.finish();
  c.spacing = parse_enum(spacing, kSpacings, "metrics.spacing");
  c.itd_method = parse_enum(method, kItdMethods, "metrics.itd_method");
  return c;
}

Json to_json(const ExperimentConfig& c) {
  return {{"dataset", c.dataset.generic_string()},
          {"output_root", c.output_root.generic_string()},
          {"pinna", enum_name(c.pinna, kPinnae)},
          {"stats_from_all_subjects", c.stats_from_all_subjects},
          {"sample_batch", c.sample_batch},
          {"train", to_json(c.train)},
          {"unet", to_json(c.unet)},
          {"schedule", to_json(c.schedule)},
          {"metrics", to_json(c.metrics)}};
}

ExperimentConfig experiment_config_from_json(const Json& j) {
  ExperimentConfig c;
  Reader r(j, "config");
  std::string dataset, output = c.output_root.generic_string(), pinna = enum_name(c.pinna, kPinnae);
  r.get("dataset", dataset);
  r.get("output_root", output);
  r.get("pinna", pinna);
  r.get("stats_from_all_subjects", c.stats_from_all_subjects);
  r.get("sample_batch", c.sample_batch);
  if (const Json* t = r.child("train")) c.train = train_config_from_json(*t);
  if (const Json* u = r.child("unet")) c.unet = unet_config_from_json(*u);
  if (const Json* s = r.child("schedule")) c.schedule = schedule_config_from_json(*s);
  if (const Json* m = r.child("metrics")) c.metrics = metrics_config_from_json(*m);
  r.finish();
  c.dataset = dataset;
  c.output_root = output;
  c.pinna = parse_enum(pinna, kPinnae, "pinna");
  return c;
}

void ExperimentConfig::validate() const {
  train.validate();
  unet.validate();
  (void)schedule.build<double>();
  require(sample_batch >= 1, ErrorKind::kConfiguration, "sample_batch must be >= 1");
  require(metrics.nfft >= 2 && metrics.num_bands >= 1 && metrics.max_frequency_hz > 0 && metrics.magnitude_floor > 0,
          ErrorKind::kConfiguration, "invalid metrics settings");
}

void apply_environment(ExperimentConfig& config) {
  if (const char* out = std::getenv("HRIRDIFF_OUT"); out && *out) config.output_root = out;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  ExperimentConfig c = experiment_config_from_json(read_json_file(path));
  const auto base = path.parent_path();
  if (!c.dataset.empty() && c.dataset.is_relative()) c.dataset = base / c.dataset;
  if (c.output_root.is_relative()) c.output_root = base / c.output_root;
  apply_environment(c);
  c.validate();
  return c;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << h;
  return out.str();
}

std::string config_hash(const ExperimentConfig& config) {
  Json j = to_json(config);
  j.erase("output_root");
  j.erase("dataset");
  return fnv1a_hex(j.dump());
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kSchema, path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace hrirdiff
