#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hrirdiff/autodiff.hpp"
#include "hrirdiff/dataset.hpp"
#include "hrirdiff/diffusion.hpp"
#include "hrirdiff/error.hpp"
#include "hrirdiff/rng.hpp"

namespace hrirdiff {

enum class DoaEncoding {
  kEmbedding,   // learned table indexed by grid label
  kContinuous,  // (sin az, cos az, sin el, cos el)
};

struct UNetConfig {
  int input_channels = 2;
  std::vector<int> level_channels{4, 8, 16, 32, 64};
  int conv_kernel = 3;
  int down_kernel = 4;
  int down_stride = 2;
  int attention_heads = 4;
  bool attention_positional = true;  // sinusoidal position code added to the attention input
  DoaEncoding doa_encoding = DoaEncoding::kEmbedding;
  int doa_embedding_dim = 16;
  int num_doas = 1;  // L, rows of the embedding table
  int step_embedding_dim = 32;
  int cond_hidden = 64;
  int signal_length = 256;
  bool pad_to_multiple = true;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  int levels() const { return static_cast<int>(level_channels.size()); }
  int doa_dim() const { return doa_encoding == DoaEncoding::kEmbedding ? doa_embedding_dim : 4; }
  int cond_dim() const { return doa_dim() + kAnthroFeatures + step_embedding_dim; }

  /// Length seen by the network: signal_length rounded up to a multiple of 2^levels.
  Eigen::Index padded_length() const {
    const Eigen::Index m = Eigen::Index(1) << levels();
    return (signal_length + m - 1) / m * m;
  }

  void validate() const {
    require(input_channels >= 1, ErrorKind::kConfiguration, "input_channels must be >= 1");
    require(levels() >= 1, ErrorKind::kConfiguration, "at least one U-Net level is required");
    for (int k = 0; k < levels(); ++k) {
      require(level_channels[k] > 0 && level_channels[k] % attention_heads == 0, ErrorKind::kConfiguration,
              "level " + std::to_string(k) + " channels must be a positive multiple of attention_heads");
      if (k > 0)
        require(level_channels[k] > level_channels[k - 1], ErrorKind::kConfiguration,
                "level_channels must be strictly increasing");
    }
    require(conv_kernel % 2 == 1, ErrorKind::kConfiguration, "conv_kernel must be odd to preserve length");
    require(down_kernel == 2 * down_stride && down_stride == 2, ErrorKind::kConfiguration,
            "downsampling is fixed to kernel 4, stride 2");
    require(attention_heads >= 1, ErrorKind::kConfiguration, "attention_heads must be >= 1");
    require(step_embedding_dim >= 2 && step_embedding_dim % 2 == 0, ErrorKind::kConfiguration,
            "step_embedding_dim must be even");
    require(cond_hidden >= 1 && doa_embedding_dim >= 1, ErrorKind::kConfiguration, "conditioning sizes must be >= 1");
    require(num_doas >= 1, ErrorKind::kConfiguration, "num_doas must be >= 1");
    require(signal_length >= 1, ErrorKind::kConfiguration, "signal_length must be >= 1");
    require(pad_to_multiple || padded_length() == signal_length, ErrorKind::kConfiguration,
            "signal_length " + std::to_string(signal_length) + " is not divisible by 2^" + std::to_string(levels()) +
                " and padding is disabled");
  }
};

template <typename Scalar>
using ParamSet = std::map<std::string, Matrix<Scalar>>;

/// Trainable weights keyed by layer path plus non-trainable buffers (batch-norm running stats).
template <typename Scalar>
struct ModelParams {
  ParamSet<Scalar> weights;
  ParamSet<Scalar> buffers;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [key, w] : weights) n += static_cast<std::size_t>(w.size());
    return n;
  }

  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out;
    for (const auto& [key, w] : weights) out.weights.emplace(key, w.template cast<Other>());
    for (const auto& [key, b] : buffers) out.buffers.emplace(key, b.template cast<Other>());
    return out;
  }
};

/// Layer-path -> shape schema implied by a configuration.
struct ParamShape {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index fan_in = 0;  // 0 marks a bias (zero-initialised)
  enum class Init { kUniform, kZero, kOne } init = Init::kUniform;
};

inline std::map<std::string, ParamShape> param_schema(const UNetConfig& c) {
  std::map<std::string, ParamShape> s;
  auto weight = [&](const std::string& key, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in) {
    s[key] = {rows, cols, fan_in, ParamShape::Init::kUniform};
  };
  auto bias = [&](const std::string& key, Eigen::Index rows) { s[key] = {rows, 1, 0, ParamShape::Init::kZero}; };
  auto linear = [&](const std::string& p, Eigen::Index out, Eigen::Index in) {
    weight(p + ".weight", out, in, in);
    bias(p + ".bias", out);
  };
  auto conv = [&](const std::string& p, Eigen::Index out, Eigen::Index in, Eigen::Index k) {
    weight(p + ".weight", out, in * k, in * k);
    bias(p + ".bias", out);
  };
  auto norm = [&](const std::string& p, Eigen::Index ch) {
    s[p + ".gamma"] = {ch, 1, 0, ParamShape::Init::kOne};
    s[p + ".beta"] = {ch, 1, 0, ParamShape::Init::kZero};
  };

  if (c.doa_encoding == DoaEncoding::kEmbedding) weight("doa.embedding", c.doa_embedding_dim, c.num_doas, 1);
  linear("cond.fc", c.cond_hidden, c.cond_dim());

  const int k = c.conv_kernel;
  for (int l = 0; l < c.levels(); ++l) {
    const std::string p = "enc." + std::to_string(l);
    const int ch = c.level_channels[l];
    const int in = l == 0 ? c.input_channels : c.level_channels[l - 1];
    conv(p + ".conv1", ch, in, k);
    norm(p + ".norm", ch);
    conv(p + ".conv2", ch, ch, k);
    linear(p + ".cond", ch, c.cond_hidden);
    conv(p + ".down", ch, ch, c.down_kernel);
    for (const char* m : {"q", "k", "v", "out"}) linear(p + ".attn." + m, ch, ch);
  }
  for (int l = c.levels() - 1; l >= 0; --l) {
    const std::string p = "dec." + std::to_string(l);
    const int ch = c.level_channels[l];
    const int in = l == c.levels() - 1 ? ch : c.level_channels[l + 1];
    // Transposed conv weight is (Cin, Cout*k); each output sees Cin*k/stride inputs.
    weight(p + ".up.weight", in, ch * c.down_kernel, in * c.down_kernel / c.down_stride);
    bias(p + ".up.bias", ch);
    linear(p + ".cond", ch, c.cond_hidden);
    conv(p + ".conv1", ch, 3 * ch, k);
    norm(p + ".norm", ch);
    conv(p + ".conv2", ch, ch, k);
  }
  conv("out.conv", c.input_channels, c.level_channels.front(), k);
  return s;
}

inline std::vector<std::string> norm_layers(const UNetConfig& c) {
  std::vector<std::string> out;
  for (int l = 0; l < c.levels(); ++l) {
    out.push_back("enc." + std::to_string(l) + ".norm");
    out.push_back("dec." + std::to_string(l) + ".norm");
  }
  return out;
}

/// Deterministic initialisation: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
template <typename Scalar>
ModelParams<Scalar> init_params(const UNetConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams<Scalar> p;
  Rng rng(derive_seed(seed, {0x1a17}));
  for (const auto& [key, shape] : param_schema(config)) {
    Matrix<Scalar> m(shape.rows, shape.cols);
    switch (shape.init) {
      case ParamShape::Init::kZero: m.setZero(); break;
      case ParamShape::Init::kOne: m.setOnes(); break;
      case ParamShape::Init::kUniform: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(shape.fan_in));
        for (Eigen::Index j = 0; j < m.cols(); ++j)
          for (Eigen::Index i = 0; i < m.rows(); ++i) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            m(i, j) = static_cast<Scalar>((2.0 * u - 1.0) * bound);
          }
        break;
      }
    }
    p.weights.emplace(key, std::move(m));
  }
  for (const auto& layer : norm_layers(config)) {
    const Eigen::Index ch = p.weights.at(layer + ".gamma").rows();
    p.buffers.emplace(layer + ".running_mean", Matrix<Scalar>::Zero(ch, 1));
    p.buffers.emplace(layer + ".running_var", Matrix<Scalar>::Ones(ch, 1));
  }
  return p;
}

/// Per-item conditioning for a batch: DOA labels and directions plus normalised anthropometry.
struct ConditionBatch {
  std::vector<int> labels;
  std::vector<Doa> doas;
  Eigen::Matrix<double, kAnthroFeatures, Eigen::Dynamic> anthro;

  int size() const { return static_cast<int>(labels.size()); }

  void append(const Doa& doa, const AnthroValues& normalized) {
    labels.push_back(doa.label);
    doas.push_back(doa);
    anthro.conservativeResize(Eigen::NoChange, anthro.cols() + 1);
    anthro.col(anthro.cols() - 1) = normalized;
  }

  ConditionBatch slice(int begin, int end) const {
    ConditionBatch out;
    out.labels.assign(labels.begin() + begin, labels.begin() + end);
    out.doas.assign(doas.begin() + begin, doas.begin() + end);
    out.anthro = anthro.middleCols(begin, end - begin);
    return out;
  }
};

template <typename Scalar>
Vector<Scalar> step_embedding(int step, int dim) {
  const int half = dim / 2;
  Vector<Scalar> e(dim);
  for (int j = 0; j < half; ++j) {
    const double freq = std::exp(-std::log(10000.0) * j / half);
    e(j) = static_cast<Scalar>(std::sin(step * freq));
    e(half + j) = static_cast<Scalar>(std::cos(step * freq));
  }
  return e;
}

/// (channels, length) sinusoidal position code: row 2j is sin(t w_j), row 2j+1 is cos(t w_j).
template <typename Scalar>
Matrix<Scalar> positional_encoding(Eigen::Index channels, Eigen::Index length) {
  Matrix<Scalar> pe(channels, length);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(c / 2 * 2) / static_cast<double>(channels));
    for (Eigen::Index t = 0; t < length; ++t)
      pe(c, t) = static_cast<Scalar>(c % 2 == 0 ? std::sin(t * freq) : std::cos(t * freq));
  }
  return pe;
}

template <typename Scalar>
Vector<Scalar> continuous_doa(const Doa& doa) {
  Vector<Scalar> e(4);
  e << std::sin(doa.azimuth), std::cos(doa.azimuth), std::sin(doa.elevation), std::cos(doa.elevation);
  return e;
}

/// Concatenation of (DOA encoding, normalised anthropometry, step embedding) for one item.
template <typename Scalar>
struct ConditionVector {
  Vector<Scalar> doa_embedding;
  Vector<Scalar> anthro;
  Vector<Scalar> step_embedding;

  Vector<Scalar> concatenated() const {
    Vector<Scalar> out(doa_embedding.size() + anthro.size() + step_embedding.size());
    out << doa_embedding, anthro, step_embedding;
    return out;
  }
};

template <typename Scalar>
ConditionVector<Scalar> embed_condition(const Doa& doa, const AnthroValues& normalized, int step,
                                        const ModelParams<Scalar>& params, const UNetConfig& config) {
  ConditionVector<Scalar> c;
  if (config.doa_encoding == DoaEncoding::kEmbedding) {
    require(doa.label >= 0 && doa.label < config.num_doas, ErrorKind::kContract,
            "DOA label " + std::to_string(doa.label) + " outside [0, " + std::to_string(config.num_doas) + ")");
    c.doa_embedding = params.weights.at("doa.embedding").col(doa.label);
  } else {
    c.doa_embedding = continuous_doa<Scalar>(doa);
  }
  c.anthro = normalized.template cast<Scalar>();
  c.step_embedding = step_embedding<Scalar>(step, config.step_embedding_dim);
  return c;
}

enum class Mode { kTrain, kEval };

using ParamVars = std::map<std::string, ad::Var>;

template <typename Scalar>
ParamVars bind_params(ad::Tape<Scalar>& tape, const ModelParams<Scalar>& params, bool trainable) {
  ParamVars vars;
  for (const auto& [key, w] : params.weights) vars.emplace(key, trainable ? tape.parameter(w) : tape.constant(w));
  return vars;
}

namespace detail {

template <typename Scalar>
struct Graph {
  ad::Tape<Scalar>& tape;
  const ParamVars& vars;
  const UNetConfig& config;
  const ModelParams<Scalar>& state;  // batch-norm running statistics
  ModelParams<Scalar>* stats_out;     // receives updated statistics in training mode, may be null
  Mode mode;
  Eigen::Index batch;

  ad::Var p(const std::string& key) const {
    auto it = vars.find(key);
    require(it != vars.end(), ErrorKind::kShape, "missing parameter " + key);
    return it->second;
  }

  ad::Var conv(ad::Var x, const std::string& layer, Eigen::Index len, Eigen::Index k, Eigen::Index stride,
               Eigen::Index pad) const {
    return ad::conv1d(tape, x, p(layer + ".weight"), p(layer + ".bias"), ad::ConvShape{batch, len, k, stride, pad});
  }

  ad::Var linear(ad::Var x, const std::string& layer) const {
    return ad::add_row_bias(tape, ad::matmul(tape, p(layer + ".weight"), x), p(layer + ".bias"));
  }

  ad::Var norm(ad::Var x, const std::string& layer) const {
    ad::BatchNormBuffers<Scalar> buffers{&state.buffers.at(layer + ".running_mean"),
                                         &state.buffers.at(layer + ".running_var")};
    if (mode == Mode::kTrain && stats_out) {
      buffers.update_mean = &stats_out->buffers.at(layer + ".running_mean");
      buffers.update_var = &stats_out->buffers.at(layer + ".running_var");
    }
    return ad::batch_norm(tape, x, p(layer + ".gamma"), p(layer + ".beta"), buffers, mode == Mode::kTrain,
                          static_cast<Scalar>(config.bn_momentum), static_cast<Scalar>(config.bn_eps));
  }

  // conv(k) -> ReLU -> batch norm -> conv(k)
  ad::Var block(ad::Var x, const std::string& prefix, Eigen::Index len) const {
    const Eigen::Index k = config.conv_kernel;
    x = conv(x, prefix + ".conv1", len, k, 1, k / 2);
    x = ad::relu(tape, x);
    x = norm(x, prefix + ".norm");
    return conv(x, prefix + ".conv2", len, k, 1, k / 2);
  }

  ad::Var self_attention(ad::Var x, const std::string& prefix, Eigen::Index len) const {
    ad::Var in = x;
    if (config.attention_positional) {
      const Eigen::Index ch = tape.value(x).rows();
      in = ad::add(tape, x, tape.constant(positional_encoding<Scalar>(ch, len).replicate(1, tape.value(x).cols() / len)));
    }
    const ad::Var q = linear(in, prefix + ".q");
    const ad::Var k = linear(in, prefix + ".k");
    const ad::Var v = linear(in, prefix + ".v");
    const ad::Var o = ad::attention(tape, q, k, v, config.attention_heads, len);
    return ad::add(tape, x, linear(o, prefix + ".out"));
  }
};

}  // namespace detail

/// Builds the U-Net on `tape` and returns the predicted-noise node, shaped like `input`.
template <typename Scalar>
ad::Var unet_graph(ad::Tape<Scalar>& tape, const ParamVars& vars, const UNetConfig& config,
                   const ModelParams<Scalar>& state, ModelParams<Scalar>* stats_out, Mode mode, ad::Var input,
                   std::span<const int> steps, const ConditionBatch& cond) {
  const auto& x_in = tape.value(input);
  const Eigen::Index batch = cond.size();
  require(batch >= 1 && static_cast<Eigen::Index>(steps.size()) == batch, ErrorKind::kShape,
          "unet: steps/conditioning batch mismatch");
  require(x_in.rows() == config.input_channels && x_in.cols() == batch * config.signal_length, ErrorKind::kShape,
          "unet input: expected " + std::to_string(config.input_channels) + " x " +
              std::to_string(batch * config.signal_length) + ", got " + std::to_string(x_in.rows()) + " x " +
              std::to_string(x_in.cols()));
  require(cond.anthro.cols() == batch, ErrorKind::kShape, "unet: anthropometry batch mismatch");

  const detail::Graph<Scalar> g{tape, vars, config, state, stats_out, mode, batch};

  // Conditioning: (doa | anthro | step) -> shared FC + ReLU.
  ad::Var doa_part;
  if (config.doa_encoding == DoaEncoding::kEmbedding) {
    doa_part = ad::embedding(tape, g.p("doa.embedding"), cond.labels);
  } else {
    Matrix<Scalar> d(4, batch);
    for (Eigen::Index b = 0; b < batch; ++b) d.col(b) = continuous_doa<Scalar>(cond.doas[b]);
    doa_part = tape.constant(std::move(d));
  }
  Matrix<Scalar> step_emb(config.step_embedding_dim, batch);
  for (Eigen::Index b = 0; b < batch; ++b) step_emb.col(b) = step_embedding<Scalar>(steps[b], config.step_embedding_dim);
  const ad::Var cond_vec = ad::concat_rows(
      tape, {doa_part, tape.constant(cond.anthro.template cast<Scalar>()), tape.constant(std::move(step_emb))});
  const ad::Var hidden = ad::relu(tape, g.linear(cond_vec, "cond.fc"));

  Eigen::Index len = config.padded_length();
  ad::Var x = input;
  if (len != config.signal_length) x = ad::resize_time(tape, x, config.signal_length, len);

  std::vector<ad::Var> skips;
  for (int l = 0; l < config.levels(); ++l) {
    const std::string p = "enc." + std::to_string(l);
    x = g.block(x, p, len);
    x = ad::add_item_bias(tape, x, g.linear(hidden, p + ".cond"), len);
    skips.push_back(x);
    x = g.conv(x, p + ".down", len, config.down_kernel, config.down_stride, (config.down_kernel - config.down_stride) / 2);
    len /= config.down_stride;
    x = g.self_attention(x, p + ".attn", len);
  }
  for (int l = config.levels() - 1; l >= 0; --l) {
    const std::string p = "dec." + std::to_string(l);
    x = ad::conv_transpose1d(tape, x, g.p(p + ".up.weight"), g.p(p + ".up.bias"),
                             ad::ConvShape{batch, len, config.down_kernel, config.down_stride,
                                           (config.down_kernel - config.down_stride) / 2});
    len *= config.down_stride;
    const ad::Var c = ad::broadcast_items(tape, g.linear(hidden, p + ".cond"), len);
    x = ad::concat_rows(tape, {x, skips[static_cast<std::size_t>(l)], c});
    x = g.block(x, p, len);
  }
  x = g.conv(x, "out.conv", len, config.conv_kernel, 1, config.conv_kernel / 2);
  if (len != config.signal_length) x = ad::resize_time(tape, x, len, config.signal_length);
  return x;
}

/// Predicted noise for a batch laid out as (channels, B*T). Eval mode uses the running
/// batch-norm statistics and leaves `params` untouched.
template <typename Scalar>
Matrix<Scalar> unet_forward(const ModelParams<Scalar>& params, const UNetConfig& config, const Matrix<Scalar>& noisy,
                            std::span<const int> steps, const ConditionBatch& cond, Mode mode = Mode::kEval) {
  ad::Tape<Scalar> tape;
  const auto vars = bind_params(tape, params, false);
  const ad::Var out = unet_graph(tape, vars, config, params, static_cast<ModelParams<Scalar>*>(nullptr), mode, tape.constant(noisy), steps, cond);
  return tape.value(out);
}

/// Reverse-mode gradients of a scalar built by `evaluator(tape, vars)` with respect to every
/// trainable weight. Keys match `params.weights` exactly.
template <typename Scalar, typename Evaluator>
std::pair<Scalar, ParamSet<Scalar>> param_gradients(const ModelParams<Scalar>& params, Evaluator&& evaluator) {
  ad::Tape<Scalar> tape;
  const auto vars = bind_params(tape, params, true);
  const ad::Var loss = evaluator(tape, vars);
  const Scalar value = tape.value(loss)(0, 0);
  if (!std::isfinite(static_cast<double>(value))) fail(ErrorKind::kNumeric, "non-finite loss");
  ParamSet<Scalar> grads;
  if (tape.requires_grad(loss)) tape.backward(loss);
  for (const auto& [key, var] : vars) grads.emplace(key, tape.grad(var));
  return {value, std::move(grads)};
}

/// Diffusion loss of a noised batch and its gradients; training mode, running statistics
/// updated in `params` when `update_stats` is set.
template <typename Scalar>
std::pair<Scalar, ParamSet<Scalar>> loss_and_gradients(ModelParams<Scalar>& params, const UNetConfig& config,
                                                       const NoisedBatch<Scalar>& batch, const ConditionBatch& cond,
                                                       bool update_stats = true) {
  return param_gradients(params, [&](ad::Tape<Scalar>& tape, const ParamVars& vars) {
    const ad::Var out = unet_graph(tape, vars, config, params, update_stats ? &params : nullptr, Mode::kTrain,
                                   tape.constant(batch.noisy),
                                   std::span<const int>(batch.steps), cond);
    if (!tape.value(out).allFinite()) fail(ErrorKind::kNumeric, "non-finite network output");
    return ad::squared_error(tape, out, batch.noise, Scalar(1) / static_cast<Scalar>(batch.batch_size()));
  });
}

/// Adapts a parameter set to the noise-predictor signature used by the diffusion sampler.
template <typename Scalar>
auto make_denoiser(const ModelParams<Scalar>& params, const UNetConfig& config, Mode mode = Mode::kEval) {
  return [&params, &config, mode](const Matrix<Scalar>& noisy, std::span<const int> steps, const ConditionBatch& cond) {
    return unet_forward(params, config, noisy, steps, cond, mode);
  };
}

/// Packs two-channel signals item-major into (2, B*T).
template <typename Scalar>
Matrix<Scalar> pack_batch(std::span<const HrirPair* const> items) {
  require(!items.empty(), ErrorKind::kContract, "empty batch");
  const Eigen::Index len = items.front()->length();
  Matrix<Scalar> out(2, len * static_cast<Eigen::Index>(items.size()));
  for (std::size_t b = 0; b < items.size(); ++b) {
    require(items[b]->length() == len, ErrorKind::kShape, "batch items differ in length");
    out.middleCols(static_cast<Eigen::Index>(b) * len, len) = items[b]->samples.template cast<Scalar>();
  }
  return out;
}

/// Generates one HRIR per conditioning item with the ancestral sampler, running at most
/// `max_batch` chains at once.
template <typename Scalar>
std::vector<HrirPair> sample_hrirs(const ModelParams<Scalar>& params, const UNetConfig& config,
                                   const ConditionBatch& cond, const NoiseSchedule<Scalar>& schedule,
                                   double sample_rate, Rng& rng, int max_batch = 64) {
  require(max_batch >= 1, ErrorKind::kConfiguration, "max_batch must be >= 1");
  const Eigen::Index len = config.signal_length;
  std::vector<HrirPair> hrirs;
  for (int begin = 0; begin < cond.size(); begin += max_batch) {
    const int end = std::min(cond.size(), begin + max_batch);
    const ConditionBatch chunk = cond.slice(begin, end);
    const Matrix<Scalar> out =
        sample(make_denoiser(params, config), config.input_channels, len, chunk.size(), chunk, schedule, rng);
    for (int b = 0; b < chunk.size(); ++b) {
      HrirPair h;
      h.samples = out.middleCols(b * len, len).template cast<double>();
      h.sample_rate = sample_rate;
      hrirs.push_back(std::move(h));
    }
  }
  return hrirs;
}

template <typename Scalar>
HrirPair sample_hrir(const ModelParams<Scalar>& params, const UNetConfig& config, const Doa& doa,
                     const AnthroValues& normalized, const NoiseSchedule<Scalar>& schedule, double sample_rate,
                     Rng& rng) {
  ConditionBatch cond;
  cond.append(doa, normalized);
  return sample_hrirs(params, config, cond, schedule, sample_rate, rng).front();
}

}  // namespace hrirdiff
