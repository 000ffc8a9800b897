#include "aepo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace aepo {

namespace {

constexpr double kNormEps = 1e-5;

double gelu_value(double x) {
  constexpr double c = 0.7978845608028654;
  constexpr double k = 0.044715;
  return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x)));
}

double sigmoid_value(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// out[j] += sum_p in[p] * w[p * n + j]
void accumulate_vec_mat(std::span<const double> in, const double* w, std::size_t n, double* out) {
  for (std::size_t p = 0; p < in.size(); ++p) {
    const double a = in[p];
    const double* row = w + p * n;
    for (std::size_t j = 0; j < n; ++j) {
      out[j] += a * row[j];
    }
  }
}

void rms_norm_into(std::span<const double> x, const double* gain, std::span<double> out) {
  double ss = 0.0;
  for (double v : x) {
    ss += v * v;
  }
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + kNormEps);
  for (std::size_t j = 0; j < x.size(); ++j) {
    out[j] = x[j] * inv * gain[j];
  }
}

void check_tokens(const ModelConfig& cfg, std::span<const Token> tokens) {
  for (Token t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw std::invalid_argument("token id " + std::to_string(t) + " outside vocabulary of size " +
                                  std::to_string(cfg.vocab_size));
    }
  }
}

}  // namespace

std::string_view to_string(Arch arch) {
  return arch == Arch::gru_like ? "gru_like" : "tiny_attention";
}

Arch arch_from_string(std::string_view name) {
  if (name == "gru_like") return Arch::gru_like;
  if (name == "tiny_attention") return Arch::tiny_attention;
  throw InvalidConfig("unknown arch '" + std::string(name) + "' (expected gru_like or tiny_attention)");
}

void ModelConfig::validate() const {
  if (vocab_size < 10) throw InvalidConfig("model.vocab_size must be >= 10");
  if (context_len < 1) throw InvalidConfig("model.context_len must be >= 1");
  if (hidden_dim < 1) throw InvalidConfig("model.hidden_dim must be >= 1");
  if (n_layers < 1) throw InvalidConfig("model.n_layers must be >= 1");
  if (arch == Arch::tiny_attention && (n_heads < 1 || hidden_dim % n_heads != 0)) {
    throw InvalidConfig("model.n_heads must be >= 1 and divide model.hidden_dim");
  }
}

ParamLayout ParamLayout::of(const ModelConfig& cfg) {
  cfg.validate();
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  const auto d = static_cast<std::size_t>(cfg.hidden_dim);
  const auto c = static_cast<std::size_t>(cfg.context_len);
  ParamLayout lay;
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    const std::size_t off = at;
    at += n;
    return off;
  };
  lay.tok_emb = take(v * d);
  if (cfg.arch == Arch::tiny_attention) {
    lay.pos_emb = take(c * d);
  }
  lay.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
  for (Block& b : lay.blocks) {
    if (cfg.arch == Arch::tiny_attention) {
      b.norm1 = take(d);
      b.qkv = take(d * 3 * d);
      b.attn_out = take(d * d);
      b.norm2 = take(d);
      b.fc_w = take(d * 4 * d);
      b.fc_b = take(4 * d);
      b.proj_w = take(4 * d * d);
      b.proj_b = take(d);
    } else {
      b.w_input = take(d * 3 * d);
      b.w_hidden = take(d * 3 * d);
      b.bias = take(3 * d);
    }
  }
  lay.final_norm = take(d);
  lay.head_w = take(d * v);
  lay.head_b = take(v);
  lay.total = at;
  return lay;
}

std::span<double> PolicyParams::head_weights() {
  const ParamLayout lay = ParamLayout::of(config);
  return std::span<double>(values).subspan(lay.head_w, lay.head_b - lay.head_w);
}

std::span<double> PolicyParams::head_bias() {
  const ParamLayout lay = ParamLayout::of(config);
  return std::span<double>(values).subspan(lay.head_b, static_cast<std::size_t>(config.vocab_size));
}

PolicyParams init_params(const ModelConfig& config, std::uint64_t seed) {
  const ParamLayout lay = ParamLayout::of(config);
  PolicyParams params;
  params.config = config;
  params.values.assign(lay.total, 0.0);
  Rng rng(derive_seed(seed, {stream::kInit}));
  auto& w = params.values;
  auto gaussian = [&](std::size_t offset, std::size_t fan_in, std::size_t fan_out) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) {
      w[offset + i] = rng.normal() * scale;
    }
  };
  auto ones = [&](std::size_t offset, std::size_t n) { std::fill_n(w.begin() + static_cast<std::ptrdiff_t>(offset), n, 1.0); };

  const auto v = static_cast<std::size_t>(config.vocab_size);
  const auto d = static_cast<std::size_t>(config.hidden_dim);
  const auto c = static_cast<std::size_t>(config.context_len);
  // Embeddings are lookups of one-hot inputs: fan-in 1.
  gaussian(lay.tok_emb, 1, v * d);
  if (config.arch == Arch::tiny_attention) {
    gaussian(lay.pos_emb, 1, c * d);
  }
  for (const auto& b : lay.blocks) {
    if (config.arch == Arch::tiny_attention) {
      ones(b.norm1, d);
      gaussian(b.qkv, d, 3 * d);
      gaussian(b.attn_out, d, d);
      ones(b.norm2, d);
      gaussian(b.fc_w, d, 4 * d);
      gaussian(b.proj_w, 4 * d, d);
    } else {
      gaussian(b.w_input, d, 3 * d);
      gaussian(b.w_hidden, d, 3 * d);
    }
  }
  ones(lay.final_norm, d);
  gaussian(lay.head_w, d, v);
  return params;
}

// ---- incremental inference ------------------------------------------------

Decoder::Decoder(const PolicyParams& params) : params_(params), layout_(ParamLayout::of(params.config)) {
  if (params.values.size() != layout_.total) {
    throw std::invalid_argument("parameter vector length does not match its config");
  }
  const auto d = static_cast<std::size_t>(params.config.hidden_dim);
  const auto c = static_cast<std::size_t>(params.config.context_len);
  if (params.config.arch == Arch::tiny_attention) {
    keys_.assign(layout_.blocks.size(), std::vector<double>(c * d, 0.0));
    vals_.assign(layout_.blocks.size(), std::vector<double>(c * d, 0.0));
  } else {
    state_.assign(layout_.blocks.size(), std::vector<double>(d, 0.0));
  }
  logits_.assign(static_cast<std::size_t>(params.config.vocab_size), 0.0);
}

std::span<const double> Decoder::push(Token token) {
  const ModelConfig& cfg = params_.config;
  if (token < 0 || token >= cfg.vocab_size) {
    throw std::invalid_argument("token id " + std::to_string(token) + " outside vocabulary");
  }
  if (length_ >= static_cast<std::size_t>(cfg.context_len)) {
    throw std::invalid_argument("sequence exceeds context_len");
  }
  if (cfg.arch == Arch::tiny_attention) {
    push_attention(token);
  } else {
    push_gru(token);
  }
  ++length_;
  return logits_;
}

void Decoder::push_attention(Token token) {
  const ModelConfig& cfg = params_.config;
  const auto d = static_cast<std::size_t>(cfg.hidden_dim);
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  const auto heads = static_cast<std::size_t>(cfg.n_heads);
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* w = params_.values.data();
  const std::size_t pos = length_;
  const auto tok = static_cast<std::size_t>(token);

  std::vector<double> x(d), h(d), qkv(3 * d), att(d), hidden(4 * d), scores(pos + 1);
  for (std::size_t j = 0; j < d; ++j) {
    x[j] = w[layout_.tok_emb + tok * d + j] + w[layout_.pos_emb + pos * d + j];
  }
  for (std::size_t bi = 0; bi < layout_.blocks.size(); ++bi) {
    const auto& b = layout_.blocks[bi];
    rms_norm_into(x, w + b.norm1, h);
    std::fill(qkv.begin(), qkv.end(), 0.0);
    accumulate_vec_mat(h, w + b.qkv, 3 * d, qkv.data());
    std::copy_n(qkv.begin() + static_cast<std::ptrdiff_t>(d), d, keys_[bi].begin() + static_cast<std::ptrdiff_t>(pos * d));
    std::copy_n(qkv.begin() + static_cast<std::ptrdiff_t>(2 * d), d, vals_[bi].begin() + static_cast<std::ptrdiff_t>(pos * d));
    std::fill(att.begin(), att.end(), 0.0);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const double* q = qkv.data() + hd * dh;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= pos; ++j) {
        const double* k = keys_[bi].data() + j * d + hd * dh;
        double s = 0.0;
        for (std::size_t e = 0; e < dh; ++e) {
          s += q[e] * k[e];
        }
        scores[j] = s * scale;
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= pos; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      for (std::size_t j = 0; j <= pos; ++j) {
        const double p = scores[j] / z;
        const double* val = vals_[bi].data() + j * d + hd * dh;
        for (std::size_t e = 0; e < dh; ++e) {
          att[hd * dh + e] += p * val[e];
        }
      }
    }
    std::vector<double> proj(d, 0.0);
    accumulate_vec_mat(att, w + b.attn_out, d, proj.data());
    for (std::size_t j = 0; j < d; ++j) {
      x[j] += proj[j];
    }
    rms_norm_into(x, w + b.norm2, h);
    std::fill(hidden.begin(), hidden.end(), 0.0);
    accumulate_vec_mat(h, w + b.fc_w, 4 * d, hidden.data());
    for (std::size_t j = 0; j < 4 * d; ++j) {
      hidden[j] = gelu_value(hidden[j] + w[b.fc_b + j]);
    }
    std::fill(proj.begin(), proj.end(), 0.0);
    accumulate_vec_mat(hidden, w + b.proj_w, d, proj.data());
    for (std::size_t j = 0; j < d; ++j) {
      x[j] += proj[j] + w[b.proj_b + j];
    }
  }
  rms_norm_into(x, w + layout_.final_norm, h);
  std::fill(logits_.begin(), logits_.end(), 0.0);
  accumulate_vec_mat(h, w + layout_.head_w, v, logits_.data());
  for (std::size_t j = 0; j < v; ++j) {
    logits_[j] += w[layout_.head_b + j];
  }
}

void Decoder::push_gru(Token token) {
  const ModelConfig& cfg = params_.config;
  const auto d = static_cast<std::size_t>(cfg.hidden_dim);
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  const double* w = params_.values.data();
  const auto tok = static_cast<std::size_t>(token);

  std::vector<double> x(w + layout_.tok_emb + tok * d, w + layout_.tok_emb + (tok + 1) * d);
  std::vector<double> gx(3 * d), gh(3 * d), h(d);
  for (std::size_t bi = 0; bi < layout_.blocks.size(); ++bi) {
    const auto& b = layout_.blocks[bi];
    auto& state = state_[bi];
    std::fill(gx.begin(), gx.end(), 0.0);
    std::fill(gh.begin(), gh.end(), 0.0);
    accumulate_vec_mat(x, w + b.w_input, 3 * d, gx.data());
    accumulate_vec_mat(state, w + b.w_hidden, 3 * d, gh.data());
    for (std::size_t j = 0; j < 3 * d; ++j) {
      gx[j] += w[b.bias + j];
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double z = sigmoid_value(gx[j] + gh[j]);
      const double r = sigmoid_value(gx[d + j] + gh[d + j]);
      const double n = std::tanh(gx[2 * d + j] + r * gh[2 * d + j]);
      state[j] = (1.0 - z) * n + z * state[j];
    }
    x = state;
  }
  rms_norm_into(x, w + layout_.final_norm, h);
  std::fill(logits_.begin(), logits_.end(), 0.0);
  accumulate_vec_mat(h, w + layout_.head_w, v, logits_.data());
  for (std::size_t j = 0; j < v; ++j) {
    logits_[j] += w[layout_.head_b + j];
  }
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& x : p) {
    x /= z;
  }
  return p;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) {
    z += std::exp(l - mx);
  }
  const double lse = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] - lse;
  }
  return out;
}

Distribution forward_distribution(const PolicyParams& params, std::span<const Token> prefix) {
  if (prefix.empty()) {
    throw std::invalid_argument("forward_distribution: empty prefix");
  }
  if (prefix.size() >= static_cast<std::size_t>(params.config.context_len)) {
    throw std::invalid_argument("forward_distribution: prefix length must be < context_len");
  }
  check_tokens(params.config, prefix);
  Decoder dec(params);
  std::span<const double> logits;
  for (Token t : prefix) {
    logits = dec.push(t);
  }
  return Distribution{softmax(logits)};
}

Token sample_token(const Distribution& dist, double temperature, double top_p, Rng& rng) {
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    throw std::invalid_argument("sample_token: top_p must lie in (0, 1]");
  }
  if (!(temperature >= 0.0)) {
    throw std::invalid_argument("sample_token: temperature must be >= 0");
  }
  const auto& p = dist.probs;
  if (p.empty()) {
    throw std::invalid_argument("sample_token: empty distribution");
  }
  if (temperature == 0.0) {
    return static_cast<Token>(std::max_element(p.begin(), p.end()) - p.begin());
  }

  // Temperature scaling in the log domain; zero-mass tokens stay excluded.
  std::vector<double> q(p.size(), 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) mx = std::max(mx, std::log(p[i]) / temperature);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      q[i] = std::exp(std::log(p[i]) / temperature - mx);
      total += q[i];
    }
  }

  std::vector<std::size_t> order;
  order.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (q[i] > 0.0) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&q](std::size_t a, std::size_t b) { return q[a] > q[b]; });

  // Nucleus: smallest descending prefix whose mass reaches top_p. The small
  // slack absorbs rounding in sums such as 0.69 + 0.30.
  constexpr double kSlack = 1e-12;
  std::size_t kept = 0;
  double cum = 0.0;
  while (kept < order.size()) {
    cum += q[order[kept]] / total;
    ++kept;
    if (cum >= top_p - kSlack) break;
  }

  double kept_mass = 0.0;
  for (std::size_t i = 0; i < kept; ++i) kept_mass += q[order[i]];
  const double u = rng.uniform() * kept_mass;
  double acc = 0.0;
  for (std::size_t i = 0; i < kept; ++i) {
    acc += q[order[i]];
    if (acc > u) return static_cast<Token>(order[i]);
  }
  return static_cast<Token>(order[kept - 1]);
}

// ---- tape path --------------------------------------------------------------

ad::Var forward_logits(ad::Tape& tape, const PolicyParams& params, std::span<const Token> tokens,
                       std::size_t first_row) {
  const ModelConfig& cfg = params.config;
  const ParamLayout lay = ParamLayout::of(cfg);
  if (tokens.empty() || tokens.size() > static_cast<std::size_t>(cfg.context_len)) {
    throw std::invalid_argument("forward_logits: sequence length must be in [1, context_len]");
  }
  if (first_row >= tokens.size()) {
    throw std::invalid_argument("forward_logits: first_row beyond sequence");
  }
  if (tape.num_params() != params.values.size()) {
    throw std::invalid_argument("forward_logits: tape was built over a different parameter vector");
  }
  check_tokens(cfg, tokens);

  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  const auto d = static_cast<std::size_t>(cfg.hidden_dim);
  const std::size_t len = tokens.size();
  std::vector<int> ids(tokens.begin(), tokens.end());

  ad::Var x = ad::gather_rows(tape.parameter(lay.tok_emb, v, d), ids);
  if (cfg.arch == Arch::tiny_attention) {
    ad::Var pos = ad::slice_rows(tape.parameter(lay.pos_emb, static_cast<std::size_t>(cfg.context_len), d), 0, len);
    x = x + pos;
    for (const auto& b : lay.blocks) {
      ad::Var h = ad::rms_norm(x, tape.parameter(b.norm1, 1, d), kNormEps);
      ad::Var qkv = ad::matmul(h, tape.parameter(b.qkv, d, 3 * d));
      ad::Var att = ad::causal_attention(qkv, static_cast<std::size_t>(cfg.n_heads));
      x = x + ad::matmul(att, tape.parameter(b.attn_out, d, d));
      ad::Var h2 = ad::rms_norm(x, tape.parameter(b.norm2, 1, d), kNormEps);
      ad::Var f = ad::gelu(ad::add_row(ad::matmul(h2, tape.parameter(b.fc_w, d, 4 * d)),
                                       tape.parameter(b.fc_b, 1, 4 * d)));
      x = x + ad::add_row(ad::matmul(f, tape.parameter(b.proj_w, 4 * d, d)), tape.parameter(b.proj_b, 1, d));
    }
  } else {
    for (const auto& b : lay.blocks) {
      ad::Var gx = ad::add_row(ad::matmul(x, tape.parameter(b.w_input, d, 3 * d)), tape.parameter(b.bias, 1, 3 * d));
      ad::Var w_hidden = tape.parameter(b.w_hidden, d, 3 * d);
      ad::Var state = tape.constant(std::vector<double>(d, 0.0), 1, d);
      std::vector<ad::Var> outputs;
      outputs.reserve(len);
      for (std::size_t t = 0; t < len; ++t) {
        ad::Var row = ad::slice_rows(gx, t, 1);
        ad::Var gh = ad::matmul(state, w_hidden);
        ad::Var z = ad::sigmoid(ad::slice_cols(row, 0, d) + ad::slice_cols(gh, 0, d));
        ad::Var r = ad::sigmoid(ad::slice_cols(row, d, d) + ad::slice_cols(gh, d, d));
        ad::Var n = ad::tanh(ad::slice_cols(row, 2 * d, d) + r * ad::slice_cols(gh, 2 * d, d));
        state = ad::affine(z, -1.0, 1.0) * n + z * state;
        outputs.push_back(state);
      }
      x = ad::stack_rows(outputs);
    }
  }
  if (first_row > 0) {
    x = ad::slice_rows(x, first_row, len - first_row);
  }
  ad::Var xf = ad::rms_norm(x, tape.parameter(lay.final_norm, 1, d), kNormEps);
  return ad::add_row(ad::matmul(xf, tape.parameter(lay.head_w, d, v)), tape.parameter(lay.head_b, 1, v));
}

std::vector<double> loss_gradient(ad::Tape& tape, ad::Var loss) { return tape.gradient(loss); }

}  // namespace aepo
