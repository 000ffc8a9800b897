#include <bit>
#include <fstream>
#include <iterator>

#include "aepo/policy.hpp"
#include "json.hpp"

namespace aepo {

namespace {

constexpr char kMagic[4] = {'A', 'E', 'P', 'O'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
}

void put_f64(std::string& out, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw std::runtime_error("checkpoint truncated");
    }
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint64_t le(std::size_t width) {
    const auto s = take(width);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    }
    return v;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

nlohmann::json config_json(const ModelConfig& c) {
  return nlohmann::json{{"arch", std::string(to_string(c.arch))}, {"context_len", c.context_len},
                        {"hidden_dim", c.hidden_dim},           {"n_heads", c.n_heads},
                        {"n_layers", c.n_layers},               {"vocab_size", c.vocab_size}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.arch = arch_from_string(j.at("arch").get<std::string>());
  c.context_len = j.at("context_len").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.validate();
  return c;
}

}  // namespace

std::string encode_checkpoint(const PolicyParams& params) {
  const std::string cfg = config_json(params.config).dump();
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, params.version);
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  out.reserve(out.size() + 8 * params.values.size());
  for (double x : params.values) {
    put_f64(out, x);
  }
  return out;
}

PolicyParams decode_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4) != std::string_view(kMagic, 4)) {
    throw std::runtime_error("not a checkpoint: bad magic");
  }
  PolicyParams params;
  params.version = static_cast<std::uint32_t>(in.le(4));
  if (params.version != PolicyParams::kFormatVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(params.version));
  }
  const auto cfg_len = static_cast<std::size_t>(in.le(4));
  params.config = config_from_json(nlohmann::json::parse(in.take(cfg_len)));
  const std::size_t n = ParamLayout::of(params.config).total;
  params.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    params.values[i] = std::bit_cast<double>(in.le(8));
  }
  if (!in.done()) {
    throw std::runtime_error("checkpoint has trailing bytes");
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write checkpoint " + path.string());
  }
  const std::string bytes = encode_checkpoint(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

PolicyParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot read checkpoint " + path.string());
  }
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace aepo
