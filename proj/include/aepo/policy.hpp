#pragma once

// Tiny autoregressive token policy.
//
// Two evaluation paths share one flat parameter vector:
//  * Decoder / forward_distribution: plain incremental inference (KV cache or
//    recurrent state), used for sampling and for recording old log-probs.
//  * forward_logits: the same network recorded on an autodiff tape, used for
//    every loss that needs gradients.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "aepo/autodiff.hpp"
#include "aepo/rng.hpp"
#include "aepo/tokens.hpp"

namespace aepo {

class InvalidConfig : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Arch { gru_like, tiny_attention };

std::string_view to_string(Arch arch);
Arch arch_from_string(std::string_view name);  // throws InvalidConfig

struct ModelConfig {
  int vocab_size = vocab::vocab_size_for(32);
  int context_len = 256;
  int hidden_dim = 64;
  int n_layers = 2;
  int n_heads = 4;  // attention only
  Arch arch = Arch::tiny_attention;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Offsets of every tensor inside the flat parameter vector. A pure function
/// of the config.
struct ParamLayout {
  struct Block {
    // tiny_attention
    std::size_t norm1 = 0, qkv = 0, attn_out = 0, norm2 = 0, fc_w = 0, fc_b = 0, proj_w = 0,
                proj_b = 0;
    // gru_like
    std::size_t w_input = 0, w_hidden = 0, bias = 0;
  };

  std::size_t tok_emb = 0;
  std::size_t pos_emb = 0;  // attention only
  std::vector<Block> blocks;
  std::size_t final_norm = 0;
  std::size_t head_w = 0;
  std::size_t head_b = 0;
  std::size_t total = 0;

  static ParamLayout of(const ModelConfig& config);
};

struct PolicyParams {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::vector<double> values;
  ModelConfig config;
  std::uint32_t version = kFormatVersion;

  /// Output projection [hidden_dim x vocab_size] and bias [vocab_size].
  std::span<double> head_weights();
  std::span<double> head_bias();
};

/// Next-token distribution over the vocabulary.
struct Distribution {
  std::vector<double> probs;
};

PolicyParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Incremental inference over one token sequence.
class Decoder {
 public:
  explicit Decoder(const PolicyParams& params);

  /// Appends `token` and returns the logits for the next position.
  std::span<const double> push(Token token);
  std::size_t length() const { return length_; }

 private:
  void push_attention(Token token);
  void push_gru(Token token);

  const PolicyParams& params_;
  ParamLayout layout_;
  std::size_t length_ = 0;
  std::vector<std::vector<double>> keys_, vals_;  // per block, [context x d]
  std::vector<std::vector<double>> state_;        // gru hidden per block
  std::vector<double> logits_;
};

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

/// pi(. | prefix). Throws std::invalid_argument on an empty prefix, a prefix of
/// context_len tokens or more, or an out-of-range token id.
Distribution forward_distribution(const PolicyParams& params, std::span<const Token> prefix);

/// temperature == 0 returns the argmax (lowest id on ties) and leaves `rng`
/// untouched. Otherwise samples from the temperature-scaled distribution
/// truncated to its top_p nucleus.
Token sample_token(const Distribution& dist, double temperature, double top_p, Rng& rng);

/// Records the network on `tape` for `tokens` and returns logits for rows
/// [first_row, tokens.size()) as a [rows x vocab_size] matrix.
ad::Var forward_logits(ad::Tape& tape, const PolicyParams& params, std::span<const Token> tokens,
                       std::size_t first_row = 0);

/// Exact reverse-mode gradient of `loss` with respect to the tape's parameters.
std::vector<double> loss_gradient(ad::Tape& tape, ad::Var loss);

// Checkpoint file: "AEPO", u32 format version, u32 byte length + ModelConfig
// JSON, then every parameter as a little-endian IEEE-754 double.
std::string encode_checkpoint(const PolicyParams& params);
PolicyParams decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params);
PolicyParams load_checkpoint(const std::filesystem::path& path);

}  // namespace aepo
