#pragma once

// Tape-based reverse-mode automatic differentiation over small dense
// row-major matrices of doubles.
//
// A Tape records every operation applied to its Vars. Leaves are either
// constants or slices of a flat parameter vector; `Tape::gradient` runs the
// recorded operations backwards and returns d(root)/d(params) as a flat
// vector laid out exactly like the parameter vector.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace aepo::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;
};

class DisconnectedLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tape {
 public:
  /// The tape reads parameter values from `params`, which must outlive it.
  explicit Tape(std::span<const double> params);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf viewing params[offset, offset + rows*cols) as a rows x cols matrix.
  Var parameter(std::size_t offset, std::size_t rows, std::size_t cols);
  Var constant(std::vector<double> values, std::size_t rows, std::size_t cols);
  Var scalar(double value);

  std::size_t rows(Var v) const;
  std::size_t cols(Var v) const;
  std::size_t size(Var v) const { return rows(v) * cols(v); }
  const std::vector<double>& value(Var v) const;
  double item(Var v) const;

  /// Reverse pass from a 1x1 root. Throws DisconnectedLoss when the root does
  /// not depend on any parameter leaf.
  std::vector<double> gradient(Var root);

  std::size_t num_params() const { return params_.size(); }
  std::size_t num_nodes() const { return nodes_.size(); }

  // Low-level node construction used by the op library.
  using Backward = std::function<void(Tape&, std::uint32_t self)>;
  Var record(std::size_t rows, std::size_t cols, std::vector<double> value,
             std::span<const Var> inputs, Backward backward);
  Var record(std::size_t rows, std::size_t cols, std::vector<double> value,
             std::initializer_list<Var> inputs, Backward backward) {
    return record(rows, cols, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }
  bool requires_grad(Var v) const;
  /// Gradient buffer of a node during the reverse pass (allocated on demand).
  std::vector<double>& grad(std::uint32_t id);
  const std::vector<double>& value(std::uint32_t id) const { return nodes_[id].value; }
  void accumulate_param_grad(std::size_t offset, std::span<const double> g);

 private:
  struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    Backward backward;
  };

  void check(Var v) const;

  std::span<const double> params_;
  std::vector<Node> nodes_;
  std::vector<double> param_grad_;
};

// ---- op library -----------------------------------------------------------
// Shapes are checked; mismatches throw std::invalid_argument.

Var matmul(Var a, Var b);                      // [m,k] x [k,n]
Var add(Var a, Var b);                         // same shape
Var sub(Var a, Var b);                         // same shape
Var mul(Var a, Var b);                         // elementwise, same shape
Var add_row(Var a, Var row);                   // [m,n] + broadcast [1,n]
Var affine(Var a, double scale, double shift); // scale * a + shift
Var gather_rows(Var table, std::span<const int> ids);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var stack_rows(std::span<const Var> rows);     // each [1,n] -> [k,n]
Var rms_norm(Var a, Var gain, double eps);     // per row, gain [1,n]
Var gelu(Var a);                               // tanh approximation
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var abs(Var a);
Var clamp(Var a, double lo, double hi);
Var minimum(Var a, Var b);
/// Causal multi-head self-attention over a fused [L, 3d] q|k|v matrix.
Var causal_attention(Var qkv, std::size_t n_heads);
Var log_softmax_rows(Var a);
/// Shannon entropy (nats) of each row of a log-probability matrix -> [m,1].
Var entropy_from_log_probs(Var log_probs);
/// out[i] = a[rows[i], cols[i]] -> [n,1].
Var pick(Var a, std::span<const std::size_t> rows, std::span<const std::size_t> cols);
Var sum(Var a);                                // -> [1,1]
/// Mean of elements a[indices] (flat indexing) -> [1,1].
Var mean_at(Var a, std::span<const std::size_t> indices);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return affine(a, s, 0.0); }
inline Var operator+(Var a, double s) { return affine(a, 1.0, s); }
inline Var operator-(Var a, double s) { return affine(a, 1.0, -s); }

}  // namespace aepo::ad
