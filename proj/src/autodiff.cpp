#include "aepo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

namespace aepo::ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) {
    throw std::invalid_argument(std::string("autodiff: ") + what);
  }
}

Tape& tape_of(Var a) {
  require(a.tape != nullptr, "uninitialized Var");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  require(a.tape != nullptr && a.tape == b.tape, "operands belong to different tapes");
  return *a.tape;
}

// Adds `src` into the gradient of `input` if that node participates.
void push_grad(Tape& t, Var input, std::span<const double> src) {
  if (!t.requires_grad(input)) {
    return;
  }
  auto& g = t.grad(input.id);
  for (std::size_t i = 0; i < src.size(); ++i) {
    g[i] += src[i];
  }
}

// Elementwise op with a local derivative computed from (x, y).
template <class Fwd, class Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Tape& t = tape_of(a);
  const auto& x = t.value(a);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = fwd(x[i]);
  }
  return t.record(t.rows(a), t.cols(a), std::move(y), {a},
                  [a, deriv](Tape& tp, std::uint32_t self) {
                    if (!tp.requires_grad(a)) {
                      return;
                    }
                    const auto& gy = tp.grad(self);
                    const auto& xv = tp.value(a.id);
                    const auto& yv = tp.value(self);
                    auto& gx = tp.grad(a.id);
                    for (std::size_t i = 0; i < gy.size(); ++i) {
                      gx[i] += gy[i] * deriv(xv[i], yv[i]);
                    }
                  });
}

}  // namespace

// ---- Tape -----------------------------------------------------------------

Tape::Tape(std::span<const double> params) : params_(params) {
  nodes_.reserve(256);
}

void Tape::check(Var v) const {
  require(v.tape == this, "Var belongs to another tape");
  require(v.id < nodes_.size(), "Var id out of range");
}

Var Tape::record(std::size_t rows, std::size_t cols, std::vector<double> value,
                 std::span<const Var> inputs, Backward backward) {
  require(value.size() == rows * cols, "value size does not match shape");
  bool needs = false;
  for (Var in : inputs) {
    check(in);
    needs = needs || nodes_[in.id].requires_grad;
  }
  Node node;
  node.rows = rows;
  node.cols = cols;
  node.value = std::move(value);
  node.requires_grad = needs;
  if (needs) {
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::parameter(std::size_t offset, std::size_t rows, std::size_t cols) {
  require(offset + rows * cols <= params_.size(), "parameter slice out of range");
  Node node;
  node.rows = rows;
  node.cols = cols;
  node.value.assign(params_.begin() + static_cast<std::ptrdiff_t>(offset),
                    params_.begin() + static_cast<std::ptrdiff_t>(offset + rows * cols));
  node.requires_grad = true;
  node.backward = [offset](Tape& t, std::uint32_t self) {
    t.accumulate_param_grad(offset, t.grad(self));
  };
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(std::vector<double> values, std::size_t rows, std::size_t cols) {
  require(values.size() == rows * cols, "constant size does not match shape");
  Node node;
  node.rows = rows;
  node.cols = cols;
  node.value = std::move(values);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::scalar(double value) { return constant({value}, 1, 1); }

std::size_t Tape::rows(Var v) const {
  check(v);
  return nodes_[v.id].rows;
}

std::size_t Tape::cols(Var v) const {
  check(v);
  return nodes_[v.id].cols;
}

const std::vector<double>& Tape::value(Var v) const {
  check(v);
  return nodes_[v.id].value;
}

double Tape::item(Var v) const {
  check(v);
  require(nodes_[v.id].value.size() == 1, "item() on a non-scalar");
  return nodes_[v.id].value[0];
}

bool Tape::requires_grad(Var v) const {
  check(v);
  return nodes_[v.id].requires_grad;
}

std::vector<double>& Tape::grad(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) {
    n.grad.assign(n.value.size(), 0.0);
  }
  return n.grad;
}

void Tape::accumulate_param_grad(std::size_t offset, std::span<const double> g) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    param_grad_[offset + i] += g[i];
  }
}

std::vector<double> Tape::gradient(Var root) {
  check(root);
  require(nodes_[root.id].value.size() == 1, "gradient root must be a scalar");
  if (!nodes_[root.id].requires_grad) {
    throw DisconnectedLoss("loss is not connected to any parameter");
  }
  param_grad_.assign(params_.size(), 0.0);
  for (Node& n : nodes_) {
    n.grad.clear();
  }
  grad(root.id)[0] = 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) {
      continue;
    }
    n.backward(*this, static_cast<std::uint32_t>(i));
  }
  return std::move(param_grad_);
}

// ---- ops ------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const std::size_t m = t.rows(a), k = t.cols(a), n = t.cols(b);
  require(t.rows(b) == k, "matmul inner dimensions differ");
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += aip * brow[j];
      }
    }
  }
  return t.record(m, n, std::move(c), {a, b}, [a, b, m, k, n](Tape& tp, std::uint32_t self) {
    const auto& gc = tp.grad(self);
    if (tp.requires_grad(a)) {
      const auto& bv2 = tp.value(b.id);
      auto& ga = tp.grad(a.id);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = gc.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = bv2.data() + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            acc += grow[j] * brow[j];
          }
          ga[i * k + p] += acc;
        }
      }
    }
    if (tp.requires_grad(b)) {
      const auto& av2 = tp.value(a.id);
      auto& gb = tp.grad(b.id);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = gc.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av2[i * k + p];
          double* gbrow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) {
            gbrow[j] += aip * grow[j];
          }
        }
      }
    }
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(t.rows(a) == t.rows(b) && t.cols(a) == t.cols(b), "add shape mismatch");
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  std::vector<double> c(av.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    c[i] = av[i] + bv[i];
  }
  return t.record(t.rows(a), t.cols(a), std::move(c), {a, b}, [a, b](Tape& tp, std::uint32_t self) {
    const auto& g = tp.grad(self);
    push_grad(tp, a, g);
    push_grad(tp, b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(t.rows(a) == t.rows(b) && t.cols(a) == t.cols(b), "sub shape mismatch");
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  std::vector<double> c(av.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    c[i] = av[i] - bv[i];
  }
  return t.record(t.rows(a), t.cols(a), std::move(c), {a, b}, [a, b](Tape& tp, std::uint32_t self) {
    const auto& g = tp.grad(self);
    push_grad(tp, a, g);
    if (tp.requires_grad(b)) {
      auto& gb = tp.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb[i] -= g[i];
      }
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(t.rows(a) == t.rows(b) && t.cols(a) == t.cols(b), "mul shape mismatch");
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  std::vector<double> c(av.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    c[i] = av[i] * bv[i];
  }
  return t.record(t.rows(a), t.cols(a), std::move(c), {a, b}, [a, b](Tape& tp, std::uint32_t self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(a)) {
      const auto& bv2 = tp.value(b.id);
      auto& ga = tp.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bv2[i];
      }
    }
    if (tp.requires_grad(b)) {
      const auto& av2 = tp.value(a.id);
      auto& gb = tp.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb[i] += g[i] * av2[i];
      }
    }
  });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  const std::size_t m = t.rows(a), n = t.cols(a);
  require(t.rows(row) == 1 && t.cols(row) == n, "add_row shape mismatch");
  const auto& av = t.value(a);
  const auto& rv = t.value(row);
  std::vector<double> c(av.size());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c[i * n + j] = av[i * n + j] + rv[j];
    }
  }
  return t.record(m, n, std::move(c), {a, row}, [a, row, m, n](Tape& tp, std::uint32_t self) {
    const auto& g = tp.grad(self);
    push_grad(tp, a, g);
    if (tp.requires_grad(row)) {
      auto& gr = tp.grad(row.id);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          gr[j] += g[i * n + j];
        }
      }
    }
  });
}

Var affine(Var a, double scale, double shift) {
  return unary(
      a, [scale, shift](double x) { return scale * x + shift; },
      [scale](double, double) { return scale; });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  const std::size_t rows = t.rows(table), n = t.cols(table);
  const auto& tv = t.value(table);
  std::vector<double> out(ids.size() * n);
  std::vector<int> idx(ids.begin(), ids.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && static_cast<std::size_t>(idx[i]) < rows, "gather_rows index out of range");
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(idx[i]) * n), n,
                out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  const std::size_t count = idx.size();
  return t.record(count, n, std::move(out), {table},
                  [table, idx = std::move(idx), n](Tape& tp, std::uint32_t self) {
                    const auto& g = tp.grad(self);
                    auto& gt = tp.grad(table.id);
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      const std::size_t r = static_cast<std::size_t>(idx[i]);
                      for (std::size_t j = 0; j < n; ++j) {
                        gt[r * n + j] += g[i * n + j];
                      }
                    }
                  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const std::size_t n = t.cols(a);
  require(begin + count <= t.rows(a), "slice_rows out of range");
  const auto& av = t.value(a);
  std::vector<double> out(av.begin() + static_cast<std::ptrdiff_t>(begin * n),
                          av.begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  return t.record(count, n, std::move(out), {a}, [a, begin, n](Tape& tp, std::uint32_t self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[begin * n + i] += g[i];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const std::size_t m = t.rows(a), n = t.cols(a);
  require(begin + count <= n, "slice_cols out of range");
  const auto& av = t.value(a);
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < count; ++j) {
      out[i * count + j] = av[i * n + begin + j];
    }
  }
  return t.record(m, count, std::move(out), {a}, [a, begin, count, m, n](Tape& tp, std::uint32_t self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(a.id);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < count; ++j) {
        ga[i * n + begin + j] += g[i * count + j];
      }
    }
  });
}

Var stack_rows(std::span<const Var> rows) {
  require(!rows.empty(), "stack_rows needs at least one row");
  Tape& t = tape_of(rows.front());
  const std::size_t n = t.cols(rows.front());
  std::vector<double> out;
  out.reserve(rows.size() * n);
  for (Var r : rows) {
    require(r.tape == &t && t.rows(r) == 1 && t.cols(r) == n, "stack_rows expects [1,n] rows");
    const auto& rv = t.value(r);
    out.insert(out.end(), rv.begin(), rv.end());
  }
  std::vector<Var> inputs(rows.begin(), rows.end());
  const std::size_t count = rows.size();
  return t.record(count, n, std::move(out), rows, [inputs = std::move(inputs), n](Tape& tp, std::uint32_t self) {
    const auto& g = tp.grad(self);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      push_grad(tp, inputs[i], std::span<const double>(g.data() + i * n, n));
    }
  });
}

Var rms_norm(Var a, Var gain, double eps) {
  Tape& t = tape_of(a, gain);
  const std::size_t m = t.rows(a), n = t.cols(a);
  require(t.rows(gain) == 1 && t.cols(gain) == n, "rms_norm gain shape mismatch");
  const auto& x = t.value(a);
  const auto& gv = t.value(gain);
  std::vector<double> y(m * n);
  std::vector<double> inv_rms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      ss += x[i * n + j] * x[i * n + j];
    }
    inv_rms[i] = 1.0 / std::sqrt(ss / static_cast<double>(n) + eps);
    for (std::size_t j = 0; j < n; ++j) {
      y[i * n + j] = x[i * n + j] * inv_rms[i] * gv[j];
    }
  }
  return t.record(m, n, std::move(y), {a, gain},
                  [a, gain, m, n, inv_rms = std::move(inv_rms)](Tape& tp, std::uint32_t self) {
                    const auto& gy = tp.grad(self);
                    const auto& xv = tp.value(a.id);
                    const auto& gv2 = tp.value(gain.id);
                    if (tp.requires_grad(gain)) {
                      auto& gg = tp.grad(gain.id);
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < n; ++j) {
                          gg[j] += gy[i * n + j] * xv[i * n + j] * inv_rms[i];
                        }
                      }
                    }
                    if (tp.requires_grad(a)) {
                      auto& gx = tp.grad(a.id);
                      for (std::size_t i = 0; i < m; ++i) {
                        const double r = inv_rms[i];
                        double dot = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                          dot += gy[i * n + j] * gv2[j] * xv[i * n + j];
                        }
                        const double coef = r * r * r * dot / static_cast<double>(n);
                        for (std::size_t j = 0; j < n; ++j) {
                          gx[i * n + j] += gv2[j] * gy[i * n + j] * r - xv[i * n + j] * coef;
                        }
                      }
                    }
                  });
}

Var gelu(Var a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x, double) {
        const double th = std::tanh(c * (x + k * x * x * x));
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * c * (1.0 + 3.0 * k * x * x);
      });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var abs(Var a) {
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var clamp(Var a, double lo, double hi) {
  require(lo <= hi, "clamp bounds inverted");
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var minimum(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(t.rows(a) == t.rows(b) && t.cols(a) == t.cols(b), "minimum shape mismatch");
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  std::vector<double> c(av.size());
  std::vector<bool> take_a(av.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    take_a[i] = av[i] <= bv[i];
    c[i] = take_a[i] ? av[i] : bv[i];
  }
  return t.record(t.rows(a), t.cols(a), std::move(c), {a, b},
                  [a, b, take_a = std::move(take_a)](Tape& tp, std::uint32_t self) {
                    const auto& g = tp.grad(self);
                    if (tp.requires_grad(a)) {
                      auto& ga = tp.grad(a.id);
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        if (take_a[i]) ga[i] += g[i];
                      }
                    }
                    if (tp.requires_grad(b)) {
                      auto& gb = tp.grad(b.id);
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        if (!take_a[i]) gb[i] += g[i];
                      }
                    }
                  });
}

Var causal_attention(Var qkv, std::size_t n_heads) {
  Tape& t = tape_of(qkv);
  const std::size_t len = t.rows(qkv);
  const std::size_t width = t.cols(qkv);
  require(width % 3 == 0, "causal_attention expects [L, 3d] input");
  const std::size_t d = width / 3;
  require(n_heads > 0 && d % n_heads == 0, "hidden size not divisible by head count");
  const std::size_t dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& x = t.value(qkv);

  // probs[h][i*len + j], j <= i
  auto probs = std::make_shared<std::vector<double>>(n_heads * len * len, 0.0);
  std::vector<double> out(len * d, 0.0);
  std::vector<double> scores(len);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
    double* ph = probs->data() + h * len * len;
    for (std::size_t i = 0; i < len; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t e = 0; e < dh; ++e) {
          s += x[i * width + qo + e] * x[j * width + ko + e];
        }
        scores[j] = s * scale;
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      for (std::size_t j = 0; j <= i; ++j) {
        const double p = scores[j] / z;
        ph[i * len + j] = p;
        for (std::size_t e = 0; e < dh; ++e) {
          out[i * d + h * dh + e] += p * x[j * width + vo + e];
        }
      }
    }
  }
  return t.record(len, d, std::move(out), {qkv},
                  [qkv, probs, n_heads, len, d, dh, width, scale](Tape& tp, std::uint32_t self) {
                    const auto& go = tp.grad(self);
                    const auto& xv = tp.value(qkv.id);
                    auto& gx = tp.grad(qkv.id);
                    std::vector<double> dp(len);
                    for (std::size_t h = 0; h < n_heads; ++h) {
                      const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
                      const double* ph = probs->data() + h * len * len;
                      for (std::size_t i = 0; i < len; ++i) {
                        const double* goi = go.data() + i * d + h * dh;
                        double row_dot = 0.0;
                        for (std::size_t j = 0; j <= i; ++j) {
                          const double p = ph[i * len + j];
                          double s = 0.0;
                          for (std::size_t e = 0; e < dh; ++e) {
                            s += goi[e] * xv[j * width + vo + e];
                            gx[j * width + vo + e] += p * goi[e];
                          }
                          dp[j] = s;
                          row_dot += p * s;
                        }
                        for (std::size_t j = 0; j <= i; ++j) {
                          const double ds = ph[i * len + j] * (dp[j] - row_dot) * scale;
                          for (std::size_t e = 0; e < dh; ++e) {
                            gx[i * width + qo + e] += ds * xv[j * width + ko + e];
                            gx[j * width + ko + e] += ds * xv[i * width + qo + e];
                          }
                        }
                      }
                    }
                  });
}

Var log_softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const std::size_t m = t.rows(a), n = t.cols(a);
  const auto& x = t.value(a);
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data() + i * n;
    const double mx = *std::max_element(xi, xi + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      z += std::exp(xi[j] - mx);
    }
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) {
      y[i * n + j] = xi[j] - lse;
    }
  }
  return t.record(m, n, std::move(y), {a}, [a, m, n](Tape& tp, std::uint32_t self) {
    const auto& gy = tp.grad(self);
    const auto& yv = tp.value(self);
    auto& gx = tp.grad(a.id);
    for (std::size_t i = 0; i < m; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        total += gy[i * n + j];
      }
      for (std::size_t j = 0; j < n; ++j) {
        gx[i * n + j] += gy[i * n + j] - std::exp(yv[i * n + j]) * total;
      }
    }
  });
}

Var entropy_from_log_probs(Var log_probs) {
  Tape& t = tape_of(log_probs);
  const std::size_t m = t.rows(log_probs), n = t.cols(log_probs);
  const auto& lp = t.value(log_probs);
  std::vector<double> h(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double p = std::exp(lp[i * n + j]);
      if (p > 0.0) {
        acc -= p * lp[i * n + j];
      }
    }
    h[i] = acc;
  }
  return t.record(m, 1, std::move(h), {log_probs}, [log_probs, m, n](Tape& tp, std::uint32_t self) {
    const auto& gh = tp.grad(self);
    const auto& lpv = tp.value(log_probs.id);
    auto& gl = tp.grad(log_probs.id);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double l = lpv[i * n + j];
        const double p = std::exp(l);
        if (p > 0.0) {
          gl[i * n + j] -= gh[i] * p * (l + 1.0);
        }
      }
    }
  });
}

Var pick(Var a, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  Tape& t = tape_of(a);
  require(rows.size() == cols.size(), "pick index lists differ in length");
  const std::size_t m = t.rows(a), n = t.cols(a);
  const auto& av = t.value(a);
  std::vector<std::size_t> flat(rows.size());
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < m && cols[i] < n, "pick index out of range");
    flat[i] = rows[i] * n + cols[i];
    out[i] = av[flat[i]];
  }
  const std::size_t count = out.size();
  return t.record(count, 1, std::move(out), {a}, [a, flat = std::move(flat)](Tape& tp, std::uint32_t self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(a.id);
    for (std::size_t i = 0; i < flat.size(); ++i) {
      ga[flat[i]] += g[i];
    }
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : t.value(a)) {
    s += v;
  }
  return t.record(1, 1, {s}, {a}, [a](Tape& tp, std::uint32_t self) {
    const double g = tp.grad(self)[0];
    for (double& ga : tp.grad(a.id)) {
      ga += g;
    }
  });
}

Var mean_at(Var a, std::span<const std::size_t> indices) {
  Tape& t = tape_of(a);
  require(!indices.empty(), "mean_at over an empty index set");
  const auto& av = t.value(a);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  double s = 0.0;
  for (std::size_t i : idx) {
    require(i < av.size(), "mean_at index out of range");
    s += av[i];
  }
  const double inv = 1.0 / static_cast<double>(idx.size());
  return t.record(1, 1, {s * inv}, {a}, [a, idx = std::move(idx), inv](Tape& tp, std::uint32_t self) {
    const double g = tp.grad(self)[0] * inv;
    auto& ga = tp.grad(a.id);
    for (std::size_t i : idx) {
      ga[i] += g;
    }
  });
}

}  // namespace aepo::ad
