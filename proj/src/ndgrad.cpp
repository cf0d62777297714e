#include "mapo/ndgrad.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace mapo::ndgrad {

namespace {

thread_local Tape* g_active_tape = nullptr;

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " holds " +
                                std::to_string(shape_numel(shape)) +
                                " elements, got " + std::to_string(values.size()));
  for (int d : shape)
    if (d <= 0) throw std::invalid_argument("tensor: non-positive extent in " + shape_str(shape));
  if (shape.size() > 2)
    throw std::invalid_argument("tensor: rank > 2 unsupported: " + shape_str(shape));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(Shape s) {
  std::vector<double> v(static_cast<size_t>(shape_numel(s)), 0.0);
  return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::from_vector(std::vector<double> v) {
  Shape s{static_cast<int>(v.size())};
  return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

double Tensor::item() const {
  if (values.size() != 1)
    throw std::invalid_argument("item(): tensor " + shape_str(shape) + " is not scalar");
  return values[0];
}

int Tensor::rows() const { return rank() == 2 ? shape[0] : 1; }
int Tensor::cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 1); }

bool Tensor::all_finite() const {
  for (double v : values)
    if (!finite(v)) return false;
  return true;
}

const Tensor& GradientMap::at(int node_id) const {
  auto it = grads_.find(node_id);
  if (it == grads_.end())
    throw std::out_of_range("gradient map: node " + std::to_string(node_id) +
                            " is not a trainable leaf of this tape");
  return it->second;
}

// --- tape ---------------------------------------------------------------

Tape::Tape() {
  if (g_active_tape)
    throw std::logic_error("a tape is already active on this thread");
  g_active_tape = this;
}

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

Tape* Tape::active() noexcept { return g_active_tape; }

TapePause::TapePause() : saved_(g_active_tape) { g_active_tape = nullptr; }

TapePause::~TapePause() { g_active_tape = saved_; }

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::watch(const Tensor& t) {
  if (consumed_) throw std::logic_error("watch: tape already consumed by backward");
  Node n;
  n.op = Op::leaf;
  n.out_shape = t.shape;
  Tensor tracked = t;
  tracked.node = push(std::move(n));
  trainable_.push_back(tracked.node);
  return tracked;
}

namespace {

void ensure(std::vector<double>& dst, size_t n) {
  if (dst.empty()) dst.assign(n, 0.0);
}

}  // namespace

GradientMap Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward: tape already consumed");
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape));
  if (loss.node < 0)
    throw std::invalid_argument("backward: loss was not computed under this tape");
  consumed_ = true;

  std::vector<std::vector<double>> bar(nodes_.size());
  bar[static_cast<size_t>(loss.node)] = {1.0};

  for (int i = loss.node; i >= 0; --i) {
    auto& g = bar[static_cast<size_t>(i)];
    if (g.empty()) continue;
    const Node& n = nodes_[static_cast<size_t>(i)];
    const size_t an = n.a_shape.empty() ? 0 : static_cast<size_t>(shape_numel(n.a_shape));
    const size_t bn = !n.b_shape.empty() ? static_cast<size_t>(shape_numel(n.b_shape)) : 0;
    const size_t on = static_cast<size_t>(shape_numel(n.out_shape));
    auto* ga = n.a >= 0 ? &bar[static_cast<size_t>(n.a)] : nullptr;
    auto* gb = n.b >= 0 ? &bar[static_cast<size_t>(n.b)] : nullptr;
    const bool a_bc = an == 1 && on > 1;  // scalar operand broadcast over out
    const bool b_bc = bn == 1 && on > 1;

    switch (n.op) {
      case Op::leaf:
        break;
      case Op::add:
        if (ga) {
          ensure(*ga, an);
          if (a_bc)
            for (size_t k = 0; k < on; ++k) (*ga)[0] += g[k];
          else
            for (size_t k = 0; k < on; ++k) (*ga)[k] += g[k];
        }
        if (gb) {
          ensure(*gb, bn);
          if (b_bc)
            for (size_t k = 0; k < on; ++k) (*gb)[0] += g[k];
          else
            for (size_t k = 0; k < on; ++k) (*gb)[k] += g[k];
        }
        break;
      case Op::sub:
        if (ga) {
          ensure(*ga, an);
          if (a_bc)
            for (size_t k = 0; k < on; ++k) (*ga)[0] += g[k];
          else
            for (size_t k = 0; k < on; ++k) (*ga)[k] += g[k];
        }
        if (gb) {
          ensure(*gb, bn);
          if (b_bc)
            for (size_t k = 0; k < on; ++k) (*gb)[0] -= g[k];
          else
            for (size_t k = 0; k < on; ++k) (*gb)[k] -= g[k];
        }
        break;
      case Op::mul:
        if (ga) {
          ensure(*ga, an);
          for (size_t k = 0; k < on; ++k) {
            const double bv = n.b_vals[b_bc ? 0 : k];
            (*ga)[a_bc ? 0 : k] += g[k] * bv;
          }
        }
        if (gb) {
          ensure(*gb, bn);
          for (size_t k = 0; k < on; ++k) {
            const double av = n.a_vals[a_bc ? 0 : k];
            (*gb)[b_bc ? 0 : k] += g[k] * av;
          }
        }
        break;
      case Op::scalar_mul:
        if (ga) {
          ensure(*ga, an);
          for (size_t k = 0; k < on; ++k) (*ga)[k] += n.c * g[k];
        }
        break;
      case Op::matmul: {
        // a: [m,k] (rank-1 treated as m=1), b: [k,p], out/g: [m,p]
        const int m = n.a_shape.size() == 2 ? n.a_shape[0] : 1;
        const int k = n.a_shape.size() == 2 ? n.a_shape[1] : n.a_shape[0];
        const int p = n.b_shape[1];
        if (ga) {
          ensure(*ga, an);
          for (int i2 = 0; i2 < m; ++i2)
            for (int q = 0; q < k; ++q) {
              double acc = 0;
              for (int j = 0; j < p; ++j)
                acc += g[static_cast<size_t>(i2 * p + j)] *
                       n.b_vals[static_cast<size_t>(q * p + j)];
              (*ga)[static_cast<size_t>(i2 * k + q)] += acc;
            }
        }
        if (gb) {
          ensure(*gb, bn);
          for (int q = 0; q < k; ++q)
            for (int j = 0; j < p; ++j) {
              double acc = 0;
              for (int i2 = 0; i2 < m; ++i2)
                acc += n.a_vals[static_cast<size_t>(i2 * k + q)] *
                       g[static_cast<size_t>(i2 * p + j)];
              (*gb)[static_cast<size_t>(q * p + j)] += acc;
            }
        }
        break;
      }
      case Op::sum:
        if (ga) {
          ensure(*ga, an);
          for (size_t k = 0; k < an; ++k) (*ga)[k] += g[0];
        }
        break;
      case Op::mean:
        if (ga) {
          ensure(*ga, an);
          const double w = g[0] / static_cast<double>(an);
          for (size_t k = 0; k < an; ++k) (*ga)[k] += w;
        }
        break;
      case Op::square:
        if (ga) {
          ensure(*ga, an);
          for (size_t k = 0; k < on; ++k) (*ga)[k] += 2.0 * n.a_vals[k] * g[k];
        }
        break;
      case Op::exp:
        if (ga) {
          ensure(*ga, an);
          for (size_t k = 0; k < on; ++k) (*ga)[k] += n.out_vals[k] * g[k];
        }
        break;
      case Op::log:
        if (ga) {
          ensure(*ga, an);
          for (size_t k = 0; k < on; ++k) (*ga)[k] += g[k] / n.a_vals[k];
        }
        break;
      case Op::expm1:
        if (ga) {
          ensure(*ga, an);
          for (size_t k = 0; k < on; ++k) (*ga)[k] += (n.out_vals[k] + 1.0) * g[k];
        }
        break;
      case Op::sigmoid:
        if (ga) {
          ensure(*ga, an);
          for (size_t k = 0; k < on; ++k) {
            const double s = n.out_vals[k];
            (*ga)[k] += s * (1.0 - s) * g[k];
          }
        }
        break;
      case Op::softplus:
        if (ga) {
          ensure(*ga, an);
          for (size_t k = 0; k < on; ++k) (*ga)[k] += sigmoid_scalar(n.a_vals[k]) * g[k];
        }
        break;
      case Op::pow_const:
        if (ga) {
          ensure(*ga, an);
          for (size_t k = 0; k < on; ++k)
            (*ga)[k] += n.c * std::pow(n.a_vals[k], n.c - 1.0) * g[k];
        }
        break;
      case Op::concat: {
        const size_t axis = static_cast<size_t>(n.aux);
        if (axis == 0 || n.out_shape.size() == 1) {
          if (ga) {
            ensure(*ga, an);
            for (size_t k = 0; k < an; ++k) (*ga)[k] += g[k];
          }
          if (gb) {
            ensure(*gb, bn);
            for (size_t k = 0; k < bn; ++k) (*gb)[k] += g[an + k];
          }
        } else {
          // axis 1, rank-2: rows interleave
          const int rows = n.out_shape[0];
          const int ca = n.a_shape[1];
          const int cb = n.b_shape[1];
          for (int r = 0; r < rows; ++r) {
            if (ga) {
              ensure(*ga, an);
              for (int j = 0; j < ca; ++j)
                (*ga)[static_cast<size_t>(r * ca + j)] +=
                    g[static_cast<size_t>(r * (ca + cb) + j)];
            }
            if (gb) {
              ensure(*gb, bn);
              for (int j = 0; j < cb; ++j)
                (*gb)[static_cast<size_t>(r * cb + j)] +=
                    g[static_cast<size_t>(r * (ca + cb) + ca + j)];
            }
          }
        }
        break;
      }
      case Op::slice: {
        if (ga) {
          ensure(*ga, an);
          const int begin = static_cast<int>(n.c);
          const int row_sz = n.a_shape.size() == 2 ? n.a_shape[1] : 1;
          const size_t off = static_cast<size_t>(begin * row_sz);
          for (size_t k = 0; k < on; ++k) (*ga)[off + k] += g[k];
        }
        break;
      }
    }
    // Interior bars are dead once propagated; leaves hold the results.
    if (n.op != Op::leaf) {
      g.clear();
      g.shrink_to_fit();
    }
  }

  GradientMap out;
  for (int id : trainable_) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    auto& g = bar[static_cast<size_t>(id)];
    Tensor t;
    if (g.empty()) {
      t = Tensor::zeros(n.out_shape);
    } else {
      t = Tensor(n.out_shape, std::move(g));
    }
    out.insert(id, std::move(t));
  }
  return out;
}

// --- recording helpers ----------------------------------------------------

Tensor record_unary(Op op, const Tensor& a, Tensor result, bool save_input,
                    bool save_output, double c) {
  Tape* tape = Tape::active();
  if (!tape) return result;
  if (tape->consumed_) throw std::logic_error("primitive applied to a consumed tape");
  Tape::Node n;
  n.op = op;
  n.a = a.node;
  n.c = c;
  n.a_shape = a.shape;
  n.out_shape = result.shape;
  if (save_input) n.a_vals = a.values;
  if (save_output) n.out_vals = result.values;
  result.node = tape->push(std::move(n));
  return result;
}

Tensor record_binary(Op op, const Tensor& a, const Tensor& b, Tensor result, double c) {
  Tape* tape = Tape::active();
  if (!tape) return result;
  if (tape->consumed_) throw std::logic_error("primitive applied to a consumed tape");
  Tape::Node n;
  n.op = op;
  n.a = a.node;
  n.b = b.node;
  n.c = c;
  n.a_shape = a.shape;
  n.b_shape = b.shape;
  n.out_shape = result.shape;
  if (op == Op::mul || op == Op::matmul) {
    n.a_vals = a.values;
    n.b_vals = b.values;
  }
  result.node = tape->push(std::move(n));
  return result;
}

Tensor record_concat(const Tensor& a, const Tensor& b, int axis, Tensor result) {
  Tape* tape = Tape::active();
  if (!tape) return result;
  if (tape->consumed_) throw std::logic_error("primitive applied to a consumed tape");
  Tape::Node n;
  n.op = Op::concat;
  n.a = a.node;
  n.b = b.node;
  n.aux = axis;
  n.a_shape = a.shape;
  n.b_shape = b.shape;
  n.out_shape = result.shape;
  result.node = tape->push(std::move(n));
  return result;
}

Tensor record_slice(const Tensor& a, int begin, int len, Tensor result) {
  Tape* tape = Tape::active();
  if (!tape) return result;
  if (tape->consumed_) throw std::logic_error("primitive applied to a consumed tape");
  Tape::Node n;
  n.op = Op::slice;
  n.a = a.node;
  n.c = begin;
  n.aux = len;
  n.a_shape = a.shape;
  n.out_shape = result.shape;
  result.node = tape->push(std::move(n));
  return result;
}

// --- primitives -------------------------------------------------------

namespace {

enum class Ew { add, sub, mul };

Tensor elementwise(Ew kind, const Tensor& a, const Tensor& b) {
  const char* name = kind == Ew::add ? "add" : kind == Ew::sub ? "sub" : "mul";
  const bool as = a.is_scalar();
  const bool bs = b.is_scalar();
  if (!as && !bs) check_same_shape(name, a, b);
  const Tensor& big = (!as || bs) ? a : b;  // result takes non-scalar shape; a wins ties
  Tensor out = Tensor::zeros(big.shape);
  const size_t n = out.values.size();
  for (size_t i = 0; i < n; ++i) {
    const double x = a.values[as ? 0 : i];
    const double y = b.values[bs ? 0 : i];
    out.values[i] = kind == Ew::add ? x + y : kind == Ew::sub ? x - y : x * y;
  }
  const Op op = kind == Ew::add ? Op::add : kind == Ew::sub ? Op::sub : Op::mul;
  return record_binary(op, a, b, std::move(out), 0.0);
}

Tensor map_unary(Op op, const Tensor& a, double (*f)(double), bool save_input,
                 bool save_output) {
  Tensor out = a;
  out.node = -1;
  for (auto& v : out.values) v = f(v);
  return record_unary(op, a, std::move(out), save_input, save_output, 0.0);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Ew::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Ew::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Ew::mul, a, b); }

Tensor scalar_mul(const Tensor& a, double c) {
  Tensor out = a;
  out.node = -1;
  for (auto& v : out.values) v *= c;
  return record_unary(Op::scalar_mul, a, std::move(out), false, false, c);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2)
    throw std::invalid_argument("matmul: right operand must be rank-2, got " +
                                shape_str(b.shape));
  if (a.rank() != 1 && a.rank() != 2)
    throw std::invalid_argument("matmul: left operand must be rank-1 or rank-2, got " +
                                shape_str(a.shape));
  const int m = a.rank() == 2 ? a.shape[0] : 1;
  const int k = a.rank() == 2 ? a.shape[1] : a.shape[0];
  if (k != b.shape[0])
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
  const int p = b.shape[1];
  Shape out_shape = a.rank() == 2 ? Shape{m, p} : Shape{p};
  Tensor out = Tensor::zeros(std::move(out_shape));
  for (int i = 0; i < m; ++i)
    for (int q = 0; q < k; ++q) {
      const double av = a.values[static_cast<size_t>(i * k + q)];
      const double* brow = &b.values[static_cast<size_t>(q * p)];
      double* orow = &out.values[static_cast<size_t>(i * p)];
      for (int j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  return record_binary(Op::matmul, a, b, std::move(out), 0.0);
}

Tensor sum(const Tensor& a) {
  double acc = 0;
  for (double v : a.values) acc += v;
  return record_unary(Op::sum, a, Tensor::scalar(acc), false, false, 0.0);
}

Tensor mean(const Tensor& a) {
  double acc = 0;
  for (double v : a.values) acc += v;
  return record_unary(Op::mean, a, Tensor::scalar(acc / static_cast<double>(a.numel())),
                      false, false, 0.0);
}

Tensor square(const Tensor& a) {
  Tensor out = a;
  out.node = -1;
  for (auto& v : out.values) v *= v;
  return record_unary(Op::square, a, std::move(out), true, false, 0.0);
}

Tensor exp(const Tensor& a) {
  for (double v : a.values)
    if (v > 709.7)
      throw std::domain_error("exp: argument " + std::to_string(v) + " would overflow");
  return map_unary(Op::exp, a, [](double v) { return std::exp(v); }, false, true);
}

Tensor log(const Tensor& a) {
  for (double v : a.values)
    if (v <= 0.0)
      throw std::domain_error("log: non-positive element " + std::to_string(v));
  return map_unary(Op::log, a, [](double v) { return std::log(v); }, true, false);
}

Tensor expm1(const Tensor& a) {
  for (double v : a.values)
    if (v > 709.7)
      throw std::domain_error("expm1: argument " + std::to_string(v) + " would overflow");
  return map_unary(Op::expm1, a, [](double v) { return std::expm1(v); }, false, true);
}

Tensor sigmoid(const Tensor& a) {
  return map_unary(Op::sigmoid, a, &sigmoid_scalar, false, true);
}

Tensor softplus(const Tensor& a) {
  return map_unary(Op::softplus, a, &softplus_scalar, true, false);
}

Tensor pow_const(const Tensor& a, double c) {
  const bool integral = c == std::floor(c);
  for (double v : a.values) {
    if (!integral && v <= 0.0)
      throw std::domain_error("pow_const: base " + std::to_string(v) +
                              " out of domain for exponent " + std::to_string(c));
    if (integral && c < 0.0 && v == 0.0)
      throw std::domain_error("pow_const: zero base with negative exponent");
  }
  Tensor out = a;
  out.node = -1;
  for (auto& v : out.values) v = std::pow(v, c);
  return record_unary(Op::pow_const, a, std::move(out), true, false, c);
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.rank() != b.rank())
    throw std::invalid_argument("concat: rank mismatch " + shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
  Tensor out;
  if (a.rank() == 1) {
    if (axis != 0) throw std::invalid_argument("concat: rank-1 tensors use axis 0");
    std::vector<double> v = a.values;
    v.insert(v.end(), b.values.begin(), b.values.end());
    out = Tensor::from_vector(std::move(v));
  } else if (a.rank() == 2 && axis == 0) {
    if (a.shape[1] != b.shape[1])
      throw std::invalid_argument("concat axis 0: column mismatch " + shape_str(a.shape) +
                                  " vs " + shape_str(b.shape));
    std::vector<double> v = a.values;
    v.insert(v.end(), b.values.begin(), b.values.end());
    out = Tensor({a.shape[0] + b.shape[0], a.shape[1]}, std::move(v));
  } else if (a.rank() == 2 && axis == 1) {
    if (a.shape[0] != b.shape[0])
      throw std::invalid_argument("concat axis 1: row mismatch " + shape_str(a.shape) +
                                  " vs " + shape_str(b.shape));
    const int rows = a.shape[0], ca = a.shape[1], cb = b.shape[1];
    std::vector<double> v(static_cast<size_t>(rows * (ca + cb)));
    for (int r = 0; r < rows; ++r) {
      for (int j = 0; j < ca; ++j)
        v[static_cast<size_t>(r * (ca + cb) + j)] = a.values[static_cast<size_t>(r * ca + j)];
      for (int j = 0; j < cb; ++j)
        v[static_cast<size_t>(r * (ca + cb) + ca + j)] =
            b.values[static_cast<size_t>(r * cb + j)];
    }
    out = Tensor({rows, ca + cb}, std::move(v));
  } else {
    throw std::invalid_argument("concat: unsupported axis " + std::to_string(axis));
  }
  return record_concat(a, b, axis, std::move(out));
}

Tensor slice(const Tensor& a, int begin, int len) {
  const int n0 = a.rank() == 2 ? a.shape[0] : static_cast<int>(a.numel());
  if (begin < 0 || len <= 0 || begin + len > n0)
    throw std::invalid_argument("slice: range [" + std::to_string(begin) + "," +
                                std::to_string(begin + len) + ") out of bounds for " +
                                shape_str(a.shape));
  Tensor out;
  if (a.rank() == 2) {
    const int cols = a.shape[1];
    std::vector<double> v(a.values.begin() + static_cast<long>(begin) * cols,
                          a.values.begin() + static_cast<long>(begin + len) * cols);
    out = Tensor({len, cols}, std::move(v));
  } else {
    std::vector<double> v(a.values.begin() + begin, a.values.begin() + begin + len);
    out = Tensor::from_vector(std::move(v));
  }
  return record_slice(a, begin, len, std::move(out));
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// --- finite differences ---------------------------------------------------

double finite_difference_check(const LossFn& loss_fn, const std::vector<Tensor>& params,
                               double step) {
  if (step <= 0) throw std::invalid_argument("finite_difference_check: step must be > 0");
  if (Tape::active())
    throw std::logic_error("finite_difference_check: must be called without an active tape");

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    std::vector<Tensor> watched;
    watched.reserve(params.size());
    for (const auto& p : params) watched.push_back(tape.watch(p));
    Tensor loss = loss_fn(watched);
    if (loss.numel() != 1)
      throw std::invalid_argument("finite_difference_check: loss must be scalar");
    if (!finite(loss.item()))
      throw std::domain_error("finite_difference_check: non-finite loss at base point");
    if (loss.node < 0) {
      // Loss does not depend on the tape at all; gradients are identically 0.
      for (const auto& w : watched)
        analytic.push_back(std::vector<double>(w.values.size(), 0.0));
    } else {
      GradientMap gm = tape.backward(loss);
      for (const auto& w : watched) analytic.push_back(gm.at(w.node).values);
    }
  }

  double max_rel = 0.0;
  std::vector<Tensor> probe = params;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    for (size_t j = 0; j < params[pi].values.size(); ++j) {
      const double orig = params[pi].values[j];
      probe[pi].values[j] = orig + step;
      const double lp = loss_fn(probe).item();
      probe[pi].values[j] = orig - step;
      const double lm = loss_fn(probe).item();
      probe[pi].values[j] = orig;
      if (!finite(lp) || !finite(lm))
        throw std::domain_error("finite_difference_check: non-finite loss probing parameter " +
                                std::to_string(pi) + "[" + std::to_string(j) + "]");
      const double central = (lp - lm) / (2.0 * step);
      const double a = analytic[pi][j];
      const double denom = std::max({std::abs(a), std::abs(central), 1e-12});
      max_rel = std::max(max_rel, std::abs(a - central) / denom);
    }
  }
  return max_rel;
}

}  // namespace mapo::ndgrad
