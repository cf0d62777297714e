#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace mapo::ndgrad {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

/// Dense f64 array, rank 0..2. When built under an active Tape, `node`
/// indexes the tape record that produced it; -1 means untracked.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  int node = -1;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v);

  static Tensor scalar(double v);
  static Tensor zeros(Shape s);
  static Tensor from_vector(std::vector<double> v);           // rank-1
  static Tensor matrix(int rows, int cols, std::vector<double> v);

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  bool is_scalar() const { return values.size() == 1; }
  /// Element of a one-element tensor.
  double item() const;
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const;
  int cols() const;
  bool all_finite() const;
};

/// Gradients of one backward pass, keyed by trainable-leaf node id.
class GradientMap {
 public:
  const Tensor& at(int node_id) const;
  bool contains(int node_id) const { return grads_.count(node_id) > 0; }
  size_t size() const { return grads_.size(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

  void insert(int node_id, Tensor grad) { grads_.emplace(node_id, std::move(grad)); }

 private:
  std::map<int, Tensor> grads_;
};

enum class Op : uint8_t {
  leaf,
  add,
  sub,
  mul,
  scalar_mul,
  matmul,
  sum,
  mean,
  square,
  exp,
  log,
  expm1,
  sigmoid,
  softplus,
  pow_const,
  concat,
  slice,
};

/// Reverse-mode tape. Constructing one activates it for the current thread;
/// every primitive applied while it is active appends a node. One backward
/// pass consumes it. Independent tapes on different threads do not interact.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `t` as a trainable leaf and returns the tracked copy.
  Tensor watch(const Tensor& t);

  /// Exact reverse-mode gradients of a scalar loss for all watched leaves.
  /// The tape is consumed; further use is an error.
  GradientMap backward(const Tensor& loss);

  static Tape* active() noexcept;

  size_t node_count() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  friend Tensor record_unary(Op, const Tensor&, Tensor, bool, bool, double);
  friend Tensor record_binary(Op, const Tensor&, const Tensor&, Tensor, double);
  friend Tensor record_concat(const Tensor&, const Tensor&, int, Tensor);
  friend Tensor record_slice(const Tensor&, int, int, Tensor);

  struct Node {
    Op op = Op::leaf;
    int a = -1;
    int b = -1;
    double c = 0.0;  // scalar_mul factor / pow exponent / concat axis / slice begin
    int aux = 0;     // slice length or concat axis
    Shape a_shape, b_shape, out_shape;
    std::vector<double> a_vals, b_vals, out_vals;  // saved per backward rule
  };

  int push(Node n);

  std::vector<Node> nodes_;
  std::vector<int> trainable_;
  bool consumed_ = false;
};

/// Temporarily deactivates the current thread's tape so that constant
/// sub-computations (e.g. a frozen reference model) are not recorded.
class TapePause {
 public:
  TapePause();
  ~TapePause();
  TapePause(const TapePause&) = delete;
  TapePause& operator=(const TapePause&) = delete;

 private:
  Tape* saved_;
};

// ---- primitives ------------------------------------------------------
// add/sub/mul support scalar<->tensor broadcasting only (one operand with a
// single element); any other shape mismatch is rejected with both shapes in
// the message.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double c);
/// [m,k]x[k,n] -> [m,n]; a rank-1 left operand [k] is treated as [1,k] -> [n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor square(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);     // domain: all elements > 0
Tensor expm1(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor pow_const(const Tensor& a, double c);  // domain: elements > 0 unless c is a non-negative integer
/// Concatenate along `axis` (rank-1: axis 0; rank-2: axis 0 or 1).
Tensor concat(const Tensor& a, const Tensor& b, int axis = 0);
/// Contiguous range [begin, begin+len) along axis 0 (rank-2: whole rows).
Tensor slice(const Tensor& a, int begin, int len);

// Scalar helpers shared by primitives and loss code.
double sigmoid_scalar(double x);
double softplus_scalar(double x);

/// Maps parameter tensors to a scalar loss. Must be deterministic in its
/// inputs (draw any randomness beforehand) and buildable both under a tape
/// and tape-free.
using LossFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Max over all parameter elements of
///   |analytic - central| / max(|analytic|, |central|, 1e-12).
/// Throws std::domain_error naming the parameter index if any probe
/// evaluation is non-finite.
double finite_difference_check(const LossFn& loss_fn,
                               const std::vector<Tensor>& params, double step);

}  // namespace mapo::ndgrad
