#pragma once

#include <functional>
#include <vector>

#include "neurodyn/tensor.hpp"

namespace neurodyn {

enum class Op {
  leaf,
  add,
  sub,
  mul,
  scalar_mul,
  matmul,
  conv1d,
  transpose,
  relu,
  sigmoid,
  exp_,
  log_,
  softmax,
  layer_norm,
  mean,
  sum,
  l2_normalize,
  slice,
  concat,
  square,
  sqrt_,
  abs_,
  max_,
};

struct OpAttrs {
  int axis = -1;            // reductions: -1 means all elements
  double scalar = 0.0;      // scalar_mul
  int pad = 0;              // conv1d
  int64_t start = 0;        // slice
  int64_t stop = 0;         // slice
  double eps = 1e-5;        // layer_norm
};

class Tape;

// Handle to one tape node.
struct Val {
  Tape* tape = nullptr;
  int id = -1;
  const Tensor& value() const;
};

// Append-only forward graph.  Node values are retained, so backward can
// recompute whatever local state it needs without separate saved buffers.
class Tape {
 public:
  Val leaf(Tensor t);
  Val leaf(double scalar) { return leaf(Tensor::scalar(scalar)); }
  Val apply(Op op, const std::vector<int>& inputs, const OpAttrs& attrs = {});

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  Op op(int id) const { return nodes_[static_cast<size_t>(id)].op; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Count of zero-length slices encountered by l2_normalize.
  int l2_zero_flags() const { return l2_zero_flags_; }

  // Gradients of a scalar root w.r.t. every node; leaves never reached get
  // zero tensors of their shape.
  std::vector<Tensor> backward(const Val& root) const;

  // Recompute every non-leaf value from the leaves (determinism check).
  std::vector<Tensor> replay() const;

 private:
  struct Node {
    Op op;
    std::vector<int> inputs;
    OpAttrs attrs;
    Tensor value;
  };

  Tensor eval(Op op, const std::vector<int>& inputs, const OpAttrs& attrs);

  std::vector<Node> nodes_;
  int l2_zero_flags_ = 0;
};

// Graph builders.
Val add(Val a, Val b);
Val sub(Val a, Val b);
Val mul(Val a, Val b);
Val scalar_mul(Val a, double c);
Val matmul(Val a, Val b);
Val conv1d(Val x, Val w, int pad);
Val transpose(Val a);
Val relu(Val a);
Val sigmoid(Val a);
Val exp(Val a);
Val log(Val a);
Val softmax(Val a, int axis);
Val layer_norm(Val a, int axis, double eps = 1e-5);
Val mean(Val a, int axis = -1);
Val sum(Val a, int axis = -1);
Val l2_normalize(Val a, int axis);
Val slice(Val a, int axis, int64_t start, int64_t stop);
Val concat(const std::vector<Val>& parts, int axis);
Val square(Val a);
Val sqrt(Val a);
Val abs(Val a);
Val max(Val a, Val b);

inline Val operator+(Val a, Val b) { return add(a, b); }
inline Val operator-(Val a, Val b) { return sub(a, b); }
inline Val operator*(Val a, Val b) { return mul(a, b); }
inline Val operator*(double c, Val a) { return scalar_mul(a, c); }

// Builds a scalar root from leaves made of `inputs`.
using ScalarFn = std::function<Val(Tape&, const std::vector<Val>&)>;

// Max over all coordinates of |analytic - central_fd| / max(1, |central_fd|).
double grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double step = 1e-5);

}  // namespace neurodyn
