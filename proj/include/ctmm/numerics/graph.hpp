#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctmm/numerics/tensor.hpp"

namespace ctmm::num {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named trainable leaves. Iteration order is the lexicographic name order,
/// which fixes the layout of checkpoints and flattened gradient vectors.
class ParameterStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::map<std::string, Tensor>& all_mut() { return params_; }
  std::vector<std::string> names() const;
  std::size_t scalar_count() const;
  bool bit_equal(const ParameterStore& o) const;

 private:
  std::map<std::string, Tensor> params_;
};

using Gradients = std::map<std::string, Tensor>;

class Graph;

/// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const;
};

/// Define-by-run reverse-mode tape. Every operation evaluates its forward
/// value immediately and caches it; nodes are appended in topological order,
/// so backward walks ids in reverse and touches each reachable node once.
class Graph {
 public:
  explicit Graph(const ParameterStore* params = nullptr) : params_(params) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t, std::string label = "const");
  Var param(const std::string& name);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::size_t node_count() const { return nodes_.size(); }
  const ParameterStore* params() const { return params_; }

  /// Gradients of a scalar node w.r.t. every parameter in the store.
  /// Parameters not reached by the loss get exact zeros.
  Gradients backward(Var loss);

  // Internal API used by the operation implementations.
  using BackwardFn = std::function<void(Graph&, std::size_t)>;
  Var record(std::string op, std::vector<std::size_t> inputs, Tensor value, BackwardFn back);
  Tensor& grad_of(std::size_t id);
  const Tensor& grad_of_const(std::size_t id) const { return nodes_[id].grad; }
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::string node_path(std::size_t id) const;

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    BackwardFn back;
    std::string param_name;
    bool needs_grad = false;
  };

  const ParameterStore* params_ = nullptr;
  std::vector<Node> nodes_;
};

// ---- operations -----------------------------------------------------------
// All operations take rank-2 operands and throw ShapeError naming the op on a
// mismatch; forward values that are not finite throw NonFiniteError.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a[m,n] + b[1,n] broadcast over rows.
Var add_row(Var a, Var b);
/// a[m,n] * b[1,n] broadcast over rows.
Var mul_row(Var a, Var b);
/// a[m,n] * c[m,1] broadcast over columns.
Var mul_col(Var a, Var c);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
/// a^T * b
Var matmul_tn(Var a, Var b);
Var transpose(Var a);

Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
/// tanh approximation of GELU.
Var gelu(Var a);
Var square(Var a);
Var sin(Var a);
Var cos(Var a);

Var sum(Var a);
Var mean(Var a);
/// [m,n] -> [m,1]
Var sum_cols(Var a);
/// [m,n] -> [1,n]
Var sum_rows(Var a);

/// Row-wise softmax restricted to positions where mask is nonzero. Masked
/// positions get exactly zero weight. A row without any visible position is
/// rejected. An empty mask means all positions are visible.
Var softmax_rows(Var logits, const std::vector<std::uint8_t>& mask = {});
Var log_softmax_rows(Var logits);

/// Per-row layer normalization with learned gain/bias rows.
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
/// Row-wise L2 normalization.
Var l2_normalize_rows(Var x, double eps = 1e-12);

Var gather_rows(Var a, const std::vector<std::size_t>& idx);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);

/// x holds consecutive segments of `segment` rows. Returns, per segment, the
/// mean of rows where mask is nonzero: [N*S, C] -> [N, C]. A segment with no
/// valid row is rejected.
Var masked_mean_segments(Var x, const std::vector<std::uint8_t>& mask, std::size_t segment);

/// Per segment and channel, normalize valid rows to zero mean / unit variance
/// (statistics over valid rows only); invalid rows come out as exact zeros.
Var masked_channel_norm(Var x, const std::vector<std::uint8_t>& mask, std::size_t segment,
                        double eps = 1e-5);

/// Temporal convolution within segments. x: [N*S, Cin]; w: [K*Cin, Cout] with
/// row (k*Cin + c); centered taps with zero padding at segment edges.
Var conv1d_segments(Var x, Var w, std::size_t segment, std::size_t kernel);

/// sum(mask * (pred - target)^2). mask may be empty (all ones).
Var sq_error_sum(Var pred, const Tensor& target, const Tensor& mask = {});

/// Mean cross-entropy of row logits against integer targets.
Var cross_entropy(Var logits, const std::vector<std::size_t>& targets);

/// log( sum_r softplus(beta_raw_r) * exp(-softplus(gamma_raw_r) * dt / time_scale) )
/// elementwise over dt. Entries with mask zero are skipped and set to 0.
Var kernel_log_bias(Var beta_raw, Var gamma_raw, const Tensor& dt, double time_scale,
                    const std::vector<std::uint8_t>& mask = {});

// Plain helpers shared by implementation and tests.
double softplus_scalar(double x);
double softplus_inverse(double y);
double sigmoid_scalar(double x);
double gelu_scalar(double x);

}  // namespace ctmm::num
