#include "ctmm/numerics/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace ctmm::num {

// ---- ParameterStore -------------------------------------------------------

void ParameterStore::add(const std::string& name, Tensor value) {
  if (params_.count(name)) throw std::invalid_argument("parameter '" + name + "' already exists");
  params_.emplace(name, std::move(value));
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParameterStore::get_mut(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [k, _] : params_) out.push_back(k);
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

bool ParameterStore::bit_equal(const ParameterStore& o) const {
  if (params_.size() != o.params_.size()) return false;
  for (auto a = params_.begin(), b = o.params_.begin(); a != params_.end(); ++a, ++b) {
    if (a->first != b->first || !a->second.bit_equal(b->second)) return false;
  }
  return true;
}

// ---- Var / Graph ------------------------------------------------------------

const Tensor& Var::value() const { return graph->value(*this); }

double Var::item() const {
  const Tensor& t = value();
  if (t.size() != 1) throw ShapeError("item: tensor " + shape_str(t.shape()) + " is not a scalar");
  return t[0];
}

Var Graph::constant(Tensor t, std::string label) {
  if (t.rank() == 1) t = Tensor({1, t.size()}, t.raw());
  return record(std::move(label), {}, std::move(t), nullptr);
}

Var Graph::param(const std::string& name) {
  if (!params_) throw std::logic_error("graph has no parameter store");
  const Tensor& src = params_->get(name);
  Tensor t = src.rank() == 1 ? Tensor({1, src.size()}, src.raw()) : src;
  Var v = record("param:" + name, {}, std::move(t), nullptr);
  nodes_[v.id].param_name = name;
  nodes_[v.id].needs_grad = true;
  return v;
}

Var Graph::record(std::string op, std::vector<std::size_t> inputs, Tensor value, BackwardFn back) {
  bool ng = false;
  for (std::size_t i : inputs) ng = ng || nodes_[i].needs_grad;
  Node n;
  n.op = std::move(op);
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.back = ng ? std::move(back) : nullptr;
  n.needs_grad = ng;
  nodes_.push_back(std::move(n));
  const std::size_t id = nodes_.size() - 1;
  if (!nodes_[id].value.all_finite()) {
    throw NonFiniteError("non-finite value produced at " + node_path(id));
  }
  return Var{this, id};
}

Tensor& Graph::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

std::string Graph::node_path(std::size_t id) const {
  std::string out = nodes_[id].op + "#" + std::to_string(id);
  if (!nodes_[id].inputs.empty()) {
    out += " <- (";
    for (std::size_t k = 0; k < nodes_[id].inputs.size(); ++k) {
      const std::size_t in = nodes_[id].inputs[k];
      if (k) out += ", ";
      out += nodes_[in].op + "#" + std::to_string(in);
    }
    out += ")";
  }
  return out;
}

Gradients Graph::backward(Var loss) {
  if (loss.graph != this) throw std::invalid_argument("backward: loss belongs to another graph");
  if (nodes_[loss.id].value.size() != 1) {
    throw ShapeError("backward: loss " + node_path(loss.id) + " is not scalar (shape " +
                     shape_str(nodes_[loss.id].value.shape()) + ")");
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_of(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.back || n.grad.empty()) continue;
    n.back(*this, i);
  }
  Gradients out;
  if (params_) {
    for (const auto& [name, t] : params_->all()) out.emplace(name, Tensor(t.shape(), 0.0));
  }
  for (const auto& n : nodes_) {
    if (n.param_name.empty() || n.grad.empty()) continue;
    Tensor& dst = out.at(n.param_name);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
  }
  return out;
}

// ---- helpers --------------------------------------------------------------

namespace {

Graph& graph_of(std::initializer_list<Var> vs, const char* op) {
  Graph* g = nullptr;
  for (const Var& v : vs) {
    if (!v.graph) throw std::invalid_argument(std::string(op) + ": unbound variable");
    if (g && g != v.graph) throw std::invalid_argument(std::string(op) + ": operands from different graphs");
    g = v.graph;
  }
  return *g;
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 operand, got " + shape_str(t.shape()));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Tensor* grad_slot(Graph& g, std::size_t id) { return g.needs_grad(id) ? &g.grad_of(id) : nullptr; }

template <class F, class D>
Var unary(Var a, const char* op, F f, D df) {
  Graph& g = graph_of({a}, op);
  const Tensor& A = a.value();
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = f(A[i]);
  const std::size_t ia = a.id;
  return g.record(op, {ia}, std::move(out), [ia, df](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    const Tensor& X = g.value_of(ia);
    const Tensor& Y = g.value_of(self);
    Tensor& GA = g.grad_of(ia);
    for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i] * df(X[i], Y[i]);
  });
}

}  // namespace

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw std::domain_error("softplus_inverse: argument must be positive");
  return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

// ---- elementwise binary -----------------------------------------------------

Var add(Var a, Var b) {
  Graph& g = graph_of({a, b}, "add");
  const Tensor &A = a.value(), &B = b.value();
  require_same("add", A, B);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
  const std::size_t ia = a.id, ib = b.id;
  return g.record("add", {ia, ib}, std::move(out), [ia, ib](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    if (Tensor* GA = grad_slot(g, ia))
      for (std::size_t i = 0; i < G.size(); ++i) (*GA)[i] += G[i];
    if (Tensor* GB = grad_slot(g, ib))
      for (std::size_t i = 0; i < G.size(); ++i) (*GB)[i] += G[i];
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of({a, b}, "sub");
  const Tensor &A = a.value(), &B = b.value();
  require_same("sub", A, B);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] - B[i];
  const std::size_t ia = a.id, ib = b.id;
  return g.record("sub", {ia, ib}, std::move(out), [ia, ib](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    if (Tensor* GA = grad_slot(g, ia))
      for (std::size_t i = 0; i < G.size(); ++i) (*GA)[i] += G[i];
    if (Tensor* GB = grad_slot(g, ib))
      for (std::size_t i = 0; i < G.size(); ++i) (*GB)[i] -= G[i];
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of({a, b}, "mul");
  const Tensor &A = a.value(), &B = b.value();
  require_same("mul", A, B);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
  const std::size_t ia = a.id, ib = b.id;
  return g.record("mul", {ia, ib}, std::move(out), [ia, ib](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    const Tensor &A = g.value_of(ia), &B = g.value_of(ib);
    if (Tensor* GA = grad_slot(g, ia))
      for (std::size_t i = 0; i < G.size(); ++i) (*GA)[i] += G[i] * B[i];
    if (Tensor* GB = grad_slot(g, ib))
      for (std::size_t i = 0; i < G.size(); ++i) (*GB)[i] += G[i] * A[i];
  });
}

Var add_row(Var a, Var b) {
  Graph& g = graph_of({a, b}, "add_row");
  const Tensor &A = a.value(), &B = b.value();
  require_rank2("add_row", A);
  if (B.rows() != 1 || B.cols() != A.cols())
    throw ShapeError("add_row: bias " + shape_str(B.shape()) + " incompatible with " + shape_str(A.shape()));
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out(A.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] + B[j];
  const std::size_t ia = a.id, ib = b.id;
  return g.record("add_row", {ia, ib}, std::move(out), [ia, ib, m, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    if (Tensor* GA = grad_slot(g, ia))
      for (std::size_t i = 0; i < G.size(); ++i) (*GA)[i] += G[i];
    if (Tensor* GB = grad_slot(g, ib))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*GB)[j] += G[i * n + j];
  });
}

Var mul_row(Var a, Var b) {
  Graph& g = graph_of({a, b}, "mul_row");
  const Tensor &A = a.value(), &B = b.value();
  require_rank2("mul_row", A);
  if (B.rows() != 1 || B.cols() != A.cols())
    throw ShapeError("mul_row: row " + shape_str(B.shape()) + " incompatible with " + shape_str(A.shape()));
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out(A.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] * B[j];
  const std::size_t ia = a.id, ib = b.id;
  return g.record("mul_row", {ia, ib}, std::move(out), [ia, ib, m, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    const Tensor &A = g.value_of(ia), &B = g.value_of(ib);
    if (Tensor* GA = grad_slot(g, ia))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*GA)[i * n + j] += G[i * n + j] * B[j];
    if (Tensor* GB = grad_slot(g, ib))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*GB)[j] += G[i * n + j] * A[i * n + j];
  });
}

Var mul_col(Var a, Var c) {
  Graph& g = graph_of({a, c}, "mul_col");
  const Tensor &A = a.value(), &C = c.value();
  require_rank2("mul_col", A);
  if (C.cols() != 1 || C.rows() != A.rows())
    throw ShapeError("mul_col: column " + shape_str(C.shape()) + " incompatible with " + shape_str(A.shape()));
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out(A.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] * C[i];
  const std::size_t ia = a.id, ic = c.id;
  return g.record("mul_col", {ia, ic}, std::move(out), [ia, ic, m, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    const Tensor &A = g.value_of(ia), &C = g.value_of(ic);
    if (Tensor* GA = grad_slot(g, ia))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*GA)[i * n + j] += G[i * n + j] * C[i];
    if (Tensor* GC = grad_slot(g, ic))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*GC)[i] += G[i * n + j] * A[i * n + j];
  });
}

Var scale(Var a, double s) {
  return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

// ---- linear algebra ---------------------------------------------------------

namespace {

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double a = A[i * k + l];
      const double* b = B + l * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* b = B + j * k;
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += a[l] * b[l];
      C[i * n + j] += s;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(const double* A, const double* B, double* C, std::size_t k, std::size_t m, std::size_t n) {
  for (std::size_t l = 0; l < k; ++l) {
    const double* b = B + l * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double a = A[l * m + i];
      double* c = C + i * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of({a, b}, "matmul");
  const Tensor &A = a.value(), &B = b.value();
  require_rank2("matmul", A);
  require_rank2("matmul", B);
  if (A.cols() != B.rows())
    throw ShapeError("matmul: inner dimensions differ " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out({m, n});
  gemm_nn(A.raw().data(), B.raw().data(), out.raw().data(), m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return g.record("matmul", {ia, ib}, std::move(out), [ia, ib, m, k, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    if (Tensor* GA = grad_slot(g, ia)) gemm_nt(G.raw().data(), g.value_of(ib).raw().data(), GA->raw().data(), m, n, k);
    if (Tensor* GB = grad_slot(g, ib)) gemm_tn(g.value_of(ia).raw().data(), G.raw().data(), GB->raw().data(), m, k, n);
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of({a, b}, "matmul_nt");
  const Tensor &A = a.value(), &B = b.value();
  require_rank2("matmul_nt", A);
  require_rank2("matmul_nt", B);
  if (A.cols() != B.cols())
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_str(A.shape()) + " x " + shape_str(B.shape()) + "^T");
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor out({m, n});
  gemm_nt(A.raw().data(), B.raw().data(), out.raw().data(), m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return g.record("matmul_nt", {ia, ib}, std::move(out), [ia, ib, m, k, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    // out = A B^T: dA = G B, dB = G^T A
    if (Tensor* GA = grad_slot(g, ia)) gemm_nn(G.raw().data(), g.value_of(ib).raw().data(), GA->raw().data(), m, n, k);
    if (Tensor* GB = grad_slot(g, ib)) gemm_tn(G.raw().data(), g.value_of(ia).raw().data(), GB->raw().data(), m, n, k);
  });
}

Var matmul_tn(Var a, Var b) {
  Graph& g = graph_of({a, b}, "matmul_tn");
  const Tensor &A = a.value(), &B = b.value();
  require_rank2("matmul_tn", A);
  require_rank2("matmul_tn", B);
  if (A.rows() != B.rows())
    throw ShapeError("matmul_tn: inner dimensions differ " + shape_str(A.shape()) + "^T x " + shape_str(B.shape()));
  const std::size_t k = A.rows(), m = A.cols(), n = B.cols();
  Tensor out({m, n});
  gemm_tn(A.raw().data(), B.raw().data(), out.raw().data(), k, m, n);
  const std::size_t ia = a.id, ib = b.id;
  return g.record("matmul_tn", {ia, ib}, std::move(out), [ia, ib, m, k, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    // out = A^T B: dA = B G^T, dB = A G
    if (Tensor* GA = grad_slot(g, ia)) gemm_nt(g.value_of(ib).raw().data(), G.raw().data(), GA->raw().data(), k, n, m);
    if (Tensor* GB = grad_slot(g, ib)) gemm_nn(g.value_of(ia).raw().data(), G.raw().data(), GB->raw().data(), k, m, n);
  });
}

Var transpose(Var a) {
  Graph& g = graph_of({a}, "transpose");
  const Tensor& A = a.value();
  require_rank2("transpose", A);
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  const std::size_t ia = a.id;
  return g.record("transpose", {ia}, std::move(out), [ia, m, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    Tensor& GA = g.grad_of(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) GA[i * n + j] += G[j * m + i];
  });
}

// ---- elementwise unary ------------------------------------------------------

Var exp(Var a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softplus(Var a) {
  return unary(a, "softplus", softplus_scalar, [](double x, double) { return sigmoid_scalar(x); });
}

Var sigmoid(Var a) {
  return unary(a, "sigmoid", sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var gelu(Var a) {
  return unary(a, "gelu", gelu_scalar, [](double x, double) {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    const double t = std::tanh(u);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  });
}

Var square(Var a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sin(Var a) {
  return unary(a, "sin", [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Var cos(Var a) {
  return unary(a, "cos", [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

// ---- reductions -------------------------------------------------------------

Var sum(Var a) {
  Graph& g = graph_of({a}, "sum");
  const Tensor& A = a.value();
  double s = 0.0;
  for (double v : A.values()) s += v;
  const std::size_t ia = a.id;
  return g.record("sum", {ia}, Tensor::scalar(s), [ia](Graph& g, std::size_t self) {
    const double G = g.grad_of_const(self)[0];
    Tensor& GA = g.grad_of(ia);
    for (std::size_t i = 0; i < GA.size(); ++i) GA[i] += G;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty operand");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_cols(Var a) {
  Graph& g = graph_of({a}, "sum_cols");
  const Tensor& A = a.value();
  require_rank2("sum_cols", A);
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += A[i * n + j];
    out[i] = s;
  }
  const std::size_t ia = a.id;
  return g.record("sum_cols", {ia}, std::move(out), [ia, m, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    Tensor& GA = g.grad_of(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) GA[i * n + j] += G[i];
  });
}

Var sum_rows(Var a) {
  Graph& g = graph_of({a}, "sum_rows");
  const Tensor& A = a.value();
  require_rank2("sum_rows", A);
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += A[i * n + j];
  const std::size_t ia = a.id;
  return g.record("sum_rows", {ia}, std::move(out), [ia, m, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    Tensor& GA = g.grad_of(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) GA[i * n + j] += G[j];
  });
}

// ---- softmax family ---------------------------------------------------------

Var softmax_rows(Var logits, const std::vector<std::uint8_t>& mask) {
  Graph& g = graph_of({logits}, "softmax_rows");
  const Tensor& X = logits.value();
  require_rank2("softmax_rows", X);
  const std::size_t m = X.rows(), n = X.cols();
  if (!mask.empty() && mask.size() != m * n)
    throw ShapeError("softmax_rows: mask size " + std::to_string(mask.size()) + " does not match " + shape_str(X.shape()));
  auto visible = [&](std::size_t k) { return mask.empty() || mask[k] != 0; };
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (visible(i * n + j)) mx = std::max(mx, X[i * n + j]);
    if (mx == -std::numeric_limits<double>::infinity())
      throw std::invalid_argument("softmax_rows: row " + std::to_string(i) + " has no visible position");
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!visible(i * n + j)) continue;
      const double e = std::exp(X[i * n + j] - mx);
      out[i * n + j] = e;
      s += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= s;
  }
  const std::size_t ix = logits.id;
  return g.record("softmax_rows", {ix}, std::move(out), [ix, m, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    const Tensor& Y = g.value_of(self);
    Tensor& GX = g.grad_of(ix);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += G[i * n + j] * Y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) GX[i * n + j] += Y[i * n + j] * (G[i * n + j] - dot);
    }
  });
}

Var log_softmax_rows(Var logits) {
  Graph& g = graph_of({logits}, "log_softmax_rows");
  const Tensor& X = logits.value();
  require_rank2("log_softmax_rows", X);
  const std::size_t m = X.rows(), n = X.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, X[i * n + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(X[i * n + j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = X[i * n + j] - lse;
  }
  const std::size_t ix = logits.id;
  return g.record("log_softmax_rows", {ix}, std::move(out), [ix, m, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    const Tensor& Y = g.value_of(self);
    Tensor& GX = g.grad_of(ix);
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += G[i * n + j];
      for (std::size_t j = 0; j < n; ++j) GX[i * n + j] += G[i * n + j] - std::exp(Y[i * n + j]) * gs;
    }
  });
}

Var cross_entropy(Var logits, const std::vector<std::size_t>& targets) {
  Graph& g = graph_of({logits}, "cross_entropy");
  const Tensor& X = logits.value();
  require_rank2("cross_entropy", X);
  const std::size_t m = X.rows(), n = X.cols();
  if (targets.size() != m)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(m) + " rows");
  if (m == 0) throw ShapeError("cross_entropy: no rows");
  Tensor probs({m, n});
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= n) throw ShapeError("cross_entropy: target " + std::to_string(targets[i]) + " out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, X[i * n + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      probs[i * n + j] = std::exp(X[i * n + j] - mx);
      s += probs[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] /= s;
    total += mx + std::log(s) - X[i * n + targets[i]];
  }
  const std::size_t ix = logits.id;
  return g.record("cross_entropy", {ix}, Tensor::scalar(total / static_cast<double>(m)),
                  [ix, m, n, targets, probs = std::move(probs)](Graph& g, std::size_t self) {
                    const double G = g.grad_of_const(self)[0] / static_cast<double>(m);
                    Tensor& GX = g.grad_of(ix);
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t j = 0; j < n; ++j) GX[i * n + j] += G * probs[i * n + j];
                      GX[i * n + targets[i]] -= G;
                    }
                  });
}

// ---- normalization ----------------------------------------------------------

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  Graph& g = graph_of({x, gain, bias}, "layer_norm_rows");
  const Tensor &X = x.value(), &Gn = gain.value(), &Bs = bias.value();
  require_rank2("layer_norm_rows", X);
  const std::size_t m = X.rows(), n = X.cols();
  if (Gn.size() != n || Bs.size() != n)
    throw ShapeError("layer_norm_rows: gain/bias width does not match " + shape_str(X.shape()));
  Tensor out({m, n});
  Tensor xhat({m, n});
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += X[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (X[i * n + j] - mu) * (X[i * n + j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (X[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * Gn[j] + Bs[j];
    }
  }
  const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  return g.record("layer_norm_rows", {ix, ig, ib}, std::move(out),
                  [ix, ig, ib, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
                    const Tensor& G = g.grad_of_const(self);
                    const Tensor& Gn = g.value_of(ig);
                    if (Tensor* GG = grad_slot(g, ig))
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) (*GG)[j] += G[i * n + j] * xhat[i * n + j];
                    if (Tensor* GB = grad_slot(g, ib))
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) (*GB)[j] += G[i * n + j];
                    if (Tensor* GX = grad_slot(g, ix)) {
                      for (std::size_t i = 0; i < m; ++i) {
                        double mg = 0.0, mgx = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                          const double gh = G[i * n + j] * Gn[j];
                          mg += gh;
                          mgx += gh * xhat[i * n + j];
                        }
                        mg /= static_cast<double>(n);
                        mgx /= static_cast<double>(n);
                        for (std::size_t j = 0; j < n; ++j) {
                          const double gh = G[i * n + j] * Gn[j];
                          (*GX)[i * n + j] += inv_std[i] * (gh - mg - xhat[i * n + j] * mgx);
                        }
                      }
                    }
                  });
}

Var l2_normalize_rows(Var x, double eps) {
  Graph& g = graph_of({x}, "l2_normalize_rows");
  const Tensor& X = x.value();
  require_rank2("l2_normalize_rows", X);
  const std::size_t m = X.rows(), n = X.cols();
  Tensor out({m, n});
  std::vector<double> norm(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += X[i * n + j] * X[i * n + j];
    norm[i] = std::sqrt(s + eps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = X[i * n + j] / norm[i];
  }
  const std::size_t ix = x.id;
  return g.record("l2_normalize_rows", {ix}, std::move(out), [ix, m, n, norm = std::move(norm)](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    const Tensor& X = g.value_of(ix);
    Tensor& GX = g.grad_of(ix);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += G[i * n + j] * X[i * n + j];
      const double n3 = norm[i] * norm[i] * norm[i];
      for (std::size_t j = 0; j < n; ++j) GX[i * n + j] += G[i * n + j] / norm[i] - X[i * n + j] * dot / n3;
    }
  });
}

// ---- indexing ---------------------------------------------------------------

Var gather_rows(Var a, const std::vector<std::size_t>& idx) {
  Graph& g = graph_of({a}, "gather_rows");
  const Tensor& A = a.value();
  require_rank2("gather_rows", A);
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({idx.size(), n});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m) throw ShapeError("gather_rows: index " + std::to_string(idx[i]) + " out of " + std::to_string(m) + " rows");
    std::copy_n(A.raw().data() + idx[i] * n, n, out.raw().data() + i * n);
  }
  const std::size_t ia = a.id;
  return g.record("gather_rows", {ia}, std::move(out), [ia, n, idx](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    Tensor& GA = g.grad_of(ia);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) GA[idx[i] * n + j] += G[i * n + j];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Graph& g = *parts.front().graph;
  const std::size_t n = parts.front().value().cols();
  std::size_t m = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.graph != &g) throw std::invalid_argument("concat_rows: operands from different graphs");
    if (p.value().cols() != n) throw ShapeError("concat_rows: column mismatch " + shape_str(p.value().shape()));
    m += p.value().rows();
    ids.push_back(p.id);
  }
  Tensor out({m, n});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().raw().begin(), p.value().raw().end(), out.raw().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.value().size();
  }
  return g.record("concat_rows", ids, std::move(out), [ids](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t sz = g.value_of(id).size();
      if (Tensor* GP = grad_slot(g, id))
        for (std::size_t k = 0; k < sz; ++k) (*GP)[k] += G[off + k];
      off += sz;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Graph& g = *parts.front().graph;
  const std::size_t m = parts.front().value().rows();
  std::size_t n = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    if (p.graph != &g) throw std::invalid_argument("concat_cols: operands from different graphs");
    if (p.value().rows() != m) throw ShapeError("concat_cols: row mismatch " + shape_str(p.value().shape()));
    n += p.value().cols();
    ids.push_back(p.id);
    widths.push_back(p.value().cols());
  }
  Tensor out({m, n});
  std::size_t c0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& P = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * n + c0 + j] = P[i * widths[k] + j];
    c0 += widths[k];
  }
  return g.record("concat_cols", ids, std::move(out), [ids, widths, m, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    std::size_t c0 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (Tensor* GP = grad_slot(g, ids[k]))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) (*GP)[i * widths[k] + j] += G[i * n + c0 + j];
      c0 += widths[k];
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Graph& g = graph_of({a}, "slice_rows");
  const Tensor& A = a.value();
  require_rank2("slice_rows", A);
  if (begin > end || end > A.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " + shape_str(A.shape()));
  const std::size_t n = A.cols();
  Tensor out({end - begin, n});
  std::copy(A.raw().begin() + static_cast<std::ptrdiff_t>(begin * n), A.raw().begin() + static_cast<std::ptrdiff_t>(end * n),
            out.raw().begin());
  const std::size_t ia = a.id;
  return g.record("slice_rows", {ia}, std::move(out), [ia, begin, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    Tensor& GA = g.grad_of(ia);
    for (std::size_t k = 0; k < G.size(); ++k) GA[begin * n + k] += G[k];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Graph& g = graph_of({a}, "slice_cols");
  const Tensor& A = a.value();
  require_rank2("slice_cols", A);
  if (begin > end || end > A.cols())
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " + shape_str(A.shape()));
  const std::size_t m = A.rows(), n = A.cols(), w = end - begin;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = A[i * n + begin + j];
  const std::size_t ia = a.id;
  return g.record("slice_cols", {ia}, std::move(out), [ia, begin, m, n, w](Graph& g, std::size_t self) {
    const Tensor& G = g.grad_of_const(self);
    Tensor& GA = g.grad_of(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) GA[i * n + begin + j] += G[i * w + j];
  });
}

// ---- segment ops (wearable windows) ---------------------------------------

namespace {
void check_segments(const char* op, const Tensor& X, const std::vector<std::uint8_t>& mask, std::size_t segment) {
  require_rank2(op, X);
  if (segment == 0 || X.rows() % segment != 0)
    throw ShapeError(std::string(op) + ": " + std::to_string(X.rows()) + " rows not divisible into segments of " +
                     std::to_string(segment));
  if (mask.size() != X.rows())
    throw ShapeError(std::string(op) + ": mask length " + std::to_string(mask.size()) + " vs " + std::to_string(X.rows()) + " rows");
}
}  // namespace

Var masked_mean_segments(Var x, const std::vector<std::uint8_t>& mask, std::size_t segment) {
  Graph& g = graph_of({x}, "masked_mean_segments");
  const Tensor& X = x.value();
  check_segments("masked_mean_segments", X, mask, segment);
  const std::size_t segs = X.rows() / segment, c = X.cols();
  Tensor out({segs, c});
  std::vector<double> count(segs, 0.0);
  for (std::size_t s = 0; s < segs; ++s) {
    for (std::size_t t = 0; t < segment; ++t) {
      const std::size_t r = s * segment + t;
      if (!mask[r]) continue;
      count[s] += 1.0;
      for (std::size_t j = 0; j < c; ++j) out[s * c + j] += X[r * c + j];
    }
    if (count[s] == 0.0) throw std::invalid_argument("masked_mean_segments: segment " + std::to_string(s) + " has no valid row");
    for (std::size_t j = 0; j < c; ++j) out[s * c + j] /= count[s];
  }
  const std::size_t ix = x.id;
  return g.record("masked_mean_segments", {ix}, std::move(out),
                  [ix, mask, segment, segs, c, count = std::move(count)](Graph& g, std::size_t self) {
                    const Tensor& G = g.grad_of_const(self);
                    Tensor& GX = g.grad_of(ix);
                    for (std::size_t s = 0; s < segs; ++s)
                      for (std::size_t t = 0; t < segment; ++t) {
                        const std::size_t r = s * segment + t;
                        if (!mask[r]) continue;
                        for (std::size_t j = 0; j < c; ++j) GX[r * c + j] += G[s * c + j] / count[s];
                      }
                  });
}

Var masked_channel_norm(Var x, const std::vector<std::uint8_t>& mask, std::size_t segment, double eps) {
  Graph& g = graph_of({x}, "masked_channel_norm");
  const Tensor& X = x.value();
  check_segments("masked_channel_norm", X, mask, segment);
  const std::size_t segs = X.rows() / segment, c = X.cols();
  Tensor out(X.shape());
  std::vector<double> inv_std(segs * c, 0.0);
  std::vector<double> count(segs, 0.0);
  for (std::size_t s = 0; s < segs; ++s) {
    for (std::size_t t = 0; t < segment; ++t) count[s] += mask[s * segment + t] ? 1.0 : 0.0;
    if (count[s] == 0.0) continue;
    for (std::size_t j = 0; j < c; ++j) {
      double mu = 0.0;
      for (std::size_t t = 0; t < segment; ++t) {
        const std::size_t r = s * segment + t;
        if (mask[r]) mu += X[r * c + j];
      }
      mu /= count[s];
      double var = 0.0;
      for (std::size_t t = 0; t < segment; ++t) {
        const std::size_t r = s * segment + t;
        if (mask[r]) var += (X[r * c + j] - mu) * (X[r * c + j] - mu);
      }
      var /= count[s];
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[s * c + j] = is;
      for (std::size_t t = 0; t < segment; ++t) {
        const std::size_t r = s * segment + t;
        if (mask[r]) out[r * c + j] = (X[r * c + j] - mu) * is;
      }
    }
  }
  const std::size_t ix = x.id;
  return g.record("masked_channel_norm", {ix}, std::move(out),
                  [ix, mask, segment, segs, c, inv_std = std::move(inv_std), count = std::move(count)](Graph& g, std::size_t self) {
                    const Tensor& G = g.grad_of_const(self);
                    const Tensor& Y = g.value_of(self);
                    Tensor& GX = g.grad_of(ix);
                    for (std::size_t s = 0; s < segs; ++s) {
                      if (count[s] == 0.0) continue;
                      for (std::size_t j = 0; j < c; ++j) {
                        double mg = 0.0, mgy = 0.0;
                        for (std::size_t t = 0; t < segment; ++t) {
                          const std::size_t r = s * segment + t;
                          if (!mask[r]) continue;
                          mg += G[r * c + j];
                          mgy += G[r * c + j] * Y[r * c + j];
                        }
                        mg /= count[s];
                        mgy /= count[s];
                        for (std::size_t t = 0; t < segment; ++t) {
                          const std::size_t r = s * segment + t;
                          if (!mask[r]) continue;
                          GX[r * c + j] += inv_std[s * c + j] * (G[r * c + j] - mg - Y[r * c + j] * mgy);
                        }
                      }
                    }
                  });
}

Var conv1d_segments(Var x, Var w, std::size_t segment, std::size_t kernel) {
  Graph& g = graph_of({x, w}, "conv1d_segments");
  const Tensor &X = x.value(), &W = w.value();
  require_rank2("conv1d_segments", X);
  require_rank2("conv1d_segments", W);
  const std::size_t cin = X.cols(), cout = W.cols();
  if (segment == 0 || X.rows() % segment != 0)
    throw ShapeError("conv1d_segments: " + std::to_string(X.rows()) + " rows not divisible into segments of " + std::to_string(segment));
  if (kernel == 0 || W.rows() != kernel * cin)
    throw ShapeError("conv1d_segments: weight " + shape_str(W.shape()) + " does not match kernel " + std::to_string(kernel) +
                     " x " + std::to_string(cin) + " input channels");
  const std::size_t segs = X.rows() / segment;
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kernel / 2);
  Tensor out({X.rows(), cout});
  for (std::size_t s = 0; s < segs; ++s)
    for (std::size_t t = 0; t < segment; ++t) {
      double* o = out.raw().data() + (s * segment + t) * cout;
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(segment)) continue;
        const double* xi = X.raw().data() + (s * segment + static_cast<std::size_t>(src)) * cin;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double* wr = W.raw().data() + (k * cin + ci) * cout;
          for (std::size_t co = 0; co < cout; ++co) o[co] += xi[ci] * wr[co];
        }
      }
    }
  const std::size_t ix = x.id, iw = w.id;
  return g.record("conv1d_segments", {ix, iw}, std::move(out),
                  [ix, iw, segs, segment, kernel, half, cin, cout](Graph& g, std::size_t self) {
                    const Tensor& G = g.grad_of_const(self);
                    const Tensor &X = g.value_of(ix), &W = g.value_of(iw);
                    Tensor* GX = grad_slot(g, ix);
                    Tensor* GW = grad_slot(g, iw);
                    for (std::size_t s = 0; s < segs; ++s)
                      for (std::size_t t = 0; t < segment; ++t) {
                        const double* go = G.raw().data() + (s * segment + t) * cout;
                        for (std::size_t k = 0; k < kernel; ++k) {
                          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - half;
                          if (src < 0 || src >= static_cast<std::ptrdiff_t>(segment)) continue;
                          const std::size_t r = s * segment + static_cast<std::size_t>(src);
                          for (std::size_t ci = 0; ci < cin; ++ci) {
                            const std::size_t wr = (k * cin + ci) * cout;
                            double acc = 0.0;
                            for (std::size_t co = 0; co < cout; ++co) {
                              acc += go[co] * W[wr + co];
                              if (GW) (*GW)[wr + co] += go[co] * X[r * cin + ci];
                            }
                            if (GX) (*GX)[r * cin + ci] += acc;
                          }
                        }
                      }
                  });
}

// ---- losses and kernel --------------------------------------------------------

Var sq_error_sum(Var pred, const Tensor& target, const Tensor& mask) {
  Graph& g = graph_of({pred}, "sq_error_sum");
  const Tensor& P = pred.value();
  if (P.size() != target.size())
    throw ShapeError("sq_error_sum: prediction " + shape_str(P.shape()) + " vs target " + shape_str(target.shape()));
  if (!mask.empty() && mask.size() != P.size())
    throw ShapeError("sq_error_sum: mask " + shape_str(mask.shape()) + " vs prediction " + shape_str(P.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double m = mask.empty() ? 1.0 : mask[i];
    if (m == 0.0) continue;
    const double d = P[i] - target[i];
    s += m * d * d;
  }
  const std::size_t ip = pred.id;
  return g.record("sq_error_sum", {ip}, Tensor::scalar(s), [ip, target, mask](Graph& g, std::size_t self) {
    const double G = g.grad_of_const(self)[0];
    const Tensor& P = g.value_of(ip);
    Tensor& GP = g.grad_of(ip);
    for (std::size_t i = 0; i < P.size(); ++i) {
      const double m = mask.empty() ? 1.0 : mask[i];
      if (m == 0.0) continue;
      GP[i] += G * 2.0 * m * (P[i] - target[i]);
    }
  });
}

Var kernel_log_bias(Var beta_raw, Var gamma_raw, const Tensor& dt, double time_scale, const std::vector<std::uint8_t>& mask) {
  Graph& g = graph_of({beta_raw, gamma_raw}, "kernel_log_bias");
  const Tensor &BR = beta_raw.value(), &GR = gamma_raw.value();
  const std::size_t R = BR.size();
  if (R == 0 || GR.size() != R)
    throw ShapeError("kernel_log_bias: beta " + shape_str(BR.shape()) + " and gamma " + shape_str(GR.shape()) + " must be equal, non-empty");
  if (!(time_scale > 0.0)) throw std::invalid_argument("kernel_log_bias: time scale must be positive");
  if (!mask.empty() && mask.size() != dt.size()) throw ShapeError("kernel_log_bias: mask size does not match dt");
  std::vector<double> logb(R), gam(R);
  for (std::size_t r = 0; r < R; ++r) {
    logb[r] = std::log(softplus_scalar(BR[r]));
    gam[r] = softplus_scalar(GR[r]);
  }
  Tensor out(dt.rank() == 1 ? Shape{1, dt.size()} : dt.shape());
  std::vector<double> comp(R);
  for (std::size_t i = 0; i < dt.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    if (!(dt[i] >= 0.0)) throw std::invalid_argument("kernel_log_bias: negative time difference (causality violation)");
    const double tau = dt[i] / time_scale;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < R; ++r) mx = std::max(mx, comp[r] = logb[r] - gam[r] * tau);
    double s = 0.0;
    for (std::size_t r = 0; r < R; ++r) s += std::exp(comp[r] - mx);
    out[i] = mx + std::log(s);
  }
  const std::size_t ib = beta_raw.id, ig = gamma_raw.id;
  return g.record("kernel_log_bias", {ib, ig}, std::move(out),
                  [ib, ig, R, dt, time_scale, mask, logb = std::move(logb), gam = std::move(gam)](Graph& g, std::size_t self) {
                    const Tensor& G = g.grad_of_const(self);
                    const Tensor& Y = g.value_of(self);
                    const Tensor &BR = g.value_of(ib), &GR = g.value_of(ig);
                    std::vector<double> gb(R, 0.0), gg(R, 0.0);
                    for (std::size_t i = 0; i < dt.size(); ++i) {
                      if (!mask.empty() && !mask[i]) continue;
                      if (G[i] == 0.0) continue;
                      const double tau = dt[i] / time_scale;
                      for (std::size_t r = 0; r < R; ++r) {
                        // responsibility of component r in the mixture at this lag
                        const double w = std::exp(logb[r] - gam[r] * tau - Y[i]);
                        gb[r] += G[i] * w;          // d/dlog(beta_r)
                        gg[r] -= G[i] * w * tau;    // d/dgamma_r
                      }
                    }
                    if (Tensor* GB = grad_slot(g, ib))
                      for (std::size_t r = 0; r < R; ++r)
                        (*GB)[r] += gb[r] / std::exp(logb[r]) * sigmoid_scalar(BR[r]);
                    if (Tensor* GG = grad_slot(g, ig))
                      for (std::size_t r = 0; r < R; ++r) (*GG)[r] += gg[r] * sigmoid_scalar(GR[r]);
                  });
}

}  // namespace ctmm::num
