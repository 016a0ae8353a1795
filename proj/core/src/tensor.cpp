#include "steerkit/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "steerkit/rng.hpp"

namespace steerkit {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::size_t product(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

void check_finite(const std::vector<double>& data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

// Builds the output tensor and, when any input requires gradients, links it
// into the graph with the given backward rule.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, detail::BackwardFn backward) {
  check_finite(data, op);
  auto node = new_node(std::move(shape), std::move(data));
  bool needs = false;
  for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->leaf = false;
    for (const Tensor* t : inputs) node->parents.push_back(t->node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tensor make_result_list(const char* op, Shape shape, std::vector<double> data,
                        std::span<const Tensor> inputs, detail::BackwardFn backward) {
  check_finite(data, op);
  auto node = new_node(std::move(shape), std::move(data));
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->leaf = false;
    for (const Tensor& t : inputs) node->parents.push_back(t.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void require_rank2(const Tensor& t, const char* op) {
  if (!t.defined() || t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         (t.defined() ? shape_string(t.shape()) : "undefined"));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
}

// C[m,n] += A[m,k] * B[k,n]; per-element accumulation runs over k ascending,
// so a single row computed alone is bitwise equal to the same row of a batch.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
  const auto n = product(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::filled(Shape shape, double value) {
  const auto n = product(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
  if (product(shape) != data.size())
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_string(shape));
  check_finite(data, "Tensor::from");
  return Tensor(new_node(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t = from(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractViolation("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.size() == 1 ? 1 : s[0];
}

std::size_t Tensor::cols() const { return shape().back(); }

std::span<const double> Tensor::data() const {
  if (!node_) throw ContractViolation("use of undefined tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on non-scalar " + shape_string(shape()));
  return data()[0];
}

std::span<double> Tensor::mutable_data() {
  if (!node_ || !node_->leaf) throw ContractViolation("mutable_data() is only valid on leaves");
  return node_->data;
}

void Tensor::set_requires_grad(bool value) {
  if (!node_ || !node_->leaf) throw ContractViolation("set_requires_grad() is only valid on leaves");
  node_->requires_grad = value;
}

Tensor Tensor::detach() const { return Tensor(new_node(shape(), node_->data)); }

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- BoolMatrix ---------------------------------------------------------------

BoolMatrix BoolMatrix::causal(std::size_t n) {
  BoolMatrix m(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c <= r; ++c) m.set(r, c, true);
  return m;
}

std::size_t BoolMatrix::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::size_t BoolMatrix::count_row(std::size_t r) const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < cols_; ++c) n += bits_[r * cols_ + c];
  return n;
}

// ---- linear algebra -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result("matmul", {m, n}, std::move(out), {&a, &b},
                     [m, k, n](const detail::Node& self, std::span<const double> g,
                               std::span<std::vector<double>* const> pg) {
                       const auto& A = self.parents[0]->data;
                       const auto& B = self.parents[1]->data;
                       if (pg[0]) gemm_nt(g.data(), B.data(), pg[0]->data(), m, n, k);
                       if (pg[1]) gemm_tn(A.data(), g.data(), pg[1]->data(), m, k, n);
                     });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "^T");
  std::vector<double> out(m * n, 0.0);
  gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result("matmul_nt", {m, n}, std::move(out), {&a, &b},
                     [m, k, n](const detail::Node& self, std::span<const double> g,
                               std::span<std::vector<double>* const> pg) {
                       const auto& A = self.parents[0]->data;
                       const auto& B = self.parents[1]->data;
                       // dA = G B ; dB = G^T A
                       if (pg[0]) gemm_nn(g.data(), B.data(), pg[0]->data(), m, n, k);
                       if (pg[1]) gemm_tn(g.data(), A.data(), pg[1]->data(), m, n, k);
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto d = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = d[i * n + j];
  return make_result("transpose", {n, m}, std::move(out), {&a},
                     [m, n](const detail::Node&, std::span<const double> g,
                            std::span<std::vector<double>* const> pg) {
                       auto& ga = *pg[0];
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (product(shape) != a.numel())
    throw DimensionError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {&a},
                     [](const detail::Node&, std::span<const double> g,
                        std::span<std::vector<double>* const> pg) {
                       auto& ga = *pg[0];
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     });
}

// ---- elementwise ----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result("add", a.shape(), std::move(out), {&a, &b},
                     [](const detail::Node&, std::span<const double> g,
                        std::span<std::vector<double>* const> pg) {
                       for (auto* p : pg)
                         if (p)
                           for (std::size_t i = 0; i < g.size(); ++i) (*p)[i] += g[i];
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result("sub", a.shape(), std::move(out), {&a, &b},
                     [](const detail::Node&, std::span<const double> g,
                        std::span<std::vector<double>* const> pg) {
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                       if (pg[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] -= g[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result("mul", a.shape(), std::move(out), {&a, &b},
                     [](const detail::Node& self, std::span<const double> g,
                        std::span<std::vector<double>* const> pg) {
                       const auto& x = self.parents[0]->data;
                       const auto& y = self.parents[1]->data;
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * y[i];
                       if (pg[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += g[i] * x[i];
                     });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
  return make_result("scale", a.shape(), std::move(out), {&a},
                     [c](const detail::Node&, std::span<const double> g,
                         std::span<std::vector<double>* const> pg) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * c;
                     });
}

Tensor add_row(const Tensor& a, const Tensor& v) {
  require_rank2(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (v.numel() != n)
    throw DimensionError("add_row: row vector " + shape_string(v.shape()) + " vs " +
                         shape_string(a.shape()));
  std::vector<double> out(m * n);
  const auto x = a.data(), y = v.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + y[j];
  return make_result("add_row", {m, n}, std::move(out), {&a, &v},
                     [m, n](const detail::Node&, std::span<const double> g,
                            std::span<std::vector<double>* const> pg) {
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                       if (pg[1])
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) (*pg[1])[j] += g[i * n + j];
                     });
}

Tensor repeat_rows(const Tensor& v, std::size_t m) {
  if (v.rank() > 2 || (v.rank() == 2 && v.rows() != 1))
    throw DimensionError("repeat_rows: expected a vector, got " + shape_string(v.shape()));
  if (m == 0) throw DimensionError("repeat_rows: zero repetitions");
  const std::size_t n = v.numel();
  std::vector<double> out(m * n);
  const auto y = v.data();
  for (std::size_t i = 0; i < m; ++i) std::copy(y.begin(), y.end(), out.begin() + i * n);
  return make_result("repeat_rows", {m, n}, std::move(out), {&v},
                     [m, n](const detail::Node&, std::span<const double> g,
                            std::span<std::vector<double>* const> pg) {
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) (*pg[0])[j] += g[i * n + j];
                     });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v)));
  }
  return make_result("gelu", a.shape(), std::move(out), {&a},
                     [](const detail::Node& self, std::span<const double> g,
                        std::span<std::vector<double>* const> pg) {
                       const auto& x = self.parents[0]->data;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double v = x[i];
                         const double t = std::tanh(kGeluC * (v + 0.044715 * v * v * v));
                         const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
                         (*pg[0])[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
                       }
                     });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  auto y = out;
  return make_result("sigmoid", a.shape(), std::move(out), {&a},
                     [y = std::move(y)](const detail::Node&, std::span<const double> g,
                                        std::span<std::vector<double>* const> pg) {
                       for (std::size_t i = 0; i < g.size(); ++i)
                         (*pg[0])[i] += g[i] * y[i] * (1.0 - y[i]);
                     });
}

// ---- normalisation -----------------------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
  if (a.rank() > 2) throw DimensionError("softmax: rank must be 1 or 2");
  const bool rank1 = a.rank() == 1;
  const int ax = axis < 0 ? static_cast<int>(a.rank()) + axis : axis;
  if (ax < 0 || ax >= static_cast<int>(a.rank())) throw DimensionError("softmax: bad axis");
  const std::size_t m = rank1 ? 1 : a.rows(), n = a.cols();
  // Normalise along rows (ax == last) or columns (ax == 0 on a matrix).
  const bool along_cols = !rank1 && ax == 0;
  const std::size_t groups = along_cols ? n : m;
  const std::size_t len = along_cols ? m : n;
  const std::size_t stride = along_cols ? n : 1;
  auto at = [&](std::size_t gidx, std::size_t i) {
    return along_cols ? i * stride + gidx : gidx * n + i;
  };
  const auto x = a.data();
  std::vector<double> out(a.numel());
  for (std::size_t gi = 0; gi < groups; ++gi) {
    double mx = x[at(gi, 0)];
    for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, x[at(gi, i)]);
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double e = std::exp(x[at(gi, i)] - mx);
      out[at(gi, i)] = e;
      s += e;
    }
    for (std::size_t i = 0; i < len; ++i) out[at(gi, i)] /= s;
  }
  auto y = out;
  return make_result(
      "softmax", a.shape(), std::move(out), {&a},
      [y = std::move(y), groups, len, along_cols, n](const detail::Node&,
                                                     std::span<const double> g,
                                                     std::span<std::vector<double>* const> pg) {
        auto idx = [&](std::size_t gidx, std::size_t i) {
          return along_cols ? i * n + gidx : gidx * n + i;
        };
        for (std::size_t gi = 0; gi < groups; ++gi) {
          double dot = 0.0;
          for (std::size_t i = 0; i < len; ++i) dot += g[idx(gi, i)] * y[idx(gi, i)];
          for (std::size_t i = 0; i < len; ++i)
            (*pg[0])[idx(gi, i)] += y[idx(gi, i)] * (g[idx(gi, i)] - dot);
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (eps <= 0) throw ContractViolation("layer_norm: eps must be positive");
  const std::size_t n = x.cols();
  const std::size_t m = x.numel() / n;
  if (gain.numel() != n || bias.numel() != n)
    throw DimensionError("layer_norm: gain/bias width must equal " + std::to_string(n));
  const auto xd = x.data(), gd = gain.data(), bd = bias.data();
  std::vector<double> out(m * n), xhat(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xd[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = xd[i * n + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (xd[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = gd[j] * xhat[i * n + j] + bd[j];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const detail::Node& self, std::span<const double> g,
          std::span<std::vector<double>* const> pg) {
        const auto& gd = self.parents[1]->data;
        if (pg[0]) {
          std::vector<double> dxhat(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = g[i * n + j] * gd[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat[i * n + j];
            }
            mean_d /= static_cast<double>(n);
            mean_dx /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j)
              (*pg[0])[i * n + j] += inv_std[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
          }
        }
        if (pg[1])
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*pg[1])[j] += g[i * n + j] * xhat[i * n + j];
        if (pg[2])
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*pg[2])[j] += g[i * n + j];
      });
}

// ---- structural -------------------------------------------------------------

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.rank() > 2 || p.cols() != n)
      throw DimensionError("concat_rows: width mismatch " + shape_string(p.shape()));
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return make_result_list("concat_rows", {m, n}, std::move(out), parts,
                          [offsets](const detail::Node& self, std::span<const double> g,
                                    std::span<std::vector<double>* const> pg) {
                            for (std::size_t k = 0; k < pg.size(); ++k) {
                              if (!pg[k]) continue;
                              const auto len = self.parents[k]->data.size();
                              for (std::size_t i = 0; i < len; ++i)
                                (*pg[k])[i] += g[offsets[k] + i];
                            }
                          });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<std::size_t> widths, col_offsets;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != m)
      throw DimensionError("concat_cols: row mismatch " + shape_string(p.shape()));
    col_offsets.push_back(n);
    widths.push_back(p.cols());
    n += p.cols();
  }
  std::vector<double> out(m * n);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto d = parts[k].data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j)
        out[i * n + col_offsets[k] + j] = d[i * widths[k] + j];
  }
  return make_result_list("concat_cols", {m, n}, std::move(out), parts,
                          [m, n, widths, col_offsets](const detail::Node&,
                                                      std::span<const double> g,
                                                      std::span<std::vector<double>* const> pg) {
                            for (std::size_t k = 0; k < pg.size(); ++k) {
                              if (!pg[k]) continue;
                              for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t j = 0; j < widths[k]; ++j)
                                  (*pg[k])[i * widths[k] + j] += g[i * n + col_offsets[k] + j];
                            }
                          });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_rows");
  if (begin >= end || end > a.rows())
    throw DimensionError("slice_rows: bad range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") of " + shape_string(a.shape()));
  const std::size_t n = a.cols();
  std::vector<double> out(a.data().begin() + begin * n, a.data().begin() + end * n);
  return make_result("slice_rows", {end - begin, n}, std::move(out), {&a},
                     [begin, n](const detail::Node&, std::span<const double> g,
                                std::span<std::vector<double>* const> pg) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[begin * n + i] += g[i];
                     });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_cols");
  if (begin >= end || end > a.cols())
    throw DimensionError("slice_cols: bad range of " + shape_string(a.shape()));
  const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
  std::vector<double> out(m * w);
  const auto d = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = d[i * n + begin + j];
  return make_result("slice_cols", {m, w}, std::move(out), {&a},
                     [m, n, w, begin](const detail::Node&, std::span<const double> g,
                                      std::span<std::vector<double>* const> pg) {
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < w; ++j)
                           (*pg[0])[i * n + begin + j] += g[i * w + j];
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_rank2(table, "gather_rows");
  if (ids.empty()) throw DimensionError("gather_rows: no ids");
  const std::size_t n = table.cols(), vocab = table.rows();
  std::vector<double> out(ids.size() * n);
  const auto d = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw ContractViolation("gather_rows: id " + std::to_string(ids[i]) + " out of range");
    std::copy_n(d.begin() + static_cast<std::size_t>(ids[i]) * n, n, out.begin() + i * n);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return make_result("gather_rows", {ids.size(), n}, std::move(out), {&table},
                     [idv = std::move(idv), n](const detail::Node&, std::span<const double> g,
                                              std::span<std::vector<double>* const> pg) {
                       for (std::size_t i = 0; i < idv.size(); ++i)
                         for (std::size_t j = 0; j < n; ++j)
                           (*pg[0])[static_cast<std::size_t>(idv[i]) * n + j] += g[i * n + j];
                     });
}

Tensor apply_mask(const Tensor& scores, const BoolMatrix& mask) {
  require_rank2(scores, "apply_mask");
  if (mask.rows() != scores.rows() || mask.cols() != scores.cols())
    throw DimensionError("apply_mask: mask shape does not match scores " +
                         shape_string(scores.shape()));
  std::vector<double> out(scores.data().begin(), scores.data().end());
  const std::size_t n = scores.cols();
  for (std::size_t i = 0; i < scores.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (!mask(i, j)) out[i * n + j] += kMaskedLogit;
  return make_result("apply_mask", scores.shape(), std::move(out), {&scores},
                     [](const detail::Node&, std::span<const double> g,
                        std::span<std::vector<double>* const> pg) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                     });
}

// ---- reductions ----------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result("sum", {1}, {s}, {&a},
                     [](const detail::Node&, std::span<const double> g,
                        std::span<std::vector<double>* const> pg) {
                       for (auto& v : *pg[0]) v += g[0];
                     });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor row_mean_broadcast(const Tensor& a) {
  require_rank2(a, "row_mean_broadcast");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto d = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += d[i * n + j];
    s /= static_cast<double>(n);
    std::fill_n(out.begin() + i * n, n, s);
  }
  return make_result("row_mean_broadcast", {m, n}, std::move(out), {&a},
                     [m, n](const detail::Node&, std::span<const double> g,
                            std::span<std::vector<double>* const> pg) {
                       for (std::size_t i = 0; i < m; ++i) {
                         double s = 0.0;
                         for (std::size_t j = 0; j < n; ++j) s += g[i * n + j];
                         s /= static_cast<double>(n);
                         for (std::size_t j = 0; j < n; ++j) (*pg[0])[i * n + j] += s;
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     const std::vector<bool>& loss_mask) {
  require_rank2(logits, "cross_entropy");
  const std::size_t t = logits.rows(), v = logits.cols();
  if (targets.size() != t || loss_mask.size() != t)
    throw DimensionError("cross_entropy: targets/mask length must equal logits rows");
  std::size_t active = 0;
  for (std::size_t i = 0; i < t; ++i) {
    if (!loss_mask[i]) continue;
    ++active;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v)
      throw ContractViolation("cross_entropy: target id out of range");
  }
  if (active == 0) throw ContractViolation("cross_entropy: every position is masked");
  const auto d = logits.data();
  std::vector<double> probs(t * v, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    if (!loss_mask[i]) continue;
    const double* row = d.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    total += lse - row[targets[i]];
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(row[j] - lse);
  }
  const double inv = 1.0 / static_cast<double>(active);
  std::vector<int> tg(targets.begin(), targets.end());
  return make_result("cross_entropy", {1}, {total * inv}, {&logits},
                     [probs = std::move(probs), tg = std::move(tg), mask = loss_mask, v, inv](
                         const detail::Node&, std::span<const double> g,
                         std::span<std::vector<double>* const> pg) {
                       for (std::size_t i = 0; i < tg.size(); ++i) {
                         if (!mask[i]) continue;
                         for (std::size_t j = 0; j < v; ++j)
                           (*pg[0])[i * v + j] += g[0] * inv * probs[i * v + j];
                         (*pg[0])[i * v + static_cast<std::size_t>(tg[i])] -= g[0] * inv;
                       }
                     });
}

// ---- attention ------------------------------------------------------------------

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const BoolMatrix* mask,
              int heads) {
  require_rank2(q, "attend");
  require_rank2(k, "attend");
  require_rank2(v, "attend");
  const std::size_t d = q.cols();
  if (heads <= 0 || d % static_cast<std::size_t>(heads) != 0)
    throw DimensionError("attend: width " + std::to_string(d) + " not divisible by heads " +
                         std::to_string(heads));
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows())
    throw DimensionError("attend: q/k/v shapes disagree");
  if (mask) {
    if (mask->rows() != q.rows() || mask->cols() != k.rows())
      throw DimensionError("attend: mask must be [Tq x Tk]");
    for (std::size_t r = 0; r < mask->rows(); ++r)
      if (mask->count_row(r) == 0)
        throw ContractViolation("attend: query row " + std::to_string(r) + " has no visible key");
  }
  const std::size_t hd = d / static_cast<std::size_t>(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
    const bool whole = heads == 1;
    Tensor qh = whole ? q : slice_cols(q, h * hd, (h + 1) * hd);
    Tensor kh = whole ? k : slice_cols(k, h * hd, (h + 1) * hd);
    Tensor vh = whole ? v : slice_cols(v, h * hd, (h + 1) * hd);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    if (mask) scores = apply_mask(scores, *mask);
    outs.push_back(matmul(softmax(scores, -1), vh));
  }
  return heads == 1 ? outs[0] : concat_cols(outs);
}

Tensor masked_multi_head_attention(const Tensor& q_src, const Tensor& k_src, const Tensor& v_src,
                                   const BoolMatrix& mask, const AttentionWeights& w, int heads) {
  Tensor q = matmul(q_src, w.wq);
  Tensor k = matmul(k_src, w.wk);
  Tensor v = matmul(v_src, w.wv);
  return matmul(attend(q, k, v, &mask, heads), w.wo);
}

// ---- reverse mode -----------------------------------------------------------------

Tensor Gradients::of(const Tensor& leaf) const {
  auto it = by_leaf_.find(leaf.id());
  if (it != by_leaf_.end()) return it->second;
  return Tensor::zeros(leaf.shape());
}

GradientTape GradientTape::record(const Tensor& root) {
  GradientTape tape;
  tape.root_ = root;
  if (!root.requires_grad()) return tape;
  // Iterative post-order DFS: a node is emitted after all of its parents.
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<const detail::Node*, std::size_t>> stack;
  stack.emplace_back(&root.node(), 0);
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

std::vector<std::uint64_t> GradientTape::leaf_set() const {
  std::vector<std::uint64_t> ids;
  for (const auto* n : nodes_)
    if (n->leaf) ids.push_back(n->id);
  return ids;
}

Gradients GradientTape::backward() const {
  Gradients out;
  if (!root_.defined()) return out;
  if (root_.numel() != 1) throw ContractViolation("backward: loss must be a scalar");
  if (nodes_.empty()) return out;
  std::unordered_map<const detail::Node*, std::size_t> index;
  index.reserve(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) index[nodes_[i]] = i;
  std::vector<std::vector<double>> grads(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) grads[i].assign(nodes_[i]->data.size(), 0.0);
  grads.back()[0] = 1.0;
  std::vector<std::vector<double>*> parent_grads;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    const detail::Node* node = nodes_[i];
    if (node->leaf) {
      out.set(node->id, Tensor::from(node->shape, grads[i]));
      continue;
    }
    parent_grads.assign(node->parents.size(), nullptr);
    for (std::size_t p = 0; p < node->parents.size(); ++p) {
      const detail::Node* parent = node->parents[p].get();
      if (parent->requires_grad) parent_grads[p] = &grads[index.at(parent)];
    }
    node->backward(*node, grads[i], parent_grads);
    std::vector<double>().swap(grads[i]);
  }
  return out;
}

Gradients backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractViolation("backward: loss must be a scalar tensor");
  return GradientTape::record(loss).backward();
}

double finite_diff_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                         const FiniteDiffOptions& options) {
  if (options.step <= 0) throw ContractViolation("finite_diff_check: step must be positive");
  const Gradients grads = backward(loss_fn());
  Rng rng(options.seed);
  double worst = 0.0;
  for (Tensor& p : params) {
    const Tensor analytic = grads.of(p);
    auto values = p.mutable_data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_param != 0 && coords.size() > options.max_coords_per_param) {
      for (std::size_t i = 0; i < options.max_coords_per_param; ++i)
        std::swap(coords[i], coords[i + rng.index(coords.size() - i)]);
      coords.resize(options.max_coords_per_param);
    }
    for (std::size_t c : coords) {
      const double orig = values[c];
      values[c] = orig + options.step;
      const double fp = loss_fn().item();
      values[c] = orig - options.step;
      const double fm = loss_fn().item();
      values[c] = orig;
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double a = analytic.at(c);
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace steerkit
