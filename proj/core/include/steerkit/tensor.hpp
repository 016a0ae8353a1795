#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "steerkit/error.hpp"

namespace steerkit {

using Shape = std::vector<std::size_t>;

// Masked attention logits get this additive constant rather than -inf so that
// softmax gradients never see inf - inf.
inline constexpr double kMaskedLogit = -1e30;

namespace detail {

struct Node;

// Accumulates d(loss)/d(parent) into parent_grads[i]; entries are null for
// parents that do not require gradients.
using BackwardFn = std::function<void(const Node& self, std::span<const double> grad_out,
                                      std::span<std::vector<double>* const> parent_grads)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

// Dense row-major float64 array. Copies share storage; results of operations
// on tensors that require gradients keep a link to their inputs so that
// backward() can replay the computation in reverse.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  // Leaf that participates in gradient computation.
  static Tensor parameter(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return data().size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_ && node_->leaf; }
  std::uint64_t id() const { return node_ ? node_->id : 0; }

  // In-place access for leaves (parameter updates, finite differences).
  std::span<double> mutable_data();
  void set_requires_grad(bool value);

  // Same values, no graph history, no gradient requirement.
  Tensor detach() const;

  const detail::Node& node() const { return *node_; }
  std::shared_ptr<detail::Node> node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

std::string shape_string(const Shape& shape);

// Row-major boolean matrix; true marks an attendable key.
class BoolMatrix {
 public:
  BoolMatrix() = default;
  BoolMatrix(std::size_t rows, std::size_t cols, bool value = false)
      : rows_(rows), cols_(cols), bits_(rows * cols, value ? 1 : 0) {}

  static BoolMatrix causal(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { bits_[r * cols_ + c] = v ? 1 : 0; }
  std::size_t count() const;
  std::size_t count_row(std::size_t r) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

// ---- differentiable operations --------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// a[m,n] + v[n] on every row.
Tensor add_row(const Tensor& a, const Tensor& v);
// v[n] (or [1,n]) stacked m times.
Tensor repeat_rows(const Tensor& v, std::size_t m);

Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Softmax along `axis` of a rank-1 or rank-2 tensor, max-subtracted.
Tensor softmax(const Tensor& a, int axis = -1);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

// scores + (mask ? 0 : kMaskedLogit)
Tensor apply_mask(const Tensor& scores, const BoolMatrix& mask);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Every row replaced by its mean, broadcast across the row.
Tensor row_mean_broadcast(const Tensor& a);

// Mean negative log-likelihood over rows where loss_mask is set.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     const std::vector<bool>& loss_mask);

// ---- attention --------------------------------------------------------------

struct AttentionWeights {
  Tensor wq, wk, wv, wo;  // each [d, d]
};

// Scaled dot-product attention on already projected q [Tq,d], k/v [Tk,d],
// split into `heads` column groups and re-concatenated (no output projection).
// A null mask lets every query see every key.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const BoolMatrix* mask,
              int heads);

// Projects q_src/k_src/v_src, attends per head, concatenates and applies wo.
Tensor masked_multi_head_attention(const Tensor& q_src, const Tensor& k_src, const Tensor& v_src,
                                   const BoolMatrix& mask, const AttentionWeights& w, int heads);

// ---- reverse mode -----------------------------------------------------------

class Gradients {
 public:
  // Gradient for a leaf; zeros of the leaf's shape if it did not participate.
  Tensor of(const Tensor& leaf) const;
  bool contains(const Tensor& leaf) const { return by_leaf_.count(leaf.id()) != 0; }
  std::size_t size() const { return by_leaf_.size(); }
  void set(std::uint64_t id, Tensor g) { by_leaf_[id] = std::move(g); }

 private:
  std::unordered_map<std::uint64_t, Tensor> by_leaf_;
};

// Topologically ordered record of the operations that produced a tensor.
class GradientTape {
 public:
  static GradientTape record(const Tensor& root);

  const std::vector<const detail::Node*>& nodes() const { return nodes_; }
  std::vector<std::uint64_t> leaf_set() const;
  Gradients backward() const;

 private:
  Tensor root_;
  std::vector<const detail::Node*> nodes_;
};

// d(loss)/d(leaf) for every leaf reachable from a scalar loss.
Gradients backward(const Tensor& loss);

// Max over checked coordinates of
// |analytic - central| / (|analytic| + |central| + 1e-12).
// `loss_fn` must recompute the loss from the current contents of `params`.
struct FiniteDiffOptions {
  double step = 1e-5;
  std::size_t max_coords_per_param = 0;  // 0 checks every coordinate
  std::uint64_t seed = 0x5eed;
};
double finite_diff_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                         const FiniteDiffOptions& options = {});

}  // namespace steerkit
