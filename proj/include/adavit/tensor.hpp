#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "adavit/rng.hpp"

namespace adavit {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily on backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates d(loss)/d(parent) into parents' grad given this node's grad.
  std::function<void(Node&)> backprop;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense row-major f64 tensor with reverse-mode autodiff. Value semantics over
// a shared node; nodes are immutable after the op that created them.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  std::size_t size() const { return n_->value.size(); }
  std::size_t rank() const { return n_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return n_->shape.at(axis); }

  const std::vector<double>& data() const { return n_->value; }
  const std::vector<double>& grad() const { return n_->grad; }
  bool has_grad() const { return !n_->grad.empty(); }
  bool requires_grad() const { return n_->requires_grad; }

  double item() const;
  double at(std::size_t flat) const { return n_->value.at(flat); }

  // In-place mutation for parameter initialization / optimizer steps only.
  std::vector<double>& mutable_data() { return n_->value; }
  void zero_grad() { n_->grad.clear(); }

  // Reverse-mode sweep from a scalar.
  void backward() const;

  // Detached copy (no graph edge, keeps requires_grad flag off).
  Tensor detach() const;

  std::shared_ptr<detail::Node> node() const { return n_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> n_;
};

// --- ops -------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor square(const Tensor& x);

// Batched matmul: [.., m, k] x [.., k, n] -> [.., m, n]; leading dims must match
// (or one operand may omit them entirely and is then shared across the batch).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);

// y = x W + b with x:[T, in], W:[in, out], b:[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor softmax(const Tensor& x, int axis = -1);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// x:[Cin, X, Y, Z], w:[Cout, Cin, k, k, k], b:[Cout]; zero padding `pad` on all
// spatial sides. With pad=0 the stride must divide the padded extent exactly.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad = 0);

// x:[Cin, gx, gy, gz], w:[Cin, Cout, k, k, k], b:[Cout], kernel == stride
// (non-overlapping upsampling), output [Cout, gx*k, gy*k, gz*k].
Tensor transposed_conv3d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride);

Tensor max_over_axis(const Tensor& x, std::size_t axis);
Tensor mean_over_axis(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_rows(const std::vector<Tensor>& parts);  // along axis 0, equal trailing dims
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor stack(const std::vector<Tensor>& parts);  // new leading axis

Tensor divide(const Tensor& a, const Tensor& b);  // elementwise, same shape

// Rank-2 column window [c0, c1) / concatenation along axis 1.
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
Tensor concat_cols(const std::vector<Tensor>& parts);

// x:[T, E] + v:[E] broadcast over rows.
Tensor add_rowvec(const Tensor& x, const Tensor& v);
// row i of x scaled by s[i]; x:[T, ...], s:[T].
Tensor scale_rows(const Tensor& x, const Tensor& s);

// --- serialization (ATNSR1) --------------------------------------------------

enum class Dtype : std::uint8_t { f64 = 0, f32 = 1 };

void write_tensor(std::ostream& os, const Tensor& t, Dtype dtype = Dtype::f64);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::string& path, const Tensor& t, Dtype dtype = Dtype::f64);
Tensor load_tensor(const std::string& path);

// --- ParamStore --------------------------------------------------------------

// Ordered name -> parameter map; iteration order is insertion order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  bool contains(const std::string& name) const;
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }
  std::size_t total_params() const;
  void zero_grad();

 private:
  std::vector<std::string> order_;
  std::vector<Tensor> tensors_;
  std::size_t index_of(const std::string& name) const;
};

}  // namespace adavit
