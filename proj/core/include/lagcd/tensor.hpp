// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensors with a reverse-mode gradient tape.
//
// Every op treats a tensor as a matrix of rows() x cols(), where cols() is the
// last dimension. Ops record themselves on the thread's active Tape only when
// some input requires a gradient; with no active tape they are plain numeric
// functions.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lagcd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t rank() const { return shape().size(); }
  /// Size of the last dimension.
  std::size_t cols() const;
  /// Product of all leading dimensions.
  std::size_t rows() const;

  std::span<const double> data() const;
  /// Direct write access. Only valid outside of a recorded forward pass
  /// (initialization, optimizer updates, finite-difference probes).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Copy of the values with no gradient tracking.
  Tensor detach() const;
  bool is_same(const Tensor& other) const { return impl_ == other.impl_; }

  detail::TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of differentiable ops for one forward pass.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Tensor output, std::vector<Tensor> inputs, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and replays the records in reverse order.
  /// Gradients accumulate into existing buffers.
  void backward(const Tensor& loss);

  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  /// Tape that ops on this thread record onto, or nullptr.
  static Tape* active();

  /// Makes `tape` active for the current thread until destruction.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  /// Suspends recording for the current thread.
  class Pause {
   public:
    Pause();
    ~Pause();
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;

   private:
    Tape* previous_;
  };

 private:
  struct Record {
    Tensor output;
    std::vector<Tensor> inputs;
    BackwardFn backward;
  };
  std::vector<Record> records_;
};

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// x * W^T + b for x[n x in], W[out x in], b[out] (b may be undefined).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Adds a length-cols() vector to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Column-wise mean over rows: [rows x cols] -> [1 x cols].
Tensor mean_rows(const Tensor& x);

/// Natural log. With floor > 0 the input is clamped to [floor, inf) and
/// clamped entries carry zero gradient; with floor == 0 any entry <= 0 throws.
Tensor log(const Tensor& x, double floor = 0.0);
Tensor exp(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
/// Row-wise log-sum-exp over entries with include[i] != 0 (all entries when
/// `include` is empty). Result has shape {rows}.
Tensor logsumexp_rows(const Tensor& x, std::span<const std::uint8_t> include = {});
/// Unit Euclidean norm per row; rows with norm <= eps throw.
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows);
/// Stacks matrices with equal column counts.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor reshape(const Tensor& x, Shape shape);

/// Scaled dot-product self-attention over `batch` independent sequences of
/// length `seq`, each row of q/k/v being one token. Heads split the columns.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                 std::size_t seq, std::size_t heads);

/// Elementwise op from precomputed values and local derivatives.
Tensor elementwise(const Tensor& x, std::vector<double> values, std::vector<double> derivatives);

template <typename F, typename DF>
Tensor map_elementwise(const Tensor& x, F&& f, DF&& df) {
  const auto in = x.data();
  std::vector<double> values(in.size());
  std::vector<double> derivs(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    values[i] = f(in[i]);
    derivs[i] = df(in[i]);
  }
  return elementwise(x, std::move(values), std::move(derivs));
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Largest relative error between tape gradients and central differences
/// (f(x+h e) - f(x-h e)) / 2h over every coordinate of `x`. The relative
/// error of one coordinate is |analytic - numeric| / max(|analytic|, |numeric|, floor);
/// `floor` keeps coordinates with vanishing gradient from dividing by ~0.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5,
                  double floor = 1e-3);

/// Same measure over several parameter tensors that `f` closes over. The
/// parameters are perturbed in place and restored.
double grad_check(const std::function<Tensor()>& f, std::span<const Tensor> params, double h = 1e-5,
                  double floor = 1e-3);

}  // namespace lagcd
