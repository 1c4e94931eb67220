// SPDX-License-Identifier: Apache-2.0
#include "lagcd/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "lagcd/errors.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace lagcd {

namespace {

#if defined(__GLIBC__)
// Tape buffers are large and short-lived; keep them on the heap instead of
// mapping and unmapping pages for every op.
[[maybe_unused]] const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
#endif

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local Tape* g_active_tape = nullptr;

Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = g_active_tape;
  if (tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_matrix(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

bool wants_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

std::vector<double>& grad_of(const Tensor& t) { return t.impl()->grad_buffer(); }

const std::vector<double>& out_grad(const Tensor& t) { return t.impl()->grad; }

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::numel() const { return impl_->data.size(); }

std::size_t Tensor::cols() const {
  const auto& s = impl_->shape;
  return s.empty() ? 1 : s.back();
}

std::size_t Tensor::rows() const {
  const std::size_t c = cols();
  return c == 0 ? 0 : numel() / c;
}

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const { return impl_->data[row * cols() + col]; }

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

// ---------------------------------------------------------------------------
// Tape

void Tape::record(Tensor output, std::vector<Tensor> inputs, BackwardFn backward) {
  output.set_requires_grad(true);
  records_.push_back(Record{std::move(output), std::move(inputs), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss");
  }
  for (const auto& r : records_) {
    for (const auto& in : r.inputs) {
      if (wants_grad(in)) in.impl()->grad_buffer();
    }
  }
  if (loss.requires_grad()) grad_of(loss)[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward();
  }
}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape::Pause::Pause() : previous_(g_active_tape) { g_active_tape = nullptr; }
Tape::Pause::~Pause() { g_active_tape = previous_; }

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * p, 0.0);
  const auto ms = static_cast<Eigen::Index>(m), ks = static_cast<Eigen::Index>(k),
             ps = static_cast<Eigen::Index>(p);
  if (m && k && p) {
    MutMap(out.data(), ms, ps).noalias() = ConstMap(a.data().data(), ms, ks) * ConstMap(b.data().data(), ks, ps);
  }
  Tensor result({m, p}, std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record(result, {a, b}, [a, b, result, ms, ks, ps] {
      ConstMap g(out_grad(result).data(), ms, ps);
      if (wants_grad(a)) MutMap(grad_of(a).data(), ms, ks).noalias() += g * ConstMap(b.data().data(), ks, ps).transpose();
      if (wants_grad(b)) MutMap(grad_of(b).data(), ks, ps).noalias() += ConstMap(a.data().data(), ms, ks).transpose() * g;
    });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  const auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  Tensor result({c, r}, std::move(out));
  if (Tape* tape = recording_tape({&a})) {
    tape->record(result, {a}, [a, result, r, c] {
      const auto& g = out_grad(result);
      auto& ga = grad_of(a);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
  }
  return result;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_matrix(weight, "linear");
  require_defined(x, "linear");
  const std::size_t in = weight.shape()[1], outd = weight.shape()[0];
  if (x.cols() != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && bias.numel() != outd) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  const std::size_t n = x.rows();
  const auto ns = static_cast<Eigen::Index>(n), is = static_cast<Eigen::Index>(in),
             os = static_cast<Eigen::Index>(outd);
  std::vector<double> out(n * outd, 0.0);
  MutMap Y(out.data(), ns, os);
  if (n && in && outd) {
    Y.noalias() = ConstMap(x.data().data(), ns, is) * ConstMap(weight.data().data(), os, is).transpose();
  }
  if (bias.defined()) {
    Eigen::Map<const Eigen::RowVectorXd> bv(bias.data().data(), os);
    Y.rowwise() += bv;
  }
  Shape shape = x.shape();
  shape.back() = outd;
  Tensor result(std::move(shape), std::move(out));
  if (Tape* tape = recording_tape({&x, &weight, &bias})) {
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    tape->record(result, std::move(inputs), [x, weight, bias, result, ns, is, os] {
      ConstMap g(out_grad(result).data(), ns, os);
      if (wants_grad(x)) MutMap(grad_of(x).data(), ns, is).noalias() += g * ConstMap(weight.data().data(), os, is);
      if (wants_grad(weight)) MutMap(grad_of(weight).data(), os, is).noalias() += g.transpose() * ConstMap(x.data().data(), ns, is);
      if (wants_grad(bias)) {
        Eigen::Map<Eigen::RowVectorXd> gb(grad_of(bias).data(), os);
        for (Eigen::Index r = 0; r < ns; ++r) gb += g.row(r);
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  Tensor result(a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record(result, {a, b}, [a, b, result] {
      const auto& g = out_grad(result);
      for (const Tensor* t : {&a, &b}) {
        if (!wants_grad(*t)) continue;
        auto& gt = grad_of(*t);
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
      }
    });
  }
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  Tensor result(a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record(result, {a, b}, [a, b, result] {
      const auto& g = out_grad(result);
      if (wants_grad(a)) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants_grad(b)) {
        auto& gb = grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  Tensor result(a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record(result, {a, b}, [a, b, result] {
      const auto& g = out_grad(result);
      if (wants_grad(a)) {
        auto& ga = grad_of(a);
        const auto y = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (wants_grad(b)) {
        auto& gb = grad_of(b);
        const auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return result;
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  Tensor result(a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a})) {
    tape->record(result, {a}, [a, result, factor] {
      const auto& g = out_grad(result);
      auto& ga = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return result;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_bias");
  require_defined(bias, "add_bias");
  const std::size_t c = x.cols(), r = x.rows();
  if (bias.numel() != c) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  const auto in = x.data(), b = bias.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = in[i * c + j] + b[j];
  Tensor result(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x, &bias})) {
    tape->record(result, {x, bias}, [x, bias, result, r, c] {
      const auto& g = out_grad(result);
      if (wants_grad(x)) {
        auto& gx = grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (wants_grad(bias)) {
        auto& gb = grad_of(bias);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
      }
    });
  }
  return result;
}

Tensor elementwise(const Tensor& x, std::vector<double> values, std::vector<double> derivatives) {
  require_defined(x, "elementwise");
  if (values.size() != x.numel() || derivatives.size() != x.numel()) {
    throw DimensionError("elementwise: value/derivative length does not match " + shape_str(x.shape()));
  }
  Tensor result(x.shape(), std::move(values));
  if (Tape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x, result, d = std::move(derivatives)] {
      const auto& g = out_grad(result);
      auto& gx = grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d[i];
    });
  }
  return result;
}

Tensor log(const Tensor& x, double floor) {
  require_defined(x, "log");
  const auto in = x.data();
  std::vector<double> values(in.size()), derivs(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = in[i];
    if (floor > 0.0 && !(v > floor)) {
      values[i] = std::log(floor);
      derivs[i] = 0.0;
    } else {
      if (!(v > 0.0)) throw NumericError("log: non-positive input " + std::to_string(v));
      values[i] = std::log(v);
      derivs[i] = 1.0 / v;
    }
  }
  return elementwise(x, std::move(values), std::move(derivs));
}

Tensor exp(const Tensor& x) {
  require_defined(x, "exp");
  const auto in = x.data();
  std::vector<double> values(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) values[i] = std::exp(in[i]);
  std::vector<double> derivs = values;
  return elementwise(x, std::move(values), std::move(derivs));
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  const auto in = x.data();
  double s = 0.0;
  for (double v : in) s += v;
  Tensor result = Tensor::scalar(s);
  if (Tape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x, result] {
      const double g = out_grad(result)[0];
      for (auto& v : grad_of(x)) v += g;
    });
  }
  return result;
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  if (x.numel() == 0) throw DegenerateInputError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_rows(const Tensor& x) {
  require_defined(x, "mean_rows");
  const std::size_t r = x.rows(), c = x.cols();
  if (r == 0) throw DegenerateInputError("mean_rows of an empty tensor");
  std::vector<double> out(c, 0.0);
  const auto in = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += in[i * c + j];
  const double inv = 1.0 / static_cast<double>(r);
  for (auto& v : out) v *= inv;
  Tensor result({1, c}, std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x, result, r, c, inv] {
      const auto& g = out_grad(result);
      auto& gx = grad_of(x);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j] * inv;
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Normalization

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  const std::size_t d = x.cols();
  if (d == 0 || x.rank() == 0) throw DimensionError("layer_norm: zero-width rows in " + shape_str(x.shape()));
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) +
                         " vs input " + shape_str(x.shape()));
  }
  if (!(eps > 0.0)) throw PreconditionError("layer_norm: eps must be positive");
  const std::size_t r = x.rows();
  const auto in = x.data(), gm = gamma.data(), bt = beta.data();
  std::vector<double> xhat(x.numel()), inv_std(r), out(x.numel());
  const double invd = 1.0 / static_cast<double>(d);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu *= invd;
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var *= invd;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[i * d + j] = h;
      out[i * d + j] = h * gm[j] + bt[j];
    }
  }
  Tensor result(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x, &gamma, &beta})) {
    tape->record(result, {x, gamma, beta},
                 [x, gamma, beta, result, r, d, invd, xh = std::move(xhat), is = std::move(inv_std)] {
                   const auto& g = out_grad(result);
                   const auto gm = gamma.data();
                   if (wants_grad(gamma) || wants_grad(beta)) {
                     std::vector<double>* gg = wants_grad(gamma) ? &grad_of(gamma) : nullptr;
                     std::vector<double>* gb = wants_grad(beta) ? &grad_of(beta) : nullptr;
                     for (std::size_t i = 0; i < r; ++i)
                       for (std::size_t j = 0; j < d; ++j) {
                         if (gg) (*gg)[j] += g[i * d + j] * xh[i * d + j];
                         if (gb) (*gb)[j] += g[i * d + j];
                       }
                   }
                   if (wants_grad(x)) {
                     auto& gx = grad_of(x);
                     for (std::size_t i = 0; i < r; ++i) {
                       double m1 = 0.0, m2 = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         const double dh = g[i * d + j] * gm[j];
                         m1 += dh;
                         m2 += dh * xh[i * d + j];
                       }
                       m1 *= invd;
                       m2 *= invd;
                       for (std::size_t j = 0; j < d; ++j) {
                         const double dh = g[i * d + j] * gm[j];
                         gx[i * d + j] += is[i] * (dh - m1 - xh[i * d + j] * m2);
                       }
                     }
                   }
                 });
  }
  return result;
}

Tensor softmax(const Tensor& x) {
  require_defined(x, "softmax");
  const std::size_t r = x.rows(), c = x.cols();
  const auto in = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    double* o = out.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(row[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= z;
  }
  Tensor result(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x, result, r, c] {
      const auto& g = out_grad(result);
      const auto p = result.data();
      auto& gx = grad_of(x);
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * p[i * c + j];
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += p[i * c + j] * (g[i * c + j] - dot);
      }
    });
  }
  return result;
}

Tensor log_softmax(const Tensor& x) {
  require_defined(x, "log_softmax");
  const std::size_t r = x.rows(), c = x.cols();
  const auto in = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  Tensor result(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x, result, r, c] {
      const auto& g = out_grad(result);
      const auto lp = result.data();
      auto& gx = grad_of(x);
      for (std::size_t i = 0; i < r; ++i) {
        double gs = 0.0;
        for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] - std::exp(lp[i * c + j]) * gs;
      }
    });
  }
  return result;
}

Tensor logsumexp_rows(const Tensor& x, std::span<const std::uint8_t> include) {
  require_defined(x, "logsumexp_rows");
  if (!include.empty() && include.size() != x.numel()) {
    throw DimensionError("logsumexp_rows: mask length " + std::to_string(include.size()) + " vs input " +
                         shape_str(x.shape()));
  }
  const std::size_t r = x.rows(), c = x.cols();
  const auto in = x.data();
  std::vector<double> out(r);
  std::vector<std::uint8_t> mask(include.begin(), include.end());
  if (mask.empty()) mask.assign(x.numel(), 1);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (mask[i * c + j]) mx = std::max(mx, in[i * c + j]);
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw DegenerateInputError("logsumexp_rows: row " + std::to_string(i) + " has no included entries");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j)
      if (mask[i * c + j]) z += std::exp(in[i * c + j] - mx);
    out[i] = mx + std::log(z);
  }
  Tensor result({r}, std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x, result, r, c, m = std::move(mask)] {
      const auto& g = out_grad(result);
      const auto lse = result.data();
      const auto in = x.data();
      auto& gx = grad_of(x);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          if (m[i * c + j]) gx[i * c + j] += g[i] * std::exp(in[i * c + j] - lse[i]);
    });
  }
  return result;
}

Tensor l2_normalize(const Tensor& x, double eps) {
  require_defined(x, "l2_normalize");
  const std::size_t r = x.rows(), c = x.cols();
  const auto in = x.data();
  std::vector<double> out(x.numel()), norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += in[i * c + j] * in[i * c + j];
    const double n = std::sqrt(s);
    if (!(n > eps)) {
      throw DegenerateInputError("l2_normalize: row " + std::to_string(i) + " has near-zero norm");
    }
    norms[i] = n;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = in[i * c + j] / n;
  }
  Tensor result(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x, result, r, c, ns = std::move(norms)] {
      const auto& g = out_grad(result);
      const auto y = result.data();
      auto& gx = grad_of(x);
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * g[i * c + j];
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += (g[i * c + j] - y[i * c + j] * dot) / ns[i];
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Indexing

Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_defined(x, "select_rows");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * c);
  const auto in = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= r) {
      throw DimensionError("select_rows: row " + std::to_string(idx[i]) + " out of range for " + shape_str(x.shape()));
    }
    std::copy_n(in.data() + idx[i] * c, c, out.data() + i * c);
  }
  Tensor result({idx.size(), c}, std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x, result, c, ix = std::move(idx)] {
      const auto& g = out_grad(result);
      auto& gx = grad_of(x);
      for (std::size_t i = 0; i < ix.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) gx[ix[i] * c + j] += g[i * c + j];
    });
  }
  return result;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DegenerateInputError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_defined(p, "concat_rows");
    if (p.cols() != c) {
      throw DimensionError("concat_rows: " + shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
    }
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor result({total, c}, std::move(out));
  Tape* tape = Tape::active();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape != nullptr && any) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    tape->record(result, inputs, [inputs, result] {
      const auto& g = out_grad(result);
      std::size_t offset = 0;
      for (const auto& p : inputs) {
        if (wants_grad(p)) {
          auto& gp = grad_of(p);
          for (std::size_t i = 0; i < p.numel(); ++i) gp[i] += g[offset + i];
        }
        offset += p.numel();
      }
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (Tape* tape = recording_tape({&x})) {
    tape->record(result, {x}, [x, result] {
      const auto& g = out_grad(result);
      auto& gx = grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Attention

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch, std::size_t seq,
                 std::size_t heads) {
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  const std::size_t d = q.cols();
  if (q.rows() != batch * seq) {
    throw DimensionError("attention: " + std::to_string(q.rows()) + " rows is not batch*seq = " +
                         std::to_string(batch) + "*" + std::to_string(seq));
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                         " heads");
  }
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto Q = q.data(), K = k.data(), V = v.data();
  std::vector<double> out(q.numel(), 0.0);
  std::vector<double> probs(batch * heads * seq * seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs.data() + (b * heads + h) * seq * seq;
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < seq; ++i) {
        const double* qi = Q.data() + (b * seq + i) * d + off;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < seq; ++j) {
          const double* kj = K.data() + (b * seq + j) * d + off;
          double s = 0.0;
          for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
          s *= sc;
          P[i * seq + j] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          P[i * seq + j] = std::exp(P[i * seq + j] - mx);
          z += P[i * seq + j];
        }
        double* oi = out.data() + (b * seq + i) * d + off;
        for (std::size_t j = 0; j < seq; ++j) {
          P[i * seq + j] /= z;
          const double* vj = V.data() + (b * seq + j) * d + off;
          const double p = P[i * seq + j];
          for (std::size_t t = 0; t < dh; ++t) oi[t] += p * vj[t];
        }
      }
    }
  }
  Tensor result(q.shape(), std::move(out));
  if (Tape* tape = recording_tape({&q, &k, &v})) {
    tape->record(result, {q, k, v}, [q, k, v, result, batch, seq, heads, d, dh, sc, pr = std::move(probs)] {
      const auto& g = out_grad(result);
      const auto Q = q.data(), K = k.data(), V = v.data();
      std::vector<double>* gq = wants_grad(q) ? &grad_of(q) : nullptr;
      std::vector<double>* gk = wants_grad(k) ? &grad_of(k) : nullptr;
      std::vector<double>* gv = wants_grad(v) ? &grad_of(v) : nullptr;
      std::vector<double> dS(seq * seq);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
          const double* P = pr.data() + (b * heads + h) * seq * seq;
          const std::size_t off = h * dh;
          for (std::size_t i = 0; i < seq; ++i) {
            const double* gi = g.data() + (b * seq + i) * d + off;
            double rowdot = 0.0;
            for (std::size_t j = 0; j < seq; ++j) {
              const double* vj = V.data() + (b * seq + j) * d + off;
              double dp = 0.0;
              for (std::size_t t = 0; t < dh; ++t) dp += gi[t] * vj[t];
              dS[i * seq + j] = dp;
              rowdot += dp * P[i * seq + j];
              if (gv) {
                double* gvj = gv->data() + (b * seq + j) * d + off;
                const double p = P[i * seq + j];
                for (std::size_t t = 0; t < dh; ++t) gvj[t] += p * gi[t];
              }
            }
            for (std::size_t j = 0; j < seq; ++j) dS[i * seq + j] = P[i * seq + j] * (dS[i * seq + j] - rowdot) * sc;
          }
          for (std::size_t i = 0; i < seq; ++i) {
            const double* qi = Q.data() + (b * seq + i) * d + off;
            for (std::size_t j = 0; j < seq; ++j) {
              const double s = dS[i * seq + j];
              const double* kj = K.data() + (b * seq + j) * d + off;
              if (gq) {
                double* gqi = gq->data() + (b * seq + i) * d + off;
                for (std::size_t t = 0; t < dh; ++t) gqi[t] += s * kj[t];
              }
              if (gk) {
                double* gkj = gk->data() + (b * seq + j) * d + off;
                for (std::size_t t = 0; t < dh; ++t) gkj[t] += s * qi[t];
              }
            }
          }
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Gradient checking

namespace {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace

double grad_check(const std::function<Tensor()>& f, std::span<const Tensor> params, double h, double floor) {
  std::vector<Tensor> ps(params.begin(), params.end());
  std::vector<bool> saved_flags;
  for (auto& p : ps) {
    saved_flags.push_back(p.requires_grad());
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = f();
    tape.backward(loss);
  }
  double worst = 0.0;
  Tape::Pause pause;
  for (auto& p : ps) {
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    if (analytic.empty()) analytic.assign(p.numel(), 0.0);
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + h;
      const double fp = f().item();
      values[i] = orig - h;
      const double fm = f().item();
      values[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      worst = std::max(worst, relative_error(analytic[i], numeric, floor));
    }
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    ps[i].zero_grad();
    ps[i].set_requires_grad(saved_flags[i]);
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h, double floor) {
  Tensor probe = x.detach();
  const Tensor params[] = {probe};
  return grad_check([&] { return f(probe); }, params, h, floor);
}

}  // namespace lagcd
