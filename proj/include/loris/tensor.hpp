#pragma once

// Dense float tensors with reverse-mode automatic differentiation on a
// define-by-run tape. Scalar type is a template parameter; training runs
// in float, gradient-check paths instantiate double.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "loris/errors.hpp"

namespace loris {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::vector<long> shape_strides(const Shape& s) {
  std::vector<long> st(s.size());
  long acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Trailing-dimension broadcast. Shorter shape is padded with leading 1s;
// each aligned pair must match or contain a 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (size_t i = 0; i < n; ++i) {
    int da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    int db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1)
      throw DimensionError("broadcast mismatch: " + shape_str(a) + " vs " +
                           shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

template <typename S>
struct TensorData {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // sized lazily, same length as value
  bool requires_grad = false;
};

template <typename S>
class Tape;

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<long>(data.size()))
      throw DimensionError("data length " + std::to_string(data.size()) +
                           " does not fill shape " + shape_str(shape));
    Tensor t;
    t.d_ = std::make_shared<TensorData<S>>();
    t.d_->shape = std::move(shape);
    t.d_->value = std::move(data);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<S> v(shape_numel(shape), S(0));
    return from(std::move(shape), std::move(v), requires_grad);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) {
    std::vector<S> v(shape_numel(shape), S(1));
    return from(std::move(shape), std::move(v), requires_grad);
  }
  static Tensor full(Shape shape, S fill, bool requires_grad = false) {
    std::vector<S> v(shape_numel(shape), fill);
    return from(std::move(shape), std::move(v), requires_grad);
  }
  static Tensor scalar(S v) { return from({}, {v}); }

  template <typename Rng>
  static Tensor randn(Shape shape, Rng& rng, S stddev = S(1), bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<S> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<S>(dist(rng)) * stddev;
    return from(std::move(shape), std::move(v), requires_grad);
  }

  template <typename Rng>
  static Tensor uniform(Shape shape, Rng& rng, S lo, S hi, bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                                static_cast<double>(hi));
    std::vector<S> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<S>(dist(rng));
    return from(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int dim() const { return static_cast<int>(d_->shape.size()); }
  long size() const { return static_cast<long>(d_->value.size()); }
  int dim_size(int axis) const { return d_->shape[normalize_axis(axis)]; }

  int normalize_axis(int axis) const {
    int n = dim();
    if (axis < 0) axis += n;
    if (axis < 0 || axis >= n)
      throw DimensionError("axis " + std::to_string(axis) +
                           " out of bounds for shape " + shape_str(shape()));
    return axis;
  }

  S* data() { return d_->value.data(); }
  const S* data() const { return d_->value.data(); }
  std::vector<S>& values() { return d_->value; }
  const std::vector<S>& values() const { return d_->value; }

  S item() const {
    if (size() != 1) throw ContractError("item() on tensor of size " + std::to_string(size()));
    return d_->value[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) {
    d_->requires_grad = rg;
    if (rg) ensure_grad();
  }

  bool has_grad() const { return !d_->grad.empty(); }
  void ensure_grad() {
    if (d_->grad.size() != d_->value.size()) d_->grad.assign(d_->value.size(), S(0));
  }
  S* grad() {
    ensure_grad();
    return d_->grad.data();
  }
  const std::vector<S>& grad_values() const { return d_->grad; }
  void zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), S(0));
  }

  // Value copy detached from any tape.
  Tensor detach() const { return from(shape(), values()); }

  std::shared_ptr<TensorData<S>> impl() const { return d_; }

  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  Eigen::Map<Vec> vec() { return Eigen::Map<Vec>(data(), size()); }
  Eigen::Map<const Vec> vec() const { return Eigen::Map<const Vec>(data(), size()); }

 private:
  std::shared_ptr<TensorData<S>> d_;
};

// Define-by-run tape: ops append backward closures in execution order,
// backward() replays them in reverse. A tape is active from construction
// to destruction on its thread.
template <typename S>
class Tape {
 public:
  Tape() : prev_(active_) { active_ = this; }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::shared_ptr<TensorData<S>> output,
              std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
    outputs_.push_back(std::move(output));
  }

  size_t size() const { return ops_.size(); }

  // Propagates d(loss)/d(leaf) into every requires_grad leaf. Non-leaf
  // (op output) gradients are reset first, so repeated calls accumulate
  // into the leaves only.
  void backward(Tensor<S> loss) {
    if (loss.size() != 1)
      throw ContractError("backward requires a scalar loss, got shape " +
                          shape_str(loss.shape()));
    for (auto& o : outputs_) std::fill(o->grad.begin(), o->grad.end(), S(0));
    loss.ensure_grad();
    loss.grad()[0] = S(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> ops_;
  std::vector<std::shared_ptr<TensorData<S>>> outputs_;
  Tape* prev_;
  static thread_local Tape* active_;
};

template <typename S>
thread_local Tape<S>* Tape<S>::active_ = nullptr;

namespace detail {

template <typename S>
bool trace(const Tensor<S>& t) {
  return Tape<S>::active() && t.requires_grad();
}

// Strides into `in` for iterating the broadcast shape `out`; broadcast
// dimensions get stride 0.
inline std::vector<long> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<long> st(out.size(), 0);
  auto in_st = shape_strides(in);
  size_t off = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i)
    st[off + i] = (in[i] == 1 && out[off + i] != 1) ? 0 : in_st[i];
  return st;
}

// Walk a flat index over `out_shape`, producing the mapped flat offsets
// into two broadcast inputs.
template <typename Fn>
void for_each_broadcast(const Shape& out_shape, const std::vector<long>& sa,
                        const std::vector<long>& sb, Fn&& fn) {
  long n = shape_numel(out_shape);
  int nd = static_cast<int>(out_shape.size());
  std::vector<int> idx(nd, 0);
  long oa = 0, ob = 0;
  for (long i = 0; i < n; ++i) {
    fn(i, oa, ob);
    for (int d = nd - 1; d >= 0; --d) {
      idx[d]++;
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out_shape[d]) break;
      idx[d] = 0;
      oa -= sa[d] * out_shape[d];
      ob -= sb[d] * out_shape[d];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

enum class EwBinary { Add, Sub, Mul, Div };
enum class EwUnary { Neg, Exp, Ln, Tanh, Sigmoid, Relu, Silu, Square, Sqrt, Sin };

template <typename S>
Tensor<S> elementwise(EwBinary kind, const Tensor<S>& a, const Tensor<S>& b) {
  Shape os = broadcast_shape(a.shape(), b.shape());
  auto sa = detail::broadcast_strides(a.shape(), os);
  auto sb = detail::broadcast_strides(b.shape(), os);
  Tensor<S> out = Tensor<S>::zeros(os);
  const S* av = a.data();
  const S* bv = b.data();
  S* ov = out.data();
  switch (kind) {
    case EwBinary::Add:
      detail::for_each_broadcast(os, sa, sb,
                                 [&](long i, long ia, long ib) { ov[i] = av[ia] + bv[ib]; });
      break;
    case EwBinary::Sub:
      detail::for_each_broadcast(os, sa, sb,
                                 [&](long i, long ia, long ib) { ov[i] = av[ia] - bv[ib]; });
      break;
    case EwBinary::Mul:
      detail::for_each_broadcast(os, sa, sb,
                                 [&](long i, long ia, long ib) { ov[i] = av[ia] * bv[ib]; });
      break;
    case EwBinary::Div:
      detail::for_each_broadcast(os, sa, sb, [&](long i, long ia, long ib) {
        if (bv[ib] == S(0)) throw DomainError("elementwise division by zero");
        ov[i] = av[ia] / bv[ib];
      });
      break;
  }
  bool ta = detail::trace(a), tb = detail::trace(b);
  if (ta || tb) {
    out.set_requires_grad(true);
    auto ad = a.impl();
    auto bd = b.impl();
    auto od = out.impl();
    Tape<S>::active()->record(od, [kind, ad, bd, od, os, sa, sb, ta, tb]() {
      const S* g = od->grad.data();
      const S* av = ad->value.data();
      const S* bv = bd->value.data();
      S* ga = ta ? ad->grad.data() : nullptr;
      S* gb = tb ? bd->grad.data() : nullptr;
      detail::for_each_broadcast(os, sa, sb, [&](long i, long ia, long ib) {
        switch (kind) {
          case EwBinary::Add:
            if (ga) ga[ia] += g[i];
            if (gb) gb[ib] += g[i];
            break;
          case EwBinary::Sub:
            if (ga) ga[ia] += g[i];
            if (gb) gb[ib] -= g[i];
            break;
          case EwBinary::Mul:
            if (ga) ga[ia] += g[i] * bv[ib];
            if (gb) gb[ib] += g[i] * av[ia];
            break;
          case EwBinary::Div:
            if (ga) ga[ia] += g[i] / bv[ib];
            if (gb) gb[ib] -= g[i] * av[ia] / (bv[ib] * bv[ib]);
            break;
        }
      });
    });
    if (ta) a.impl()->grad.resize(a.size(), S(0));
    if (tb) b.impl()->grad.resize(b.size(), S(0));
  }
  return out;
}

template <typename S>
Tensor<S> elementwise(EwUnary kind, const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* av = a.data();
  S* ov = out.data();
  long n = a.size();
  for (long i = 0; i < n; ++i) {
    S x = av[i];
    switch (kind) {
      case EwUnary::Neg: ov[i] = -x; break;
      case EwUnary::Exp: ov[i] = std::exp(x); break;
      case EwUnary::Ln:
        if (x <= S(0)) throw DomainError("ln of non-positive value");
        ov[i] = std::log(x);
        break;
      case EwUnary::Tanh: ov[i] = std::tanh(x); break;
      case EwUnary::Sigmoid: ov[i] = S(1) / (S(1) + std::exp(-x)); break;
      case EwUnary::Relu: ov[i] = x > S(0) ? x : S(0); break;
      case EwUnary::Silu: ov[i] = x / (S(1) + std::exp(-x)); break;
      case EwUnary::Square: ov[i] = x * x; break;
      case EwUnary::Sqrt:
        if (x < S(0)) throw DomainError("sqrt of negative value");
        ov[i] = std::sqrt(x);
        break;
      case EwUnary::Sin: ov[i] = std::sin(x); break;
    }
  }
  if (detail::trace(a)) {
    out.set_requires_grad(true);
    auto ad = a.impl();
    auto od = out.impl();
    Tape<S>::active()->record(od, [kind, ad, od, n]() {
      const S* g = od->grad.data();
      const S* av = ad->value.data();
      const S* ov = od->value.data();
      S* ga = ad->grad.data();
      for (long i = 0; i < n; ++i) {
        S d = S(0);
        switch (kind) {
          case EwUnary::Neg: d = S(-1); break;
          case EwUnary::Exp: d = ov[i]; break;
          case EwUnary::Ln: d = S(1) / av[i]; break;
          case EwUnary::Tanh: d = S(1) - ov[i] * ov[i]; break;
          case EwUnary::Sigmoid: d = ov[i] * (S(1) - ov[i]); break;
          case EwUnary::Relu: d = av[i] > S(0) ? S(1) : S(0); break;
          case EwUnary::Silu: {
            S s = S(1) / (S(1) + std::exp(-av[i]));
            d = s * (S(1) + av[i] * (S(1) - s));
            break;
          }
          case EwUnary::Square: d = S(2) * av[i]; break;
          case EwUnary::Sqrt: d = S(0.5) / ov[i]; break;
          case EwUnary::Sin: d = std::cos(av[i]); break;
        }
        ga[i] += g[i] * d;
      }
    });
    a.impl()->grad.resize(a.size(), S(0));
  }
  return out;
}

template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) { return elementwise(EwBinary::Add, a, b); }
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) { return elementwise(EwBinary::Sub, a, b); }
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) { return elementwise(EwBinary::Mul, a, b); }
template <typename S> Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) { return elementwise(EwBinary::Div, a, b); }
template <typename S> Tensor<S> neg(const Tensor<S>& a) { return elementwise(EwUnary::Neg, a); }
template <typename S> Tensor<S> exp(const Tensor<S>& a) { return elementwise(EwUnary::Exp, a); }
template <typename S> Tensor<S> ln(const Tensor<S>& a) { return elementwise(EwUnary::Ln, a); }
template <typename S> Tensor<S> tanh(const Tensor<S>& a) { return elementwise(EwUnary::Tanh, a); }
template <typename S> Tensor<S> sigmoid(const Tensor<S>& a) { return elementwise(EwUnary::Sigmoid, a); }
template <typename S> Tensor<S> relu(const Tensor<S>& a) { return elementwise(EwUnary::Relu, a); }
template <typename S> Tensor<S> silu(const Tensor<S>& a) { return elementwise(EwUnary::Silu, a); }
template <typename S> Tensor<S> square(const Tensor<S>& a) { return elementwise(EwUnary::Square, a); }
template <typename S> Tensor<S> sqrt(const Tensor<S>& a) { return elementwise(EwUnary::Sqrt, a); }
template <typename S> Tensor<S> sin(const Tensor<S>& a) { return elementwise(EwUnary::Sin, a); }

template <typename S> Tensor<S> add(const Tensor<S>& a, S b) { return add(a, Tensor<S>::scalar(b)); }
template <typename S> Tensor<S> mul(const Tensor<S>& a, S b) { return mul(a, Tensor<S>::scalar(b)); }
template <typename S> Tensor<S> sub(const Tensor<S>& a, S b) { return sub(a, Tensor<S>::scalar(b)); }

template <typename S> Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <typename S> Tensor<S> operator/(const Tensor<S>& a, const Tensor<S>& b) { return div(a, b); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a) { return neg(a); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, S s) { return mul(a, s); }
template <typename S> Tensor<S> operator*(S s, const Tensor<S>& a) { return mul(a, s); }
template <typename S> Tensor<S> operator+(const Tensor<S>& a, S s) { return add(a, s); }

// ---------------------------------------------------------------------------
// Matrix multiply with broadcast batch dimensions.

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.dim() < 2 || b.dim() < 2)
    throw DimensionError("matmul needs rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  int m = a.shape()[a.dim() - 2], k = a.shape()[a.dim() - 1];
  int kb = b.shape()[b.dim() - 2], n = b.shape()[b.dim() - 1];
  if (k != kb)
    throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  Shape ab(a.shape().begin(), a.shape().end() - 2);
  Shape bb(b.shape().begin(), b.shape().end() - 2);
  Shape batch = broadcast_shape(ab, bb);
  Shape os = batch;
  os.push_back(m);
  os.push_back(n);

  auto sa = detail::broadcast_strides(ab, batch);
  auto sb = detail::broadcast_strides(bb, batch);
  long nbatch = shape_numel(batch);

  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Tensor<S> out = Tensor<S>::zeros(os);

  // Flat batch offsets into a and b, honoring broadcast (stride 0) dims.
  std::vector<long> offa(nbatch, 0), offb(nbatch, 0);
  {
    auto bst = shape_strides(batch);
    for (long bi = 0; bi < nbatch; ++bi) {
      long rem = bi;
      for (size_t d = 0; d < batch.size(); ++d) {
        long id = rem / bst[d];
        rem %= bst[d];
        offa[bi] += id * sa[d];
        offb[bi] += id * sb[d];
      }
    }
  }

  for (long bi = 0; bi < nbatch; ++bi) {
    Eigen::Map<const Mat> A(a.data() + offa[bi] * m * k, m, k);
    Eigen::Map<const Mat> B(b.data() + offb[bi] * k * n, k, n);
    Eigen::Map<Mat> C(out.data() + bi * m * n, m, n);
    C.noalias() = A * B;
  }

  bool ta = detail::trace(a), tb = detail::trace(b);
  if (ta || tb) {
    out.set_requires_grad(true);
    auto ad = a.impl();
    auto bd = b.impl();
    auto od = out.impl();
    Tape<S>::active()->record(od, [=]() {
      for (long bi = 0; bi < nbatch; ++bi) {
        Eigen::Map<const Mat> A(ad->value.data() + offa[bi] * m * k, m, k);
        Eigen::Map<const Mat> B(bd->value.data() + offb[bi] * k * n, k, n);
        Eigen::Map<const Mat> G(od->grad.data() + bi * m * n, m, n);
        if (ta) {
          Eigen::Map<Mat> GA(ad->grad.data() + offa[bi] * m * k, m, k);
          GA.noalias() += G * B.transpose();
        }
        if (tb) {
          Eigen::Map<Mat> GB(bd->grad.data() + offb[bi] * k * n, k, n);
          GB.noalias() += A.transpose() * G;
        }
      }
    });
    if (ta) a.impl()->grad.resize(a.size(), S(0));
    if (tb) b.impl()->grad.resize(b.size(), S(0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// 1D convolution (cross-correlation convention) via im2col + GEMM.

namespace detail {

// col is [Cin*K, Lout], gathered from x[Cin, L] with stride/pad.
template <typename S>
void im2col(const S* x, int cin, int len, int ksize, int stride, int pad,
            int lout, S* col) {
  for (int c = 0; c < cin; ++c)
    for (int kk = 0; kk < ksize; ++kk) {
      S* row = col + (c * ksize + kk) * lout;
      const S* xc = x + c * len;
      for (int o = 0; o < lout; ++o) {
        int p = o * stride + kk - pad;
        row[o] = (p >= 0 && p < len) ? xc[p] : S(0);
      }
    }
}

template <typename S>
void col2im_add(const S* col, int cin, int len, int ksize, int stride, int pad,
                int lout, S* x) {
  for (int c = 0; c < cin; ++c)
    for (int kk = 0; kk < ksize; ++kk) {
      const S* row = col + (c * ksize + kk) * lout;
      S* xc = x + c * len;
      for (int o = 0; o < lout; ++o) {
        int p = o * stride + kk - pad;
        if (p >= 0 && p < len) xc[p] += row[o];
      }
    }
}

}  // namespace detail

template <typename S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias,
                 int stride = 1, int pad = 0) {
  if (x.dim() != 3 || w.dim() != 3)
    throw DimensionError("conv1d expects x[B,Cin,L], w[Cout,Cin,K], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  int B = x.shape()[0], cin = x.shape()[1], L = x.shape()[2];
  int cout = w.shape()[0], wcin = w.shape()[1], K = w.shape()[2];
  if (cin != wcin)
    throw DimensionError("conv1d channel mismatch: x has " + std::to_string(cin) +
                         ", w expects " + std::to_string(wcin));
  if (stride < 1) throw ConfigError("conv1d stride must be >= 1");
  if (K > L + 2 * pad)
    throw DimensionError("conv1d kernel " + std::to_string(K) +
                         " larger than padded input " + std::to_string(L + 2 * pad));
  if (bias.defined() && bias.size() != cout)
    throw DimensionError("conv1d bias size != Cout");
  int lout = (L + 2 * pad - K) / stride + 1;

  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Tensor<S> out = Tensor<S>::zeros({B, cout, lout});
  std::vector<S> col(static_cast<size_t>(cin) * K * lout);
  Eigen::Map<const Mat> W(w.data(), cout, cin * K);
  for (int b = 0; b < B; ++b) {
    detail::im2col(x.data() + static_cast<long>(b) * cin * L, cin, L, K, stride,
                   pad, lout, col.data());
    Eigen::Map<const Mat> Col(col.data(), cin * K, lout);
    Eigen::Map<Mat> O(out.data() + static_cast<long>(b) * cout * lout, cout, lout);
    O.noalias() = W * Col;
    if (bias.defined())
      for (int c = 0; c < cout; ++c) O.row(c).array() += bias.data()[c];
  }

  bool tx = detail::trace(x), tw = detail::trace(w);
  bool tb = bias.defined() && detail::trace(bias);
  if (tx || tw || tb) {
    out.set_requires_grad(true);
    auto xd = x.impl();
    auto wd = w.impl();
    auto bd = bias.defined() ? bias.impl() : nullptr;
    auto od = out.impl();
    Tape<S>::active()->record(od, [=]() {
      std::vector<S> col(static_cast<size_t>(cin) * K * lout);
      std::vector<S> gcol(static_cast<size_t>(cin) * K * lout);
      Eigen::Map<const Mat> W(wd->value.data(), cout, cin * K);
      for (int b = 0; b < B; ++b) {
        Eigen::Map<const Mat> G(od->grad.data() + static_cast<long>(b) * cout * lout,
                                cout, lout);
        if (tw || tx)
          detail::im2col(xd->value.data() + static_cast<long>(b) * cin * L, cin, L,
                         K, stride, pad, lout, col.data());
        if (tw) {
          Eigen::Map<const Mat> Col(col.data(), cin * K, lout);
          Eigen::Map<Mat> GW(wd->grad.data(), cout, cin * K);
          GW.noalias() += G * Col.transpose();
        }
        if (tx) {
          Eigen::Map<Mat> GCol(gcol.data(), cin * K, lout);
          GCol.noalias() = W.transpose() * G;
          detail::col2im_add(gcol.data(), cin, L, K, stride, pad, lout,
                             xd->grad.data() + static_cast<long>(b) * cin * L);
        }
        if (tb) {
          for (int c = 0; c < cout; ++c) bd->grad[c] += G.row(c).sum();
        }
      }
    });
    if (tx) x.impl()->grad.resize(x.size(), S(0));
    if (tw) w.impl()->grad.resize(w.size(), S(0));
    if (tb) bias.impl()->grad.resize(bias.size(), S(0));
  }
  return out;
}

template <typename S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& w, int stride = 1, int pad = 0) {
  return conv1d(x, w, Tensor<S>(), stride, pad);
}

// Transposed 1D convolution; w is [Cin, Cout, K]. Lout = (L-1)*stride - 2*pad + K.
template <typename S>
Tensor<S> conv_transpose1d(const Tensor<S>& x, const Tensor<S>& w,
                           const Tensor<S>& bias, int stride = 1, int pad = 0) {
  if (x.dim() != 3 || w.dim() != 3)
    throw DimensionError("conv_transpose1d expects x[B,Cin,L], w[Cin,Cout,K]");
  int B = x.shape()[0], cin = x.shape()[1], L = x.shape()[2];
  int wcin = w.shape()[0], cout = w.shape()[1], K = w.shape()[2];
  if (cin != wcin)
    throw DimensionError("conv_transpose1d channel mismatch: x has " +
                         std::to_string(cin) + ", w expects " + std::to_string(wcin));
  if (stride < 1) throw ConfigError("conv_transpose1d stride must be >= 1");
  int lout = (L - 1) * stride - 2 * pad + K;
  if (lout < 1) throw DimensionError("conv_transpose1d output length < 1");

  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Tensor<S> out = Tensor<S>::zeros({B, cout, lout});
  // col[Cout*K, L] = W^T[Cout*K, Cin] * x[Cin, L], then scatter.
  std::vector<S> col(static_cast<size_t>(cout) * K * L);
  Eigen::Map<const Mat> W(w.data(), cin, cout * K);
  for (int b = 0; b < B; ++b) {
    Eigen::Map<const Mat> X(x.data() + static_cast<long>(b) * cin * L, cin, L);
    Eigen::Map<Mat> Col(col.data(), cout * K, L);
    Col.noalias() = W.transpose() * X;
    detail::col2im_add(col.data(), cout, lout, K, stride, pad, L,
                       out.data() + static_cast<long>(b) * cout * lout);
    if (bias.defined()) {
      Eigen::Map<Mat> O(out.data() + static_cast<long>(b) * cout * lout, cout, lout);
      for (int c = 0; c < cout; ++c) O.row(c).array() += bias.data()[c];
    }
  }

  bool tx = detail::trace(x), tw = detail::trace(w);
  bool tb = bias.defined() && detail::trace(bias);
  if (tx || tw || tb) {
    out.set_requires_grad(true);
    auto xd = x.impl();
    auto wd = w.impl();
    auto bd = bias.defined() ? bias.impl() : nullptr;
    auto od = out.impl();
    Tape<S>::active()->record(od, [=]() {
      std::vector<S> gcol(static_cast<size_t>(cout) * K * L);
      Eigen::Map<const Mat> W(wd->value.data(), cin, cout * K);
      for (int b = 0; b < B; ++b) {
        // gcol = im2col of the output gradient.
        detail::im2col(od->grad.data() + static_cast<long>(b) * cout * lout, cout,
                       lout, K, stride, pad, L, gcol.data());
        Eigen::Map<const Mat> GCol(gcol.data(), cout * K, L);
        if (tx) {
          Eigen::Map<Mat> GX(xd->grad.data() + static_cast<long>(b) * cin * L, cin, L);
          GX.noalias() += W * GCol;
        }
        if (tw) {
          Eigen::Map<const Mat> X(xd->value.data() + static_cast<long>(b) * cin * L,
                                  cin, L);
          Eigen::Map<Mat> GW(wd->grad.data(), cin, cout * K);
          GW.noalias() += X * GCol.transpose();
        }
        if (tb) {
          Eigen::Map<const Mat> G(od->grad.data() + static_cast<long>(b) * cout * lout,
                                  cout, lout);
          for (int c = 0; c < cout; ++c) bd->grad[c] += G.row(c).sum();
        }
      }
    });
    if (tx) x.impl()->grad.resize(x.size(), S(0));
    if (tw) w.impl()->grad.resize(w.size(), S(0));
    if (tb) bias.impl()->grad.resize(bias.size(), S(0));
  }
  return out;
}

template <typename S>
Tensor<S> conv_transpose1d(const Tensor<S>& x, const Tensor<S>& w, int stride = 1,
                           int pad = 0) {
  return conv_transpose1d(x, w, Tensor<S>(), stride, pad);
}

// ---------------------------------------------------------------------------
// Softmax along an axis, max-stabilized.

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  axis = x.normalize_axis(axis);
  int n = x.shape()[axis];
  long outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.shape()[d];
  for (int d = axis + 1; d < x.dim(); ++d) inner *= x.shape()[d];

  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* xv = x.data();
  S* ov = out.data();
  for (long o = 0; o < outer; ++o)
    for (long i = 0; i < inner; ++i) {
      const S* xs = xv + o * n * inner + i;
      S* os = ov + o * n * inner + i;
      S mx = xs[0];
      for (int j = 1; j < n; ++j) mx = std::max(mx, xs[j * inner]);
      S sum = S(0);
      for (int j = 0; j < n; ++j) {
        S e = std::exp(xs[j * inner] - mx);
        os[j * inner] = e;
        sum += e;
      }
      for (int j = 0; j < n; ++j) os[j * inner] /= sum;
    }

  if (detail::trace(x)) {
    out.set_requires_grad(true);
    auto xd = x.impl();
    auto od = out.impl();
    Tape<S>::active()->record(od, [=]() {
      const S* y = od->value.data();
      const S* g = od->grad.data();
      S* gx = xd->grad.data();
      for (long o = 0; o < outer; ++o)
        for (long i = 0; i < inner; ++i) {
          long base = o * n * inner + i;
          S dot = S(0);
          for (int j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (int j = 0; j < n; ++j)
            gx[base + j * inner] += y[base + j * inner] * (g[base + j * inner] - dot);
        }
    });
    x.impl()->grad.resize(x.size(), S(0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions.

namespace detail {

template <typename S>
Tensor<S> reduce(const Tensor<S>& x, int axis, bool keepdim, bool is_mean) {
  axis = x.normalize_axis(axis);
  int n = x.shape()[axis];
  long outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.shape()[d];
  for (int d = axis + 1; d < x.dim(); ++d) inner *= x.shape()[d];
  Shape os = x.shape();
  if (keepdim)
    os[axis] = 1;
  else
    os.erase(os.begin() + axis);

  Tensor<S> out = Tensor<S>::zeros(os);
  const S* xv = x.data();
  S* ov = out.data();
  S scale = is_mean ? S(1) / S(n) : S(1);
  for (long o = 0; o < outer; ++o)
    for (long i = 0; i < inner; ++i) {
      S acc = S(0);
      for (int j = 0; j < n; ++j) acc += xv[o * n * inner + j * inner + i];
      ov[o * inner + i] = acc * scale;
    }

  if (trace(x)) {
    out.set_requires_grad(true);
    auto xd = x.impl();
    auto od = out.impl();
    Tape<S>::active()->record(od, [=]() {
      const S* g = od->grad.data();
      S* gx = xd->grad.data();
      for (long o = 0; o < outer; ++o)
        for (long i = 0; i < inner; ++i) {
          S gv = g[o * inner + i] * scale;
          for (int j = 0; j < n; ++j) gx[o * n * inner + j * inner + i] += gv;
        }
    });
    x.impl()->grad.resize(x.size(), S(0));
  }
  return out;
}

}  // namespace detail

template <typename S>
Tensor<S> sum(const Tensor<S>& x, int axis, bool keepdim = false) {
  return detail::reduce(x, axis, keepdim, false);
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x, int axis, bool keepdim = false) {
  return detail::reduce(x, axis, keepdim, true);
}

// Full reduction to a scalar.
template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::scalar(x.vec().sum());
  if (detail::trace(x)) {
    out.set_requires_grad(true);
    auto xd = x.impl();
    auto od = out.impl();
    Tape<S>::active()->record(od, [=]() {
      S g = od->grad[0];
      for (auto& gv : xd->grad) gv += g;
    });
    x.impl()->grad.resize(x.size(), S(0));
  }
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return mul(sum(x), S(1) / S(x.size()));
}

// Max along an axis; backward routes to the (first) argmax.
template <typename S>
Tensor<S> max(const Tensor<S>& x, int axis, bool keepdim = false) {
  axis = x.normalize_axis(axis);
  int n = x.shape()[axis];
  long outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.shape()[d];
  for (int d = axis + 1; d < x.dim(); ++d) inner *= x.shape()[d];
  Shape os = x.shape();
  if (keepdim)
    os[axis] = 1;
  else
    os.erase(os.begin() + axis);

  Tensor<S> out = Tensor<S>::zeros(os);
  auto arg = std::make_shared<std::vector<int>>(outer * inner);
  const S* xv = x.data();
  S* ov = out.data();
  for (long o = 0; o < outer; ++o)
    for (long i = 0; i < inner; ++i) {
      S best = xv[o * n * inner + i];
      int bj = 0;
      for (int j = 1; j < n; ++j) {
        S v = xv[o * n * inner + j * inner + i];
        if (v > best) { best = v; bj = j; }
      }
      ov[o * inner + i] = best;
      (*arg)[o * inner + i] = bj;
    }

  if (detail::trace(x)) {
    out.set_requires_grad(true);
    auto xd = x.impl();
    auto od = out.impl();
    Tape<S>::active()->record(od, [=]() {
      const S* g = od->grad.data();
      S* gx = xd->grad.data();
      for (long o = 0; o < outer; ++o)
        for (long i = 0; i < inner; ++i) {
          int j = (*arg)[o * inner + i];
          gx[o * n * inner + j * inner + i] += g[o * inner + i];
        }
    });
    x.impl()->grad.resize(x.size(), S(0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops.

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw DimensionError("reshape from " + shape_str(x.shape()) + " to " +
                         shape_str(shape) + " changes element count");
  Tensor<S> out = Tensor<S>::from(std::move(shape), x.values());
  if (detail::trace(x)) {
    out.set_requires_grad(true);
    auto xd = x.impl();
    auto od = out.impl();
    Tape<S>::active()->record(od, [=]() {
      for (long i = 0; i < static_cast<long>(xd->grad.size()); ++i)
        xd->grad[i] += od->grad[i];
    });
    x.impl()->grad.resize(x.size(), S(0));
  }
  return out;
}

// Swap two axes (materialized copy).
template <typename S>
Tensor<S> transpose(const Tensor<S>& x, int axis_a, int axis_b) {
  axis_a = x.normalize_axis(axis_a);
  axis_b = x.normalize_axis(axis_b);
  Shape os = x.shape();
  std::swap(os[axis_a], os[axis_b]);
  auto in_st = shape_strides(x.shape());
  std::swap(in_st[axis_a], in_st[axis_b]);
  auto out_st = shape_strides(os);

  Tensor<S> out = Tensor<S>::zeros(os);
  long n = x.size();
  int nd = x.dim();
  const S* xv = x.data();
  S* ov = out.data();
  for (long i = 0; i < n; ++i) {
    long rem = i, src = 0;
    for (int d = 0; d < nd; ++d) {
      long id = rem / out_st[d];
      rem %= out_st[d];
      src += id * in_st[d];
    }
    ov[i] = xv[src];
  }
  if (detail::trace(x)) {
    out.set_requires_grad(true);
    auto xd = x.impl();
    auto od = out.impl();
    Tape<S>::active()->record(od, [=]() {
      for (long i = 0; i < n; ++i) {
        long rem = i, src = 0;
        for (int d = 0; d < nd; ++d) {
          long id = rem / out_st[d];
          rem %= out_st[d];
          src += id * in_st[d];
        }
        xd->grad[src] += od->grad[i];
      }
    });
    x.impl()->grad.resize(x.size(), S(0));
  }
  return out;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, int axis) {
  if (xs.empty()) throw ContractError("concat of empty tensor list");
  axis = xs[0].normalize_axis(axis);
  Shape os = xs[0].shape();
  int total = 0;
  for (const auto& t : xs) {
    if (t.dim() != xs[0].dim())
      throw DimensionError("concat rank mismatch");
    for (int d = 0; d < t.dim(); ++d)
      if (d != axis && t.shape()[d] != os[d])
        throw DimensionError("concat shape mismatch at axis " + std::to_string(d) +
                             ": " + shape_str(t.shape()) + " vs " + shape_str(os));
    total += t.shape()[axis];
  }
  os[axis] = total;

  long outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= os[d];
  for (int d = axis + 1; d < static_cast<int>(os.size()); ++d) inner *= os[d];

  Tensor<S> out = Tensor<S>::zeros(os);
  S* ov = out.data();
  long off = 0;
  for (const auto& t : xs) {
    int n = t.shape()[axis];
    const S* tv = t.data();
    for (long o = 0; o < outer; ++o)
      std::copy(tv + o * n * inner, tv + (o + 1) * n * inner,
                ov + o * total * inner + off * inner);
    off += n;
  }

  bool any = false;
  for (const auto& t : xs) any = any || detail::trace(t);
  if (any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData<S>>> impls;
    std::vector<bool> tr;
    for (const auto& t : xs) {
      impls.push_back(t.impl());
      tr.push_back(detail::trace(t));
      if (detail::trace(t)) t.impl()->grad.resize(t.size(), S(0));
    }
    auto od = out.impl();
    Tape<S>::active()->record(od, [=]() {
      long off = 0;
      for (size_t ti = 0; ti < impls.size(); ++ti) {
        int n = impls[ti]->shape[axis];
        if (tr[ti]) {
          S* g = impls[ti]->grad.data();
          const S* go = od->grad.data();
          for (long o = 0; o < outer; ++o)
            for (long j = 0; j < n * inner; ++j)
              g[o * n * inner + j] += go[o * total * inner + off * inner + j];
        }
        off += n;
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, int axis, int start, int end) {
  axis = x.normalize_axis(axis);
  int n = x.shape()[axis];
  if (start < 0 || end > n || start >= end)
    throw DimensionError("slice [" + std::to_string(start) + "," +
                         std::to_string(end) + ") out of bounds for axis size " +
                         std::to_string(n));
  Shape os = x.shape();
  os[axis] = end - start;
  long outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.shape()[d];
  for (int d = axis + 1; d < x.dim(); ++d) inner *= x.shape()[d];

  Tensor<S> out = Tensor<S>::zeros(os);
  int m = end - start;
  const S* xv = x.data();
  S* ov = out.data();
  for (long o = 0; o < outer; ++o)
    std::copy(xv + (o * n + start) * inner, xv + (o * n + end) * inner,
              ov + o * m * inner);

  if (detail::trace(x)) {
    out.set_requires_grad(true);
    auto xd = x.impl();
    auto od = out.impl();
    Tape<S>::active()->record(od, [=]() {
      S* gx = xd->grad.data();
      const S* g = od->grad.data();
      for (long o = 0; o < outer; ++o)
        for (long j = 0; j < static_cast<long>(m) * inner; ++j)
          gx[(o * n + start) * inner + j] += g[o * m * inner + j];
    });
    x.impl()->grad.resize(x.size(), S(0));
  }
  return out;
}

// Row gather from table[V, C]; backward scatter-adds into the gathered rows.
template <typename S>
Tensor<S> embedding(const Tensor<S>& table, const std::vector<int>& indices) {
  if (table.dim() != 2)
    throw DimensionError("embedding table must be 2D, got " + shape_str(table.shape()));
  int V = table.shape()[0], C = table.shape()[1];
  for (int idx : indices)
    if (idx < 0 || idx >= V)
      throw DomainError("embedding index " + std::to_string(idx) +
                        " out of range [0," + std::to_string(V) + ")");
  Tensor<S> out = Tensor<S>::zeros({static_cast<int>(indices.size()), C});
  for (size_t i = 0; i < indices.size(); ++i)
    std::copy(table.data() + static_cast<long>(indices[i]) * C,
              table.data() + static_cast<long>(indices[i] + 1) * C,
              out.data() + i * C);
  if (detail::trace(table)) {
    out.set_requires_grad(true);
    auto td = table.impl();
    auto od = out.impl();
    auto idx = indices;
    Tape<S>::active()->record(od, [=]() {
      for (size_t i = 0; i < idx.size(); ++i)
        for (int c = 0; c < C; ++c)
          td->grad[static_cast<long>(idx[i]) * C + c] += od->grad[i * C + c];
    });
    table.impl()->grad.resize(table.size(), S(0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization layers, composed from primitive ops (backward comes from
// the tape, no hand-derived rules).

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, S eps = S(1e-5)) {
  int C = x.shape().back();
  if (gamma.size() != C || beta.size() != C)
    throw DimensionError("layer_norm affine params must match last dim " +
                         std::to_string(C));
  Tensor<S> mu = mean(x, -1, /*keepdim=*/true);
  Tensor<S> xc = sub(x, mu);
  Tensor<S> var = mean(square(xc), -1, true);
  Tensor<S> norm = div(xc, sqrt(add(var, Tensor<S>::scalar(eps))));
  return add(mul(norm, reshape(gamma, {C})), reshape(beta, {C}));
}

template <typename S>
Tensor<S> group_norm(const Tensor<S>& x, int groups, const Tensor<S>& gamma,
                     const Tensor<S>& beta, S eps = S(1e-5)) {
  if (x.dim() != 3) throw DimensionError("group_norm expects x[B,C,L]");
  int B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  if (C % groups != 0)
    throw ConfigError("group_norm: channels " + std::to_string(C) +
                      " not divisible by groups " + std::to_string(groups));
  if (gamma.size() != C || beta.size() != C)
    throw DimensionError("group_norm affine params must match channels");
  Tensor<S> g = reshape(x, {B, groups, (C / groups) * L});
  Tensor<S> mu = mean(g, -1, true);
  Tensor<S> xc = sub(g, mu);
  Tensor<S> var = mean(square(xc), -1, true);
  Tensor<S> norm = reshape(div(xc, sqrt(add(var, Tensor<S>::scalar(eps)))), {B, C, L});
  return add(mul(norm, reshape(gamma, {C, 1})), reshape(beta, {C, 1}));
}

using TensorF = Tensor<float>;
using TapeF = Tape<float>;

}  // namespace loris
