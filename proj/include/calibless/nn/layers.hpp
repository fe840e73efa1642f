#pragma once

#include "../error.hpp"
#include "../random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace calibless::nn {

using Index = std::ptrdiff_t;

/// Feature maps of one sample, (channel, row, column) row-major.
struct Tensor
{
  Index c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(Index c, Index h, Index w)
      : c(c), h(h), w(w), v(static_cast<std::size_t>(c * h * w), 0.0)
  {
  }
  Index plane() const { return h * w; }
  Index size() const { return c * h * w; }
  double &at(Index ch, Index y, Index x) { return v[static_cast<std::size_t>((ch * h + y) * w + x)]; }
  double at(Index ch, Index y, Index x) const { return v[static_cast<std::size_t>((ch * h + y) * w + x)]; }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }
  bool same_shape(Tensor const &o) const { return c == o.c && h == o.h && w == o.w; }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<RowMatrix const>;

inline MatrixMap as_matrix(Tensor &t) { return {t.v.data(), t.c, t.plane()}; }
inline ConstMatrixMap as_matrix(Tensor const &t) { return {t.v.data(), t.c, t.plane()}; }

/// A named trainable array with its gradient accumulator.
struct Param
{
  std::string name;
  std::vector<Index> shape;
  std::vector<double> value;
  std::vector<double> grad;

  Param() = default;
  Param(std::string n, std::vector<Index> s)
      : name(std::move(n)), shape(std::move(s))
  {
    Index total = 1;
    for (auto e : shape) total *= e;
    value.assign(static_cast<std::size_t>(total), 0.0);
    grad.assign(value.size(), 0.0);
  }
  Index size() const { return static_cast<Index>(value.size()); }
  bool is_bias() const { return name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0; }
};

enum class Padding { zero, cyclic };

/// Same-size 2-D convolution (odd kernel), computed as a GEMM over an im2col buffer.
class Conv2d
{
public:
  Conv2d() = default;
  Conv2d(std::string const &name, Index in, Index out, Index k, Padding pad = Padding::zero)
      : in_(in), out_(out), k_(k), pad_(pad), weight_(name + ".w", {out, in, k, k}), bias_(name + ".b", {out})
  {
    require(k % 2 == 1, "Conv2d: kernel must be odd");
  }

  /// Uniform on +-sqrt(gain / fan_in); biases start at zero.
  void init(Rng &rng, double gain)
  {
    double const bound = std::sqrt(gain / static_cast<double>(in_ * k_ * k_));
    for (auto &v : weight_.value) v = rng.uniform(-bound, bound);
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0);
  }

  void forward(Tensor const &x, Tensor &y) const
  {
    require(x.c == in_, "Conv2d " + weight_.name + ": expected " + std::to_string(in_) + " input channels, got " + std::to_string(x.c));
    y = Tensor(out_, x.h, x.w);
    auto ym = as_matrix(y);
    ConstMatrixMap wm(weight_.value.data(), out_, in_ * k_ * k_);
    if (k_ == 1) {
      ym.noalias() = wm * as_matrix(x);
    } else {
      im2col(x);
      ConstMatrixMap cm(col_.data(), in_ * k_ * k_, x.plane());
      ym.noalias() = wm * cm;
    }
    for (Index o = 0; o < out_; ++o) ym.row(o).array() += bias_.value[static_cast<std::size_t>(o)];
  }

  /// Accumulates weight and bias gradients; writes the input gradient into dx when given.
  void backward(Tensor const &x, Tensor const &dy, Tensor *dx)
  {
    auto dym = as_matrix(dy);
    MatrixMap gw(weight_.grad.data(), out_, in_ * k_ * k_);
    ConstMatrixMap wm(weight_.value.data(), out_, in_ * k_ * k_);
    for (Index o = 0; o < out_; ++o) bias_.grad[static_cast<std::size_t>(o)] += dym.row(o).sum();
    if (k_ == 1) {
      gw.noalias() += dym * as_matrix(x).transpose();
      if (dx) {
        *dx = Tensor(in_, x.h, x.w);
        as_matrix(*dx).noalias() = wm.transpose() * dym;
      }
      return;
    }
    im2col(x);
    ConstMatrixMap cm(col_.data(), in_ * k_ * k_, x.plane());
    gw.noalias() += dym * cm.transpose();
    if (dx) {
      dcol_.resize(col_.size());
      MatrixMap dcm(dcol_.data(), in_ * k_ * k_, x.plane());
      dcm.noalias() = wm.transpose() * dym;
      *dx = Tensor(in_, x.h, x.w);
      col2im(*dx);
    }
  }

  Param &weight() { return weight_; }
  Param &bias() { return bias_; }
  Index in_channels() const { return in_; }
  Index out_channels() const { return out_; }

private:
  Index source(Index i, Index n, bool &inside) const
  {
    if (i >= 0 && i < n) {
      inside = true;
      return i;
    }
    if (pad_ == Padding::cyclic) {
      inside = true;
      return ((i % n) + n) % n;
    }
    inside = false;
    return 0;
  }

  void im2col(Tensor const &x) const
  {
    Index const r = k_ / 2, hw = x.plane();
    col_.assign(static_cast<std::size_t>(in_ * k_ * k_ * hw), 0.0);
    for (Index c = 0; c < in_; ++c)
      for (Index dy = 0; dy < k_; ++dy)
        for (Index dx = 0; dx < k_; ++dx) {
          double *row = col_.data() + ((c * k_ + dy) * k_ + dx) * hw;
          for (Index y = 0; y < x.h; ++y) {
            bool iny;
            Index const sy = source(y + dy - r, x.h, iny);
            if (!iny) continue;
            for (Index xx = 0; xx < x.w; ++xx) {
              bool inx;
              Index const sx = source(xx + dx - r, x.w, inx);
              if (inx) row[y * x.w + xx] = x.at(c, sy, sx);
            }
          }
        }
  }

  void col2im(Tensor &dx) const
  {
    Index const r = k_ / 2, hw = dx.plane();
    for (Index c = 0; c < in_; ++c)
      for (Index dy = 0; dy < k_; ++dy)
        for (Index dxk = 0; dxk < k_; ++dxk) {
          double const *row = dcol_.data() + ((c * k_ + dy) * k_ + dxk) * hw;
          for (Index y = 0; y < dx.h; ++y) {
            bool iny;
            Index const sy = source(y + dy - r, dx.h, iny);
            if (!iny) continue;
            for (Index xx = 0; xx < dx.w; ++xx) {
              bool inx;
              Index const sx = source(xx + dxk - r, dx.w, inx);
              if (inx) dx.at(c, sy, sx) += row[y * dx.w + xx];
            }
          }
        }
  }

  Index in_ = 0, out_ = 0, k_ = 1;
  Padding pad_ = Padding::zero;
  Param weight_, bias_;
  mutable std::vector<double> col_, dcol_;
};

inline void relu_inplace(Tensor &t)
{
  for (auto &v : t.v) v = v > 0.0 ? v : 0.0;
}

/// dy masked by the ReLU output; derivative at zero is zero.
inline void relu_backward(Tensor const &out, Tensor &grad)
{
  for (std::size_t i = 0; i < grad.v.size(); ++i)
    if (!(out.v[i] > 0.0)) grad.v[i] = 0.0;
}

inline Tensor avg_pool2(Tensor const &x)
{
  Tensor y(x.c, x.h / 2, x.w / 2);
  for (Index c = 0; c < x.c; ++c)
    for (Index yy = 0; yy < y.h; ++yy)
      for (Index xx = 0; xx < y.w; ++xx)
        y.at(c, yy, xx) = 0.25 * (x.at(c, 2 * yy, 2 * xx) + x.at(c, 2 * yy + 1, 2 * xx) + x.at(c, 2 * yy, 2 * xx + 1) +
                                  x.at(c, 2 * yy + 1, 2 * xx + 1));
  return y;
}

inline Tensor avg_pool2_backward(Tensor const &dy)
{
  Tensor dx(dy.c, dy.h * 2, dy.w * 2);
  for (Index c = 0; c < dx.c; ++c)
    for (Index y = 0; y < dx.h; ++y)
      for (Index x = 0; x < dx.w; ++x) dx.at(c, y, x) = 0.25 * dy.at(c, y / 2, x / 2);
  return dx;
}

inline Tensor upsample2(Tensor const &x)
{
  Tensor y(x.c, x.h * 2, x.w * 2);
  for (Index c = 0; c < y.c; ++c)
    for (Index yy = 0; yy < y.h; ++yy)
      for (Index xx = 0; xx < y.w; ++xx) y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
  return y;
}

inline Tensor upsample2_backward(Tensor const &dy)
{
  Tensor dx(dy.c, dy.h / 2, dy.w / 2);
  for (Index c = 0; c < dy.c; ++c)
    for (Index y = 0; y < dy.h; ++y)
      for (Index x = 0; x < dy.w; ++x) dx.at(c, y / 2, x / 2) += dy.at(c, y, x);
  return dx;
}

inline Tensor concat(Tensor const &a, Tensor const &b)
{
  Tensor y(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + a.size());
  return y;
}

inline void split(Tensor const &y, Tensor &a, Tensor &b, Index ca)
{
  a = Tensor(ca, y.h, y.w);
  b = Tensor(y.c - ca, y.h, y.w);
  std::copy(y.v.begin(), y.v.begin() + a.size(), a.v.begin());
  std::copy(y.v.begin() + a.size(), y.v.end(), b.v.begin());
}

/// Squeeze-and-excitation channel gate: y = x * sigmoid(W2 relu(W1 mean_hw(x) + b1) + b2).
class ChannelGate
{
public:
  ChannelGate() = default;
  ChannelGate(std::string const &name, Index channels, Index hidden)
      : c_(channels), hid_(hidden), w1_(name + ".fc1.w", {hidden, channels}), b1_(name + ".fc1.b", {hidden}),
        w2_(name + ".fc2.w", {channels, hidden}), b2_(name + ".fc2.b", {channels})
  {
  }

  void init(Rng &rng)
  {
    double const a1 = std::sqrt(6.0 / static_cast<double>(c_)), a2 = std::sqrt(3.0 / static_cast<double>(hid_));
    for (auto &v : w1_.value) v = rng.uniform(-a1, a1);
    for (auto &v : w2_.value) v = rng.uniform(-a2, a2);
    std::fill(b1_.value.begin(), b1_.value.end(), 0.0);
    std::fill(b2_.value.begin(), b2_.value.end(), 0.0);
  }

  struct Cache
  {
    Eigen::VectorXd squeeze, hidden, gate;
  };

  void forward(Tensor const &x, Tensor &y, Cache &cache) const
  {
    auto xm = as_matrix(x);
    cache.squeeze = xm.rowwise().mean();
    Eigen::Map<RowMatrix const> w1(w1_.value.data(), hid_, c_), w2(w2_.value.data(), c_, hid_);
    Eigen::Map<Eigen::VectorXd const> b1(b1_.value.data(), hid_), b2(b2_.value.data(), c_);
    cache.hidden = (w1 * cache.squeeze + b1).cwiseMax(0.0);
    Eigen::VectorXd const pre = w2 * cache.hidden + b2;
    cache.gate = pre.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    y = x;
    auto ym = as_matrix(y);
    for (Index c = 0; c < c_; ++c) ym.row(c) *= cache.gate[c];
  }

  void backward(Tensor const &x, Tensor const &dy, Cache const &cache, Tensor &dx)
  {
    auto xm = as_matrix(x);
    auto dym = as_matrix(dy);
    Eigen::Map<RowMatrix const> w1(w1_.value.data(), hid_, c_), w2(w2_.value.data(), c_, hid_);
    Eigen::VectorXd const dgate = (dym.array() * xm.array()).rowwise().sum().matrix();
    Eigen::VectorXd const dpre2 = dgate.array() * cache.gate.array() * (1.0 - cache.gate.array());
    Eigen::Map<RowMatrix>(w2_.grad.data(), c_, hid_).noalias() += dpre2 * cache.hidden.transpose();
    Eigen::Map<Eigen::VectorXd>(b2_.grad.data(), c_) += dpre2;
    Eigen::VectorXd dh = w2.transpose() * dpre2;
    for (Index j = 0; j < hid_; ++j)
      if (!(cache.hidden[j] > 0.0)) dh[j] = 0.0;
    Eigen::Map<RowMatrix>(w1_.grad.data(), hid_, c_).noalias() += dh * cache.squeeze.transpose();
    Eigen::Map<Eigen::VectorXd>(b1_.grad.data(), hid_) += dh;
    Eigen::VectorXd const dz = w1.transpose() * dh / static_cast<double>(x.plane());
    dx = Tensor(x.c, x.h, x.w);
    auto dxm = as_matrix(dx);
    for (Index c = 0; c < c_; ++c) dxm.row(c) = dym.row(c) * cache.gate[c] + RowMatrix::Constant(1, x.plane(), dz[c]);
  }

  std::vector<Param *> params() { return {&w1_, &b1_, &w2_, &b2_}; }

private:
  Index c_ = 0, hid_ = 0;
  Param w1_, b1_, w2_, b2_;
};

} // namespace calibless::nn
