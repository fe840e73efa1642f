#pragma once

#include "calibrate.hpp"
#include "nn/adam.hpp"
#include "nn/unet.hpp"

#include <algorithm>
#include <functional>
#include <optional>

namespace calibless {

using nn::NetworkConfig;
using nn::Tensor;

enum class LambdaMode {
  trainable,    ///< lambda = sigmoid(lambda_raw), lambda_raw updated by Adam with the weights
  linear_decay, ///< lambda_init * (epochs - e) / epochs at epoch e
  fixed,        ///< lambda_init for the whole run (single-loss ablations use 1 or 0)
};

inline char const *to_string(LambdaMode m)
{
  switch (m) {
  case LambdaMode::trainable: return "trainable";
  case LambdaMode::linear_decay: return "linear_decay";
  case LambdaMode::fixed: return "fixed";
  }
  return "?";
}

struct TrainingConfig
{
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 4;
  int epochs = 100;
  double lambda_init = 0.5;
  LambdaMode lambda_mode = LambdaMode::trainable;
  std::uint64_t seed = 1;

  void validate() const
  {
    require(lr > 0.0, "training: lr must be positive");
    require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, "training: betas must be in (0, 1)");
    require(batch_size >= 1 && epochs >= 1, "training: batch_size and epochs must be >= 1");
    if (lambda_mode == LambdaMode::fixed)
      require(lambda_init >= 0.0 && lambda_init <= 1.0, "training: fixed lambda must be in [0, 1]");
    else
      require(lambda_init > 0.0 && lambda_init < 1.0, "training: lambda_init must be in (0, 1)");
  }
};

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Network weights plus the trainable loss weight.
struct Estimator
{
  explicit Estimator(NetworkConfig const &cfg, double lambda_init = 0.5)
      : net(cfg), lambda_raw("lambda_raw", {1})
  {
    lambda_raw.value[0] = logit(std::clamp(lambda_init, 1e-12, 1.0 - 1e-12));
  }

  double lambda() const { return sigmoid(lambda_raw.value[0]); }

  /// Every trainable array: network first, then lambda_raw.
  std::vector<nn::Param *> params()
  {
    auto ps = net.params();
    ps.push_back(&lambda_raw);
    return ps;
  }

  nn::UNet net;
  nn::Param lambda_raw;
};

/// Complex channel c maps to real planes 2c (real part) and 2c + 1 (imaginary part).
inline Tensor to_planes(ImageVolume const &v, Index slice)
{
  auto const &d = v.dims();
  Tensor t(2 * d.channels, d.ny, d.nx);
  for (Index c = 0; c < d.channels; ++c) {
    auto p = v.plane(slice, c);
    for (Index i = 0; i < d.plane(); ++i) {
      t.v[static_cast<std::size_t>(2 * c * d.plane() + i)] = p[i].real();
      t.v[static_cast<std::size_t>((2 * c + 1) * d.plane() + i)] = p[i].imag();
    }
  }
  return t;
}

inline void from_planes(Tensor const &t, ImageVolume &v, Index slice)
{
  auto const &d = v.dims();
  require(t.c == 2 * d.channels && t.h == d.ny && t.w == d.nx, "from_planes: shape mismatch");
  for (Index c = 0; c < d.channels; ++c) {
    auto p = v.plane(slice, c);
    for (Index i = 0; i < d.plane(); ++i)
      p[i] = cplx(t.v[static_cast<std::size_t>(2 * c * d.plane() + i)], t.v[static_cast<std::size_t>((2 * c + 1) * d.plane() + i)]);
  }
}

/// Channel with the largest mean aliased magnitude over the whole volume.
inline Index input_reference_channel(ImageVolume const &aliased) { return reference_channel(aliased); }

/// Scale one slice of aliased channel images into network planes; returns the slice scale
/// (99th-percentile channel magnitude).
///
/// slice_percentile divides by that scale. pixel additionally divides each pixel's channel
/// vector by sqrt(rss^2 + (0.05 scale)^2) and rotates it so channel `ref` is real and
/// non-negative, the same phase convention as the ESPIRiT maps.
inline double normalize_input(ImageVolume const &aliased, Index slice, Tensor &planes,
                              nn::InputNorm mode = nn::InputNorm::slice_percentile, Index ref = -1)
{
  auto const &d = aliased.dims();
  std::vector<double> mags;
  mags.reserve(static_cast<std::size_t>(d.channels * d.plane()));
  for (Index c = 0; c < d.channels; ++c)
    for (auto v : aliased.plane(slice, c)) mags.push_back(std::abs(v));
  auto const k = static_cast<std::size_t>(0.99 * static_cast<double>(mags.size() - 1));
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k), mags.end());
  double const scale = mags[k] > 0.0 ? mags[k] : 1.0;
  if (mode == nn::InputNorm::slice_percentile) {
    planes = to_planes(aliased, slice);
    for (auto &v : planes.v) v /= scale;
    return scale;
  }
  if (ref < 0) ref = input_reference_channel(aliased);
  require(ref < d.channels, "normalize_input: reference channel out of range");
  ImageVolume one = aliased.slice(slice);
  double const eps2 = 0.05 * 0.05;
  for (Index i = 0; i < d.plane(); ++i) {
    double rss2 = 0.0;
    for (Index c = 0; c < d.channels; ++c) rss2 += std::norm(one.plane(0, c)[i] / scale);
    cplx const r = one.plane(0, ref)[i];
    cplx const rot = std::abs(r) > 0.0 ? std::conj(r) / std::abs(r) : cplx(1.0, 0.0);
    double const g = 1.0 / (scale * std::sqrt(rss2 + eps2));
    for (Index c = 0; c < d.channels; ++c) one.plane(0, c)[i] *= rot * g;
  }
  planes = to_planes(one, 0);
  return scale;
}

struct HybridLoss
{
  double total = 0.0;
  double orig = 0.0;  ///< mean |E_DL - E_orig|
  double trans = 0.0; ///< mean |E_DL - E_trans|
};

/// lambda * mean|E_DL - E_orig| + (1 - lambda) * mean|E_DL - E_trans| over real components.
inline HybridLoss hybrid_loss(std::span<double const> est, std::span<double const> orig, std::span<double const> trans, double lambda)
{
  require(est.size() == orig.size() && est.size() == trans.size(), "hybrid_loss: size mismatch");
  require(lambda >= 0.0 && lambda <= 1.0, "hybrid_loss: lambda must be in [0, 1]");
  require(!est.empty(), "hybrid_loss: empty input");
  HybridLoss l;
  for (std::size_t i = 0; i < est.size(); ++i) {
    l.orig += std::abs(est[i] - orig[i]);
    l.trans += std::abs(est[i] - trans[i]);
  }
  double const n = static_cast<double>(est.size());
  l.orig /= n;
  l.trans /= n;
  l.total = lambda * l.orig + (1.0 - lambda) * l.trans;
  return l;
}

inline std::vector<double> interleave(ImageVolume const &v)
{
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(2 * v.size()));
  for (auto c : v.data()) {
    out.push_back(c.real());
    out.push_back(c.imag());
  }
  return out;
}

inline HybridLoss hybrid_loss(CoilMaps const &est, CoilMaps const &orig, CoilMaps const &trans, double lambda)
{
  require(est.maps.dims() == orig.maps.dims() && est.maps.dims() == trans.maps.dims(), "hybrid_loss: map dims differ");
  return hybrid_loss(interleave(est.maps), interleave(orig.maps), interleave(trans.maps), lambda);
}

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Gradient of hybrid_loss w.r.t. est (divided by `count`, the number of averaged components),
/// accumulated into grad. The L1 subgradient at zero is zero.
inline void hybrid_loss_grad(std::span<double const> est, std::span<double const> orig, std::span<double const> trans,
                             double lambda, double count, std::span<double> grad)
{
  for (std::size_t i = 0; i < est.size(); ++i)
    grad[i] = (lambda * sign0(est[i] - orig[i]) + (1.0 - lambda) * sign0(est[i] - trans[i])) / count;
}

/// One training example: normalised aliased planes and the two target map sets as planes.
struct Sample
{
  Tensor input;
  Tensor target_orig;
  Tensor target_trans;
  double scale = 1.0;
  int acceleration = 1;
};

struct EpochLog
{
  int epoch = 0;
  double loss = 0.0;
  double loss_orig = 0.0;
  double loss_trans = 0.0;
  double lambda = 0.0;
  double one_minus_lambda = 0.0;
};

struct TrainResult
{
  std::vector<EpochLog> log;
  bool diverged = false;
  /// Epochs completed with finite loss; the returned weights are from the last of them.
  int last_finite_epoch = -1;
};

namespace detail {

inline double scheduled_lambda(TrainingConfig const &cfg, Estimator const &est, int epoch)
{
  switch (cfg.lambda_mode) {
  case LambdaMode::trainable: return est.lambda();
  case LambdaMode::linear_decay: return cfg.lambda_init * static_cast<double>(cfg.epochs - epoch) / cfg.epochs;
  case LambdaMode::fixed: return cfg.lambda_init;
  }
  return cfg.lambda_init;
}

struct Snapshot
{
  std::vector<std::vector<double>> values;
};

inline Snapshot snapshot(Estimator &est)
{
  Snapshot s;
  for (auto *p : est.params()) s.values.push_back(p->value);
  return s;
}

inline void restore(Estimator &est, Snapshot const &s)
{
  auto ps = est.params();
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = s.values[i];
}

} // namespace detail

/// Mini-batch Adam on the hybrid loss. Deterministic for a given seed: shuffling uses the
/// library Rng and per-sample gradients are summed in batch order.
inline TrainResult train(Estimator &est, std::vector<Sample> const &data, TrainingConfig const &cfg,
                         std::function<void(EpochLog const &)> const &on_epoch = {})
{
  cfg.validate();
  require(!data.empty(), "train: empty dataset");
  for (auto const &s : data)
    require(s.input.same_shape(data.front().input) && s.target_orig.same_shape(data.front().target_orig) &&
                s.target_trans.same_shape(s.target_orig),
            "train: inconsistent sample dimensions");
  if (cfg.lambda_mode != LambdaMode::trainable) est.lambda_raw.value[0] = logit(std::clamp(cfg.lambda_init, 1e-12, 1.0 - 1e-12));
  else est.lambda_raw.value[0] = logit(cfg.lambda_init);

  auto params = cfg.lambda_mode == LambdaMode::trainable ? est.params() : est.net.params();
  nn::Adam opt(params, {cfg.lr, cfg.beta1, cfg.beta2, 1e-8});
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult res;
  auto good = detail::snapshot(est);
  nn::UNet::Trace trace;
  Tensor dout;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next() % i]);
    EpochLog log;
    log.epoch = epoch;
    double weight_sum = 0.0;
    bool finite = true;
    for (std::size_t start = 0; start < order.size() && finite; start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t const stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      double const lambda = detail::scheduled_lambda(cfg, est, epoch);
      for (auto *p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
      double const count = static_cast<double>((stop - start) * static_cast<std::size_t>(data.front().target_orig.size()));
      double batch_orig = 0.0, batch_trans = 0.0;
      for (std::size_t b = start; b < stop; ++b) {
        auto const &s = data[order[b]];
        Tensor const &out = est.net.forward(s.input, trace);
        auto const l = hybrid_loss(out.v, s.target_orig.v, s.target_trans.v, lambda);
        batch_orig += l.orig;
        batch_trans += l.trans;
        dout = Tensor(out.c, out.h, out.w);
        hybrid_loss_grad(out.v, s.target_orig.v, s.target_trans.v, lambda, count, dout.v);
        est.net.backward(trace, dout);
      }
      double const nb = static_cast<double>(stop - start);
      batch_orig /= nb;
      batch_trans /= nb;
      double const batch_loss = lambda * batch_orig + (1.0 - lambda) * batch_trans;
      if (!std::isfinite(batch_loss)) {
        finite = false;
        break;
      }
      if (cfg.lambda_mode == LambdaMode::trainable)
        est.lambda_raw.grad[0] = (batch_orig - batch_trans) * lambda * (1.0 - lambda);
      opt.step();
      log.loss += batch_loss * nb;
      log.loss_orig += batch_orig * nb;
      log.loss_trans += batch_trans * nb;
      weight_sum += nb;
    }
    bool params_finite = finite;
    for (auto *p : params)
      for (double v : p->value) params_finite = params_finite && std::isfinite(v);
    if (!params_finite) {
      detail::restore(est, good);
      res.diverged = true;
      return res;
    }
    log.loss /= weight_sum;
    log.loss_orig /= weight_sum;
    log.loss_trans /= weight_sum;
    log.lambda = detail::scheduled_lambda(cfg, est, epoch);
    log.one_minus_lambda = 1.0 - log.lambda;
    res.log.push_back(log);
    res.last_finite_epoch = epoch;
    good = detail::snapshot(est);
    if (on_epoch) on_epoch(log);
  }
  return res;
}

/// Predict maps for every slice of an aliased multi-coil image volume. The raw network output
/// is returned as the map set; eigval holds the per-pixel channel-vector norm, clipped to 1.
inline CoilMaps estimate_maps(Estimator const &est, ImageVolume const &aliased)
{
  auto const &d = aliased.dims();
  require(2 * d.channels == est.net.config().io_channels, "estimate_maps: network expects " +
                                                              std::to_string(est.net.config().io_channels / 2) + " coils");
  CoilMaps out;
  out.maps = ImageVolume(d);
  out.eigval = RealVolume(Dims{d.slices, 1, d.ny, d.nx});
  out.role = MapRole::estimated;
  nn::UNet::Trace trace;
  Index const ref = input_reference_channel(aliased);
  for (Index s = 0; s < d.slices; ++s) {
    Tensor in;
    normalize_input(aliased, s, in, est.net.config().input_norm, ref);
    from_planes(est.net.forward(in, trace), out.maps, s);
    for (Index y = 0; y < d.ny; ++y)
      for (Index x = 0; x < d.nx; ++x) {
        double n = 0.0;
        for (Index c = 0; c < d.channels; ++c) n += std::norm(out.maps(s, c, y, x));
        out.eigval(s, 0, y, x) = std::min(1.0, std::sqrt(n));
      }
  }
  return out;
}

/// Scale each pixel's channel vector to unit norm (zero vectors stay zero), as required before
/// the maps are used for reconstruction.
inline CoilMaps unit_normalize(CoilMaps maps)
{
  auto &m = maps.maps;
  auto const &d = m.dims();
  for (Index s = 0; s < d.slices; ++s)
    for (Index y = 0; y < d.ny; ++y)
      for (Index x = 0; x < d.nx; ++x) {
        double n = 0.0;
        for (Index c = 0; c < d.channels; ++c) n += std::norm(m(s, c, y, x));
        if (n == 0.0) continue;
        double const inv = 1.0 / std::sqrt(n);
        for (Index c = 0; c < d.channels; ++c) m(s, c, y, x) *= inv;
      }
  return maps;
}

struct GradCheckEntry
{
  std::string param;
  Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport
{
  std::vector<GradCheckEntry> entries; ///< sorted worst first
  double max_rel_error = 0.0;
  int skipped_nonsmooth = 0;
  bool passed = false;
};

/// Relative error |a - n| / max(|a|, |n|, 1e-12).
inline double relative_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-12}); }

namespace detail {

// Activation pattern of one forward pass: ReLU on/off states plus L1 residual signs. Central
// differences are only meaningful when the pattern is constant over [theta - h, theta + h].
inline std::vector<std::int8_t> pattern(nn::UNet::Trace const &tr, Tensor const &out, Tensor const &a, Tensor const &b)
{
  std::vector<std::int8_t> p;
  auto add_relu = [&](std::vector<Tensor> const &ts) {
    for (auto const &t : ts)
      for (double v : t.v) p.push_back(v > 0.0);
  };
  add_relu(tr.enc_a);
  add_relu(tr.enc_b);
  add_relu(tr.dec_up);
  add_relu(tr.dec_c);
  add_relu(tr.dec_d);
  for (auto const &g : tr.gate_cache)
    for (Index i = 0; i < g.hidden.size(); ++i) p.push_back(g.hidden[i] > 0.0);
  for (std::size_t i = 0; i < out.v.size(); ++i) {
    p.push_back(static_cast<std::int8_t>(sign0(out.v[i] - a.v[i])));
    p.push_back(static_cast<std::int8_t>(sign0(out.v[i] - b.v[i])));
  }
  return p;
}

} // namespace detail

/// Compare analytic gradients of the hybrid loss with central finite differences on a random
/// probe sample, for `n_checks` randomly drawn parameters (lambda_raw always included).
/// Parameters whose +-step perturbation changes the activation pattern are re-drawn.
inline GradCheckReport gradient_check(NetworkConfig const &net_cfg, Index height, Index width, double step, double tolerance,
                                      int n_checks = 60, std::uint64_t seed = 11)
{
  Estimator est(net_cfg, 0.5);
  est.lambda_raw.value[0] = 0.3;
  Rng rng(seed);
  Tensor input(net_cfg.io_channels, height, width), ta(net_cfg.io_channels, height, width), tb(ta);
  for (auto &v : input.v) v = rng.normal();
  for (auto &v : ta.v) v = rng.uniform(-1.0, 1.0);
  for (auto &v : tb.v) v = rng.uniform(-1.0, 1.0);
  double const count = static_cast<double>(ta.size());

  nn::UNet::Trace trace;
  auto loss_at = [&](std::vector<std::int8_t> *pat) {
    Tensor const &out = est.net.forward(input, trace);
    if (pat) *pat = detail::pattern(trace, out, ta, tb);
    return hybrid_loss(out.v, ta.v, tb.v, est.lambda()).total;
  };

  // Analytic gradient.
  auto params = est.params();
  for (auto *p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
  {
    Tensor const &out = est.net.forward(input, trace);
    double const lambda = est.lambda();
    auto const l = hybrid_loss(out.v, ta.v, tb.v, lambda);
    Tensor dout(out.c, out.h, out.w);
    hybrid_loss_grad(out.v, ta.v, tb.v, lambda, count, dout.v);
    est.net.backward(trace, dout);
    est.lambda_raw.grad[0] = (l.orig - l.trans) * lambda * (1.0 - lambda);
  }
  std::vector<std::int8_t> base;
  loss_at(&base);

  GradCheckReport rep;
  auto check_one = [&](nn::Param &p, Index i) {
    double const saved = p.value[static_cast<std::size_t>(i)];
    std::vector<std::int8_t> pp, pm;
    p.value[static_cast<std::size_t>(i)] = saved + step;
    double const fp = loss_at(&pp);
    p.value[static_cast<std::size_t>(i)] = saved - step;
    double const fm = loss_at(&pm);
    p.value[static_cast<std::size_t>(i)] = saved;
    if (pp != base || pm != base) return false;
    double const num = (fp - fm) / (2.0 * step);
    double const ana = p.grad[static_cast<std::size_t>(i)];
    rep.entries.push_back({p.name, i, ana, num, relative_error(ana, num)});
    return true;
  };

  check_one(est.lambda_raw, 0);
  Index total = 0;
  for (auto *p : params) total += p->size();
  int attempts = 0;
  while (static_cast<int>(rep.entries.size()) < n_checks + 1 && attempts < 20 * n_checks) {
    ++attempts;
    Index pick = static_cast<Index>(rng.next() % static_cast<std::uint64_t>(total));
    for (auto *p : params) {
      if (pick < p->size()) {
        if (!check_one(*p, pick)) ++rep.skipped_nonsmooth;
        break;
      }
      pick -= p->size();
    }
  }
  std::sort(rep.entries.begin(), rep.entries.end(), [](auto const &a, auto const &b) { return a.rel_error > b.rel_error; });
  rep.max_rel_error = rep.entries.empty() ? 0.0 : rep.entries.front().rel_error;
  rep.passed = !rep.entries.empty() && rep.max_rel_error < tolerance;
  return rep;
}

} // namespace calibless
