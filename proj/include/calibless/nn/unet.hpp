#pragma once

#include "layers.hpp"

#include <sstream>

namespace calibless::nn {

/// How aliased channel images are scaled before entering the network.
enum class InputNorm {
  slice_percentile, ///< divide the slice by its 99th-percentile channel magnitude
  pixel,            ///< per pixel: divide by the soft RSS and rotate so the reference channel is real
};

inline char const *to_string(InputNorm m) { return m == InputNorm::pixel ? "pixel" : "slice_percentile"; }

struct NetworkConfig
{
  int levels = 3;
  int base_filters = 8;
  /// Real input/output planes: 2 per coil (real, imaginary).
  int io_channels = 8;
  bool attention = true;
  Padding padding = Padding::zero;
  InputNorm input_norm = InputNorm::slice_percentile;
  std::uint64_t seed = 1;

  void validate() const
  {
    require(levels >= 1, "network: levels must be >= 1");
    require(base_filters >= 4, "network: base_filters must be >= 4");
    require(io_channels >= 2 && io_channels % 2 == 0, "network: io_channels must be even and >= 2");
  }
};

/// Encoder-decoder with skip connections. Level l has base_filters * 2^l filters; each
/// encoder level is two 3x3 conv + ReLU followed by 2x average pooling, each decoder level is
/// nearest 2x upsampling, a 3x3 conv, concatenation with the skip, two 3x3 conv and an
/// optional channel gate. A 1x1 conv produces the output planes.
class UNet
{
public:
  explicit UNet(NetworkConfig const &cfg)
      : cfg_(cfg)
  {
    cfg.validate();
    Index const L = cfg.levels;
    auto f = [&](Index l) { return static_cast<Index>(cfg.base_filters) << l; };
    Index in = cfg.io_channels;
    for (Index l = 0; l < L; ++l) {
      std::string const p = "enc" + std::to_string(l);
      enc_a_.emplace_back(p + ".conv1", in, f(l), 3, cfg.padding);
      enc_b_.emplace_back(p + ".conv2", f(l), f(l), 3, cfg.padding);
      in = f(l);
    }
    for (Index l = L - 2; l >= 0; --l) {
      std::string const p = "dec" + std::to_string(l);
      dec_up_.emplace_back(p + ".up", f(l + 1), f(l), 3, cfg.padding);
      dec_c_.emplace_back(p + ".conv1", 2 * f(l), f(l), 3, cfg.padding);
      dec_d_.emplace_back(p + ".conv2", f(l), f(l), 3, cfg.padding);
      if (cfg.attention) gates_.emplace_back(p + ".gate", f(l), std::max<Index>(2, f(l) / 2));
    }
    out_ = Conv2d("out", f(0), cfg.io_channels, 1, cfg.padding);

    Rng rng(cfg.seed);
    for (auto *c : convs()) c->init(rng, c == &out_ ? 3.0 : 6.0);
    for (auto &g : gates_) g.init(rng);
  }

  NetworkConfig const &config() const { return cfg_; }

  /// All trainable arrays in a fixed order.
  std::vector<Param *> params()
  {
    std::vector<Param *> ps;
    for (auto *c : convs()) {
      ps.push_back(&c->weight());
      ps.push_back(&c->bias());
    }
    for (auto &g : gates_)
      for (auto *p : g.params()) ps.push_back(p);
    return ps;
  }

  Index parameter_count()
  {
    Index n = 0;
    for (auto *p : params()) n += p->size();
    return n;
  }

  void zero_grad()
  {
    for (auto *p : params()) std::fill(p->grad.begin(), p->grad.end(), 0.0);
  }

  /// Intermediate activations of one forward pass, kept for backward.
  struct Trace
  {
    std::vector<Tensor> enc_in, enc_a, enc_b;
    std::vector<Tensor> dec_in, dec_up, dec_cat, dec_c, dec_d, dec_out;
    std::vector<ChannelGate::Cache> gate_cache;
    Tensor output;
  };

  Tensor const &forward(Tensor const &input, Trace &tr) const
  {
    Index const L = cfg_.levels;
    Index const div = Index{1} << (L - 1);
    require(input.c == cfg_.io_channels, "network: expected " + std::to_string(cfg_.io_channels) + " input planes, got " +
                                             std::to_string(input.c));
    require(input.h % div == 0 && input.w % div == 0,
            "network: input " + std::to_string(input.h) + "x" + std::to_string(input.w) + " not divisible by " + std::to_string(div));
    int layer = 0;
    auto check = [&](Tensor const &t) {
      for (double v : t.v)
        if (!std::isfinite(v)) throw NonFiniteError("network: non-finite activation after layer " + std::to_string(layer));
      ++layer;
    };
    tr.enc_in.assign(L, {});
    tr.enc_a.assign(L, {});
    tr.enc_b.assign(L, {});
    for (Index l = 0; l < L; ++l) {
      tr.enc_in[l] = l == 0 ? input : avg_pool2(tr.enc_b[l - 1]);
      enc_a_[l].forward(tr.enc_in[l], tr.enc_a[l]);
      relu_inplace(tr.enc_a[l]);
      check(tr.enc_a[l]);
      enc_b_[l].forward(tr.enc_a[l], tr.enc_b[l]);
      relu_inplace(tr.enc_b[l]);
      check(tr.enc_b[l]);
    }
    std::size_t const nd = dec_up_.size();
    tr.dec_in.assign(nd, {});
    tr.dec_up.assign(nd, {});
    tr.dec_cat.assign(nd, {});
    tr.dec_c.assign(nd, {});
    tr.dec_d.assign(nd, {});
    tr.dec_out.assign(nd, {});
    tr.gate_cache.assign(gates_.size(), {});
    Tensor const *deep = &tr.enc_b[L - 1];
    for (std::size_t i = 0; i < nd; ++i) {
      Index const l = L - 2 - static_cast<Index>(i);
      tr.dec_in[i] = upsample2(*deep);
      dec_up_[i].forward(tr.dec_in[i], tr.dec_up[i]);
      relu_inplace(tr.dec_up[i]);
      check(tr.dec_up[i]);
      tr.dec_cat[i] = concat(tr.dec_up[i], tr.enc_b[l]);
      dec_c_[i].forward(tr.dec_cat[i], tr.dec_c[i]);
      relu_inplace(tr.dec_c[i]);
      check(tr.dec_c[i]);
      dec_d_[i].forward(tr.dec_c[i], tr.dec_d[i]);
      relu_inplace(tr.dec_d[i]);
      check(tr.dec_d[i]);
      if (cfg_.attention) {
        gates_[i].forward(tr.dec_d[i], tr.dec_out[i], tr.gate_cache[i]);
        check(tr.dec_out[i]);
      } else {
        tr.dec_out[i] = tr.dec_d[i];
      }
      deep = &tr.dec_out[i];
    }
    out_.forward(*deep, tr.output);
    check(tr.output);
    return tr.output;
  }

  /// Accumulates parameter gradients for d(loss)/d(output) = dout.
  void backward(Trace const &tr, Tensor const &dout)
  {
    Index const L = cfg_.levels;
    std::size_t const nd = dec_up_.size();
    Tensor const &last = nd ? tr.dec_out[nd - 1] : tr.enc_b[L - 1];
    Tensor g;
    out_.backward(last, dout, &g);
    std::vector<Tensor> skip_grad(L);
    for (std::size_t ii = nd; ii-- > 0;) {
      Index const l = L - 2 - static_cast<Index>(ii);
      if (cfg_.attention) {
        Tensor gd;
        gates_[ii].backward(tr.dec_d[ii], g, tr.gate_cache[ii], gd);
        g = std::move(gd);
      }
      relu_backward(tr.dec_d[ii], g);
      Tensor gc;
      dec_d_[ii].backward(tr.dec_c[ii], g, &gc);
      relu_backward(tr.dec_c[ii], gc);
      Tensor gcat;
      dec_c_[ii].backward(tr.dec_cat[ii], gc, &gcat);
      Tensor gup, gskip;
      split(gcat, gup, gskip, tr.dec_up[ii].c);
      skip_grad[l] = std::move(gskip);
      relu_backward(tr.dec_up[ii], gup);
      Tensor gin;
      dec_up_[ii].backward(tr.dec_in[ii], gup, &gin);
      g = upsample2_backward(gin);
    }
    // g now holds the gradient w.r.t. enc_b[L-1].
    for (Index l = L - 1; l >= 0; --l) {
      if (l < L - 1) {
        Tensor const pooled = avg_pool2_backward(g);
        g = skip_grad[l];
        for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += pooled.v[i];
      }
      relu_backward(tr.enc_b[l], g);
      Tensor ga;
      enc_b_[l].backward(tr.enc_a[l], g, &ga);
      relu_backward(tr.enc_a[l], ga);
      Tensor gi;
      enc_a_[l].backward(tr.enc_in[l], ga, l > 0 ? &gi : nullptr);
      g = std::move(gi);
    }
  }

  std::string describe() const
  {
    std::ostringstream os;
    os << "levels=" << cfg_.levels << " base_filters=" << cfg_.base_filters << " io_channels=" << cfg_.io_channels
       << " attention=" << cfg_.attention << " input_norm=" << to_string(cfg_.input_norm);
    return os.str();
  }

private:
  std::vector<Conv2d *> convs()
  {
    std::vector<Conv2d *> cs;
    for (std::size_t l = 0; l < enc_a_.size(); ++l) {
      cs.push_back(&enc_a_[l]);
      cs.push_back(&enc_b_[l]);
    }
    for (std::size_t i = 0; i < dec_up_.size(); ++i) {
      cs.push_back(&dec_up_[i]);
      cs.push_back(&dec_c_[i]);
      cs.push_back(&dec_d_[i]);
    }
    cs.push_back(&out_);
    return cs;
  }

  NetworkConfig cfg_;
  std::vector<Conv2d> enc_a_, enc_b_, dec_up_, dec_c_, dec_d_;
  std::vector<ChannelGate> gates_;
  Conv2d out_;
};

} // namespace calibless::nn
