#pragma once

// Scalar re-implementation of the two-head network with hand-written
// backpropagation. Reads parameter values from a TwoHeadModel but shares no
// code with the autodiff engine.

#include <algorithm>
#include <cmath>
#include <vector>

#include "advfas/model.hpp"

namespace ref {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // [out][in]

struct Layer {
  Mat w;
  Vec b;
};

struct Net {
  std::vector<Layer> trunk;
  Layer det_hidden, det_out, cor_hidden, cor_out;
  bool relu = true;
  bool score_map = false;
  double mean = 0.5, stdev = 0.1;
};

inline Layer to_layer(const advfas::ad::Tensor& w, const advfas::ad::Tensor& b) {
  Layer l;
  l.w.assign(w.rows(), Vec(w.cols()));
  for (std::size_t o = 0; o < w.rows(); ++o) {
    for (std::size_t i = 0; i < w.cols(); ++i) l.w[o][i] = w(o, i);
  }
  l.b.assign(b.data().begin(), b.data().end());
  return l;
}

inline Net from_model(const advfas::TwoHeadModel& m) {
  Net n;
  const auto& p = m.params();
  std::size_t k = 0;
  for (std::size_t i = 0; i < m.config().trunk_widths.size(); ++i, k += 2) n.trunk.push_back(to_layer(p[k], p[k + 1]));
  n.det_hidden = to_layer(p[k], p[k + 1]);
  n.det_out = to_layer(p[k + 2], p[k + 3]);
  n.cor_hidden = to_layer(p[k + 4], p[k + 5]);
  n.cor_out = to_layer(p[k + 6], p[k + 7]);
  n.relu = m.config().activation == advfas::Activation::kRelu;
  n.score_map = m.config().score_map;
  n.mean = m.config().input_mean;
  n.stdev = m.config().input_std;
  return n;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Per-layer record needed for the backward pass.
struct Trace {
  Vec x0;
  std::vector<Vec> pre, post;  // trunk
  Vec dh_pre, dh, dout_pre, dout;
  Vec ch_pre, ch, cout_pre;
  double f = 0.0, g = 0.0;
};

inline Vec affine(const Layer& l, const Vec& x) {
  Vec y(l.b);
  for (std::size_t o = 0; o < y.size(); ++o) {
    for (std::size_t i = 0; i < x.size(); ++i) y[o] += l.w[o][i] * x[i];
  }
  return y;
}

inline double act(const Net& n, double z) { return n.relu ? std::max(0.0, z) : std::tanh(z); }
inline double act_deriv(const Net& n, double z) {
  if (n.relu) return z > 0.0 ? 1.0 : 0.0;
  const double t = std::tanh(z);
  return 1.0 - t * t;
}

inline Trace forward(const Net& n, const Vec& x) {
  Trace t;
  t.x0.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) t.x0[i] = (x[i] - n.mean) / n.stdev;
  Vec h = t.x0;
  for (const auto& l : n.trunk) {
    t.pre.push_back(affine(l, h));
    h = t.pre.back();
    for (double& v : h) v = act(n, v);
    t.post.push_back(h);
  }
  t.dh_pre = affine(n.det_hidden, h);
  t.dh = t.dh_pre;
  for (double& v : t.dh) v = act(n, v);
  t.dout_pre = affine(n.det_out, t.dh);
  t.dout = t.dout_pre;
  for (double& v : t.dout) v = sigmoid(v);
  double s = 0.0;
  for (double v : t.dout) s += v;
  t.f = s / static_cast<double>(t.dout.size());
  t.ch_pre = affine(n.cor_hidden, h);
  t.ch = t.ch_pre;
  for (double& v : t.ch) v = act(n, v);
  t.cout_pre = affine(n.cor_out, t.ch);
  t.g = sigmoid(t.cout_pre[0]);
  return t;
}

struct LayerGrad {
  Mat w;
  Vec b;
};

// Gradients laid out like TwoHeadModel::params().
struct Grads {
  std::vector<LayerGrad> layers;
  Vec input;
};

inline Grads zero_grads(const Net& n, std::size_t input_dim) {
  Grads g;
  auto add = [&](const Layer& l) {
    g.layers.push_back({Mat(l.w.size(), Vec(l.w.empty() ? 0 : l.w[0].size(), 0.0)), Vec(l.b.size(), 0.0)});
  };
  for (const auto& l : n.trunk) add(l);
  add(n.det_hidden);
  add(n.det_out);
  add(n.cor_hidden);
  add(n.cor_out);
  g.input.assign(input_dim, 0.0);
  return g;
}

// Backpropagates dL/d(f_map entries) and dL/dg into `acc`.
inline void backward(const Net& n, const Trace& t, const Vec& d_fmap, double d_g, Grads& acc) {
  const std::size_t nt = n.trunk.size();
  auto layer_back = [](const Layer& l, const Vec& in, const Vec& d_out, LayerGrad& lg) {
    Vec d_in(in.size(), 0.0);
    for (std::size_t o = 0; o < d_out.size(); ++o) {
      lg.b[o] += d_out[o];
      for (std::size_t i = 0; i < in.size(); ++i) {
        lg.w[o][i] += d_out[o] * in[i];
        d_in[i] += d_out[o] * l.w[o][i];
      }
    }
    return d_in;
  };
  const Vec& h = nt ? t.post.back() : t.x0;

  Vec d_dout_pre(t.dout.size());
  for (std::size_t j = 0; j < d_dout_pre.size(); ++j) d_dout_pre[j] = d_fmap[j] * t.dout[j] * (1.0 - t.dout[j]);
  Vec d_dh = layer_back(n.det_out, t.dh, d_dout_pre, acc.layers[nt + 1]);
  for (std::size_t j = 0; j < d_dh.size(); ++j) d_dh[j] *= act_deriv(n, t.dh_pre[j]);
  Vec d_h = layer_back(n.det_hidden, h, d_dh, acc.layers[nt]);

  const Vec d_cout_pre{d_g * t.g * (1.0 - t.g)};
  Vec d_ch = layer_back(n.cor_out, t.ch, d_cout_pre, acc.layers[nt + 3]);
  for (std::size_t j = 0; j < d_ch.size(); ++j) d_ch[j] *= act_deriv(n, t.ch_pre[j]);
  const Vec d_h2 = layer_back(n.cor_hidden, h, d_ch, acc.layers[nt + 2]);
  for (std::size_t j = 0; j < d_h.size(); ++j) d_h[j] += d_h2[j];

  for (std::size_t k = nt; k-- > 0;) {
    for (std::size_t j = 0; j < d_h.size(); ++j) d_h[j] *= act_deriv(n, t.pre[k][j]);
    const Vec& in = k ? t.post[k - 1] : t.x0;
    d_h = layer_back(n.trunk[k], in, d_h, acc.layers[k]);
  }
  for (std::size_t i = 0; i < d_h.size(); ++i) acc.input[i] += d_h[i] / n.stdev;
}

// Flattens gradients in the model's canonical (weight, bias) order.
inline std::vector<std::vector<double>> flatten(const Grads& g) {
  std::vector<std::vector<double>> out;
  for (const auto& l : g.layers) {
    std::vector<double> w;
    for (const auto& row : l.w) w.insert(w.end(), row.begin(), row.end());
    out.push_back(w);
    out.push_back(l.b);
  }
  return out;
}

constexpr double kEps = 1e-7;

inline double bce(double p, double t) {
  const double q = std::clamp(p, kEps, 1.0 - kEps);
  return -(t * std::log(q) + (1.0 - t) * std::log(1.0 - q));
}

// d BCE / d p, zero where the clamp is active.
inline double bce_dp(double p, double t) {
  if (p < kEps || p > 1.0 - kEps) return 0.0;
  return -t / p + (1.0 - t) / (1.0 - p);
}

enum class Case { kTP, kFP, kTN, kFN };

inline Case classify(int label, double f) {
  const bool says_real = f >= 0.5;
  if (label == 1) return says_real ? Case::kTP : Case::kFN;
  return says_real ? Case::kFP : Case::kTN;
}

struct BatchLoss {
  double l_spoof = 0.0, l_cor = 0.0, l_cs = 0.0;
  Grads grads;
};

// Masked detector loss + lambda * corrector loss over the batch. `cases`
// and `fbar` are held fixed: correct cases use fbar both inside the product
// and as the target, which is what stop-gradient means for a finite
// difference.
inline BatchLoss advfas_loss(const Net& n, const std::vector<Vec>& xs, const std::vector<int>& labels,
                             const std::vector<int>& masks, const std::vector<Case>& cases, const Vec& fbar,
                             double lambda, bool with_spoof = true, bool with_cor = true) {
  BatchLoss out;
  out.grads = zero_grads(n, xs.empty() ? 0 : xs[0].size());
  double mask_total = 0.0;
  for (int m : masks) mask_total += m;
  const double inv_b = 1.0 / static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Trace t = forward(n, xs[i]);
    const double y = labels[i];
    const double mapsize = static_cast<double>(t.dout.size());
    Vec d_fmap(t.dout.size(), 0.0);
    double d_g = 0.0;
    if (with_spoof && masks[i] && mask_total > 0.0) {
      double per = 0.0;
      for (std::size_t j = 0; j < t.dout.size(); ++j) {
        per += bce(t.dout[j], y) / mapsize;
        d_fmap[j] += bce_dp(t.dout[j], y) / mapsize / mask_total;
      }
      out.l_spoof += per / mask_total;
    }
    if (with_cor) {
      const bool correct = cases[i] == Case::kTP || cases[i] == Case::kTN;
      double target = fbar[i];
      if (cases[i] == Case::kFP) target = 0.0;
      if (cases[i] == Case::kFN) target = 1.0;
      const double fu = correct ? fbar[i] : t.f;
      const double p = fu * t.g;
      out.l_cor += bce(p, target) * inv_b;
      const double dp = bce_dp(p, target) * inv_b * lambda;
      d_g += dp * fu;
      if (!correct) {
        for (double& d : d_fmap) d += dp * t.g / mapsize;
      }
    }
    backward(n, t, d_fmap, d_g, out.grads);
  }
  out.l_cs = out.l_spoof + lambda * out.l_cor;
  return out;
}

}  // namespace ref
