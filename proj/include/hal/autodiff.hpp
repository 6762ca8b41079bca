/* Copyright 2026 The HAL Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef HAL_AUTODIFF_HPP_
#define HAL_AUTODIFF_HPP_

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hal/tensor.hpp"

namespace hal {

enum class Act { kSigmoid, kRelu, kTanh };

inline const char* act_name(Act a) {
  switch (a) {
    case Act::kSigmoid: return "sigmoid";
    case Act::kRelu: return "relu";
    case Act::kTanh: return "tanh";
  }
  return "?";
}

inline Act act_from_name(const std::string& s) {
  if (s == "sigmoid") return Act::kSigmoid;
  if (s == "relu") return Act::kRelu;
  if (s == "tanh") return Act::kTanh;
  fail("unknown activation kind: ", s);
}

// Define-by-run reverse-mode tape. One forward pass plus one backward pass
// per instance. Ops evaluate eagerly; backward closures accumulate into node
// gradients and, for parameter leaves, into Parameter gradients. Maxout and
// maxpool ties route to the lowest index so gradients are reproducible.
class Tape {
 public:
  using Ref = int;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const Tensor& value(Ref r) const { return nodes_[size_t(r)].value; }
  Tensor& grad(Ref r) { return nodes_[size_t(r)].grad; }

  Ref constant(Tensor t) { return push(std::move(t), nullptr); }

  // Repeated calls with the same parameter return the same node, so shared
  // weights (e.g. an unfolded recurrence) accumulate naturally.
  Ref param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    Ref r = push(p.value, [this, r0 = int(nodes_.size()), &p]() {
      const Tensor& g = nodes_[size_t(r0)].grad;
      float* pg = p.value.grad();
      for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
    });
    param_nodes_[&p] = r;
    return r;
  }

  // out[n,j] = sum_k x[n,k] W[k,j] + b[j]
  Ref affine(Ref xr, Ref wr, Ref br) {
    const Tensor& x = value(xr);
    const Tensor& w = value(wr);
    const Tensor& b = value(br);
    require(x.ndims() == 2 && w.ndims() == 2, "affine expects matrices, got ", shape_str(x.shape()), " and ",
            shape_str(w.shape()));
    require(x.cols() == w.rows() && b.ndims() == 1 && b.cols() == w.cols(),
            "affine shape mismatch: x", shape_str(x.shape()), " W", shape_str(w.shape()), " b",
            shape_str(b.shape()));
    const int n = x.rows(), in = x.cols(), out = w.cols();
    Tensor y({n, out});
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < out; ++j) {
        double acc = b[j];
        for (int k = 0; k < in; ++k) acc += double(x.at(r, k)) * double(w.at(k, j));
        y.at(r, j) = float(acc);
      }
    return push(std::move(y), [this, xr, wr, br, yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      const Tensor& xv = value(xr);
      const Tensor& wv = value(wr);
      Tensor& gx = nodes_[size_t(xr)].grad;
      Tensor& gw = nodes_[size_t(wr)].grad;
      Tensor& gb = nodes_[size_t(br)].grad;
      const int n = xv.rows(), in = xv.cols(), out = wv.cols();
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < out; ++j) {
          const float go = g.at(r, j);
          gb[j] += go;
          for (int k = 0; k < in; ++k) {
            gx.at(r, k) += go * wv.at(k, j);
            gw.at(k, j) += go * xv.at(r, k);
          }
        }
    });
  }

  // out = x * W, no bias term.
  Ref matmul(Ref xr, Ref wr) {
    const Tensor& x = value(xr);
    const Tensor& w = value(wr);
    require(x.ndims() == 2 && w.ndims() == 2 && x.cols() == w.rows(), "matmul shape mismatch: ",
            shape_str(x.shape()), " vs ", shape_str(w.shape()));
    const int n = x.rows(), in = x.cols(), out = w.cols();
    Tensor y({n, out});
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < out; ++j) {
        double acc = 0.0;
        for (int k = 0; k < in; ++k) acc += double(x.at(r, k)) * double(w.at(k, j));
        y.at(r, j) = float(acc);
      }
    return push(std::move(y), [this, xr, wr, yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      const Tensor& xv = value(xr);
      const Tensor& wv = value(wr);
      Tensor& gx = nodes_[size_t(xr)].grad;
      Tensor& gw = nodes_[size_t(wr)].grad;
      const int n = xv.rows(), in = xv.cols(), out = wv.cols();
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < out; ++j) {
          const float go = g.at(r, j);
          for (int k = 0; k < in; ++k) {
            gx.at(r, k) += go * wv.at(k, j);
            gw.at(k, j) += go * xv.at(r, k);
          }
        }
    });
  }

  Ref add(Ref ar, Ref br) {
    const Tensor& a = value(ar);
    const Tensor& b = value(br);
    require(a.same_shape(b), "add shape mismatch: ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
    Tensor y = a;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] += b[i];
    return push(std::move(y), [this, ar, br, yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      Tensor& ga = nodes_[size_t(ar)].grad;
      Tensor& gb = nodes_[size_t(br)].grad;
      for (int64_t i = 0; i < g.numel(); ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
    });
  }

  Ref mul(Ref ar, Ref br) {
    const Tensor& a = value(ar);
    const Tensor& b = value(br);
    require(a.same_shape(b), "mul shape mismatch: ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
    Tensor y = a;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] *= b[i];
    return push(std::move(y), [this, ar, br, yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      const Tensor& av = value(ar);
      const Tensor& bv = value(br);
      Tensor& ga = nodes_[size_t(ar)].grad;
      Tensor& gb = nodes_[size_t(br)].grad;
      for (int64_t i = 0; i < g.numel(); ++i) {
        ga[i] += g[i] * bv[i];
        gb[i] += g[i] * av[i];
      }
    });
  }

  Ref scale(Ref ar, float c) {
    Tensor y = value(ar);
    for (int64_t i = 0; i < y.numel(); ++i) y[i] *= c;
    return push(std::move(y), [this, ar, c, yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      Tensor& ga = nodes_[size_t(ar)].grad;
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * c;
    });
  }

  // Elementwise product with a constant mask (inverted-scaling dropout).
  Ref mul_mask(Ref ar, const Tensor& mask) {
    const Tensor& a = value(ar);
    require(a.same_shape(mask), "mask shape mismatch: ", shape_str(a.shape()), " vs ", shape_str(mask.shape()));
    Tensor y = a;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] *= mask[i];
    return push(std::move(y), [this, ar, m = mask, yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      Tensor& ga = nodes_[size_t(ar)].grad;
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * m[i];
    });
  }

  Ref concat_cols(const std::vector<Ref>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    int n = value(parts[0]).rows(), total = 0;
    for (Ref r : parts) {
      require(value(r).ndims() == 2 && value(r).rows() == n, "concat_cols row mismatch: ",
              shape_str(value(parts[0]).shape()), " vs ", shape_str(value(r).shape()));
      total += value(r).cols();
    }
    Tensor y({n, total});
    int c0 = 0;
    for (Ref r : parts) {
      const Tensor& p = value(r);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < p.cols(); ++j) y.at(i, c0 + j) = p.at(i, j);
      c0 += p.cols();
    }
    return push(std::move(y), [this, parts, yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      int c0 = 0;
      for (Ref r : parts) {
        Tensor& gp = nodes_[size_t(r)].grad;
        const int pc = value(r).cols();
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < pc; ++j) gp.at(i, j) += g.at(i, c0 + j);
        c0 += pc;
      }
    });
  }

  Ref concat_rows(const std::vector<Ref>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    int cols = value(parts[0]).cols(), total = 0;
    for (Ref r : parts) {
      require(value(r).ndims() == 2 && value(r).cols() == cols, "concat_rows col mismatch: ",
              shape_str(value(parts[0]).shape()), " vs ", shape_str(value(r).shape()));
      total += value(r).rows();
    }
    Tensor y({total, cols});
    int r0 = 0;
    for (Ref r : parts) {
      const Tensor& p = value(r);
      for (int i = 0; i < p.rows(); ++i)
        for (int j = 0; j < cols; ++j) y.at(r0 + i, j) = p.at(i, j);
      r0 += p.rows();
    }
    return push(std::move(y), [this, parts, yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      int r0 = 0;
      for (Ref r : parts) {
        Tensor& gp = nodes_[size_t(r)].grad;
        const Tensor& pv = value(r);
        for (int i = 0; i < pv.rows(); ++i)
          for (int j = 0; j < pv.cols(); ++j) gp.at(i, j) += g.at(r0 + i, j);
        r0 += pv.rows();
      }
    });
  }

  Ref slice_cols(Ref ar, int c0, int len) {
    const Tensor& a = value(ar);
    require(a.ndims() == 2 && c0 >= 0 && len > 0 && c0 + len <= a.cols(), "slice_cols [", c0, ",", c0 + len,
            ") out of range for ", shape_str(a.shape()));
    Tensor y({a.rows(), len});
    for (int i = 0; i < a.rows(); ++i)
      for (int j = 0; j < len; ++j) y.at(i, j) = a.at(i, c0 + j);
    return push(std::move(y), [this, ar, c0, len, yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      Tensor& ga = nodes_[size_t(ar)].grad;
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < len; ++j) ga.at(i, c0 + j) += g.at(i, j);
    });
  }

  // Row gather; backward scatter-adds. Serves embedding lookup and grouping
  // batch rows by class.
  Ref gather_rows(Ref ar, std::vector<int> ids) {
    const Tensor& a = value(ar);
    require(a.ndims() == 2, "gather_rows expects a matrix, got ", shape_str(a.shape()));
    for (int id : ids) require(id >= 0 && id < a.rows(), "gather_rows: row ", id, " out of range for ",
                               shape_str(a.shape()));
    Tensor y({int(ids.size()), a.cols()});
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < a.cols(); ++j) y.at(int(i), j) = a.at(ids[i], j);
    return push(std::move(y), [this, ar, ids = std::move(ids), yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      Tensor& ga = nodes_[size_t(ar)].grad;
      for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < g.cols(); ++j) ga.at(ids[i], j) += g.at(int(i), j);
    });
  }

  // Non-overlapping max over consecutive groups of k along the last axis.
  Ref maxout(Ref ar, int k) {
    const Tensor& a = value(ar);
    require(k >= 1, "maxout group size must be >= 1, got ", k);
    require(a.cols() % k == 0, "maxout: last extent of ", shape_str(a.shape()), " not divisible by group size ",
            k);
    const int n = a.ndims() == 2 ? a.rows() : 1;
    const int groups = a.cols() / k;
    Tensor y(a.ndims() == 2 ? std::vector<int>{n, groups} : std::vector<int>{groups});
    std::vector<int> argmax(size_t(n) * size_t(groups));
    for (int r = 0; r < n; ++r)
      for (int gi = 0; gi < groups; ++gi) {
        int best = gi * k;
        float bv = a.at(r, best);
        for (int j = 1; j < k; ++j)
          if (a.at(r, gi * k + j) > bv) {  // strict: ties stay at lowest index
            best = gi * k + j;
            bv = a.at(r, best);
          }
        y[size_t(r) * groups + gi] = bv;
        argmax[size_t(r) * groups + gi] = best;
      }
    return push(std::move(y), [this, ar, argmax = std::move(argmax), groups, yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      Tensor& ga = nodes_[size_t(ar)].grad;
      const int n = value(ar).ndims() == 2 ? value(ar).rows() : 1;
      for (int r = 0; r < n; ++r)
        for (int gi = 0; gi < groups; ++gi)
          ga.at(r, argmax[size_t(r) * groups + gi]) += g[size_t(r) * groups + gi];
    });
  }

  Ref act(Ref ar, Act kind) {
    const Tensor& a = value(ar);
    Tensor y = a;
    switch (kind) {
      case Act::kSigmoid:
        for (int64_t i = 0; i < y.numel(); ++i) y[i] = float(1.0 / (1.0 + std::exp(-double(y[i]))));
        break;
      case Act::kRelu:
        for (int64_t i = 0; i < y.numel(); ++i) y[i] = y[i] > 0.0f ? y[i] : 0.0f;
        break;
      case Act::kTanh:
        for (int64_t i = 0; i < y.numel(); ++i) y[i] = float(std::tanh(double(y[i])));
        break;
    }
    return push(std::move(y), [this, ar, kind, yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      const Tensor& yv = value(yi);
      const Tensor& av = value(ar);
      Tensor& ga = nodes_[size_t(ar)].grad;
      for (int64_t i = 0; i < g.numel(); ++i) {
        float d = 0.0f;
        switch (kind) {
          case Act::kSigmoid: d = yv[i] * (1.0f - yv[i]); break;
          case Act::kRelu: d = av[i] > 0.0f ? 1.0f : 0.0f; break;
          case Act::kTanh: d = 1.0f - yv[i] * yv[i]; break;
        }
        ga[i] += g[i] * d;
      }
    });
  }

  // Cross-correlation, x[B,C,T,F] * k[O,C,kh,kw] (+ per-map bias). Odd
  // kernel extents required on padded axes; padding preserves that axis.
  Ref conv2d(Ref xr, Ref kr, Ref bias, bool pad_t, bool pad_f) {
    const Tensor& x = value(xr);
    const Tensor& k = value(kr);
    require(x.ndims() == 4, "conv2d input must be [batch,ch,T,F], got ", shape_str(x.shape()));
    require(k.ndims() == 4, "conv2d kernels must be [out,ch,kh,kw], got ", shape_str(k.shape()));
    require(x.dim(1) == k.dim(1), "conv2d channel mismatch: input ", shape_str(x.shape()), " vs kernels ",
            shape_str(k.shape()));
    const int B = x.dim(0), C = x.dim(1), T = x.dim(2), F = x.dim(3);
    const int O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    if (pad_t) require(kh % 2 == 1, "conv2d: time padding needs an odd kernel height, got ", kh);
    if (pad_f) require(kw % 2 == 1, "conv2d: frequency padding needs an odd kernel width, got ", kw);
    const int pt = pad_t ? (kh - 1) / 2 : 0, pf = pad_f ? (kw - 1) / 2 : 0;
    const int To = T + 2 * pt - kh + 1, Fo = F + 2 * pf - kw + 1;
    require(To >= 1 && Fo >= 1, "conv2d: input ", T, "x", F, " smaller than kernel ", kh, "x", kw,
            " without padding; minimum input is ", kh - 2 * pt, "x", kw - 2 * pf);
    if (bias >= 0)
      require(value(bias).ndims() == 1 && value(bias).dim(0) == O, "conv2d bias shape ",
              shape_str(value(bias).shape()), " does not match ", O, " output maps");
    Tensor y({B, O, To, Fo});
    auto xat = [&](int b, int c, int t, int f) { return x[((int64_t(b) * C + c) * T + t) * F + f]; };
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < O; ++o)
        for (int to = 0; to < To; ++to)
          for (int fo = 0; fo < Fo; ++fo) {
            double acc = bias >= 0 ? double(value(bias)[o]) : 0.0;
            for (int c = 0; c < C; ++c)
              for (int i = 0; i < kh; ++i) {
                const int ti = to + i - pt;
                if (ti < 0 || ti >= T) continue;
                for (int j = 0; j < kw; ++j) {
                  const int fj = fo + j - pf;
                  if (fj < 0 || fj >= F) continue;
                  acc += double(xat(b, c, ti, fj)) * double(k[((int64_t(o) * C + c) * kh + i) * kw + j]);
                }
              }
            y[((int64_t(b) * O + o) * To + to) * Fo + fo] = float(acc);
          }
    return push(std::move(y), [this, xr, kr, bias, pt, pf, yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      const Tensor& xv = value(xr);
      const Tensor& kv = value(kr);
      Tensor& gx = nodes_[size_t(xr)].grad;
      Tensor& gk = nodes_[size_t(kr)].grad;
      const int B = xv.dim(0), C = xv.dim(1), T = xv.dim(2), F = xv.dim(3);
      const int O = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
      const int To = g.dim(2), Fo = g.dim(3);
      for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o)
          for (int to = 0; to < To; ++to)
            for (int fo = 0; fo < Fo; ++fo) {
              const float go = g[((int64_t(b) * O + o) * To + to) * Fo + fo];
              if (bias >= 0) nodes_[size_t(bias)].grad[o] += go;
              for (int c = 0; c < C; ++c)
                for (int i = 0; i < kh; ++i) {
                  const int ti = to + i - pt;
                  if (ti < 0 || ti >= T) continue;
                  for (int j = 0; j < kw; ++j) {
                    const int fj = fo + j - pf;
                    if (fj < 0 || fj >= F) continue;
                    gx[((int64_t(b) * C + c) * T + ti) * F + fj] +=
                        go * kv[((int64_t(o) * C + c) * kh + i) * kw + j];
                    gk[((int64_t(o) * C + c) * kh + i) * kw + j] +=
                        go * xv[((int64_t(b) * C + c) * T + ti) * F + fj];
                  }
                }
            }
    });
  }

  // Max pooling with stride equal to the window. Extents must divide; pad
  // upstream if they do not.
  Ref maxpool2d(Ref xr, int pt, int pf) {
    const Tensor& x = value(xr);
    require(x.ndims() == 4, "maxpool2d input must be [batch,ch,T,F], got ", shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1), T = x.dim(2), F = x.dim(3);
    require(pt >= 1 && pf >= 1, "maxpool2d window must be positive, got ", pt, "x", pf);
    require(pt <= T && pf <= F, "maxpool2d window ", pt, "x", pf, " larger than input ", T, "x", F);
    require(T % pt == 0 && F % pf == 0, "maxpool2d: extents ", T, "x", F, " not divisible by window ", pt, "x",
            pf);
    const int To = T / pt, Fo = F / pf;
    Tensor y({B, C, To, Fo});
    std::vector<int64_t> argmax(size_t(y.numel()));
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int to = 0; to < To; ++to)
          for (int fo = 0; fo < Fo; ++fo) {
            int64_t best = -1;
            float bv = 0.0f;
            for (int i = 0; i < pt; ++i)
              for (int j = 0; j < pf; ++j) {
                const int64_t idx = ((int64_t(b) * C + c) * T + to * pt + i) * F + fo * pf + j;
                if (best < 0 || x[idx] > bv) {
                  best = idx;
                  bv = x[idx];
                }
              }
            const int64_t oi = ((int64_t(b) * C + c) * To + to) * Fo + fo;
            y[oi] = bv;
            argmax[size_t(oi)] = best;
          }
    return push(std::move(y), [this, xr, argmax = std::move(argmax), yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      Tensor& gx = nodes_[size_t(xr)].grad;
      for (int64_t i = 0; i < g.numel(); ++i) gx[argmax[size_t(i)]] += g[i];
    });
  }

  // Zero-pads the trailing side of the time and/or frequency axis; used to
  // reach pooling divisibility explicitly rather than by truncation.
  Ref pad2d(Ref xr, int add_t, int add_f) {
    const Tensor& x = value(xr);
    require(x.ndims() == 4 && add_t >= 0 && add_f >= 0, "pad2d needs [batch,ch,T,F] input");
    if (add_t == 0 && add_f == 0) return xr;
    const int B = x.dim(0), C = x.dim(1), T = x.dim(2), F = x.dim(3);
    const int To = T + add_t, Fo = F + add_f;
    Tensor y({B, C, To, Fo});
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t)
          for (int f = 0; f < F; ++f)
            y[((int64_t(b) * C + c) * To + t) * Fo + f] = x[((int64_t(b) * C + c) * T + t) * F + f];
    return push(std::move(y), [this, xr, yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      Tensor& gx = nodes_[size_t(xr)].grad;
      const Tensor& xv = value(xr);
      const int B = xv.dim(0), C = xv.dim(1), T = xv.dim(2), F = xv.dim(3);
      const int To = g.dim(2), Fo = g.dim(3);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
          for (int t = 0; t < T; ++t)
            for (int f = 0; f < F; ++f)
              gx[((int64_t(b) * C + c) * T + t) * F + f] += g[((int64_t(b) * C + c) * To + t) * Fo + f];
    });
  }

  Ref reshape(Ref ar, std::vector<int> dims) {
    const Tensor& a = value(ar);
    require(shape_numel(dims) == a.numel(), "reshape ", shape_str(a.shape()), " to ", shape_str(dims),
            " changes element count");
    Tensor y = Tensor::from(std::move(dims), std::vector<float>(a.data(), a.data() + a.numel()));
    return push(std::move(y), [this, ar, yi = int(nodes_.size())]() {
      const Tensor& g = nodes_[size_t(yi)].grad;
      Tensor& ga = nodes_[size_t(ar)].grad;
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    });
  }

  // Sum of all elements into a scalar, accumulated in double.
  Ref sum(Ref ar) {
    const Tensor& a = value(ar);
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) acc += double(a[i]);
    Tensor y({1});
    y[0] = float(acc);
    return push(std::move(y), [this, ar, yi = int(nodes_.size())]() {
      const float g = nodes_[size_t(yi)].grad[0];
      Tensor& ga = nodes_[size_t(ar)].grad;
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
  }

  struct SoftmaxXent {
    Ref loss;          // scalar node, mean negative log posterior
    Tensor posteriors; // [batch x C], rows sum to 1
  };

  // Fused softmax + cross entropy. The combined backward is
  // (posterior - one_hot(target)) / batch.
  SoftmaxXent softmax_xent(Ref logits, const std::vector<int>& targets) {
    const Tensor& z = value(logits);
    require(z.ndims() == 2, "softmax_xent expects [batch,C] logits, got ", shape_str(z.shape()));
    const int n = z.rows(), C = z.cols();
    require(int(targets.size()) == n, "softmax_xent: ", targets.size(), " targets for batch ", n);
    for (int t : targets) require(t >= 0 && t < C, "softmax_xent: target ", t, " out of range [0,", C, ")");
    Tensor post({n, C});
    double loss_acc = 0.0;
    for (int r = 0; r < n; ++r) {
      double m = -HUGE_VAL;
      for (int j = 0; j < C; ++j) m = std::max(m, double(z.at(r, j)));
      double s = 0.0;
      for (int j = 0; j < C; ++j) s += std::exp(double(z.at(r, j)) - m);
      const double logz = m + std::log(s);
      for (int j = 0; j < C; ++j) post.at(r, j) = float(std::exp(double(z.at(r, j)) - logz));
      loss_acc -= double(z.at(r, targets[size_t(r)])) - logz;
    }
    Tensor loss({1});
    loss[0] = float(loss_acc / n);
    Ref lr = push(std::move(loss), [this, logits, post, targets, yi = int(nodes_.size())]() {
      const float gl = nodes_[size_t(yi)].grad[0];
      Tensor& gz = nodes_[size_t(logits)].grad;
      const int n = post.rows(), C = post.cols();
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < C; ++j) {
          float d = post.at(r, j) - (j == targets[size_t(r)] ? 1.0f : 0.0f);
          gz.at(r, j) += gl * d / float(n);
        }
    });
    return {lr, post};
  }

  // Seeds d(loss)=1 and walks the tape in reverse creation order.
  void backward(Ref loss) {
    require(value(loss).numel() == 1, "backward needs a scalar loss, got ", shape_str(value(loss).shape()));
    nodes_[size_t(loss)].grad[0] = 1.0f;
    for (int i = loss; i >= 0; --i)
      if (nodes_[size_t(i)].backward) nodes_[size_t(i)].backward();
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void()> backward;
  };

  Ref push(Tensor v, std::function<void()> bw) {
    Node n;
    n.grad = Tensor(v.shape());
    n.value = std::move(v);
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, Ref> param_nodes_;
};

}  // namespace hal

#endif  // HAL_AUTODIFF_HPP_
