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

#ifndef HAL_MODELS_HPP_
#define HAL_MODELS_HPP_

#include <memory>
#include <string>
#include <vector>

#include "hal/autodiff.hpp"
#include "hal/config.hpp"
#include "hal/tensor.hpp"

namespace hal {

// Per-utterance recurrent carry state: left-to-right LSTM hidden/cell values
// retained between consecutive subsequences. Cleared at utterance boundaries
// regardless of policy; right-to-left states are never carried.
struct StreamState {
  std::vector<Tensor> h, c;  // one [1 x units] pair per layer
  bool active() const { return !h.empty(); }
  void clear() {
    h.clear();
    c.clear();
  }
};

// Training-time knobs passed into model forwards.
struct TrainContext {
  float dropout = 0.0f;  // hidden-activation dropout rate, inverted scaling
  Rng* rng = nullptr;
};

// One sampled training frame.
struct FrameSample {
  const Tensor* feats;  // utterance feature matrix
  int frame;
  int target;
};

inline void glorot_init(Tensor& w, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = float(rng.uniform(-bound, bound));
}

// Relu stacks need the fan-in scaling; symmetric-bound init attenuates the
// signal roughly by half per layer and a ten-conv net never leaves uniform.
inline void he_init(Tensor& w, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(fan_in));
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = float(rng.uniform(-bound, bound));
}

// Frames outside [0, T) replicate the edge frame (constant extension).
inline int clamp_frame(int t, int total) { return t < 0 ? 0 : (t >= total ? total - 1 : t); }

class AcousticModel {
 public:
  virtual ~AcousticModel() = default;

  virtual std::string kind() const = 0;
  virtual int num_states() const = 0;
  virtual int frame_dim() const = 0;  // per-frame feature width the model consumes
  virtual bool sequence_model() const { return false; }
  virtual std::vector<Parameter*> parameters() = 0;
  virtual Config to_config() const = 0;

  int64_t num_params() {
    int64_t n = 0;
    for (Parameter* p : parameters()) n += p->numel();
    return n;
  }

  void zero_grads() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

  // Mean cross entropy over a batch of sampled frames (frame models).
  virtual Tape::Ref frame_loss(Tape&, const std::vector<FrameSample>&, const TrainContext&) {
    fail(kind(), " is not a frame-level model");
  }

  // Mean cross entropy over one subsequence (sequence models). Reads and
  // updates the carry state; start states never receive gradient.
  virtual Tape::Ref subseq_loss(Tape&, const Tensor&, int, int, const std::vector<int>&, StreamState*,
                                const TrainContext&) {
    fail(kind(), " is not a sequence model");
  }

  // Full-utterance per-frame log posteriors, each row logsumexp-normalized
  // to 0. Carry models require a stream state.
  virtual Tensor log_posteriors(const Tensor& feats, StreamState* state = nullptr) = 0;

 protected:
  // Converts a [T x C] logits tensor to log posteriors in double precision.
  static Tensor log_softmax_rows(const Tensor& logits) {
    Tensor out({logits.rows(), logits.cols()});
    for (int r = 0; r < logits.rows(); ++r) {
      double lse = log_sum_exp(logits.data() + int64_t(r) * logits.cols(), logits.cols());
      for (int c = 0; c < logits.cols(); ++c) out.at(r, c) = float(double(logits.at(r, c)) - lse);
    }
    return out;
  }

  static Tensor dropout_mask(const std::vector<int>& dims, float rate, Rng& rng) {
    Tensor m(dims);
    const float keep_scale = 1.0f / (1.0f - rate);
    for (int64_t i = 0; i < m.numel(); ++i) m[i] = rng.uniform() < double(rate) ? 0.0f : keep_scale;
    return m;
  }

  static Tape::Ref maybe_dropout(Tape& tape, Tape::Ref x, const TrainContext& ctx) {
    if (ctx.dropout <= 0.0f) return x;
    require(ctx.rng != nullptr, "dropout requires an rng in the train context");
    return tape.mul_mask(x, dropout_mask(tape.value(x).shape(), ctx.dropout, *ctx.rng));
  }
};

// ---------------------------------------------------------------------------
// Feed-forward DNN over spliced frames. Hidden layers are maxout groups when
// maxout_group > 1, otherwise plain activations. Doubles as the pretraining
// substrate: build_prefix() emits k-layer prefixes with fresh softmax heads.
// ---------------------------------------------------------------------------

struct DnnConfig {
  int feature_dim = 0;
  int ivector_dim = 0;     // trailing per-frame dims treated as a constant speaker vector
  int splice_left = 4;
  int splice_right = 4;
  int hidden_layers = 4;
  int hidden_units = 512;  // linear units per hidden layer
  int maxout_group = 1;
  Act activation = Act::kSigmoid;
  int output_states = 0;
  uint64_t seed = 1;

  void validate() const {
    require(feature_dim > 0 && output_states > 0, "dnn config needs feature_dim and output_states");
    require(splice_left >= 0 && splice_right >= 0 && hidden_layers >= 1 && hidden_units >= 1,
            "dnn config has non-positive sizes");
    require(maxout_group >= 1 && hidden_units % maxout_group == 0, "dnn hidden_units ", hidden_units,
            " not divisible by maxout group ", maxout_group);
  }
  int input_dim() const { return (splice_left + 1 + splice_right) * feature_dim + ivector_dim; }
  int hidden_out() const { return hidden_units / maxout_group; }
};

class DnnModel : public AcousticModel {
 public:
  explicit DnnModel(const DnnConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    int in = cfg_.input_dim();
    for (int l = 0; l < cfg_.hidden_layers; ++l) {
      Tensor w({in, cfg_.hidden_units});
      glorot_init(w, in, cfg_.hidden_units, rng);
      layers_w_.emplace_back(str_cat("dnn.l", l, ".W"), std::move(w));
      layers_b_.emplace_back(str_cat("dnn.l", l, ".b"), Tensor({cfg_.hidden_units}));
      in = cfg_.hidden_out();
    }
    out_w_ = Parameter("dnn.out.W", Tensor({in, cfg_.output_states}));  // zeros: uniform start
    out_b_ = Parameter("dnn.out.b", Tensor({cfg_.output_states}));
  }

  std::string kind() const override { return "dnn"; }
  int num_states() const override { return cfg_.output_states; }
  int frame_dim() const override { return cfg_.feature_dim + cfg_.ivector_dim; }
  const DnnConfig& config() const { return cfg_; }

  std::vector<Parameter*> parameters() override {
    std::vector<Parameter*> ps;
    for (size_t l = 0; l < layers_w_.size(); ++l) {
      ps.push_back(&layers_w_[l]);
      ps.push_back(&layers_b_[l]);
    }
    ps.push_back(&out_w_);
    ps.push_back(&out_b_);
    return ps;
  }

  Config to_config() const override {
    Config c;
    c.set("model", "dnn");
    c.set("feature_dim", std::to_string(cfg_.feature_dim));
    c.set("ivector_dim", std::to_string(cfg_.ivector_dim));
    c.set("splice_left", std::to_string(cfg_.splice_left));
    c.set("splice_right", std::to_string(cfg_.splice_right));
    c.set("hidden_layers", std::to_string(cfg_.hidden_layers));
    c.set("hidden_units", std::to_string(cfg_.hidden_units));
    c.set("maxout_group", std::to_string(cfg_.maxout_group));
    c.set("activation", act_name(cfg_.activation));
    c.set("output_states", std::to_string(cfg_.output_states));
    c.set("seed", std::to_string(cfg_.seed));
    return c;
  }

  Tensor assemble_input(const std::vector<FrameSample>& batch) const {
    const int fd = cfg_.feature_dim, ivd = cfg_.ivector_dim;
    const int win = cfg_.splice_left + 1 + cfg_.splice_right;
    Tensor x({int(batch.size()), cfg_.input_dim()});
    for (size_t i = 0; i < batch.size(); ++i) {
      const Tensor& f = *batch[i].feats;
      require(f.cols() == frame_dim(), "feature width ", f.cols(), " does not match model input ",
              frame_dim());
      int c = 0;
      for (int w = -cfg_.splice_left; w <= cfg_.splice_right; ++w) {
        int t = clamp_frame(batch[i].frame + w, f.rows());
        for (int d = 0; d < fd; ++d) x.at(int(i), c++) = f.at(t, d);
      }
      for (int d = 0; d < ivd; ++d) x.at(int(i), c++) = f.at(clamp_frame(batch[i].frame, f.rows()), fd + d);
      (void)win;
    }
    return x;
  }

  Tape::Ref logits(Tape& tape, Tape::Ref x, const TrainContext& ctx) {
    Tape::Ref h = x;
    for (size_t l = 0; l < layers_w_.size(); ++l) {
      h = tape.affine(h, tape.param(layers_w_[l]), tape.param(layers_b_[l]));
      h = cfg_.maxout_group > 1 ? tape.maxout(h, cfg_.maxout_group) : tape.act(h, cfg_.activation);
      h = maybe_dropout(tape, h, ctx);
    }
    return tape.affine(h, tape.param(out_w_), tape.param(out_b_));
  }

  Tape::Ref frame_loss(Tape& tape, const std::vector<FrameSample>& batch, const TrainContext& ctx) override {
    std::vector<int> targets;
    for (const auto& s : batch) targets.push_back(s.target);
    auto z = logits(tape, tape.constant(assemble_input(batch)), ctx);
    return tape.softmax_xent(z, targets).loss;
  }

  Tensor log_posteriors(const Tensor& feats, StreamState* = nullptr) override {
    std::vector<FrameSample> all;
    for (int t = 0; t < feats.rows(); ++t) all.push_back({&feats, t, 0});
    Tape tape;
    TrainContext ctx;
    auto z = logits(tape, tape.constant(assemble_input(all)), ctx);
    return log_softmax_rows(tape.value(z));
  }

 private:
  DnnConfig cfg_;
  std::vector<Parameter> layers_w_, layers_b_;
  Parameter out_w_, out_b_;
};

// ---------------------------------------------------------------------------
// Unfolded maxout RNN: one recurrent layer replicated (weight-shared) over a
// fixed window of past steps, non-recurrent maxout layers, a maxout
// bottleneck, and a softmax output. Inputs are right-context spliced frames
// with an optional constant speaker vector appended at every unfold step.
// ---------------------------------------------------------------------------

struct MaxoutRnnConfig {
  int recurrent_units = 2828;  // linear units; projected to half by 2->1 maxout
  int nonrecurrent_layers = 4;
  int bottleneck_wide = 1024;
  int bottleneck_narrow = 512;
  int output_states = 32000;
  int unfold_steps = 6;   // recurrence unfolded over frames t-unfold+1 .. t
  int splice_right = 6;   // spliced input frames t .. t+splice_right-1
  int feature_dim = 40;
  int ivector_dim = 100;
  uint64_t seed = 1;

  void validate() const {
    require(recurrent_units >= 2 && recurrent_units % 2 == 0, "recurrent_units must be even, got ",
            recurrent_units);
    require(unfold_steps >= 1, "unfold_steps must be >= 1, got ", unfold_steps);
    require(splice_right >= 1 && feature_dim > 0 && ivector_dim >= 0, "bad rnn input config");
    require(nonrecurrent_layers >= 0 && output_states > 0, "bad rnn layer config");
    require(bottleneck_wide >= 1 && bottleneck_narrow >= 1 && bottleneck_wide % bottleneck_narrow == 0,
            "bottleneck ", bottleneck_wide, "->", bottleneck_narrow, " must divide evenly");
  }
  int input_dim() const { return splice_right * feature_dim + ivector_dim; }
  int projected() const { return recurrent_units / 2; }
};

// Parameter layout without allocating anything; the builder and the
// parameter-parity checks share this arithmetic.
inline std::vector<std::pair<std::string, std::vector<int>>> maxout_rnn_schema(const MaxoutRnnConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, std::vector<int>>> s;
  s.push_back({"rnn.in.W", {cfg.input_dim(), cfg.recurrent_units}});
  s.push_back({"rnn.in.b", {cfg.recurrent_units}});
  if (cfg.unfold_steps > 1) s.push_back({"rnn.rec.W", {cfg.projected(), cfg.recurrent_units}});
  for (int l = 0; l < cfg.nonrecurrent_layers; ++l) {
    s.push_back({str_cat("rnn.ff", l, ".W"), {cfg.projected(), cfg.recurrent_units}});
    s.push_back({str_cat("rnn.ff", l, ".b"), {cfg.recurrent_units}});
  }
  s.push_back({"rnn.bn.W", {cfg.projected(), cfg.bottleneck_wide}});
  s.push_back({"rnn.bn.b", {cfg.bottleneck_wide}});
  s.push_back({"rnn.out.W", {cfg.bottleneck_narrow, cfg.output_states}});
  s.push_back({"rnn.out.b", {cfg.output_states}});
  return s;
}

class MaxoutRnnModel : public AcousticModel {
 public:
  explicit MaxoutRnnModel(const MaxoutRnnConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    for (const auto& [name, dims] : maxout_rnn_schema(cfg_)) {
      Tensor t(dims);
      // weights glorot, biases zero, output layer zero for uniform start
      if (dims.size() == 2 && name != "rnn.out.W") glorot_init(t, dims[0], dims[1], rng);
      params_.emplace_back(name, std::move(t));
    }
  }

  std::string kind() const override { return "rnn"; }
  int num_states() const override { return cfg_.output_states; }
  int frame_dim() const override { return cfg_.feature_dim + cfg_.ivector_dim; }
  const MaxoutRnnConfig& config() const { return cfg_; }

  std::vector<Parameter*> parameters() override {
    std::vector<Parameter*> ps;
    for (auto& p : params_) ps.push_back(&p);
    return ps;
  }

  Config to_config() const override {
    Config c;
    c.set("model", "rnn");
    c.set("recurrent_units", std::to_string(cfg_.recurrent_units));
    c.set("nonrecurrent_layers", std::to_string(cfg_.nonrecurrent_layers));
    c.set("bottleneck_wide", std::to_string(cfg_.bottleneck_wide));
    c.set("bottleneck_narrow", std::to_string(cfg_.bottleneck_narrow));
    c.set("output_states", std::to_string(cfg_.output_states));
    c.set("unfold_steps", std::to_string(cfg_.unfold_steps));
    c.set("splice_right", std::to_string(cfg_.splice_right));
    c.set("feature_dim", std::to_string(cfg_.feature_dim));
    c.set("ivector_dim", std::to_string(cfg_.ivector_dim));
    c.set("seed", std::to_string(cfg_.seed));
    return c;
  }

  // Spliced input block for unfold step at absolute frame s of one utterance.
  void fill_step_input(const Tensor& feats, int s, float* dst) const {
    const int fd = cfg_.feature_dim;
    int c = 0;
    for (int w = 0; w < cfg_.splice_right; ++w) {
      int t = clamp_frame(s + w, feats.rows());
      for (int d = 0; d < fd; ++d) dst[c++] = feats.at(t, d);
    }
    for (int d = 0; d < cfg_.ivector_dim; ++d) dst[c++] = feats.at(clamp_frame(s, feats.rows()), fd + d);
  }

  // Logits for a batch of center frames. The recurrence starts from zeros at
  // the left edge of the unfold window (truncated gradients).
  Tape::Ref logits(Tape& tape, const std::vector<FrameSample>& batch, const TrainContext& ctx) {
    const int B = int(batch.size());
    Parameter& in_w = find("rnn.in.W");
    Parameter& in_b = find("rnn.in.b");
    Tape::Ref h = -1;
    for (int k = 0; k < cfg_.unfold_steps; ++k) {
      Tensor x({B, cfg_.input_dim()});
      for (int i = 0; i < B; ++i) {
        int s = batch[size_t(i)].frame - (cfg_.unfold_steps - 1) + k;
        fill_step_input(*batch[size_t(i)].feats, s, x.data() + int64_t(i) * cfg_.input_dim());
      }
      Tape::Ref pre = tape.affine(tape.constant(std::move(x)), tape.param(in_w), tape.param(in_b));
      if (h >= 0) pre = tape.add(pre, tape.matmul(h, tape.param(find("rnn.rec.W"))));
      h = tape.maxout(pre, 2);
    }
    for (int l = 0; l < cfg_.nonrecurrent_layers; ++l) {
      h = tape.maxout(tape.affine(h, tape.param(find(str_cat("rnn.ff", l, ".W"))),
                                  tape.param(find(str_cat("rnn.ff", l, ".b")))),
                      2);
      h = maybe_dropout(tape, h, ctx);
    }
    h = tape.maxout(tape.affine(h, tape.param(find("rnn.bn.W")), tape.param(find("rnn.bn.b"))),
                    cfg_.bottleneck_wide / cfg_.bottleneck_narrow);
    return tape.affine(h, tape.param(find("rnn.out.W")), tape.param(find("rnn.out.b")));
  }

  Tape::Ref frame_loss(Tape& tape, const std::vector<FrameSample>& batch, const TrainContext& ctx) override {
    std::vector<int> targets;
    for (const auto& s : batch) targets.push_back(s.target);
    return tape.softmax_xent(logits(tape, batch, ctx), targets).loss;
  }

  Tensor log_posteriors(const Tensor& feats, StreamState* = nullptr) override {
    require(feats.cols() == frame_dim(), "feature width ", feats.cols(), " does not match model input ",
            frame_dim());
    std::vector<FrameSample> all;
    for (int t = 0; t < feats.rows(); ++t) all.push_back({&feats, t, 0});
    Tape tape;
    TrainContext ctx;
    return log_softmax_rows(tape.value(logits(tape, all, ctx)));
  }

 private:
  Parameter& find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    fail("rnn parameter not found: ", name);
  }

  MaxoutRnnConfig cfg_;
  std::vector<Parameter> params_;
};

// ---------------------------------------------------------------------------
// CNN over time x frequency patches. Two builders share the executor: the
// 3x3 designs (6/8/10 conv layers, feature maps rising across four blocks,
// pooling only right before each map increase) and a classical wide-kernel
// two-conv baseline. Variants control pooling and padding along time.
// ---------------------------------------------------------------------------

enum class VggVariant { kPool, kNoPool, kNoPoolNoPad };

inline VggVariant vgg_variant_from_name(const std::string& s) {
  if (s == "pool") return VggVariant::kPool;
  if (s == "no_pool") return VggVariant::kNoPool;
  if (s == "no_pool_no_pad") return VggVariant::kNoPoolNoPad;
  fail("unknown vgg variant: ", s);
}

inline const char* vgg_variant_name(VggVariant v) {
  switch (v) {
    case VggVariant::kPool: return "pool";
    case VggVariant::kNoPool: return "no_pool";
    case VggVariant::kNoPoolNoPad: return "no_pool_no_pad";
  }
  return "?";
}

struct CnnLayer {
  enum Kind { kConv, kPool, kPad } kind;
  int maps = 0, kh = 0, kw = 0;      // conv
  bool pad_t = false, pad_f = false; // conv
  int pt = 0, pf = 0;                // pool window
  int add_t = 0, add_f = 0;          // pad
};

struct VggConfig {
  int conv_layers = 10;  // 6, 8 or 10
  VggVariant variant = VggVariant::kPool;
  std::vector<int> feature_maps = {64, 128, 256, 512};
  int patch_frames = 16;  // time extent of the input patch, centered
  int patch_dim = 40;     // frequency extent (frame width consumed)
  std::vector<int> fc_dims = {2048, 2048};
  int output_states = 0;
  bool classic = false;   // classical two-conv wide-kernel baseline
  int classic_kernel = 9;
  int classic_maps = 512;
  uint64_t seed = 1;

  void validate() const {
    require(output_states > 0 && patch_frames >= 1 && patch_dim >= 1, "bad cnn patch config");
    if (classic) return;
    require(conv_layers == 6 || conv_layers == 8 || conv_layers == 10, "conv_layers must be 6, 8 or 10, got ",
            conv_layers);
    require(feature_maps.size() == 4, "feature_maps must list four block widths");
    for (size_t i = 1; i < feature_maps.size(); ++i)
      require(feature_maps[i] > feature_maps[i - 1], "feature_maps must rise, got ",
              feature_maps[i - 1], " then ", feature_maps[i]);
    if (variant == VggVariant::kNoPoolNoPad)
      require(patch_frames >= 2 * conv_layers + 1, "unpadded variant with ", conv_layers,
              " conv layers needs patch_frames >= ", 2 * conv_layers + 1, ", got ", patch_frames);
  }
};

inline std::vector<int> vgg_block_convs(int conv_layers) {
  if (conv_layers == 6) return {1, 1, 2, 2};
  if (conv_layers == 8) return {2, 2, 2, 2};
  return {2, 2, 3, 3};
}

// Layer plan plus a human-readable spatial trace. Pooling windows that do not
// divide the current extent are preceded by an explicit trailing zero-pad.
inline std::vector<CnnLayer> vgg_layer_plan(const VggConfig& cfg, std::vector<std::string>* trace = nullptr) {
  cfg.validate();
  std::vector<CnnLayer> plan;
  int T = cfg.patch_frames, F = cfg.patch_dim;
  auto note = [&](const std::string& s) {
    if (trace) trace->push_back(str_cat(s, " -> ", T, "x", F));
  };
  note("input");
  auto add_pool = [&](int pt, int pf) {
    int at = (pt - T % pt) % pt, af = (pf - F % pf) % pf;
    if (at || af) {
      plan.push_back({CnnLayer::kPad, 0, 0, 0, false, false, 0, 0, at, af});
      T += at;
      F += af;
      note(str_cat("pad +", at, "+", af));
    }
    plan.push_back({CnnLayer::kPool, 0, 0, 0, false, false, pt, pf, 0, 0});
    T /= pt;
    F /= pf;
    note(str_cat("pool ", pt, "x", pf));
  };
  if (cfg.classic) {
    const int k = cfg.classic_kernel;
    plan.push_back({CnnLayer::kConv, cfg.classic_maps, k, k, true, true, 0, 0, 0, 0});
    note(str_cat("conv ", k, "x", k, " maps ", cfg.classic_maps));
    add_pool(2, 2);
    plan.push_back({CnnLayer::kConv, cfg.classic_maps, 3, 3, true, true, 0, 0, 0, 0});
    note(str_cat("conv 3x3 maps ", cfg.classic_maps));
    return plan;
  }
  const bool pool_t = cfg.variant == VggVariant::kPool;
  const bool pad_t = cfg.variant != VggVariant::kNoPoolNoPad;
  auto counts = vgg_block_convs(cfg.conv_layers);
  for (int block = 0; block < 4; ++block) {
    if (block > 0) add_pool(pool_t ? 2 : 1, 2);  // pool right before the map increase
    for (int i = 0; i < counts[size_t(block)]; ++i) {
      plan.push_back({CnnLayer::kConv, cfg.feature_maps[size_t(block)], 3, 3, pad_t, true, 0, 0, 0, 0});
      if (!pad_t) T -= 2;
      require(T >= 1, "patch too small: ", cfg.patch_frames, " frames exhausted before conv block ", block,
              "; unpadded variant needs patch_frames >= ", 2 * cfg.conv_layers + 1);
      note(str_cat("conv 3x3 maps ", cfg.feature_maps[size_t(block)]));
    }
  }
  return plan;
}

class VggModel : public AcousticModel {
 public:
  explicit VggModel(const VggConfig& cfg) : cfg_(cfg) {
    plan_ = vgg_layer_plan(cfg_, &trace_);
    Rng rng(cfg_.seed);
    int ch = 1, T = cfg_.patch_frames, F = cfg_.patch_dim, ci = 0;
    for (const auto& layer : plan_) {
      if (layer.kind == CnnLayer::kConv) {
        Tensor k({layer.maps, ch, layer.kh, layer.kw});
        he_init(k, ch * layer.kh * layer.kw, rng);
        conv_w_.emplace_back(str_cat("cnn.c", ci, ".K"), std::move(k));
        conv_b_.emplace_back(str_cat("cnn.c", ci, ".b"), Tensor({layer.maps}));
        ++ci;
        ch = layer.maps;
        if (!layer.pad_t) T -= layer.kh - 1;
        if (!layer.pad_f) F -= layer.kw - 1;
      } else if (layer.kind == CnnLayer::kPool) {
        T /= layer.pt;
        F /= layer.pf;
      } else {
        T += layer.add_t;
        F += layer.add_f;
      }
    }
    flat_dim_ = ch * T * F;
    int in = flat_dim_;
    for (size_t i = 0; i < cfg_.fc_dims.size(); ++i) {
      Tensor w({in, cfg_.fc_dims[i]});
      he_init(w, in, rng);
      fc_w_.emplace_back(str_cat("cnn.fc", i, ".W"), std::move(w));
      fc_b_.emplace_back(str_cat("cnn.fc", i, ".b"), Tensor({cfg_.fc_dims[i]}));
      in = cfg_.fc_dims[i];
    }
    out_w_ = Parameter("cnn.out.W", Tensor({in, cfg_.output_states}));
    out_b_ = Parameter("cnn.out.b", Tensor({cfg_.output_states}));
  }

  std::string kind() const override { return "vgg"; }
  int num_states() const override { return cfg_.output_states; }
  int frame_dim() const override { return cfg_.patch_dim; }
  const VggConfig& config() const { return cfg_; }
  const std::vector<std::string>& trace() const { return trace_; }
  int flat_dim() const { return flat_dim_; }

  std::vector<Parameter*> parameters() override {
    std::vector<Parameter*> ps;
    for (size_t i = 0; i < conv_w_.size(); ++i) {
      ps.push_back(&conv_w_[i]);
      ps.push_back(&conv_b_[i]);
    }
    for (size_t i = 0; i < fc_w_.size(); ++i) {
      ps.push_back(&fc_w_[i]);
      ps.push_back(&fc_b_[i]);
    }
    ps.push_back(&out_w_);
    ps.push_back(&out_b_);
    return ps;
  }

  Config to_config() const override {
    Config c;
    c.set("model", "vgg");
    c.set("conv_layers", std::to_string(cfg_.conv_layers));
    c.set("variant", vgg_variant_name(cfg_.variant));
    std::string maps;
    for (size_t i = 0; i < cfg_.feature_maps.size(); ++i)
      maps += (i ? "," : "") + std::to_string(cfg_.feature_maps[i]);
    c.set("feature_maps", maps);
    c.set("patch_frames", std::to_string(cfg_.patch_frames));
    c.set("patch_dim", std::to_string(cfg_.patch_dim));
    std::string fcs;
    for (size_t i = 0; i < cfg_.fc_dims.size(); ++i) fcs += (i ? "," : "") + std::to_string(cfg_.fc_dims[i]);
    c.set("fc_dims", fcs);
    c.set("output_states", std::to_string(cfg_.output_states));
    c.set("classic", cfg_.classic ? "true" : "false");
    c.set("classic_kernel", std::to_string(cfg_.classic_kernel));
    c.set("classic_maps", std::to_string(cfg_.classic_maps));
    c.set("seed", std::to_string(cfg_.seed));
    return c;
  }

  // Patches cover the leading patch_dim dims of each frame; trailing dims
  // (e.g. a constant speaker vector) are not fed through the convolutions.
  Tensor assemble_patches(const std::vector<FrameSample>& batch) const {
    const int T = cfg_.patch_frames, F = cfg_.patch_dim;
    const int left = (T - 1) / 2;
    Tensor x({int(batch.size()), 1, T, F});
    for (size_t i = 0; i < batch.size(); ++i) {
      const Tensor& f = *batch[i].feats;
      require(f.cols() >= F, "feature width ", f.cols(), " is below the cnn patch dim ", F);
      for (int w = 0; w < T; ++w) {
        int t = clamp_frame(batch[i].frame - left + w, f.rows());
        for (int d = 0; d < F; ++d) x[((int64_t(i) * 1 + 0) * T + w) * F + d] = f.at(t, d);
      }
    }
    return x;
  }

  Tape::Ref logits(Tape& tape, Tape::Ref x, const TrainContext& ctx) {
    int ci = 0;
    for (const auto& layer : plan_) {
      if (layer.kind == CnnLayer::kConv) {
        x = tape.conv2d(x, tape.param(conv_w_[size_t(ci)]), tape.param(conv_b_[size_t(ci)]), layer.pad_t,
                        layer.pad_f);
        x = tape.act(x, Act::kRelu);
        ++ci;
      } else if (layer.kind == CnnLayer::kPool) {
        x = tape.maxpool2d(x, layer.pt, layer.pf);
      } else {
        x = tape.pad2d(x, layer.add_t, layer.add_f);
      }
    }
    const int B = tape.value(x).dim(0);
    Tape::Ref h = tape.reshape(x, {B, flat_dim_});
    for (size_t i = 0; i < fc_w_.size(); ++i) {
      h = tape.act(tape.affine(h, tape.param(fc_w_[i]), tape.param(fc_b_[i])), Act::kRelu);
      h = maybe_dropout(tape, h, ctx);
    }
    return tape.affine(h, tape.param(out_w_), tape.param(out_b_));
  }

  Tape::Ref frame_loss(Tape& tape, const std::vector<FrameSample>& batch, const TrainContext& ctx) override {
    std::vector<int> targets;
    for (const auto& s : batch) targets.push_back(s.target);
    auto z = logits(tape, tape.constant(assemble_patches(batch)), ctx);
    return tape.softmax_xent(z, targets).loss;
  }

  Tensor log_posteriors(const Tensor& feats, StreamState* = nullptr) override {
    std::vector<FrameSample> all;
    for (int t = 0; t < feats.rows(); ++t) all.push_back({&feats, t, 0});
    Tape tape;
    TrainContext ctx;
    auto z = logits(tape, tape.constant(assemble_patches(all)), ctx);
    return log_softmax_rows(tape.value(z));
  }

 private:
  VggConfig cfg_;
  std::vector<CnnLayer> plan_;
  std::vector<std::string> trace_;
  int flat_dim_ = 0;
  std::vector<Parameter> conv_w_, conv_b_, fc_w_, fc_b_;
  Parameter out_w_, out_b_;
};

// ---------------------------------------------------------------------------
// Bidirectional LSTM trained on non-overlapping subsequences. Left-to-right
// start states are either carried over from the previous subsequence of the
// same utterance or reset to zero; right-to-left start states always reset.
// Forward/backward activations are concatenated between layers, followed by
// a linear bottleneck and the softmax output.
// ---------------------------------------------------------------------------

struct BlstmConfig {
  int layers = 1;
  int units = 512;       // per direction
  int subseq_len = 20;
  bool carry = false;    // start-state policy for the left-to-right pass
  int bottleneck = 256;
  int output_states = 0;
  int feature_dim = 0;
  uint64_t seed = 1;

  void validate() const {
    require(layers >= 1 && units >= 1 && subseq_len >= 1, "bad blstm shape config");
    require(bottleneck >= 1 && output_states > 0 && feature_dim > 0, "bad blstm head config");
  }
};

class BlstmModel : public AcousticModel {
 public:
  explicit BlstmModel(const BlstmConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    int in = cfg_.feature_dim;
    for (int l = 0; l < cfg_.layers; ++l) {
      for (const char* dir : {"fwd", "bwd"}) {
        Tensor w({in + cfg_.units, 4 * cfg_.units});
        glorot_init(w, in + cfg_.units, 4 * cfg_.units, rng);
        gate_w_.emplace_back(str_cat("blstm.l", l, ".", dir, ".W"), std::move(w));
        gate_b_.emplace_back(str_cat("blstm.l", l, ".", dir, ".b"), Tensor({4 * cfg_.units}));
      }
      in = 2 * cfg_.units;
    }
    Tensor bw({2 * cfg_.units, cfg_.bottleneck});
    glorot_init(bw, 2 * cfg_.units, cfg_.bottleneck, rng);
    bn_w_ = Parameter("blstm.bn.W", std::move(bw));
    bn_b_ = Parameter("blstm.bn.b", Tensor({cfg_.bottleneck}));
    out_w_ = Parameter("blstm.out.W", Tensor({cfg_.bottleneck, cfg_.output_states}));
    out_b_ = Parameter("blstm.out.b", Tensor({cfg_.output_states}));
  }

  std::string kind() const override { return "blstm"; }
  int num_states() const override { return cfg_.output_states; }
  int frame_dim() const override { return cfg_.feature_dim; }
  bool sequence_model() const override { return true; }
  const BlstmConfig& config() const { return cfg_; }

  std::vector<Parameter*> parameters() override {
    std::vector<Parameter*> ps;
    for (size_t i = 0; i < gate_w_.size(); ++i) {
      ps.push_back(&gate_w_[i]);
      ps.push_back(&gate_b_[i]);
    }
    ps.push_back(&bn_w_);
    ps.push_back(&bn_b_);
    ps.push_back(&out_w_);
    ps.push_back(&out_b_);
    return ps;
  }

  Config to_config() const override {
    Config c;
    c.set("model", "blstm");
    c.set("layers", std::to_string(cfg_.layers));
    c.set("units", std::to_string(cfg_.units));
    c.set("subseq_len", std::to_string(cfg_.subseq_len));
    c.set("start_state", cfg_.carry ? "carry" : "reset");
    c.set("bottleneck", std::to_string(cfg_.bottleneck));
    c.set("output_states", std::to_string(cfg_.output_states));
    c.set("feature_dim", std::to_string(cfg_.feature_dim));
    c.set("seed", std::to_string(cfg_.seed));
    return c;
  }

  // Runs one subsequence through the stack; returns per-frame logits
  // [len x states] and updates the carry state from computed values.
  Tape::Ref subseq_logits(Tape& tape, const Tensor& feats, int start, int len, StreamState* state) {
    require(feats.cols() == cfg_.feature_dim, "feature width ", feats.cols(), " does not match blstm input ",
            cfg_.feature_dim);
    require(start >= 0 && len >= 1 && start + len <= feats.rows(), "subsequence [", start, ",", start + len,
            ") out of range for ", feats.rows(), " frames");
    if (cfg_.carry) require(state != nullptr, "carry policy requires a stream state");

    std::vector<Tape::Ref> x(static_cast<size_t>(len));
    for (int t = 0; t < len; ++t) {
      Tensor row({1, cfg_.feature_dim});
      for (int d = 0; d < cfg_.feature_dim; ++d) row.at(0, d) = feats.at(start + t, d);
      x[size_t(t)] = tape.constant(std::move(row));
    }

    StreamState next;
    for (int l = 0; l < cfg_.layers; ++l) {
      // left-to-right: carried or zero start; right-to-left: always zero
      Tape::Ref h0, c0;
      if (cfg_.carry && state->active()) {
        h0 = tape.constant(state->h[size_t(l)]);
        c0 = tape.constant(state->c[size_t(l)]);
      } else {
        h0 = tape.constant(Tensor({1, cfg_.units}));
        c0 = tape.constant(Tensor({1, cfg_.units}));
      }
      std::vector<Tape::Ref> fwd = run_direction(tape, x, h0, c0, 2 * l, false, &next);
      Tape::Ref z0 = tape.constant(Tensor({1, cfg_.units}));
      std::vector<Tape::Ref> bwd = run_direction(tape, x, z0, z0, 2 * l + 1, true, nullptr);
      for (int t = 0; t < len; ++t) x[size_t(t)] = tape.concat_cols({fwd[size_t(t)], bwd[size_t(t)]});
    }
    if (cfg_.carry) *state = std::move(next);

    Tape::Ref seq = tape.concat_rows(x);
    Tape::Ref bn = tape.affine(seq, tape.param(bn_w_), tape.param(bn_b_));  // linear bottleneck
    return tape.affine(bn, tape.param(out_w_), tape.param(out_b_));
  }

  Tape::Ref subseq_loss(Tape& tape, const Tensor& feats, int start, int len, const std::vector<int>& targets,
                        StreamState* state, const TrainContext&) override {
    require(int(targets.size()) == len, "blstm targets length ", targets.size(), " != subsequence length ",
            len);
    auto z = subseq_logits(tape, feats, start, len, state);
    return tape.softmax_xent(z, targets).loss;
  }

  Tensor log_posteriors(const Tensor& feats, StreamState* state = nullptr) override {
    StreamState local;
    if (cfg_.carry && state == nullptr)
      fail("blstm with carry-over start states requires a per-utterance stream state");
    StreamState* st = cfg_.carry ? state : &local;
    const int T = feats.rows();
    Tensor out({T, cfg_.output_states});
    for (int s0 = 0; s0 < T; s0 += cfg_.subseq_len) {
      const int len = std::min(cfg_.subseq_len, T - s0);
      Tape tape;
      auto z = subseq_logits(tape, feats, s0, len, st);
      Tensor lp = log_softmax_rows(tape.value(z));
      for (int t = 0; t < len; ++t)
        for (int c = 0; c < cfg_.output_states; ++c) out.at(s0 + t, c) = lp.at(t, c);
    }
    return out;
  }

 private:
  // Gate layout along the 4U axis: input, forget, output, candidate.
  std::vector<Tape::Ref> run_direction(Tape& tape, const std::vector<Tape::Ref>& x, Tape::Ref h0,
                                       Tape::Ref c0, int wi, bool reversed, StreamState* final_out) {
    const int len = int(x.size());
    const int U = cfg_.units;
    std::vector<Tape::Ref> hs(static_cast<size_t>(len));
    Tape::Ref h = h0, c = c0;
    for (int step = 0; step < len; ++step) {
      const int t = reversed ? len - 1 - step : step;
      Tape::Ref gates = tape.affine(tape.concat_cols({x[size_t(t)], h}), tape.param(gate_w_[size_t(wi)]),
                                    tape.param(gate_b_[size_t(wi)]));
      Tape::Ref ig = tape.act(tape.slice_cols(gates, 0, U), Act::kSigmoid);
      Tape::Ref fg = tape.act(tape.slice_cols(gates, U, U), Act::kSigmoid);
      Tape::Ref og = tape.act(tape.slice_cols(gates, 2 * U, U), Act::kSigmoid);
      Tape::Ref gg = tape.act(tape.slice_cols(gates, 3 * U, U), Act::kTanh);
      c = tape.add(tape.mul(fg, c), tape.mul(ig, gg));
      h = tape.mul(og, tape.act(c, Act::kTanh));
      hs[size_t(t)] = h;
    }
    if (final_out) {
      final_out->h.push_back(tape.value(h));
      final_out->c.push_back(tape.value(c));
    }
    return hs;
  }

  BlstmConfig cfg_;
  std::vector<Parameter> gate_w_, gate_b_;
  Parameter bn_w_, bn_b_, out_w_, out_b_;
};

// ---------------------------------------------------------------------------

inline std::unique_ptr<AcousticModel> model_from_config(const Config& c) {
  std::string kind = c.require_string("model");
  if (kind == "dnn") {
    DnnConfig m;
    m.feature_dim = int(c.get_int("feature_dim", 0));
    m.ivector_dim = int(c.get_int("ivector_dim", 0));
    m.splice_left = int(c.get_int("splice_left", 4));
    m.splice_right = int(c.get_int("splice_right", 4));
    m.hidden_layers = int(c.get_int("hidden_layers", 4));
    m.hidden_units = int(c.get_int("hidden_units", 512));
    m.maxout_group = int(c.get_int("maxout_group", 1));
    m.activation = act_from_name(c.get_string("activation", "sigmoid"));
    m.output_states = int(c.get_int("output_states", 0));
    m.seed = uint64_t(c.get_int("seed", 1));
    return std::make_unique<DnnModel>(m);
  }
  if (kind == "rnn") {
    MaxoutRnnConfig m;
    m.recurrent_units = int(c.get_int("recurrent_units", 2828));
    m.nonrecurrent_layers = int(c.get_int("nonrecurrent_layers", 4));
    m.bottleneck_wide = int(c.get_int("bottleneck_wide", 1024));
    m.bottleneck_narrow = int(c.get_int("bottleneck_narrow", 512));
    m.output_states = int(c.get_int("output_states", 32000));
    m.unfold_steps = int(c.get_int("unfold_steps", 6));
    m.splice_right = int(c.get_int("splice_right", 6));
    m.feature_dim = int(c.get_int("feature_dim", 40));
    m.ivector_dim = int(c.get_int("ivector_dim", 100));
    m.seed = uint64_t(c.get_int("seed", 1));
    return std::make_unique<MaxoutRnnModel>(m);
  }
  if (kind == "vgg") {
    VggConfig m;
    m.conv_layers = int(c.get_int("conv_layers", 10));
    m.variant = vgg_variant_from_name(c.get_string("variant", "pool"));
    m.feature_maps = c.get_int_list("feature_maps", {64, 128, 256, 512});
    m.patch_frames = int(c.get_int("patch_frames", 16));
    m.patch_dim = int(c.get_int("patch_dim", 40));
    m.fc_dims = c.get_int_list("fc_dims", {2048, 2048});
    m.output_states = int(c.get_int("output_states", 0));
    m.classic = c.get_bool("classic", false);
    m.classic_kernel = int(c.get_int("classic_kernel", 9));
    m.classic_maps = int(c.get_int("classic_maps", 512));
    m.seed = uint64_t(c.get_int("seed", 1));
    return std::make_unique<VggModel>(m);
  }
  if (kind == "blstm") {
    BlstmConfig m;
    m.layers = int(c.get_int("layers", 1));
    m.units = int(c.get_int("units", 512));
    m.subseq_len = int(c.get_int("subseq_len", 20));
    m.carry = c.get_string("start_state", "reset") == "carry";
    m.bottleneck = int(c.get_int("bottleneck", 256));
    m.output_states = int(c.get_int("output_states", 0));
    m.feature_dim = int(c.get_int("feature_dim", 0));
    m.seed = uint64_t(c.get_int("seed", 1));
    return std::make_unique<BlstmModel>(m);
  }
  fail("unknown model kind: ", kind);
}

inline void save_model(const std::string& dir, AcousticModel& model) {
  model.to_config().write_file(dir + "/model.cfg");
  std::vector<const Parameter*> ps;
  for (Parameter* p : model.parameters()) ps.push_back(p);
  save_checkpoint(dir + "/params.hal", ps);
}

inline std::unique_ptr<AcousticModel> load_model(const std::string& dir) {
  Config c = Config::parse_file(dir + "/model.cfg");
  auto model = model_from_config(c);
  load_checkpoint(dir + "/params.hal", model->parameters());
  return model;
}

}  // namespace hal

#endif  // HAL_MODELS_HPP_
