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

#ifndef HAL_TRAINER_HPP_
#define HAL_TRAINER_HPP_

#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "hal/corpus.hpp"
#include "hal/models.hpp"

namespace hal {

// ---------------------------------------------------------------------------
// Balanced state sampling: p_i proportional to f_i^gamma. gamma = 1 recovers
// the empirical frequencies, gamma = 0 is uniform over the states that occur.
// ---------------------------------------------------------------------------

struct SamplingDistribution {
  double gamma = 1.0;
  std::vector<int64_t> state_freqs;
  std::vector<double> probs;
};

inline SamplingDistribution balanced_sample_dist(const std::vector<int64_t>& freqs, double gamma) {
  SamplingDistribution d;
  d.gamma = gamma;
  d.state_freqs = freqs;
  d.probs.assign(freqs.size(), 0.0);
  double total = 0.0;
  for (size_t i = 0; i < freqs.size(); ++i) {
    require(freqs[i] >= 0, "negative state count for state ", i);
    if (freqs[i] > 0) total += (d.probs[i] = std::pow(double(freqs[i]), gamma));
  }
  require(total > 0.0, "balanced sampling needs at least one nonzero state count");
  for (double& p : d.probs) p /= total;
  return d;
}

// ---------------------------------------------------------------------------
// Optimizers. Gradients live in the parameters; a NaN gradient aborts with
// the offending parameter named.
// ---------------------------------------------------------------------------

inline void check_gradients_finite(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    const float* g = p->value.grad();
    for (int64_t i = 0; i < p->numel(); ++i)
      require(std::isfinite(g[i]), "non-finite gradient in ", p->name, "[", i, "]; aborting");
  }
}

inline void sgd_step(const std::vector<Parameter*>& params, double lr) {
  check_gradients_finite(params);
  for (Parameter* p : params) {
    float* v = p->value.data();
    const float* g = p->value.grad();
    for (int64_t i = 0; i < p->numel(); ++i) v[i] -= float(lr) * g[i];
  }
}

// Nesterov momentum in the common practical form:
//   v <- mu*v - lr*g;  theta <- theta + mu*v - lr*g
// With mu = 0 this reduces bitwise to plain SGD.
struct NagState {
  std::vector<Tensor> velocity;
};

inline void nag_step(const std::vector<Parameter*>& params, double lr, double momentum, NagState& state) {
  check_gradients_finite(params);
  if (state.velocity.empty())
    for (Parameter* p : params) state.velocity.emplace_back(p->value.shape());
  require(state.velocity.size() == params.size(), "optimizer state does not match parameter list");
  const float mu = float(momentum);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    float* v = state.velocity[pi].data();
    float* th = p->value.data();
    const float* g = p->value.grad();
    for (int64_t i = 0; i < p->numel(); ++i) {
      const float step = float(lr) * g[i];
      v[i] = mu * v[i] - step;
      th[i] += mu * v[i] - step;
    }
  }
}

// ---------------------------------------------------------------------------
// Training plan and the cross-entropy loop.
// ---------------------------------------------------------------------------

struct TrainPlan {
  int epochs = 12;
  int minibatch = 250;            // frames per update (subsequence streams for sequence models)
  std::string optimizer = "sgd";  // sgd | nag
  double learning_rate = 0.1;
  double momentum = 0.9;
  double dropout_p0 = 0.0;        // annealed linearly to 0 at the final epoch
  double lr_halve_rel = 0.001;    // halve lr when held-out CE improves less than this, relative
  bool balanced_sampling = false;
  double gamma = 0.8;
  uint64_t seed = 1;

  void validate() const {
    require(epochs >= 1 && minibatch >= 1, "train plan needs positive epochs and minibatch");
    require(optimizer == "sgd" || optimizer == "nag", "optimizer must be sgd or nag, got ", optimizer);
    require(dropout_p0 >= 0.0 && dropout_p0 < 1.0, "dropout rate must lie in [0,1), got ", dropout_p0);
    require(learning_rate > 0.0, "learning rate must be positive");
  }
};

// Linear decay from the initial rate to exactly 0 at the final epoch.
inline double annealed_dropout_rate(int epoch, const TrainPlan& plan) {
  require(epoch >= 0 && epoch < plan.epochs, "epoch ", epoch, " outside [0,", plan.epochs, ")");
  if (plan.epochs == 1) return 0.0;
  return plan.dropout_p0 * (1.0 - double(epoch) / double(plan.epochs - 1));
}

struct LossCurve {
  std::vector<double> train_ce, heldout_ce;

  void write_csv(const std::string& path) const {
    std::ofstream os(path);
    require(bool(os), "cannot write loss curve: ", path);
    os << "epoch,train_ce,heldout_ce\n";
    char buf[96];
    for (size_t e = 0; e < train_ce.size(); ++e) {
      std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", e, train_ce[e], heldout_ce[e]);
      os << buf;
    }
  }
};

// Mean per-frame cross entropy of aligned data under the model's inference
// path (policy-aware for carry-over sequence models).
inline double mean_cross_entropy(AcousticModel& model, const Corpus& corpus) {
  double total = 0.0;
  int64_t frames = 0;
  for (const auto& u : corpus.utts) {
    StreamState state;
    Tensor lp = model.log_posteriors(u.feats, &state);
    for (int t = 0; t < u.feats.rows(); ++t) {
      total -= double(lp.at(t, u.alignment[size_t(t)]));
      ++frames;
    }
  }
  require(frames > 0, "empty corpus in cross-entropy evaluation");
  return total / double(frames);
}

namespace detail {

struct FrameIndex {
  std::vector<FrameSample> all;                    // every aligned frame
  std::vector<std::vector<int>> by_state;          // state -> indices into all
  std::vector<int64_t> freqs;

  static FrameIndex build(const Corpus& corpus, int num_states) {
    FrameIndex idx;
    idx.by_state.resize(size_t(num_states));
    idx.freqs.assign(size_t(num_states), 0);
    for (const auto& u : corpus.utts) {
      require(int(u.alignment.size()) == u.feats.rows(), "utterance ", u.id, " has ", u.alignment.size(),
              " aligned states for ", u.feats.rows(), " frames");
      for (int t = 0; t < u.feats.rows(); ++t) {
        int s = u.alignment[size_t(t)];
        require(s >= 0 && s < num_states, "utterance ", u.id, " aligns state ", s, " outside [0,", num_states,
                ")");
        idx.by_state[size_t(s)].push_back(int(idx.all.size()));
        idx.freqs[size_t(s)]++;
        idx.all.push_back({&u.feats, t, s});
      }
    }
    require(!idx.all.empty(), "no aligned frames to train on");
    return idx;
  }
};

inline double train_epoch_frames(AcousticModel& model, const FrameIndex& idx, const TrainPlan& plan,
                                 const SamplingDistribution* sampler, double lr, float dropout, Rng& rng,
                                 NagState& nag) {
  const int64_t steps = (int64_t(idx.all.size()) + plan.minibatch - 1) / plan.minibatch;
  std::vector<int> order;
  if (!sampler) {
    order.resize(idx.all.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    rng.shuffle(order);
  }
  auto params = model.parameters();
  double loss_sum = 0.0;
  int64_t loss_n = 0;
  for (int64_t step = 0; step < steps; ++step) {
    std::vector<FrameSample> batch;
    if (sampler) {
      // balanced sampling with replacement: state by p_i, then a frame of it
      for (int i = 0; i < plan.minibatch; ++i) {
        int s = rng.categorical(sampler->probs);
        const auto& pool = idx.by_state[size_t(s)];
        batch.push_back(idx.all[size_t(pool[size_t(rng.below(pool.size()))])]);
      }
    } else {
      int64_t b0 = step * plan.minibatch;
      int64_t b1 = std::min(b0 + plan.minibatch, int64_t(idx.all.size()));
      for (int64_t i = b0; i < b1; ++i) batch.push_back(idx.all[size_t(order[size_t(i)])]);
    }
    model.zero_grads();
    TrainContext ctx{dropout, &rng};
    Tape tape;
    auto loss = model.frame_loss(tape, batch, ctx);
    const double lv = double(tape.value(loss)[0]);
    require(std::isfinite(lv), "training diverged: loss is not finite");
    tape.backward(loss);
    if (plan.optimizer == "nag")
      nag_step(params, lr, plan.momentum, nag);
    else
      sgd_step(params, lr);
    loss_sum += lv * double(batch.size());
    loss_n += int64_t(batch.size());
  }
  return loss_sum / double(loss_n);
}

// Subsequence scheduler: round-robin streams over utterances so one update
// averages gradients from plan.minibatch different utterances while each
// utterance's subsequences stay in order for state carry-over.
inline double train_epoch_subseqs(AcousticModel& model, const Corpus& corpus, const TrainPlan& plan,
                                  double lr, float dropout, Rng& rng, NagState& nag, int subseq_len) {
  std::vector<int> utt_order(corpus.utts.size());
  for (size_t i = 0; i < utt_order.size(); ++i) utt_order[i] = int(i);
  rng.shuffle(utt_order);

  struct Stream {
    const Utterance* utt = nullptr;
    int cursor = 0;
    StreamState state;
  };
  const int want = std::min<int>(plan.minibatch, int(corpus.utts.size()));
  std::vector<Stream> streams(static_cast<size_t>(want));
  size_t next_utt = 0;
  auto refill = [&](Stream& s) {
    if (next_utt < utt_order.size()) {
      s.utt = &corpus.utts[size_t(utt_order[next_utt++])];
      s.cursor = 0;
      s.state.clear();  // utterance boundary always clears carry state
    } else {
      s.utt = nullptr;
    }
  };
  for (auto& s : streams) refill(s);

  auto params = model.parameters();
  double loss_sum = 0.0;
  int64_t frames_n = 0;
  for (;;) {
    std::vector<Stream*> active;
    for (auto& s : streams)
      if (s.utt) active.push_back(&s);
    if (active.empty()) break;
    model.zero_grads();
    double batch_loss = 0.0;
    int64_t batch_frames = 0;
    for (Stream* s : active) {
      const int total = s->utt->feats.rows();
      const int len = std::min(subseq_len, total - s->cursor);
      std::vector<int> targets(s->utt->alignment.begin() + s->cursor,
                               s->utt->alignment.begin() + s->cursor + len);
      TrainContext ctx{dropout, &rng};
      Tape tape;
      auto loss = model.subseq_loss(tape, s->utt->feats, s->cursor, len, targets, &s->state, ctx);
      const double lv = double(tape.value(loss)[0]);
      require(std::isfinite(lv), "training diverged: loss is not finite");
      tape.backward(tape.scale(loss, 1.0f / float(active.size())));
      batch_loss += lv * len;
      batch_frames += len;
      s->cursor += len;
      if (s->cursor >= total) refill(*s);
    }
    if (plan.optimizer == "nag")
      nag_step(params, lr, plan.momentum, nag);
    else
      sgd_step(params, lr);
    loss_sum += batch_loss;
    frames_n += batch_frames;
  }
  return loss_sum / double(frames_n);
}

}  // namespace detail

// Cross-entropy training. Returns per-epoch train and held-out CE; the run is
// deterministic under a fixed plan seed. The learning rate halves whenever
// the held-out loss stalls.
inline LossCurve train_cross_entropy(AcousticModel& model, const Corpus& train, const Corpus& heldout,
                                     const TrainPlan& plan) {
  plan.validate();
  Rng rng(plan.seed);
  NagState nag;
  LossCurve curve;
  double lr = plan.learning_rate;

  detail::FrameIndex idx;
  std::unique_ptr<SamplingDistribution> sampler;
  int subseq_len = 0;
  if (model.sequence_model()) {
    auto* blstm = dynamic_cast<BlstmModel*>(&model);
    subseq_len = blstm ? blstm->config().subseq_len : 20;
  } else {
    idx = detail::FrameIndex::build(train, model.num_states());
    if (plan.balanced_sampling)
      sampler = std::make_unique<SamplingDistribution>(balanced_sample_dist(idx.freqs, plan.gamma));
  }

  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    const float dropout = float(annealed_dropout_rate(epoch, plan));
    double train_ce;
    if (model.sequence_model())
      train_ce = detail::train_epoch_subseqs(model, train, plan, lr, dropout, rng, nag, subseq_len);
    else
      train_ce = detail::train_epoch_frames(model, idx, plan, sampler.get(), lr, dropout, rng, nag);
    const double held = mean_cross_entropy(model, heldout);
    if (!curve.heldout_ce.empty()) {
      const double prev = curve.heldout_ce.back();
      if ((prev - held) / std::max(prev, 1e-12) < plan.lr_halve_rel) lr *= 0.5;
    }
    curve.train_ce.push_back(train_ce);
    curve.heldout_ce.push_back(held);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Layerwise discriminative pretraining for maxout DNNs: the network grows one
// hidden layer at a time; each stage starts from the previous stage's trained
// layers and softmax head, with the inserted layer initialized to an exact
// identity (both members of each maxout pair pick the same input).
// ---------------------------------------------------------------------------

inline void copy_param(Parameter& dst, const Parameter& src) {
  require(dst.value.shape() == src.value.shape(), "pretrain copy shape mismatch for ", dst.name);
  std::copy(src.value.data(), src.value.data() + src.value.numel(), dst.value.data());
}

inline void set_maxout_identity(Parameter& w, Parameter& b, int group) {
  const int in = w.value.dim(0), units = w.value.dim(1);
  require(units == in * group, "identity init needs units == in*group, got ", units, " vs ", in, "*", group);
  w.value.fill(0.0f);
  for (int i = 0; i < in; ++i)
    for (int j = 0; j < group; ++j) w.value.at(i, i * group + j) = 1.0f;
  b.value.fill(0.0f);
}

// Stage k of the growth schedule: hidden layers 0..k-2 and the softmax head
// come from the trained (k-1)-layer net; the inserted layer k-1 starts as an
// exact identity, so the grown net computes the same function it left off at.
inline std::unique_ptr<DnnModel> grow_stage(const DnnModel& prev, const DnnConfig& target, int k) {
  DnnConfig cfg = target;
  cfg.hidden_layers = k;
  auto stage = std::make_unique<DnnModel>(cfg);
  auto dst = stage->parameters();
  auto src = const_cast<DnnModel&>(prev).parameters();
  auto by_name = [](std::vector<Parameter*>& ps, const std::string& n) -> Parameter* {
    for (Parameter* p : ps)
      if (p->name == n) return p;
    return nullptr;
  };
  for (int l = 0; l + 1 < k; ++l) {
    copy_param(*by_name(dst, str_cat("dnn.l", l, ".W")), *by_name(src, str_cat("dnn.l", l, ".W")));
    copy_param(*by_name(dst, str_cat("dnn.l", l, ".b")), *by_name(src, str_cat("dnn.l", l, ".b")));
  }
  copy_param(*by_name(dst, "dnn.out.W"), *by_name(src, "dnn.out.W"));
  copy_param(*by_name(dst, "dnn.out.b"), *by_name(src, "dnn.out.b"));
  set_maxout_identity(*by_name(dst, str_cat("dnn.l", k - 1, ".W")),
                      *by_name(dst, str_cat("dnn.l", k - 1, ".b")), cfg.maxout_group);
  return stage;
}

inline std::unique_ptr<DnnModel> pretrain_layerwise(const DnnConfig& target, const Corpus& train,
                                                    const Corpus& heldout, const TrainPlan& stage_plan,
                                                    std::vector<LossCurve>* curves = nullptr) {
  target.validate();
  require(target.maxout_group >= 2, "layerwise pretraining here requires maxout hidden layers");
  std::unique_ptr<DnnModel> prev;
  for (int k = 1; k <= target.hidden_layers; ++k) {
    std::unique_ptr<DnnModel> stage;
    if (prev) {
      stage = grow_stage(*prev, target, k);
    } else {
      DnnConfig cfg = target;
      cfg.hidden_layers = 1;
      stage = std::make_unique<DnnModel>(cfg);
    }
    LossCurve c = train_cross_entropy(*stage, train, heldout, stage_plan);
    if (curves) curves->push_back(std::move(c));
    prev = std::move(stage);
  }
  return prev;
}

}  // namespace hal

#endif  // HAL_TRAINER_HPP_
