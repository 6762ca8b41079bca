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

#ifndef HAL_NNLM_HPP_
#define HAL_NNLM_HPP_

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "hal/autodiff.hpp"
#include "hal/config.hpp"
#include "hal/hmm.hpp"
#include "hal/ngram.hpp"
#include "hal/trainer.hpp"

namespace hal {

// Feed-forward neural LM with a class-factored output:
//   P(w|h) = P(class(w)|h) * P(w|class(w),h)
// Classes partition the predicted vocabulary (words plus </s>); <s> only ever
// appears in contexts. Contexts shorter than the window pad with <s>.
struct NnlmConfig {
  int context = 2;  // n-1 predecessor words
  int embed_dim = 16;
  std::vector<int> hidden_dims = {32};
  int num_classes = 0;  // 0: sqrt of the predicted vocabulary size
  uint64_t seed = 1;

  void validate() const {
    require(context >= 1, "nnlm context must be >= 1");
    require(embed_dim >= 1 && !hidden_dims.empty(), "nnlm needs an embedding and a hidden stack");
  }
};

class NnlmModel {
 public:
  NnlmModel(const NnlmConfig& cfg, Vocab vocab, std::vector<int> word_class, int num_classes)
      : cfg_(cfg), vocab_(std::move(vocab)), word_class_(std::move(word_class)), num_classes_(num_classes) {
    cfg_.validate();
    require(num_classes_ >= 1, "nnlm needs at least one class");
    // class members in id order; <s> is excluded from prediction
    members_.resize(size_t(num_classes_));
    within_.assign(word_class_.size(), -1);
    for (int id = 0; id < int(word_class_.size()); ++id) {
      if (id == Vocab::kBos) continue;
      const int c = word_class_[size_t(id)];
      require(c >= 0 && c < num_classes_, "word class out of range for ", vocab_.name(id));
      within_[size_t(id)] = int(members_[size_t(c)].size());
      members_[size_t(c)].push_back(id);
    }
    for (int c = 0; c < num_classes_; ++c)
      require(!members_[size_t(c)].empty(), "class ", c, " of ", num_classes_, " is empty");

    Rng rng(cfg_.seed);
    Tensor emb({vocab_.size(), cfg_.embed_dim});
    glorot_init(emb, vocab_.size(), cfg_.embed_dim, rng);
    embed_ = Parameter("nnlm.embed", std::move(emb));
    int in = cfg_.context * cfg_.embed_dim;
    for (size_t l = 0; l < cfg_.hidden_dims.size(); ++l) {
      Tensor w({in, cfg_.hidden_dims[l]});
      glorot_init(w, in, cfg_.hidden_dims[l], rng);
      hidden_w_.emplace_back(str_cat("nnlm.h", l, ".W"), std::move(w));
      hidden_b_.emplace_back(str_cat("nnlm.h", l, ".b"), Tensor({cfg_.hidden_dims[l]}));
      in = cfg_.hidden_dims[l];
    }
    class_w_ = Parameter("nnlm.class.W", Tensor({in, num_classes_}));
    class_b_ = Parameter("nnlm.class.b", Tensor({num_classes_}));
    for (int c = 0; c < num_classes_; ++c) {
      const int sz = int(members_[size_t(c)].size());
      word_w_.emplace_back(str_cat("nnlm.word", c, ".W"), Tensor({in, sz}));
      word_b_.emplace_back(str_cat("nnlm.word", c, ".b"), Tensor({sz}));
    }
  }

  const NnlmConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  int num_classes() const { return num_classes_; }
  int word_class(int id) const { return word_class_[size_t(id)]; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> ps = {&embed_};
    for (size_t l = 0; l < hidden_w_.size(); ++l) {
      ps.push_back(&hidden_w_[l]);
      ps.push_back(&hidden_b_[l]);
    }
    ps.push_back(&class_w_);
    ps.push_back(&class_b_);
    for (size_t c = 0; c < word_w_.size(); ++c) {
      ps.push_back(&word_w_[c]);
      ps.push_back(&word_b_[c]);
    }
    return ps;
  }

  // Hidden representation for a batch of contexts (each cfg_.context ids).
  Tape::Ref hidden(Tape& tape, const std::vector<std::vector<int>>& contexts) {
    std::vector<int> flat;
    for (const auto& ctx : contexts) {
      require(int(ctx.size()) == cfg_.context, "context length ", ctx.size(), " != ", cfg_.context);
      for (int id : ctx) flat.push_back(id);
    }
    Tape::Ref rows = tape.gather_rows(tape.param(embed_), flat);
    Tape::Ref h = tape.reshape(rows, {int(contexts.size()), cfg_.context * cfg_.embed_dim});
    for (size_t l = 0; l < hidden_w_.size(); ++l)
      h = tape.act(tape.affine(h, tape.param(hidden_w_[l]), tape.param(hidden_b_[l])), Act::kTanh);
    return h;
  }

  // Mean factored cross entropy: class term plus the within-class terms,
  // batch samples grouped by target class.
  Tape::Ref batch_loss(Tape& tape, const std::vector<std::vector<int>>& contexts,
                       const std::vector<int>& targets) {
    require(contexts.size() == targets.size() && !targets.empty(), "nnlm batch mismatch");
    Tape::Ref h = hidden(tape, contexts);
    std::vector<int> class_targets;
    for (int t : targets) {
      require(t != Vocab::kBos, "nnlm never predicts <s>");
      class_targets.push_back(word_class_[size_t(t)]);
    }
    Tape::Ref loss = tape.softmax_xent(tape.affine(h, tape.param(class_w_), tape.param(class_b_)),
                                       class_targets).loss;
    const int B = int(targets.size());
    for (int c = 0; c < num_classes_; ++c) {
      std::vector<int> rows, within;
      for (int i = 0; i < B; ++i)
        if (class_targets[size_t(i)] == c) {
          rows.push_back(i);
          within.push_back(within_[size_t(targets[size_t(i)])]);
        }
      if (rows.empty()) continue;
      Tape::Ref hc = tape.gather_rows(h, rows);
      Tape::Ref z = tape.affine(hc, tape.param(word_w_[size_t(c)]), tape.param(word_b_[size_t(c)]));
      Tape::Ref part = tape.softmax_xent(z, within).loss;
      loss = tape.add(loss, tape.scale(part, float(rows.size()) / float(B)));
    }
    return loss;
  }

  // Full next-word distribution (log10) over the vocabulary; entries for
  // un-predictable ids (<s>) are -inf.
  std::vector<double> next_word_logp10(const std::vector<int>& context_ids) {
    Tape tape;
    Tape::Ref h = hidden(tape, {pad_context(context_ids)});
    const Tensor& hv = tape.value(h);
    std::vector<double> out(size_t(vocab_.size()), -HUGE_VAL);
    Tensor cz = tape.value(tape.affine(h, tape.param(class_w_), tape.param(class_b_)));
    const double class_lse = log_sum_exp(cz.data(), cz.cols());
    (void)hv;
    for (int c = 0; c < num_classes_; ++c) {
      Tensor wz = tape.value(tape.affine(h, tape.param(word_w_[size_t(c)]), tape.param(word_b_[size_t(c)])));
      const double word_lse = log_sum_exp(wz.data(), wz.cols());
      const double class_lp = double(cz.at(0, c)) - class_lse;
      for (size_t k = 0; k < members_[size_t(c)].size(); ++k)
        out[size_t(members_[size_t(c)][k])] = (class_lp + double(wz.at(0, int(k))) - word_lse) / M_LN10;
    }
    return out;
  }

  // Per-event log10 probabilities: every word then </s>, with <s> padding.
  std::vector<double> sentence_event_logp10s(const std::vector<std::string>& words) {
    std::vector<double> out;
    std::vector<int> ctx(size_t(cfg_.context), Vocab::kBos);
    for (size_t i = 0; i <= words.size(); ++i) {
      const int target = i < words.size() ? vocab_.find(words[i]) : Vocab::kEos;
      out.push_back(next_word_logp10(ctx)[size_t(target)]);
      ctx.erase(ctx.begin());
      ctx.push_back(target);
    }
    return out;
  }

  double sentence_logp10(const std::vector<std::string>& words) {
    double t = 0.0;
    for (double lp : sentence_event_logp10s(words)) t += lp;
    return t;
  }

  void save(const std::string& dir) {
    Config c;
    c.set("context", std::to_string(cfg_.context));
    c.set("embed_dim", std::to_string(cfg_.embed_dim));
    std::string hd;
    for (size_t i = 0; i < cfg_.hidden_dims.size(); ++i) hd += (i ? "," : "") + std::to_string(cfg_.hidden_dims[i]);
    c.set("hidden_dims", hd);
    c.set("num_classes", std::to_string(num_classes_));
    c.set("seed", std::to_string(cfg_.seed));
    c.write_file(dir + "/nnlm.cfg");
    std::ofstream vf(dir + "/nnlm_vocab.txt");
    require(bool(vf), "cannot write nnlm vocab");
    for (int id = 0; id < vocab_.size(); ++id)
      vf << vocab_.name(id) << " " << word_class_[size_t(id)] << "\n";
    std::vector<const Parameter*> ps;
    for (Parameter* p : parameters()) ps.push_back(p);
    save_checkpoint(dir + "/nnlm.hal", ps);
  }

  static std::unique_ptr<NnlmModel> load(const std::string& dir) {
    Config c = Config::parse_file(dir + "/nnlm.cfg");
    NnlmConfig cfg;
    cfg.context = int(c.get_int("context", 2));
    cfg.embed_dim = int(c.get_int("embed_dim", 16));
    cfg.hidden_dims = c.get_int_list("hidden_dims", {32});
    cfg.num_classes = int(c.get_int("num_classes", 0));
    cfg.seed = uint64_t(c.get_int("seed", 1));
    std::ifstream vf(dir + "/nnlm_vocab.txt");
    require(bool(vf), "cannot open nnlm vocab in ", dir);
    Vocab vocab;
    std::vector<int> wc;
    std::string line;
    int max_class = 0;
    while (std::getline(vf, line)) {
      auto toks = split_ws(line);
      if (toks.empty()) continue;
      require(toks.size() == 2, "malformed nnlm vocab line: ", line);
      vocab.add(toks[0]);
      wc.push_back(std::stoi(toks[1]));
      max_class = std::max(max_class, wc.back());
    }
    auto model = std::make_unique<NnlmModel>(cfg, std::move(vocab), std::move(wc), max_class + 1);
    load_checkpoint(dir + "/nnlm.hal", model->parameters());
    return model;
  }

 private:
  std::vector<int> pad_context(std::vector<int> ctx) const {
    while (int(ctx.size()) < cfg_.context) ctx.insert(ctx.begin(), Vocab::kBos);
    if (int(ctx.size()) > cfg_.context)
      ctx.erase(ctx.begin(), ctx.begin() + long(ctx.size()) - cfg_.context);
    return ctx;
  }

  NnlmConfig cfg_;
  Vocab vocab_;
  std::vector<int> word_class_;             // per vocab id (class of <s> unused)
  int num_classes_;
  std::vector<std::vector<int>> members_;   // class -> member ids
  std::vector<int> within_;                 // vocab id -> index within its class
  Parameter embed_;
  std::vector<Parameter> hidden_w_, hidden_b_;
  Parameter class_w_, class_b_;
  std::vector<Parameter> word_w_, word_b_;
};

// Frequency binning into roughly equal-mass classes: words sorted by count,
// greedily filling sqrt(V) bins. </s> and <unk> take part like any word.
inline std::vector<int> derive_word_classes(const Vocab& vocab, const std::vector<int64_t>& freqs,
                                            int num_classes) {
  std::vector<int> order;
  int64_t total = 0;
  for (int id = 0; id < vocab.size(); ++id)
    if (id != Vocab::kBos) {
      order.push_back(id);
      total += freqs[size_t(id)];
    }
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return freqs[size_t(a)] > freqs[size_t(b)]; });
  require(num_classes >= 1 && num_classes <= int(order.size()), "cannot build ", num_classes,
          " classes over ", order.size(), " predicted words");
  std::vector<int> wc(size_t(vocab.size()), 0);
  const double per_class = double(total) / double(num_classes);
  int cls = 0;
  int64_t mass = 0;
  int assigned = 0;
  for (int id : order) {
    wc[size_t(id)] = cls;
    mass += freqs[size_t(id)];
    ++assigned;
    // advance when this bin is full, keeping one word for each later bin
    const int remaining = int(order.size()) - assigned;
    if (cls + 1 < num_classes && (double(mass) >= per_class * (cls + 1) || remaining == num_classes - cls - 1))
      ++cls;
  }
  return wc;
}

struct NnlmTrainResult {
  std::unique_ptr<NnlmModel> model;
  std::vector<double> train_ce;  // per epoch
};

inline NnlmTrainResult train_nnlm(const std::vector<std::vector<std::string>>& sentences, NnlmConfig cfg,
                                  const TrainPlan& plan) {
  cfg.validate();
  plan.validate();
  require(!sentences.empty(), "empty nnlm corpus");

  Vocab vocab;
  for (const auto& s : sentences)
    for (const auto& w : s) vocab.add(w);
  std::vector<int64_t> freqs(size_t(vocab.size()), 0);
  freqs[Vocab::kUnk] = 1;  // floor, as in the n-gram models
  for (const auto& s : sentences) {
    for (const auto& w : s) freqs[size_t(vocab.find(w))]++;
    freqs[Vocab::kEos]++;
  }
  const int predicted = vocab.size() - 1;  // everything but <s>
  int num_classes = cfg.num_classes > 0 ? cfg.num_classes : std::max(1, int(std::lround(std::sqrt(predicted))));
  num_classes = std::min(num_classes, predicted);
  std::vector<int> wc = derive_word_classes(vocab, freqs, num_classes);

  auto model = std::make_unique<NnlmModel>(cfg, vocab, wc, num_classes);

  // training events: (context, target) over all sentences
  std::vector<std::vector<int>> contexts;
  std::vector<int> targets;
  for (const auto& s : sentences) {
    std::vector<int> ctx(size_t(cfg.context), Vocab::kBos);
    for (size_t i = 0; i <= s.size(); ++i) {
      const int target = i < s.size() ? vocab.find(s[i]) : Vocab::kEos;
      contexts.push_back(ctx);
      targets.push_back(target);
      ctx.erase(ctx.begin());
      ctx.push_back(target);
    }
  }

  Rng rng(plan.seed);
  NagState nag;
  auto params = model->parameters();
  NnlmTrainResult res;
  std::vector<int> order(targets.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    int64_t n = 0;
    for (size_t b0 = 0; b0 < order.size(); b0 += size_t(plan.minibatch)) {
      const size_t b1 = std::min(order.size(), b0 + size_t(plan.minibatch));
      std::vector<std::vector<int>> bc;
      std::vector<int> bt;
      for (size_t i = b0; i < b1; ++i) {
        bc.push_back(contexts[size_t(order[i])]);
        bt.push_back(targets[size_t(order[i])]);
      }
      for (Parameter* p : params) p->zero_grad();
      Tape tape;
      Tape::Ref loss = model->batch_loss(tape, bc, bt);
      const double lv = double(tape.value(loss)[0]);
      require(std::isfinite(lv), "nnlm training diverged: loss is not finite");
      tape.backward(loss);
      if (plan.optimizer == "nag")
        nag_step(params, plan.learning_rate, plan.momentum, nag);
      else
        sgd_step(params, plan.learning_rate);
      loss_sum += lv * double(bt.size());
      n += int64_t(bt.size());
    }
    res.train_ce.push_back(loss_sum / double(n));
  }
  res.model = std::move(model);
  return res;
}

// ---------------------------------------------------------------------------
// N-best rescoring: acoustic + lm_weight * sum_events ln(lambda P_ngram +
// (1-lambda) P_nnlm) + word_penalty * words, reordered with stable ties.
// ---------------------------------------------------------------------------

struct RescoredHyp {
  NbestLine line;        // original fields
  double ngram_logp10 = 0.0;
  double nnlm_logp10 = 0.0;
  double mixed_total = 0.0;
};

inline std::vector<RescoredHyp> rescore_nbest(const std::vector<NbestLine>& nbest, const NGramModel& ngram,
                                              NnlmModel& nnlm, double lambda, double lm_weight,
                                              double word_penalty = 0.0,
                                              std::vector<std::string>* warnings = nullptr) {
  require(lambda >= 0.0 && lambda <= 1.0, "mixture weight must lie in [0,1], got ", lambda);
  std::vector<RescoredHyp> out;
  for (const auto& line : nbest) {
    RescoredHyp h;
    h.line = line;
    for (const auto& w : line.words)
      if (!ngram.vocab.has(w) || !nnlm.vocab().has(w)) {
        if (warnings) warnings->push_back(str_cat("hypothesis word mapped to <unk>: ", w));
        break;
      }
    std::vector<double> ng = sentence_event_logp10(ngram, line.words);
    std::vector<double> nn = nnlm.sentence_event_logp10s(line.words);
    require(ng.size() == nn.size(), "event count mismatch in rescoring");
    double mixed = 0.0;
    for (size_t i = 0; i < ng.size(); ++i) {
      h.ngram_logp10 += ng[i];
      h.nnlm_logp10 += nn[i];
      const double p = lambda * std::pow(10.0, ng[i]) + (1.0 - lambda) * std::pow(10.0, nn[i]);
      mixed += std::log(p);
    }
    h.mixed_total = line.acoustic + lm_weight * mixed + word_penalty * double(line.words.size());
    out.push_back(std::move(h));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const RescoredHyp& a, const RescoredHyp& b) { return a.mixed_total > b.mixed_total; });
  return out;
}

// Rescored n-best line format: the original columns plus the component LM
// scores and the mixed total.
inline void write_rescored(std::ostream& os, const std::vector<RescoredHyp>& list) {
  char buf[160];
  for (size_t i = 0; i < list.size(); ++i) {
    const auto& h = list[i];
    std::snprintf(buf, sizeof buf, "%s %zu %.6f %.6f %.6f %.6f %.6f %zu", h.line.utt_id.c_str(), i + 1,
                  h.mixed_total, h.line.acoustic, h.ngram_logp10, h.nnlm_logp10, h.line.total,
                  h.line.words.size());
    os << buf;
    for (const auto& w : h.line.words) os << " " << w;
    os << "\n";
  }
}

}  // namespace hal

#endif  // HAL_NNLM_HPP_
