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

#ifndef HAL_NGRAM_HPP_
#define HAL_NGRAM_HPP_

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hal/common.hpp"

namespace hal {

// Closed vocabulary with reserved specials. Words get ids in order of first
// appearance. The unknown token keeps every query answerable.
class Vocab {
 public:
  static constexpr int kUnk = 0, kBos = 1, kEos = 2;

  Vocab() : words_{"<unk>", "<s>", "</s>"} {
    for (size_t i = 0; i < words_.size(); ++i) ids_[words_[i]] = int(i);
  }

  int add(const std::string& w) {
    auto [it, fresh] = ids_.emplace(w, int(words_.size()));
    if (fresh) words_.push_back(w);
    return it->second;
  }

  int find(const std::string& w) const {
    auto it = ids_.find(w);
    return it == ids_.end() ? kUnk : it->second;
  }

  bool has(const std::string& w) const { return ids_.count(w) > 0; }
  const std::string& name(int id) const { return words_[size_t(id)]; }
  int size() const { return int(words_.size()); }

  bool operator==(const Vocab& o) const { return words_ == o.words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
};

// Raw n-gram counts per order, with one sentence-boundary token on each side.
struct CountTrie {
  int order = 0;
  Vocab vocab;
  std::vector<std::map<std::vector<int>, int64_t>> counts;  // counts[k-1]: k-grams

  int64_t get(const std::vector<int>& gram) const {
    const auto& m = counts[gram.size() - 1];
    auto it = m.find(gram);
    return it == m.end() ? 0 : it->second;
  }
};

inline CountTrie count_ngrams(const std::vector<std::vector<std::string>>& sentences, int order) {
  require(order >= 1, "n-gram order must be >= 1, got ", order);
  require(!sentences.empty(), "empty corpus");
  CountTrie trie;
  trie.order = order;
  trie.counts.resize(size_t(order));
  for (const auto& sent : sentences) {
    std::vector<int> ids;
    ids.push_back(Vocab::kBos);
    for (const auto& w : sent) ids.push_back(trie.vocab.add(w));
    ids.push_back(Vocab::kEos);
    for (int k = 1; k <= order; ++k)
      for (size_t i = 0; i + size_t(k) <= ids.size(); ++i)
        trie.counts[size_t(k - 1)][std::vector<int>(ids.begin() + long(i), ids.begin() + long(i + size_t(k)))]++;
  }
  return trie;
}

inline std::vector<std::vector<std::string>> read_sentences(const std::string& path) {
  std::ifstream is(path);
  require(bool(is), "cannot open corpus: ", path);
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(is, line)) out.push_back(split_ws(line));
  return out;
}

// ---------------------------------------------------------------------------
// Backoff n-gram model. Log probabilities and backoff weights are natural
// logs internally; ARPA serialization converts to log10.
// ---------------------------------------------------------------------------

struct NGramEntry {
  double logp = 0.0;  // ln P(w | context)
  double bow = 0.0;   // ln backoff weight; meaningful for orders < max
};

class NGramModel;
double sentence_logp10(const NGramModel& lm, const std::vector<std::string>& words);

class NGramModel {
 public:
  int order = 0;
  Vocab vocab;
  std::vector<std::map<std::vector<int>, NGramEntry>> tables;  // tables[k-1]: k-grams
  std::vector<std::string> notes;  // estimation warnings (discount fallbacks etc.)

  // Words the model can emit: unigram entries minus <s>.
  std::vector<int> predicted_vocab() const {
    std::vector<int> out;
    for (const auto& [gram, e] : tables[0])
      if (gram[0] != Vocab::kBos) out.push_back(gram[0]);
    return out;
  }

  bool has_entry(const std::vector<int>& gram) const {
    return gram.size() <= tables.size() && tables[gram.size() - 1].count(gram) > 0;
  }

  // ln P(word | context) by backoff recursion. The context may be any length;
  // only the last order-1 words matter.
  double cond_lognat(const std::vector<int>& context, int word) const {
    size_t len = std::min(context.size(), size_t(order - 1));
    double bow_acc = 0.0;
    for (;;) {
      std::vector<int> gram(context.end() - long(len), context.end());
      gram.push_back(word);
      const auto& table = tables[gram.size() - 1];
      auto it = table.find(gram);
      if (it != table.end()) return bow_acc + it->second.logp;
      if (len == 0) {
        fail("zero-probability event: no unigram entry for '", vocab.name(word),
             "' (is the model missing <unk>?)");
      }
      std::vector<int> ctx(context.end() - long(len), context.end());
      auto bt = tables[ctx.size() - 1].find(ctx);
      if (bt != tables[ctx.size() - 1].end()) bow_acc += bt->second.bow;
      --len;
    }
  }

  double cond_logp10(const std::vector<int>& context, int word) const {
    return cond_lognat(context, word) / M_LN10;
  }

  int64_t num_entries() const {
    int64_t n = 0;
    for (const auto& t : tables) n += int64_t(t.size());
    return n;
  }

  // Model-based context marginal P(h), used by entropy pruning. <s> has no
  // probability of its own; its marginal stands in as the sentence-start
  // mass, equal to the sentence-end unigram.
  double context_marginal(const std::vector<int>& h) const {
    double lp = 0.0;
    for (size_t i = 0; i < h.size(); ++i) {
      if (h[i] == Vocab::kBos) {
        lp += cond_lognat({}, Vocab::kEos);
        continue;
      }
      std::vector<int> ctx(h.begin(), h.begin() + long(i));
      lp += cond_lognat(ctx, h[i]);
    }
    return std::exp(lp);
  }
};

// ---------------------------------------------------------------------------
// Modified Kneser-Ney estimation (interpolated, converted to backoff form).
// Lower orders use continuation counts except for n-grams starting with <s>,
// which keep raw counts; the unigram level interpolates with the uniform
// distribution; <unk> receives a floor count of 1.
// ---------------------------------------------------------------------------

namespace kn {

struct Discounts {
  double d1 = 0.5, d2 = 0.5, d3 = 0.5;
  bool fallback = false;

  double of(int64_t count) const { return count >= 3 ? d3 : (count == 2 ? d2 : (count == 1 ? d1 : 0.0)); }
};

// Count-of-count discounts D1, D2, D3+; any degenerate denominator or
// out-of-range value falls back to a flat 0.5.
inline Discounts estimate_discounts(const std::map<std::vector<int>, int64_t>& counts, bool skip_bos_unigram) {
  int64_t n1 = 0, n2 = 0, n3 = 0, n4 = 0;
  for (const auto& [gram, c] : counts) {
    if (skip_bos_unigram && gram.size() == 1 && gram[0] == Vocab::kBos) continue;
    if (c == 1) ++n1;
    if (c == 2) ++n2;
    if (c == 3) ++n3;
    if (c == 4) ++n4;
  }
  Discounts d;
  if (n1 == 0 || n2 == 0 || n3 == 0) {
    d.fallback = true;
    return d;
  }
  const double y = double(n1) / double(n1 + 2 * n2);
  d.d1 = 1.0 - 2.0 * y * double(n2) / double(n1);
  d.d2 = 2.0 - 3.0 * y * double(n3) / double(n2);
  d.d3 = 3.0 - 4.0 * y * double(n4) / double(n3);
  if (!(d.d1 > 0.0 && d.d1 <= 1.0 && d.d2 > 0.0 && d.d2 <= 2.0 && d.d3 > 0.0 && d.d3 <= 3.0)) {
    d = Discounts{};
    d.fallback = true;
  }
  return d;
}

}  // namespace kn

inline NGramModel estimate_modified_kn(const CountTrie& trie) {
  const int n = trie.order;
  require(n >= 1, "count trie has no order");

  NGramModel model;
  model.order = n;
  model.vocab = trie.vocab;

  // adjusted counts: raw at the top order; continuation counts below, except
  // <s>-initial n-grams which can never be continued and keep raw counts
  std::vector<std::map<std::vector<int>, int64_t>> adj(static_cast<size_t>(n));
  adj[size_t(n - 1)] = trie.counts[size_t(n - 1)];
  for (int k = n - 1; k >= 1; --k) {
    auto& out = adj[size_t(k - 1)];
    for (const auto& [gram, c] : trie.counts[size_t(k - 1)])
      if (gram[0] == Vocab::kBos) out[gram] = c;
    for (const auto& [gram, c] : adj[size_t(k)]) {
      (void)c;
      std::vector<int> suffix(gram.begin() + 1, gram.end());
      if (suffix[0] != Vocab::kBos) out[suffix]++;
    }
  }
  adj[0][{Vocab::kUnk}] = std::max<int64_t>(adj[0][{Vocab::kUnk}], 1);

  std::vector<kn::Discounts> disc(static_cast<size_t>(n));
  for (int k = 1; k <= n; ++k) {
    disc[size_t(k - 1)] = kn::estimate_discounts(adj[size_t(k - 1)], k == 1);
    if (disc[size_t(k - 1)].fallback)
      model.notes.push_back(str_cat("order ", k, ": degenerate count-of-counts, flat discount 0.5"));
  }

  model.tables.resize(size_t(n));

  // unigrams: interpolate with the uniform distribution over predicted words
  {
    const auto& d = disc[0];
    double total = 0.0;
    int64_t types = 0;
    for (const auto& [gram, c] : adj[0])
      if (gram[0] != Vocab::kBos) {
        total += double(c);
        ++types;
      }
    require(total > 0.0, "no unigram mass");
    double discounted = 0.0;
    for (const auto& [gram, c] : adj[0])
      if (gram[0] != Vocab::kBos) discounted += d.of(c);
    const double gamma = discounted / total;
    for (const auto& [gram, c] : adj[0]) {
      if (gram[0] == Vocab::kBos) continue;
      const double p = (double(c) - d.of(c)) / total + gamma / double(types);
      model.tables[0][gram] = {std::log(p), 0.0};
    }
    model.tables[0][{Vocab::kBos}] = {-99.0 * M_LN10, 0.0};  // conventional placeholder
  }

  // higher orders: interpolated probabilities for every seen n-gram
  for (int k = 2; k <= n; ++k) {
    const auto& d = disc[size_t(k - 1)];
    std::map<std::vector<int>, std::pair<double, double>> ctx_stats;  // total, discounted
    for (const auto& [gram, c] : adj[size_t(k - 1)]) {
      std::vector<int> h(gram.begin(), gram.end() - 1);
      auto& [total, discounted] = ctx_stats[h];
      total += double(c);
      discounted += d.of(c);
    }
    for (const auto& [gram, c] : adj[size_t(k - 1)]) {
      std::vector<int> h(gram.begin(), gram.end() - 1);
      std::vector<int> lower_ctx(h.begin() + 1, h.end());
      const auto& [total, discounted] = ctx_stats[h];
      const double gamma = discounted / total;
      const double lower = std::exp(model.cond_lognat(lower_ctx, gram.back()));
      const double p = (double(c) - d.of(c)) / total + gamma * lower;
      model.tables[size_t(k - 1)][gram] = {std::log(p), 0.0};
    }
  }

  // backoff weights from leftover mass so every context normalizes exactly
  for (int k = 1; k < n; ++k) {
    for (auto& [h, entry] : model.tables[size_t(k - 1)]) {
      double num = 1.0, den = 1.0;
      std::vector<int> lower_ctx(h.begin() + 1, h.end());
      bool is_context = false;
      // keys of length k+1 sharing the prefix h sort directly after h itself
      for (auto it = model.tables[size_t(k)].lower_bound(h); it != model.tables[size_t(k)].end(); ++it) {
        if (!std::equal(h.begin(), h.end(), it->first.begin())) break;
        is_context = true;
        num -= std::exp(it->second.logp);
        den -= std::exp(model.cond_lognat(lower_ctx, it->first.back()));
      }
      if (!is_context) {
        entry.bow = 0.0;
      } else if (num < 1e-12 || den < 1e-12) {
        entry.bow = 0.0;  // explicit mass covers (numerically) everything
      } else {
        entry.bow = std::log(num) - std::log(den);
      }
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Perplexity: 10^(-L/N) with L the total log10 probability of all predicted
// events (every word plus the sentence end) and N the event count.
// ---------------------------------------------------------------------------

template <typename Scorer>
double perplexity_of(const Scorer& score_sentence_events, const std::vector<std::vector<std::string>>& text) {
  double total = 0.0;
  int64_t events = 0;
  for (const auto& sent : text) {
    std::vector<double> lps = score_sentence_events(sent);
    for (double lp : lps) total += lp;
    events += int64_t(lps.size());
  }
  require(events > 0, "perplexity over empty text");
  return std::pow(10.0, -total / double(events));
}

// Per-event log10 probabilities of a sentence: each word then </s>.
inline std::vector<double> sentence_event_logp10(const NGramModel& lm, const std::vector<std::string>& words) {
  std::vector<double> out;
  std::vector<int> ctx = {Vocab::kBos};
  for (const auto& w : words) {
    int id = lm.vocab.find(w);
    out.push_back(lm.cond_logp10(ctx, id));
    ctx.push_back(id);
  }
  out.push_back(lm.cond_logp10(ctx, Vocab::kEos));
  return out;
}

inline double sentence_logp10(const NGramModel& lm, const std::vector<std::string>& words) {
  double t = 0.0;
  for (double lp : sentence_event_logp10(lm, words)) t += lp;
  return t;
}

inline double perplexity(const NGramModel& lm, const std::vector<std::vector<std::string>>& text) {
  return perplexity_of([&](const std::vector<std::string>& s) { return sentence_event_logp10(lm, s); }, text);
}

// ---------------------------------------------------------------------------
// Linear interpolation of component models with EM-optimized weights on a
// held-out set. The evaluator mixes per-event probabilities.
// ---------------------------------------------------------------------------

struct MixtureLm {
  std::vector<const NGramModel*> components;
  std::vector<double> weights;

  std::vector<double> sentence_event_logp10s(const std::vector<std::string>& words) const {
    std::vector<std::vector<double>> per(components.size());
    for (size_t k = 0; k < components.size(); ++k) per[k] = sentence_event_logp10(*components[k], words);
    std::vector<double> out(per[0].size());
    for (size_t i = 0; i < out.size(); ++i) {
      double p = 0.0;
      for (size_t k = 0; k < components.size(); ++k) p += weights[k] * std::pow(10.0, per[k][i]);
      out[i] = std::log10(p);
    }
    return out;
  }

  double perplexity(const std::vector<std::vector<std::string>>& text) const {
    return perplexity_of([&](const std::vector<std::string>& s) { return sentence_event_logp10s(s); }, text);
  }
};

struct InterpolationResult {
  MixtureLm mixture;
  std::vector<double> heldout_loglike;  // natural-log likelihood per EM iteration
};

inline InterpolationResult interpolate(const std::vector<const NGramModel*>& models,
                                       const std::vector<std::vector<std::string>>& heldout,
                                       int max_iters = 200, double tol = 1e-13) {
  require(models.size() >= 2, "interpolation needs at least two models");
  require(!heldout.empty(), "interpolation needs a non-empty held-out set");
  for (size_t k = 1; k < models.size(); ++k)
    require(models[k]->vocab == models[0]->vocab, "interpolation requires a shared vocabulary closure");

  // per-event linear probabilities, events x models
  std::vector<std::vector<double>> p;
  for (const auto& sent : heldout) {
    std::vector<std::vector<double>> per(models.size());
    for (size_t k = 0; k < models.size(); ++k) per[k] = sentence_event_logp10(*models[k], sent);
    for (size_t i = 0; i < per[0].size(); ++i) {
      std::vector<double> row(models.size());
      for (size_t k = 0; k < models.size(); ++k) row[k] = std::pow(10.0, per[k][i]);
      p.push_back(std::move(row));
    }
  }

  InterpolationResult res;
  res.mixture.components = models;
  std::vector<double>& w = res.mixture.weights;
  w.assign(models.size(), 1.0 / double(models.size()));
  double prev_ll = -HUGE_VAL;
  for (int iter = 0; iter < max_iters; ++iter) {
    std::vector<double> acc(models.size(), 0.0);
    double ll = 0.0;
    for (const auto& row : p) {
      double mix = 0.0;
      for (size_t k = 0; k < row.size(); ++k) mix += w[k] * row[k];
      ll += std::log(mix);
      for (size_t k = 0; k < row.size(); ++k) acc[k] += w[k] * row[k] / mix;
    }
    res.heldout_loglike.push_back(ll);
    for (size_t k = 0; k < w.size(); ++k) w[k] = acc[k] / double(p.size());
    if (ll - prev_ll < tol * std::abs(ll) && iter > 0) break;
    prev_ll = ll;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Entropy pruning: remove higher-order entries whose removal (with the
// context's backoff weight recomputed) costs less than the threshold in
// relative entropy. Unigrams and contexts of surviving entries are kept.
// ---------------------------------------------------------------------------

namespace prune_detail {

struct ContextMass {
  double explicit_p = 0.0;       // sum of explicit probs under this context
  double explicit_lower = 0.0;   // sum of the same words' lower-order probs
};

inline ContextMass context_mass(const NGramModel& m, const std::vector<int>& h) {
  ContextMass cm;
  std::vector<int> lower_ctx(h.begin() + 1, h.end());
  const auto& table = m.tables[h.size()];
  for (auto it = table.lower_bound(h); it != table.end(); ++it) {
    if (!std::equal(h.begin(), h.end(), it->first.begin())) break;
    cm.explicit_p += std::exp(it->second.logp);
    cm.explicit_lower += std::exp(m.cond_lognat(lower_ctx, it->first.back()));
  }
  return cm;
}

inline double recompute_bow(const NGramModel& m, const std::vector<int>& h) {
  ContextMass cm = context_mass(m, h);
  const double num = 1.0 - cm.explicit_p, den = 1.0 - cm.explicit_lower;
  if (num < 1e-12 || den < 1e-12) return 0.0;
  return std::log(num) - std::log(den);
}

}  // namespace prune_detail

// Relative-entropy cost of removing one explicit entry, in nats (Stolcke's
// criterion): -P(h) [ p(w|h)(ln p(w|h') + ln a' - ln p(w|h)) + BO (ln a' - ln a) ].
inline double prune_cost(const NGramModel& m, const std::vector<int>& gram) {
  std::vector<int> h(gram.begin(), gram.end() - 1);
  std::vector<int> lower_ctx(h.begin() + 1, h.end());
  const auto& e = m.tables[gram.size() - 1].at(gram);
  const double p = std::exp(e.logp);
  const double p_lower = std::exp(m.cond_lognat(lower_ctx, gram.back()));
  auto cm = prune_detail::context_mass(m, h);
  const double num = 1.0 - cm.explicit_p, den = 1.0 - cm.explicit_lower;
  const double ln_alpha = (num < 1e-12 || den < 1e-12) ? 0.0 : std::log(num) - std::log(den);
  const double nump = num + p, denp = den + p_lower;
  const double ln_alpha_p = (nump < 1e-12 || denp < 1e-12) ? 0.0 : std::log(nump) - std::log(denp);
  const double backed_off = std::max(num, 0.0);
  double cost = -(p * (std::log(p_lower) + ln_alpha_p - std::log(p)) + backed_off * (ln_alpha_p - ln_alpha));
  if (cost < 0.0 && cost > -1e-12) cost = 0.0;  // KL is >= 0; absorb rounding
  return m.context_marginal(h) * cost;
}

inline NGramModel entropy_prune(const NGramModel& model, double threshold_nats) {
  require(threshold_nats >= 0.0, "pruning threshold must be >= 0, got ", threshold_nats);
  NGramModel m = model;
  for (int k = m.order; k >= 2; --k) {
    auto& table = m.tables[size_t(k - 1)];
    // contexts of surviving higher-order entries are protected
    std::set<std::vector<int>> protected_grams;
    if (k < m.order)
      for (const auto& [gram, e] : m.tables[size_t(k)]) {
        (void)e;
        protected_grams.insert(std::vector<int>(gram.begin(), gram.end() - 1));
      }
    std::vector<std::vector<int>> doomed;
    for (const auto& [gram, e] : table) {
      (void)e;
      if (protected_grams.count(gram)) continue;
      if (prune_cost(m, gram) < threshold_nats) doomed.push_back(gram);
    }
    std::set<std::vector<int>> touched;
    for (const auto& gram : doomed) {
      table.erase(gram);
      touched.insert(std::vector<int>(gram.begin(), gram.end() - 1));
    }
    for (const auto& h : touched) {
      auto& ctx_entry = m.tables[h.size() - 1].at(h);
      ctx_entry.bow = prune_detail::recompute_bow(m, h);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// ARPA text serialization, log10 with 7 decimals.
// ---------------------------------------------------------------------------

inline void arpa_write(const NGramModel& m, std::ostream& os) {
  os << "\\data\\\n";
  for (int k = 1; k <= m.order; ++k) os << "ngram " << k << "=" << m.tables[size_t(k - 1)].size() << "\n";
  char buf[64];
  for (int k = 1; k <= m.order; ++k) {
    os << "\n\\" << k << "-grams:\n";
    for (const auto& [gram, e] : m.tables[size_t(k - 1)]) {
      std::snprintf(buf, sizeof buf, "%.7f", e.logp / M_LN10);
      os << buf;
      for (size_t i = 0; i < gram.size(); ++i) os << (i == 0 ? "\t" : " ") << m.vocab.name(gram[i]);
      if (k < m.order) {
        std::snprintf(buf, sizeof buf, "%.7f", e.bow / M_LN10);
        os << "\t" << buf;
      }
      os << "\n";
    }
  }
  os << "\n\\end\\\n";
}

inline void arpa_write_file(const NGramModel& m, const std::string& path) {
  std::ofstream os(path);
  require(bool(os), "cannot write arpa file: ", path);
  arpa_write(m, os);
}

inline NGramModel arpa_read(std::istream& is, const std::string& where = "<arpa>") {
  NGramModel m;
  std::string line;
  int lineno = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(is, line)) {
      ++lineno;
      size_t a = line.find_first_not_of(" \t\r");
      if (a == std::string::npos) continue;
      size_t b = line.find_last_not_of(" \t\r");
      line = line.substr(a, b - a + 1);
      return true;
    }
    return false;
  };

  require(next_line() && line == "\\data\\", where, ":", lineno, ": expected \\data\\ header");
  std::vector<int64_t> declared;
  while (next_line() && line.rfind("ngram ", 0) == 0) {
    auto eq = line.find('=');
    require(eq != std::string::npos, where, ":", lineno, ": malformed ngram count line: ", line);
    int k = std::stoi(line.substr(6, eq - 6));
    require(k == int(declared.size()) + 1, where, ":", lineno, ": ngram orders must be consecutive");
    declared.push_back(std::stoll(line.substr(eq + 1)));
  }
  require(!declared.empty(), where, ":", lineno, ": no ngram counts declared");
  m.order = int(declared.size());
  m.tables.resize(size_t(m.order));

  for (int k = 1; k <= m.order; ++k) {
    require(line == str_cat("\\", k, "-grams:"), where, ":", lineno, ": expected \\", k, "-grams: section, got ",
            line);
    int64_t read_count = 0;
    while (next_line()) {
      if (!line.empty() && line[0] == '\\') break;
      auto toks = split_ws(line);
      const size_t base = 1 + size_t(k);
      require(toks.size() == base || (k < m.order && toks.size() == base + 1), where, ":", lineno,
              ": malformed ", k, "-gram line: ", line);
      NGramEntry e;
      try {
        e.logp = std::stod(toks[0]) * M_LN10;
        if (toks.size() == base + 1) e.bow = std::stod(toks.back()) * M_LN10;
      } catch (...) {
        fail(where, ":", lineno, ": bad number in: ", line);
      }
      std::vector<int> gram;
      for (int i = 0; i < k; ++i) gram.push_back(m.vocab.add(toks[size_t(1 + i)]));
      m.tables[size_t(k - 1)][gram] = e;
      ++read_count;
    }
    require(read_count == declared[size_t(k - 1)], where, ": \\", k, "-grams section has ", read_count,
            " entries, header declared ", declared[size_t(k - 1)]);
  }
  require(line == "\\end\\", where, ":", lineno, ": expected \\end\\, got ", line);
  return m;
}

inline NGramModel arpa_read_file(const std::string& path) {
  std::ifstream is(path);
  require(bool(is), "cannot open arpa file: ", path);
  return arpa_read(is, path);
}

// ---------------------------------------------------------------------------
// Exact bigram model from a known transition matrix (the generator skeleton):
// complete context rows, so backoff is never taken.
// ---------------------------------------------------------------------------

inline NGramModel bigram_from_matrix(const std::vector<std::string>& words,
                                     const std::vector<std::vector<double>>& rows) {
  const int V = int(words.size());
  require(int(rows.size()) == V + 1, "bigram matrix needs one row per word plus <s>");
  NGramModel m;
  m.order = 2;
  m.tables.resize(2);
  std::vector<int> ids;
  for (const auto& w : words) ids.push_back(m.vocab.add(w));

  // unigram marginals: occupancy of the sentence-start chain (uniformish is
  // fine for scoring; rows are complete so unigrams are never backed off to)
  std::vector<double> uni(size_t(V) + 1, 1.0 / double(V + 1));  // words + </s>
  for (int w = 0; w < V; ++w) m.tables[0][{ids[size_t(w)]}] = {std::log(uni[size_t(w)]), 0.0};
  m.tables[0][{Vocab::kEos}] = {std::log(uni[size_t(V)]), 0.0};
  m.tables[0][{Vocab::kBos}] = {-99.0 * M_LN10, 0.0};

  auto fill_row = [&](int ctx_id, const std::vector<double>& row) {
    for (int c = 0; c <= V; ++c) {
      if (row[size_t(c)] <= 0.0) continue;
      int succ = c == V ? Vocab::kEos : ids[size_t(c)];
      m.tables[1][{ctx_id, succ}] = {std::log(row[size_t(c)]), 0.0};
    }
  };
  for (int w = 0; w < V; ++w) fill_row(ids[size_t(w)], rows[size_t(w)]);
  fill_row(Vocab::kBos, rows[size_t(V)]);
  return m;
}

// Sums P(w|h) over the predicted vocabulary; the normalization invariant.
inline double context_prob_sum(const NGramModel& m, const std::vector<int>& context) {
  double s = 0.0;
  for (int w : m.predicted_vocab()) s += std::exp(m.cond_lognat(context, w));
  return s;
}

}  // namespace hal

#endif  // HAL_NGRAM_HPP_
