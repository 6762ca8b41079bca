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

#ifndef HAL_HMM_HPP_
#define HAL_HMM_HPP_

#include <map>
#include <string>
#include <vector>

#include "hal/corpus.hpp"
#include "hal/ngram.hpp"
#include "hal/tensor.hpp"

namespace hal {

// Context-independent decoding graph: a left-to-right HMM per phone, words
// as phone-state concatenations, one self-loop/forward transition pair per
// state, and per-state priors for hybrid score normalization.
struct HmmDecodingGraph {
  Lexicon lexicon;
  int states_per_phone = 3;
  int num_states = 0;
  double self_loop = 0.5;
  std::vector<double> log_priors;            // ln, size num_states
  std::vector<std::vector<int>> word_states; // per word, the flattened state path

  double loop_lp() const { return std::log(self_loop); }
  double next_lp() const { return std::log(1.0 - self_loop); }

  static HmmDecodingGraph build(const Lexicon& lex, int states_per_phone, double self_loop,
                                std::vector<double> log_priors) {
    require(states_per_phone >= 1, "states_per_phone must be >= 1");
    require(self_loop > 0.0 && self_loop < 1.0, "self-loop probability must lie in (0,1), got ", self_loop);
    HmmDecodingGraph g;
    g.lexicon = lex;
    g.states_per_phone = states_per_phone;
    g.num_states = lex.num_phones * states_per_phone;
    g.self_loop = self_loop;
    require(int(log_priors.size()) == g.num_states, "prior vector has ", log_priors.size(), " states, graph has ",
            g.num_states);
    double prior_sum = 0.0;
    for (double lp : log_priors) {
      require(std::isfinite(lp), "zero or invalid prior for an active state");
      prior_sum += std::exp(lp);
    }
    require(std::abs(prior_sum - 1.0) < 1e-6, "priors must form a distribution, sum = ", prior_sum);
    g.log_priors = std::move(log_priors);
    for (size_t w = 0; w < lex.words.size(); ++w) {
      std::vector<int> states;
      for (int ph : lex.phones[w])
        for (int k = 0; k < states_per_phone; ++k) states.push_back(ph * states_per_phone + k);
      require(!states.empty(), "lexicon word ", lex.words[w], " maps to no states");
      g.word_states.push_back(std::move(states));
    }
    return g;
  }
};

// Relative state frequencies with add-1 smoothing, log-transformed.
inline std::vector<double> estimate_log_priors(const std::vector<std::vector<int>>& alignments,
                                               int num_states) {
  require(!alignments.empty(), "no alignments to estimate priors from");
  std::vector<int64_t> counts(size_t(num_states), 0);
  int64_t total = 0;
  for (const auto& a : alignments)
    for (int s : a) {
      require(s >= 0 && s < num_states, "alignment state ", s, " outside [0,", num_states, ")");
      counts[size_t(s)]++;
      ++total;
    }
  std::vector<double> out(static_cast<size_t>(num_states));
  for (int s = 0; s < num_states; ++s)
    out[size_t(s)] = std::log(double(counts[size_t(s)] + 1) / double(total + num_states));
  return out;
}

// Hybrid rule: pseudo log likelihoods are log posteriors minus log priors.
inline Tensor hybrid_acoustic_scores(const Tensor& log_posteriors, const std::vector<double>& log_priors) {
  require(log_posteriors.ndims() == 2, "log posteriors must be [frames x states]");
  require(size_t(log_posteriors.cols()) == log_priors.size(), "posterior state count ", log_posteriors.cols(),
          " does not match prior count ", log_priors.size());
  for (double lp : log_priors) require(std::isfinite(lp), "zero prior for an active state");
  Tensor out({log_posteriors.rows(), log_posteriors.cols()});
  for (int t = 0; t < out.rows(); ++t)
    for (int s = 0; s < out.cols(); ++s)
      out.at(t, s) = float(double(log_posteriors.at(t, s)) - log_priors[size_t(s)]);
  return out;
}

struct DecodeResult {
  std::vector<std::string> words;
  double total = 0.0;       // acoustic+transition + lm_weight*lm + penalty*words
  double acoustic = 0.0;    // acoustic + transition part, natural log
  double lm = 0.0;          // unweighted LM part ln P(words </s> | <s>)
  std::vector<int> states;     // per-frame state backtrace
  std::vector<int> positions;  // per-frame flat position in the hypothesis state path
  double lm_weight = 0.0, word_penalty = 0.0;
};

class PruningFailure : public Error {
 public:
  explicit PruningFailure(const std::string& msg) : Error(msg) {}
};

namespace decode_detail {

struct NodeKey {
  int word;                // lexicon index
  int pos;                 // position in the word's state path
  std::vector<int> hist;   // LM context ids, length <= order-1

  bool operator<(const NodeKey& o) const {
    if (word != o.word) return word < o.word;
    if (pos != o.pos) return pos < o.pos;
    return hist < o.hist;
  }
};

struct Token {
  double score = -HUGE_VAL;
  double ac = 0.0, lm = 0.0;
  int n_words = 0;
  std::vector<int> word_seq;  // lexicon indices, for distinctness and output
  int frame = -1;
  int parent = -1;            // token index in the previous frame's list
  int state = -1;             // emitting state at this frame
  int flat_pos = -1;          // position within the hypothesis state path
};

// Per-node list of at most n best tokens with pairwise distinct word
// sequences. Keeping n distinct-history tokens per node is exact because the
// future score depends only on the node key.
struct NodeTokens {
  std::vector<int> toks;  // indices into the frame token arena, sorted by score desc
};

}  // namespace decode_detail

// Time-synchronous beam search over (word, position, LM context) nodes.
// Exact when beam is infinite; n-best lists distinct word sequences. The
// pruning threshold at each frame is anchored to the exact frame-best score
// (taken from an unpruned first pass), so survivor sets are nested across
// beams and widening the beam can never lower the best returned score.
inline std::vector<DecodeResult> nbest_decode(const HmmDecodingGraph& graph, const Tensor& scores,
                                              const NGramModel& lm, double beam, double lm_weight,
                                              double word_penalty, int nbest) {
  using decode_detail::NodeKey;
  using decode_detail::Token;
  require(scores.rows() >= 1, "empty utterance");
  require(scores.cols() == graph.num_states, "score matrix has ", scores.cols(), " states, graph has ",
          graph.num_states);
  require(beam > 0.0, "beam must be positive");
  require(nbest >= 1, "n-best size must be >= 1");

  // lexicon words in LM id space (<unk> only if the model provides it)
  std::vector<int> lm_ids(graph.lexicon.words.size());
  for (size_t w = 0; w < lm_ids.size(); ++w) {
    const std::string& word = graph.lexicon.words[w];
    if (lm.vocab.has(word)) {
      lm_ids[w] = lm.vocab.find(word);
    } else {
      require(lm.has_entry({Vocab::kUnk}), "lexicon word ", word, " is outside the LM vocabulary");
      lm_ids[w] = Vocab::kUnk;
    }
  }
  const size_t ctx_len = size_t(lm.order - 1);
  auto extend_hist = [&](const std::vector<int>& hist, int lm_word) {
    std::vector<int> h = hist;
    h.push_back(lm_word);
    if (h.size() > ctx_len) h.erase(h.begin(), h.begin() + long(h.size() - ctx_len));
    return h;
  };

  const int T = scores.rows();
  const double loop_lp = graph.loop_lp(), next_lp = graph.next_lp();

  // One token-passing sweep. thresholds, when given, prune per frame against
  // fixed scores; frame_best_out records the per-frame best for anchoring.
  auto run_pass = [&](int want, const std::vector<double>* thresholds,
                      std::vector<double>* frame_best_out) -> std::vector<DecodeResult> {
    std::vector<std::vector<Token>> arena(static_cast<size_t>(T));
    std::map<NodeKey, decode_detail::NodeTokens> frontier;

    // higher score wins; score ties prefer fewer words, then lexicographic
    // order, so exit-and-reenter readings collapse onto self-loops
    auto better = [](const Token& a, const Token& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.word_seq.size() != b.word_seq.size()) return a.word_seq.size() < b.word_seq.size();
      return a.word_seq < b.word_seq;
    };

    auto offer = [&](std::map<NodeKey, decode_detail::NodeTokens>& nodes, std::vector<Token>& frame_toks,
                     const NodeKey& key, Token tok) {
      auto& nt = nodes[key];
      // distinct word sequences per node, best first, capped at the list size
      for (int idx : nt.toks) {
        Token& have = frame_toks[size_t(idx)];
        if (have.word_seq == tok.word_seq) {
          if (tok.score > have.score) {
            have = std::move(tok);
            std::stable_sort(nt.toks.begin(), nt.toks.end(),
                             [&](int a, int b) { return better(frame_toks[size_t(a)], frame_toks[size_t(b)]); });
          }
          return;
        }
      }
      frame_toks.push_back(std::move(tok));
      int idx = int(frame_toks.size()) - 1;
      auto it = nt.toks.begin();
      while (it != nt.toks.end() && !better(frame_toks[size_t(idx)], frame_toks[size_t(*it)])) ++it;
      nt.toks.insert(it, idx);
      if (int(nt.toks.size()) > want) nt.toks.pop_back();
    };

    // frame 0: enter every word with the sentence-begin context
    const std::vector<int> bos_hist = {Vocab::kBos};
    for (size_t w = 0; w < graph.word_states.size(); ++w) {
      const int state = graph.word_states[w][0];
      Token tok;
      tok.lm = lm.cond_lognat(bos_hist, lm_ids[w]);
      tok.ac = double(scores.at(0, state));
      tok.n_words = 1;
      tok.word_seq = {int(w)};
      tok.score = tok.ac + lm_weight * tok.lm + word_penalty;
      tok.frame = 0;
      tok.state = state;
      tok.flat_pos = 0;
      offer(frontier, arena[0], NodeKey{int(w), 0, bos_hist}, std::move(tok));
    }
    if (frame_best_out) frame_best_out->assign(size_t(T), -HUGE_VAL);
    auto note_best = [&](int t) {
      if (!frame_best_out) return;
      for (const auto& [key, nt] : frontier)
        for (int idx : nt.toks)
          (*frame_best_out)[size_t(t)] = std::max((*frame_best_out)[size_t(t)], arena[size_t(t)][size_t(idx)].score);
    };
    note_best(0);

    for (int t = 1; t < T; ++t) {
      std::map<NodeKey, decode_detail::NodeTokens> next;
      // within-word transitions first, then word exits: on exact ties the
      // earlier arrival wins, so self-loops beat re-entering the same word
      for (const auto& [key, nt] : frontier) {
        const auto& path = graph.word_states[size_t(key.word)];
        for (int idx : nt.toks) {
          const Token& src = arena[size_t(t - 1)][size_t(idx)];
          {  // self loop
            Token tok = src;
            const int state = path[size_t(key.pos)];
            tok.score += loop_lp + double(scores.at(t, state));
            tok.ac += loop_lp + double(scores.at(t, state));
            tok.frame = t;
            tok.parent = idx;
            tok.state = state;
            tok.flat_pos = src.flat_pos;
            offer(next, arena[size_t(t)], key, std::move(tok));
          }
          if (key.pos + 1 < int(path.size())) {  // forward within the word
            Token tok = src;
            const int state = path[size_t(key.pos) + 1];
            tok.score += next_lp + double(scores.at(t, state));
            tok.ac += next_lp + double(scores.at(t, state));
            tok.frame = t;
            tok.parent = idx;
            tok.state = state;
            tok.flat_pos = src.flat_pos + 1;
            offer(next, arena[size_t(t)], NodeKey{key.word, key.pos + 1, key.hist}, std::move(tok));
          }
        }
      }
      for (const auto& [key, nt] : frontier) {
        const auto& path = graph.word_states[size_t(key.word)];
        if (key.pos + 1 != int(path.size())) continue;  // exits only from word-final states
        const std::vector<int> hist = extend_hist(key.hist, lm_ids[size_t(key.word)]);
        for (int idx : nt.toks) {
          const Token& src = arena[size_t(t - 1)][size_t(idx)];
          for (size_t w = 0; w < graph.word_states.size(); ++w) {
            Token tok = src;
            const int state = graph.word_states[w][0];
            const double word_lp = lm.cond_lognat(hist, lm_ids[w]);
            tok.lm += word_lp;
            tok.ac += next_lp + double(scores.at(t, state));
            tok.score += next_lp + double(scores.at(t, state)) + lm_weight * word_lp + word_penalty;
            tok.n_words += 1;
            tok.word_seq.push_back(int(w));
            tok.frame = t;
            tok.parent = idx;
            tok.state = state;
            tok.flat_pos = src.flat_pos + 1;
            offer(next, arena[size_t(t)], NodeKey{int(w), 0, hist}, std::move(tok));
          }
        }
      }
      if (thresholds) {
        const double cut = (*thresholds)[size_t(t)];
        for (auto it = next.begin(); it != next.end();) {
          auto& toks = it->second.toks;
          toks.erase(std::remove_if(toks.begin(), toks.end(),
                                    [&](int idx) { return arena[size_t(t)][size_t(idx)].score < cut; }),
                     toks.end());
          it = toks.empty() ? next.erase(it) : std::next(it);
        }
        if (next.empty())
          throw PruningFailure(str_cat("beam ", beam, " pruned every hypothesis at frame ", t));
      }
      frontier = std::move(next);
      note_best(t);
    }

    // finalize: word-final hypotheses close with the sentence-end probability
    struct Final {
      double score;
      const Token* tok;
      double lm;
    };
    std::vector<Final> finals;
    for (const auto& [key, nt] : frontier) {
      if (key.pos + 1 != int(graph.word_states[size_t(key.word)].size())) continue;
      const std::vector<int> hist = extend_hist(key.hist, lm_ids[size_t(key.word)]);
      const double eos_lp = lm.cond_lognat(hist, Vocab::kEos);
      for (int idx : nt.toks) {
        const Token& tok = arena[size_t(T - 1)][size_t(idx)];
        finals.push_back({tok.score + lm_weight * eos_lp, &tok, tok.lm + eos_lp});
      }
    }
    if (finals.empty())
      throw PruningFailure("no hypothesis reached a word-final state at the last frame");
    // equal scores prefer fewer words, then lexicographic order: ties from
    // exit-and-reenter paths collapse onto the self-loop reading
    std::stable_sort(finals.begin(), finals.end(), [](const Final& a, const Final& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.tok->word_seq.size() != b.tok->word_seq.size())
        return a.tok->word_seq.size() < b.tok->word_seq.size();
      return a.tok->word_seq < b.tok->word_seq;
    });

    std::vector<DecodeResult> results;
    std::vector<std::vector<int>> seen;
    for (const auto& f : finals) {
      if (int(results.size()) == want) break;
      if (std::find(seen.begin(), seen.end(), f.tok->word_seq) != seen.end()) continue;
      seen.push_back(f.tok->word_seq);
      DecodeResult r;
      r.total = f.score;
      r.lm = f.lm;
      r.acoustic = f.tok->ac;
      r.lm_weight = lm_weight;
      r.word_penalty = word_penalty;
      for (int w : f.tok->word_seq) r.words.push_back(graph.lexicon.words[size_t(w)]);
      r.states.resize(size_t(T));
      r.positions.resize(size_t(T));
      const Token* cur = f.tok;
      for (int t = T - 1; t >= 0; --t) {
        r.states[size_t(t)] = cur->state;
        r.positions[size_t(t)] = cur->flat_pos;
        cur = cur->parent >= 0 ? &arena[size_t(t - 1)][size_t(cur->parent)] : nullptr;
      }
      results.push_back(std::move(r));
    }
    return results;
  };

  if (!std::isfinite(beam)) return run_pass(nbest, nullptr, nullptr);
  std::vector<double> frame_best;
  run_pass(1, nullptr, &frame_best);  // exact anchors
  std::vector<double> thresholds(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) thresholds[size_t(t)] = frame_best[size_t(t)] - beam;
  return run_pass(nbest, &thresholds, nullptr);
}

inline DecodeResult viterbi_decode(const HmmDecodingGraph& graph, const Tensor& scores, const NGramModel& lm,
                                   double beam, double lm_weight, double word_penalty) {
  return nbest_decode(graph, scores, lm, beam, lm_weight, word_penalty, 1).front();
}

// Recomputes a result's total from its backtrace; the decoder's score
// bookkeeping must agree with this sum.
inline double recompute_score(const HmmDecodingGraph& graph, const Tensor& scores, const NGramModel& lm,
                              const DecodeResult& r) {
  double ac = 0.0;
  for (int t = 0; t < int(r.states.size()); ++t) {
    ac += double(scores.at(t, r.states[size_t(t)]));
    if (t > 0) ac += r.positions[size_t(t)] == r.positions[size_t(t - 1)] ? graph.loop_lp() : graph.next_lp();
  }
  std::vector<int> ctx = {Vocab::kBos};
  double lm_total = 0.0;
  for (const auto& w : r.words) {
    int id = lm.vocab.has(w) ? lm.vocab.find(w) : Vocab::kUnk;
    lm_total += lm.cond_lognat(ctx, id);
    ctx.push_back(id);
  }
  lm_total += lm.cond_lognat(ctx, Vocab::kEos);
  return ac + r.lm_weight * lm_total + r.word_penalty * double(r.words.size());
}

// Best state path constrained to the transcript's concatenated state
// sequence (equal scores prefer the self-loop).
inline std::vector<int> forced_align(const HmmDecodingGraph& graph, const Tensor& scores,
                                     const std::vector<std::string>& transcript) {
  require(!transcript.empty(), "empty transcript");
  std::vector<int> path;
  for (const auto& w : transcript) {
    int wi = graph.lexicon.find(w);
    require(wi >= 0, "transcript word not in lexicon: ", w);
    for (int s : graph.word_states[size_t(wi)]) path.push_back(s);
  }
  const int T = scores.rows(), M = int(path.size());
  require(T >= M, "utterance has ", T, " frames but the transcript needs at least ", M);

  const double loop_lp = graph.loop_lp(), next_lp = graph.next_lp();
  const double NEG = -HUGE_VAL;
  std::vector<std::vector<double>> dp(size_t(T), std::vector<double>(size_t(M), NEG));
  std::vector<std::vector<int>> from(size_t(T), std::vector<int>(size_t(M), -1));
  dp[0][0] = double(scores.at(0, path[0]));
  for (int t = 1; t < T; ++t)
    for (int j = std::max(0, M - (T - t)); j < std::min(M, t + 1); ++j) {
      double stay = dp[size_t(t - 1)][size_t(j)] == NEG ? NEG : dp[size_t(t - 1)][size_t(j)] + loop_lp;
      double advance = (j > 0 && dp[size_t(t - 1)][size_t(j - 1)] != NEG)
                           ? dp[size_t(t - 1)][size_t(j - 1)] + next_lp
                           : NEG;
      if (stay == NEG && advance == NEG) continue;
      const bool take_stay = stay >= advance;
      dp[size_t(t)][size_t(j)] = (take_stay ? stay : advance) + double(scores.at(t, path[size_t(j)]));
      from[size_t(t)][size_t(j)] = take_stay ? j : j - 1;
    }
  require(dp[size_t(T - 1)][size_t(M - 1)] != NEG, "no forced alignment path");
  std::vector<int> out(static_cast<size_t>(T));
  int j = M - 1;
  for (int t = T - 1; t >= 0; --t) {
    out[size_t(t)] = path[size_t(j)];
    if (t > 0) j = from[size_t(t)][size_t(j)];
  }
  return out;
}

// --- n-best file format --------------------------------------------------------
// One scored hypothesis per line: utt rank total acoustic lm n_words words...

inline void write_nbest(std::ostream& os, const std::string& utt_id, const std::vector<DecodeResult>& list) {
  char buf[128];
  for (size_t i = 0; i < list.size(); ++i) {
    const auto& r = list[i];
    std::snprintf(buf, sizeof buf, "%s %zu %.6f %.6f %.6f %zu", utt_id.c_str(), i + 1, r.total, r.acoustic,
                  r.lm, r.words.size());
    os << buf;
    for (const auto& w : r.words) os << " " << w;
    os << "\n";
  }
}

struct NbestLine {
  std::string utt_id;
  int rank = 0;
  double total = 0.0, acoustic = 0.0, lm = 0.0;
  std::vector<std::string> words;
};

inline std::vector<NbestLine> read_nbest(std::istream& is, const std::string& where = "<nbest>") {
  std::vector<NbestLine> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    require(toks.size() >= 6, where, ":", lineno, ": malformed n-best line: ", line);
    NbestLine e;
    e.utt_id = toks[0];
    try {
      e.rank = std::stoi(toks[1]);
      e.total = std::stod(toks[2]);
      e.acoustic = std::stod(toks[3]);
      e.lm = std::stod(toks[4]);
      size_t n = std::stoul(toks[5]);
      require(toks.size() == 6 + n, where, ":", lineno, ": word count mismatch");
      e.words.assign(toks.begin() + 6, toks.end());
    } catch (const Error&) {
      throw;
    } catch (...) {
      fail(where, ":", lineno, ": bad number in n-best line: ", line);
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace hal

#endif  // HAL_HMM_HPP_
