#include <map>

#include "doctest.h"
#include "hal/hmm.hpp"
#include "hal/synth.hpp"
#include "hal/trainer.hpp"

using namespace hal;

namespace {

Lexicon toy_lexicon(const std::vector<int>& phones_per_word) {
  Lexicon lex;
  int phone = 0;
  for (size_t w = 0; w < phones_per_word.size(); ++w) {
    lex.words.push_back(str_cat("w", w));
    std::vector<int> ph;
    for (int i = 0; i < phones_per_word[w]; ++i) ph.push_back(phone++);
    lex.phones.push_back(ph);
  }
  lex.num_phones = phone;
  return lex;
}

std::vector<double> uniform_log_priors(int n) {
  return std::vector<double>(size_t(n), std::log(1.0 / double(n)));
}

Tensor random_scores(int frames, int states, Rng& rng, double scale = 2.0) {
  Tensor s({frames, states});
  for (int64_t i = 0; i < s.numel(); ++i) s[i] = float(scale * rng.normal());
  return s;
}

// random full-support bigram over the lexicon words
NGramModel random_bigram(const Lexicon& lex, Rng& rng) {
  const int V = int(lex.words.size());
  std::vector<std::vector<double>> rows;
  for (int r = 0; r <= V; ++r) {
    std::vector<double> row(size_t(V) + 1);
    double tot = 0.0;
    for (auto& x : row) tot += (x = 0.05 + rng.uniform());
    for (auto& x : row) x /= tot;
    rows.push_back(std::move(row));
  }
  return bigram_from_matrix(lex.words, rows);
}

// Exhaustive path enumeration mirroring the decoder's scoring contract:
// exact best score per distinct word sequence.
struct Oracle {
  const HmmDecodingGraph& graph;
  const Tensor& scores;
  const NGramModel& lm;
  double lm_weight, word_penalty;
  std::vector<int> lm_ids;
  std::map<std::vector<int>, double> best;  // word seq -> best total
  int64_t paths = 0;

  Oracle(const HmmDecodingGraph& g, const Tensor& s, const NGramModel& m, double lw, double wp)
      : graph(g), scores(s), lm(m), lm_weight(lw), word_penalty(wp) {
    for (const auto& w : g.lexicon.words) lm_ids.push_back(m.vocab.find(w));
    for (size_t w = 0; w < g.word_states.size(); ++w) {
      std::vector<int> hist = {Vocab::kBos};
      double lmv = lm.cond_lognat(hist, lm_ids[w]);
      std::vector<int> seq = {int(w)};
      expand(0, int(w), 0, {Vocab::kBos}, seq,
             double(scores.at(0, g.word_states[w][0])) + lm_weight * lmv + word_penalty, lmv);
    }
  }

  void expand(int t, int word, int pos, std::vector<int> hist, std::vector<int>& words, double score,
              double lm_total) {
    const auto& path = graph.word_states[size_t(word)];
    if (t == scores.rows() - 1) {
      if (pos + 1 == int(path.size())) {
        std::vector<int> h2 = extend(hist, lm_ids[size_t(word)]);
        double total = score + lm_weight * lm.cond_lognat(h2, Vocab::kEos);
        (void)lm_total;
        auto it = best.find(words);
        if (it == best.end() || total > it->second) best[words] = total;
        ++paths;
      }
      return;
    }
    const int nt = t + 1;
    {  // self loop
      double s = score + graph.loop_lp() + double(scores.at(nt, path[size_t(pos)]));
      expand(nt, word, pos, hist, words, s, lm_total);
    }
    if (pos + 1 < int(path.size())) {
      double s = score + graph.next_lp() + double(scores.at(nt, path[size_t(pos) + 1]));
      expand(nt, word, pos + 1, hist, words, s, lm_total);
    }
    if (pos + 1 == int(path.size())) {
      std::vector<int> h2 = extend(hist, lm_ids[size_t(word)]);
      for (size_t w2 = 0; w2 < graph.word_states.size(); ++w2) {
        double wl = lm.cond_lognat(h2, lm_ids[w2]);
        double s = score + graph.next_lp() + double(scores.at(nt, graph.word_states[w2][0])) +
                   lm_weight * wl + word_penalty;
        words.push_back(int(w2));
        expand(nt, int(w2), 0, h2, words, s, lm_total + wl);
        words.pop_back();
      }
    }
  }

  std::vector<int> extend(const std::vector<int>& hist, int w) const {
    std::vector<int> h = hist;
    h.push_back(w);
    size_t keep = size_t(lm.order - 1);
    if (h.size() > keep) h.erase(h.begin(), h.begin() + long(h.size() - keep));
    return h;
  }

  // top-n distinct word sequences by score
  std::vector<std::pair<std::vector<int>, double>> topn(int n) const {
    std::vector<std::pair<std::vector<int>, double>> all(best.begin(), best.end());
    std::stable_sort(all.begin(), all.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (int(all.size()) > n) all.resize(size_t(n));
    return all;
  }
};

std::vector<int> to_indices(const Lexicon& lex, const std::vector<std::string>& words) {
  std::vector<int> out;
  for (const auto& w : words) out.push_back(lex.find(w));
  return out;
}

}  // namespace

TEST_CASE("prior estimation with add-1 smoothing") {
  // one state observed in all N frames of a 2-state inventory
  const int N = 7;
  auto lp = estimate_log_priors({std::vector<int>(N, 0)}, 2);
  CHECK(std::exp(lp[0]) == doctest::Approx(double(N + 1) / (N + 2)).epsilon(1e-12));
  CHECK(std::exp(lp[1]) == doctest::Approx(1.0 / (N + 2)).epsilon(1e-12));

  auto balanced = estimate_log_priors({{0, 1, 2, 0, 1, 2}}, 3);
  for (double v : balanced) CHECK(std::exp(v) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Rng rng(3);
  std::vector<std::vector<int>> aligns;
  for (int u = 0; u < 5; ++u) {
    std::vector<int> a;
    for (int t = 0; t < 20; ++t) a.push_back(int(rng.below(6)));
    aligns.push_back(a);
  }
  auto lp6 = estimate_log_priors(aligns, 6);
  double sum = 0.0;
  for (double v : lp6) sum += std::exp(v);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("hybrid acoustic scores subtract log priors") {
  Tensor post({1, 2});
  post.at(0, 0) = float(std::log(0.6));
  post.at(0, 1) = float(std::log(0.4));
  Tensor s = hybrid_acoustic_scores(post, {std::log(0.9), std::log(0.1)});
  CHECK(s.at(0, 0) == doctest::Approx(std::log(0.6 / 0.9)).epsilon(1e-6));
  CHECK(s.at(0, 1) == doctest::Approx(std::log(0.4 / 0.1)).epsilon(1e-6));
  CHECK(s.at(0, 1) > s.at(0, 0));  // the argmax flips to the rare state

  // uniform priors shift by +ln C and keep the argmax
  Tensor u = hybrid_acoustic_scores(post, uniform_log_priors(2));
  CHECK(u.at(0, 0) == doctest::Approx(post.at(0, 0) + std::log(2.0)).epsilon(1e-6));
  CHECK((u.at(0, 0) > u.at(0, 1)) == (post.at(0, 0) > post.at(0, 1)));

  // priors equal to the posterior row zero the scores
  Tensor z = hybrid_acoustic_scores(post, {std::log(0.6), std::log(0.4)});
  CHECK(std::abs(z.at(0, 0)) < 1e-6);
  CHECK(std::abs(z.at(0, 1)) < 1e-6);

  CHECK_THROWS_AS(hybrid_acoustic_scores(post, {std::log(0.5), -HUGE_VAL}), Error);
}

TEST_CASE("viterbi matches exhaustive enumeration on random toy instances") {
  Rng rng(11);
  int instances = 0;
  while (instances < 25) {
    std::vector<int> ppw;
    const int vocab = 2 + int(rng.below(2));
    for (int w = 0; w < vocab; ++w) ppw.push_back(1 + int(rng.below(2)));
    Lexicon lex = toy_lexicon(ppw);
    const int spp = 1 + int(rng.below(2));
    HmmDecodingGraph graph =
        HmmDecodingGraph::build(lex, spp, 0.4 + 0.2 * rng.uniform(), uniform_log_priors(lex.num_phones * spp));
    const int T = 3 + int(rng.below(5));
    Tensor scores = random_scores(T, graph.num_states, rng);
    NGramModel lm = random_bigram(lex, rng);
    const double lw = 0.5 + 3.0 * rng.uniform();
    const double wp = rng.uniform(-0.5, 0.5);

    Oracle oracle(graph, scores, lm, lw, wp);
    if (oracle.paths > 100000 || oracle.best.empty()) continue;
    ++instances;

    DecodeResult got = viterbi_decode(graph, scores, lm, HUGE_VAL, lw, wp);
    auto top = oracle.topn(3);
    CHECK(got.total == doctest::Approx(top[0].second).epsilon(1e-9));
    CHECK(oracle.best.at(to_indices(lex, got.words)) == doctest::Approx(got.total).epsilon(1e-9));
    CHECK(recompute_score(graph, scores, lm, got) == doctest::Approx(got.total).epsilon(1e-6));

    auto nb = nbest_decode(graph, scores, lm, HUGE_VAL, lw, wp, 3);
    CHECK(nb.front().words == got.words);  // element 1 equals the 1-best
    for (size_t i = 0; i < nb.size(); ++i) {
      if (i < top.size()) CHECK(nb[i].total == doctest::Approx(top[i].second).epsilon(1e-9));
      CHECK(oracle.best.at(to_indices(lex, nb[i].words)) == doctest::Approx(nb[i].total).epsilon(1e-9));
      if (i > 0) CHECK(nb[i].total <= nb[i - 1].total + 1e-12);  // non-increasing
    }
    // distinct word sequences
    for (size_t i = 0; i < nb.size(); ++i)
      for (size_t j = i + 1; j < nb.size(); ++j) CHECK(nb[i].words != nb[j].words);
  }
}

TEST_CASE("beam widening never lowers the best score") {
  Rng rng(17);
  for (int inst = 0; inst < 8; ++inst) {
    Lexicon lex = toy_lexicon({1, 2, 1});
    HmmDecodingGraph graph = HmmDecodingGraph::build(lex, 2, 0.5, uniform_log_priors(8));
    Tensor scores = random_scores(8, 8, rng);
    NGramModel lm = random_bigram(lex, rng);
    double prev = -HUGE_VAL;
    for (double beam : {1.0, 2.0, 4.0, 8.0, HUGE_VAL}) {
      double score;
      try {
        score = viterbi_decode(graph, scores, lm, beam, 2.0, 0.0).total;
      } catch (const PruningFailure&) {
        continue;  // a narrow beam may kill every completion; that is reported
      }
      CHECK(score >= prev - 1e-9);
      prev = score;
    }
  }
}

TEST_CASE("uniform acoustic scores decode to the most probable fitting word sequence") {
  // self-loop 0.5 makes every T-frame path carry identical acoustic and
  // transition mass, so only the LM differentiates
  Lexicon lex = toy_lexicon({1, 2});  // w0: 1 state, w1: 2 states
  HmmDecodingGraph graph = HmmDecodingGraph::build(lex, 1, 0.5, uniform_log_priors(3));
  Tensor scores({3, 3});
  scores.fill(0.25f);
  Rng rng(23);
  NGramModel lm = random_bigram(lex, rng);

  // enumerate word sequences that fit 3 frames
  std::vector<std::vector<std::string>> fitting = {
      {"w0"}, {"w1"}, {"w0", "w0"}, {"w0", "w1"}, {"w1", "w0"}, {"w0", "w0", "w0"}};
  double best_lp = -HUGE_VAL;
  std::vector<std::string> best_seq;
  for (const auto& seq : fitting) {
    double lp = sentence_logp10(lm, seq) * M_LN10;
    if (lp > best_lp) {
      best_lp = lp;
      best_seq = seq;
    }
  }
  DecodeResult r = viterbi_decode(graph, scores, lm, HUGE_VAL, 1.0, 0.0);
  CHECK(r.words == best_seq);
  CHECK(r.lm == doctest::Approx(best_lp).epsilon(1e-9));
}

TEST_CASE("zero lm weight with single-state words is per-frame argmax after collapse") {
  Lexicon lex = toy_lexicon({1, 1, 1});
  HmmDecodingGraph graph = HmmDecodingGraph::build(lex, 1, 0.5, uniform_log_priors(3));
  Rng rng(29);
  Tensor scores = random_scores(7, 3, rng);
  NGramModel lm = random_bigram(lex, rng);
  DecodeResult r = viterbi_decode(graph, scores, lm, HUGE_VAL, 0.0, 0.0);

  std::vector<std::string> collapsed;
  for (int t = 0; t < 7; ++t) {
    int best = 0;
    for (int s = 1; s < 3; ++s)
      if (scores.at(t, s) > scores.at(t, best)) best = s;
    CHECK(r.states[size_t(t)] == best);
    if (collapsed.empty() || collapsed.back() != lex.words[size_t(best)])
      collapsed.push_back(lex.words[size_t(best)]);
  }
  CHECK(r.words == collapsed);
}

TEST_CASE("uniform priors leave decode output unchanged") {
  Rng rng(31);
  Lexicon lex = toy_lexicon({1, 2});
  HmmDecodingGraph graph = HmmDecodingGraph::build(lex, 2, 0.5, uniform_log_priors(6));
  NGramModel lm = random_bigram(lex, rng);
  Tensor post({6, 6});
  for (int t = 0; t < 6; ++t) {
    double z = 0.0;
    for (int s = 0; s < 6; ++s) z += std::exp(double(post.at(t, s) = float(rng.normal())));
    for (int s = 0; s < 6; ++s) post.at(t, s) = float(double(post.at(t, s)) - std::log(z));
  }
  Tensor subtracted = hybrid_acoustic_scores(post, uniform_log_priors(6));
  DecodeResult a = viterbi_decode(graph, post, lm, HUGE_VAL, 1.5, 0.0);
  DecodeResult b = viterbi_decode(graph, subtracted, lm, HUGE_VAL, 1.5, 0.0);
  CHECK(a.words == b.words);
  CHECK(a.states == b.states);
}

TEST_CASE("pruning failures are reported") {
  Lexicon lex = toy_lexicon({2});  // one word, 4 states with 2 states/phone
  HmmDecodingGraph graph = HmmDecodingGraph::build(lex, 2, 0.5, uniform_log_priors(4));
  Tensor scores({2, 4});  // too few frames to traverse 4 states
  Rng rng(37);
  NGramModel lm = random_bigram(lex, rng);
  CHECK_THROWS_AS(viterbi_decode(graph, scores, lm, HUGE_VAL, 1.0, 0.0), PruningFailure);
}

TEST_CASE("forced alignment basics and enumeration oracle") {
  // 1 word with states a -> b, 2 frames: the alignment is forced
  Lexicon lex = toy_lexicon({1});
  HmmDecodingGraph graph = HmmDecodingGraph::build(lex, 2, 0.5, uniform_log_priors(2));
  Tensor scores({2, 2});
  scores.fill(0.0f);
  auto path = forced_align(graph, scores, {"w0"});
  CHECK(path == std::vector<int>{0, 1});

  Tensor one({1, 2});
  CHECK_THROWS_AS(forced_align(graph, one, {"w0"}), Error);  // fewer frames than states

  // brute-force constrained enumeration on a random case
  Rng rng(41);
  Lexicon lex2 = toy_lexicon({1, 1});
  HmmDecodingGraph g2 = HmmDecodingGraph::build(lex2, 2, 0.6, uniform_log_priors(4));
  const int T = 7;
  Tensor s2 = random_scores(T, 4, rng);
  std::vector<std::string> transcript = {"w0", "w1"};
  std::vector<int> flat;
  for (const auto& w : transcript)
    for (int s : g2.word_states[size_t(lex2.find(w))]) flat.push_back(s);

  double best = -HUGE_VAL;
  std::vector<int> best_path;
  // enumerate all monotone position paths over T frames
  std::vector<int> pos(size_t(T), 0);
  auto rec = [&](auto&& self, int t, int j, double score, std::vector<int>& acc) -> void {
    acc.push_back(flat[size_t(j)]);
    double s = score + double(s2.at(t, flat[size_t(j)]));
    if (t == T - 1) {
      if (j == int(flat.size()) - 1 && s > best) {
        best = s;
        best_path = acc;
      }
    } else {
      self(self, t + 1, j, s + g2.loop_lp(), acc);
      if (j + 1 < int(flat.size())) self(self, t + 1, j + 1, s + g2.next_lp(), acc);
    }
    acc.pop_back();
  };
  std::vector<int> acc;
  rec(rec, 0, 0, 0.0, acc);
  (void)pos;

  auto got = forced_align(g2, s2, transcript);
  CHECK(got == best_path);
}

TEST_CASE("realigning with a model trained on its own alignments is near a fixed point") {
  GeneratorSpec spec;
  spec.seed = 43;
  spec.vocab = 4;
  spec.phones_per_word_max = 1;
  spec.separability = 4.0;
  spec.feature_dim = 10;
  spec.speaker_dim = 0;
  spec.utterances = 30;
  Generator gen(spec);
  Corpus train = gen.generate_corpus(0, 24);
  Corpus heldout = gen.generate_corpus(24, 6);

  DnnConfig cfg;
  cfg.feature_dim = 10;
  cfg.splice_left = 1;
  cfg.splice_right = 1;
  cfg.hidden_layers = 2;
  cfg.hidden_units = 32;
  cfg.maxout_group = 2;
  cfg.output_states = gen.num_states;
  cfg.seed = 9;
  DnnModel model(cfg);
  TrainPlan plan;
  plan.epochs = 5;
  plan.minibatch = 64;
  plan.learning_rate = 0.3;
  plan.seed = 13;
  train_cross_entropy(model, train, heldout, plan);

  std::vector<std::vector<int>> aligns;
  for (const auto& u : train.utts) aligns.push_back(u.alignment);
  auto priors = estimate_log_priors(aligns, gen.num_states);
  HmmDecodingGraph graph = HmmDecodingGraph::build(gen.lexicon, spec.states_per_phone, spec.self_loop, priors);

  int64_t changed = 0, total = 0;
  for (const auto& u : train.utts) {
    Tensor lp = model.log_posteriors(u.feats);
    Tensor sc = hybrid_acoustic_scores(lp, priors);
    auto re = forced_align(graph, sc, u.words);
    REQUIRE(re.size() == u.alignment.size());  // same length and label alphabet
    for (size_t t = 0; t < re.size(); ++t) {
      CHECK(re[t] >= 0);
      CHECK(re[t] < gen.num_states);
      changed += re[t] != u.alignment[t];
      ++total;
    }
  }
  CHECK(double(changed) / double(total) < 0.20);
}

TEST_CASE("nbest file format round trips") {
  DecodeResult r1;
  r1.words = {"w0", "w1"};
  r1.total = -12.5;
  r1.acoustic = -10.0;
  r1.lm = -2.5;
  DecodeResult r2 = r1;
  r2.words = {"w1"};
  r2.total = -13.25;
  std::ostringstream os;
  write_nbest(os, "u0001", {r1, r2});
  std::istringstream is(os.str());
  auto lines = read_nbest(is);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0].utt_id == "u0001");
  CHECK(lines[0].rank == 1);
  CHECK(lines[0].words == r1.words);
  CHECK(lines[1].total == doctest::Approx(-13.25));
  std::istringstream bad("u1 1 -1.0 -1.0 -1.0 3 only two\n");
  CHECK_THROWS_AS(read_nbest(bad), Error);
}
