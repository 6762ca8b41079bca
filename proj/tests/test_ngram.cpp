#include <sstream>

#include "doctest.h"
#include "hal/ngram.hpp"
#include "hal/synth.hpp"

using namespace hal;

namespace {

std::vector<std::vector<std::string>> fixture_corpus() {
  // "a b" x3, "a c" x1 -- small enough to apply the smoothing formulas by hand
  return {{"a", "b"}, {"a", "b"}, {"a", "b"}, {"a", "c"}};
}

double cond_p(const NGramModel& m, const std::vector<std::string>& ctx, const std::string& w) {
  std::vector<int> ids;
  for (const auto& c : ctx) ids.push_back(c == "<s>" ? Vocab::kBos : m.vocab.find(c));
  int wid = w == "</s>" ? Vocab::kEos : m.vocab.find(w);
  return std::exp(m.cond_lognat(ids, wid));
}

std::vector<std::vector<std::string>> generator_text(uint64_t seed, int vocab, int sentences) {
  GeneratorSpec spec;
  spec.seed = seed;
  spec.vocab = vocab;
  Generator gen(spec);
  std::vector<std::vector<std::string>> out;
  for (const auto& sent : gen.generate_lm_text(sentences)) {
    std::vector<std::string> s;
    for (int w : sent) s.push_back(gen.lexicon.words[size_t(w)]);
    out.push_back(std::move(s));
  }
  return out;
}

// All contexts a model stores, plus the empty context.
std::vector<std::vector<int>> all_contexts(const NGramModel& m) {
  std::vector<std::vector<int>> out;
  out.push_back({});
  for (int k = 1; k < m.order; ++k)
    for (const auto& [gram, e] : m.tables[size_t(k - 1)]) {
      (void)e;
      out.push_back(gram);
    }
  return out;
}

void check_normalization(const NGramModel& m, double tol = 1e-6) {
  for (const auto& ctx : all_contexts(m)) CHECK(std::abs(context_prob_sum(m, ctx) - 1.0) < tol);
}

}  // namespace

TEST_CASE("bigram counting with boundary tokens") {
  auto trie = count_ngrams({{"a", "b", "a"}}, 2);
  auto id = [&](const std::string& w) { return trie.vocab.find(w); };
  CHECK(trie.get({Vocab::kBos, id("a")}) == 1);
  CHECK(trie.get({id("a"), id("b")}) == 1);
  CHECK(trie.get({id("b"), id("a")}) == 1);
  CHECK(trie.get({id("a"), Vocab::kEos}) == 1);
  CHECK(trie.counts[1].size() == 4);

  int64_t unigram_total = 0;
  for (const auto& [g, c] : trie.counts[0]) unigram_total += c;
  CHECK(unigram_total == 5);  // 3 words + two boundary tokens

  auto doubled = count_ngrams({{"a", "b", "a"}, {"a", "b", "a"}}, 2);
  for (const auto& [g, c] : trie.counts[1]) CHECK(doubled.get(g) == 2 * c);

  CHECK_THROWS_AS(count_ngrams({}, 2), Error);
}

TEST_CASE("count trie marginal consistency") {
  auto text = generator_text(31, 5, 200);
  auto trie = count_ngrams(text, 3);
  for (int k = 1; k < 3; ++k)
    for (const auto& [gram, c] : trie.counts[size_t(k - 1)]) {
      int64_t ext = 0;
      for (auto it = trie.counts[size_t(k)].lower_bound(gram); it != trie.counts[size_t(k)].end(); ++it) {
        if (!std::equal(gram.begin(), gram.end(), it->first.begin())) break;
        ext += it->second;
      }
      CHECK(ext <= c);  // extensions can only lose sentence-final mass
    }
}

TEST_CASE("modified KN bigram matches the hand-worked fixture to 1e-9") {
  auto trie = count_ngrams(fixture_corpus(), 2);
  NGramModel m = estimate_modified_kn(trie);
  CHECK(m.notes.size() == 2);  // both orders fall back to the flat 0.5 discount

  // unigram continuation counts: a,b,c:1 each, </s>:2, <unk> floored to 1;
  // with D=0.5: P(w) = (c-0.5)/6 + (5/12)/5
  const double tol = 1e-9;
  CHECK(std::abs(cond_p(m, {}, "a") - 1.0 / 6) < tol);
  CHECK(std::abs(cond_p(m, {}, "b") - 1.0 / 6) < tol);
  CHECK(std::abs(cond_p(m, {}, "c") - 1.0 / 6) < tol);
  CHECK(std::abs(cond_p(m, {}, "<unk>") - 1.0 / 6) < tol);
  CHECK(std::abs(cond_p(m, {}, "</s>") - 1.0 / 3) < tol);

  // bigram level, D=0.5: interpolated probabilities
  CHECK(std::abs(cond_p(m, {"<s>"}, "a") - 43.0 / 48) < tol);
  CHECK(std::abs(cond_p(m, {"a"}, "b") - 2.0 / 3) < tol);
  CHECK(std::abs(cond_p(m, {"a"}, "c") - 1.0 / 6) < tol);
  CHECK(std::abs(cond_p(m, {"b"}, "</s>") - 8.0 / 9) < tol);
  CHECK(std::abs(cond_p(m, {"c"}, "</s>") - 2.0 / 3) < tol);

  // backoff weights from leftover mass
  auto bow = [&](const std::string& w) {
    int id = w == "<s>" ? Vocab::kBos : m.vocab.find(w);
    return std::exp(m.tables[0].at({id}).bow);
  };
  CHECK(std::abs(bow("<s>") - 1.0 / 8) < tol);
  CHECK(std::abs(bow("a") - 1.0 / 4) < tol);
  CHECK(std::abs(bow("b") - 1.0 / 6) < tol);
  CHECK(std::abs(bow("c") - 1.0 / 2) < tol);

  // unseen words back off exactly: P(z|a) = bow(a) * P(z)
  CHECK(std::abs(cond_p(m, {"a"}, "</s>") - 0.25 * (1.0 / 3)) < 1e-12);
  CHECK(std::abs(cond_p(m, {"a"}, "a") - 0.25 * (1.0 / 6)) < 1e-12);

  check_normalization(m);
}

TEST_CASE("KN models with rich count statistics use estimated discounts and normalize") {
  // long-tailed vocabulary so every order has words of count 1, 2 and 3
  Rng rng(5);
  std::vector<double> zipf(300);
  double tot = 0.0;
  for (size_t i = 0; i < zipf.size(); ++i) tot += (zipf[i] = 1.0 / std::pow(double(i + 1), 1.3));
  for (auto& x : zipf) x /= tot;
  std::vector<std::vector<std::string>> text;
  for (int s = 0; s < 300; ++s) {
    std::vector<std::string> sent;
    int len = 6 + int(rng.below(7));
    for (int i = 0; i < len; ++i) sent.push_back(str_cat("z", rng.categorical(zipf)));
    text.push_back(std::move(sent));
  }
  auto trie = count_ngrams(text, 4);
  NGramModel m = estimate_modified_kn(trie);
  CHECK(m.notes.empty());  // every order had n1,n2,n3 > 0
  check_normalization(m);
}

TEST_CASE("perplexity of a uniform unigram model equals the vocabulary size") {
  // hand-written unigram ARPA: three events, each 10^-log10(3)
  std::istringstream arpa(
      "\\data\\\n"
      "ngram 1=3\n"
      "\n"
      "\\1-grams:\n"
      "-0.4771213\ta\n"
      "-0.4771213\tb\n"
      "-0.4771213\t</s>\n"
      "\n"
      "\\end\\\n");
  NGramModel m = arpa_read(arpa);
  CHECK(m.order == 1);
  double ppl = perplexity(m, {{"a", "b", "a"}, {"b"}});
  CHECK(ppl == doctest::Approx(3.0).epsilon(1e-5));
}

TEST_CASE("reading a hand-written two-entry unigram arpa yields its probabilities") {
  std::istringstream arpa(
      "\\data\\\n"
      "ngram 1=2\n"
      "\n"
      "\\1-grams:\n"
      "-0.3010300\thello\n"
      "-0.3010300\t</s>\n"
      "\n"
      "\\end\\\n");
  NGramModel m = arpa_read(arpa);
  CHECK(cond_p(m, {}, "hello") == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(cond_p(m, {}, "</s>") == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("perplexity approaches 1 on an endlessly repeated training sentence") {
  double prev = HUGE_VAL;
  for (int reps : {3, 20, 200}) {
    std::vector<std::vector<std::string>> text(size_t(reps), {"a", "b", "c"});
    NGramModel m = estimate_modified_kn(count_ngrams(text, 2));
    double ppl = perplexity(m, {{"a", "b", "c"}});
    CHECK(ppl < prev);
    prev = ppl;
  }
  CHECK(prev < 1.05);
}

TEST_CASE("tiny-corpus perplexity matches the direct probability product") {
  auto trie = count_ngrams(fixture_corpus(), 2);
  NGramModel m = estimate_modified_kn(trie);
  // oracle: ppl = product^(-1/N) with hand-assembled conditional probabilities
  const double product = (43.0 / 48) * (2.0 / 3) * (8.0 / 9);  // "a b": P(a|<s>) P(b|a) P(</s>|b)
  const double oracle = std::pow(product, -1.0 / 3.0);
  CHECK(perplexity(m, {{"a", "b"}}) == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("EM interpolation: identical components and dominant components") {
  // same-vocabulary corpora: a pinning sentence fixes the word id order
  std::vector<std::string> pin = {"a", "b", "c", "d"};
  std::vector<std::vector<std::string>> text_a = {pin, {"a", "b"}, {"a", "b"}, {"c", "a", "b"}, {"a", "b"}};
  std::vector<std::vector<std::string>> text_b = {pin, {"d", "c"}, {"c", "d"}, {"d", "d", "c"}, {"d", "c"}};
  NGramModel ma = estimate_modified_kn(count_ngrams(text_a, 2));
  NGramModel mb = estimate_modified_kn(count_ngrams(text_b, 2));
  std::vector<std::vector<std::string>> heldout = {{"a", "b"}, {"a", "b", "a", "b"}, {"c", "a", "b"}};

  // identical models: any simplex point scores the same; EM stays valid
  auto same = interpolate({&ma, &ma}, heldout);
  double wsum = 0.0;
  for (double w : same.mixture.weights) {
    CHECK(w >= 0.0);
    wsum += w;
  }
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-9));
  MixtureLm corner{{&ma, &ma}, {1.0, 0.0}};
  CHECK(same.mixture.perplexity(heldout) == doctest::Approx(corner.perplexity(heldout)).epsilon(1e-9));

  // the component that generated the held-out data dominates
  auto res = interpolate({&ma, &mb}, heldout);
  CHECK(res.mixture.weights[0] > 0.9);

  // EM log-likelihood is monotone per iteration
  for (size_t i = 1; i < res.heldout_loglike.size(); ++i)
    CHECK(res.heldout_loglike[i] >= res.heldout_loglike[i - 1] - 1e-9);

  // mixture optimality: no worse than the best single component
  double mix_ppl = res.mixture.perplexity(heldout);
  CHECK(mix_ppl <= std::min(perplexity(ma, heldout), perplexity(mb, heldout)) + 1e-9);

  CHECK_THROWS_AS(interpolate({&ma, &mb}, {}), Error);
  CHECK_THROWS_AS(interpolate({&ma}, heldout), Error);
}

TEST_CASE("entropy pruning: thresholds zero and infinity") {
  auto text = generator_text(53, 6, 300);
  NGramModel m = estimate_modified_kn(count_ngrams(text, 3));

  NGramModel same = entropy_prune(m, 0.0);
  CHECK(same.num_entries() == m.num_entries());  // no strictly negative costs

  NGramModel bare = entropy_prune(m, HUGE_VAL);
  CHECK(bare.tables[0].size() == m.tables[0].size());  // unigrams never pruned
  CHECK(bare.tables[1].empty());
  CHECK(bare.tables[2].empty());
  check_normalization(bare);
}

TEST_CASE("entropy pruning matches the brute-force criterion on a small bigram model") {
  auto trie = count_ngrams({{"a", "b"}, {"a", "b"}, {"a", "c"}, {"b", "c", "a"}, {"c", "a"}}, 2);
  NGramModel m = estimate_modified_kn(trie);
  REQUIRE(m.num_entries() <= 50);

  // oracle: remove the entry, recompute the context bow from leftover mass,
  // and integrate the full-vocabulary relative entropy directly
  auto oracle_cost = [&](const std::vector<int>& gram) {
    NGramModel pruned = m;
    pruned.tables[1].erase(gram);
    std::vector<int> h(gram.begin(), gram.end() - 1);
    double num = 1.0, den = 1.0;
    for (const auto& [g, e] : pruned.tables[1])
      if (g[0] == h[0]) {
        num -= std::exp(e.logp);
        den -= std::exp(pruned.cond_lognat({}, g.back()));
      }
    pruned.tables[0].at(h).bow = (num < 1e-12 || den < 1e-12) ? 0.0 : std::log(num) - std::log(den);
    double kl = 0.0;
    for (int w : m.predicted_vocab()) {
      double p = std::exp(m.cond_lognat(h, w));
      double q = std::exp(pruned.cond_lognat(h, w));
      kl += p * std::log(p / q);
    }
    return m.context_marginal(h) * kl;
  };

  std::vector<std::vector<int>> candidates;
  for (const auto& [gram, e] : m.tables[1]) {
    (void)e;
    candidates.push_back(gram);
  }
  for (const auto& gram : candidates)
    CHECK(prune_cost(m, gram) == doctest::Approx(oracle_cost(gram)).epsilon(1e-9));

  for (double threshold : {1e-6, 1e-4, 1e-3, 1e-2}) {
    NGramModel pruned = entropy_prune(m, threshold);
    for (const auto& gram : candidates) {
      const bool kept = pruned.tables[1].count(gram) > 0;
      CHECK(kept == (oracle_cost(gram) >= threshold));
    }
    check_normalization(pruned);
  }
}

TEST_CASE("pruned perplexity degrades monotonically toward the unpruned model") {
  // training-matched data: the training text itself; pruning only removes fit
  auto train = generator_text(59, 6, 600);
  NGramModel m = estimate_modified_kn(count_ngrams(train, 3));
  const double base = perplexity(m, train);
  double increase_hi, increase_lo;
  {
    NGramModel p = entropy_prune(m, 1e-3);
    check_normalization(p);
    increase_hi = perplexity(p, train) - base;
  }
  {
    NGramModel p = entropy_prune(m, 1e-6);
    check_normalization(p);
    increase_lo = perplexity(p, train) - base;
  }
  CHECK(increase_hi >= -1e-9);
  CHECK(increase_lo >= -1e-9);
  CHECK(increase_lo <= increase_hi + 1e-9);
}

TEST_CASE("arpa round trip within 1e-6 per entry") {
  auto text = generator_text(61, 7, 400);
  NGramModel m = estimate_modified_kn(count_ngrams(text, 3));
  std::ostringstream out;
  arpa_write(m, out);
  std::istringstream in(out.str());
  NGramModel back = arpa_read(in);
  REQUIRE(back.order == m.order);
  for (int k = 1; k <= m.order; ++k) {
    REQUIRE(back.tables[size_t(k - 1)].size() == m.tables[size_t(k - 1)].size());
    for (const auto& [gram, e] : m.tables[size_t(k - 1)]) {
      // map ids through the word strings; the reader may assign new ids
      std::vector<int> mapped;
      for (int id : gram) mapped.push_back(back.vocab.find(m.vocab.name(id)));
      REQUIRE(back.tables[size_t(k - 1)].count(mapped) == 1);
      const auto& b = back.tables[size_t(k - 1)].at(mapped);
      CHECK(std::abs(b.logp - e.logp) / M_LN10 < 1e-6);
      if (k < m.order) CHECK(std::abs(b.bow - e.bow) / M_LN10 < 1e-6);
    }
  }
  check_normalization(back);
}

TEST_CASE("arpa parser rejects malformed input with line numbers") {
  std::istringstream bad_header("\\badness\\\n");
  CHECK_THROWS_WITH_AS(arpa_read(bad_header), doctest::Contains("\\data\\"), Error);

  std::istringstream count_mismatch(
      "\\data\\\n"
      "ngram 1=3\n"
      "\n"
      "\\1-grams:\n"
      "-0.5\ta\n"
      "-0.5\t</s>\n"
      "\n"
      "\\end\\\n");
  CHECK_THROWS_WITH_AS(arpa_read(count_mismatch), doctest::Contains("declared"), Error);

  std::istringstream junk_line(
      "\\data\\\n"
      "ngram 1=1\n"
      "\n"
      "\\1-grams:\n"
      "not-a-number a extra stuff here\n"
      "\n"
      "\\end\\\n");
  CHECK_THROWS_AS(arpa_read(junk_line), Error);
}

TEST_CASE("exact bigram from a transition matrix normalizes and scores") {
  GeneratorSpec spec;
  spec.seed = 71;
  spec.vocab = 5;
  Generator gen(spec);
  NGramModel m = bigram_from_matrix(gen.lexicon.words, gen.bigram);
  check_normalization(m);
  // conditional equals the matrix row
  int w2 = m.vocab.find(gen.lexicon.words[2]);
  int w0 = m.vocab.find(gen.lexicon.words[0]);
  CHECK(std::exp(m.cond_lognat({w2}, w0)) == doctest::Approx(gen.bigram[2][0]).epsilon(1e-12));
}
