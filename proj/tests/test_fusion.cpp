#include "doctest.h"
#include "hal/fusion.hpp"

using namespace hal;

namespace {

Tensor log_post(const std::vector<std::vector<double>>& rows) {
  Tensor t({int(rows.size()), int(rows[0].size())});
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < rows[r].size(); ++c) t.at(int(r), int(c)) = float(std::log(rows[r][c]));
  return t;
}

int argmax_row(const Tensor& t, int r) {
  int best = 0;
  for (int c = 1; c < t.cols(); ++c)
    if (t.at(r, c) > t.at(r, best)) best = c;
  return best;
}

// straightforward recursive edit distance, memoized on (i, j)
int oracle_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::map<std::pair<size_t, size_t>, int> memo;
  auto rec = [&](auto&& self, size_t i, size_t j) -> int {
    if (i == a.size()) return int(b.size() - j);
    if (j == b.size()) return int(a.size() - i);
    auto key = std::make_pair(i, j);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    int best = self(self, i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    best = std::min(best, self(self, i + 1, j) + 1);
    best = std::min(best, self(self, i, j + 1) + 1);
    memo[key] = best;
    return best;
  };
  return rec(rec, 0, 0);
}

}  // namespace

TEST_CASE("fusion corner weights recover a component exactly") {
  Tensor m1 = log_post({{0.7, 0.2, 0.1}, {0.3, 0.3, 0.4}});
  Tensor m2 = log_post({{0.1, 0.8, 0.1}, {0.5, 0.25, 0.25}});
  FusionSpec corner{{1.0, 0.0}};
  Tensor fused = fuse_frame_scores({&m1, &m2}, corner);
  for (int64_t i = 0; i < fused.numel(); ++i) CHECK(fused[i] == doctest::Approx(m1[i]).epsilon(1e-6));

  // identical inputs fuse to themselves under any weights
  FusionSpec spec{{0.3, 0.7}};
  Tensor same = fuse_frame_scores({&m1, &m1}, spec);
  for (int64_t i = 0; i < same.numel(); ++i) CHECK(same[i] == doctest::Approx(m1[i]).epsilon(1e-6));
}

TEST_CASE("fused rows renormalize to logsumexp zero") {
  Tensor m1 = log_post({{0.6, 0.3, 0.1}});
  Tensor m2 = log_post({{0.2, 0.5, 0.3}});
  Tensor fused = fuse_frame_scores({&m1, &m2}, FusionSpec::uniform(2));
  CHECK(std::abs(log_sum_exp(fused.data(), 3)) < 1e-6);
}

TEST_CASE("fusion argmax can differ from every component") {
  // both components rank the middle state second; the geometric mean wins it
  Tensor m1 = log_post({{0.5, 0.4, 0.1}});
  Tensor m2 = log_post({{0.1, 0.4, 0.5}});
  Tensor fused = fuse_frame_scores({&m1, &m2}, FusionSpec::uniform(2));
  CHECK(argmax_row(m1, 0) == 0);
  CHECK(argmax_row(m2, 0) == 2);
  CHECK(argmax_row(fused, 0) == 1);
}

TEST_CASE("fusion validates shapes and weights") {
  Tensor m1 = log_post({{0.5, 0.5}});
  Tensor m2 = log_post({{0.2, 0.3, 0.5}});
  CHECK_THROWS_AS(fuse_frame_scores({&m1, &m2}, FusionSpec::uniform(2)), Error);
  FusionSpec bad{{0.4, 0.4}};
  CHECK_THROWS_AS(fuse_frame_scores({&m1, &m1}, bad), Error);
  FusionSpec negative{{1.5, -0.5}};
  CHECK_THROWS_AS(fuse_frame_scores({&m1, &m1}, negative), Error);
}

TEST_CASE("wer on identical, substituted and inserted hypotheses") {
  auto r0 = align_wer({"a", "b", "c"}, {"a", "b", "c"});
  CHECK(r0.errors() == 0);
  CHECK(r0.percent() == doctest::Approx(0.0));

  auto r1 = align_wer({"a", "b", "c"}, {"a", "x", "c"});
  CHECK(r1.substitutions == 1);
  CHECK(r1.insertions == 0);
  CHECK(r1.deletions == 0);
  CHECK(r1.percent() == doctest::Approx(100.0 / 3).epsilon(1e-6));

  auto r2 = align_wer({"a", "b"}, {"a", "x", "b"});
  CHECK(r2.insertions == 1);
  CHECK(r2.substitutions + r2.deletions == 0);
  CHECK(r2.percent() == doctest::Approx(50.0).epsilon(1e-6));
}

TEST_CASE("ties prefer substitutions over insert+delete pairs") {
  // "a b" vs "b a": two substitutions rather than one deletion plus one insertion
  auto r = align_wer({"a", "b"}, {"b", "a"});
  CHECK(r.errors() == 2);
  CHECK(r.substitutions == 2);
  CHECK(r.insertions == 0);
  CHECK(r.deletions == 0);
}

TEST_CASE("wer equals the brute-force edit distance") {
  const std::vector<std::string> alphabet = {"a", "b", "c"};
  // exhaustive over all sequence pairs up to length 4
  std::vector<std::vector<std::string>> seqs = {{}};
  for (int len = 1; len <= 4; ++len) {
    std::vector<std::vector<std::string>> next;
    for (const auto& s : seqs)
      if (int(s.size()) == len - 1)
        for (const auto& w : alphabet) {
          auto t = s;
          t.push_back(w);
          next.push_back(t);
        }
    for (auto& t : next) seqs.push_back(std::move(t));
  }
  int checked = 0;
  for (const auto& a : seqs)
    for (const auto& b : seqs) {
      auto rep = align_wer(a, b);
      CHECK(rep.errors() == oracle_distance(a, b));
      ++checked;
    }
  CHECK(checked == 121 * 121);

  // randomized pairs at lengths 5..8
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    auto draw = [&]() {
      std::vector<std::string> s;
      int len = 5 + int(rng.below(4));
      for (int i = 0; i < len; ++i) s.push_back(alphabet[size_t(rng.below(3))]);
      return s;
    };
    auto a = draw(), b = draw();
    CHECK(align_wer(a, b).errors() == oracle_distance(a, b));
  }
}

TEST_CASE("corpus wer aggregates per utterance and flags missing ids") {
  std::vector<TrnEntry> ref = {{"u1", {"a", "b"}}, {"u2", {"c"}}};
  std::vector<TrnEntry> hyp = {{"u2", {"c"}}, {"u1", {"a", "x"}}};
  WerResult res = compute_wer(ref, hyp);
  CHECK(res.total.ref_len == 3);
  CHECK(res.total.errors() == 1);
  CHECK(res.per_utterance.at("u1").substitutions == 1);
  CHECK(res.per_utterance.at("u2").errors() == 0);

  std::vector<TrnEntry> missing = {{"u1", {"a"}}};
  CHECK_THROWS_WITH_AS(compute_wer(ref, missing), doctest::Contains("u2"), Error);
}
