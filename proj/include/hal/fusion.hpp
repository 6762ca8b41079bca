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

#ifndef HAL_FUSION_HPP_
#define HAL_FUSION_HPP_

#include <map>
#include <string>
#include <vector>

#include "hal/corpus.hpp"
#include "hal/tensor.hpp"

namespace hal {

struct FusionSpec {
  std::vector<double> weights;

  void validate(size_t models) const {
    require(weights.size() == models, "fusion spec has ", weights.size(), " weights for ", models, " models");
    double sum = 0.0;
    for (double w : weights) {
      require(w >= 0.0, "fusion weights must be non-negative");
      sum += w;
    }
    require(std::abs(sum - 1.0) < 1e-9, "fusion weights must sum to 1, got ", sum);
  }

  static FusionSpec uniform(size_t models) {
    FusionSpec s;
    s.weights.assign(models, 1.0 / double(models));
    return s;
  }
};

// Frame-level score fusion: weighted sum of log posteriors (a geometric mean
// of the posterior distributions), renormalized per row in the log domain.
inline Tensor fuse_frame_scores(const std::vector<const Tensor*>& log_posteriors, const FusionSpec& spec) {
  require(!log_posteriors.empty(), "nothing to fuse");
  spec.validate(log_posteriors.size());
  const Tensor& first = *log_posteriors[0];
  for (const Tensor* m : log_posteriors)
    require(m->shape() == first.shape(), "fusion shape mismatch: ", shape_str(first.shape()), " vs ",
            shape_str(m->shape()));
  Tensor fused({first.rows(), first.cols()});
  std::vector<double> row(size_t(first.cols()));
  for (int t = 0; t < first.rows(); ++t) {
    for (int s = 0; s < first.cols(); ++s) {
      double acc = 0.0;
      for (size_t m = 0; m < log_posteriors.size(); ++m)
        acc += spec.weights[m] * double(log_posteriors[m]->at(t, s));
      row[size_t(s)] = acc;
    }
    double m = -HUGE_VAL;
    for (double v : row) m = std::max(m, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - m);
    const double lse = m + std::log(z);
    for (int s = 0; s < first.cols(); ++s) fused.at(t, s) = float(row[size_t(s)] - lse);
  }
  return fused;
}

// ---------------------------------------------------------------------------
// Word error rate via minimum edit distance with unit costs. Ties prefer the
// diagonal (substitution over an insertion plus deletion), then deletion.
// ---------------------------------------------------------------------------

struct WerReport {
  int64_t substitutions = 0, insertions = 0, deletions = 0, ref_len = 0;

  int64_t errors() const { return substitutions + insertions + deletions; }
  double wer() const { return ref_len > 0 ? double(errors()) / double(ref_len) : 0.0; }
  double percent() const { return 100.0 * wer(); }

  WerReport& operator+=(const WerReport& o) {
    substitutions += o.substitutions;
    insertions += o.insertions;
    deletions += o.deletions;
    ref_len += o.ref_len;
    return *this;
  }
};

inline WerReport align_wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  const size_t R = ref.size(), H = hyp.size();
  std::vector<std::vector<int>> d(R + 1, std::vector<int>(H + 1, 0));
  for (size_t i = 0; i <= R; ++i) d[i][0] = int(i);
  for (size_t j = 0; j <= H; ++j) d[0][j] = int(j);
  for (size_t i = 1; i <= R; ++i)
    for (size_t j = 1; j <= H; ++j) {
      const int sub = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      const int del = d[i - 1][j] + 1;
      const int ins = d[i][j - 1] + 1;
      d[i][j] = std::min({sub, del, ins});
    }
  WerReport r;
  r.ref_len = int64_t(R);
  size_t i = R, j = H;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++r.substitutions;
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++r.deletions;
      --i;
    } else {
      ++r.insertions;
      --j;
    }
  }
  return r;
}

struct WerResult {
  WerReport total;
  std::map<std::string, WerReport> per_utterance;
};

inline WerResult compute_wer(const std::vector<TrnEntry>& ref, const std::vector<TrnEntry>& hyp) {
  std::map<std::string, const TrnEntry*> hyp_by_id;
  for (const auto& h : hyp) hyp_by_id[h.id] = &h;
  WerResult out;
  std::string missing;
  for (const auto& r : ref) {
    auto it = hyp_by_id.find(r.id);
    if (it == hyp_by_id.end()) {
      missing += missing.empty() ? r.id : (", " + r.id);
      continue;
    }
    WerReport rep = align_wer(r.words, it->second->words);
    out.per_utterance[r.id] = rep;
    out.total += rep;
  }
  require(missing.empty(), "hypothesis is missing utterances: ", missing);
  return out;
}

}  // namespace hal

#endif  // HAL_FUSION_HPP_
