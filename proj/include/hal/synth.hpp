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

#ifndef HAL_SYNTH_HPP_
#define HAL_SYNTH_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "hal/config.hpp"
#include "hal/corpus.hpp"

namespace hal {

// Reference sampler: a word bigram skeleton drives an HMM whose states emit
// from diagonal GMMs. The generating state sequence is kept as the alignment,
// so decoding, alignment and LM estimation all have exact oracles.
struct GeneratorSpec {
  uint64_t seed = 7;
  int vocab = 6;
  int phones_per_word_max = 2;  // word i gets 1 + (i % max) phones, all distinct
  int states_per_phone = 3;
  int gmm_components = 2;
  int feature_dim = 12;   // acoustic dims; GMM means live here
  int speaker_dim = 8;    // constant per-speaker dims appended to every frame
  int num_speakers = 4;
  int utterances = 80;
  int min_words = 3, max_words = 8;
  double self_loop = 0.5;       // HMM state self-loop probability
  double separability = 2.0;    // bump amplitude for GMM means, in sigmas
  int mean_bumps = 2;           // signed triangular bumps per state mean,
                                // centered on the integer feature lattice;
                                // 0 falls back to independent lattice draws
  int smooth_width = 2;         // triangular smoothing of component offsets
  double lm_top2_mass = 0.75;   // bigram skeleton mass on two preferred successors
  double stop_prob = 0.18;      // end-of-sentence probability per step
  // Long-context mode: an utterance-level coin permutes state means pairwise
  // and is revealed only by a marker offset on the first frame.
  bool long_context = false;
  double marker_scale = 4.0;

  void validate() const {
    require(vocab >= 1 && states_per_phone >= 1 && gmm_components >= 1, "bad generator inventory");
    require(feature_dim >= 1 && speaker_dim >= 0 && num_speakers >= 1, "bad generator feature config");
    require(utterances >= 1 && min_words >= 1 && max_words >= min_words, "bad generator utterance config");
    require(self_loop > 0.0 && self_loop < 1.0, "self_loop must lie in (0,1)");
    require(stop_prob > 0.0 && stop_prob < 1.0, "stop_prob must lie in (0,1)");
    require(lm_top2_mass > 0.0 && lm_top2_mass < 1.0, "lm_top2_mass must lie in (0,1)");
  }

  int frame_dim() const { return feature_dim + speaker_dim; }
};

// Deterministic derived structures: lexicon, state GMM means, bigram rows.
struct Generator {
  GeneratorSpec spec;
  Lexicon lexicon;
  std::vector<std::string> phone_names;
  int num_states = 0;
  std::vector<std::vector<float>> state_means;        // [state][feature_dim]
  std::vector<std::vector<std::vector<float>>> comp_offsets;  // [state][component][dim]
  std::vector<std::vector<float>> speaker_vecs;       // [speaker][speaker_dim]
  // bigram skeleton: rows are contexts (vocab words then <s>),
  // columns are successors (vocab words then </s>)
  std::vector<std::vector<double>> bigram;

  explicit Generator(const GeneratorSpec& s) : spec(s) {
    spec.validate();
    Rng rng(spec.seed);

    int phone = 0;
    for (int w = 0; w < spec.vocab; ++w) {
      lexicon.words.push_back(str_cat("w", w < 10 ? "0" : "", w));
      int count = 1 + (spec.phones_per_word_max > 1 ? w % spec.phones_per_word_max : 0);
      std::vector<int> ph;
      for (int i = 0; i < count; ++i) ph.push_back(phone++);
      lexicon.phones.push_back(std::move(ph));
    }
    lexicon.num_phones = phone;
    for (int p = 0; p < phone; ++p) phone_names.push_back(str_cat("p", p < 10 ? "0" : "", p));
    num_states = phone * spec.states_per_phone;

    for (int s = 0; s < num_states; ++s) {
      // resample until the new mean is distinguishable from every earlier one
      std::vector<float> mean;
      for (int attempt = 0; attempt < 200; ++attempt) {
        mean = draw_state_mean(rng);
        bool distinct = true;
        for (const auto& other : state_means) {
          float gap = 0.0f;
          for (int d = 0; d < spec.feature_dim; ++d) gap = std::max(gap, std::abs(mean[size_t(d)] - other[size_t(d)]));
          if (gap < 0.6f * float(spec.separability)) distinct = false;
        }
        if (distinct) break;
      }
      state_means.push_back(std::move(mean));
      std::vector<std::vector<float>> comps;
      for (int k = 0; k < spec.gmm_components; ++k) {
        std::vector<float> off(size_t(spec.feature_dim));
        for (auto& o : off) o = float(rng.uniform(-0.25, 0.25) * spec.separability);
        if (spec.smooth_width > 0) off = smooth_means(off, spec.smooth_width);
        comps.push_back(std::move(off));
      }
      comp_offsets.push_back(std::move(comps));
    }

    for (int sp = 0; sp < spec.num_speakers; ++sp) {
      std::vector<float> v(size_t(spec.speaker_dim));
      for (auto& x : v) x = float(rng.normal());
      speaker_vecs.push_back(std::move(v));
    }

    // two preferred successors per context get most of the word mass
    const int V = spec.vocab;
    for (int row = 0; row <= V; ++row) {
      std::vector<double> p(size_t(V) + 1, 0.0);
      const double word_mass = 1.0 - spec.stop_prob;
      if (V == 1) {
        p[0] = word_mass;
      } else {
        int a = int(rng.below(uint64_t(V)));
        int b = int(rng.below(uint64_t(V)));
        while (b == a) b = int(rng.below(uint64_t(V)));
        const double rest = word_mass * (1.0 - spec.lm_top2_mass) / double(V - 2 > 0 ? V - 2 : 1);
        for (int w = 0; w < V; ++w) p[size_t(w)] = (w == a || w == b) ? 0.0 : rest;
        p[size_t(a)] = word_mass * spec.lm_top2_mass * 0.6;
        p[size_t(b)] = word_mass * spec.lm_top2_mass * 0.4;
      }
      p[size_t(V)] = spec.stop_prob;  // </s>
      double total = 0.0;
      for (double x : p) total += x;
      for (double& x : p) x /= total;
      bigram.push_back(std::move(p));
    }
  }

  // A state mean is a sum of signed triangular bumps on the integer feature
  // lattice, so the "frequency" axis carries the local shapes convolutional
  // models expect, like formants in a spectral envelope.
  std::vector<float> draw_state_mean(Rng& rng) const {
    std::vector<float> mean(static_cast<size_t>(spec.feature_dim), 0.0f);
    if (spec.mean_bumps <= 0) {
      for (auto& m : mean) m = float(spec.separability * double(int(rng.below(3)) - 1));
      return mean;
    }
    const double half_width = 2.5;
    for (int k = 0; k < spec.mean_bumps; ++k) {
      const int center = int(rng.below(uint64_t(spec.feature_dim)));
      const double amp = rng.below(2) ? spec.separability : -spec.separability;
      for (int d = 0; d < spec.feature_dim; ++d) {
        const double x = std::abs(double(d - center)) / half_width;
        if (x < 1.0) mean[size_t(d)] += float(amp * (1.0 - x));
      }
    }
    return mean;
  }

  // Triangular moving average over the feature axis.
  static std::vector<float> smooth_means(const std::vector<float>& raw, int width) {
    const int D = int(raw.size());
    std::vector<float> out(static_cast<size_t>(D));
    for (int d = 0; d < D; ++d) {
      double acc = 0.0, norm = 0.0;
      for (int k = -width; k <= width; ++k) {
        const int j = d + k;
        if (j < 0 || j >= D) continue;
        const double w = double(width + 1 - std::abs(k));
        acc += w * double(raw[size_t(j)]);
        norm += w;
      }
      out[size_t(d)] = float(acc / norm);
    }
    return out;
  }

  // Word state sequence under the 3-state left-to-right phone topology.
  std::vector<int> word_states(int word) const {
    std::vector<int> out;
    for (int ph : lexicon.phones[size_t(word)])
      for (int k = 0; k < spec.states_per_phone; ++k) out.push_back(ph * spec.states_per_phone + k);
    return out;
  }

  // Pairwise mean permutation for the long-context mode.
  int permuted_state(int s, int mode) const {
    if (!spec.long_context || mode == 0) return s;
    int partner = (s % 2 == 0) ? s + 1 : s - 1;
    return partner < num_states ? partner : s;
  }

  // One pure draw from the skeleton, capped at 100 words.
  std::vector<int> sample_sentence_raw(Rng& rng) const {
    const int V = spec.vocab;
    std::vector<int> words;
    int ctx = V;  // <s>
    while (int(words.size()) < 100) {
      int next = rng.categorical(bigram[size_t(ctx)]);
      if (next == V) break;  // </s>
      words.push_back(next);
      ctx = next;
    }
    return words;
  }

  // Corpus utterances reject lengths outside the configured band.
  std::vector<int> sample_sentence(Rng& rng, int min_words, int max_words) const {
    for (;;) {
      std::vector<int> words = sample_sentence_raw(rng);
      if (int(words.size()) >= min_words && int(words.size()) <= max_words) return words;
    }
  }

  Utterance generate_utterance(int index) const {
    Rng rng = Rng::derive(spec.seed, uint64_t(index));
    Utterance u;
    u.id = str_cat("u", index < 1000 ? "0" : "", index < 100 ? "0" : "", index < 10 ? "0" : "", index);
    u.speaker = index % spec.num_speakers;
    const int mode = spec.long_context ? int(rng.below(2)) : 0;

    std::vector<int> words = sample_sentence(rng, spec.min_words, spec.max_words);
    for (int w : words) u.words.push_back(lexicon.words[size_t(w)]);

    std::vector<float> frames;
    for (int w : words)
      for (int s : word_states(w)) {
        do {
          u.alignment.push_back(s);
          const int es = permuted_state(s, mode);
          int comp = int(rng.below(uint64_t(spec.gmm_components)));
          for (int d = 0; d < spec.feature_dim; ++d)
            frames.push_back(state_means[size_t(es)][size_t(d)] +
                             comp_offsets[size_t(es)][size_t(comp)][size_t(d)] + float(rng.normal()));
          for (int d = 0; d < spec.speaker_dim; ++d)
            frames.push_back(speaker_vecs[size_t(u.speaker)][size_t(d)]);
        } while (rng.uniform() < spec.self_loop);
      }
    if (spec.long_context) {
      // the mode is observable only here
      frames[0] += float(mode == 1 ? spec.marker_scale : -spec.marker_scale);
    }
    const int T = int(u.alignment.size());
    u.feats = Tensor::from({T, spec.frame_dim()}, std::move(frames));
    return u;
  }

  Corpus generate_corpus(int first_index, int count) const {
    Corpus c;
    c.feat_dim = spec.frame_dim();
    c.num_states = num_states;
    for (int i = 0; i < count; ++i) c.utts.push_back(generate_utterance(first_index + i));
    return c;
  }

  // LM training text: pure skeleton draws (empty sentences included), so
  // empirical bigram frequencies converge to the skeleton itself.
  std::vector<std::vector<int>> generate_lm_text(int sentences, uint64_t stream = 1000000) const {
    std::vector<std::vector<int>> out;
    for (int i = 0; i < sentences; ++i) {
      Rng rng = Rng::derive(spec.seed, stream + uint64_t(i));
      out.push_back(sample_sentence_raw(rng));
    }
    return out;
  }
};

// --- on-disk corpus layout ---------------------------------------------------
// dir/meta.cfg, dir/lexicon.txt, dir/feats/<utt>.fmat, dir/alignments.txt,
// dir/ref.trn, dir/lm_text.txt. Splits are contiguous index ranges.

struct CorpusPaths {
  std::string dir;
  std::string meta() const { return dir + "/meta.cfg"; }
  std::string lexicon() const { return dir + "/lexicon.txt"; }
  std::string feats(const std::string& utt) const { return dir + "/feats/" + utt + ".fmat"; }
  std::string alignments(const std::string& split) const { return dir + "/align_" + split + ".txt"; }
  std::string refs(const std::string& split) const { return dir + "/ref_" + split + ".trn"; }
  std::string lm_text() const { return dir + "/lm_text.txt"; }
};

inline void save_split(const CorpusPaths& paths, const std::string& split, const Corpus& corpus) {
  std::filesystem::create_directories(paths.dir + "/feats");
  for (const auto& u : corpus.utts) write_fmat(paths.feats(u.id), u.feats);
  write_alignments(paths.alignments(split), corpus);
  std::vector<TrnEntry> refs;
  for (const auto& u : corpus.utts) refs.push_back({u.id, u.words});
  write_trn(paths.refs(split), refs);
}

inline Corpus load_split(const CorpusPaths& paths, const std::string& split) {
  Config meta = Config::parse_file(paths.meta());
  Corpus c;
  c.feat_dim = int(meta.get_int("frame_dim", 0));
  c.num_states = int(meta.get_int("num_states", 0));
  auto aligns = read_alignments(paths.alignments(split));
  auto refs = read_trn(paths.refs(split));
  for (const auto& r : refs) {
    Utterance u;
    u.id = r.id;
    u.words = r.words;
    u.feats = read_fmat(paths.feats(r.id));
    auto it = aligns.find(r.id);
    require(it != aligns.end(), "no alignment for utterance ", r.id);
    u.alignment = it->second;
    require(int(u.alignment.size()) == u.feats.rows(), "alignment/feature length mismatch for ", r.id);
    c.utts.push_back(std::move(u));
  }
  return c;
}

}  // namespace hal

#endif  // HAL_SYNTH_HPP_
