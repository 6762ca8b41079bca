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

#ifndef HAL_CORPUS_HPP_
#define HAL_CORPUS_HPP_

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hal/tensor.hpp"

namespace hal {

// One synthetic utterance: per-frame features, the generating state
// alignment, and the word transcript.
struct Utterance {
  std::string id;
  Tensor feats;                 // [frames x feat_dim]
  std::vector<int> alignment;   // frame -> HMM state id
  std::vector<std::string> words;
  int speaker = 0;
};

struct Corpus {
  std::vector<Utterance> utts;
  int feat_dim = 0;
  int num_states = 0;

  int64_t total_frames() const {
    int64_t n = 0;
    for (const auto& u : utts) n += u.feats.rows();
    return n;
  }
};

// Word pronunciations, "WORD phone phone ...". Order is significant; the
// decoder enumerates words by lexicon index.
struct Lexicon {
  std::vector<std::string> words;
  std::vector<std::vector<int>> phones;  // per word
  int num_phones = 0;

  int find(const std::string& w) const {
    for (size_t i = 0; i < words.size(); ++i)
      if (words[i] == w) return int(i);
    return -1;
  }
};

// --- feature matrix files ----------------------------------------------------
// Magic "FMAT", u32 rows, u32 cols, little-endian f32 row-major payload.

inline void write_fmat(const std::string& path, const Tensor& m) {
  require(m.ndims() == 2, "feature matrix must be 2-D, got ", shape_str(m.shape()));
  std::ofstream os(path, std::ios::binary);
  require(bool(os), "cannot write feature matrix: ", path);
  os.write("FMAT", 4);
  detail::put_u32(os, uint32_t(m.rows()));
  detail::put_u32(os, uint32_t(m.cols()));
  detail::put_f32(os, m.data(), size_t(m.numel()));
  require(bool(os), "write failed: ", path);
}

inline Tensor read_fmat(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(bool(is), "cannot open feature matrix: ", path);
  char magic[4];
  is.read(magic, 4);
  require(bool(is) && std::memcmp(magic, "FMAT", 4) == 0, "bad FMAT magic in ", path);
  uint32_t rows = detail::get_u32(is), cols = detail::get_u32(is);
  Tensor m({int(rows), int(cols)});
  is.read(reinterpret_cast<char*>(m.data()), std::streamsize(m.numel() * 4));
  require(bool(is), "feature matrix truncated: ", path);
  return m;
}

// --- trn transcripts ---------------------------------------------------------
// "word word ... (utt_id)" per line, the usual scoring format.

struct TrnEntry {
  std::string id;
  std::vector<std::string> words;
};

inline void write_trn(const std::string& path, const std::vector<TrnEntry>& entries) {
  std::ofstream os(path);
  require(bool(os), "cannot write trn: ", path);
  for (const auto& e : entries) {
    for (const auto& w : e.words) os << w << " ";
    os << "(" << e.id << ")\n";
  }
}

inline std::vector<TrnEntry> read_trn(const std::string& path) {
  std::ifstream is(path);
  require(bool(is), "cannot open trn: ", path);
  std::vector<TrnEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    std::string last = toks.back();
    require(last.size() >= 3 && last.front() == '(' && last.back() == ')', path, ":", lineno,
            ": trn line must end with (utt_id)");
    TrnEntry e;
    e.id = last.substr(1, last.size() - 2);
    e.words.assign(toks.begin(), toks.end() - 1);
    out.push_back(std::move(e));
  }
  return out;
}

// --- state alignments --------------------------------------------------------
// "utt_id s0 s1 s2 ..." per line.

inline void write_alignments(const std::string& path, const Corpus& corpus) {
  std::ofstream os(path);
  require(bool(os), "cannot write alignments: ", path);
  for (const auto& u : corpus.utts) {
    os << u.id;
    for (int s : u.alignment) os << " " << s;
    os << "\n";
  }
}

inline std::map<std::string, std::vector<int>> read_alignments(const std::string& path) {
  std::ifstream is(path);
  require(bool(is), "cannot open alignments: ", path);
  std::map<std::string, std::vector<int>> out;
  std::string line;
  while (std::getline(is, line)) {
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    std::vector<int> states;
    for (size_t i = 1; i < toks.size(); ++i) states.push_back(std::stoi(toks[i]));
    out[toks[0]] = std::move(states);
  }
  return out;
}

// --- lexicon -------------------------------------------------------------------

inline void write_lexicon(const std::string& path, const Lexicon& lex,
                          const std::vector<std::string>& phone_names) {
  std::ofstream os(path);
  require(bool(os), "cannot write lexicon: ", path);
  for (size_t i = 0; i < lex.words.size(); ++i) {
    os << lex.words[i];
    for (int p : lex.phones[i]) os << " " << phone_names[size_t(p)];
    os << "\n";
  }
}

// Phone ids are assigned in lexicographic name order so that reloading a
// lexicon reproduces the generator's numbering (it emits zero-padded names).
inline Lexicon read_lexicon(const std::string& path) {
  std::ifstream is(path);
  require(bool(is), "cannot open lexicon: ", path);
  Lexicon lex;
  std::vector<std::vector<std::string>> phone_names;
  std::map<std::string, int> phone_ids;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    require(toks.size() >= 2, path, ":", lineno, ": lexicon line needs WORD plus at least one phone");
    lex.words.push_back(toks[0]);
    phone_names.emplace_back(toks.begin() + 1, toks.end());
    for (size_t i = 1; i < toks.size(); ++i) phone_ids[toks[i]] = 0;
  }
  int next = 0;
  for (auto& [name, id] : phone_ids) id = next++;  // std::map iterates sorted
  for (const auto& names : phone_names) {
    std::vector<int> ph;
    for (const auto& n : names) ph.push_back(phone_ids[n]);
    lex.phones.push_back(std::move(ph));
  }
  lex.num_phones = int(phone_ids.size());
  return lex;
}

}  // namespace hal

#endif  // HAL_CORPUS_HPP_
