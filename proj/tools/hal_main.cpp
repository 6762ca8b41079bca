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

// hal: a desk-scale hybrid NN/HMM speech recognition laboratory.
// Pipeline: gen -> train -> align/decode/nbest -> fuse -> lm-* / nnlm-train ->
// rescore -> score. Every run writes a manifest so any stage can be re-run
// from persisted artifacts alone.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "hal/fusion.hpp"
#include "hal/hmm.hpp"
#include "hal/models.hpp"
#include "hal/ngram.hpp"
#include "hal/nnlm.hpp"
#include "hal/synth.hpp"
#include "hal/trainer.hpp"

namespace fs = std::filesystem;
using namespace hal;

namespace {

constexpr const char* kVersion = "hal 0.1.0";

// Deterministic parallel map over utterance indices: results land by index,
// so the output is independent of scheduling and worker count.
void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&]() {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

void write_manifest(const std::string& path, const std::string& command, const Config& effective) {
  Config m;
  m.set("command", command);
  m.set("version", kVersion);
  for (const auto& [k, v] : effective.entries()) m.set("opt." + k, v);
  m.write_file(path);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config cfg = path.empty() ? Config() : Config::parse_file(path);
  for (const auto& kv : overrides) cfg.set_override(kv);
  return cfg;
}

GeneratorSpec spec_from_config(const Config& c) {
  GeneratorSpec s;
  s.seed = uint64_t(c.get_int("seed", 7));
  s.vocab = int(c.get_int("vocab", 6));
  s.phones_per_word_max = int(c.get_int("phones_per_word_max", 2));
  s.states_per_phone = int(c.get_int("states_per_phone", 3));
  s.gmm_components = int(c.get_int("gmm_components", 2));
  s.feature_dim = int(c.get_int("feature_dim", 12));
  s.speaker_dim = int(c.get_int("speaker_dim", 8));
  s.num_speakers = int(c.get_int("num_speakers", 4));
  s.min_words = int(c.get_int("min_words", 3));
  s.max_words = int(c.get_int("max_words", 8));
  s.self_loop = c.get_double("self_loop", 0.5);
  s.separability = c.get_double("separability", 2.0);
  s.mean_bumps = int(c.get_int("mean_bumps", 2));
  s.smooth_width = int(c.get_int("smooth_width", 2));
  s.lm_top2_mass = c.get_double("lm_top2_mass", 0.75);
  s.stop_prob = c.get_double("stop_prob", 0.18);
  s.long_context = c.get_bool("long_context", false);
  s.marker_scale = c.get_double("marker_scale", 4.0);
  return s;
}

TrainPlan plan_from_config(const Config& c) {
  TrainPlan p;
  p.epochs = int(c.get_int("epochs", 12));
  p.minibatch = int(c.get_int("minibatch", 250));
  p.optimizer = c.get_string("optimizer", "sgd");
  p.learning_rate = c.get_double("learning_rate", 0.1);
  p.momentum = c.get_double("momentum", 0.9);
  p.dropout_p0 = c.get_double("dropout_p0", 0.0);
  p.lr_halve_rel = c.get_double("lr_halve_rel", 0.001);
  p.balanced_sampling = c.get_bool("balanced_sampling", false);
  p.gamma = c.get_double("gamma", 0.8);
  p.seed = uint64_t(c.get_int("train_seed", 1));
  return p;
}

struct CorpusBundle {
  CorpusPaths paths;
  Config meta;
  Lexicon lexicon;
  double self_loop = 0.5;
  int states_per_phone = 3;
  int num_states = 0;

  static CorpusBundle open(const std::string& dir) {
    CorpusBundle b;
    b.paths.dir = dir;
    b.meta = Config::parse_file(b.paths.meta());
    b.lexicon = read_lexicon(b.paths.lexicon());
    b.self_loop = b.meta.get_double("self_loop", 0.5);
    b.states_per_phone = int(b.meta.get_int("states_per_phone", 3));
    b.num_states = int(b.meta.get_int("num_states", 0));
    return b;
  }

  HmmDecodingGraph graph() const {
    auto aligns = read_alignments(paths.alignments("train"));
    std::vector<std::vector<int>> a;
    for (const auto& [id, v] : aligns) a.push_back(v);
    return HmmDecodingGraph::build(lexicon, states_per_phone, self_loop,
                                   estimate_log_priors(a, num_states));
  }
};

// --- subcommand bodies -------------------------------------------------------

int run_gen(const std::string& out_dir, const Config& cfg) {
  GeneratorSpec spec = spec_from_config(cfg);
  const int n_train = int(cfg.get_int("utterances_train", 60));
  const int n_heldout = int(cfg.get_int("utterances_heldout", 15));
  const int n_test = int(cfg.get_int("utterances_test", 25));
  const int lm_sentences = int(cfg.get_int("lm_sentences", 2000));
  const int workers = int(cfg.get_int("workers", int(std::thread::hardware_concurrency())));
  cfg.reject_unknown_keys();
  spec.utterances = n_train + n_heldout + n_test;

  Generator gen(spec);
  CorpusPaths paths{out_dir};
  fs::create_directories(out_dir + "/feats");

  // per-utterance derived seeds keep parallel generation deterministic
  std::vector<Utterance> utts(size_t(spec.utterances));
  parallel_for(spec.utterances, workers, [&](int i) { utts[size_t(i)] = gen.generate_utterance(i); });

  auto save_range = [&](const std::string& split, int first, int count) {
    Corpus c;
    c.feat_dim = spec.frame_dim();
    c.num_states = gen.num_states;
    for (int i = first; i < first + count; ++i) c.utts.push_back(utts[size_t(i)]);
    save_split(paths, split, c);
  };
  save_range("train", 0, n_train);
  save_range("heldout", n_train, n_heldout);
  save_range("test", n_train + n_heldout, n_test);
  write_lexicon(paths.lexicon(), gen.lexicon, gen.phone_names);

  std::ofstream lm_text(paths.lm_text());
  require(bool(lm_text), "cannot write lm text");
  for (const auto& sent : gen.generate_lm_text(lm_sentences)) {
    for (size_t i = 0; i < sent.size(); ++i) lm_text << (i ? " " : "") << gen.lexicon.words[size_t(sent[i])];
    lm_text << "\n";
  }
  arpa_write_file(bigram_from_matrix(gen.lexicon.words, gen.bigram), out_dir + "/true_lm.arpa");

  Config meta;
  meta.set("frame_dim", std::to_string(spec.frame_dim()));
  meta.set("num_states", std::to_string(gen.num_states));
  meta.set("states_per_phone", std::to_string(spec.states_per_phone));
  meta.set("self_loop", str_cat(spec.self_loop));
  meta.set("utterances_train", std::to_string(n_train));
  meta.set("utterances_heldout", std::to_string(n_heldout));
  meta.set("utterances_test", std::to_string(n_test));
  meta.write_file(paths.meta());
  write_manifest(out_dir + "/manifest.txt", "gen", cfg);
  std::cout << "generated " << spec.utterances << " utterances, " << gen.num_states << " states, vocab "
            << spec.vocab << " -> " << out_dir << "\n";
  return 0;
}

std::unique_ptr<AcousticModel> build_model_for_corpus(const std::string& kind, const Config& cfg,
                                                      const CorpusBundle& corpus) {
  Config mc;
  mc.set("model", kind);
  const int frame_dim = int(corpus.meta.get_int("frame_dim", 0));
  // architecture defaults sized for the desk corpus; all overridable
  auto fwd = [&](const char* key, const std::string& dflt) { mc.set(key, cfg.get_string(key, dflt)); };
  mc.set("output_states", std::to_string(corpus.num_states));
  fwd("seed", "1");
  if (kind == "dnn") {
    fwd("feature_dim", std::to_string(frame_dim - int(cfg.get_int("ivector_dim", 8))));
    fwd("ivector_dim", "8");
    fwd("splice_left", "2");
    fwd("splice_right", "2");
    fwd("hidden_layers", "3");
    fwd("hidden_units", "96");
    fwd("maxout_group", "2");
    fwd("activation", "sigmoid");
  } else if (kind == "rnn") {
    fwd("feature_dim", std::to_string(frame_dim - int(cfg.get_int("ivector_dim", 8))));
    fwd("ivector_dim", "8");
    fwd("recurrent_units", "64");
    fwd("nonrecurrent_layers", "2");
    fwd("bottleneck_wide", "48");
    fwd("bottleneck_narrow", "24");
    fwd("unfold_steps", "4");
    fwd("splice_right", "3");
  } else if (kind == "vgg") {
    fwd("patch_dim", std::to_string(frame_dim));
    fwd("conv_layers", "10");
    fwd("variant", "pool");
    fwd("feature_maps", "4,6,8,12");
    fwd("patch_frames", "12");
    fwd("fc_dims", "48");
    fwd("classic", "false");
    fwd("classic_kernel", "9");
    fwd("classic_maps", "12");
  } else if (kind == "blstm") {
    fwd("feature_dim", std::to_string(frame_dim));
    fwd("layers", "1");
    fwd("units", "24");
    fwd("subseq_len", "10");
    fwd("start_state", "reset");
    fwd("bottleneck", "24");
  } else {
    fail("unknown model kind: ", kind);
  }
  return model_from_config(mc);
}

int run_train(const std::string& kind, const std::string& corpus_dir, const std::string& out_dir,
              const Config& cfg) {
  CorpusBundle bundle = CorpusBundle::open(corpus_dir);
  Corpus train = load_split(bundle.paths, "train");
  Corpus heldout = load_split(bundle.paths, "heldout");
  auto model = build_model_for_corpus(kind, cfg, bundle);
  TrainPlan plan = plan_from_config(cfg);
  const bool pretrain = cfg.get_bool("pretrain", false);
  cfg.reject_unknown_keys();

  fs::create_directories(out_dir);
  LossCurve curve;
  if (pretrain) {
    auto* dnn = dynamic_cast<DnnModel*>(model.get());
    require(dnn != nullptr, "layerwise pretraining is only wired for the dnn model");
    std::vector<LossCurve> curves;
    auto trained = pretrain_layerwise(dnn->config(), train, heldout, plan, &curves);
    curve = curves.back();
    model = std::move(trained);
  } else {
    curve = train_cross_entropy(*model, train, heldout, plan);
  }
  save_model(out_dir, *model);
  curve.write_csv(out_dir + "/loss.csv");
  write_manifest(out_dir + "/manifest.txt", "train", cfg);
  std::cout << "trained " << kind << " (" << model->num_params() << " params): train ce "
            << curve.train_ce.back() << ", heldout ce " << curve.heldout_ce.back() << " -> " << out_dir
            << "\n";
  return 0;
}

// Per-utterance hybrid scores from either a model or persisted fused scores.
struct ScoreSource {
  std::unique_ptr<AcousticModel> model;
  std::string scores_dir;

  Tensor log_posteriors(const Utterance& u) const {
    if (model) {
      StreamState state;
      return model->log_posteriors(u.feats, &state);
    }
    return read_fmat(scores_dir + "/" + u.id + ".fmat");
  }
};

int run_decode(const std::string& model_dir, const std::string& scores_dir, const std::string& corpus_dir,
               const std::string& split, const std::string& lm_path, const std::string& out_path, double beam,
               double lm_weight, double word_penalty, int nbest_n, int workers, const std::string& command) {
  CorpusBundle bundle = CorpusBundle::open(corpus_dir);
  Corpus corpus = load_split(bundle.paths, split);
  HmmDecodingGraph graph = bundle.graph();
  NGramModel lm = arpa_read_file(lm_path);
  ScoreSource source;
  if (!model_dir.empty()) source.model = load_model(model_dir);
  source.scores_dir = scores_dir;
  require(source.model != nullptr || !scores_dir.empty(), "decode needs --model or --scores");

  std::vector<std::vector<DecodeResult>> results(corpus.utts.size());
  parallel_for(int(corpus.utts.size()), workers, [&](int i) {
    const Utterance& u = corpus.utts[size_t(i)];
    Tensor post = source.log_posteriors(u);
    Tensor scores = hybrid_acoustic_scores(post, graph.log_priors);
    results[size_t(i)] = nbest_decode(graph, scores, lm, beam, lm_weight, word_penalty, nbest_n);
  });

  std::ofstream os(out_path);
  require(bool(os), "cannot write ", out_path);
  if (nbest_n == 1) {
    std::vector<TrnEntry> hyp;
    for (size_t i = 0; i < corpus.utts.size(); ++i)
      hyp.push_back({corpus.utts[i].id, results[i].front().words});
    for (const auto& e : hyp) {
      for (const auto& w : e.words) os << w << " ";
      os << "(" << e.id << ")\n";
    }
  } else {
    for (size_t i = 0; i < corpus.utts.size(); ++i) write_nbest(os, corpus.utts[i].id, results[i]);
  }
  Config eff;
  eff.set("corpus", corpus_dir);
  eff.set("split", split);
  eff.set("lm", lm_path);
  eff.set("model", model_dir.empty() ? scores_dir : model_dir);
  eff.set("beam", str_cat(beam));
  eff.set("lm_weight", str_cat(lm_weight));
  eff.set("word_penalty", str_cat(word_penalty));
  eff.set("nbest", std::to_string(nbest_n));
  write_manifest(out_path + ".manifest", command, eff);
  std::cout << command << ": " << corpus.utts.size() << " utterances -> " << out_path << "\n";
  return 0;
}

int run_align(const std::string& model_dir, const std::string& corpus_dir, const std::string& split,
              const std::string& out_path, int workers) {
  CorpusBundle bundle = CorpusBundle::open(corpus_dir);
  Corpus corpus = load_split(bundle.paths, split);
  HmmDecodingGraph graph = bundle.graph();
  auto model = load_model(model_dir);

  std::vector<std::vector<int>> aligned(corpus.utts.size());
  parallel_for(int(corpus.utts.size()), workers, [&](int i) {
    const Utterance& u = corpus.utts[size_t(i)];
    StreamState state;
    Tensor post = model->log_posteriors(u.feats, &state);
    Tensor scores = hybrid_acoustic_scores(post, graph.log_priors);
    aligned[size_t(i)] = forced_align(graph, scores, u.words);
  });

  std::ofstream os(out_path);
  require(bool(os), "cannot write ", out_path);
  for (size_t i = 0; i < corpus.utts.size(); ++i) {
    os << corpus.utts[i].id;
    for (int s : aligned[i]) os << " " << s;
    os << "\n";
  }
  Config eff;
  eff.set("model", model_dir);
  eff.set("corpus", corpus_dir);
  eff.set("split", split);
  write_manifest(out_path + ".manifest", "align", eff);
  std::cout << "aligned " << corpus.utts.size() << " utterances -> " << out_path << "\n";
  return 0;
}

int run_fuse(const std::string& models_csv, const std::string& weights_csv, const std::string& corpus_dir,
             const std::string& split, const std::string& out_dir, int workers) {
  CorpusBundle bundle = CorpusBundle::open(corpus_dir);
  Corpus corpus = load_split(bundle.paths, split);
  std::vector<std::unique_ptr<AcousticModel>> models;
  for (const auto& dir : split_list(models_csv)) models.push_back(load_model(dir));
  require(!models.empty(), "fuse needs at least one model");
  FusionSpec spec;
  if (weights_csv.empty()) {
    spec = FusionSpec::uniform(models.size());
  } else {
    for (const auto& w : split_list(weights_csv)) spec.weights.push_back(std::stod(w));
  }
  fs::create_directories(out_dir);

  parallel_for(int(corpus.utts.size()), workers, [&](int i) {
    const Utterance& u = corpus.utts[size_t(i)];
    std::vector<Tensor> posts;
    for (auto& m : models) {
      StreamState state;
      posts.push_back(m->log_posteriors(u.feats, &state));
    }
    std::vector<const Tensor*> ptrs;
    for (const auto& p : posts) ptrs.push_back(&p);
    write_fmat(out_dir + "/" + u.id + ".fmat", fuse_frame_scores(ptrs, spec));
  });
  Config eff;
  eff.set("models", models_csv);
  eff.set("corpus", corpus_dir);
  eff.set("split", split);
  std::string ws;
  for (size_t i = 0; i < spec.weights.size(); ++i) ws += (i ? "," : "") + str_cat(spec.weights[i]);
  eff.set("weights", ws);
  write_manifest(out_dir + "/manifest.txt", "fuse", eff);
  std::cout << "fused " << models.size() << " models over " << corpus.utts.size() << " utterances -> "
            << out_dir << "\n";
  return 0;
}

int run_lm_build(const std::string& text_path, int order, const std::string& out_path) {
  NGramModel m = estimate_modified_kn(count_ngrams(read_sentences(text_path), order));
  for (const auto& note : m.notes) std::cerr << "warning: " << note << "\n";
  arpa_write_file(m, out_path);
  Config eff;
  eff.set("text", text_path);
  eff.set("order", std::to_string(order));
  write_manifest(out_path + ".manifest", "lm-build", eff);
  std::cout << "built " << order << "-gram with " << m.num_entries() << " entries -> " << out_path << "\n";
  return 0;
}

int run_lm_prune(const std::string& lm_path, double threshold, const std::string& out_path) {
  NGramModel m = arpa_read_file(lm_path);
  NGramModel pruned = entropy_prune(m, threshold);
  arpa_write_file(pruned, out_path);
  Config eff;
  eff.set("lm", lm_path);
  eff.set("threshold", str_cat(threshold));
  write_manifest(out_path + ".manifest", "lm-prune", eff);
  std::cout << "pruned " << m.num_entries() << " -> " << pruned.num_entries() << " entries -> " << out_path
            << "\n";
  return 0;
}

int run_lm_interp(const std::string& lms_csv, const std::string& heldout_path, const std::string& out_path) {
  auto paths = split_list(lms_csv);
  std::vector<NGramModel> models;
  for (const auto& p : paths) models.push_back(arpa_read_file(p));
  std::vector<const NGramModel*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  auto heldout = read_sentences(heldout_path);
  InterpolationResult res = interpolate(ptrs, heldout);

  std::ofstream os(out_path);
  require(bool(os), "cannot write ", out_path);
  char buf[64];
  for (size_t k = 0; k < res.mixture.weights.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.9f", res.mixture.weights[k]);
    os << paths[k] << " " << buf << "\n";
  }
  std::snprintf(buf, sizeof buf, "%.6f", res.mixture.perplexity(heldout));
  os << "# heldout_ppl " << buf << "\n";
  Config eff;
  eff.set("lms", lms_csv);
  eff.set("heldout", heldout_path);
  write_manifest(out_path + ".manifest", "lm-interp", eff);
  std::cout << "interpolated " << paths.size() << " models, heldout ppl " << buf << " -> " << out_path
            << "\n";
  return 0;
}

int run_nnlm_train(const std::string& text_path, const std::string& out_dir, const Config& cfg) {
  NnlmConfig nc;
  nc.context = int(cfg.get_int("context", 2));
  nc.embed_dim = int(cfg.get_int("embed_dim", 16));
  nc.hidden_dims = cfg.get_int_list("hidden_dims", {32});
  nc.num_classes = int(cfg.get_int("num_classes", 0));
  nc.seed = uint64_t(cfg.get_int("seed", 1));
  TrainPlan plan = plan_from_config(cfg);
  cfg.reject_unknown_keys();

  auto res = train_nnlm(read_sentences(text_path), nc, plan);
  fs::create_directories(out_dir);
  res.model->save(out_dir);
  std::ofstream os(out_dir + "/loss.csv");
  os << "epoch,train_ce\n";
  for (size_t e = 0; e < res.train_ce.size(); ++e) os << e << "," << res.train_ce[e] << "\n";
  write_manifest(out_dir + "/manifest.txt", "nnlm-train", cfg);
  std::cout << "trained nnlm (" << res.model->num_classes() << " classes): final ce "
            << res.train_ce.back() << " -> " << out_dir << "\n";
  return 0;
}

int run_rescore(const std::string& nbest_path, const std::string& lm_path, const std::string& nnlm_dir,
                double lambda, double lm_weight, double word_penalty, const std::string& out_path,
                const std::string& trn_out) {
  std::ifstream is(nbest_path);
  require(bool(is), "cannot open ", nbest_path);
  auto lines = read_nbest(is, nbest_path);
  NGramModel ngram = arpa_read_file(lm_path);
  auto nnlm = NnlmModel::load(nnlm_dir);

  // group by utterance, preserving order of first appearance
  std::vector<std::string> order;
  std::map<std::string, std::vector<NbestLine>> by_utt;
  for (const auto& l : lines) {
    if (by_utt.find(l.utt_id) == by_utt.end()) order.push_back(l.utt_id);
    by_utt[l.utt_id].push_back(l);
  }
  std::ofstream os(out_path);
  require(bool(os), "cannot write ", out_path);
  std::ofstream trn;
  if (!trn_out.empty()) {
    trn.open(trn_out);
    require(bool(trn), "cannot write ", trn_out);
  }
  std::vector<std::string> warnings;
  for (const auto& id : order) {
    auto rescored = rescore_nbest(by_utt[id], ngram, *nnlm, lambda, lm_weight, word_penalty, &warnings);
    write_rescored(os, rescored);
    if (!trn_out.empty()) {
      for (const auto& w : rescored.front().line.words) trn << w << " ";
      trn << "(" << id << ")\n";
    }
  }
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  Config eff;
  eff.set("nbest", nbest_path);
  eff.set("lm", lm_path);
  eff.set("nnlm", nnlm_dir);
  eff.set("lambda", str_cat(lambda));
  eff.set("lm_weight", str_cat(lm_weight));
  write_manifest(out_path + ".manifest", "rescore", eff);
  std::cout << "rescored " << order.size() << " utterances -> " << out_path << "\n";
  return 0;
}

int run_score(const std::string& ref_path, const std::string& hyp_path, const std::string& out_path) {
  auto ref = read_trn(ref_path);
  auto hyp = read_trn(hyp_path);
  WerResult res = compute_wer(ref, hyp);
  char buf[160];
  std::ostringstream report;
  for (const auto& [id, r] : res.per_utterance) {
    std::snprintf(buf, sizeof buf, "%s wer %.2f%% (S=%lld I=%lld D=%lld N=%lld)\n", id.c_str(), r.percent(),
                  (long long)r.substitutions, (long long)r.insertions, (long long)r.deletions,
                  (long long)r.ref_len);
    report << buf;
  }
  std::snprintf(buf, sizeof buf, "TOTAL wer %.2f%% (S=%lld I=%lld D=%lld N=%lld)\n", res.total.percent(),
                (long long)res.total.substitutions, (long long)res.total.insertions,
                (long long)res.total.deletions, (long long)res.total.ref_len);
  report << buf;
  std::cout << report.str();
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    require(bool(os), "cannot write ", out_path);
    os << report.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hal: desk-scale hybrid NN/HMM speech recognition laboratory"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  int workers = int(std::thread::hardware_concurrency());
  app.add_option("--workers", workers, "parallel utterance workers")->capture_default_str();

  std::string cfg_path;
  std::vector<std::string> overrides;
  std::string out, corpus_dir, model_dir, scores_dir, split = "test", lm_path, text_path, nnlm_dir;
  std::string models_csv, weights_csv, lms_csv, heldout_path, ref_path, hyp_path, nbest_path, trn_out;
  std::string model_kind;
  double beam = HUGE_VAL, lm_weight = 10.0, word_penalty = 0.0, threshold = 1e-7, lambda = 0.5;
  int order = 2, nbest_n = 5;
  long long seed = -1;

  auto add_cfg = [&](CLI::App* c) {
    c->add_option("--config", cfg_path, "key=value config file");
    c->add_option("--set", overrides, "config override key=value")->take_all();
  };

  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  gen->add_option("--out", out, "output corpus directory")->required();
  gen->add_option("--seed", seed, "generator seed (overrides config)");
  add_cfg(gen);

  auto* train = app.add_subcommand("train", "train an acoustic model");
  train->add_option("--model", model_kind, "rnn|vgg|blstm|dnn")->required();
  train->add_option("--corpus", corpus_dir, "corpus directory")->required();
  train->add_option("--out", out, "model output directory")->required();
  add_cfg(train);

  auto* align = app.add_subcommand("align", "forced-align a corpus split with a model");
  align->add_option("--model", model_dir)->required();
  align->add_option("--corpus", corpus_dir)->required();
  align->add_option("--split", split);
  align->add_option("--out", out)->required();

  auto* decode = app.add_subcommand("decode", "hybrid viterbi decode to a trn file");
  decode->add_option("--model", model_dir);
  decode->add_option("--scores", scores_dir, "directory of fused posterior fmat files");
  decode->add_option("--corpus", corpus_dir)->required();
  decode->add_option("--split", split);
  decode->add_option("--lm", lm_path)->required();
  decode->add_option("--out", out)->required();
  decode->add_option("--beam", beam);
  decode->add_option("--lm-weight", lm_weight)->capture_default_str();
  decode->add_option("--word-penalty", word_penalty)->capture_default_str();

  auto* nbest = app.add_subcommand("nbest", "n-best decode to a hypothesis list");
  nbest->add_option("--model", model_dir);
  nbest->add_option("--scores", scores_dir);
  nbest->add_option("--corpus", corpus_dir)->required();
  nbest->add_option("--split", split);
  nbest->add_option("--lm", lm_path)->required();
  nbest->add_option("--out", out)->required();
  nbest->add_option("--n", nbest_n)->capture_default_str();
  nbest->add_option("--beam", beam);
  nbest->add_option("--lm-weight", lm_weight);
  nbest->add_option("--word-penalty", word_penalty);

  auto* fuse = app.add_subcommand("fuse", "frame-level score fusion to fmat files");
  fuse->add_option("--models", models_csv, "comma-separated model directories")->required();
  fuse->add_option("--weights", weights_csv, "comma-separated weights (default uniform)");
  fuse->add_option("--corpus", corpus_dir)->required();
  fuse->add_option("--split", split);
  fuse->add_option("--out", out)->required();

  auto* lm_build = app.add_subcommand("lm-build", "estimate a modified Kneser-Ney n-gram model");
  lm_build->add_option("--text", text_path)->required();
  lm_build->add_option("--order", order)->capture_default_str();
  lm_build->add_option("--out", out)->required();

  auto* lm_prune = app.add_subcommand("lm-prune", "entropy-prune an ARPA model");
  lm_prune->add_option("--lm", lm_path)->required();
  lm_prune->add_option("--threshold", threshold, "relative entropy per n-gram, nats")->capture_default_str();
  lm_prune->add_option("--out", out)->required();

  auto* lm_interp = app.add_subcommand("lm-interp", "EM-interpolate ARPA models on held-out text");
  lm_interp->add_option("--lms", lms_csv, "comma-separated ARPA files")->required();
  lm_interp->add_option("--heldout", heldout_path)->required();
  lm_interp->add_option("--out", out)->required();

  auto* nnlm_train = app.add_subcommand("nnlm-train", "train the class-factored neural LM");
  nnlm_train->add_option("--text", text_path)->required();
  nnlm_train->add_option("--out", out)->required();
  add_cfg(nnlm_train);

  auto* rescore = app.add_subcommand("rescore", "rescore an n-best list with ngram+nnlm mixture");
  rescore->add_option("--nbest", nbest_path)->required();
  rescore->add_option("--lm", lm_path)->required();
  rescore->add_option("--nnlm", nnlm_dir)->required();
  rescore->add_option("--lambda", lambda, "ngram weight in the mixture")->capture_default_str();
  rescore->add_option("--lm-weight", lm_weight);
  rescore->add_option("--word-penalty", word_penalty);
  rescore->add_option("--out", out)->required();
  rescore->add_option("--trn-out", trn_out, "write the reranked 1-best as trn");

  auto* score = app.add_subcommand("score", "word error rate of hyp against ref");
  score->add_option("--ref", ref_path)->required();
  score->add_option("--hyp", hyp_path)->required();
  score->add_option("--out", out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\n";
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) {
      Config cfg = load_config(cfg_path, overrides);
      if (seed >= 0) cfg.set("seed", std::to_string(seed));
      cfg.set("workers", std::to_string(workers));
      return run_gen(out, cfg);
    }
    if (train->parsed()) return run_train(model_kind, corpus_dir, out, load_config(cfg_path, overrides));
    if (align->parsed()) return run_align(model_dir, corpus_dir, split, out, workers);
    if (decode->parsed())
      return run_decode(model_dir, scores_dir, corpus_dir, split, lm_path, out, beam, lm_weight,
                        word_penalty, 1, workers, "decode");
    if (nbest->parsed())
      return run_decode(model_dir, scores_dir, corpus_dir, split, lm_path, out, beam, lm_weight,
                        word_penalty, nbest_n, workers, "nbest");
    if (fuse->parsed()) return run_fuse(models_csv, weights_csv, corpus_dir, split, out, workers);
    if (lm_build->parsed()) return run_lm_build(text_path, order, out);
    if (lm_prune->parsed()) return run_lm_prune(lm_path, threshold, out);
    if (lm_interp->parsed()) return run_lm_interp(lms_csv, heldout_path, out);
    if (nnlm_train->parsed()) return run_nnlm_train(text_path, out, load_config(cfg_path, overrides));
    if (rescore->parsed())
      return run_rescore(nbest_path, lm_path, nnlm_dir, lambda, lm_weight, word_penalty, out, trn_out);
    if (score->parsed()) return run_score(ref_path, hyp_path, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
