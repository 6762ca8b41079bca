#include "doctest.h"
#include "hal/synth.hpp"
#include "hal/trainer.hpp"

using namespace hal;

namespace {

// Two well-separated states on one feature axis: linearly separable.
Corpus toy_two_state(int frames, uint64_t seed) {
  Rng rng(seed);
  Corpus c;
  c.num_states = 2;
  c.feat_dim = 2;
  Utterance u;
  u.id = "toy";
  Tensor f({frames, 2});
  for (int t = 0; t < frames; ++t) {
    int s = t % 2;
    u.alignment.push_back(s);
    f.at(t, 0) = float((s == 0 ? 2.0 : -2.0) + 0.1 * rng.normal());
    f.at(t, 1) = float(0.1 * rng.normal());
  }
  u.feats = std::move(f);
  c.utts.push_back(std::move(u));
  return c;
}

DnnConfig toy_dnn() {
  DnnConfig cfg;
  cfg.feature_dim = 2;
  cfg.splice_left = 0;
  cfg.splice_right = 0;
  cfg.hidden_layers = 1;
  cfg.hidden_units = 8;
  cfg.maxout_group = 2;
  cfg.output_states = 2;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("balanced sampling distribution") {
  auto d = balanced_sample_dist({4, 1}, 0.5);
  CHECK(d.probs[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(d.probs[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  auto uniform = balanced_sample_dist({7, 0, 3, 1}, 0.0);  // gamma 0: uniform over occupied states
  CHECK(uniform.probs[0] == doctest::Approx(1.0 / 3));
  CHECK(uniform.probs[1] == 0.0);
  CHECK(uniform.probs[2] == doctest::Approx(1.0 / 3));

  auto empirical = balanced_sample_dist({6, 2, 2}, 1.0);  // gamma 1: f / sum f
  CHECK(empirical.probs[0] == doctest::Approx(0.6));
  CHECK(empirical.probs[1] == doctest::Approx(0.2));

  double sum = 0.0;
  for (double p : balanced_sample_dist({12, 5, 9, 1, 0, 3}, 0.8).probs) sum += p;
  CHECK(std::abs(sum - 1.0) < 1e-9);

  CHECK_THROWS_AS(balanced_sample_dist({0, 0}, 0.8), Error);
}

TEST_CASE("balanced sampling draws converge to the target distribution") {
  const std::vector<int64_t> freqs = {50, 20, 9, 1};
  for (double gamma : {0.0, 0.5, 0.8, 1.0}) {
    auto d = balanced_sample_dist(freqs, gamma);
    Rng rng(uint64_t(17 + gamma * 10));
    const int N = 100000;
    std::vector<int64_t> hits(freqs.size(), 0);
    for (int i = 0; i < N; ++i) hits[size_t(rng.categorical(d.probs))]++;
    for (size_t s = 0; s < freqs.size(); ++s) {
      double expect = d.probs[s] * N;
      double sigma = std::sqrt(N * d.probs[s] * (1.0 - d.probs[s]));
      CHECK(std::abs(double(hits[s]) - expect) <= 3.0 * sigma + 1e-9);
    }
  }
}

TEST_CASE("sgd step") {
  Parameter p("p", Tensor::from({1}, {1.0f}));
  p.value.grad()[0] = 2.0f;
  sgd_step({&p}, 0.1);
  CHECK(p.value[0] == doctest::Approx(0.8));
}

TEST_CASE("nag with zero momentum equals sgd bitwise") {
  Rng rng(3);
  Parameter a("a", Tensor({4, 3}));
  Parameter b("b", Tensor({4, 3}));
  for (int64_t i = 0; i < a.value.numel(); ++i) a.value[i] = b.value[i] = float(rng.uniform(-1, 1));
  NagState nag;
  for (int step = 0; step < 10; ++step) {
    for (int64_t i = 0; i < a.value.numel(); ++i) {
      float g = float(rng.uniform(-1, 1));
      a.value.grad()[i] = g;
      b.value.grad()[i] = g;
    }
    sgd_step({&a}, 0.07);
    nag_step({&b}, 0.07, 0.0, nag);
    for (int64_t i = 0; i < a.value.numel(); ++i) CHECK(a.value[i] == b.value[i]);
  }
}

TEST_CASE("nag reaches the quadratic optimum in fewer steps than sgd") {
  // oracle: the same update rules iterated in closed form on f(x) = x^2/2
  const double lr = 0.01, mu = 0.9;
  int sgd_steps = 0, nag_steps = 0;
  {
    double x = 1.0;
    while (std::abs(x) >= 1e-3 && sgd_steps < 100000) {
      x -= lr * x;
      ++sgd_steps;
    }
  }
  {
    double x = 1.0, v = 0.0;
    while (std::abs(x) >= 1e-3 && nag_steps < 100000) {
      double step = lr * x;
      v = mu * v - step;
      x += mu * v - step;
      ++nag_steps;
    }
  }
  CHECK(nag_steps < sgd_steps);

  // the implementation follows the oracle trajectory
  Parameter p("p", Tensor::from({1}, {1.0f}));
  NagState nag;
  double x = 1.0, v = 0.0;
  for (int i = 0; i < 50; ++i) {
    p.value.grad()[0] = p.value[0];
    nag_step({&p}, lr, mu, nag);
    p.zero_grad();
    double step = lr * x;
    v = mu * v - step;
    x += mu * v - step;
    CHECK(p.value[0] == doctest::Approx(x).epsilon(1e-4));
  }
}

TEST_CASE("nan gradients abort with the parameter named") {
  Parameter p("enc.w", Tensor::from({2}, {1.0f, 1.0f}));
  p.value.grad()[1] = std::nanf("");
  try {
    sgd_step({&p}, 0.1);
    FAIL("expected abort");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("enc.w") != std::string::npos);
  }
}

TEST_CASE("annealed dropout schedule is linear from p0 to zero") {
  TrainPlan plan;
  plan.epochs = 11;
  plan.dropout_p0 = 0.2;
  CHECK(annealed_dropout_rate(0, plan) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(annealed_dropout_rate(10, plan) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(annealed_dropout_rate(5, plan) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK_THROWS_AS(annealed_dropout_rate(11, plan), Error);
}

TEST_CASE("dropout: rate zero is the identity; inverted scaling preserves expectation") {
  DnnConfig cfg = toy_dnn();
  DnnModel model(cfg);
  Rng rng(9);
  for (Parameter* p : model.parameters())
    for (int64_t i = 0; i < p->value.numel(); ++i) p->value[i] = float(rng.uniform(-0.5, 0.5));
  Tensor feats({1, 2});
  feats.at(0, 0) = 0.7f;
  feats.at(0, 1) = -0.3f;
  std::vector<FrameSample> batch = {{&feats, 0, 0}};

  Tape t0;
  TrainContext clean;
  auto z0 = model.logits(t0, t0.constant(model.assemble_input(batch)), clean);
  Tape t1;
  TrainContext zero_rate{0.0f, &rng};
  auto z1 = model.logits(t1, t1.constant(model.assemble_input(batch)), zero_rate);
  for (int64_t i = 0; i < t0.value(z0).numel(); ++i) CHECK(t0.value(z0)[i] == t1.value(z1)[i]);

  // E[dropout(h)] == h within 1% over 10^4 masks
  const int trials = 10000;
  std::vector<double> acc(size_t(t0.value(z0).numel()), 0.0);
  Rng drop_rng(31);
  for (int k = 0; k < trials; ++k) {
    Tape t;
    TrainContext ctx{0.4f, &drop_rng};
    auto z = model.logits(t, t.constant(model.assemble_input(batch)), ctx);
    for (int64_t i = 0; i < t.value(z).numel(); ++i) acc[size_t(i)] += double(t.value(z)[i]);
  }
  for (size_t i = 0; i < acc.size(); ++i) {
    double mean = acc[i] / trials;
    double ref = double(t0.value(z0)[int64_t(i)]);
    CHECK(std::abs(mean - ref) <= 0.01 * std::max(1.0, std::abs(ref)));
  }
}

TEST_CASE("cross-entropy training overfits a separable toy task") {
  Corpus train = toy_two_state(50, 1);
  Corpus heldout = toy_two_state(30, 2);
  DnnModel model(toy_dnn());
  TrainPlan plan;
  plan.epochs = 60;
  plan.minibatch = 10;
  plan.learning_rate = 0.5;
  plan.seed = 11;
  LossCurve curve = train_cross_entropy(model, train, heldout, plan);
  CHECK(curve.train_ce.back() < 0.01);
  CHECK(curve.train_ce.size() == 60);
}

TEST_CASE("training is deterministic under a fixed seed") {
  Corpus train = toy_two_state(40, 3);
  Corpus heldout = toy_two_state(20, 4);
  TrainPlan plan;
  plan.epochs = 5;
  plan.minibatch = 8;
  plan.learning_rate = 0.3;
  plan.optimizer = "nag";
  plan.balanced_sampling = true;
  plan.gamma = 0.8;
  plan.dropout_p0 = 0.2;
  plan.seed = 77;
  DnnModel m1(toy_dnn()), m2(toy_dnn());
  LossCurve c1 = train_cross_entropy(m1, train, heldout, plan);
  LossCurve c2 = train_cross_entropy(m2, train, heldout, plan);
  for (size_t e = 0; e < c1.train_ce.size(); ++e) {
    CHECK(c1.train_ce[e] == c2.train_ce[e]);
    CHECK(c1.heldout_ce[e] == c2.heldout_ce[e]);
  }
  auto p1 = m1.parameters(), p2 = m2.parameters();
  for (size_t i = 0; i < p1.size(); ++i)
    for (int64_t j = 0; j < p1[i]->numel(); ++j) CHECK(p1[i]->value[j] == p2[i]->value[j]);
}

TEST_CASE("blstm subsequence training runs and reduces loss") {
  GeneratorSpec spec;
  spec.seed = 21;
  spec.vocab = 3;
  spec.phones_per_word_max = 1;
  spec.utterances = 12;
  spec.min_words = 2;
  spec.max_words = 4;
  spec.feature_dim = 6;
  spec.speaker_dim = 0;
  spec.separability = 3.0;
  Generator gen(spec);
  Corpus train = gen.generate_corpus(0, 10);
  Corpus heldout = gen.generate_corpus(10, 2);

  BlstmConfig cfg;
  cfg.layers = 1;
  cfg.units = 8;
  cfg.subseq_len = 5;
  cfg.carry = true;
  cfg.bottleneck = 8;
  cfg.output_states = gen.num_states;
  cfg.feature_dim = spec.frame_dim();
  BlstmModel model(cfg);

  TrainPlan plan;
  plan.epochs = 4;
  plan.minibatch = 4;  // streams
  plan.learning_rate = 0.3;
  plan.seed = 5;
  LossCurve curve = train_cross_entropy(model, train, heldout, plan);
  CHECK(curve.train_ce.back() < curve.train_ce.front());
  CHECK(curve.heldout_ce.back() < curve.heldout_ce.front());
}

TEST_CASE("layerwise pretraining") {
  GeneratorSpec spec;
  spec.seed = 33;
  spec.vocab = 3;
  spec.phones_per_word_max = 1;
  spec.utterances = 14;
  spec.feature_dim = 6;
  spec.speaker_dim = 0;
  spec.separability = 2.5;
  Generator gen(spec);
  Corpus train = gen.generate_corpus(0, 12);
  Corpus heldout = gen.generate_corpus(12, 2);

  DnnConfig target;
  target.feature_dim = spec.frame_dim();
  target.splice_left = 1;
  target.splice_right = 1;
  target.hidden_layers = 3;
  target.hidden_units = 16;
  target.maxout_group = 2;
  target.output_states = gen.num_states;
  target.seed = 3;

  TrainPlan stage;
  stage.epochs = 3;
  stage.minibatch = 32;
  stage.learning_rate = 0.15;
  stage.seed = 7;

  // stage 1 is exactly plain training of a 1-layer net with the same seed
  DnnConfig cfg1 = target;
  cfg1.hidden_layers = 1;
  DnnModel plain(cfg1);
  train_cross_entropy(plain, train, heldout, stage);

  std::vector<LossCurve> curves;
  auto pretrained = pretrain_layerwise(target, train, heldout, stage, &curves);
  REQUIRE(curves.size() == 3);
  CHECK(pretrained->config().hidden_layers == 3);  // full-depth topology

  // replay stage 1 to compare parameters bitwise
  DnnModel stage1(cfg1);
  train_cross_entropy(stage1, train, heldout, stage);
  auto pa = plain.parameters(), pb = stage1.parameters();
  for (size_t i = 0; i < pa.size(); ++i)
    for (int64_t j = 0; j < pa[i]->numel(); ++j) CHECK(pa[i]->value[j] == pb[i]->value[j]);

  // each grown stage starts strictly below a freshly initialized net of the
  // same depth (the fresh net starts at exactly ln C)
  for (int k = 2; k <= 3; ++k) {
    DnnConfig cfg_prev = target;
    cfg_prev.hidden_layers = k - 1;
    DnnModel prev(cfg_prev);
    TrainPlan stage_k = stage;
    LossCurve c = train_cross_entropy(prev, train, heldout, stage_k);
    auto grown = grow_stage(prev, target, k);
    DnnConfig cfg_fresh = target;
    cfg_fresh.hidden_layers = k;
    DnnModel fresh(cfg_fresh);
    const double grown_ce = mean_cross_entropy(*grown, train);
    const double fresh_ce = mean_cross_entropy(fresh, train);
    CHECK(fresh_ce == doctest::Approx(std::log(double(gen.num_states))).epsilon(1e-5));
    CHECK(grown_ce < fresh_ce);
    // identity insertion preserves the trained stage's function
    CHECK(grown_ce == doctest::Approx(mean_cross_entropy(prev, train)).epsilon(1e-5));
  }
}

TEST_CASE("one small-lr sgd step on a single example decreases its loss") {
  Corpus train = toy_two_state(20, 9);
  DnnModel model(toy_dnn());
  Rng rng(15);
  for (Parameter* p : model.parameters())
    for (int64_t i = 0; i < p->value.numel(); ++i) p->value[i] = float(rng.uniform(-0.5, 0.5));
  std::vector<FrameSample> one = {{&train.utts[0].feats, 3, train.utts[0].alignment[3]}};
  TrainContext ctx;
  for (double lr : {1e-3, 1e-2}) {
    DnnModel fresh(toy_dnn());
    auto src = model.parameters();
    auto dst = fresh.parameters();
    for (size_t i = 0; i < src.size(); ++i)
      std::copy(src[i]->value.data(), src[i]->value.data() + src[i]->numel(), dst[i]->value.data());
    Tape t1;
    auto l1 = fresh.frame_loss(t1, one, ctx);
    double before = double(t1.value(l1)[0]);
    fresh.zero_grads();
    Tape t2;
    auto l2 = fresh.frame_loss(t2, one, ctx);
    t2.backward(l2);
    sgd_step(fresh.parameters(), lr);
    Tape t3;
    auto l3 = fresh.frame_loss(t3, one, ctx);
    CHECK(double(t3.value(l3)[0]) < before);
  }
}
