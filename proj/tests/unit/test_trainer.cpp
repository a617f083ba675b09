#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "config.hpp"
#include "error.hpp"
#include "experiments.hpp"
#include "helpers.hpp"
#include "rng.hpp"
#include "segmodel.hpp"
#include "trainer.hpp"

using namespace alignlab;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.width = 32;
  c.height = 32;
  c.data_layouts = 12;
  c.test_layouts = 3;
  c.iterations = 4;
  c.model.widths = {4, 6, 8, 8};
  c.model.hidden = 6;
  return c;
}

double mean_tail(const TrainLog& log, std::size_t n) {
  double s = 0;
  for (std::size_t i = log.steps.size() - n; i < log.steps.size(); ++i) s += log.steps[i].loss_s;
  return s / static_cast<double>(n);
}

}  // namespace

// ------------------------------------------------------------------ config

TEST_CASE("config defaults, parse and round trip") {
  const TrainConfig d;
  CHECK(d.iterations == 2000);
  CHECK(d.batch_size == 2);
  CHECK(d.lr == 6e-4);
  CHECK(d.tau == 0.968);
  CHECK(d.width == 128);
  CHECK(d.height == 96);

  const TrainConfig c = parse_config(
      "# comment\n"
      "mode = uda\n"
      "align.metric = mmd   # trailing comment\n"
      "align.blocks = 1,3\n"
      "align.mmd_sigma = 0.5\n"
      "uda.mixup = off\n"
      "protocol = fixed\n"
      "data.layouts = 40\n");
  CHECK(c.mode == TrainMode::UDA);
  CHECK(c.align.kind == AlignKind::MMD);
  CHECK(c.blocks == std::set<int>{1, 3});
  CHECK(c.align.mmd_sigma == 0.5);
  CHECK_FALSE(c.mixup);
  CHECK(c.protocol.kind == ProtocolKind::Fixed);
  CHECK(c.data_layouts == 40);
  CHECK(c.lambda() == 0.5);

  const TrainConfig back = parse_config(config_text(c));
  for (const auto& key : config_keys()) {
    CAPTURE(key);
    CHECK(get_config_value(back, key) == get_config_value(c, key));
  }
}

TEST_CASE("config errors") {
  TrainConfig c;
  CHECK_THROWS_AS(set_config_value(c, "align.metrik", "cs"), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "align.metric", "cosine"), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "iterations", "many"), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "align.blocks", "0,5"), ConfigError);
  CHECK_THROWS_AS(parse_config("just words\n"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/x.cfg"), DataError);

  TrainConfig bad;
  bad.align.kind = AlignKind::CS;
  bad.protocol = AppearanceProtocol::parse("single:1");
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.tau = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.ema = 0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.width = 100;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("lambda rule") {
  TrainConfig c;
  c.align.kind = AlignKind::CS;
  CHECK(c.lambda() == 0.25);
  c.blocks = {2, 4};
  CHECK(c.lambda() == 0.5);
  c.align_lambda = 0.1;
  CHECK(c.lambda() == 0.1);
}

// ------------------------------------------------------------------ optimizer pieces

TEST_CASE("adam step matches the update rule") {
  ModelParams p{{"w", Tensor({2}, {1.0, -2.0})}};
  Gradients g{{"w", Tensor({2}, {0.5, -0.25})}};
  Adam adam;
  adam.step(p, g, 0.1);
  // first step: m_hat = g, v_hat = g^2, so the move is lr * g / (|g| + eps)
  CHECK(p["w"][0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(p["w"][1] == doctest::Approx(-2.0 + 0.1 * 0.25 / (0.25 + 1e-8)).epsilon(1e-14));
  CHECK(adam.steps() == 1);
  CHECK_THROWS(adam.step(p, Gradients{}, 0.1));
}

TEST_CASE("polynomial learning rate decay") {
  TrainConfig c;
  c.iterations = 100;
  CHECK(learning_rate(c, 0) == c.lr);
  CHECK(learning_rate(c, 50) == doctest::Approx(c.lr / 2));
  c.lr_power = 0.9;
  CHECK(learning_rate(c, 50) == doctest::Approx(c.lr * std::pow(0.5, 0.9)));
}

TEST_CASE("pseudo label examples") {
  const PseudoLabels uniform = pseudo_label_from_logits(Tensor({4, 2, 3}, 0.3), 0.9);
  CHECK(uniform.labels == std::vector<std::uint8_t>(6, 255));
  CHECK(uniform.weight == 0.0);

  Tensor confident({3, 1, 4}, -30.0);
  const std::vector<std::uint8_t> truth = {2, 0, 1, 2};
  for (std::size_t p = 0; p < 4; ++p) confident[truth[p] * 4 + p] = 30.0;
  const PseudoLabels sure = pseudo_label_from_logits(confident, 0.968);
  CHECK(sure.labels == truth);
  CHECK(sure.weight == 1.0);

  Rng rng(3);
  const Tensor logits = testutil::randn(rng, {5, 6, 7}, 2.0);
  const double tau = 0.6;
  const PseudoLabels got = pseudo_label_from_logits(logits, tau);
  std::size_t kept = 0;
  for (std::size_t p = 0; p < 42; ++p) {
    double z = 0, mx = -1e300;
    for (std::size_t k = 0; k < 5; ++k) mx = std::max(mx, logits[k * 42 + p]);
    for (std::size_t k = 0; k < 5; ++k) z += std::exp(logits[k * 42 + p] - mx);
    kept += 1.0 / z >= tau;
    CHECK((got.labels[p] != 255) == (1.0 / z >= tau));
  }
  CHECK(got.weight == static_cast<double>(kept) / 42.0);
  CHECK_THROWS_AS(pseudo_label(init_params(1), Tensor({3, 16, 16}), 1.5), ConfigError);
}

TEST_CASE("ema update examples") {
  ModelParams teacher{{"a", Tensor({1}, {1.0})}}, student{{"a", Tensor({1}, {0.0})}};
  ModelParams t = teacher;
  ema_update(t, student, 1.0);
  CHECK(t == teacher);
  ema_update(t, student, 0.0);
  CHECK(t == student);
  t = teacher;
  ema_update(t, student, 0.99);
  CHECK(t["a"][0] == doctest::Approx(0.99).epsilon(1e-15));
  ModelParams wrong{{"b", Tensor({1})}};
  CHECK_THROWS_AS(ema_update(t, wrong, 0.9), ShapeError);
  ModelParams wrong_shape{{"a", Tensor({2})}};
  CHECK_THROWS_AS(ema_update(t, wrong_shape, 0.9), ShapeError);
}

TEST_CASE("splits") {
  CHECK(parse_split("all") == std::vector<int>{0, 1, 2, 3});
  CHECK(parse_split("unseen") == std::vector<int>{4});
  CHECK(parse_split("a2") == std::vector<int>{2});
  CHECK_THROWS_AS(parse_split("a9"), UsageError);
}

// ------------------------------------------------------------------ loops

TEST_CASE("dg training lowers the supervised loss") {
  TrainConfig c = small_config();
  c.width = 128;
  c.height = 96;
  c.model = ModelConfig{};
  c.data_layouts = 50;
  c.iterations = 200;
  const Dataset src = make_source_dataset(c);
  const TrainResult r = train_dg(c, src);
  REQUIRE(r.log.steps.size() == 200);
  CHECK(mean_tail(r.log, 10) < r.log.steps.front().loss_s);
  for (const auto& s : r.log.steps) {
    CHECK(std::isfinite(s.total));
    CHECK(s.loss_a == 0.0);
    CHECK(s.total == s.loss_s);
  }
  CHECK(r.log.lambda == 0.0);
}

TEST_CASE("cs alignment loss falls during training") {
  int falls = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    TrainConfig c = small_config();
    c.width = 64;
    c.height = 48;
    c.data_layouts = 30;
    c.iterations = 150;
    c.align.kind = AlignKind::CS;
    c.seed = seed;
    const TrainResult r = train_dg(c, make_source_dataset(c));
    CHECK(r.log.lambda == 0.25);
    double tail = 0;
    const std::size_t n = r.log.steps.size() / 10;
    for (std::size_t i = r.log.steps.size() - n; i < r.log.steps.size(); ++i) tail += r.log.steps[i].loss_a;
    tail /= static_cast<double>(n);
    falls += tail < r.log.steps.front().loss_a;
    for (const auto& s : r.log.steps) CHECK(s.total == doctest::Approx(s.loss_s + 0.25 * s.loss_a).epsilon(1e-12));
  }
  CHECK(falls == 3);
}

TEST_CASE("training is bit-reproducible") {
  TrainConfig c = small_config();
  c.align.kind = AlignKind::MMD;
  const Dataset src = make_source_dataset(c);
  const TrainResult a = train_dg(c, src), b = train_dg(c, src);
  CHECK(a.params == b.params);
  CHECK(a.log.csv() == b.log.csv());
  c.seed = 2;
  CHECK_FALSE(train_dg(c, src).params == a.params);
}

TEST_CASE("dg rejects bad inputs") {
  TrainConfig c = small_config();
  c.align.kind = AlignKind::L2;
  c.protocol = AppearanceProtocol::parse("single:0");
  const Dataset src = make_source_dataset(small_config());
  CHECK_THROWS_AS(train_dg(c, src), ConfigError);
  TrainConfig plain = small_config();
  plain.width = 64;
  CHECK_THROWS_AS(train_dg(plain, src), DataError);
  CHECK_THROWS_AS(train_dg(small_config(), Dataset{}), DataError);
}

TEST_CASE("uda degenerate config reduces to self-training") {
  TrainConfig c = small_config();
  c.mode = TrainMode::UDA;
  c.mixup = false;
  c.tau = 0.2;
  const Dataset src = make_source_dataset(c);
  const auto tgt = unlabeled_images(make_target_dataset(c), c.target_appearance);
  const TrainResult r = train_uda(c, src, tgt);
  for (const auto& s : r.log.steps) {
    CHECK(s.loss_a == 0.0);
    CHECK(s.loss_m == 0.0);
    CHECK(s.total == doctest::Approx(s.loss_s + s.loss_t).epsilon(1e-15));
  }
  CHECK_THROWS_AS(train_uda(c, src, {}), DataError);
}

TEST_CASE("uda with mixup and alignment logs every term") {
  TrainConfig c = small_config();
  c.mode = TrainMode::UDA;
  c.align.kind = AlignKind::CS;
  c.tau = 0.2;
  const Dataset src = make_source_dataset(c);
  const auto tgt = unlabeled_images(make_target_dataset(c), c.target_appearance);
  const TrainResult r = train_uda(c, src, tgt);
  bool any_m = false, any_t = false;
  for (const auto& s : r.log.steps) {
    any_m = any_m || s.loss_m > 0;
    any_t = any_t || s.loss_t > 0;
    CHECK(s.total == doctest::Approx(s.loss_s + s.loss_t + 0.25 * (s.loss_a + s.loss_m)).epsilon(1e-12));
  }
  CHECK(any_m);
  CHECK(any_t);
}

TEST_CASE("teacher follows the ema recurrence") {
  TrainConfig c = small_config();
  c.mode = TrainMode::UDA;
  c.iterations = 1;
  const Dataset src = make_source_dataset(c);
  const auto tgt = unlabeled_images(make_target_dataset(c), c.target_appearance);
  const TrainResult r = train_uda(c, src, tgt);
  const ModelParams init = init_params(c.seed, c.model);
  for (const auto& [name, t] : r.teacher) {
    const Tensor& s = r.params.at(name);
    for (std::size_t i = 0; i < t.numel(); ++i)
      CHECK(t[i] == doctest::Approx(c.ema * init.at(name)[i] + (1 - c.ema) * s[i]).epsilon(1e-15));
  }
}

TEST_CASE("uda objective only differentiates the student") {
  TrainConfig c = small_config();
  c.align.kind = AlignKind::CS;
  const ModelParams student = init_params(1, c.model);
  Rng rng(4);
  std::vector<std::uint8_t> labels(32 * 32);
  for (auto& v : labels) v = static_cast<std::uint8_t>(rng.index(10));
  std::vector<SourceSample> batch(1);
  batch[0].image = testutil::randu(rng, {3, 32, 32});
  batch[0].paired = testutil::randu(rng, {3, 32, 32});
  batch[0].labels = &labels;
  std::vector<TargetSample> targets(1);
  targets[0].image = testutil::randu(rng, {3, 32, 32});
  targets[0].pseudo = pseudo_label(init_params(9, c.model), targets[0].image, 0.11);
  targets[0].mask = build_class_mask(labels, 32, 32, rng);
  Graph g;
  const ParamNodes pn = add_parameters(g, student);
  const StepNodes n = uda_objective(g, pn, batch, targets, c, 1);
  const auto grads = g.backpropagate(n.total);
  std::set<std::string> names;
  for (const auto& [k, v] : grads) names.insert(k);
  std::set<std::string> expected;
  for (const auto& [k, v] : student) expected.insert(k);
  CHECK(names == expected);
}

TEST_CASE("evaluation of a trained model beats an untrained one on its training data") {
  TrainConfig c = small_config();
  c.width = 64;
  c.height = 48;
  c.data_layouts = 20;
  c.iterations = 200;
  const Dataset src = make_source_dataset(c);
  const TrainResult r = train_dg(c, src);
  const double trained = *scores(evaluate_model(r.params, src, {0, 1, 2, 3})).miou;
  const double untrained = *scores(evaluate_model(init_params(c.seed, c.model), src, {0, 1, 2, 3})).miou;
  CHECK(trained > untrained);
}

TEST_CASE("untrained model on random balanced data scores at chance") {
  const ModelConfig mc;
  const ModelParams params = init_params(21, mc);
  const std::size_t K = mc.num_classes;
  Rng rng(22);
  ConfusionMatrix cm(K);
  for (int i = 0; i < 8; ++i) {
    const Tensor image = testutil::randu(rng, {3, 64, 64});
    std::vector<std::uint8_t> labels(64 * 64);
    for (auto& v : labels) v = static_cast<std::uint8_t>(rng.index(K));
    cm.accumulate(predict_labels(params, image), labels);
  }
  // predictions carry no information about the labels, so each class overlaps at the product of its marginals
  const double n = static_cast<double>(cm.total());
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < K; ++c) {
    double pred = 0.0, truth = 0.0;
    for (std::size_t o = 0; o < K; ++o) {
      pred += static_cast<double>(cm.at(o, c));
      truth += static_cast<double>(cm.at(c, o));
    }
    if (pred + truth == 0.0) continue;
    const double tp = pred * truth / n;
    sum += tp / (pred + truth - tp);
    ++present;
  }
  const double expected = sum / present;
  const double got = *scores(cm).miou;
  CHECK(std::abs(got - expected) < 0.01);
  // no predictor independent of the labels beats uniform guessing, 1 / (2K - 1)
  CHECK(got <= 1.0 / (2.0 * K - 1.0) + 0.01);
}

TEST_CASE("eval hook runs on schedule") {
  TrainConfig c = small_config();
  c.iterations = 6;
  c.eval_every = 2;
  int calls = 0;
  const TrainResult r = train_dg(c, make_source_dataset(c), [&](const ModelParams&) {
    ++calls;
    return 0.5;
  });
  CHECK(calls == 3);
  CHECK(r.log.steps[1].miou_eval.has_value());
  CHECK_FALSE(r.log.steps[2].miou_eval.has_value());
  CHECK(r.log.csv().rfind("iter,loss_s,loss_a,loss_t,loss_m,total,miou_eval\n", 0) == 0);
}

// ------------------------------------------------------------------ experiments

TEST_CASE("sweep axes") {
  CHECK(parse_axis("dataset_size") == SweepAxis::DatasetSize);
  CHECK_THROWS_AS(parse_axis("colour"), UsageError);
  CHECK(default_sweep_values(SweepAxis::Metric).size() == 5);
  CHECK(default_sweep_values(SweepAxis::Blocks).size() == 7);
  CHECK(default_sweep_values(SweepAxis::Appearance).size() == 6);
  CHECK(default_sweep_values(SweepAxis::DatasetSize) == std::vector<std::string>{"250", "500", "1000", "2000"});

  const TrainConfig base;
  CHECK(apply_sweep(base, SweepAxis::Appearance, "night").protocol.to_string() == "single:2");
  CHECK(apply_sweep(base, SweepAxis::Appearance, "fixed").protocol.kind == ProtocolKind::Fixed);
  CHECK(apply_sweep(base, SweepAxis::Blocks, "1+2+3").blocks == std::set<int>{1, 2, 3});
  CHECK(apply_sweep(base, SweepAxis::DatasetSize, "250").data_layouts == 250);
  CHECK(apply_sweep(base, SweepAxis::Metric, "mmd").align.kind == AlignKind::MMD);
  CHECK_THROWS_AS(apply_sweep(base, SweepAxis::Appearance, "dusk"), UsageError);
}

TEST_CASE("metric ablation produces one row per run and a stable report") {
  ExperimentSpec spec;
  spec.base = small_config();
  spec.base.iterations = 2;
  spec.axis = SweepAxis::Metric;
  DataCache cache;
  const auto records = run_ablation(spec, cache, 2);
  REQUIRE(records.size() == 15);
  for (const auto& r : records) {
    CHECK(r.ok());
    CHECK(r.miou >= 0.0);
    CHECK(r.miou <= 1.0);
  }
  CHECK(records[0].value == "none");
  CHECK(records[14].value == "cs");
  CHECK(records[14].seed == 3);

  const std::string csv = results_csv(records);
  const auto parsed = parse_results_csv(csv);
  REQUIRE(parsed.size() == 15);
  CHECK(results_csv(parsed) == csv);
  CHECK(report_svg(parsed) == report_svg(parse_results_csv(csv)));
  CHECK(report_svg(parsed).find("<svg") == 0);

  // same seeds give the same scores
  const auto again = run_ablation(spec, cache, 1);
  for (std::size_t i = 0; i < records.size(); ++i) CHECK(again[i].miou == records[i].miou);
}

TEST_CASE("failed runs are recorded and excluded from means") {
  ExperimentSpec spec;
  spec.base = small_config();
  spec.base.lr = 1e300;  // blows the weights up after the first step
  spec.base.iterations = 3;
  spec.axis = SweepAxis::DatasetSize;
  spec.values = {"4"};
  spec.seeds = {1};
  DataCache cache;
  const auto records = run_ablation(spec, cache, 1);
  REQUIRE(records.size() == 1);
  CHECK(records[0].status.rfind("failed: ", 0) == 0);

  std::vector<RunRecord> mixed = {{"metric", "cs", 1, "ok", 0.4, 0.5, 1}, {"metric", "cs", 2, "failed: boom", 0, 0, 1},
                                  {"metric", "cs", 3, "ok", 0.6, 0.7, 1}, {"metric", "none", 1, "failed: x", 0, 0, 1}};
  const auto summary = summarize(mixed);
  REQUIRE(summary.size() == 2);
  CHECK(*summary[0].mean == doctest::Approx(0.5));
  CHECK_FALSE(summary[1].mean.has_value());
  CHECK_THROWS_AS(parse_results_csv("a,b\n"), DataError);
}

TEST_CASE("invalid specs are rejected before any run") {
  ExperimentSpec spec;
  spec.base = small_config();
  spec.axis = SweepAxis::Metric;
  spec.base.protocol = AppearanceProtocol::parse("single:0");
  DataCache cache;
  CHECK_THROWS_AS(run_ablation(spec, cache, 1), ConfigError);
  spec.base = small_config();
  spec.seeds.clear();
  CHECK_THROWS_AS(spec.validate(), UsageError);
}
