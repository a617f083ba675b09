#include "trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "error.hpp"
#include "losses.hpp"
#include "rng.hpp"

namespace alignlab {

namespace {

SceneConfig scene_config(const TrainConfig& c) {
  SceneConfig s;
  s.width = c.width;
  s.height = c.height;
  return s;
}

NodeId batch_mean(Graph& g, const std::vector<NodeId>& terms) {
  if (terms.empty()) return g.constant(Tensor::scalar(0.0));
  NodeId acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = g.add(acc, terms[i]);
  return g.scale(acc, 1.0 / static_cast<double>(terms.size()));
}

NodeId align_term(Graph& g, const PyramidNodes& a, const PyramidNodes& b, const TrainConfig& c,
                  std::uint64_t subsample_seed) {
  if (c.align.kind == AlignKind::Consistency) return logit_consistency(g, a.logits, b.logits);
  AlignmentMetric m = c.align;
  m.subsample_seed = subsample_seed;
  return alignment_terms(g, a, b, m, c.blocks).raw_sum;
}

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void check_source(const TrainConfig& config, const Dataset& source) {
  if (source.entries.empty()) throw DataError("source dataset is empty");
  for (int j = 0; j < kNumAppearances; ++j) {
    const bool needed = config.protocol.kind != ProtocolKind::Single || config.protocol.single_appearance == j;
    if (needed && !source.has_appearance(j)) {
      throw DataError("source dataset lacks appearance " + std::to_string(j) + " required by protocol " +
                      config.protocol.to_string());
    }
  }
  const auto& l = source.entries.front().labels;
  if (l.width != config.width || l.height != config.height) {
    throw DataError("source images are " + std::to_string(l.width) + "x" + std::to_string(l.height) +
                    " but the config expects " + std::to_string(config.width) + "x" + std::to_string(config.height));
  }
}

struct Draw {
  std::size_t index;
  AppearancePair pair;
};

Draw draw_source(const TrainConfig& c, const Dataset& source, Rng& rng) {
  const std::size_t i = rng.index(source.size());
  const AppearancePair pair = sample_appearance_pair(c.protocol, source.seed, source.entries[i].layout_index, rng);
  return {i, pair};
}

SourceSample make_source_sample(const TrainConfig& c, const Dataset& source, const Draw& d) {
  const auto& e = source.entries[d.index];
  SourceSample s;
  s.image = image_tensor(e.rgb.at(d.pair.first));
  if (c.align.kind != AlignKind::None || c.symmetric_source) s.paired = image_tensor(e.rgb.at(d.pair.second));
  s.labels = &e.labels.labels;
  return s;
}

bool should_eval(const TrainConfig& c, int iter) {
  return iter == c.iterations || (c.eval_every > 0 && iter % c.eval_every == 0);
}

void record_step(TrainLog& log, int iter, Graph& g, const StepNodes& n) {
  StepRecord r;
  r.iter = iter;
  r.loss_s = g.value(n.loss_s).item();
  r.loss_a = g.value(n.loss_a).item();
  r.loss_t = g.value(n.loss_t).item();
  r.loss_m = g.value(n.loss_m).item();
  r.total = g.value(n.total).item();
  log.steps.push_back(r);
}

}  // namespace

Dataset make_source_dataset(const TrainConfig& c) {
  return build_dataset(c.data_seed, 0, c.data_layouts, scene_config(c), {0, 1, 2, 3});
}

Dataset make_test_dataset(const TrainConfig& c) {
  return build_dataset(c.data_seed, kTestLayoutOffset, c.test_layouts, scene_config(c), {0, 1, 2, 3, 4});
}

Dataset make_target_dataset(const TrainConfig& c) {
  return build_dataset(c.data_seed, kTargetLayoutOffset, c.data_layouts, scene_config(c), {c.target_appearance});
}

std::vector<Tensor> unlabeled_images(const Dataset& dataset, int appearance_id) {
  std::vector<Tensor> out;
  out.reserve(dataset.size());
  for (const auto& e : dataset.entries) {
    auto it = e.rgb.find(appearance_id);
    if (it == e.rgb.end()) {
      throw DataError("layout " + std::to_string(e.layout_index) + " has no appearance " + std::to_string(appearance_id));
    }
    out.push_back(image_tensor(it->second));
  }
  return out;
}

std::vector<int> parse_split(const std::string& split) {
  if (split == "all") return {0, 1, 2, 3};
  if (split == "unseen") return {kDuskAppearance};
  if (split.size() == 2 && split[0] == 'a' && split[1] >= '0' && split[1] <= '4') return {split[1] - '0'};
  throw UsageError("unknown split '" + split + "' (expected all, unseen or a0..a4)");
}

ConfusionMatrix evaluate_model(const ModelParams& params, const Dataset& dataset, const std::vector<int>& appearances) {
  const ModelConfig mc = infer_config(params);
  ConfusionMatrix cm(mc.num_classes);
  for (int j : appearances) {
    if (!dataset.has_appearance(j)) throw DataError("dataset lacks appearance " + std::to_string(j));
  }
  for (const auto& e : dataset.entries)
    for (int j : appearances) cm.accumulate(predict_labels(params, image_tensor(e.rgb.at(j))), e.labels.labels);
  return cm;
}

void Adam::step(ModelParams& params, const Gradients& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) throw Error("adam: no gradient for '" + name + "'");
    const Tensor& g = git->second;
    if (g.shape() != p.shape()) throw ShapeError("adam: gradient shape mismatch for '" + name + "'");
    auto [mit, fresh] = m_.try_emplace(name, p.shape());
    auto vit = v_.try_emplace(name, p.shape()).first;
    (void)fresh;
    auto pv = p.data();
    auto mv = mit->second.data();
    auto vv = vit->second.data();
    auto gv = g.data();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      mv[i] = b1_ * mv[i] + (1.0 - b1_) * gv[i];
      vv[i] = b2_ * vv[i] + (1.0 - b2_) * gv[i] * gv[i];
      pv[i] -= lr * (mv[i] / c1) / (std::sqrt(vv[i] / c2) + eps_);
    }
  }
}

double learning_rate(const TrainConfig& c, int iter) {
  return c.lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(c.iterations), c.lr_power);
}

PseudoLabels pseudo_label_from_logits(const Tensor& logits, double tau) {
  if (logits.rank() != 3) throw ShapeError("pseudo_label: expected (K,H,W) logits");
  const std::size_t K = logits.dim(0), P = logits.dim(1) * logits.dim(2);
  PseudoLabels out;
  out.labels.assign(P, kIgnoreLabel);
  std::size_t kept = 0;
  for (std::size_t p = 0; p < P; ++p) {
    double mx = logits[p];
    std::size_t arg = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (logits[k * P + p] > mx) {
        mx = logits[k * P + p];
        arg = k;
      }
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(logits[k * P + p] - mx);
    const double top = 1.0 / z;
    if (top >= tau) {
      out.labels[p] = static_cast<std::uint8_t>(arg);
      ++kept;
    }
  }
  out.weight = static_cast<double>(kept) / static_cast<double>(P);
  return out;
}

PseudoLabels pseudo_label(const ModelParams& teacher, const Tensor& image, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("pseudo_label: tau must lie in (0, 1)");
  return pseudo_label_from_logits(forward(teacher, image).logits, tau);
}

void ema_update(ModelParams& teacher, const ModelParams& student, double momentum) {
  if (teacher.size() != student.size()) throw ShapeError("ema_update: parameter sets differ");
  for (auto& [name, t] : teacher) {
    auto it = student.find(name);
    if (it == student.end()) throw ShapeError("ema_update: student lacks '" + name + "'");
    if (it->second.shape() != t.shape()) throw ShapeError("ema_update: shape mismatch for '" + name + "'");
    auto tv = t.data();
    auto sv = it->second.data();
    for (std::size_t i = 0; i < tv.size(); ++i) tv[i] = momentum * tv[i] + (1.0 - momentum) * sv[i];
  }
}

std::string TrainLog::csv() const {
  std::string out = "iter,loss_s,loss_a,loss_t,loss_m,total,miou_eval\n";
  char buf[256];
  for (const auto& r : steps) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%.10g,", r.iter, r.loss_s, r.loss_a, r.loss_t,
                  r.loss_m, r.total);
    out += buf;
    if (r.miou_eval) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.miou_eval);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

StepNodes dg_objective(Graph& g, const ParamNodes& params, const std::vector<SourceSample>& batch,
                       const TrainConfig& c, std::uint64_t subsample_seed) {
  if (batch.empty()) throw Error("dg_objective: empty batch");
  const bool align = c.align.kind != AlignKind::None;
  std::vector<NodeId> ls, la;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    const PyramidNodes pa = forward(g, params, g.input("source" + std::to_string(b), s.image));
    NodeId ce = cross_entropy(g, pa.logits, *s.labels);
    if (align || c.symmetric_source) {
      const PyramidNodes pb = forward(g, params, g.input("paired" + std::to_string(b), s.paired));
      if (c.symmetric_source) ce = g.scale(g.add(ce, cross_entropy(g, pb.logits, *s.labels)), 0.5);
      if (align) la.push_back(align_term(g, pa, pb, c, stream_seed(subsample_seed, b)));
    }
    ls.push_back(ce);
  }
  StepNodes n;
  n.loss_s = batch_mean(g, ls);
  n.loss_a = batch_mean(g, la);
  n.loss_t = g.constant(Tensor::scalar(0.0));
  n.loss_m = g.constant(Tensor::scalar(0.0));
  n.total = align ? g.add(n.loss_s, g.scale(n.loss_a, c.lambda())) : n.loss_s;
  return n;
}

StepNodes uda_objective(Graph& g, const ParamNodes& params, const std::vector<SourceSample>& batch,
                        const std::vector<TargetSample>& targets, const TrainConfig& c, std::uint64_t subsample_seed) {
  if (batch.empty() || batch.size() != targets.size()) throw Error("uda_objective: batch size mismatch");
  const bool align = c.align.kind != AlignKind::None;
  std::vector<NodeId> ls, la, lt, lm;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    const auto& t = targets[b];
    const std::string tag = std::to_string(b);
    const PyramidNodes pa = forward(g, params, g.input("source" + tag, s.image));
    NodeId ce = cross_entropy(g, pa.logits, *s.labels);
    std::optional<PyramidNodes> pb;
    if (align || c.symmetric_source) pb = forward(g, params, g.input("paired" + tag, s.paired));
    if (c.symmetric_source) ce = g.scale(g.add(ce, cross_entropy(g, pb->logits, *s.labels)), 0.5);
    ls.push_back(ce);
    if (align) la.push_back(align_term(g, pa, *pb, c, stream_seed(subsample_seed, 2 * b)));

    if (t.mask) {
      const BinaryMask& mask = *t.mask;
      const auto labels = mixed_label(*s.labels, mask, t.pseudo.labels);
      std::vector<double> weights(labels.size());
      for (std::size_t p = 0; p < weights.size(); ++p) weights[p] = mask.mask[p] ? 1.0 : t.pseudo.weight;
      const PyramidNodes ma = forward(g, params, g.input("mixed" + tag, mix(s.image, mask, t.image)));
      lt.push_back(cross_entropy(g, ma.logits, labels, weights));
      if (align) {
        const PyramidNodes mb = forward(g, params, g.input("mixed_paired" + tag, mix(s.paired, mask, t.image)));
        lm.push_back(align_term(g, ma, mb, c, stream_seed(subsample_seed, 2 * b + 1)));
      }
    } else {
      const PyramidNodes pt = forward(g, params, g.input("target" + tag, t.image));
      lt.push_back(g.scale(cross_entropy(g, pt.logits, t.pseudo.labels), t.pseudo.weight));
    }
  }
  StepNodes n;
  n.loss_s = batch_mean(g, ls);
  n.loss_a = batch_mean(g, la);
  n.loss_t = batch_mean(g, lt);
  n.loss_m = batch_mean(g, lm);
  n.total = g.add(n.loss_s, n.loss_t);
  if (align) n.total = g.add(n.total, g.scale(g.add(n.loss_a, n.loss_m), c.lambda()));
  return n;
}

TrainResult train_dg(const TrainConfig& config, const Dataset& source, const EvalHook& eval) {
  config.validate();
  check_source(config, source);
  const double t0 = now_seconds();
  TrainResult res;
  res.params = init_params(config.seed, config.model);
  res.log.lambda = config.align.kind == AlignKind::None ? 0.0 : config.lambda();
  Adam adam;
  Rng rng(stream_seed(config.seed, static_cast<std::uint64_t>(StreamTag::Train)));
  for (int it = 0; it < config.iterations; ++it) {
    std::vector<SourceSample> batch;
    for (int b = 0; b < config.batch_size; ++b) batch.push_back(make_source_sample(config, source, draw_source(config, source, rng)));
    Graph g;
    const ParamNodes pn = add_parameters(g, res.params);
    const StepNodes n = dg_objective(g, pn, batch, config,
                                     stream_seed(config.seed, static_cast<std::uint64_t>(StreamTag::Subsample), it));
    record_step(res.log, it + 1, g, n);
    adam.step(res.params, g.backpropagate(n.total), learning_rate(config, it));
    if (eval && should_eval(config, it + 1)) {
      const ModelParams snapshot = res.params;
      res.log.steps.back().miou_eval = eval(snapshot);
    }
  }
  res.log.seconds = now_seconds() - t0;
  return res;
}

TrainResult train_uda(const TrainConfig& config, const Dataset& source, const std::vector<Tensor>& target,
                      const EvalHook& eval) {
  config.validate();
  check_source(config, source);
  if (target.empty()) throw DataError("target dataset is empty");
  const auto& l = source.entries.front().labels;
  for (const auto& t : target)
    if (t.rank() != 3 || t.dim(0) != 3 || t.dim(1) != static_cast<std::size_t>(l.height) ||
        t.dim(2) != static_cast<std::size_t>(l.width))
      throw DataError("target image shape " + shape_string(t.shape()) + " does not match the source resolution");

  const double t0 = now_seconds();
  TrainResult res;
  res.params = init_params(config.seed, config.model);
  res.teacher = res.params;
  res.log.lambda = config.align.kind == AlignKind::None ? 0.0 : config.lambda();
  Adam adam;
  Rng rng(stream_seed(config.seed, static_cast<std::uint64_t>(StreamTag::Train)));
  Rng mix_rng(stream_seed(config.seed, static_cast<std::uint64_t>(StreamTag::Mixup)));
  const auto W = static_cast<std::size_t>(l.width), H = static_cast<std::size_t>(l.height);

  for (int it = 0; it < config.iterations; ++it) {
    std::vector<SourceSample> batch;
    std::vector<TargetSample> targets;
    for (int b = 0; b < config.batch_size; ++b) {
      batch.push_back(make_source_sample(config, source, draw_source(config, source, rng)));
      TargetSample t;
      t.image = target[rng.index(target.size())];
      targets.push_back(std::move(t));
    }
    for (std::size_t b = 0; b < batch.size(); ++b) {
      targets[b].pseudo = pseudo_label(res.teacher, targets[b].image, config.tau);
      if (config.mixup) targets[b].mask = build_class_mask(*batch[b].labels, W, H, mix_rng);
    }
    Graph g;
    const ParamNodes pn = add_parameters(g, res.params);
    const StepNodes n = uda_objective(g, pn, batch, targets, config,
                                      stream_seed(config.seed, static_cast<std::uint64_t>(StreamTag::Subsample), it));
    record_step(res.log, it + 1, g, n);
    adam.step(res.params, g.backpropagate(n.total), learning_rate(config, it));
    ema_update(res.teacher, res.params, config.ema);
    if (eval && should_eval(config, it + 1)) {
      const ModelParams snapshot = res.params;
      res.log.steps.back().miou_eval = eval(snapshot);
    }
  }
  res.log.seconds = now_seconds() - t0;
  return res;
}

}  // namespace alignlab
