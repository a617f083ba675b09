#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "dataset.hpp"
#include "graph.hpp"
#include "metrics.hpp"
#include "mixup.hpp"
#include "segmodel.hpp"

namespace alignlab {

// Layout index ranges of the generated splits. Sources use [0, layouts).
inline constexpr int kTestLayoutOffset = 1'000'000;
inline constexpr int kTargetLayoutOffset = 2'000'000;

Dataset make_source_dataset(const TrainConfig& config);  // appearances 0..3
Dataset make_test_dataset(const TrainConfig& config);    // appearances 0..4
Dataset make_target_dataset(const TrainConfig& config);  // target appearance only

// Images of one appearance with the labels dropped.
std::vector<Tensor> unlabeled_images(const Dataset& dataset, int appearance_id);

// "all" -> 0..3, "unseen" -> 4, "a0".."a4" -> that appearance.
std::vector<int> parse_split(const std::string& split);

ConfusionMatrix evaluate_model(const ModelParams& params, const Dataset& dataset, const std::vector<int>& appearances);

class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(ModelParams& params, const Gradients& grads, double lr);
  int steps() const { return t_; }

 private:
  double b1_, b2_, eps_;
  int t_ = 0;
  NamedTensors m_, v_;
};

// lr * (1 - iter / iterations)^power for iter = 0 .. iterations-1.
double learning_rate(const TrainConfig& config, int iter);

struct PseudoLabels {
  std::vector<std::uint8_t> labels;  // 255 where the teacher is not confident
  double weight = 0.0;               // fraction of confident pixels
};

PseudoLabels pseudo_label(const ModelParams& teacher, const Tensor& image, double tau);
PseudoLabels pseudo_label_from_logits(const Tensor& logits, double tau);

// teacher <- m * teacher + (1 - m) * student
void ema_update(ModelParams& teacher, const ModelParams& student, double momentum);

struct StepRecord {
  int iter = 0;  // 1-based
  double loss_s = 0, loss_a = 0, loss_t = 0, loss_m = 0, total = 0;
  std::optional<double> miou_eval;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  double lambda = 0.0;
  double seconds = 0.0;
  std::string csv() const;  // iter,loss_s,loss_a,loss_t,loss_m,total,miou_eval
};

struct TrainResult {
  ModelParams params;
  ModelParams teacher;  // UDA only
  TrainLog log;
};

// Called on a snapshot of the parameters; returns mIoU in [0, 1].
using EvalHook = std::function<double(const ModelParams&)>;

// One source sample of a step: the appearance j image feeds the supervised
// loss, the j' image only the alignment term.
struct SourceSample {
  Tensor image;
  Tensor paired;  // empty when alignment is off
  const std::vector<std::uint8_t>* labels = nullptr;
};

struct TargetSample {
  Tensor image;
  PseudoLabels pseudo;
  std::optional<BinaryMask> mask;  // set when mixup is on
};

struct StepNodes {
  NodeId loss_s, loss_a, loss_t, loss_m, total;
};

// Per-step objectives on an already populated graph. Terms are averaged
// over the batch; loss_a and loss_m are the unweighted block sums and the
// total applies the config's lambda to both.
StepNodes dg_objective(Graph& graph, const ParamNodes& params, const std::vector<SourceSample>& batch,
                       const TrainConfig& config, std::uint64_t subsample_seed);
StepNodes uda_objective(Graph& graph, const ParamNodes& params, const std::vector<SourceSample>& batch,
                        const std::vector<TargetSample>& targets, const TrainConfig& config,
                        std::uint64_t subsample_seed);

// Per sample the training stream draws the source index, then the appearance
// pair, then (UDA) the target index. Class masks come from a separate stream.
TrainResult train_dg(const TrainConfig& config, const Dataset& source, const EvalHook& eval = {});
TrainResult train_uda(const TrainConfig& config, const Dataset& source, const std::vector<Tensor>& target,
                      const EvalHook& eval = {});

}  // namespace alignlab
