#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "dataset.hpp"
#include "metrics.hpp"
#include "trainer.hpp"

namespace alignlab {

enum class SweepAxis { Appearance, Metric, Blocks, DatasetSize };

SweepAxis parse_axis(const std::string& text);  // appearance | metric | blocks | dataset_size
std::string to_string(SweepAxis axis);
std::vector<std::string> default_sweep_values(SweepAxis axis);

// appearance: sunset|noon|night|fog|fixed|random; metric: none|consistency|l2|mmd|cs;
// blocks: "1+2+3" style subsets; dataset_size: layout count.
TrainConfig apply_sweep(TrainConfig base, SweepAxis axis, const std::string& value);

struct ExperimentSpec {
  std::string name = "ablation";
  TrainConfig base;
  SweepAxis axis = SweepAxis::Metric;
  std::vector<std::string> values;  // empty -> default_sweep_values(axis)
  std::vector<std::uint64_t> seeds{1, 2, 3};

  void validate() const;
};

struct RunRecord {
  std::string axis;
  std::string value;
  std::uint64_t seed = 0;
  std::string status = "ok";  // "ok" or "failed: <reason>"
  double miou = 0.0;
  double macc = 0.0;
  double seconds = 0.0;

  bool ok() const { return status == "ok"; }
};

// Generated splits shared between runs; safe to use from several threads.
class DataCache {
 public:
  std::shared_ptr<const Dataset> source(const TrainConfig& c);
  std::shared_ptr<const Dataset> test(const TrainConfig& c);
  std::shared_ptr<const std::vector<Tensor>> target(const TrainConfig& c);

 private:
  template <typename T>
  std::shared_ptr<const T> get(std::map<std::string, std::shared_ptr<const T>>& slot, const std::string& key,
                               const std::function<T()>& make);
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Dataset>> sources_, tests_;
  std::map<std::string, std::shared_ptr<const std::vector<Tensor>>> targets_;
};

struct RunOutcome {
  TrainResult train;
  std::map<std::string, Scores> splits;
  double seconds = 0.0;
};

// Trains one configuration and scores it on each named split of the
// generated test set.
RunOutcome run_config(const TrainConfig& config, DataCache& cache, const std::vector<std::string>& splits);

// Worker count from ALIGNLAB_THREADS, capped by the hardware and by `requested` when nonzero.
int worker_count(int requested);

using ProgressFn = std::function<void(const RunRecord&)>;

// Runs values x seeds on up to `threads` workers. Records come back in
// sweep order regardless of completion order; failed runs keep their status
// and are excluded from means.
std::vector<RunRecord> run_ablation(const ExperimentSpec& spec, DataCache& cache, int threads,
                                    const ProgressFn& progress = {});

std::string results_csv(const std::vector<RunRecord>& records);  // axis,value,seed,status,miou,macc,seconds
std::vector<RunRecord> parse_results_csv(const std::string& text);

struct ValueSummary {
  std::string value;
  std::vector<double> miou;  // ok runs, in seed order
  std::optional<double> mean;
};
std::vector<ValueSummary> summarize(const std::vector<RunRecord>& records);

// Mean line over sweep values with per-seed markers.
std::string report_svg(const std::vector<RunRecord>& records);

}  // namespace alignlab
