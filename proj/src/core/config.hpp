#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "losses.hpp"
#include "scenegen.hpp"
#include "segmodel.hpp"

namespace alignlab {

enum class TrainMode { DG, UDA };

struct TrainConfig {
  TrainMode mode = TrainMode::DG;
  int iterations = 2000;
  int batch_size = 2;
  double lr = 6e-4;
  double lr_power = 1.0;  // polynomial decay exponent
  std::uint64_t seed = 1;
  AppearanceProtocol protocol{ProtocolKind::Random, 0};
  // symmetric source loss: average L_S over both drawn appearances
  bool symmetric_source = false;

  AlignmentMetric align{AlignKind::None};
  std::set<int> blocks{1, 2, 3, 4};
  double align_lambda = 0.0;  // 0 selects 1 / |blocks|

  bool mixup = true;
  double tau = 0.968;
  double ema = 0.99;
  int target_appearance = kDuskAppearance;

  ModelConfig model;

  int eval_every = 0;  // 0: evaluate only after the last iteration
  std::string eval_split = "all";

  std::uint64_t data_seed = 7;
  int data_layouts = 500;
  int test_layouts = 100;
  int width = 128;
  int height = 96;

  // Effective alignment weight.
  double lambda() const;
  void validate() const;
};

// Keys are flat, dotted names ("align.metric = cs"); '#' starts a comment.
// Unknown keys and malformed values raise ConfigError.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const TrainConfig& config, const std::string& key);
const std::vector<std::string>& config_keys();
std::string config_text(const TrainConfig& config);

std::string to_string(TrainMode mode);
TrainMode parse_mode(const std::string& text);
std::string blocks_string(const std::set<int>& blocks);
std::set<int> parse_blocks(const std::string& text);

}  // namespace alignlab
