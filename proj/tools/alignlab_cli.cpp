// alignlab command line: generate | train | eval | ablate | report
#include <CLI11.hpp>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "alignlab/alignlab.h"

namespace {

int report_status(alignlab_status s, const char* what) {
  if (s == ALIGNLAB_OK) return 0;
  std::fprintf(stderr, "alignlab %s: %s\n", what, alignlab_last_error());
  return static_cast<int>(s);
}

struct ConfigHandle {
  alignlab_config* cfg = nullptr;
  ~ConfigHandle() { alignlab_config_destroy(cfg); }
};

struct DatasetHandle {
  alignlab_dataset* ds = nullptr;
  ~DatasetHandle() { alignlab_dataset_close(ds); }
};

struct ModelHandle {
  alignlab_model* model = nullptr;
  ~ModelHandle() { alignlab_model_destroy(model); }
};

// Loads --config if given, then applies --set key=value overrides.
alignlab_status build_config(const std::string& path, const std::vector<std::string>& overrides, ConfigHandle& out) {
  alignlab_status s = path.empty() ? alignlab_config_create(&out.cfg) : alignlab_config_load(path.c_str(), &out.cfg);
  if (s != ALIGNLAB_OK) return s;
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "alignlab: --set expects key=value, got '%s'\n", kv.c_str());
      return ALIGNLAB_E_USAGE;
    }
    s = alignlab_config_set(out.cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (s != ALIGNLAB_OK) return s;
  }
  return ALIGNLAB_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"alignlab: multi-appearance feature alignment for semantic segmentation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(alignlab_version()));

  // generate
  auto* gen = app.add_subcommand("generate", "render a synthetic dataset to disk");
  std::uint64_t gen_seed = 7;
  int gen_layouts = 100, gen_width = 128, gen_height = 96;
  std::string gen_out;
  bool gen_unseen = false;
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--layouts", gen_layouts, "number of layouts");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--width", gen_width, "image width");
  gen->add_option("--height", gen_height, "image height");
  gen->add_flag("--unseen", gen_unseen, "also render the held-out dusk appearance (a4)");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string train_config, train_mode, train_out, train_dataset;
  std::vector<std::string> train_set;
  train->add_option("--config", train_config, "key = value config file");
  train->add_option("--mode", train_mode, "dg or uda (overrides the config)");
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--dataset", train_dataset, "source dataset directory (default: generate from data.* keys)");
  train->add_option("--set", train_set, "config override key=value (repeatable)");

  // eval
  auto* ev = app.add_subcommand("eval", "score a checkpoint on a dataset");
  std::string ev_ckpt, ev_dataset, ev_split = "all", ev_csv, ev_txt;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--dataset", ev_dataset, "dataset directory")->required();
  ev->add_option("--split", ev_split, "all | unseen | a0..a4");
  ev->add_option("--csv", ev_csv, "write per-class CSV here");
  ev->add_option("--txt", ev_txt, "write the text table here as well");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run a sweep over one axis");
  std::string ab_config, ab_axis, ab_values, ab_out;
  std::vector<std::string> ab_set;
  int ab_seeds = 3, ab_threads = 0;
  ab->add_option("--config", ab_config, "base config file");
  ab->add_option("--axis", ab_axis, "appearance | metric | blocks | dataset_size")->required();
  ab->add_option("--values", ab_values, "comma separated sweep values (default: all for the axis)");
  ab->add_option("--seeds", ab_seeds, "seeds per value (1..n)");
  ab->add_option("--threads", ab_threads, "worker threads (0: ALIGNLAB_THREADS or all cores)");
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--set", ab_set, "config override key=value (repeatable)");

  // report
  auto* rep = app.add_subcommand("report", "redraw the SVG chart from a results CSV");
  std::string rep_csv, rep_svg;
  rep->add_option("--csv", rep_csv, "results.csv from ablate")->required();
  rep->add_option("--svg", rep_svg, "output SVG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : ALIGNLAB_E_USAGE;
  }

  if (*gen) {
    return report_status(alignlab_generate(gen_seed, gen_layouts, gen_width, gen_height, gen_unseen ? 1 : 0,
                                           gen_out.c_str()),
                         "generate");
  }

  if (*train) {
    ConfigHandle cfg;
    if (auto s = build_config(train_config, train_set, cfg); s != ALIGNLAB_OK) return report_status(s, "train");
    if (!train_mode.empty()) {
      if (auto s = alignlab_config_set(cfg.cfg, "mode", train_mode.c_str()); s != ALIGNLAB_OK) return report_status(s, "train");
    }
    DatasetHandle ds;
    if (!train_dataset.empty()) {
      if (auto s = alignlab_dataset_open(train_dataset.c_str(), &ds.ds); s != ALIGNLAB_OK) return report_status(s, "train");
    }
    const int rc = report_status(alignlab_train(cfg.cfg, ds.ds, train_out.c_str()), "train");
    if (rc == 0) std::printf("wrote %s/model.ckpt, train_log.csv, run.json\n", train_out.c_str());
    return rc;
  }

  if (*ev) {
    ModelHandle model;
    if (auto s = alignlab_model_load(ev_ckpt.c_str(), &model.model); s != ALIGNLAB_OK) return report_status(s, "eval");
    DatasetHandle ds;
    if (auto s = alignlab_dataset_open(ev_dataset.c_str(), &ds.ds); s != ALIGNLAB_OK) return report_status(s, "eval");
    // the table always goes to stdout; --txt keeps a copy
    const std::filesystem::path txt =
        ev_txt.empty() ? std::filesystem::temp_directory_path() / ("alignlab_eval_" + std::to_string(::getpid()) + ".txt")
                       : std::filesystem::path(ev_txt);
    double miou = 0, macc = 0;
    auto s = alignlab_evaluate(model.model, ds.ds, ev_split.c_str(), ev_csv.empty() ? nullptr : ev_csv.c_str(),
                               txt.c_str(), &miou, &macc);
    if (s != ALIGNLAB_OK) return report_status(s, "eval");
    std::ifstream in(txt);
    std::cout << in.rdbuf();
    if (ev_txt.empty()) std::filesystem::remove(txt);
    std::cout << "split " << ev_split << ": mIoU " << miou << "  mAcc " << macc << "\n";
    return 0;
  }

  if (*ab) {
    ConfigHandle cfg;
    if (auto s = build_config(ab_config, ab_set, cfg); s != ALIGNLAB_OK) return report_status(s, "ablate");
    const int rc = report_status(alignlab_ablate(cfg.cfg, ab_axis.c_str(), ab_values.empty() ? nullptr : ab_values.c_str(),
                                                 ab_seeds, ab_threads, ab_out.c_str()),
                                 "ablate");
    if (rc == 0) std::printf("wrote %s/results.csv and %s/report.svg\n", ab_out.c_str(), ab_out.c_str());
    return rc;
  }

  if (*rep) return report_status(alignlab_report(rep_csv.c_str(), rep_svg.c_str()), "report");
  return ALIGNLAB_E_USAGE;
}
