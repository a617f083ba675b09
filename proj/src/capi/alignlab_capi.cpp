#include "alignlab/alignlab.h"

#include <json.hpp>

#include <cstring>
#include <exception>
#include <string>

#include "checkpoint.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "experiments.hpp"
#include "netpbm.hpp"
#include "trainer.hpp"

struct alignlab_dataset {
  alignlab::Dataset data;
};

struct alignlab_config {
  alignlab::TrainConfig config;
};

struct alignlab_model {
  alignlab::ModelParams params;
};

namespace {

thread_local std::string g_last_error;

alignlab_status fail(alignlab_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

template <typename F>
alignlab_status guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return ALIGNLAB_OK;
  } catch (const alignlab::UsageError& e) {
    return fail(ALIGNLAB_E_USAGE, e.what());
  } catch (const alignlab::DataError& e) {
    return fail(ALIGNLAB_E_DATA, e.what());
  } catch (const alignlab::ShapeError& e) {
    return fail(ALIGNLAB_E_DATA, e.what());
  } catch (const alignlab::NumericError& e) {
    return fail(ALIGNLAB_E_NUMERIC, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(ALIGNLAB_E_DATA, std::string("malformed JSON: ") + e.what());
  } catch (const std::exception& e) {
    return fail(ALIGNLAB_E_INTERNAL, e.what());
  } catch (...) {
    return fail(ALIGNLAB_E_INTERNAL, "unknown exception");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw alignlab::UsageError(what);
}

std::vector<std::string> split_values(const char* text) {
  std::vector<std::string> out;
  std::string cur;
  for (const char* p = text; *p; ++p) {
    if (*p == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (*p != ' ') {
      cur += *p;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) { alignlab::write_file(path, text); }

}  // namespace

extern "C" {

const char* alignlab_version(void) { return "0.1.0"; }

const char* alignlab_last_error(void) { return g_last_error.c_str(); }

alignlab_status alignlab_generate(uint64_t seed, int layouts, int width, int height, int include_unseen,
                                  const char* out_dir) {
  return guarded([&] {
    require(out_dir != nullptr, "generate: out_dir is NULL");
    if (layouts <= 0) throw alignlab::UsageError("generate: --layouts must be positive, got " + std::to_string(layouts));
    alignlab::SceneConfig sc;
    sc.width = width;
    sc.height = height;
    std::vector<int> apps{0, 1, 2, 3};
    if (include_unseen) apps.push_back(alignlab::kDuskAppearance);
    alignlab::write_dataset(alignlab::build_dataset(seed, 0, layouts, sc, apps), out_dir);
  });
}

alignlab_status alignlab_dataset_open(const char* dir, alignlab_dataset** out) {
  return guarded([&] {
    require(dir && out, "dataset_open: NULL argument");
    *out = nullptr;
    auto ds = std::make_unique<alignlab_dataset>();
    ds->data = alignlab::read_dataset(dir);
    *out = ds.release();
  });
}

void alignlab_dataset_close(alignlab_dataset* ds) { delete ds; }

alignlab_status alignlab_dataset_size(const alignlab_dataset* ds, size_t* out) {
  return guarded([&] {
    require(ds && out, "dataset_size: NULL argument");
    *out = ds->data.size();
  });
}

alignlab_status alignlab_dataset_shape(const alignlab_dataset* ds, int* width, int* height) {
  return guarded([&] {
    require(ds && width && height, "dataset_shape: NULL argument");
    *width = ds->data.config.width;
    *height = ds->data.config.height;
  });
}

alignlab_status alignlab_dataset_labels(const alignlab_dataset* ds, size_t index, uint8_t* buf, size_t len) {
  return guarded([&] {
    require(ds && buf, "dataset_labels: NULL argument");
    require(index < ds->data.size(), "dataset_labels: index out of range");
    const auto& l = ds->data.entries[index].labels.labels;
    require(len >= l.size(), "dataset_labels: buffer too small");
    std::memcpy(buf, l.data(), l.size());
  });
}

alignlab_status alignlab_dataset_rgb(const alignlab_dataset* ds, size_t index, int appearance, uint8_t* buf,
                                     size_t len) {
  return guarded([&] {
    require(ds && buf, "dataset_rgb: NULL argument");
    require(index < ds->data.size(), "dataset_rgb: index out of range");
    const auto& rgb = ds->data.entries[index].rgb;
    auto it = rgb.find(appearance);
    if (it == rgb.end()) throw alignlab::DataError("dataset_rgb: appearance " + std::to_string(appearance) + " not present");
    require(len >= it->second.pixels.size(), "dataset_rgb: buffer too small");
    std::memcpy(buf, it->second.pixels.data(), it->second.pixels.size());
  });
}

alignlab_status alignlab_config_create(alignlab_config** out) {
  return guarded([&] {
    require(out != nullptr, "config_create: NULL argument");
    *out = new alignlab_config{};
  });
}

alignlab_status alignlab_config_load(const char* path, alignlab_config** out) {
  return guarded([&] {
    require(path && out, "config_load: NULL argument");
    *out = nullptr;
    auto cfg = std::make_unique<alignlab_config>();
    cfg->config = alignlab::load_config(path);
    *out = cfg.release();
  });
}

alignlab_status alignlab_config_set(alignlab_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg && key && value, "config_set: NULL argument");
    alignlab::TrainConfig next = cfg->config;
    alignlab::set_config_value(next, key, value);
    cfg->config = next;
  });
}

alignlab_status alignlab_config_get(const alignlab_config* cfg, const char* key, char* buf, size_t len) {
  return guarded([&] {
    require(cfg && key && buf, "config_get: NULL argument");
    const std::string v = alignlab::get_config_value(cfg->config, key);
    require(len > v.size(), "config_get: buffer too small");
    std::memcpy(buf, v.c_str(), v.size() + 1);
  });
}

void alignlab_config_destroy(alignlab_config* cfg) { delete cfg; }

alignlab_status alignlab_train(const alignlab_config* cfg, const alignlab_dataset* source, const char* out_dir) {
  return guarded([&] {
    require(cfg && out_dir, "train: NULL argument");
    alignlab::TrainConfig c = cfg->config;
    if (source) {
      c.width = source->data.config.width;
      c.height = source->data.config.height;
    }
    c.validate();
    alignlab::DataCache cache;
    std::shared_ptr<const alignlab::Dataset> src;
    if (source) {
      src = std::shared_ptr<const alignlab::Dataset>(&source->data, [](const alignlab::Dataset*) {});
    } else {
      src = cache.source(c);
    }
    alignlab::EvalHook hook;
    if (c.eval_every > 0) {
      auto test = cache.test(c);
      const auto apps = alignlab::parse_split(c.eval_split);
      hook = [test, apps](const alignlab::ModelParams& p) {
        return alignlab::scores(alignlab::evaluate_model(p, *test, apps)).miou.value_or(0.0);
      };
    }
    alignlab::TrainResult r = c.mode == alignlab::TrainMode::DG
                                  ? alignlab::train_dg(c, *src, hook)
                                  : alignlab::train_uda(c, *src, *cache.target(c), hook);

    const std::filesystem::path dir(out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw alignlab::DataError("cannot create " + dir.string() + ": " + ec.message());
    alignlab::write_checkpoint(dir / "model.ckpt", r.params);
    if (c.mode == alignlab::TrainMode::UDA) alignlab::write_checkpoint(dir / "teacher.ckpt", r.teacher);
    write_text(dir / "train_log.csv", r.log.csv());
    nlohmann::json run;
    run["mode"] = alignlab::to_string(c.mode);
    run["lambda"] = r.log.lambda;
    run["iterations"] = c.iterations;
    run["seconds"] = r.log.seconds;
    run["final_total"] = r.log.steps.empty() ? 0.0 : r.log.steps.back().total;
    if (!r.log.steps.empty() && r.log.steps.back().miou_eval) run["final_miou_eval"] = *r.log.steps.back().miou_eval;
    nlohmann::json conf = nlohmann::json::object();
    for (const auto& key : alignlab::config_keys()) conf[key] = alignlab::get_config_value(c, key);
    run["config"] = conf;
    run["source"] = source ? "dataset" : "generated";
    write_text(dir / "run.json", run.dump(2) + "\n");
  });
}

alignlab_status alignlab_model_load(const char* path, alignlab_model** out) {
  return guarded([&] {
    require(path && out, "model_load: NULL argument");
    *out = nullptr;
    auto m = std::make_unique<alignlab_model>();
    m->params = alignlab::read_checkpoint(path);
    alignlab::infer_config(m->params);
    *out = m.release();
  });
}

alignlab_status alignlab_model_init(uint64_t seed, alignlab_model** out) {
  return guarded([&] {
    require(out != nullptr, "model_init: NULL argument");
    *out = new alignlab_model{alignlab::init_params(seed)};
  });
}

alignlab_status alignlab_model_save(const alignlab_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "model_save: NULL argument");
    alignlab::write_checkpoint(path, model->params);
  });
}

void alignlab_model_destroy(alignlab_model* model) { delete model; }

alignlab_status alignlab_model_predict(const alignlab_model* model, const uint8_t* rgb, int width, int height,
                                       uint8_t* labels_out) {
  return guarded([&] {
    require(model && rgb && labels_out, "model_predict: NULL argument");
    require(width > 0 && height > 0, "model_predict: non-positive size");
    alignlab::Rgb8Image img;
    img.width = width;
    img.height = height;
    img.pixels.assign(rgb, rgb + static_cast<std::size_t>(width) * height * 3);
    const auto labels = alignlab::predict_labels(model->params, alignlab::image_tensor(img));
    std::memcpy(labels_out, labels.data(), labels.size());
  });
}

alignlab_status alignlab_evaluate(const alignlab_model* model, const alignlab_dataset* ds, const char* split,
                                  const char* csv_path, const char* txt_path, double* miou, double* macc) {
  return guarded([&] {
    require(model && ds && split, "evaluate: NULL argument");
    const auto apps = alignlab::parse_split(split);
    const auto s = alignlab::scores(alignlab::evaluate_model(model->params, ds->data, apps));
    if (csv_path) write_text(csv_path, alignlab::scores_csv(s, alignlab::class_names()));
    if (txt_path) write_text(txt_path, alignlab::scores_text(s, alignlab::class_names()));
    if (miou) *miou = s.miou.value_or(0.0);
    if (macc) *macc = s.macc.value_or(0.0);
  });
}

alignlab_status alignlab_ablate(const alignlab_config* base, const char* axis, const char* values, int seeds,
                                int threads, const char* out_dir) {
  return guarded([&] {
    require(base && axis && out_dir, "ablate: NULL argument");
    require(seeds >= 1, "ablate: seeds must be >= 1");
    alignlab::ExperimentSpec spec;
    spec.base = base->config;
    spec.axis = alignlab::parse_axis(axis);
    if (values) spec.values = split_values(values);
    spec.seeds.clear();
    for (int s = 1; s <= seeds; ++s) spec.seeds.push_back(static_cast<std::uint64_t>(s));
    alignlab::DataCache cache;
    const auto records = alignlab::run_ablation(spec, cache, threads);
    const std::filesystem::path dir(out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw alignlab::DataError("cannot create " + dir.string() + ": " + ec.message());
    const std::string csv = alignlab::results_csv(records);
    write_text(dir / "results.csv", csv);
    // plot what the csv holds so a later report run reproduces it byte for byte
    write_text(dir / "report.svg", alignlab::report_svg(alignlab::parse_results_csv(csv)));
  });
}

alignlab_status alignlab_report(const char* csv_path, const char* svg_path) {
  return guarded([&] {
    require(csv_path && svg_path, "report: NULL argument");
    const auto records = alignlab::parse_results_csv(alignlab::read_file(csv_path));
    write_text(svg_path, alignlab::report_svg(records));
  });
}

}  // extern "C"
