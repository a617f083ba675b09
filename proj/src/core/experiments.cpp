#include "experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "error.hpp"

namespace alignlab {

namespace {

const char* kAppearanceValues[] = {"sunset", "noon", "night", "fog"};

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string data_key(const TrainConfig& c) {
  return std::to_string(c.data_seed) + "/" + std::to_string(c.width) + "x" + std::to_string(c.height);
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

SweepAxis parse_axis(const std::string& text) {
  if (text == "appearance") return SweepAxis::Appearance;
  if (text == "metric") return SweepAxis::Metric;
  if (text == "blocks") return SweepAxis::Blocks;
  if (text == "dataset_size" || text == "size") return SweepAxis::DatasetSize;
  throw UsageError("unknown sweep axis '" + text + "' (expected appearance, metric, blocks or dataset_size)");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Appearance: return "appearance";
    case SweepAxis::Metric: return "metric";
    case SweepAxis::Blocks: return "blocks";
    case SweepAxis::DatasetSize: return "dataset_size";
  }
  return "metric";
}

std::vector<std::string> default_sweep_values(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Appearance: return {"sunset", "noon", "night", "fog", "fixed", "random"};
    case SweepAxis::Metric: return {"none", "consistency", "l2", "mmd", "cs"};
    case SweepAxis::Blocks: return {"1", "2", "3", "4", "1+2", "1+2+3", "1+2+3+4"};
    case SweepAxis::DatasetSize: return {"250", "500", "1000", "2000"};
  }
  return {};
}

TrainConfig apply_sweep(TrainConfig c, SweepAxis axis, const std::string& value) {
  switch (axis) {
    case SweepAxis::Appearance: {
      for (int j = 0; j < kNumAppearances; ++j)
        if (value == kAppearanceValues[j]) {
          c.protocol = {ProtocolKind::Single, j};
          return c;
        }
      if (value == "fixed" || value == "random") {
        c.protocol = AppearanceProtocol::parse(value);
        return c;
      }
      throw UsageError("appearance sweep value '" + value + "' is not one of sunset, noon, night, fog, fixed, random");
    }
    case SweepAxis::Metric:
      c.align.kind = parse_align_kind(value);
      return c;
    case SweepAxis::Blocks: {
      std::string v = value;
      std::replace(v.begin(), v.end(), '+', ',');
      c.blocks = parse_blocks(v);
      return c;
    }
    case SweepAxis::DatasetSize:
      set_config_value(c, "data.layouts", value);
      return c;
  }
  return c;
}

void ExperimentSpec::validate() const {
  if (seeds.empty()) throw UsageError("an experiment needs at least one seed");
  const auto vals = values.empty() ? default_sweep_values(axis) : values;
  for (const auto& v : vals) apply_sweep(base, axis, v).validate();
}

template <typename T>
std::shared_ptr<const T> DataCache::get(std::map<std::string, std::shared_ptr<const T>>& slot, const std::string& key,
                                        const std::function<T()>& make) {
  {
    std::lock_guard lock(mu_);
    auto it = slot.find(key);
    if (it != slot.end()) return it->second;
  }
  // built outside the lock; a duplicate build by a racing thread is harmless
  auto made = std::make_shared<const T>(make());
  std::lock_guard lock(mu_);
  return slot.try_emplace(key, made).first->second;
}

std::shared_ptr<const Dataset> DataCache::source(const TrainConfig& c) {
  return get<Dataset>(sources_, data_key(c) + "/" + std::to_string(c.data_layouts),
                      [&] { return make_source_dataset(c); });
}

std::shared_ptr<const Dataset> DataCache::test(const TrainConfig& c) {
  return get<Dataset>(tests_, data_key(c) + "/" + std::to_string(c.test_layouts), [&] { return make_test_dataset(c); });
}

std::shared_ptr<const std::vector<Tensor>> DataCache::target(const TrainConfig& c) {
  return get<std::vector<Tensor>>(targets_,
                                  data_key(c) + "/" + std::to_string(c.data_layouts) + "/a" +
                                      std::to_string(c.target_appearance),
                                  [&] { return unlabeled_images(make_target_dataset(c), c.target_appearance); });
}

RunOutcome run_config(const TrainConfig& config, DataCache& cache, const std::vector<std::string>& splits) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  auto source = cache.source(config);
  auto test = cache.test(config);
  EvalHook hook;
  if (config.eval_every > 0) {
    const auto apps = parse_split(config.eval_split);
    hook = [test, apps](const ModelParams& p) { return scores(evaluate_model(p, *test, apps)).miou.value_or(0.0); };
  }
  RunOutcome out;
  if (config.mode == TrainMode::DG) {
    out.train = train_dg(config, *source, hook);
  } else {
    out.train = train_uda(config, *source, *cache.target(config), hook);
  }
  for (const auto& s : splits) out.splits[s] = scores(evaluate_model(out.train.params, *test, parse_split(s)));
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

int worker_count(int requested) {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("ALIGNLAB_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  if (requested > 0) n = std::min(n, requested);
  return n;
}

std::vector<RunRecord> run_ablation(const ExperimentSpec& spec, DataCache& cache, int threads,
                                    const ProgressFn& progress) {
  spec.validate();
  const auto values = spec.values.empty() ? default_sweep_values(spec.axis) : spec.values;
  std::vector<RunRecord> records;
  for (const auto& v : values)
    for (auto seed : spec.seeds) {
      RunRecord r;
      r.axis = to_string(spec.axis);
      r.value = v;
      r.seed = seed;
      records.push_back(r);
    }

  std::atomic<std::size_t> next{0};
  std::mutex progress_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < records.size(); i = next++) {
      RunRecord& r = records[i];
      const auto t0 = std::chrono::steady_clock::now();
      try {
        TrainConfig c = apply_sweep(spec.base, spec.axis, r.value);
        c.seed = r.seed;
        const auto out = run_config(c, cache, {c.eval_split});
        const Scores& s = out.splits.at(c.eval_split);
        r.miou = s.miou.value_or(0.0);
        r.macc = s.macc.value_or(0.0);
      } catch (const std::exception& e) {
        r.status = std::string("failed: ") + e.what();
        std::replace(r.status.begin(), r.status.end(), ',', ';');
        std::replace(r.status.begin(), r.status.end(), '\n', ' ');
      }
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (progress) {
        std::lock_guard lock(progress_mu);
        progress(r);
      }
    }
  };
  const int n = std::min<int>(worker_count(threads), static_cast<int>(records.size()));
  if (n <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return records;
}

std::string results_csv(const std::vector<RunRecord>& records) {
  std::string out = "axis,value,seed,status,miou,macc,seconds\n";
  for (const auto& r : records) {
    out += r.axis + "," + r.value + "," + std::to_string(r.seed) + "," + r.status + "," + fixed6(r.miou) + "," +
           fixed6(r.macc) + "," + fixed2(r.seconds) + "\n";
  }
  return out;
}

std::vector<RunRecord> parse_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"axis", "value", "seed", "status",
                                                                                  "miou", "macc", "seconds"}) {
    throw DataError("results CSV: unexpected header");
  }
  std::vector<RunRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw DataError("results CSV line " + std::to_string(lineno) + ": expected 7 fields");
    RunRecord r;
    try {
      r.axis = f[0];
      r.value = f[1];
      r.seed = std::stoull(f[2]);
      r.status = f[3];
      r.miou = std::stod(f[4]);
      r.macc = std::stod(f[5]);
      r.seconds = std::stod(f[6]);
    } catch (const std::exception&) {
      throw DataError("results CSV line " + std::to_string(lineno) + ": malformed number");
    }
    out.push_back(r);
  }
  return out;
}

std::vector<ValueSummary> summarize(const std::vector<RunRecord>& records) {
  std::vector<ValueSummary> out;
  for (const auto& r : records) {
    auto it = std::find_if(out.begin(), out.end(), [&](const ValueSummary& s) { return s.value == r.value; });
    if (it == out.end()) {
      out.push_back({r.value, {}, std::nullopt});
      it = out.end() - 1;
    }
    if (r.ok()) it->miou.push_back(r.miou);
  }
  for (auto& s : out) {
    if (s.miou.empty()) continue;
    double sum = 0;
    for (double v : s.miou) sum += v;
    s.mean = sum / static_cast<double>(s.miou.size());
  }
  return out;
}

std::string report_svg(const std::vector<RunRecord>& records) {
  const auto summary = summarize(records);
  const std::string axis = records.empty() ? "" : records.front().axis;
  const double W = 640, H = 400, left = 64, right = 24, top = 36, bottom = 64;
  const double pw = W - left - right, ph = H - top - bottom;

  // y range from every ok value, padded, in mIoU percent
  double lo = 1e9, hi = -1e9;
  for (const auto& s : summary)
    for (double v : s.miou) {
      lo = std::min(lo, v * 100);
      hi = std::max(hi, v * 100);
    }
  if (lo > hi) lo = 0, hi = 100;
  double pad = std::max(1.0, (hi - lo) * 0.1);
  lo = std::max(0.0, std::floor(lo - pad));
  hi = std::min(100.0, std::ceil(hi + pad));
  if (hi <= lo) hi = lo + 1;

  const std::size_t n = summary.size();
  auto xpos = [&](std::size_t i) { return left + (n <= 1 ? pw / 2 : pw * (0.05 + 0.9 * static_cast<double>(i) / (n - 1))); };
  auto ypos = [&](double v) { return top + ph * (1.0 - (v * 100 - lo) / (hi - lo)); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"400\" fill=\"white\"/>\n";
  s += "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">mIoU vs " +
       escape_xml(axis) + "</text>\n";
  s += "<path d=\"M" + fixed2(left) + " " + fixed2(top) + " V" + fixed2(top + ph) + " H" + fixed2(left + pw) +
       "\" stroke=\"black\" fill=\"none\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    const double y = top + ph * (1.0 - k / 4.0);
    s += "<path d=\"M" + fixed2(left - 4) + " " + fixed2(y) + " H" + fixed2(left + pw) +
         "\" stroke=\"#dddddd\" fill=\"none\"/>\n";
    s += "<text x=\"" + fixed2(left - 8) + "\" y=\"" + fixed2(y + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + fixed2(v) + "</text>\n";
  }
  s += "<text x=\"16\" y=\"" + fixed2(top + ph / 2) + "\" transform=\"rotate(-90 16 " + fixed2(top + ph / 2) +
       ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">mIoU (%)</text>\n";

  std::string line;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = summary[i];
    s += "<text x=\"" + fixed2(xpos(i)) + "\" y=\"" + fixed2(top + ph + 18) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + escape_xml(v.value) + "</text>\n";
    for (double m : v.miou) {
      s += "<circle cx=\"" + fixed2(xpos(i)) + "\" cy=\"" + fixed2(ypos(m)) +
           "\" r=\"3\" fill=\"none\" stroke=\"#4477aa\"/>\n";
    }
    if (v.mean) line += (line.empty() ? "M" : " L") + fixed2(xpos(i)) + " " + fixed2(ypos(*v.mean));
  }
  if (!line.empty()) s += "<path d=\"" + line + "\" stroke=\"#cc3311\" stroke-width=\"2\" fill=\"none\"/>\n";
  for (std::size_t i = 0; i < n; ++i)
    if (summary[i].mean) {
      s += "<rect x=\"" + fixed2(xpos(i) - 3) + "\" y=\"" + fixed2(ypos(*summary[i].mean) - 3) +
           "\" width=\"6\" height=\"6\" fill=\"#cc3311\"/>\n";
    }
  s += "<text x=\"" + fixed2(left + pw) + "\" y=\"" + fixed2(H - 16) +
       "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">line: mean over seeds; circles: single seeds</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace alignlab
