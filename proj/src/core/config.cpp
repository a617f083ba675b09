#include "config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace alignlab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(std::string s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) return s.substr(1, s.size() - 2);
  return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "on" || text == "true" || text == "1") return true;
  if (text == "off" || text == "false" || text == "0") return false;
  throw ConfigError("config key '" + key + "': expected on/off, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == ',' || c == ' ' || c == '{' || c == '}' || c == '[' || c == ']') {
      if (!cur.empty()) parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) parts.push_back(cur);
  return parts;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string to_string(TrainMode mode) { return mode == TrainMode::DG ? "dg" : "uda"; }

TrainMode parse_mode(const std::string& text) {
  if (text == "dg") return TrainMode::DG;
  if (text == "uda") return TrainMode::UDA;
  throw ConfigError("mode must be dg or uda, got '" + text + "'");
}

std::string blocks_string(const std::set<int>& blocks) {
  std::string out;
  for (int b : blocks) out += (out.empty() ? "" : ",") + std::to_string(b);
  return out;
}

std::set<int> parse_blocks(const std::string& text) {
  std::set<int> blocks;
  for (const auto& part : split_list(text)) {
    const int b = parse_number<int>("align.blocks", part);
    if (b < 1 || b > kNumBlocks) throw ConfigError("align.blocks: block " + part + " outside 1..4");
    blocks.insert(b);
  }
  if (blocks.empty()) throw ConfigError("align.blocks: empty block set");
  return blocks;
}

double TrainConfig::lambda() const {
  if (align.kind == AlignKind::Consistency) return align_lambda > 0 ? align_lambda : 1.0;
  return align_lambda > 0 ? align_lambda : alignment_lambda(blocks);
}

void TrainConfig::validate() const {
  if (iterations <= 0) throw ConfigError("iterations must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (lr_power < 0) throw ConfigError("lr_power must be non-negative");
  if (align_lambda < 0) throw ConfigError("align.lambda must be non-negative");
  if (!(tau > 0 && tau < 1)) throw ConfigError("uda.tau must lie in (0, 1)");
  if (!(ema >= 0.9 && ema < 1)) throw ConfigError("uda.ema must lie in [0.9, 1)");
  if (target_appearance < 0 || target_appearance > kDuskAppearance) throw ConfigError("uda.target_appearance must be 0..4");
  if (align.kind == AlignKind::MMD && align.mmd_sigma < 0) throw ConfigError("align.mmd_sigma must be >= 0");
  if (align.mmd_max_samples == 0) throw ConfigError("align.mmd_max_samples must be positive");
  if (align.kind != AlignKind::None && protocol.kind == ProtocolKind::Single) {
    throw ConfigError("alignment needs two appearances; protocol " + protocol.to_string() + " draws one");
  }
  if (blocks.empty()) throw ConfigError("align.blocks: empty block set");
  if (eval_every < 0) throw ConfigError("eval.every must be >= 0");
  if (data_layouts <= 0 || test_layouts <= 0) throw ConfigError("data.layouts and data.test_layouts must be positive");
  if (width <= 0 || height <= 0 || width % 16 || height % 16) {
    throw ConfigError("data.width and data.height must be positive multiples of 16");
  }
  for (auto w : model.widths)
    if (w == 0) throw ConfigError("model.widths must be positive");
  if (model.hidden == 0) throw ConfigError("model.hidden must be positive");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "mode",          "iterations",       "batch_size",     "lr",
      "lr_power",      "seed",             "protocol",       "train.symmetric_source",
      "align.metric",  "align.blocks",     "align.lambda",   "align.mmd_sigma",
      "align.mmd_max_samples", "uda.mixup", "uda.tau",       "uda.ema",
      "uda.target_appearance", "model.widths", "model.hidden", "eval.every",
      "eval.split",    "data.seed",        "data.layouts",   "data.test_layouts",
      "data.width",    "data.height"};
  return keys;
}

namespace {

void assign_value(TrainConfig& c, const std::string& key, const std::string& v) {
  if (key == "mode") c.mode = parse_mode(v);
  else if (key == "iterations") c.iterations = parse_number<int>(key, v);
  else if (key == "batch_size") c.batch_size = parse_number<int>(key, v);
  else if (key == "lr") c.lr = parse_number<double>(key, v);
  else if (key == "lr_power") c.lr_power = parse_number<double>(key, v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "protocol") c.protocol = AppearanceProtocol::parse(v);
  else if (key == "train.symmetric_source") c.symmetric_source = parse_bool(key, v);
  else if (key == "align.metric") c.align.kind = parse_align_kind(v);
  else if (key == "align.blocks") c.blocks = parse_blocks(v);
  else if (key == "align.lambda") c.align_lambda = v == "auto" ? 0.0 : parse_number<double>(key, v);
  else if (key == "align.mmd_sigma") c.align.mmd_sigma = v == "median" ? 0.0 : parse_number<double>(key, v);
  else if (key == "align.mmd_max_samples") c.align.mmd_max_samples = parse_number<std::size_t>(key, v);
  else if (key == "uda.mixup") c.mixup = parse_bool(key, v);
  else if (key == "uda.tau") c.tau = parse_number<double>(key, v);
  else if (key == "uda.ema") c.ema = parse_number<double>(key, v);
  else if (key == "uda.target_appearance") c.target_appearance = parse_number<int>(key, v);
  else if (key == "model.widths") {
    auto parts = split_list(v);
    if (parts.size() != kNumBlocks) throw ConfigError("model.widths needs exactly 4 values");
    for (int l = 0; l < kNumBlocks; ++l) c.model.widths[l] = parse_number<std::size_t>(key, parts[l]);
  } else if (key == "model.hidden") c.model.hidden = parse_number<std::size_t>(key, v);
  else if (key == "eval.every") c.eval_every = parse_number<int>(key, v);
  else if (key == "eval.split") c.eval_split = v;
  else if (key == "data.seed") c.data_seed = parse_number<std::uint64_t>(key, v);
  else if (key == "data.layouts") c.data_layouts = parse_number<int>(key, v);
  else if (key == "data.test_layouts") c.test_layouts = parse_number<int>(key, v);
  else if (key == "data.width") c.width = parse_number<int>(key, v);
  else if (key == "data.height") c.height = parse_number<int>(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void set_config_value(TrainConfig& c, const std::string& key, const std::string& raw) {
  try {
    assign_value(c, key, unquote(trim(raw)));
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.find(key) != std::string::npos) throw;
    throw ConfigError(key + ": " + msg);
  }
}

std::string get_config_value(const TrainConfig& c, const std::string& key) {
  if (key == "mode") return to_string(c.mode);
  if (key == "iterations") return std::to_string(c.iterations);
  if (key == "batch_size") return std::to_string(c.batch_size);
  if (key == "lr") return fmt_double(c.lr);
  if (key == "lr_power") return fmt_double(c.lr_power);
  if (key == "seed") return std::to_string(c.seed);
  if (key == "protocol") return c.protocol.to_string();
  if (key == "train.symmetric_source") return c.symmetric_source ? "on" : "off";
  if (key == "align.metric") return to_string(c.align.kind);
  if (key == "align.blocks") return blocks_string(c.blocks);
  if (key == "align.lambda") return c.align_lambda > 0 ? fmt_double(c.align_lambda) : "auto";
  if (key == "align.mmd_sigma") return c.align.mmd_sigma > 0 ? fmt_double(c.align.mmd_sigma) : "median";
  if (key == "align.mmd_max_samples") return std::to_string(c.align.mmd_max_samples);
  if (key == "uda.mixup") return c.mixup ? "on" : "off";
  if (key == "uda.tau") return fmt_double(c.tau);
  if (key == "uda.ema") return fmt_double(c.ema);
  if (key == "uda.target_appearance") return std::to_string(c.target_appearance);
  if (key == "model.widths") {
    std::string out;
    for (auto w : c.model.widths) out += (out.empty() ? "" : ",") + std::to_string(w);
    return out;
  }
  if (key == "model.hidden") return std::to_string(c.model.hidden);
  if (key == "eval.every") return std::to_string(c.eval_every);
  if (key == "eval.split") return c.eval_split;
  if (key == "data.seed") return std::to_string(c.data_seed);
  if (key == "data.layouts") return std::to_string(c.data_layouts);
  if (key == "data.test_layouts") return std::to_string(c.test_layouts);
  if (key == "data.width") return std::to_string(c.width);
  if (key == "data.height") return std::to_string(c.height);
  throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string config_text(const TrainConfig& c) {
  std::string out;
  for (const auto& key : config_keys()) out += key + " = " + get_config_value(c, key) + "\n";
  return out;
}

}  // namespace alignlab
