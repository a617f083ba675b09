#include "dataset.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>

#include "error.hpp"

namespace alignlab {

namespace {

using json = nlohmann::json;

std::string label_path(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "labels/%06d.pgm", index);
  return buf;
}

std::string rgb_path(int index, int appearance) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "rgb/%06d_a%d.ppm", index, appearance);
  return buf;
}

json range_json(CountRange r) { return json::array({r.min, r.max}); }

CountRange range_from(const json& j, const char* key, CountRange fallback) {
  if (!j.contains(key)) return fallback;
  return {j.at(key).at(0).get<int>(), j.at(key).at(1).get<int>()};
}

json config_json(const SceneConfig& c) {
  return json{{"width", c.width},
              {"height", c.height},
              {"num_classes", c.num_classes},
              {"buildings", range_json(c.buildings)},
              {"trees", range_json(c.trees)},
              {"fences", range_json(c.fences)},
              {"poles", range_json(c.poles)},
              {"signs", range_json(c.signs)},
              {"cars", range_json(c.cars)},
              {"persons", range_json(c.persons)},
              {"lane_marks", range_json(c.lane_marks)}};
}

SceneConfig config_from(const json& j) {
  SceneConfig c;
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.buildings = range_from(j, "buildings", c.buildings);
  c.trees = range_from(j, "trees", c.trees);
  c.fences = range_from(j, "fences", c.fences);
  c.poles = range_from(j, "poles", c.poles);
  c.signs = range_from(j, "signs", c.signs);
  c.cars = range_from(j, "cars", c.cars);
  c.persons = range_from(j, "persons", c.persons);
  c.lane_marks = range_from(j, "lane_marks", c.lane_marks);
  return c;
}

}  // namespace

bool Dataset::has_appearance(int appearance_id) const {
  if (entries.empty()) return false;
  for (const auto& e : entries)
    if (!e.rgb.count(appearance_id)) return false;
  return true;
}

Dataset build_dataset(std::uint64_t seed, int first_index, int count, const SceneConfig& config,
                      const std::vector<int>& appearances) {
  if (count <= 0) throw ConfigError("dataset needs at least one layout, got " + std::to_string(count));
  Dataset ds;
  ds.seed = seed;
  ds.config = config;
  ds.entries.reserve(static_cast<std::size_t>(count));
  for (int i = first_index; i < first_index + count; ++i) {
    const Layout layout = generate_layout(seed, i, config);
    DatasetEntry e;
    e.layout_index = i;
    e.labels = rasterize_labels(layout);
    for (int j : appearances) e.rgb[j] = quantize(render(layout, appearance_for_layout(j, layout)));
    ds.entries.push_back(std::move(e));
  }
  return ds;
}

Manifest write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "labels", ec);
  std::filesystem::create_directories(dir / "rgb", ec);
  if (ec) throw DataError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  Manifest m{dir, 0, 0};
  json entries = json::object();
  for (const auto& e : dataset.entries) {
    const std::string lp = label_path(e.layout_index);
    write_file(dir / lp, encode_pgm(e.labels));
    ++m.label_files;
    json rgb = json::object();
    for (const auto& [j, img] : e.rgb) {
      const std::string rp = rgb_path(e.layout_index, j);
      write_file(dir / rp, encode_ppm(img));
      rgb[std::to_string(j)] = rp;
      ++m.rgb_files;
    }
    entries[std::to_string(e.layout_index)] = json{{"label", lp}, {"rgb", rgb}};
  }

  json classes = json::array();
  for (const auto& n : class_names()) classes.push_back(n);
  json appearances = json::object();
  for (int j = 0; j <= kDuskAppearance; ++j) appearances[std::to_string(j)] = appearance_name(j);

  const json manifest{{"format", "alignlab-dataset"},
                      {"version", 1},
                      {"seed", dataset.seed},
                      {"config", config_json(dataset.config)},
                      {"classes", classes},
                      {"appearances", appearances},
                      {"entries", entries}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  return m;
}

Manifest write_dataset(const std::vector<Layout>& layouts, const std::vector<int>& appearances,
                       const std::filesystem::path& dir, const SceneConfig& config) {
  Dataset ds;
  ds.config = config;
  if (!layouts.empty()) ds.seed = layouts.front().seed;
  for (const auto& layout : layouts) {
    DatasetEntry e;
    e.layout_index = layout.layout_index;
    e.labels = rasterize_labels(layout);
    for (int j : appearances) e.rgb[j] = quantize(render(layout, appearance_for_layout(j, layout)));
    ds.entries.push_back(std::move(e));
  }
  return write_dataset(ds, dir);
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  Dataset ds;
  try {
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.config = config_from(manifest.at("config"));
  } catch (const json::exception& e) {
    throw DataError("manifest " + manifest_path.string() + " is missing fields: " + e.what());
  }
  const int K = ds.config.num_classes;

  try {
    for (const auto& [key, entry] : manifest.at("entries").items()) {
      DatasetEntry e;
      e.layout_index = std::stoi(key);
      const auto lp = dir / entry.at("label").get<std::string>();
      if (!std::filesystem::exists(lp)) throw DataError("missing file: " + lp.string());
      e.labels = decode_pgm(read_file(lp), lp.string());
      if (e.labels.width != ds.config.width || e.labels.height != ds.config.height) {
        throw DataError("manifest/file mismatch: " + lp.string() + " is " + std::to_string(e.labels.width) + "x" +
                        std::to_string(e.labels.height));
      }
      for (std::uint8_t v : e.labels.labels) {
        if (v != kIgnoreLabel && v >= K) {
          throw DataError("invalid class id " + std::to_string(v) + " in " + lp.string() + " (K=" + std::to_string(K) +
                          ")");
        }
      }
      for (const auto& [jkey, rel] : entry.at("rgb").items()) {
        const auto rp = dir / rel.get<std::string>();
        if (!std::filesystem::exists(rp)) throw DataError("missing file: " + rp.string());
        Rgb8Image img = decode_ppm(read_file(rp), rp.string());
        if (img.width != ds.config.width || img.height != ds.config.height) {
          throw DataError("manifest/file mismatch: " + rp.string() + " is " + std::to_string(img.width) + "x" +
                          std::to_string(img.height));
        }
        e.rgb[std::stoi(jkey)] = std::move(img);
      }
      ds.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw DataError("malformed manifest entry in " + manifest_path.string() + ": " + e.what());
  }
  std::sort(ds.entries.begin(), ds.entries.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.layout_index < b.layout_index; });
  return ds;
}

Tensor image_tensor(const Rgb8Image& image) {
  const std::size_t H = image.height, W = image.width;
  Tensor t({3, H, W});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < H * W; ++p) t[c * H * W + p] = image.pixels[p * 3 + c] / 255.0;
  return t;
}

Tensor image_tensor(const RgbImage& image) {
  const std::size_t H = image.height, W = image.width;
  Tensor t({3, H, W});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < H * W; ++p) t[c * H * W + p] = image.pixels[p * 3 + c];
  return t;
}

Rgb8Image tensor_image(const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw ShapeError("tensor_image: expected (3,H,W), got " + shape_string(chw.shape()));
  const std::size_t H = chw.dim(1), W = chw.dim(2);
  Rgb8Image img{static_cast<int>(W), static_cast<int>(H), std::vector<std::uint8_t>(H * W * 3)};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < H * W; ++p)
      img.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(chw[c * H * W + p], 0.0, 1.0) * 255.0));
  return img;
}

}  // namespace alignlab
