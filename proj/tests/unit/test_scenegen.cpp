#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <type_traits>

#include <json.hpp>

#include "dataset.hpp"
#include "error.hpp"
#include "helpers.hpp"
#include "netpbm.hpp"
#include "rng.hpp"
#include "scenegen.hpp"

using namespace alignlab;

namespace {

SceneConfig small_scene(int w = 64, int h = 48) {
  SceneConfig c;
  c.width = w;
  c.height = h;
  return c;
}

double mean_abs_diff(const RgbImage& a, const RgbImage& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) d += std::abs(a.pixels[i] - b.pixels[i]);
  return d / static_cast<double>(a.pixels.size());
}

int count_class(const Layout& l, int cls) {
  int n = 0;
  for (const auto& o : l.objects) n += o.class_id == cls;
  return n;
}

}  // namespace

TEST_CASE("layouts are deterministic and differ across indices") {
  const Layout a = generate_layout(7, 0), b = generate_layout(7, 0);
  CHECK(a == b);
  int differing = 0;
  for (int i = 1; i <= 100; ++i) differing += !(generate_layout(7, i).objects == a.objects);
  CHECK(differing == 100);
  CHECK_FALSE(generate_layout(8, 0).objects == a.objects);
}

TEST_CASE("layout invariants hold over many indices") {
  SceneConfig c = small_scene();
  c.cars = {2, 4};
  for (int i = 0; i < 1000; ++i) {
    const Layout l = generate_layout(3, i, c);
    const int cars = count_class(l, kCar);
    CHECK(cars >= 2);
    CHECK(cars <= 4);
    REQUIRE(l.objects.size() > 0);
    for (std::size_t o = 1; o < l.objects.size(); ++o) CHECK(l.objects[o].depth <= l.objects[o - 1].depth);
    for (const auto& o : l.objects) {
      CHECK(o.class_id >= 0);
      CHECK(o.class_id < kDefaultNumClasses);
      CHECK(o.depth >= 1.0);
      CHECK(o.depth <= 200.0);
    }
    if (i % 50 == 0) {
      const LabelMap lm = rasterize_labels(l);
      const std::set<int> present(lm.labels.begin(), lm.labels.end());
      CHECK(present.count(kSky));
      CHECK(present.count(kRoad));
      CHECK(present.count(kSidewalk));
    }
  }
}

TEST_CASE("zero resolution is a config error") {
  CHECK_THROWS_AS(generate_layout(1, 0, small_scene(0, 48)), ConfigError);
  CHECK_THROWS_AS(generate_layout(1, 0, small_scene(64, 0)), ConfigError);
  CHECK_THROWS_AS(generate_layout(1, -1), ConfigError);
}

TEST_CASE("rasterize hand layouts") {
  Layout l;
  l.width = 8;
  l.height = 6;
  l.objects.push_back({kSky, RectShape{0, 0, 8, 6}, 200.0, {}});
  CHECK(rasterize_labels(l).labels == std::vector<std::uint8_t>(48, kSky));

  l.objects.push_back({kBuilding, RectShape{1, 1, 7, 6}, 50.0, {}});
  l.objects.push_back({kCar, RectShape{2, 3, 4, 5}, 10.0, {}});
  const LabelMap lm = rasterize_labels(l);
  CHECK(lm.labels[3 * 8 + 2] == kCar);
  CHECK(lm.labels[4 * 8 + 3] == kCar);
  CHECK(lm.labels[2 * 8 + 2] == kBuilding);
  CHECK(lm.labels[0] == kSky);
}

TEST_CASE("rasterize matches a brute-force point-in-primitive oracle") {
  for (int i = 0; i < 20; ++i) {
    const Layout l = generate_layout(21, i, small_scene());
    const LabelMap lm = rasterize_labels(l);
    int mismatches = 0;
    for (int y = 0; y < l.height; ++y)
      for (int x = 0; x < l.width; ++x) {
        int label = -1;
        for (const auto& o : l.objects)
          if (covers(o.shape, x + 0.5, y + 0.5)) label = o.class_id;
        mismatches += label != lm.labels[static_cast<std::size_t>(y) * l.width + x];
      }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("the label path takes geometry only") {
  static_assert(std::is_same_v<decltype(&rasterize_labels), LabelMap (*)(const Layout&)>);
  const Layout l = generate_layout(5, 2, small_scene());
  AppearanceCondition shadowless = appearance_for_layout(0, l), shadowed = shadowless;
  shadowless.shadow_strength = 0.0;
  shadowed.shadow_strength = 0.6;
  CHECK(mean_abs_diff(render(l, shadowless), render(l, shadowed)) > 0.0);
  CHECK(make_sample(l, 0).labels == make_sample(l, 2).labels);
}

TEST_CASE("fog compositing closed form") {
  CHECK(apply_fog(0.37, 0.8, 0.0, 150.0) == 0.37);
  CHECK(apply_fog(0.5, 0.8, 0.1, 10.0) == doctest::Approx(0.5 * std::exp(-1.0) + 0.8 * (1 - std::exp(-1.0))).epsilon(1e-15));
  CHECK(apply_fog(0.5, 0.8, 0.1, 10.0) == doctest::Approx(0.6896).epsilon(1e-4));
  double prev = apply_fog(0.3, 0.9, 0.07, 1.0);
  for (double d = 2.0; d <= 200.0; d += 1.0) {
    const double v = apply_fog(0.3, 0.9, 0.07, d);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("appearances share labels and differ in colour") {
  for (int i = 0; i < 100; ++i) {
    const Layout l = generate_layout(13, i, small_scene());
    std::vector<LabeledSample> s;
    for (int j = 0; j < kNumAppearances; ++j) s.push_back(make_sample(l, j));
    for (int a = 0; a < kNumAppearances; ++a) {
      CHECK(s[a].labels == s[0].labels);
      for (double v : s[a].rgb.pixels) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
      }
      for (int b = a + 1; b < kNumAppearances; ++b) CHECK(mean_abs_diff(s[a].rgb, s[b].rgb) > 0.05);
    }
  }
}

TEST_CASE("rendering is deterministic per seed tuple") {
  const Layout l = generate_layout(4, 9, small_scene());
  CHECK(make_sample(l, 2).rgb.pixels == make_sample(l, 2).rgb.pixels);
  const Layout other = generate_layout(5, 9, small_scene());
  CHECK(make_sample(other, 2).rgb.pixels != make_sample(l, 2).rgb.pixels);
}

TEST_CASE("appearance presets") {
  CHECK(appearance_preset(3).fog_density > 0.0);
  CHECK(appearance_preset(1).fog_density == 0.0);
  CHECK(appearance_preset(2).ambient_gain == doctest::Approx(0.15));
  CHECK(appearance_preset(0).color_tint == Rgb{1.0, 0.85, 0.7});
  for (int i = 0; i < 50; ++i) {
    const double beta = appearance_for_layout(3, generate_layout(1, i, small_scene())).fog_density;
    CHECK(beta >= 0.05);
    CHECK(beta <= 0.2);
  }
  CHECK_THROWS_AS(appearance_preset(7), ConfigError);
}

TEST_CASE("appearance pair protocols") {
  Rng epoch1(1), epoch50(50);
  const auto fixed = AppearanceProtocol::parse("fixed");
  for (int i = 0; i < 50; ++i) {
    const auto a = sample_appearance_pair(fixed, 7, i, epoch1);
    const auto b = sample_appearance_pair(fixed, 7, i, epoch50);
    CHECK(a == b);
    CHECK(a.first != a.second);
  }
  std::map<std::pair<int, int>, int> fixed_counts;
  for (int i = 0; i < 1200; ++i) {
    const auto p = sample_appearance_pair(fixed, 7, i, epoch1);
    ++fixed_counts[{p.first, p.second}];
  }
  CHECK(fixed_counts.size() == 12);
  for (const auto& [pair, n] : fixed_counts) CHECK(n == 100);

  Rng rng(99);
  const auto random = AppearanceProtocol::parse("random");
  std::map<std::pair<int, int>, int> counts;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto p = sample_appearance_pair(random, 7, i % 10, rng);
    REQUIRE(p.first != p.second);
    ++counts[{p.first, p.second}];
  }
  CHECK(counts.size() == 12);
  for (const auto& [pair, n] : counts) CHECK(std::abs(n / double(draws) - 1.0 / 12) <= 0.01);

  const auto single = AppearanceProtocol::parse("single:2");
  CHECK(sample_appearance_pair(single, 7, 3, rng) == AppearancePair{2, 2});
  CHECK(single.to_string() == "single:2");
  CHECK_THROWS_AS(AppearanceProtocol::parse("single:9"), ConfigError);
  CHECK_THROWS_AS(AppearanceProtocol::parse("sometimes"), ConfigError);
}

TEST_CASE("netpbm headers and round trip") {
  Rgb8Image img{3, 2, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18}};
  const std::string ppm = encode_ppm(img);
  CHECK(ppm.substr(0, 11) == "P6\n3 2\n255\n");
  CHECK(decode_ppm(ppm, "mem") == img);
  LabelMap lm{3, 2, {0, 1, 2, 255, 4, 5}};
  const std::string pgm = encode_pgm(lm);
  CHECK(pgm.substr(0, 11) == "P5\n3 2\n255\n");
  CHECK(decode_pgm(pgm, "mem") == lm);
  CHECK_THROWS_AS(decode_ppm("P3" + ppm.substr(2), "mem"), DataError);
  CHECK_THROWS_AS(decode_pgm(pgm.substr(0, pgm.size() - 1), "mem"), DataError);
}

TEST_CASE("dataset write/read round trip") {
  testutil::TempDir dir("ds");
  const Dataset ds = build_dataset(7, 0, 10, small_scene(32, 32), {0, 1, 2, 3});
  const Manifest m = write_dataset(ds, dir.path());
  CHECK(m.label_files == 10);
  CHECK(m.rgb_files == 40);
  CHECK(std::filesystem::exists(dir.path() / "labels" / "000003.pgm"));
  CHECK(std::filesystem::exists(dir.path() / "rgb" / "000003_a2.ppm"));
  const auto manifest = nlohmann::json::parse(read_file(dir.path() / "manifest.json"));
  CHECK(manifest.contains("seed"));
  CHECK(manifest.contains("config"));

  const Dataset back = read_dataset(dir.path());
  REQUIRE(back.size() == 10);
  CHECK(back.seed == 7);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(back.entries[i].labels == ds.entries[i].labels);
    for (int j = 0; j < 4; ++j) CHECK(back.entries[i].rgb.at(j) == ds.entries[i].rgb.at(j));
  }
  // the 8-bit images are within one quantisation step of the float render
  const LabeledSample s = make_sample(generate_layout(7, 4, small_scene(32, 32)), 1);
  const auto& q = back.entries[4].rgb.at(1).pixels;
  double worst = 0;
  for (std::size_t k = 0; k < q.size(); ++k) worst = std::max(worst, std::abs(q[k] / 255.0 - s.rgb.pixels[k]));
  CHECK(worst <= 1.0 / 255.0);
}

TEST_CASE("dataset read errors") {
  testutil::TempDir dir("dserr");
  write_dataset(build_dataset(7, 0, 3, small_scene(32, 32), {0, 1, 2, 3}), dir.path());

  SUBCASE("missing rgb file names the path") {
    std::filesystem::remove(dir.path() / "rgb" / "000001_a2.ppm");
    try {
      read_dataset(dir.path());
      FAIL("expected an error");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("missing file") != std::string::npos);
      CHECK(msg.find("000001_a2.ppm") != std::string::npos);
    }
  }
  SUBCASE("invalid class id") {
    const auto p = dir.path() / "labels" / "000000.pgm";
    LabelMap lm = decode_pgm(read_file(p), p.string());
    lm.labels[5] = 200;
    write_file(p, encode_pgm(lm));
    try {
      read_dataset(dir.path());
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("invalid class id") != std::string::npos);
    }
  }
  SUBCASE("corrupt magic") {
    const auto p = dir.path() / "rgb" / "000000_a0.ppm";
    std::string bytes = read_file(p);
    bytes[1] = '3';
    write_file(p, bytes);
    CHECK_THROWS_WITH_AS(read_dataset(dir.path()), doctest::Contains("corrupt magic"), DataError);
  }
  SUBCASE("truncated file") {
    const auto p = dir.path() / "rgb" / "000002_a1.ppm";
    const std::string bytes = read_file(p);
    write_file(p, bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_WITH_AS(read_dataset(dir.path()), doctest::Contains("truncated"), DataError);
  }
  SUBCASE("size mismatch against the manifest") {
    const auto p = dir.path() / "labels" / "000001.pgm";
    write_file(p, encode_pgm(LabelMap{16, 16, std::vector<std::uint8_t>(256, 0)}));
    CHECK_THROWS_WITH_AS(read_dataset(dir.path()), doctest::Contains("mismatch"), DataError);
  }
  SUBCASE("missing manifest") {
    std::filesystem::remove(dir.path() / "manifest.json");
    CHECK_THROWS_AS(read_dataset(dir.path()), DataError);
  }
}

TEST_CASE("image tensors") {
  Rgb8Image img{2, 1, {0, 255, 51, 102, 153, 204}};
  const Tensor t = image_tensor(img);
  CHECK(t.shape() == Shape{3, 1, 2});
  CHECK(t[0] == 0.0);
  CHECK(t[1] == doctest::Approx(102 / 255.0));
  CHECK(t[2] == 1.0);
  CHECK(tensor_image(t) == img);
}
