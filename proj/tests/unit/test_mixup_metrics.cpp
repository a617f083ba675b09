#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "error.hpp"
#include "helpers.hpp"
#include "metrics.hpp"
#include "mixup.hpp"
#include "rng.hpp"
#include "scenegen.hpp"

using namespace alignlab;
using testutil::randu;

// ------------------------------------------------------------------ mixup

TEST_CASE("two present classes select exactly one") {
  std::vector<std::uint8_t> labels = {kRoad, kRoad, kSky, kSky, kSky, 255};
  Rng rng(1);
  const BinaryMask m = build_class_mask(labels, 3, 2, rng);
  REQUIRE(m.selected_classes.size() == 1);
  const int c = *m.selected_classes.begin();
  for (std::size_t p = 0; p < labels.size(); ++p) CHECK(m.mask[p] == (labels[p] == c ? 1 : 0));
}

TEST_CASE("odd class counts round up, mask matches the selected set") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint8_t> labels(8 * 6);
    const int present = 1 + static_cast<int>(rng.index(10));
    for (auto& v : labels) v = rng.uniform() < 0.1 ? 255 : static_cast<std::uint8_t>(rng.index(present));
    const std::set<int> classes = [&] {
      std::set<int> s;
      for (auto v : labels)
        if (v != 255) s.insert(v);
      return s;
    }();
    const BinaryMask m = build_class_mask(labels, 8, 6, rng);
    CHECK(m.selected_classes.size() == (classes.size() + 1) / 2);
    std::size_t expected = 0, got = 0;
    for (std::size_t p = 0; p < labels.size(); ++p) {
      expected += labels[p] != 255 && m.selected_classes.count(labels[p]);
      got += m.mask[p];
      if (labels[p] == 255) CHECK(m.mask[p] == 0);
    }
    CHECK(got == expected);
  }
  std::vector<std::uint8_t> five = {0, 1, 2, 3, 4, 0};
  CHECK(build_class_mask(five, 3, 2, rng).selected_classes.size() == 3);
}

TEST_CASE("mask errors and determinism") {
  Rng rng(3);
  CHECK_THROWS_AS(build_class_mask(std::vector<std::uint8_t>(4, 255), 2, 2, rng), DataError);
  std::vector<std::uint8_t> labels = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  Rng a(9), b(9);
  CHECK(build_class_mask(labels, 3, 3, a).selected_classes == build_class_mask(labels, 3, 3, b).selected_classes);
}

TEST_CASE("mix algebra") {
  Rng rng(4);
  const Tensor src = randu(rng, {3, 4, 5}), tgt = randu(rng, {3, 4, 5});
  BinaryMask ones{5, 4, std::vector<std::uint8_t>(20, 1), {}}, zeros{5, 4, std::vector<std::uint8_t>(20, 0), {}};
  CHECK(mix(src, ones, tgt) == src);
  CHECK(mix(src, zeros, tgt) == tgt);

  BinaryMask random{5, 4, std::vector<std::uint8_t>(20), {}};
  for (auto& v : random.mask) v = rng.uniform() < 0.5;
  const Tensor out = mix(src, random, tgt);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < 20; ++p) CHECK(out[c * 20 + p] == (random.mask[p] ? src[c * 20 + p] : tgt[c * 20 + p]));
  CHECK(mix(src, random, src) == src);
  CHECK_THROWS_AS(mix(src, random, randu(rng, {3, 4, 4})), ShapeError);
}

TEST_CASE("mixed labels") {
  std::vector<std::uint8_t> source = {1, 2, 3, 4}, pseudo = {255, 7, 255, 9};
  BinaryMask ones{2, 2, {1, 1, 1, 1}, {}}, zeros{2, 2, {0, 0, 0, 0}, {}}, half{2, 2, {1, 0, 0, 1}, {}};
  CHECK(mixed_label(source, ones, pseudo) == source);
  CHECK(mixed_label(source, zeros, std::vector<std::uint8_t>(4, 255)) == std::vector<std::uint8_t>(4, 255));
  CHECK(mixed_label(source, half, pseudo) == std::vector<std::uint8_t>{1, 7, 255, 4});
  CHECK_THROWS_AS(mixed_label(source, half, std::vector<std::uint8_t>(3, 0)), ShapeError);
}

TEST_CASE("mixed pairs from two appearances agree on the target region and labels") {
  SceneConfig sc;
  sc.width = 32;
  sc.height = 32;
  const Layout l = generate_layout(5, 1, sc);
  const LabeledSample a = make_sample(l, 0), b = make_sample(l, 3);
  Rng rng(6);
  const Tensor target = randu(rng, {3, 32, 32});
  std::vector<std::uint8_t> pseudo(32 * 32);
  for (auto& v : pseudo) v = static_cast<std::uint8_t>(rng.index(10));
  const BinaryMask m = build_class_mask(a.labels.labels, 32, 32, rng);
  const Tensor ma = mix(testutil::randu(rng, {3, 32, 32}), m, target);
  const Tensor mb = mix(testutil::randu(rng, {3, 32, 32}), m, target);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < 1024; ++p)
      if (!m.mask[p]) CHECK(ma[c * 1024 + p] == mb[c * 1024 + p]);
  CHECK(mixed_label(a.labels.labels, m, pseudo) == mixed_label(b.labels.labels, m, pseudo));
}

// ------------------------------------------------------------------ metrics

TEST_CASE("accumulate examples") {
  ConfusionMatrix cm(10);
  cm.accumulate(std::vector<std::uint8_t>(100, 3), std::vector<std::uint8_t>(100, 3));
  CHECK(cm.at(3, 3) == 100);
  CHECK(cm.total() == 100);
  ConfusionMatrix before = cm;
  cm.accumulate(std::vector<std::uint8_t>(10, 1), std::vector<std::uint8_t>(10, 255));
  CHECK(cm == before);
  CHECK_THROWS_AS(cm.accumulate(std::vector<std::uint8_t>{12}, std::vector<std::uint8_t>{1}), DataError);
  CHECK_THROWS_AS(cm.accumulate(std::vector<std::uint8_t>{1, 2}, std::vector<std::uint8_t>{1}), ShapeError);
  // a bad prediction leaves the matrix untouched
  CHECK_THROWS(cm.accumulate(std::vector<std::uint8_t>{1, 99}, std::vector<std::uint8_t>{1, 1}));
  CHECK(cm == before);
}

TEST_CASE("accumulate equals a brute-force tally") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 200;
    std::vector<std::uint8_t> pred(n), gt(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<std::uint8_t>(rng.index(5));
      gt[i] = rng.uniform() < 0.1 ? 255 : static_cast<std::uint8_t>(rng.index(5));
    }
    ConfusionMatrix cm(5);
    cm.accumulate(pred, gt);
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t p = 0; p < 5; ++p) {
        std::uint64_t count = 0;
        for (std::size_t i = 0; i < n; ++i) count += gt[i] == t && pred[i] == p;
        CHECK(cm.at(t, p) == count);
      }
  }
}

TEST_CASE("merge examples and partition property") {
  Rng rng(8);
  const std::size_t n = 300;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint8_t> pred(n), gt(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<std::uint8_t>(rng.index(4));
      gt[i] = rng.uniform() < 0.1 ? 255 : static_cast<std::uint8_t>(rng.index(4));
    }
    ConfusionMatrix whole(4), left(4), right(4);
    whole.accumulate(pred, gt);
    const std::size_t cut = rng.index(n + 1);
    left.accumulate(std::span(pred).first(cut), std::span(gt).first(cut));
    right.accumulate(std::span(pred).subspan(cut), std::span(gt).subspan(cut));
    CHECK(merge(left, right) == whole);
    CHECK(merge(left, right) == merge(right, left));
    CHECK(merge(whole, ConfusionMatrix(4)) == whole);
  }
  CHECK_THROWS_AS(merge(ConfusionMatrix(3), ConfusionMatrix(4)), ShapeError);
}

TEST_CASE("scores examples") {
  ConfusionMatrix diag(3);
  diag.accumulate(std::vector<std::uint8_t>{0, 1, 2, 2}, std::vector<std::uint8_t>{0, 1, 2, 2});
  const Scores d = scores(diag);
  CHECK(*d.miou == 1.0);
  CHECK(*d.macc == 1.0);

  ConfusionMatrix two(2);
  two.accumulate(std::vector<std::uint8_t>{0, 0, 0, 1, 0, 0, 1, 1, 1, 1},
                 std::vector<std::uint8_t>{0, 0, 0, 0, 1, 1, 1, 1, 1, 1});
  CHECK(two.at(0, 0) == 3);
  CHECK(two.at(0, 1) == 1);
  CHECK(two.at(1, 0) == 2);
  CHECK(two.at(1, 1) == 4);
  const Scores s = scores(two);
  CHECK(*s.iou[0] == doctest::Approx(0.5));
  CHECK(*s.iou[1] == doctest::Approx(4.0 / 7.0));
  CHECK(*s.miou == doctest::Approx(0.5357).epsilon(1e-4));
  CHECK(*s.acc[0] == doctest::Approx(0.75));
  CHECK(*s.acc[1] == doctest::Approx(2.0 / 3.0));
  CHECK(*s.macc == doctest::Approx(0.7083).epsilon(1e-4));

  // class 2 never predicted and never labelled
  ConfusionMatrix absent(3);
  absent.accumulate(std::vector<std::uint8_t>{0, 1}, std::vector<std::uint8_t>{0, 1});
  const Scores a = scores(absent);
  CHECK_FALSE(a.iou[2].has_value());
  CHECK_FALSE(a.acc[2].has_value());
  CHECK(*a.miou == 1.0);

  const Scores empty = scores(ConfusionMatrix(4));
  CHECK_FALSE(empty.miou.has_value());
  CHECK_FALSE(empty.macc.has_value());
}

TEST_CASE("score bounds") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    ConfusionMatrix cm(6);
    std::vector<std::uint8_t> pred(100), gt(100);
    for (std::size_t i = 0; i < 100; ++i) {
      pred[i] = static_cast<std::uint8_t>(rng.index(6));
      gt[i] = static_cast<std::uint8_t>(rng.index(6));
    }
    cm.accumulate(pred, gt);
    const Scores s = scores(cm);
    for (std::size_t c = 0; c < 6; ++c) {
      if (!s.iou[c]) continue;
      CHECK(*s.iou[c] >= 0.0);
      CHECK(*s.iou[c] <= 1.0);
      if (s.acc[c]) CHECK(*s.iou[c] <= *s.acc[c]);
    }
  }
}

TEST_CASE("score tables") {
  ConfusionMatrix two(2);
  two.accumulate(std::vector<std::uint8_t>{0, 0, 0, 1, 0, 0, 1, 1, 1, 1},
                 std::vector<std::uint8_t>{0, 0, 0, 0, 1, 1, 1, 1, 1, 1});
  const std::string csv = scores_csv(scores(two), {"road", "sky"});
  CHECK(csv.rfind("class,name,iou,acc\n", 0) == 0);
  CHECK(csv.find("0,road,0.5") != std::string::npos);
  CHECK(csv.find("mean,all,0.5357") != std::string::npos);
  const std::string txt = scores_text(scores(two), {"road", "sky"});
  CHECK(txt.find("road") != std::string::npos);
  CHECK(txt.find("0.535714") != std::string::npos);
}
