#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef ALIGNLAB_CLI
#define ALIGNLAB_CLI "alignlab"
#endif

namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path path;
  explicit Scratch(const std::string& tag)
      : path(fs::temp_directory_path() / ("alignlab_cli_" + std::to_string(::getpid()) + "_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& child) const { return (path / child).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result run(const Scratch& s, const std::string& args) {
  const std::string out = s / "stdout.txt", err = s / "stderr.txt";
  const std::string cmd = std::string("\"") + ALIGNLAB_CLI + "\" " + args + " > \"" + out + "\" 2> \"" + err + "\"";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::size_t count_files(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}));
}

std::string tree_bytes(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.string() + '\0' + slurp(root / f);
  return all;
}

const char* kTiny =
    "--set iterations=3 --set data.layouts=4 --set data.test_layouts=2 --set data.width=32 --set data.height=32 "
    "--set model.widths=4,4,6,6 --set model.hidden=4";

}  // namespace

TEST_CASE("generate writes one label file per layout and four images each") {
  Scratch s("gen");
  const Result r = run(s, "generate --seed 3 --layouts 10 --width 32 --height 32 --out " + (s / "d"));
  REQUIRE(r.code == 0);
  CHECK(count_files(s / "d/labels") == 10);
  CHECK(count_files(s / "d/rgb") == 40);
  CHECK(fs::exists(s / "d/manifest.json"));
  CHECK(slurp(s / "d/rgb/000000_a0.ppm").rfind("P6\n32 32\n255\n", 0) == 0);
  CHECK(slurp(s / "d/labels/000000.pgm").rfind("P5\n32 32\n255\n", 0) == 0);
}

TEST_CASE("generate is deterministic") {
  Scratch s("det");
  REQUIRE(run(s, "generate --seed 7 --layouts 6 --width 32 --height 32 --out " + (s / "a")).code == 0);
  REQUIRE(run(s, "generate --seed 7 --layouts 6 --width 32 --height 32 --out " + (s / "b")).code == 0);
  REQUIRE(run(s, "generate --seed 8 --layouts 6 --width 32 --height 32 --out " + (s / "c")).code == 0);
  CHECK(tree_bytes(s / "a") == tree_bytes(s / "b"));
  CHECK(tree_bytes(s / "a") != tree_bytes(s / "c"));
}

TEST_CASE("usage errors exit with 1") {
  Scratch s("usage");
  CHECK(run(s, "generate --layouts 0 --out " + (s / "z")).code == 1);
  CHECK(run(s, "").code == 1);
  CHECK(run(s, "frobnicate").code == 1);
  CHECK(run(s, "generate --seed 1").code == 1);  // --out is required
  const Result bad = run(s, "train --set align.metric=cosine --out " + (s / "t"));
  CHECK(bad.code == 1);
  CHECK(bad.err.find("align.metric") != std::string::npos);
  CHECK(run(s, "train --set noequals --out " + (s / "t")).code == 1);
  CHECK(run(s, "ablate --axis colour --out " + (s / "a")).code == 1);
}

TEST_CASE("data errors exit with 2") {
  Scratch s("data");
  CHECK(run(s, "eval --checkpoint " + (s / "missing.ckpt") + " --dataset " + (s / "nothing")).code == 2);
  CHECK(run(s, "train --config " + (s / "missing.cfg") + " --out " + (s / "t")).code == 2);
  CHECK(run(s, "report --csv " + (s / "missing.csv") + " --svg " + (s / "x.svg")).code == 2);
}

TEST_CASE("numeric blow-up exits with 3") {
  Scratch s("numeric");
  const Result r = run(s, std::string("train ") + kTiny + " --set lr=1e300 --out " + (s / "t"));
  CHECK(r.code == 3);
}

TEST_CASE("train, eval and report round trip") {
  Scratch s("flow");
  std::ofstream(s / "dg.cfg") << "align.metric = cs\n";
  const Result dg = run(s, "train --config " + (s / "dg.cfg") + " --mode dg " + kTiny + " --out " + (s / "dg"));
  REQUIRE(dg.code == 0);
  // loss_a column is nonzero for an aligned run
  const std::string log = slurp(s / "dg/train_log.csv");
  std::istringstream lines(log);
  std::string header, row;
  std::getline(lines, header);
  std::getline(lines, row);
  const auto c1 = row.find(','), c2 = row.find(',', c1 + 1), c3 = row.find(',', c2 + 1);
  CHECK(std::stod(row.substr(c2 + 1, c3 - c2 - 1)) > 0.0);

  const Result uda = run(s, std::string("train --mode uda --set uda.tau=0.2 --set align.metric=cs ") + kTiny +
                                " --out " + (s / "uda"));
  REQUIRE(uda.code == 0);
  const std::string ulog = slurp(s / "uda/train_log.csv");
  bool nonzero_m = false;
  std::istringstream ul(ulog);
  std::getline(ul, header);
  while (std::getline(ul, row)) {
    std::vector<std::string> f;
    std::stringstream rs(row);
    std::string cell;
    while (std::getline(rs, cell, ',')) f.push_back(cell);
    nonzero_m = nonzero_m || std::stod(f.at(4)) > 0.0;
  }
  CHECK(nonzero_m);

  REQUIRE(run(s, "generate --seed 7 --layouts 2 --width 32 --height 32 --unseen --out " + (s / "test")).code == 0);
  const Result ev = run(s, "eval --checkpoint " + (s / "dg/model.ckpt") + " --dataset " + (s / "test") +
                               " --split unseen --csv " + (s / "scores.csv"));
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("split unseen: mIoU") != std::string::npos);
  CHECK(slurp(s / "scores.csv").rfind("class,name,iou,acc\n", 0) == 0);
  CHECK(run(s, "eval --checkpoint " + (s / "dg/model.ckpt") + " --dataset " + (s / "test") + " --split sideways").code ==
        1);

  REQUIRE(run(s, std::string("ablate --axis metric --values none,cs --seeds 2 --threads 1 ") + kTiny + " --out " +
                     (s / "ab"))
              .code == 0);
  const std::string csv = slurp(s / "ab/results.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  REQUIRE(run(s, "report --csv " + (s / "ab/results.csv") + " --svg " + (s / "again.svg")).code == 0);
  CHECK(slurp(s / "again.svg") == slurp(s / "ab/report.svg"));
}

TEST_CASE("train on a generated dataset directory") {
  Scratch s("dsdir");
  REQUIRE(run(s, "generate --seed 2 --layouts 3 --width 32 --height 32 --out " + (s / "d")).code == 0);
  const Result r = run(s, std::string("train --dataset ") + (s / "d") + " " + kTiny + " --out " + (s / "t"));
  CHECK(r.code == 0);
  CHECK(fs::exists(s / "t/model.ckpt"));
}
