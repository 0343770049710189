#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "leafcam/checkpoint.hpp"
#include "leafcam/commands.hpp"
#include "leafcam/fileio.hpp"
#include "leafcam/image.hpp"
#include "leafcam/metrics.hpp"
#include "leafcam/model.hpp"
#include "test_support.hpp"

using namespace leafcam;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string output;
};

CliRun cli(const std::string& args) {
  const std::string cmd = std::string(LEAFCAM_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::vector<std::pair<std::string, std::vector<std::uint8_t>>> tree_bytes(const fs::path& root) {
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), root).string(), read_file(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

// One small dataset and a few trained members shared by every test in the suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("leafcam_cli_suite_" + std::to_string(getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    ASSERT_EQ(cli("synth --out " + q(data()) + " --classes 3 --per-class 20 --size 16 --seed 5").code, 0);
    for (const char* a : {"none", "se", "cbam"}) {
      const CliRun r = cli("train --data " + q(data()) + " --arch tiny-a --attention " + a +
                        " --size 16 --epochs 3 --batch 8 --lr 1e-2 --seed 1 --out " + q(model(a)) + " --history " +
                        q(root_ / (std::string(a) + ".csv")));
      ASSERT_EQ(r.code, 0) << r.output;
    }
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path data() { return root_ / "data"; }
  static fs::path model(const std::string& a) { return root_ / (a + ".lfc"); }
  static fs::path image() { return data() / "class_1" / "class_1_0003.ppm"; }

  static fs::path root_;
};

fs::path Cli::root_;

}  // namespace

TEST_F(Cli, SynthCountsAndBoxes) {
  leafcam::testing::TempDir dir("synth");
  const CliRun r = cli("synth --out " + q(dir / "d") + " --classes 7 --per-class 50 --size 32 --seed 42");
  ASSERT_EQ(r.code, 0) << r.output;
  int dirs = 0, images = 0;
  for (const auto& e : fs::directory_iterator(dir / "d")) {
    if (!e.is_directory()) continue;
    ++dirs;
    for (const auto& f : fs::directory_iterator(e.path())) images += f.path().extension() == ".ppm";
  }
  EXPECT_EQ(dirs, 7);
  EXPECT_EQ(images, 350);
  EXPECT_TRUE(fs::exists(dir / "d" / "boxes.csv"));
  EXPECT_NE(r.output.find("total 350"), std::string::npos);
}

TEST_F(Cli, SynthIsDeterministic) {
  leafcam::testing::TempDir dir("synth");
  const std::string flags = " --classes 4 --per-class 6 --size 16 --seed 9 --noise 0.2";
  ASSERT_EQ(cli("synth --out " + q(dir / "a") + flags).code, 0);
  ASSERT_EQ(cli("synth --out " + q(dir / "b") + flags).code, 0);
  EXPECT_EQ(tree_bytes(dir / "a"), tree_bytes(dir / "b"));
}

TEST_F(Cli, SynthRefusals) {
  leafcam::testing::TempDir dir("synth");
  EXPECT_EQ(cli("synth --out " + q(dir / "x") + " --classes 1").code, 1);
  write_file_atomic(dir / "full.txt", std::string_view("x"));
  fs::create_directories(dir / "full");
  write_file_atomic(dir / "full" / "keep.txt", std::string_view("x"));
  EXPECT_EQ(cli("synth --out " + q(dir / "full") + " --classes 2 --per-class 2 --size 16").code, 1);
  EXPECT_EQ(cli("synth --out " + q(dir / "full") + " --classes 2 --per-class 2 --size 16 --force").code, 0);
  EXPECT_TRUE(fs::exists(dir / "full" / "keep.txt"));
  EXPECT_EQ(cli("synth --out " + q(dir / "full.txt") + " --classes 2").code, 1);
}

TEST_F(Cli, TrainDefaultsMatchReferenceRegime) {
  const TrainOptions o;
  EXPECT_EQ(o.lr, 1e-4);
  EXPECT_EQ(o.batch, 32);
  EXPECT_EQ(o.epochs, 50);
  EXPECT_EQ(o.patience, 10);
  EXPECT_EQ(o.epsilon, 0.01);
  const CliRun help = cli("train --help");
  EXPECT_EQ(help.code, 0);
  for (const char* d : {"[0.0001]", "[32]", "[50]", "[10]"}) EXPECT_NE(help.output.find(d), std::string::npos) << d;
}

TEST_F(Cli, TrainIsDeterministic) {
  leafcam::testing::TempDir dir("train");
  const std::string base = "train --data " + q(data()) +
                           " --arch tiny-b --attention cbam --size 16 --epochs 2 --batch 8 --seed 3 --adv-train "
                           "--epsilon 0.01 --adv-mix 0.5";
  ASSERT_EQ(cli(base + " --out " + q(dir / "a.lfc") + " --history " + q(dir / "a.csv")).code, 0);
  ASSERT_EQ(cli(base + " --out " + q(dir / "b.lfc") + " --history " + q(dir / "b.csv")).code, 0);
  EXPECT_EQ(read_file(dir / "a.lfc"), read_file(dir / "b.lfc"));
  EXPECT_EQ(read_file(dir / "a.csv"), read_file(dir / "b.csv"));
  const Checkpoint c = load_checkpoint(dir / "a.lfc");
  EXPECT_EQ(c.spec.attention, AttentionKind::cbam);
  EXPECT_EQ(c.spec.backbone, Backbone::tiny_b);
  EXPECT_EQ(c.spec.classes, 3);

  ASSERT_EQ(cli("train --data " + q(data()) + " --arch tiny-b --attention cbam --size 16 --epochs 2 --batch 8 --seed 3 "
                "--out " + q(dir / "plain.lfc")).code, 0);
  EXPECT_NE(read_file(dir / "a.lfc"), read_file(dir / "plain.lfc"));
}

TEST_F(Cli, TrainExitCodes) {
  leafcam::testing::TempDir dir("train");
  const std::string out = " --seed 1 --out " + q(dir / "m.lfc");
  EXPECT_EQ(cli("train --data " + q(dir / "nowhere") + " --size 16" + out).code, 2);
  EXPECT_EQ(cli("train --data " + q(data()) + " --arch tiny-z --size 16" + out).code, 1);
  EXPECT_EQ(cli("train --data " + q(data()) + " --epsilon 0.02 --size 16" + out).code, 1);
  EXPECT_EQ(cli("train --data " + q(data()) + " --batch 0 --size 16" + out).code, 1);
  EXPECT_EQ(cli("train --data " + q(data()) + " --size 16 --seed 1").code, 1);
  EXPECT_FALSE(fs::exists(dir / "m.lfc"));
}

TEST_F(Cli, EvalDuplicateMemberEqualsSingle) {
  leafcam::testing::TempDir dir("eval");
  const std::string common = " --data " + q(data()) + " --split test --seed 1";
  ASSERT_EQ(cli("eval --model " + q(model("se")) + common + " --report " + q(dir / "one.json")).code, 0);
  ASSERT_EQ(cli("eval --model " + q(model("se")) + " --model " + q(model("se")) + common + " --report " +
                q(dir / "two.json")).code, 0);
  auto one = nlohmann::json::parse(read_file(dir / "one.json"));
  auto two = nlohmann::json::parse(read_file(dir / "two.json"));
  one.erase("model");
  two.erase("model");
  EXPECT_EQ(one, two);
}

TEST_F(Cli, EvalReportMatchesDumpedProbabilities) {
  leafcam::testing::TempDir dir("eval");
  const std::string cmd = "eval --model " + q(model("none")) + " --model " + q(model("se")) + " --model " +
                          q(model("cbam")) + " --data " + q(data()) + " --split test --seed 1 --report ";
  ASSERT_EQ(cli(cmd + q(dir / "r.json") + " --dump-probs " + q(dir / "p.json")).code, 0);
  const auto dump = nlohmann::json::parse(read_file(dir / "p.json"));
  const auto report = nlohmann::json::parse(read_file(dir / "r.json"));
  const std::vector<int> labels = dump["labels"].get<std::vector<int>>();
  const std::size_t n = labels.size(), K = 3;
  ASSERT_EQ(dump["members"].size(), 3u);

  std::vector<Tensor> members;
  for (const auto& m : dump["members"]) {
    Tensor t({static_cast<int>(n), static_cast<int>(K)});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < K; ++k) t[i * K + k] = m["probabilities"][i][k].get<float>();
    members.push_back(t);
  }
  int correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double mean[3] = {0, 0, 0};
    for (const Tensor& t : members)
      for (std::size_t k = 0; k < K; ++k) mean[k] += t[i * K + k] / 3.0;
    const int best = static_cast<int>(std::max_element(mean, mean + 3) - mean);
    correct += best == labels[i];
  }
  const double recomputed = static_cast<double>(correct) / n;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", recomputed);
  EXPECT_EQ(report["accuracy"].get<double>(), std::stod(buf));
  EXPECT_EQ(report["n"].get<std::size_t>(), n);

  const Report direct = build_report("x", soft_vote(members), labels, {"class_0", "class_1", "class_2"});
  EXPECT_LE(std::abs(direct.accuracy - recomputed), 1e-9);

  ASSERT_EQ(cli(cmd + q(dir / "r2.json")).code, 0);
  EXPECT_EQ(read_file(dir / "r.json"), read_file(dir / "r2.json"));
}

TEST_F(Cli, EvalExitCodes) {
  leafcam::testing::TempDir dir("eval");
  const std::string tail = " --data " + q(data()) + " --split test --seed 1 --report " + q(dir / "r.json");
  EXPECT_EQ(cli("eval --model " + q(dir / "missing.lfc") + tail).code, 2);

  std::vector<std::uint8_t> cut = read_file(model("se"));
  cut.resize(cut.size() / 2);
  write_file_atomic(dir / "cut.lfc", cut);
  const CliRun t = cli("eval --model " + q(dir / "cut.lfc") + tail);
  EXPECT_EQ(t.code, 2);
  EXPECT_NE(t.output.find("format error"), std::string::npos) << t.output;

  ASSERT_EQ(cli("synth --out " + q(dir / "four") + " --classes 4 --per-class 8 --size 16 --seed 2").code, 0);
  ASSERT_EQ(cli("train --data " + q(dir / "four") + " --size 16 --epochs 1 --batch 8 --seed 1 --out " +
                q(dir / "four.lfc")).code, 0);
  EXPECT_EQ(cli("eval --model " + q(model("se")) + " --model " + q(dir / "four.lfc") + tail).code, 1);
  EXPECT_EQ(cli("eval --model " + q(model("se")) + " --weights 1,2" + tail).code, 1);
  EXPECT_EQ(cli("eval --model " + q(model("se")) + " --split holdout --data " + q(data()) + " --seed 1 --report " +
                q(dir / "r.json")).code, 1);
  EXPECT_FALSE(fs::exists(dir / "r.json"));
}

TEST_F(Cli, GradcamAutoEqualsPredictedClass) {
  leafcam::testing::TempDir dir("cam");
  const CliRun a = cli("gradcam --model " + q(model("cbam")) + " --image " + q(image()) + " --class auto --out " +
                    q(dir / "auto"));
  ASSERT_EQ(a.code, 0) << a.output;
  const Checkpoint c = load_checkpoint(model("cbam"));
  const Tensor x = preprocess(read_image(image()), 16).reshaped({1, 3, 16, 16});
  const int predicted = predict(predict_proba(c.params, c.spec, x))[0];
  ASSERT_EQ(cli("gradcam --model " + q(model("cbam")) + " --image " + q(image()) + " --class " +
                std::to_string(predicted) + " --out " + q(dir / "fixed")).code, 0);
  for (const char* s : {".heatmap.ppm", ".overlay.ppm"}) {
    EXPECT_EQ(read_file(dir / (std::string("auto") + s)), read_file(dir / (std::string("fixed") + s)));
  }
}

TEST_F(Cli, GradcamWritesP6AtInputResolution) {
  leafcam::testing::TempDir dir("cam");
  ASSERT_EQ(cli("gradcam --model " + q(model("se")) + " --image " + q(image()) + " --class 2 --alpha 0.5 --out " +
                q(dir / "m")).code, 0);
  const RgbImage src = read_image(image());
  for (const char* s : {".heatmap.ppm", ".overlay.ppm"}) {
    const std::vector<std::uint8_t> bytes = read_file(dir / (std::string("m") + s));
    ASSERT_GE(bytes.size(), 2u);
    EXPECT_EQ(bytes[0], 'P');
    EXPECT_EQ(bytes[1], '6');
    const RgbImage img = decode_ppm(bytes);
    EXPECT_EQ(img.width, src.width);
    EXPECT_EQ(img.height, src.height);
  }
  ASSERT_EQ(cli("gradcam --model " + q(model("se")) + " --image " + q(image()) + " --class 2 --alpha 0.5 --out " +
                q(dir / "n")).code, 0);
  EXPECT_EQ(read_file(dir / "m.heatmap.ppm"), read_file(dir / "n.heatmap.ppm"));
  EXPECT_EQ(read_file(dir / "m.overlay.ppm"), read_file(dir / "n.overlay.ppm"));
}

TEST_F(Cli, GradcamExitCodes) {
  leafcam::testing::TempDir dir("cam");
  const std::string base = "gradcam --model " + q(model("se")) + " --image " + q(image()) + " --out " + q(dir / "o");
  EXPECT_EQ(cli(base + " --class 3").code, 1);
  EXPECT_EQ(cli(base + " --class -1").code, 1);
  EXPECT_EQ(cli(base + " --class two").code, 1);
  EXPECT_EQ(cli(base + " --class 0 --alpha 1.5").code, 1);
  EXPECT_EQ(cli("gradcam --model " + q(model("se")) + " --image " + q(dir / "none.ppm") + " --out " + q(dir / "o"))
                .code,
            2);
  EXPECT_FALSE(fs::exists(dir / "o.heatmap.ppm"));
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("bogus").code, 1);
}

TEST(ExitCode, MapsEveryErrorKind) {
  EXPECT_EQ(exit_code(ErrorKind::usage), 1);
  EXPECT_EQ(exit_code(ErrorKind::config), 1);
  for (ErrorKind k : {ErrorKind::dimension, ErrorKind::numeric, ErrorKind::data, ErrorKind::io, ErrorKind::format,
                      ErrorKind::internal})
    EXPECT_EQ(exit_code(k), 2);
}
