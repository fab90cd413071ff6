#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cianet/cli.hpp"

using namespace cianet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int status;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "cianet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int s = cli::run(int(argv.size()), argv.data(), out, err);
  return {s, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::vector<std::string> tiny() {
  return {"--set", "corpus.train=6", "--set", "corpus.test_seen=2", "--set", "corpus.test_unseen=2",
          "--set", "train.epochs=1"};
}

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("cianet_cli_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string at(const std::string& name) const { return (dir / name).string(); }
  fs::path dir;
};

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({}).status, cli::usage);
  const auto unknown = run({"gen", "--out", at("x"), "--bogus"});
  EXPECT_EQ(unknown.status, cli::usage);
  EXPECT_NE(unknown.err.find("gen"), std::string::npos);
  EXPECT_EQ(run({"frobnicate"}).status, cli::usage);
  EXPECT_EQ(run({"gen"}).status, cli::usage);
  EXPECT_EQ(run({"gen", "--out", at("x"), "--set", "nosuch.key=1"}).status, cli::usage);
  EXPECT_EQ(run({"gen", "--out", at("x"), "--set", "train.batch_size=0"}).status, cli::usage);
  EXPECT_EQ(run({"eval", "--out", at("e"), "--corpus", at("c")}).status, cli::usage);
  EXPECT_EQ(run({"--help"}).status, cli::ok);
  EXPECT_FALSE(fs::exists(dir / "x"));
}

TEST_F(Cli, DataErrors) {
  EXPECT_EQ(run({"train", "--out", at("t"), "--corpus", at("missing")}).status, cli::data);
  ASSERT_EQ(run(std::vector<std::string>{"gen", "--out", at("c")} + tiny()).status, cli::ok);
  const auto e = run({"eval", "--out", at("e"), "--corpus", at("c"), "--checkpoint", at("none.ckpt")});
  EXPECT_EQ(e.status, cli::data);
  EXPECT_NE(e.err.find("none.ckpt"), std::string::npos);
}

TEST_F(Cli, EvalNamesMissingPrediction) {
  ASSERT_EQ(run(std::vector<std::string>{"gen", "--out", at("c")} + tiny()).status, cli::ok);
  const Corpus corpus = Corpus::open(dir / "c");
  fs::create_directories(dir / "pred");
  std::string dropped;
  for (const auto& s : corpus.manifest.split(Split::test_seen)) {
    const auto name = fs::path(s.labels).filename();
    if (dropped.empty()) {
      dropped = name.string();
      continue;
    }
    fs::copy_file(dir / "c" / s.labels, dir / "pred" / name);
  }
  const auto r = run({"eval", "--out", at("e"), "--corpus", at("c"), "--pred", at("pred"), "--split", "test-seen"});
  EXPECT_EQ(r.status, cli::data);
  EXPECT_NE(r.err.find(dropped), std::string::npos);
  EXPECT_NE(slurp(dir / "e" / "summary.json").find(dropped), std::string::npos);
}

TEST_F(Cli, GenIsReproducibleUnderSeed) {
  ASSERT_EQ(run(std::vector<std::string>{"gen", "--out", at("a"), "--seed", "5"} + tiny()).status, cli::ok);
  ASSERT_EQ(run(std::vector<std::string>{"gen", "--out", at("b"), "--seed", "5"} + tiny()).status, cli::ok);
  ASSERT_EQ(run(std::vector<std::string>{"gen", "--out", at("c"), "--seed", "6"} + tiny()).status, cli::ok);
  const Corpus a = Corpus::open(dir / "a");
  ASSERT_EQ(a.manifest.samples.size(), 10u);
  bool differs = false;
  for (const auto& s : a.manifest.samples) {
    EXPECT_EQ(slurp(dir / "a" / s.image), slurp(dir / "b" / s.image));
    EXPECT_EQ(slurp(dir / "a" / s.labels), slurp(dir / "b" / s.labels));
    differs |= slurp(dir / "a" / s.image) != slurp(dir / "c" / s.image);
  }
  EXPECT_TRUE(differs);
}

TEST_F(Cli, EndToEndSmoke) {
  ASSERT_EQ(run(std::vector<std::string>{"gen", "--out", at("corpus")} + tiny()).status, cli::ok);
  const auto t = run(std::vector<std::string>{"train", "--out", at("run"), "--corpus", at("corpus"), "--seed", "3",
                                              "--loss", "bce", "--no-iam"} +
                     tiny());
  ASSERT_EQ(t.status, cli::ok) << t.err;
  const auto cfg = nlohmann::json::parse(slurp(dir / "run" / "config.json"));
  EXPECT_EQ(cfg["loss"]["nuclei_loss"], "bce");
  EXPECT_EQ(cfg["model"]["use_iam"], false);
  const std::string ckpt = at("run/final.ckpt");
  ASSERT_TRUE(fs::exists(ckpt));

  const auto inf = run({"infer", "--out", at("inf"), "--corpus", at("corpus"), "--checkpoint", ckpt});
  ASSERT_EQ(inf.status, cli::ok) << inf.err;
  int labels = 0, maps = 0;
  for (const auto& e : fs::directory_iterator(dir / "inf" / "labels")) labels += e.path().extension() == ".png";
  for (const auto& e : fs::directory_iterator(dir / "inf" / "maps")) maps += e.path().extension() == ".nmap";
  EXPECT_EQ(labels, 4);
  EXPECT_EQ(maps, 4);

  const auto ev = run({"eval", "--out", at("ev"), "--corpus", at("corpus"), "--checkpoint", ckpt});
  ASSERT_EQ(ev.status, cli::ok) << ev.err;
  const auto from_pred = run({"eval", "--out", at("ev2"), "--corpus", at("corpus"), "--pred", at("inf/labels")});
  ASSERT_EQ(from_pred.status, cli::ok) << from_pred.err;
  EXPECT_EQ(slurp(dir / "ev" / "metrics.csv"), slurp(dir / "ev2" / "metrics.csv"));

  for (const auto& [name, extra] : std::vector<std::pair<std::string, std::vector<std::string>>>{
           {"bce", {"--loss", "bce"}}, {"st", {"--loss", "smooth_truncated", "--gamma", "0.2"}}}) {
    const auto a = run(std::vector<std::string>{"analyze-loss", "--out", at(name), "--corpus", at("corpus"),
                                                "--checkpoint", ckpt, "--split", "test"} +
                       extra);
    ASSERT_EQ(a.status, cli::ok) << a.err;
    std::ifstream csv(dir / name / "loss_cdf.csv");
    std::string line, last;
    std::getline(csv, line);
    EXPECT_EQ(line, "fraction,cumulative_loss");
    double prev = 0;
    while (std::getline(csv, line)) {
      const double c = std::stod(line.substr(line.find(',') + 1));
      EXPECT_GE(c, prev);
      prev = c;
      last = line;
    }
    EXPECT_EQ(last, "1,1");
  }
  EXPECT_NE(slurp(dir / "bce" / "loss_cdf.csv"), slurp(dir / "st" / "loss_cdf.csv"));
  const auto summary = nlohmann::json::parse(slurp(dir / "st" / "loss_summary.json"));
  EXPECT_EQ(summary["loss"], "smooth_truncated");
  EXPECT_EQ(summary["gamma"], 0.2);

  // A config whose model disagrees with the checkpoint is refused.
  const auto mismatch = run({"eval", "--out", at("ev3"), "--corpus", at("corpus"), "--checkpoint", ckpt, "--config",
                             (fs::path(CIANET_SOURCE_DIR) / "configs" / "toy.json").string()});
  EXPECT_EQ(mismatch.status, cli::usage);
}

TEST_F(Cli, DivergenceIsNumericFailure) {
  ASSERT_EQ(run(std::vector<std::string>{"gen", "--out", at("corpus")} + tiny()).status, cli::ok);
  const auto t = run(std::vector<std::string>{"train", "--out", at("run"), "--corpus", at("corpus"), "--set",
                                              "train.lr_max=1e30", "--set", "train.lr_warmup_epochs=0", "--set",
                                              "train.max_consecutive_skips=0"} +
                     tiny());
  EXPECT_EQ(t.status, cli::numeric) << t.out << t.err;
}
