#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "emoseq/cli.hpp"

using namespace emoseq;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "emoseq");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("emoseq-cli-" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

}  // namespace

TEST(Cli, ParamsTableInPublishedMode) {
  auto r = cli({"params", "--dims", "D=600,V=25000,m=30,S=10", "--mode", "paper"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out,
            "variant\tpaper\n"
            "enc-bef\t0\n"
            "enc-aft\t0\n"
            "dec-rep\t6,000\n"
            "dec-start\t0\n"
            "dec-trans\t3,600,000\n"
            "dec-proj\t150,000,000\n"
            "enc-att\t180,000\n");
}

TEST(Cli, ParamsBothModes) {
  auto r = cli({"params"});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("variant\tpaper\tactual\n"), std::string::npos);
  EXPECT_NE(r.out.find("enc-att\t180,000\t3,240,000\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("dec-proj\t150,000,000\t135,225,000\n"), std::string::npos) << r.out;
}

TEST(Cli, GroupThousands) {
  EXPECT_EQ(group_thousands(0), "0");
  EXPECT_EQ(group_thousands(999), "999");
  EXPECT_EQ(group_thousands(1000), "1,000");
  EXPECT_EQ(group_thousands(150000000), "150,000,000");
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"dance"}).code, 1);
  EXPECT_EQ(cli({"params", "--dims", "D=600,V=25000"}).code, 1);
  EXPECT_EQ(cli({"params", "--dims", "D=6x0,V=1,m=1,S=1"}).code, 1);
  EXPECT_EQ(cli({"params", "--mode", "exact"}).code, 1);
  EXPECT_EQ(cli({"train", "--variant", "enc-mid", "--data", "x.tsv"}).code, 1);
  EXPECT_EQ(cli({"train", "--variant", "enc-att", "--data", "x.tsv", "--profile", "huge"}).code, 1);
  EXPECT_EQ(cli({"train", "--variant", "enc-att", "--data", "x.tsv", "--profile", "paper"}).code, 1);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, DataErrorsExitTwo) {
  TempDir dir;
  auto r = cli({"train", "--variant", "enc-att", "--data", dir / "missing.tsv", "--steps", "5"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing.tsv"), std::string::npos) << r.err;
  std::ofstream(dir / "broken.ckpt") << "not a checkpoint\n";
  std::ofstream(dir / "t.tsv") << "a b c d e f\tg h i j k l\n";
  EXPECT_EQ(cli({"eval", "--model", dir / "broken.ckpt", "--test", dir / "t.tsv"}).code, 2);
  // unlabeled pairs cannot train even the baseline
  EXPECT_EQ(cli({"train", "--variant", "baseline", "--data", dir / "t.tsv", "--steps", "5"}).code, 2);
}

TEST(Cli, SynthTrainEvalPipeline) {
  TempDir dir;
  auto s = cli({"synth", "--n", "2000", "--seed", "7", "--out", dir / "synth.tsv", "--labeled-out", dir / "labeled.tsv"});
  ASSERT_EQ(s.code, 0) << s.err;

  auto t = cli({"train", "--variant", "enc-att", "--profile", "desk", "--data", dir / "synth.tsv", "--out",
                dir / "m.ckpt", "--loss-out", dir / "loss.csv"});
  ASSERT_EQ(t.code, 0) << t.err;
  ASSERT_TRUE(fs::exists(dir / "m.ckpt"));
  const auto summary = ordered_json::parse(t.out.substr(t.out.find('{')));
  EXPECT_EQ(summary["steps"], 2000);
  EXPECT_LT(summary["final_loss"].get<double>(), 1.0);

  auto e = cli({"eval", "--model", dir / "m.ckpt", "--classifier", "oracle", "--test", dir / "synth.tsv", "--max-sources",
                "30", "--out", dir / "report.json", "--heatmap-out", dir / "heat.json"});
  ASSERT_EQ(e.code, 0) << e.err;
  std::ifstream report_file(dir / "report.json");
  const auto report = ordered_json::parse(report_file);
  EXPECT_EQ(report["per_emotion_accuracy"].size(), 9u);
  EXPECT_EQ(report["n_sources"], 30);
  EXPECT_EQ(report["variant"], "enc-att");
  std::ifstream heat_file(dir / "heat.json");
  const auto heat = load_heatmap(ordered_json::parse(heat_file));
  EXPECT_EQ(heat.emotion, Emotion::fear);
  EXPECT_FALSE(heat.matrix.empty());

  auto c = cli({"train-classifier", "--data", dir / "labeled.tsv", "--out", dir / "clf.ckpt", "--epochs", "2"});
  ASSERT_EQ(c.code, 0) << c.err;
  const auto metrics = ordered_json::parse(c.out);
  EXPECT_GT(metrics["accuracy"].get<double>(), 0.5);

  auto l = cli({"label", "--in", dir / "synth.tsv", "--out", dir / "relabeled.tsv", "--classifier", dir / "clf.ckpt"});
  ASSERT_EQ(l.code, 0) << l.err;
  const auto stats = ordered_json::parse(l.out);
  // exact duplicates are dropped on ingest
  EXPECT_GT(stats["pairs"].get<int>(), 1900);
  EXPECT_LE(stats["pairs"].get<int>(), 2000);
}
