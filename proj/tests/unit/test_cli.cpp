#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "unit/test_util.hpp"
#include "vitens/dataset.hpp"

using namespace vitens;
using vitens::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code;
    std::string out, err;
};

CliRun run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST(Cli, UsageContract) {
    EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
    EXPECT_EQ(run({}).code, cli::kUsage);
    EXPECT_EQ(run({"--help"}).code, cli::kOk);
    EXPECT_EQ(run({"train", "--help"}).code, cli::kOk);
    EXPECT_EQ(run({"synth"}).code, cli::kUsage);
    EXPECT_EQ(run({"ensemble", "--method", "median", "--out", "x.csv", "a.csv"}).code, cli::kUsage);
}

TEST(Cli, RuntimeFailureGoesToStderr) {
    TempDir dir("cli_fail");
    write_text(dir / "bad.csv", "path,label,a,b\np,0,0.9,0.9\n");
    const CliRun r = run({"evaluate", (dir / "bad.csv").string()});
    EXPECT_EQ(r.code, cli::kFailure);
    EXPECT_NE(r.err.find("error"), std::string::npos);
}

TEST(Cli, UnknownConfigKeyFails) {
    TempDir dir("cli_cfg");
    write_text(dir / "c.cfg", "not_a_key = 1\n");
    write_text(dir / "m.csv", "path,label,a,b\np,0,1,0\nq,1,0,1\n");
    const CliRun r = run({"evaluate", "--config", (dir / "c.cfg").string(), (dir / "m.csv").string()});
    EXPECT_NE(r.code, cli::kOk);
    EXPECT_NE(r.err.find("not_a_key"), std::string::npos) << r.err;
}

TEST(Cli, SynthThenSplitAudit) {
    TempDir dir("cli_synth");
    const std::string data = (dir / "d").string();
    EXPECT_EQ(run({"synth", "--out", data, "--classes", "3", "--per-class", "10", "--image-size", "16", "--seed", "4"})
                  .code,
              cli::kOk);
    EXPECT_EQ(run({"synth", "--out", data}).code, cli::kFailure);
    const CliRun audit = run({"split-audit", "--data", data});
    ASSERT_EQ(audit.code, cli::kOk) << audit.err;
    EXPECT_NE(audit.out.find("c00_square,10,6,2,2"), std::string::npos) << audit.out;
    EXPECT_NE(audit.out.find("Total,30,18,6,6"), std::string::npos) << audit.out;
    const CliRun excluded = run({"split-audit", "--data", data, "--exclude", "c01_frame"});
    EXPECT_EQ(excluded.out.find("c01_frame"), std::string::npos);
}

TEST(Cli, EnsembleAverageOfTrivialMatrices) {
    TempDir dir("cli_ens");
    write_text(dir / "a.csv", "path,label,x,y\np0,0,1,0\n");
    write_text(dir / "b.csv", "path,label,x,y\np0,0,0,1\n");
    const CliRun r = run({"ensemble", "--method", "average", (dir / "a.csv").string(), (dir / "b.csv").string(), "--out",
                       (dir / "mean.csv").string()});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    const auto m = read_prediction_matrix(dir / "mean.csv");
    EXPECT_EQ(m.values, (std::vector<double>{0.5, 0.5}));
    const CliRun weighted = run({"ensemble", "--method", "weighted", "--weights", "1,0", (dir / "a.csv").string(),
                              (dir / "b.csv").string(), "--out", (dir / "w.csv").string()});
    ASSERT_EQ(weighted.code, cli::kOk) << weighted.err;
    EXPECT_EQ(read_prediction_matrix(dir / "w.csv").values, (std::vector<double>{1.0, 0.0}));
}

TEST(Cli, EvaluateWritesReportAndConfusion) {
    TempDir dir("cli_eval");
    write_text(dir / "m.csv", "path,label,x,y\np0,0,0.8,0.2\np1,1,0.3,0.7\np2,1,0.6,0.4\n");
    const CliRun r = run({"evaluate", (dir / "m.csv").string(), "--confusion", (dir / "cm.csv").string()});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_NE(r.out.find("accuracy"), std::string::npos);
    std::ifstream in(dir / "cm.csv");
    const std::string cm((std::istreambuf_iterator<char>(in)), {});
    EXPECT_NE(cm.find("y,1,1"), std::string::npos) << cm;
}

TEST(Cli, TrainPredictExplainSmoke) {
    TempDir dir("cli_train");
    const std::string data = (dir / "d").string(), weights = (dir / "w.bin").string();
    ASSERT_EQ(run({"synth", "--out", data, "--classes", "2", "--per-class", "8", "--image-size", "16"}).code, cli::kOk);
    const CliRun t = run({"train", "--data", data, "--out", weights, "--epochs", "1", "--quiet", "--history",
                       (dir / "h.csv").string()});
    ASSERT_EQ(t.code, cli::kOk) << t.err;
    EXPECT_NE(t.out.find("best val_acc"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "h.csv"));
    const CliRun p = run({"predict", "--weights", weights, "--data", data, "--split", "test", "--out",
                       (dir / "p.csv").string()});
    ASSERT_EQ(p.code, cli::kOk) << p.err;
    EXPECT_EQ(read_prediction_matrix(dir / "p.csv").rows(), 4u);
    const CliRun x = run({"explain", "--weights", weights, "--data", data, "--method", "both", "--permutations", "2",
                       "--out-dir", (dir / "x").string()});
    ASSERT_EQ(x.code, cli::kOk) << x.err;
    EXPECT_NE(x.out.find("grad-cam"), std::string::npos);
    EXPECT_NE(x.out.find("shapley"), std::string::npos);
}

TEST(Cli, BenchAttentionPrintsSlopes) {
    const CliRun r = run({"bench-attention", "--max-tokens", "128", "--repeats", "1"});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_NE(r.out.find("loglog slope"), std::string::npos);
}
