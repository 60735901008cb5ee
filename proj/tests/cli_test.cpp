#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / ("audfer_cli_test_" + std::to_string(::getpid()));

int run(const std::string& args) {
  const std::string cmd = std::string(AUDFER_CLI_PATH) + " " + args + " > " + (kWork / "stdout.txt").string() +
                          " 2> " + (kWork / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string p(const std::string& name) { return (kWork / name).string(); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    std::ofstream(kWork / "spec.json") << R"({"total": 280, "feature_dim": 16, "seed": 3})";
    std::ofstream(kWork / "cfg.json") << R"({"epochs": 2, "hidden": [8], "batch_size": 32})";
    ASSERT_EQ(run("synth-gen --spec " + p("spec.json") + " --test-size 140 --out " + p("gen")), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(kWork); }
};

}  // namespace

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("no-such-command"), 1);
  EXPECT_EQ(run("pos-weights --labels " + p("gen/train_labels.csv") + " --strategy focal --out x.csv"), 1);
}

TEST_F(Cli, MissingInputExitsThree) {
  EXPECT_EQ(run("pos-weights --labels " + p("absent.csv") + " --out " + p("pw.csv")), 3);
}

TEST_F(Cli, ContractViolationExitsOne) {
  std::ofstream(kWork / "bad_labels.csv") << "# audfer-labels version=1\nvideo_id,expression\n";
  EXPECT_EQ(run("pos-weights --labels " + p("bad_labels.csv") + " --out " + p("pw.csv")), 1);
  EXPECT_NE(slurp(kWork / "stderr.txt").find("error:"), std::string::npos);
}

TEST_F(Cli, LabelingPipeline) {
  ASSERT_EQ(run("pseudo-label --frames " + p("gen/train_frames.ndjson") + " --annotations " +
                p("gen/train_annotations.csv") + " --out " + p("labels.csv")),
            0);
  ASSERT_EQ(run("pos-weights --labels " + p("labels.csv") + " --strategy minor --out " + p("pw.csv")), 0);
  const auto pw = slurp(kWork / "pw.csv");
  EXPECT_EQ(pw.rfind("# audfer-pos-weights version=1 strategy=minor", 0), 0u);
  EXPECT_NE(pw.find("Happy,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1\n"), std::string::npos);
}

TEST_F(Cli, KnowledgePipeline) {
  ASSERT_EQ(run("extract-knowledge --frames " + p("gen/train_frames.ndjson") + " --preds " +
                p("gen/train_preds.csv") + " --theta 0.5 --out " + p("k1.csv")),
            0);
  ASSERT_EQ(run("aggregate-knowledge " + p("k1.csv") + " " + p("k1.csv") + " --midpoint compat --out " + p("s.csv")),
            0);
  EXPECT_NE(slurp(kWork / "s.csv").find("stage=aggregate datasets=2"), std::string::npos);
  EXPECT_EQ(run("aggregate-knowledge " + p("s.csv") + " --out " + p("s2.csv")), 1);
}

TEST_F(Cli, TrainEvalAndExports) {
  const std::string data = " --train-features " + p("gen/train_features.bin") + " --train-labels " +
                           p("gen/train_labels.csv") + " --test-features " + p("gen/test_features.bin") +
                           " --test-labels " + p("gen/test_labels.csv");
  ASSERT_EQ(run("train --config " + p("cfg.json") + " --knowledge " + p("gen/knowledge.csv") + data + " --out " +
                p("run")),
            0);
  for (auto f : {"checkpoint.bin", "train_log.csv", "eval.csv", "config.json", "pos_weights.csv"})
    EXPECT_TRUE(fs::exists(kWork / "run" / f)) << f;
  const std::string eval = " --checkpoint " + p("run/checkpoint.bin") + " --features " +
                           p("gen/test_features.bin") + " --labels " + p("gen/test_labels.csv");
  ASSERT_EQ(run("eval" + eval + " --out " + p("ev")), 0);
  EXPECT_EQ(slurp(kWork / "ev/eval.csv"), slurp(kWork / "run/eval.csv"));
  ASSERT_EQ(run("export-confusion" + eval + " --out " + p("heat")), 0);
  EXPECT_EQ(slurp(kWork / "heat.csv"), slurp(kWork / "ev/confusion.csv"));
  ASSERT_EQ(run("export-embeddings" + eval + " --out " + p("emb.csv")), 0);
  EXPECT_EQ(run("train --knowledge " + p("gen/ground_truth.csv") + " --lambda 3" + data + " --out " + p("bad")), 1);
}

TEST_F(Cli, GradcheckPrintsOneRecord) {
  ASSERT_EQ(run("gradcheck --seed 4 --batch 3 --eps 1e-5"), 0);
  const auto out = slurp(kWork / "stdout.txt");
  EXPECT_EQ(std::count(out.begin(), out.end(), '\n'), 1);
  EXPECT_NE(out.find("\"max_relative_error\""), std::string::npos);
}
