#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "support/cli.hpp"
#include "support/fixtures.hpp"
#include "tinyqe/checkpoint.hpp"
#include "tinyqe/corpus.hpp"
#include "tinyqe/leaderboard.hpp"

using namespace tinyqe;
using tinyqe::testing::cli_path;
using tinyqe::testing::make_overlap_dataset;
using tinyqe::testing::run_cli;
using tinyqe::testing::ScratchDir;

namespace {

#define REQUIRE_CLI() \
    if (cli_path().empty()) GTEST_SKIP() << "pass --cli=<path to tinyqe binary>"

// micro model flags: fast enough for unit-level pipeline checks
const char* kMicroFlags = "--d-model 8 --n-heads 2 --n-layers 1 --d-ff 16 --max-len 32 --dropout 0";

void write_split(const Dataset& dataset, const std::filesystem::path& path) { write_dataset(dataset, path); }

}  // namespace

TEST(Cli, TrainPredictEvaluatePipeline) {
    REQUIRE_CLI();
    ScratchDir scratch("pipeline");
    write_split(make_overlap_dataset(32, 500, "tr", 8, 16), scratch.file("train.tsv"));
    write_split(make_overlap_dataset(8, 501, "dv", 8, 16), scratch.file("dev.tsv"));
    write_split(make_overlap_dataset(8, 502, "te", 8, 16), scratch.file("test.tsv"));

    auto train = run_cli("train --train " + scratch.file("train.tsv").string() + " --dev " +
                             scratch.file("dev.tsv").string() + " --out " + scratch.file("model.qeck").string() +
                             " --log " + scratch.file("train.log").string() + " " + kMicroFlags +
                             " --lr 1e-3 --batch 8 --epochs 2 --seed 3",
                         scratch.path());
    ASSERT_EQ(train.exit_code, 0) << train.err;
    EXPECT_TRUE(std::filesystem::exists(scratch.file("model.qeck")));
    EXPECT_TRUE(std::filesystem::exists(scratch.file("train.log")));

    auto predict = run_cli("predict --model " + scratch.file("model.qeck").string() + " --in " +
                               scratch.file("test.tsv").string() + " --out " + scratch.file("preds.tsv").string(),
                           scratch.path());
    ASSERT_EQ(predict.exit_code, 0) << predict.err;
    const PredictionSet preds = read_predictions(scratch.file("preds.tsv"));
    EXPECT_EQ(preds.size(), 8u);

    auto evaluate = run_cli("evaluate --preds " + scratch.file("preds.tsv").string() + " --gold " +
                                scratch.file("test.tsv").string() + " --report " +
                                scratch.file("report.json").string() + " --method micro --pair en-xx",
                            scratch.path());
    ASSERT_EQ(evaluate.exit_code, 0) << evaluate.err;
    const auto report = nlohmann::json::parse(tinyqe::testing::slurp_file(scratch.file("report.json")));
    EXPECT_EQ(report.at("method"), "micro");
    EXPECT_EQ(report.at("pair"), "en-xx");
    EXPECT_EQ(report.at("n").get<std::size_t>(), 8u);
    EXPECT_LE(std::fabs(report.at("spearman").get<double>()), 1.0);
}

TEST(Cli, DeterministicAcrossIdenticalInvocations) {
    REQUIRE_CLI();
    ScratchDir scratch("determinism");
    write_split(make_overlap_dataset(16, 510, "tr", 8, 14), scratch.file("train.tsv"));
    write_split(make_overlap_dataset(6, 511, "dv", 8, 14), scratch.file("dev.tsv"));

    const std::string common = "train --train " + scratch.file("train.tsv").string() + " --dev " +
                               scratch.file("dev.tsv").string() + " " + kMicroFlags +
                               " --lr 1e-3 --batch 4 --epochs 2 --seed 9";
    auto first = run_cli(common + " --out " + scratch.file("m1.qeck").string() + " --log " +
                             scratch.file("l1.log").string(),
                         scratch.path());
    auto second = run_cli(common + " --out " + scratch.file("m2.qeck").string() + " --log " +
                              scratch.file("l2.log").string(),
                          scratch.path());
    ASSERT_EQ(first.exit_code, 0) << first.err;
    ASSERT_EQ(second.exit_code, 0) << second.err;
    EXPECT_EQ(tinyqe::testing::slurp_file(scratch.file("m1.qeck")),
              tinyqe::testing::slurp_file(scratch.file("m2.qeck")));
    EXPECT_EQ(tinyqe::testing::slurp_file(scratch.file("l1.log")),
              tinyqe::testing::slurp_file(scratch.file("l2.log")));
}

TEST(Cli, EvaluateMissingSegmentExitsTwoAndNamesIt) {
    REQUIRE_CLI();
    ScratchDir scratch("missing");
    write_split(make_overlap_dataset(4, 520, "gold", 8, 12), scratch.file("gold.tsv"));
    tinyqe::testing::spit_file(scratch.file("preds.tsv"), "gold0\t0.5\ngold1\t0.25\ngold2\t-0.5\n");
    auto result = run_cli("evaluate --preds " + scratch.file("preds.tsv").string() + " --gold " +
                              scratch.file("gold.tsv").string() + " --report " + scratch.file("r.json").string(),
                          scratch.path());
    EXPECT_EQ(result.exit_code, 2);
    EXPECT_NE(result.err.find("error[2]:"), std::string::npos) << result.err;
    EXPECT_NE(result.err.find("gold3"), std::string::npos) << result.err;
}

TEST(Cli, EnsembleSingleInputIsIdentity) {
    REQUIRE_CLI();
    ScratchDir scratch("ens1");
    PredictionSet preds{{"a", 0.125}, {"b", -2.5}, {"c", 0.7071067811865476}};
    write_predictions(preds, scratch.file("in.tsv"));
    auto result = run_cli("ensemble --preds " + scratch.file("in.tsv").string() + " --out " +
                              scratch.file("out.tsv").string(),
                          scratch.path());
    ASSERT_EQ(result.exit_code, 0) << result.err;
    EXPECT_EQ(tinyqe::testing::slurp_file(scratch.file("out.tsv")),
              tinyqe::testing::slurp_file(scratch.file("in.tsv")));
}

TEST(Cli, EnsembleAveragesMembers) {
    REQUIRE_CLI();
    ScratchDir scratch("ens2");
    write_predictions({{"s1", 0.1}, {"s2", 0.3}}, scratch.file("a.tsv"));
    write_predictions({{"s1", 0.3}, {"s2", 0.5}}, scratch.file("b.tsv"));
    auto result = run_cli("ensemble --preds " + scratch.file("a.tsv").string() + " " +
                              scratch.file("b.tsv").string() + " --out " + scratch.file("out.tsv").string(),
                          scratch.path());
    ASSERT_EQ(result.exit_code, 0) << result.err;
    const PredictionSet out = read_predictions(scratch.file("out.tsv"));
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].score, 0.2);
    EXPECT_EQ(out[1].score, 0.4);
}

TEST(Cli, FootprintMatchesSavedByteCount) {
    REQUIRE_CLI();
    ScratchDir scratch("footprint");
    const QEModel model = QEModel::init(tinyqe::testing::micro_config(), 3);
    const auto path = scratch.file("model.qeck");
    const std::uint64_t bytes = save_checkpoint(model, path);
    auto result = run_cli("footprint --model " + path.string(), scratch.path());
    ASSERT_EQ(result.exit_code, 0) << result.err;
    EXPECT_NE(result.out.find(format_bytes(bytes)), std::string::npos) << result.out;

    tinyqe::testing::spit_file(scratch.file("members.txt"), "model.qeck\nmodel.qeck\nmodel.qeck\n");
    auto triple = run_cli("footprint --model " + scratch.file("members.txt").string(), scratch.path());
    ASSERT_EQ(triple.exit_code, 0) << triple.err;
    EXPECT_NE(triple.out.find(format_bytes(3 * bytes)), std::string::npos) << triple.out;
}

TEST(Cli, FootprintMissingFileExitsTwo) {
    REQUIRE_CLI();
    ScratchDir scratch("fpmissing");
    auto result = run_cli("footprint --model " + scratch.file("absent.qeck").string(), scratch.path());
    EXPECT_EQ(result.exit_code, 2);
    EXPECT_NE(result.err.find("error[2]:"), std::string::npos) << result.err;
}

TEST(Cli, UnknownSubcommandExitsOne) {
    REQUIRE_CLI();
    ScratchDir scratch("usage");
    auto result = run_cli("frobnicate --x 1", scratch.path());
    EXPECT_EQ(result.exit_code, 1);
    EXPECT_NE(result.err.find("error[1]:"), std::string::npos) << result.err;
    auto missing = run_cli("train --train only.tsv", scratch.path());
    EXPECT_EQ(missing.exit_code, 1);
}

TEST(Cli, NumericDivergenceExitsThree) {
    REQUIRE_CLI();
    ScratchDir scratch("numeric");
    // an absurd target value overflows float32 loss and poisons the step
    tinyqe::testing::spit_file(scratch.file("train.tsv"),
                               "id\tsource\ttarget\tscores\tz_mean\na\tsrc a\ttgt a\t50\t1e300\nb\tsrc b\ttgt "
                               "b\t60\t-1e300\n");
    tinyqe::testing::spit_file(scratch.file("dev.tsv"),
                               "id\tsource\ttarget\tscores\tz_mean\nc\tsrc c\ttgt c\t50\t0.5\n");
    auto result = run_cli("train --train " + scratch.file("train.tsv").string() + " --dev " +
                              scratch.file("dev.tsv").string() + " --out " + scratch.file("m.qeck").string() + " " +
                              kMicroFlags + " --lr 1e-3 --batch 2 --epochs 1 --seed 1",
                          scratch.path());
    EXPECT_EQ(result.exit_code, 3) << result.err;
    EXPECT_NE(result.err.find("error[3]:"), std::string::npos) << result.err;
}

TEST(Cli, ReportRendersLeaderboard) {
    REQUIRE_CLI();
    ScratchDir scratch("report");
    tinyqe::testing::spit_file(
        scratch.file("r1.json"),
        R"({"method":"alpha","pair":"en-gu","spearman":0.673,"pearson":0.536,"n":1000})");
    tinyqe::testing::spit_file(
        scratch.file("r2.json"),
        R"({"method":"beta","pair":"en-gu","spearman":0.713,"pearson":0.656,"n":1000})");
    auto result = run_cli("report --inputs " + scratch.file("r1.json").string() + " " +
                              scratch.file("r2.json").string() + " --out " + scratch.file("table.txt").string() +
                              " --json " + scratch.file("table.json").string(),
                          scratch.path());
    ASSERT_EQ(result.exit_code, 0) << result.err;
    const std::string table = tinyqe::testing::slurp_file(scratch.file("table.txt"));
    EXPECT_NE(table.find("alpha"), std::string::npos);
    EXPECT_NE(table.find("0.713"), std::string::npos);
    const auto mirror = nlohmann::json::parse(tinyqe::testing::slurp_file(scratch.file("table.json")));
    ASSERT_EQ(mirror.size(), 2u);
    EXPECT_EQ(mirror[0].at("method"), "beta");  // higher spearman sorts first
    EXPECT_TRUE(mirror[0].at("best").get<bool>());
    EXPECT_FALSE(mirror[1].at("best").get<bool>());
}
