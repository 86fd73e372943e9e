// Acceptance suite. Each test covers one release criterion at its stated
// tolerance and prints a single pass/fail line.

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "support/cli.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "tinyqe/tinyqe.hpp"

using namespace tinyqe;
using tinyqe::testing::cli_path;
using tinyqe::testing::make_overlap_dataset;
using tinyqe::testing::run_cli;
using tinyqe::testing::ScratchDir;

namespace {

class Criterion {
   public:
    Criterion(int number, std::string name) : number_(number), name_(std::move(name)) {}
    ~Criterion() {
        const bool ok = !::testing::Test::HasFailure();
        std::printf("[criterion %d] %s: %s\n", number_, name_.c_str(), ok ? "PASS" : "FAIL");
        std::fflush(stdout);
    }

   private:
    int number_;
    std::string name_;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

TEST(Acceptance, Criterion1_GradientFidelity) {
    Criterion banner(1, "gradient fidelity");
    const auto start = std::chrono::steady_clock::now();

    QEModel model = QEModel::init(tinyqe::testing::micro_config(), 21);  // d_model 8, 1 layer
    RandomSource rng(22);
    for (auto& v : model.head_weight.data) v = rng.normal(0.0f, 0.1f);
    model.head_bias.data[0] = 0.05f;
    const std::vector<tinyqe::testing::LabeledPair> pairs{{"abc", "abd", 0.2f}, {"hi", "yo", -0.2f}};

    auto grads = tinyqe::testing::batch_loss_gradients(model, pairs);
    std::vector<std::pair<std::string, Tensor*>> params;
    model.for_each_parameter([&params](const std::string& name, Tensor& t) { params.emplace_back(name, &t); });
    const auto report = tinyqe::testing::check_gradients(
        params, [&]() { return tinyqe::testing::batch_loss(model, pairs); }, grads, 1e-3f);

    EXPECT_LE(report.max_error, 1e-3) << "worst " << report.worst_param << "[" << report.worst_index
                                      << "] analytic " << report.worst_analytic << " numeric "
                                      << report.worst_numeric;
    EXPECT_LT(seconds_since(start), 60.0);
}

TEST(Acceptance, Criterion2_MetricOracleEquivalence) {
    Criterion banner(2, "metric oracle equivalence");

    std::vector<double> x{1, 2, 3, 4, 5, 6};
    std::vector<double> y = x;
    std::size_t permutations = 0;
    do {
        // tie-free shortcut: 1 - 6*sum(d^2)/(n(n^2-1))
        double d2 = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) d2 += (x[i] - y[i]) * (x[i] - y[i]);
        const double closed_form = 1.0 - 6.0 * d2 / (6.0 * 35.0);
        EXPECT_NEAR(spearman(x, y), closed_form, 1e-12);
        ++permutations;
    } while (std::next_permutation(y.begin(), y.end()));
    EXPECT_EQ(permutations, 720u);

    EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{2, 1, 4, 3}), 0.6, 1e-5);
    EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{1, 1, 2}), 0.8660, 1e-4);
    EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{1, 1, 2}), std::sqrt(3.0) / 2.0, 1e-5);
}

TEST(Acceptance, Criterion3_MetricInvariances) {
    Criterion banner(3, "metric invariances");
    RandomSource rng(31);

    std::vector<double> x(200), y(200);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = rng.normal(0.0f, 2.0f);
        y[i] = rng.normal(0.0f, 2.0f);
    }
    const double rho = spearman(x, y);
    std::vector<double> fx(x.size()), gy(y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        fx[i] = std::exp(0.5 * x[i]);           // strictly increasing
        gy[i] = std::atan(y[i]) * 3.0 - 1.0;    // strictly increasing
    }
    EXPECT_EQ(spearman(fx, y), rho);
    EXPECT_EQ(spearman(x, gy), rho);
    EXPECT_EQ(spearman(fx, gy), rho);

    const double r = pearson(x, y);
    for (double a : {3.5, -1.25, 0.01}) {
        std::vector<double> ax(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) ax[i] = a * x[i] - 0.75;
        EXPECT_NEAR(pearson(ax, y), (a > 0 ? 1.0 : -1.0) * r, 1e-12);
        EXPECT_NEAR(pearson(y, ax), (a > 0 ? 1.0 : -1.0) * r, 1e-12);
    }

    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t n = 2 + rng.below(24);
        std::vector<double> u(n), v(n);
        for (std::size_t i = 0; i < n; ++i) {
            u[i] = rng.normal(0.0f, 5.0f);
            v[i] = rng.normal(0.0f, 5.0f);
        }
        EXPECT_LE(std::fabs(spearman(u, v)), 1.0);
        EXPECT_LE(std::fabs(pearson(u, v)), 1.0);
    }
}

TEST(Acceptance, Criterion4_EnsembleIdentities) {
    Criterion banner(4, "ensemble identities");
    RandomSource rng(41);

    PredictionSet member;
    for (int i = 0; i < 40; ++i) member.push_back({"seg" + std::to_string(i), rng.normal(0.0f, 2.0f)});
    const PredictionSet copies = average_predictions({{member, member, member, member, member}, {}});
    for (std::size_t i = 0; i < member.size(); ++i) EXPECT_NEAR(copies[i].score, member[i].score, 1e-12);

    PredictionSet other1, other2;
    for (int i = 0; i < 40; ++i) {
        other1.push_back({"seg" + std::to_string(i), rng.normal(0.0f, 2.0f)});
        other2.push_back({"seg" + std::to_string(i), rng.normal(0.0f, 2.0f)});
    }
    const PredictionSet fwd = average_predictions({{member, other1, other2}, {}});
    const PredictionSet rev = average_predictions({{other2, member, other1}, {}});
    for (std::size_t i = 0; i < fwd.size(); ++i) EXPECT_NEAR(fwd[i].score, rev[i].score, 1e-12);

    const PredictionSet fixture =
        average_predictions({{{{"s1", 0.1}, {"s2", 0.3}}, {{"s1", 0.3}, {"s2", 0.5}}}, {}});
    EXPECT_EQ(fixture[0].score, 0.2);
    EXPECT_EQ(fixture[1].score, 0.4);
}

TEST(Acceptance, Criterion5_TrainingBehavior) {
    Criterion banner(5, "training behavior");
    if (cli_path().empty()) {
        ADD_FAILURE() << "pass --cli=<path to tinyqe binary>";
        return;
    }
    ScratchDir scratch("accept5");
    const Dataset corpus = make_overlap_dataset(32, 900, "pair", 8, 16);
    write_dataset(corpus, scratch.file("corpus.tsv"));

    // dev == train makes the recorded dev losses the training MSE
    const auto start = std::chrono::steady_clock::now();
    auto fit = run_cli("train --train " + scratch.file("corpus.tsv").string() + " --dev " +
                           scratch.file("corpus.tsv").string() + " --out " + scratch.file("fit.qeck").string() +
                           " --log " + scratch.file("fit.log").string() +
                           " --preset tiny --lr 1e-3 --epochs 200 --patience 200 --seed 7",
                       scratch.path());
    const double fit_seconds = seconds_since(start);
    ASSERT_EQ(fit.exit_code, 0) << fit.err;
    float best_mse = std::numeric_limits<float>::infinity();
    for (const auto& line : {scratch.file("fit.log")}) {
        std::ifstream in(line);
        std::string row;
        while (std::getline(in, row)) {
            if (row.find("\tdev\t") == std::string::npos) continue;
            best_mse = std::min(best_mse, std::stof(row.substr(row.rfind('\t') + 1)));
        }
    }
    EXPECT_LT(best_mse, 1e-2f) << "training MSE after 200 epochs";
    EXPECT_LT(fit_seconds, 300.0);

    // frozen model: the first round improves on +inf, the next ten do not
    auto frozen = run_cli("train --train " + scratch.file("corpus.tsv").string() + " --dev " +
                              scratch.file("corpus.tsv").string() + " --out " + scratch.file("frozen.qeck").string() +
                              " --log " + scratch.file("frozen.log").string() +
                              " --preset tiny --lr 0 --epochs 200 --patience 10 --eval-every 1 --seed 7",
                          scratch.path());
    ASSERT_EQ(frozen.exit_code, 0) << frozen.err;
    std::size_t dev_rounds = 0;
    {
        std::ifstream in(scratch.file("frozen.log"));
        std::string row;
        while (std::getline(in, row)) dev_rounds += row.find("\tdev\t") != std::string::npos ? 1 : 0;
    }
    EXPECT_EQ(dev_rounds, 11u);  // 1 improvement + exactly 10 patience rounds

    // bitwise reproducibility of the log under a fixed seed
    const std::string repro = "train --train " + scratch.file("corpus.tsv").string() + " --dev " +
                              scratch.file("corpus.tsv").string() +
                              " --preset tiny --lr 1e-3 --epochs 5 --seed 13";
    auto r1 = run_cli(repro + " --out " + scratch.file("r1.qeck").string() + " --log " +
                          scratch.file("r1.log").string(),
                      scratch.path());
    auto r2 = run_cli(repro + " --out " + scratch.file("r2.qeck").string() + " --log " +
                          scratch.file("r2.log").string(),
                      scratch.path());
    ASSERT_EQ(r1.exit_code, 0) << r1.err;
    ASSERT_EQ(r2.exit_code, 0) << r2.err;
    const std::string log1 = tinyqe::testing::slurp_file(scratch.file("r1.log"));
    EXPECT_FALSE(log1.empty());
    EXPECT_EQ(log1, tinyqe::testing::slurp_file(scratch.file("r2.log")));
    EXPECT_EQ(tinyqe::testing::slurp_file(scratch.file("r1.qeck")),
              tinyqe::testing::slurp_file(scratch.file("r2.qeck")));
}

TEST(Acceptance, Criterion6_SyntheticCorrelationTask) {
    Criterion banner(6, "synthetic correlation task");
    const auto start = std::chrono::steady_clock::now();

    const Dataset train_set = make_overlap_dataset(2000, 601, "tr");
    const Dataset dev_set = make_overlap_dataset(200, 602, "dv");
    const Dataset test_set = make_overlap_dataset(500, 603, "te");

    EncoderConfig config;  // desk-scale defaults
    config.max_len = 128;
    config.dropout_rate = 0.1f;

    auto predictions = [&test_set](const QEModel& m) {
        PredictionSet preds;
        for (const auto& pair : test_set.pairs)
            preds.push_back({pair.segment_id, static_cast<double>(predict(m, pair.source, pair.target))});
        return preds;
    };

    // untrained model with a random head stays uncorrelated
    QEModel untrained = QEModel::init(config, 55);
    RandomSource head_rng(56);
    for (auto& v : untrained.head_weight.data) v = head_rng.normal(0.0f, 0.3f);
    const CorrelationReport random_report = evaluate(predictions(untrained), test_set, "untrained");
    EXPECT_LE(std::fabs(random_report.spearman_rho), 0.1)
        << "untrained spearman " << random_report.spearman_rho;

    TrainConfig tc;
    tc.learning_rate = 1e-3f;
    tc.batch_size = 8;
    tc.epochs = 4;
    tc.patience = 10;
    tc.seed = 57;
    const TrainResult result = train(QEModel::init(config, 55), train_set, dev_set, tc);
    const CorrelationReport trained_report = evaluate(predictions(result.model), test_set, "trained");
    EXPECT_GE(trained_report.spearman_rho, 0.7) << "trained spearman " << trained_report.spearman_rho;

    EXPECT_LT(seconds_since(start), 900.0);
}

TEST(Acceptance, Criterion7_DataPipeline) {
    Criterion banner(7, "data pipeline");

    const auto z = zscore_normalize({{10}, {20}, {30}});
    EXPECT_NEAR(z[0], -1.0, 1e-12);
    EXPECT_NEAR(z[1], 0.0, 1e-12);
    EXPECT_NEAR(z[2], 1.0, 1e-12);

    RandomSource rng(71);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 240; ++i)
        rows.push_back({static_cast<double>(rng.below(101)), static_cast<double>(rng.below(101)) * 0.5 + 10.0});
    for (std::size_t column = 0; column < 2; ++column) {
        std::vector<std::vector<double>> single;
        for (const auto& r : rows) single.push_back({r[column]});
        const auto zs = zscore_normalize(single);
        double mean = 0.0;
        for (double v : zs) mean += v;
        mean /= static_cast<double>(zs.size());
        double ss = 0.0;
        for (double v : zs) ss += (v - mean) * (v - mean);
        const double sample_std = std::sqrt(ss / static_cast<double>(zs.size() - 1));
        EXPECT_LE(std::fabs(mean), 1e-12);
        EXPECT_NEAR(sample_std, 1.0, 1e-12);
    }

    ScratchDir scratch("accept7");
    const Dataset dataset = make_overlap_dataset(64, 72, "seg");
    write_dataset(dataset, scratch.file("a.tsv"));
    write_dataset(parse_tsv(scratch.file("a.tsv"), true), scratch.file("b.tsv"));
    EXPECT_EQ(tinyqe::testing::slurp_file(scratch.file("a.tsv")),
              tinyqe::testing::slurp_file(scratch.file("b.tsv")));

    PredictionSet preds;
    for (int i = 0; i < 10000; ++i) preds.push_back({"p" + std::to_string(i), rng.normal(0.0f, 100.0f)});
    write_predictions(preds, scratch.file("p1.tsv"));
    write_predictions(read_predictions(scratch.file("p1.tsv")), scratch.file("p2.tsv"));
    EXPECT_EQ(tinyqe::testing::slurp_file(scratch.file("p1.tsv")),
              tinyqe::testing::slurp_file(scratch.file("p2.tsv")));
}

TEST(Acceptance, Criterion8_Persistence) {
    Criterion banner(8, "persistence");
    ScratchDir scratch("accept8");

    QEModel model = QEModel::init(tinyqe::testing::micro_config(), 81);
    RandomSource rng(82);
    for (auto& v : model.head_weight.data) v = rng.normal(0.0f, 0.5f);
    const auto path = scratch.file("model.qeck");
    const std::uint64_t bytes = save_checkpoint(model, path);
    const QEModel loaded = load_checkpoint(path);
    for (const char* text : {"alpha", "beta gamma", ""}) {
        EXPECT_EQ(predict(loaded, text, "shared target"), predict(model, text, "shared target"));
    }
    EXPECT_EQ(bytes, file_size_bytes(path));
    EXPECT_EQ(footprint_bytes(path), bytes);

    EXPECT_EQ(render_footprint_row("SurreyAI-MonoTQ-XLMR-large", 2254857830ull),
              "SurreyAI-MonoTQ-XLMR-large\t2,254,857,830");
}

TEST(Acceptance, Criterion9_ReportFidelity) {
    Criterion banner(9, "report fidelity");

    // published WMT23 sentence-level leaderboard values as fixtures
    struct Fixture {
        const char* method;
        double rho[5];
        double r[5];
    };
    const char* pairs[5] = {"en-gu", "en-hi", "en-mr", "en-ta", "en-te"};
    const std::vector<Fixture> fixtures{
        {"Baseline", {0.337, 0.281, 0.392, 0.507, 0.193}, {0.307, 0.245, 0.427, 0.402, 0.153}},
        {"MonoTQ-XLMV", {0.673, 0.572, 0.642, 0.670, 0.464}, {0.536, 0.687, 0.425, 0.559, 0.642}},
        {"MonoTQ-InfoXLM-large", {0.713, 0.624, 0.470, 0.726, 0.462}, {0.656, 0.726, 0.030, 0.662, 0.719}},
        {"MonoTQ-XLMR-large", {0.438, 0.440, 0.395, 0.482, 0.345}, {0.299, 0.430, -0.117, 0.454, 0.211}},
        {"ensembleTQ", {0.649, 0.551, 0.596, 0.674, 0.349}, {0.700, 0.668, 0.668, 0.710, 0.376}},
    };
    std::vector<CorrelationReport> reports;
    for (const auto& f : fixtures)
        for (int p = 0; p < 5; ++p) reports.push_back({f.method, pairs[p], f.rho[p], f.r[p], 1000});

    const auto rows = build_leaderboard(reports, SortKey::kSpearman);
    const std::map<std::string, std::string> expected_best{{"en-gu", "MonoTQ-InfoXLM-large"},
                                                           {"en-hi", "MonoTQ-InfoXLM-large"},
                                                           {"en-mr", "MonoTQ-XLMV"},
                                                           {"en-ta", "MonoTQ-InfoXLM-large"},
                                                           {"en-te", "MonoTQ-XLMV"}};
    for (const auto& row : rows) {
        if (row.best) {
            EXPECT_EQ(expected_best.at(row.pair), row.method) << row.pair;
        } else {
            EXPECT_NE(expected_best.at(row.pair), row.method) << row.pair;
        }
    }

    const std::string text = render_leaderboard_text(rows);
    EXPECT_NE(text.find("0.713"), std::string::npos);
    // the baseline row renders its published values verbatim
    std::istringstream lines(text);
    std::string line;
    bool baseline_ok = false;
    while (std::getline(lines, line)) {
        if (line.find("Baseline") != std::string::npos && line.find("en-gu") != std::string::npos)
            baseline_ok = line.find("0.337") != std::string::npos && line.find("0.307") != std::string::npos;
    }
    EXPECT_TRUE(baseline_ok);
    const auto json = leaderboard_json(rows);
    for (const auto& entry : json) {
        if (entry.at("pair") == "en-gu" && entry.at("best").get<bool>()) {
            EXPECT_EQ(entry.at("method"), "MonoTQ-InfoXLM-large");
            EXPECT_DOUBLE_EQ(entry.at("spearman").get<double>(), 0.713);
        }
    }
}
