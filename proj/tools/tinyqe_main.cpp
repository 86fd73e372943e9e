// Command-line front end: train, predict, evaluate, ensemble, footprint,
// report. Exit codes: 0 success, 1 usage error, 2 data/contract error,
// 3 numeric abort. Every failure prints `error[<code>]: ...` on stderr.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tinyqe/tinyqe.hpp"

namespace {

using namespace tinyqe;

void require_inputs_exist(const std::vector<std::string>& paths) {
    for (const auto& p : paths) {
        if (!std::filesystem::exists(p)) throw io_error("input path '" + p + "' does not exist");
    }
}

struct TrainArgs {
    std::string train_path, dev_path, out_path, log_path, pair, pooling = "cls", preset;
    TrainConfig train_cfg;
    EncoderConfig enc_cfg;
};

int run_train(const TrainArgs& args) {
    require_inputs_exist({args.train_path, args.dev_path});
    Dataset train_set = parse_tsv(args.train_path, /*has_labels=*/true);
    train_set.split = Split::kTrain;
    train_set.language_pair = args.pair;
    Dataset dev_set = parse_tsv(args.dev_path, /*has_labels=*/true);
    dev_set.split = Split::kDev;
    dev_set.language_pair = args.pair;

    QEModel model = QEModel::init(args.enc_cfg, args.train_cfg.seed, pooling_from_string(args.pooling));
    TrainConfig cfg = args.train_cfg;
    cfg.checkpoint_path = args.out_path;
    TrainResult result = train(std::move(model), train_set, dev_set, cfg);

    const std::uint64_t bytes = save_checkpoint(result.model, args.out_path);
    if (!args.log_path.empty()) write_train_log(result.log, args.log_path);
    std::cout << "trained " << train_set.pairs.size() << " pairs, " << result.eval_rounds
              << " evaluation rounds, best dev loss " << format_double(result.best_eval_loss)
              << (result.stopped_early ? " (early stop)" : "") << "\n";
    std::cout << "saved " << args.out_path << " (" << bytes << " bytes)\n";
    return 0;
}

int run_predict(const std::string& model_path, const std::string& in_path, const std::string& out_path) {
    require_inputs_exist({model_path, in_path});
    const QEModel model = load_checkpoint(model_path);
    const Dataset dataset = parse_tsv(in_path, tsv_has_labels(in_path));
    PredictionSet preds;
    preds.reserve(dataset.pairs.size());
    for (const auto& pair : dataset.pairs)
        preds.push_back({pair.segment_id, static_cast<double>(predict(model, pair.source, pair.target))});
    write_predictions(preds, out_path);
    std::cout << "wrote " << preds.size() << " predictions to " << out_path << "\n";
    return 0;
}

int run_evaluate(const std::string& preds_path, const std::string& gold_path, const std::string& report_path,
                 const std::string& method, const std::string& pair) {
    require_inputs_exist({preds_path, gold_path});
    const PredictionSet preds = read_predictions(preds_path);
    const Dataset gold = parse_tsv(gold_path, /*has_labels=*/true);
    const CorrelationReport report = evaluate(preds, gold, method, pair);
    write_report_json(report, report_path);
    std::cout << report.method_name << (report.language_pair.empty() ? "" : " [" + report.language_pair + "]")
              << ": spearman " << format_double(report.spearman_rho) << ", pearson "
              << format_double(report.pearson_r) << ", n " << report.n << "\n";
    return 0;
}

int run_ensemble(const std::vector<std::string>& preds_paths, const std::string& out_path) {
    require_inputs_exist(preds_paths);
    EnsembleSpec spec;
    for (const auto& p : preds_paths) {
        spec.member_predictions.push_back(read_predictions(p));
        spec.member_names.push_back(p);
    }
    const PredictionSet averaged = average_predictions(spec);
    write_predictions(averaged, out_path);
    std::cout << "averaged " << spec.member_predictions.size() << " members over " << averaged.size()
              << " segments into " << out_path << "\n";
    return 0;
}

int run_footprint(const std::string& model_path) {
    require_inputs_exist({model_path});
    std::cout << render_footprint_row(model_path, footprint_bytes(model_path)) << "\n";
    return 0;
}

int run_report(const std::vector<std::string>& inputs, const std::string& out_path, const std::string& json_path,
               const std::string& sort_key) {
    require_inputs_exist(inputs);
    std::vector<CorrelationReport> reports;
    reports.reserve(inputs.size());
    for (const auto& p : inputs) reports.push_back(read_report_json(p));
    const auto rows = build_leaderboard(reports, sort_key_from_string(sort_key));
    const std::string table = render_leaderboard_text(rows);
    {
        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("report: cannot open '" + out_path + "' for writing");
        out << table;
    }
    if (!json_path.empty()) {
        std::ofstream out(json_path, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("report: cannot open '" + json_path + "' for writing");
        out << leaderboard_json(rows).dump(2) << "\n";
    }
    std::cout << table;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tinyqe - sentence-level machine translation quality estimation"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "fine-tune a quality estimation model");
    train_cmd->add_option("--train", train_args.train_path, "training TSV")->required();
    train_cmd->add_option("--dev", train_args.dev_path, "development TSV for evaluation rounds")->required();
    train_cmd->add_option("--out", train_args.out_path, "output checkpoint (.qeck)")->required();
    train_cmd->add_option("--log", train_args.log_path, "write the step/eval loss log here");
    train_cmd->add_option("--pair", train_args.pair, "language pair tag, e.g. en-gu");
    train_cmd->add_option("--pooling", train_args.pooling, "pooling strategy: cls|mean|max")
        ->check(CLI::IsMember({"cls", "mean", "max"}));
    train_cmd->add_option("--preset", train_args.preset, "desk-scale preset: tiny")
        ->check(CLI::IsMember({"tiny"}));
    auto* lr_opt = train_cmd->add_option("--lr", train_args.train_cfg.learning_rate, "learning rate (default 2e-5)");
    train_cmd->add_option("--batch", train_args.train_cfg.batch_size, "batch size (default 8)");
    train_cmd->add_option("--epochs", train_args.train_cfg.epochs, "training epochs (default 3)");
    train_cmd->add_option("--patience", train_args.train_cfg.patience,
                          "evaluation rounds without improvement before stopping (default 10)");
    train_cmd->add_option("--eval-every", train_args.train_cfg.eval_every,
                          "steps per evaluation round (default: once per epoch)");
    train_cmd->add_option("--seed", train_args.train_cfg.seed, "seed for init, shuffling and dropout");
    train_cmd->add_flag("--no-shuffle", [&train_args](std::int64_t) { train_args.train_cfg.shuffle = false; },
                        "keep the training order fixed");
    auto* dmodel_opt = train_cmd->add_option("--d-model", train_args.enc_cfg.d_model, "hidden width");
    auto* heads_opt = train_cmd->add_option("--n-heads", train_args.enc_cfg.n_heads, "attention heads");
    auto* layers_opt = train_cmd->add_option("--n-layers", train_args.enc_cfg.n_layers, "encoder layers");
    auto* ff_opt = train_cmd->add_option("--d-ff", train_args.enc_cfg.d_ff, "feed-forward width");
    auto* maxlen_opt = train_cmd->add_option("--max-len", train_args.enc_cfg.max_len, "token limit (default 512)");
    auto* dropout_opt = train_cmd->add_option("--dropout", train_args.enc_cfg.dropout_rate, "dropout rate");

    std::string model_path, in_path, out_path;
    auto* predict_cmd = app.add_subcommand("predict", "score a dataset with a trained model");
    predict_cmd->add_option("--model", model_path, "checkpoint (.qeck)")->required();
    predict_cmd->add_option("--in", in_path, "input TSV (labels optional)")->required();
    predict_cmd->add_option("--out", out_path, "output predictions TSV")->required();

    std::string preds_path, gold_path, report_path, method = "model", pair_tag;
    auto* eval_cmd = app.add_subcommand("evaluate", "correlate predictions with gold labels");
    eval_cmd->add_option("--preds", preds_path, "predictions TSV")->required();
    eval_cmd->add_option("--gold", gold_path, "labeled gold TSV")->required();
    eval_cmd->add_option("--report", report_path, "output report JSON")->required();
    eval_cmd->add_option("--method", method, "method name for the report");
    eval_cmd->add_option("--pair", pair_tag, "language pair tag for the report");

    std::vector<std::string> ensemble_inputs;
    std::string ensemble_out;
    auto* ensemble_cmd = app.add_subcommand("ensemble", "average prediction sets segment by segment");
    ensemble_cmd->add_option("--preds", ensemble_inputs, "member prediction TSVs")->required()->expected(-1);
    ensemble_cmd->add_option("--out", ensemble_out, "output predictions TSV")->required();

    std::string footprint_path;
    auto* footprint_cmd = app.add_subcommand("footprint", "disk footprint of a checkpoint or ensemble manifest");
    footprint_cmd->add_option("--model", footprint_path, "checkpoint (.qeck) or manifest listing checkpoints")
        ->required();

    std::vector<std::string> report_inputs;
    std::string report_out, report_json, sort_key = "spearman";
    auto* report_cmd = app.add_subcommand("report", "render a leaderboard from report JSON files");
    report_cmd->add_option("--inputs", report_inputs, "report JSON files")->required()->expected(-1);
    report_cmd->add_option("--out", report_out, "output text table")->required();
    report_cmd->add_option("--json", report_json, "also write the JSON mirror here");
    report_cmd->add_option("--sort", sort_key, "sort key: spearman|pearson|method")
        ->check(CLI::IsMember({"spearman", "pearson", "method"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error[1]: " << e.what() << "\n";
        std::cerr << "run '" << (argc > 0 ? argv[0] : "tinyqe") << " --help' for usage\n";
        return 1;
    }

    try {
        if (train_cmd->parsed()) {
            if (train_args.preset == "tiny") {
                // Desk-scale defaults: trains on a CPU in minutes while
                // exercising every code path. Explicit flags still win.
                if (!dmodel_opt->count()) train_args.enc_cfg.d_model = 64;
                if (!heads_opt->count()) train_args.enc_cfg.n_heads = 4;
                if (!layers_opt->count()) train_args.enc_cfg.n_layers = 2;
                if (!ff_opt->count()) train_args.enc_cfg.d_ff = 256;
                if (!maxlen_opt->count()) train_args.enc_cfg.max_len = 128;
                if (!dropout_opt->count()) train_args.enc_cfg.dropout_rate = 0.1f;
                if (!lr_opt->count()) train_args.train_cfg.learning_rate = 1e-3f;
            }
            return run_train(train_args);
        }
        if (predict_cmd->parsed()) return run_predict(model_path, in_path, out_path);
        if (eval_cmd->parsed()) return run_evaluate(preds_path, gold_path, report_path, method, pair_tag);
        if (ensemble_cmd->parsed()) return run_ensemble(ensemble_inputs, ensemble_out);
        if (footprint_cmd->parsed()) return run_footprint(footprint_path);
        if (report_cmd->parsed()) return run_report(report_inputs, report_out, report_json, sort_key);
        std::cerr << "error[1]: no subcommand\n";
        return 1;
    } catch (const numeric_error& e) {
        std::cerr << "error[3]: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error[2]: " << e.what() << "\n";
        return 2;
    }
}
