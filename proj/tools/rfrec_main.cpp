// Command-line front end: single runs, parameter sweeps, communication
// comparisons and the theory verification battery. Any flag can also come
// from an INI/TOML config file (--config); explicit flags win.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rfrec/experiment.hpp"
#include "rfrec/kernels.hpp"
#include "rfrec/theory.hpp"

namespace {

struct CommonArgs {
    rfrec::ExperimentSpec spec;
    std::string trainer = "rfrec";
    std::string delimiter = "tab";
    std::string kernel = "auto";
    double privacy_delta = 0.0;
    double privacy_scale = 0.0;
    double drop_above = 0.0;
    bool privacy_on = false;
    bool planted = false;
    bool save_splits = false;
};

std::string default_outdir() {
    if (const char* env = std::getenv("RFREC_OUT_DIR")) return env;
    return "out";
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    auto& spec = args.spec;
    cmd->set_config("--config", "", "read options from an INI/TOML file");

    cmd->add_option("--data", spec.data.path, "ratings file (user/item/rating columns)");
    cmd->add_option("--delimiter", args.delimiter, "tab|comma|space")
        ->check(CLI::IsMember({"tab", "comma", "space"}));
    cmd->add_option("--user-col", spec.data.format.user_col, "0-based user column");
    cmd->add_option("--item-col", spec.data.format.item_col, "0-based item column");
    cmd->add_option("--rating-col", spec.data.format.rating_col, "0-based rating column");
    cmd->add_option("--skip-header", spec.data.format.skip_header, "leading lines to skip");
    auto* drop = cmd->add_option("--drop-above", args.drop_above,
                                 "drop rows with rating above this value");
    cmd->add_flag("--internal", spec.data.internal_format,
                  "input is the internal dataset format");
    cmd->add_flag("--normalize", spec.data.normalize,
                  "scale ratings onto [0,1] at load; metrics stay on the raw scale");
    cmd->add_option("--dataset-name", spec.data.format.name, "name used in output rows");

    cmd->add_flag("--planted", args.planted, "use a planted synthetic instance");
    cmd->add_option("--planted-users", spec.data.planted.n_users);
    cmd->add_option("--planted-items", spec.data.planted.n_items);
    cmd->add_option("--planted-rank", spec.data.planted.rank);
    cmd->add_option("--planted-noise", spec.data.planted.noise_sd);
    cmd->add_option("--planted-seed", spec.data.planted.seed);

    cmd->add_option("--test-fraction", spec.data.test_fraction,
                    "per-user held-out fraction");
    cmd->add_option("--trainer", args.trainer, "rfrec|rfrecf|fcf")
        ->check(CLI::IsMember({"rfrec", "rfrecf", "fcf"}));

    cmd->add_option("-d,--dim", spec.base.d, "latent dimension");
    cmd->add_option("--alpha", spec.base.alpha, "step size");
    cmd->add_option("--lambda", spec.base.lambda, "consensus penalty");
    cmd->add_option("--lambda-u", spec.base.lambda_u, "user-vector penalty");
    cmd->add_option("--lambda-v", spec.lambda_v, "item penalty (fcf only)");
    cmd->add_option("--rfrecf-alpha", spec.rfrecf_alpha,
                    "rfrecf step size for compare runs");
    cmd->add_option("--fcf-alpha", spec.fcf_alpha, "fcf step size for compare runs");
    cmd->add_option("-p,--prob", spec.base.p, "aggregation probability (rfrecf)");
    cmd->add_option("-K,--max-iters", spec.base.max_iters, "iteration cap");
    cmd->add_option("--stop-eps", spec.base.stop_eps, "relative-change stop criterion");
    cmd->add_option("--seed", spec.base.seed, "root seed");
    cmd->add_option("--dropout", spec.base.dropout_rate, "client dropout rate");
    auto* pd = cmd->add_option("--privacy-delta", args.privacy_delta, "clip threshold");
    auto* ps = cmd->add_option("--privacy-scale", args.privacy_scale, "Laplace scale");
    cmd->add_flag("--clip,!--no-clip", spec.base.clip_predictions,
                  "clamp predictions to the rating bounds when scoring");
    cmd->add_option("--eval-every", spec.eval_every,
                    "metric cadence in iterations (0 = final only)");
    cmd->add_option("--round-cap", spec.comm_round_cap, "communication round cap");
    cmd->add_option("--workers", spec.workers, "concurrent sweep cells");
    cmd->add_option("--train-workers", spec.train_workers, "threads inside one run");
    cmd->add_option("--out", spec.outdir, "output directory");
    cmd->add_option("--kernel", args.kernel, "scalar|avx2|auto")
        ->check(CLI::IsMember({"scalar", "avx2", "auto"}));
    cmd->add_flag("--save-splits", args.save_splits,
                  "write the train/test splits in the internal format");

    // option presence is resolved after parsing
    cmd->parse_complete_callback([&args, drop, pd, ps]() {
        if (args.delimiter == "comma") args.spec.data.format.delimiter = ',';
        else if (args.delimiter == "space") args.spec.data.format.delimiter = ' ';
        else args.spec.data.format.delimiter = '\t';
        if (drop->count()) args.spec.data.format.drop_above = args.drop_above;
        args.privacy_on = pd->count() > 0 || ps->count() > 0;
        if (args.privacy_on) {
            rfrec::PrivacyConfig pc;
            pc.delta = pd->count() ? args.privacy_delta : pc.delta;
            pc.scale = ps->count() ? args.privacy_scale : 0.0;
            args.spec.base.privacy = pc;
        }
        if (args.spec.outdir.empty()) args.spec.outdir = default_outdir();
        if (!args.planted && args.spec.data.path.empty())
            throw CLI::ValidationError("--data or --planted is required");
        if (args.planted) args.spec.data.path.clear();
        args.spec.kind = rfrec::parse_trainer(args.trainer);
        if (args.kernel == "scalar") rfrec::kern::force(rfrec::kern::Isa::scalar);
        if (args.kernel == "avx2") rfrec::kern::force(rfrec::kern::Isa::avx2);
    });
}

void persist_id_maps(const rfrec::RatingsDataset& data, const std::string& outdir) {
    if (data.user_ids.empty()) return;
    std::filesystem::create_directories(outdir);
    auto dump = [](const std::vector<std::int64_t>& ids, const std::string& path) {
        std::FILE* f = std::fopen(path.c_str(), "w");
        if (!f) return;
        std::fprintf(f, "dense_id,original_id\n");
        for (std::size_t k = 0; k < ids.size(); ++k)
            std::fprintf(f, "%zu,%lld\n", k, static_cast<long long>(ids[k]));
        std::fclose(f);
    };
    dump(data.user_ids, outdir + "/user_id_map.csv");
    dump(data.item_ids, outdir + "/item_id_map.csv");
}

int cmd_train(CommonArgs& args) {
    auto& spec = args.spec;
    std::filesystem::create_directories(spec.outdir);

    rfrec::RatingsDataset full = rfrec::load_source(spec.data);
    persist_id_maps(full, spec.outdir);
    if (args.save_splits) {
        auto [train, test] =
            rfrec::split(full, {spec.data.test_fraction, spec.base.seed});
        rfrec::save_internal(train, spec.outdir + "/train_split.txt");
        if (test.total_observations() > 0)
            rfrec::save_internal(test, spec.outdir + "/test_split.txt");
    }

    rfrec::ResultTable table = rfrec::run_experiment(spec);
    rfrec::write_results_csv(table, spec.outdir + "/results.csv");
    rfrec::write_timings_csv(table, spec.outdir + "/timings.csv");
    const auto& r = table.rows.front();
    if (r.status != "ok") {
        std::fprintf(stderr, "run failed: %s\n", r.status.c_str());
        return 1;
    }
    std::printf("trainer=%s iters=%lld rounds=%lld loss=%.6g", r.trainer.c_str(),
                r.iters, r.comm_rounds, r.final_loss);
    if (!std::isnan(r.rmse)) std::printf(" mae=%.4f rmse=%.4f", r.mae, r.rmse);
    std::printf(" stop=%s kernel=%s\n", r.stop_reason.c_str(),
                std::string(rfrec::kern::active_name()).c_str());
    std::printf("results: %s/results.csv\n", spec.outdir.c_str());
    return 0;
}

int cmd_sweep(CommonArgs& args) {
    auto& spec = args.spec;
    std::filesystem::create_directories(spec.outdir);
    rfrec::ResultTable table = rfrec::run_experiment(spec);
    rfrec::write_results_csv(table, spec.outdir + "/results.csv");
    rfrec::write_summary_csv(table, spec.outdir + "/summary.csv");
    rfrec::write_timings_csv(table, spec.outdir + "/timings.csv");
    std::size_t failed = 0;
    for (const auto& r : table.rows)
        if (r.status != "ok") ++failed;
    std::printf("%zu cells (%zu failed) -> %s/results.csv\n", table.rows.size(), failed,
                spec.outdir.c_str());
    return 0;
}

int cmd_compare(CommonArgs& args, const std::string& trainers_csv) {
    auto& spec = args.spec;
    if (spec.comm_round_cap < 0) spec.comm_round_cap = 200;
    spec.base.max_iters = 1000000;  // rounds or the stop criterion terminate
    std::vector<rfrec::TrainerKind> kinds;
    std::string token;
    for (char c : trainers_csv + ",") {
        if (c == ',') {
            if (!token.empty()) kinds.push_back(rfrec::parse_trainer(token));
            token.clear();
        } else {
            token += c;
        }
    }
    std::filesystem::create_directories(spec.outdir);
    rfrec::CompareReport report = rfrec::compare_communication(spec, kinds);
    rfrec::write_compare_csv(report, spec.outdir + "/compare.csv");
    std::printf("%-8s %10s %8s %10s %10s  %s\n", "trainer", "rounds", "iters", "rmse",
                "mae", "stop");
    for (const auto& e : report.entries)
        std::printf("%-8s %10lld %8lld %10.4f %10.4f  %s\n", e.trainer.c_str(), e.rounds,
                    e.iters, e.rmse, e.mae, e.stop_reason.c_str());
    return 0;
}

int cmd_verify_theory(const std::string& outdir, std::uint64_t seed, int workers) {
    std::filesystem::create_directories(outdir);
    std::vector<rfrec::theory::CheckRecord> records =
        rfrec::theory::run_all_checks(seed, workers);
    rfrec::theory::write_report_csv(records, outdir + "/theory_report.csv");
    bool all = true;
    for (const auto& r : records) {
        std::printf("[%s] %-42s lhs=%-12.5g rhs=%-12.5g margin=%.5g\n",
                    r.pass ? "PASS" : "FAIL", r.name.c_str(), r.lhs, r.rhs, r.margin);
        all = all && r.pass;
    }
    std::printf("%s (%zu checks) -> %s/theory_report.csv\n", all ? "ALL PASS" : "FAILURES",
                records.size(), outdir.c_str());
    return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated matrix-factorization simulator"};
    app.require_subcommand(1);

    CommonArgs train_args, sweep_args, compare_args, priv_args, robust_args;
    std::string compare_trainers = "rfrec,rfrecf,fcf";

    auto* train = app.add_subcommand("train", "one training run");
    add_common(train, train_args);

    auto* sweep = app.add_subcommand("sweep", "cross-product parameter sweep");
    add_common(sweep, sweep_args);
    sweep->add_option("--alphas", sweep_args.spec.alphas)->delimiter(',');
    sweep->add_option("--lambdas", sweep_args.spec.lambdas)->delimiter(',');
    sweep->add_option("--ps", sweep_args.spec.ps)->delimiter(',');
    sweep->add_option("--scales", sweep_args.spec.scales)->delimiter(',');
    sweep->add_option("--deltas", sweep_args.spec.deltas)->delimiter(',');
    sweep->add_option("--dropouts", sweep_args.spec.dropouts)->delimiter(',');
    sweep->add_option("--seeds", sweep_args.spec.seeds)->delimiter(',');
    sweep->add_option("--cell-cap", sweep_args.spec.cell_cap);

    auto* compare = app.add_subcommand("compare-comm",
                                       "rounds-to-criterion across trainers");
    add_common(compare, compare_args);
    compare->add_option("--trainers", compare_trainers, "comma list of trainers");

    std::string theory_out = default_outdir();
    std::uint64_t theory_seed = 20240901;
    int theory_workers = 0;
    auto* verify = app.add_subcommand("verify-theory",
                                      "desk-scale verification battery");
    verify->add_option("--out", theory_out);
    verify->add_option("--seed", theory_seed);
    verify->add_option("--workers", theory_workers);

    auto* priv = app.add_subcommand("privacy-sweep",
                                    "sweep the clip threshold and noise scale");
    add_common(priv, priv_args);
    priv->add_option("--scales", priv_args.spec.scales)->delimiter(',');
    priv->add_option("--deltas", priv_args.spec.deltas)->delimiter(',');
    priv->add_option("--seeds", priv_args.spec.seeds)->delimiter(',');

    auto* robust = app.add_subcommand("robustness-sweep", "sweep the dropout rate");
    add_common(robust, robust_args);
    robust->add_option("--dropouts", robust_args.spec.dropouts)->delimiter(',');
    robust->add_option("--seeds", robust_args.spec.seeds)->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(train_args);
        if (sweep->parsed()) return cmd_sweep(sweep_args);
        if (compare->parsed()) return cmd_compare(compare_args, compare_trainers);
        if (verify->parsed())
            return cmd_verify_theory(theory_out, theory_seed, theory_workers);
        if (priv->parsed()) {
            if (priv_args.spec.scales.empty())
                priv_args.spec.scales = {0.02, 0.04, 0.06, 0.08};
            if (priv_args.spec.deltas.empty()) priv_args.spec.deltas = {0.2};
            return cmd_sweep(priv_args);
        }
        if (robust->parsed()) {
            if (robust_args.spec.dropouts.empty())
                robust_args.spec.dropouts = {0.0, 0.2, 0.5, 0.8, 0.9};
            return cmd_sweep(robust_args);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
