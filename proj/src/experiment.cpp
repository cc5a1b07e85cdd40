#include "rfrec/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>

#include "rfrec/errors.hpp"
#include "rfrec/util.hpp"

namespace rfrec {

RatingsDataset load_source(const DataSourceSpec& spec) {
    RatingsDataset data = spec.path.empty() ? make_planted(spec.planted)
                          : spec.internal_format ? load_internal(spec.path)
                                                 : load_tabular(spec.path, spec.format);
    if (spec.normalize) normalize_ratings(data);
    return data;
}

namespace {

struct Cell {
    double alpha, lambda, p, scale, delta, dropout;
    bool privacy;
    std::size_t index;
};

std::vector<Cell> expand_cells(const ExperimentSpec& spec) {
    auto axis = [](const std::vector<double>& v, double base) {
        return v.empty() ? std::vector<double>{base} : v;
    };
    double base_delta = spec.base.privacy ? spec.base.privacy->delta : 0.2;
    double base_scale = spec.base.privacy ? spec.base.privacy->scale : 0.0;
    bool base_privacy = spec.base.privacy.has_value();

    std::vector<Cell> cells;
    std::size_t index = 0;
    for (double a : axis(spec.alphas, spec.base.alpha))
        for (double l : axis(spec.lambdas, spec.base.lambda))
            for (double p : axis(spec.ps, spec.base.p))
                for (double s : axis(spec.scales, base_scale))
                    for (double dl : axis(spec.deltas, base_delta))
                        for (double dr : axis(spec.dropouts, spec.base.dropout_rate)) {
                            Cell c{a, l, p, s, dl, dr,
                                   base_privacy || !spec.scales.empty() ||
                                       !spec.deltas.empty(),
                                   index++};
                            cells.push_back(c);
                        }
    if (cells.size() > spec.cell_cap)
        throw ConfigError("sweep has " + std::to_string(cells.size()) +
                          " cells, above the cap of " + std::to_string(spec.cell_cap));
    return cells;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

CellResult run_cell(const ExperimentSpec& spec, const RatingsDataset& full,
                    const Cell& cell, std::uint64_t seed) {
    CellResult row;
    row.dataset = full.name;
    row.trainer = trainer_name(spec.kind);
    row.seed = seed;
    row.d = spec.base.d;
    row.alpha = cell.alpha;
    row.lambda = cell.lambda;
    row.lambda_u = spec.base.lambda_u;
    row.lambda_v = spec.kind == TrainerKind::fcf ? spec.lambda_v : 0.0;
    row.p = cell.p;
    row.stop_eps = spec.base.stop_eps;
    row.max_iters = spec.base.max_iters;
    row.dropout = cell.dropout;
    row.delta = cell.privacy ? cell.delta : 0.0;
    row.scale = cell.privacy ? cell.scale : 0.0;
    row.clip = spec.base.clip_predictions;
    row.test_fraction = spec.data.test_fraction;
    row.epsilon = (cell.privacy && cell.scale > 0.0)
                      ? 2.0 * cell.delta / cell.scale
                      : std::numeric_limits<double>::quiet_NaN();

    auto t0 = std::chrono::steady_clock::now();
    try {
        SplitSpec split_spec{spec.data.test_fraction, seed};
        auto [train, test] = split(full, split_spec);
        bool has_test = spec.data.test_fraction > 0.0;

        RunOptions opts;
        opts.eval_every = spec.eval_every;
        opts.workers = spec.train_workers;
        opts.comm_round_cap = spec.comm_round_cap;
        if (has_test) opts.test = &test;

        std::vector<MetricRow> history;
        if (spec.kind == TrainerKind::fcf) {
            FcfConfig cfg;
            cfg.d = spec.base.d;
            cfg.alpha = cell.alpha;
            cfg.lambda_u = spec.base.lambda_u;
            cfg.lambda_v = spec.lambda_v;
            cfg.max_iters = spec.base.max_iters;
            cfg.stop_eps = spec.base.stop_eps;
            cfg.seed = seed;
            cfg.clip_predictions = spec.base.clip_predictions;
            FcfTrainer trainer(cfg, train);
            FcfRunResult res = trainer.run(opts);
            row.iters = res.iters;
            row.comm_rounds = res.log.rounds();
            row.comm_messages = res.log.messages();
            row.comm_bytes = res.log.bytes();
            row.stop_reason = res.stop_reason;
            row.final_loss = trainer.objective();
            if (has_test) {
                EvalResult ev = evaluate(res.user_vecs, res.item_mat, test,
                                         spec.base.clip_predictions);
                row.mae = ev.mae;
                row.rmse = ev.rmse;
            } else {
                row.mae = row.rmse = std::numeric_limits<double>::quiet_NaN();
            }
            history = std::move(res.history);
        } else {
            TrainConfig cfg = spec.base;
            cfg.alpha = cell.alpha;
            cfg.lambda = cell.lambda;
            cfg.p = cell.p;
            cfg.dropout_rate = cell.dropout;
            cfg.seed = seed;
            if (cell.privacy)
                cfg.privacy = PrivacyConfig{cell.delta, cell.scale};
            else
                cfg.privacy.reset();
            FedTrainer trainer(spec.kind, cfg, train);
            RunResult res = trainer.run(opts);
            row.iters = res.iters;
            row.comm_rounds = res.log.rounds();
            row.comm_messages = res.log.messages();
            row.comm_bytes = res.log.bytes();
            row.stop_reason = res.stop_reason;
            row.final_loss = trainer.objective();
            if (has_test) {
                EvalResult ev = evaluate_models(res.models, res.global.avg_item_mat, test,
                                                spec.base.clip_predictions);
                row.mae = ev.mae;
                row.rmse = ev.rmse;
            } else {
                row.mae = row.rmse = std::numeric_limits<double>::quiet_NaN();
            }
            history = std::move(res.history);
        }
        row.status = "ok";

        if (spec.write_history && !spec.outdir.empty()) {
            row.history_file = spec.outdir + "/history_" + row.trainer + "_cell" +
                               std::to_string(cell.index) + "_seed" +
                               std::to_string(seed) + ".csv";
            write_history_csv(history, row.history_file);
        }
    } catch (const std::exception& e) {
        row.status = std::string("error: ") + e.what();
        row.mae = row.rmse = row.final_loss = std::numeric_limits<double>::quiet_NaN();
    }
    auto t1 = std::chrono::steady_clock::now();
    row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    return row;
}

}  // namespace

ResultTable run_experiment(const ExperimentSpec& spec) {
    RatingsDataset full = load_source(spec.data);
    std::vector<Cell> cells = expand_cells(spec);
    std::vector<std::uint64_t> seeds =
        spec.seeds.empty() ? std::vector<std::uint64_t>{spec.base.seed} : spec.seeds;

    if (!spec.outdir.empty()) std::filesystem::create_directories(spec.outdir);

    struct Job {
        const Cell* cell;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const auto& cell : cells)
        for (std::uint64_t s : seeds) jobs.push_back({&cell, s});

    ResultTable table;
    table.rows.resize(jobs.size());
    parallel_for(jobs.size(), spec.workers, [&](std::size_t k) {
        table.rows[k] = run_cell(spec, full, *jobs[k].cell, jobs[k].seed);
    });
    return table;
}

static void write_row_header(std::FILE* f) {
    std::fprintf(f,
                 "dataset,trainer,seed,d,alpha,lambda,lambda_u,lambda_v,p,max_iters,"
                 "stop_eps,dropout_rate,delta,scale,clip_predictions,test_fraction,"
                 "status,stop_reason,iters,comm_rounds,comm_messages,comm_bytes,"
                 "final_loss,mae,rmse,epsilon\n");
}

static void write_row(std::FILE* f, const CellResult& r) {
    std::fprintf(f,
                 "%s,%s,%llu,%d,%s,%s,%s,%s,%s,%lld,%s,%s,%s,%s,%d,%s,"
                 "\"%s\",%s,%lld,%lld,%lld,%lld,%s,%s,%s,%s\n",
                 r.dataset.c_str(), r.trainer.c_str(),
                 static_cast<unsigned long long>(r.seed), r.d, fmt(r.alpha).c_str(),
                 fmt(r.lambda).c_str(), fmt(r.lambda_u).c_str(), fmt(r.lambda_v).c_str(),
                 fmt(r.p).c_str(), r.max_iters, fmt(r.stop_eps).c_str(),
                 fmt(r.dropout).c_str(), fmt(r.delta).c_str(), fmt(r.scale).c_str(),
                 r.clip ? 1 : 0, fmt(r.test_fraction).c_str(), r.status.c_str(),
                 r.stop_reason.c_str(), r.iters, r.comm_rounds, r.comm_messages,
                 r.comm_bytes, fmt(r.final_loss).c_str(), fmt(r.mae).c_str(),
                 fmt(r.rmse).c_str(), fmt(r.epsilon).c_str());
}

void write_results_csv(const ResultTable& table, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot write " + path);
    write_row_header(f);
    for (const auto& r : table.rows) write_row(f, r);
    std::fclose(f);
}

void write_summary_csv(const ResultTable& table, const std::string& path) {
    // replicate aggregation across seeds: mean and standard deviation
    struct Acc {
        std::size_t n = 0;
        double mae = 0, mae2 = 0, rmse = 0, rmse2 = 0, iters = 0, rounds = 0;
        CellResult sample;
    };
    std::vector<std::string> order;
    std::map<std::string, Acc> groups;
    for (const auto& r : table.rows) {
        if (r.status != "ok") continue;
        std::string key = r.dataset + "|" + r.trainer + "|" + fmt(r.alpha) + "|" +
                          fmt(r.lambda) + "|" + fmt(r.p) + "|" + fmt(r.dropout) + "|" +
                          fmt(r.delta) + "|" + fmt(r.scale);
        auto [it, fresh] = groups.try_emplace(key);
        if (fresh) {
            order.push_back(key);
            it->second.sample = r;
        }
        Acc& a = it->second;
        ++a.n;
        a.mae += r.mae;
        a.mae2 += r.mae * r.mae;
        a.rmse += r.rmse;
        a.rmse2 += r.rmse * r.rmse;
        a.iters += static_cast<double>(r.iters);
        a.rounds += static_cast<double>(r.comm_rounds);
    }
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot write " + path);
    std::fprintf(f,
                 "dataset,trainer,alpha,lambda,p,dropout_rate,delta,scale,seeds,"
                 "mae_mean,mae_std,rmse_mean,rmse_std,iters_mean,comm_rounds_mean\n");
    for (const auto& key : order) {
        const Acc& a = groups.at(key);
        double n = static_cast<double>(a.n);
        double mae_mean = a.mae / n;
        double rmse_mean = a.rmse / n;
        double mae_std = a.n > 1 ? std::sqrt(std::max(0.0, (a.mae2 - n * mae_mean * mae_mean) / (n - 1))) : 0.0;
        double rmse_std = a.n > 1 ? std::sqrt(std::max(0.0, (a.rmse2 - n * rmse_mean * rmse_mean) / (n - 1))) : 0.0;
        const CellResult& s = a.sample;
        std::fprintf(f, "%s,%s,%s,%s,%s,%s,%s,%s,%zu,%s,%s,%s,%s,%s,%s\n",
                     s.dataset.c_str(), s.trainer.c_str(), fmt(s.alpha).c_str(),
                     fmt(s.lambda).c_str(), fmt(s.p).c_str(), fmt(s.dropout).c_str(),
                     fmt(s.delta).c_str(), fmt(s.scale).c_str(), a.n,
                     fmt(mae_mean).c_str(), fmt(mae_std).c_str(), fmt(rmse_mean).c_str(),
                     fmt(rmse_std).c_str(), fmt(a.iters / n).c_str(),
                     fmt(a.rounds / n).c_str());
    }
    std::fclose(f);
}

void write_timings_csv(const ResultTable& table, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot write " + path);
    std::fprintf(f, "dataset,trainer,seed,alpha,lambda,p,dropout_rate,scale,wall_ms\n");
    for (const auto& r : table.rows)
        std::fprintf(f, "%s,%s,%llu,%s,%s,%s,%s,%s,%.3f\n", r.dataset.c_str(),
                     r.trainer.c_str(), static_cast<unsigned long long>(r.seed),
                     fmt(r.alpha).c_str(), fmt(r.lambda).c_str(), fmt(r.p).c_str(),
                     fmt(r.dropout).c_str(), fmt(r.scale).c_str(), r.wall_ms);
    std::fclose(f);
}

void write_history_csv(const std::vector<MetricRow>& history, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot write " + path);
    std::fprintf(f, "iter,loss,mae,rmse,comm_rounds\n");
    for (const auto& row : history) {
        std::fprintf(f, "%lld,%s,", row.iter, fmt(row.loss).c_str());
        if (row.mae) std::fprintf(f, "%s,", fmt(*row.mae).c_str());
        else std::fprintf(f, ",");
        if (row.rmse) std::fprintf(f, "%s,", fmt(*row.rmse).c_str());
        else std::fprintf(f, ",");
        std::fprintf(f, "%lld\n", row.comm_rounds);
    }
    std::fclose(f);
}

CompareReport compare_communication(const ExperimentSpec& spec,
                                    const std::vector<TrainerKind>& kinds) {
    CompareReport report;
    for (TrainerKind kind : kinds) {
        ExperimentSpec one = spec;
        one.kind = kind;
        one.write_history = false;
        one.alphas.clear();
        // trainer-specific default step sizes unless the sweep pinned one
        if (spec.alphas.size() == 1) {
            one.base.alpha = spec.alphas[0];
        } else if (kind == TrainerKind::rfrecf) {
            one.base.alpha = spec.rfrecf_alpha;
        } else if (kind == TrainerKind::fcf) {
            one.base.alpha = spec.fcf_alpha;
        }
        one.lambdas.clear();
        one.ps.clear();
        one.scales.clear();
        one.deltas.clear();
        one.dropouts.clear();
        one.seeds = {spec.base.seed};
        ResultTable t = run_experiment(one);
        const CellResult& r = t.rows.front();
        if (r.status != "ok") throw std::runtime_error("compare cell failed: " + r.status);
        report.entries.push_back(
            {r.trainer, r.comm_rounds, r.iters, r.rmse, r.mae, r.stop_reason});
    }
    return report;
}

void write_compare_csv(const CompareReport& report, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot write " + path);
    std::fprintf(f, "trainer,comm_rounds,iters,rmse,mae,stop_reason\n");
    for (const auto& e : report.entries)
        std::fprintf(f, "%s,%lld,%lld,%s,%s,%s\n", e.trainer.c_str(), e.rounds, e.iters,
                     fmt(e.rmse).c_str(), fmt(e.mae).c_str(), e.stop_reason.c_str());
    std::fclose(f);
}

}  // namespace rfrec
