#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfrec/dataset.hpp"
#include "rfrec/fcf.hpp"
#include "rfrec/trainers.hpp"

namespace rfrec {

struct DataSourceSpec {
    std::string path;              // empty -> planted synthetic instance
    TabularFormat format;
    bool internal_format = false;  // parse `path` as the internal text format
    bool normalize = false;        // map ratings onto [0,1] at load
    PlantedSpec planted;
    double test_fraction = 0.2;
};

RatingsDataset load_source(const DataSourceSpec& spec);

struct ExperimentSpec {
    DataSourceSpec data;
    TrainerKind kind = TrainerKind::rfrec;
    TrainConfig base;
    double rfrecf_alpha = 0.025;   // trainer-specific defaults for compare runs
    double fcf_alpha = 1e-4;
    double lambda_v = 0.1;         // FCF only

    // sweep axes; an empty axis pins the base value
    std::vector<double> alphas, lambdas, ps, scales, deltas, dropouts;
    std::vector<std::uint64_t> seeds;

    std::size_t cell_cap = 512;
    int workers = 1;               // concurrent sweep cells
    int train_workers = 0;         // threads inside a single run
    long long eval_every = 1;
    long long comm_round_cap = -1;
    std::string outdir;
    bool write_history = true;
};

struct CellResult {
    // resolved configuration (every output row is re-runnable from these)
    std::string dataset;
    std::string trainer;
    std::uint64_t seed = 0;
    int d = 0;
    double alpha = 0, lambda = 0, lambda_u = 0, lambda_v = 0, p = 0, stop_eps = 0;
    long long max_iters = 0;
    double dropout = 0, delta = 0, scale = 0;
    bool clip = true;
    double test_fraction = 0;

    std::string status;            // "ok" or the failure message
    std::string stop_reason;
    long long iters = 0, comm_rounds = 0, comm_messages = 0, comm_bytes = 0;
    double final_loss = 0, mae = 0, rmse = 0, epsilon = 0;
    double wall_ms = 0;            // timing sidecar only, keeps results.csv deterministic
    std::string history_file;
};

struct ResultTable {
    std::vector<CellResult> rows;
};

ResultTable run_experiment(const ExperimentSpec& spec);

void write_results_csv(const ResultTable& table, const std::string& path);
void write_summary_csv(const ResultTable& table, const std::string& path);
void write_timings_csv(const ResultTable& table, const std::string& path);
void write_history_csv(const std::vector<MetricRow>& history, const std::string& path);

struct CompareEntry {
    std::string trainer;
    long long rounds = 0, iters = 0;
    double rmse = 0, mae = 0;
    std::string stop_reason;
};

struct CompareReport {
    std::vector<CompareEntry> entries;
};

// Runs each trainer on the same split to the shared stop criterion or the
// round cap and reports rounds-to-criterion side by side.
CompareReport compare_communication(const ExperimentSpec& spec,
                                    const std::vector<TrainerKind>& kinds);

void write_compare_csv(const CompareReport& report, const std::string& path);

}  // namespace rfrec
