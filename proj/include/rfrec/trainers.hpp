#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rfrec/comm.hpp"
#include "rfrec/dataset.hpp"
#include "rfrec/model.hpp"
#include "rfrec/rng.hpp"

namespace rfrec {

enum class TrainerKind { rfrec, rfrecf, fcf };

const char* trainer_name(TrainerKind kind);
TrainerKind parse_trainer(const std::string& name);

struct StepOutcome {
    int comm_events = 0;                     // 2 for RFRec; 0 or 1 for RFRecF
    std::optional<std::uint8_t> zeta;        // RFRecF branch draw
    std::optional<double> global_delta;      // |Vbar_new - Vbar_old|_F / |Vbar_old|_F
};

struct MetricRow {
    long long iter;
    double loss;                             // F = f + lambda*psi on the train split
    std::optional<double> mae, rmse;         // present when a test split is attached
    long long comm_rounds;                   // cumulative
};

struct RunResult {
    std::vector<LocalModel> models;
    GlobalState global;
    CommLog log;
    std::vector<MetricRow> history;
    long long iters = 0;
    std::string stop_reason;                 // "stop_eps" | "max_iters" | "round_cap"
};

struct RunOptions {
    const RatingsDataset* test = nullptr;
    long long eval_every = 1;                // 0 disables per-iteration metrics
    std::optional<std::vector<std::uint8_t>> zeta_schedule;  // forced draws, cycled
    long long comm_round_cap = -1;           // stop once rounds reach the cap
    int workers = 0;                         // 0 = hardware concurrency
    // called after every iteration with the live state (theory probes)
    std::function<void(long long, std::span<const LocalModel>, const Mat&)> on_iter;
};

// Branch gradients of the non-uniform stochastic estimator: the task branch
// returns grad f_i scaled by 1/(1-p), the regularizer branch lambda*(V_i -
// Vbar) scaled by 1/p (du zero). Their p/(1-p) mixture is unbiased for
// grad F_i.
enum class ZetaBranch { task, regularizer };

FGrad stochastic_gradient(const LocalModel& model, const RatingRow& row,
                          const GlobalState& global, const TrainConfig& cfg,
                          ZetaBranch branch);

// Iteration-driving state machine over the federated model for the two
// consensus trainers. Protocol per step:
//
//   rfrec:  every client takes one full-gradient step on f_i + lambda*psi_i
//           against its last received average, then a (possibly partial)
//           cohort uploads perturbed item matrices, the server averages
//           them and redistributes. Exactly two communication rounds.
//
//   rfrecf: one shared Bernoulli(p) draw zeta_k. zeta=0 after zeta=0 is a
//           task-only step scaled 1/(1-p); zeta=0 after zeta=1 first
//           receives the fresh average (one server->client round) and moves
//           item matrices toward it scaled lambda/p; zeta=1 after zeta=0
//           uploads and aggregates (one client->server round); repeated
//           zeta=1 changes nothing. Communication only at transitions.
//
// Dropout resamples the cohort i.i.d. at every aggregation; dropped clients
// keep training against their stale average and re-enter unchanged.
class FedTrainer {
public:
    FedTrainer(TrainerKind kind, const TrainConfig& cfg, const RatingsDataset& train);

    StepOutcome step();
    RunResult run(const RunOptions& opts = {});

    std::span<const LocalModel> models() const { return models_; }
    const Mat& global() const { return *snapshot_; }
    const CommLog& log() const { return log_; }
    long long iter() const { return iter_; }
    std::optional<std::uint8_t> prev_zeta() const { return prev_zeta_; }

    // objective F on the training data at the current state
    double objective() const;

    void set_zeta_schedule(std::vector<std::uint8_t> schedule);
    void set_workers(int workers) { workers_ = workers; }

    // replace the initialized state (tests and theory probes)
    void set_state(std::vector<LocalModel> models, Mat global);

private:
    StepOutcome rfrec_step();
    StepOutcome rfrecf_step();
    void local_full_step(std::size_t i, double task_step, double pull);
    void main_update(std::size_t i, double task_step);
    std::vector<int> sample_cohort();
    std::optional<double> aggregate_cohort(const std::vector<int>& cohort);
    void check_finite(std::size_t i) const;

    TrainerKind kind_;
    TrainConfig cfg_;
    const RatingsDataset* data_;
    std::vector<LocalModel> models_;
    std::vector<std::shared_ptr<const Mat>> views_;  // last received average per client
    std::shared_ptr<const Mat> snapshot_;            // server's current average
    std::vector<Rng> noise_rngs_;
    Rng zeta_rng_, dropout_rng_;
    std::optional<std::vector<std::uint8_t>> zeta_schedule_;
    std::vector<int> last_cohort_;
    CommLog log_;
    long long iter_ = 0;
    std::optional<std::uint8_t> prev_zeta_;
    bool stop_hit_ = false;
    int workers_ = 0;
    Mat accum_, scratch_;
};

EvalResult evaluate_models(std::span<const LocalModel> models, const Mat& item_mat,
                           const RatingsDataset& test, bool clip);

}  // namespace rfrec
