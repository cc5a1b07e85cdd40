#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfrec/comm.hpp"
#include "rfrec/dataset.hpp"
#include "rfrec/matrix.hpp"
#include "rfrec/trainers.hpp"

namespace rfrec {

struct FcfConfig {
    int d = 20;
    double alpha = 1e-4;   // raw gradients are summed over users, so the
                           // stable step is much smaller than the consensus
                           // trainers' per-client one
    double lambda_u = 0.1;
    double lambda_v = 0.1;
    long long max_iters = 100;
    double stop_eps = 1e-4;
    std::uint64_t seed = 1;
    bool clip_predictions = true;
    double init_sd = 0.01;

    void validate() const;
};

struct FcfRunResult {
    std::vector<Vec> user_vecs;
    Mat item_mat;
    CommLog log;
    std::vector<MetricRow> history;
    long long iters = 0;
    std::string stop_reason;
};

// Alternating gradient-exchange baseline over one shared item matrix:
// clients step their user vectors locally, upload per-rating item-gradient
// contributions h(i,j) = (r_ij - u_i.v_j)*u_i, the server assembles
// grad_vj = -2*sum_i h(i,j) + 2*lambda_v*v_j, steps V and redistributes it.
// Two communication rounds per iteration by construction.
class FcfTrainer {
public:
    FcfTrainer(const FcfConfig& cfg, const RatingsDataset& train);

    StepOutcome step();
    FcfRunResult run(const RunOptions& opts = {});

    const std::vector<Vec>& user_vecs() const { return users_; }
    const Mat& item_mat() const { return item_mat_; }
    const CommLog& log() const { return log_; }
    long long iter() const { return iter_; }

    // the plain matrix-factorization objective J over observed entries
    double objective() const;

private:
    FcfConfig cfg_;
    const RatingsDataset* data_;
    std::vector<Vec> users_;
    Mat item_mat_;
    Mat h_sum_;      // per-column sums of client contributions
    Mat prev_item_;
    CommLog log_;
    long long iter_ = 0;
    bool stop_hit_ = false;
    int workers_ = 0;
};

}  // namespace rfrec
