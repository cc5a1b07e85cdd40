#include "rfrec/fcf.hpp"

#include <algorithm>
#include <cmath>

#include "rfrec/errors.hpp"
#include "rfrec/kernels.hpp"
#include "rfrec/rng.hpp"
#include "rfrec/util.hpp"

namespace rfrec {

void FcfConfig::validate() const {
    if (d <= 0) throw ConfigError("d must be positive");
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (lambda_u < 0.0 || lambda_v < 0.0)
        throw ConfigError("penalties must be nonnegative");
    if (max_iters < 0) throw ConfigError("max_iters must be nonnegative");
    if (!(stop_eps > 0.0)) throw ConfigError("stop_eps must be positive");
}

FcfTrainer::FcfTrainer(const FcfConfig& cfg, const RatingsDataset& train)
    : cfg_(cfg), data_(&train) {
    cfg_.validate();
    std::size_t n = train.n_users, m = train.n_items, d = cfg_.d;
    users_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(cfg_.seed, stream::init, i));
        users_[i].resize(d);
        for (auto& v : users_[i]) v = rng.normal(0.0, cfg_.init_sd);
    }
    Rng vrng(derive_seed(cfg_.seed, stream::init, n));
    item_mat_ = Mat(d, m);
    for (auto& v : item_mat_.flat()) v = vrng.normal(0.0, cfg_.init_sd);
    h_sum_ = Mat(d, m);
}

StepOutcome FcfTrainer::step() {
    std::size_t d = cfg_.d;
    int m = static_cast<int>(data_->n_items);

    // client phase: user vectors step against the current shared V
    parallel_for(users_.size(), workers_, [&](std::size_t i) {
        const auto& row = data_->rows[i];
        Vec grad(d, 0.0);
        for (std::size_t k = 0; k < row.size(); ++k) {
            double resid =
                row.ratings[k] - kern::dot(users_[i].data(), item_mat_.col(row.items[k]), d);
            kern::axpy(-2.0 * resid, item_mat_.col(row.items[k]), grad.data(), d);
        }
        kern::axpy(2.0 * cfg_.lambda_u, users_[i].data(), grad.data(), d);
        kern::axpy(-cfg_.alpha, grad.data(), users_[i].data(), d);
        if (!kern::all_finite(users_[i].data(), d))
            throw DivergenceError(static_cast<int>(i), iter_,
                                  "fcf client " + std::to_string(i) +
                                      " diverged at iteration " + std::to_string(iter_));
    });

    // clients compute h(i,j) with their stepped user vectors and upload
    std::fill(h_sum_.flat().begin(), h_sum_.flat().end(), 0.0);
    for (std::size_t i = 0; i < users_.size(); ++i) {
        const auto& row = data_->rows[i];
        for (std::size_t k = 0; k < row.size(); ++k) {
            double resid =
                row.ratings[k] - kern::dot(users_[i].data(), item_mat_.col(row.items[k]), d);
            kern::axpy(resid, users_[i].data(), h_sum_.col(row.items[k]), d);
        }
    }
    log_.events.push_back({iter_, Direction::client_to_server,
                           static_cast<int>(users_.size()), cfg_.d, m});

    // server phase: V -= alpha * (-2*H + 2*lambda_v*V), then redistribute
    prev_item_ = item_mat_;
    kern::scal(1.0 - 2.0 * cfg_.alpha * cfg_.lambda_v, item_mat_.data(), item_mat_.size());
    kern::axpy(2.0 * cfg_.alpha, h_sum_.data(), item_mat_.data(), item_mat_.size());
    if (!kern::all_finite(item_mat_.data(), item_mat_.size()))
        throw DivergenceError(-1, iter_,
                              "fcf item matrix diverged at iteration " +
                                  std::to_string(iter_));
    log_.events.push_back({iter_, Direction::server_to_client,
                           static_cast<int>(users_.size()), cfg_.d, m});

    double denom = std::sqrt(kern::sq_norm(prev_item_.data(), prev_item_.size()));
    double delta = std::sqrt(kern::sq_dist(item_mat_.data(), prev_item_.data(),
                                           item_mat_.size()));
    StepOutcome outcome;
    outcome.comm_events = 2;
    outcome.global_delta =
        denom > 0.0 ? delta / denom : std::numeric_limits<double>::infinity();
    if (*outcome.global_delta <= cfg_.stop_eps) stop_hit_ = true;
    ++iter_;
    return outcome;
}

double FcfTrainer::objective() const {
    std::size_t d = cfg_.d;
    double j = 0.0;
    for (std::size_t i = 0; i < users_.size(); ++i) {
        const auto& row = data_->rows[i];
        for (std::size_t k = 0; k < row.size(); ++k) {
            double resid =
                row.ratings[k] - kern::dot(users_[i].data(), item_mat_.col(row.items[k]), d);
            j += resid * resid;
        }
        j += cfg_.lambda_u * kern::sq_norm(users_[i].data(), d);
    }
    j += cfg_.lambda_v * kern::sq_norm(item_mat_.data(), item_mat_.size());
    return j;
}

FcfRunResult FcfTrainer::run(const RunOptions& opts) {
    workers_ = opts.workers;
    FcfRunResult result;
    result.stop_reason = "max_iters";
    while (iter_ < cfg_.max_iters) {
        step();
        bool record = opts.eval_every > 0 && (iter_ % opts.eval_every == 0 ||
                                              iter_ == cfg_.max_iters || stop_hit_);
        if (record) {
            MetricRow row;
            row.iter = iter_;
            row.loss = objective();
            if (opts.test) {
                EvalResult ev = evaluate(users_, item_mat_, *opts.test, cfg_.clip_predictions);
                row.mae = ev.mae;
                row.rmse = ev.rmse;
            }
            row.comm_rounds = log_.rounds();
            result.history.push_back(row);
        }
        if (stop_hit_) {
            result.stop_reason = "stop_eps";
            break;
        }
        if (opts.comm_round_cap >= 0 && log_.rounds() >= opts.comm_round_cap) {
            result.stop_reason = "round_cap";
            break;
        }
    }
    result.user_vecs = users_;
    result.item_mat = item_mat_;
    result.log = log_;
    result.iters = iter_;
    return result;
}

}  // namespace rfrec
