#include "rfrec/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rfrec/errors.hpp"
#include "rfrec/kernels.hpp"
#include "rfrec/privacy.hpp"
#include "rfrec/util.hpp"

namespace rfrec {

const char* trainer_name(TrainerKind kind) {
    switch (kind) {
        case TrainerKind::rfrec: return "rfrec";
        case TrainerKind::rfrecf: return "rfrecf";
        case TrainerKind::fcf: return "fcf";
    }
    return "?";
}

TrainerKind parse_trainer(const std::string& name) {
    if (name == "rfrec") return TrainerKind::rfrec;
    if (name == "rfrecf") return TrainerKind::rfrecf;
    if (name == "fcf") return TrainerKind::fcf;
    throw ConfigError("unknown trainer '" + name + "' (rfrec|rfrecf|fcf)");
}

FGrad stochastic_gradient(const LocalModel& model, const RatingRow& row,
                          const GlobalState& global, const TrainConfig& cfg,
                          ZetaBranch branch) {
    if (!(cfg.p > 0.0 && cfg.p < 1.0))
        throw ConfigError("stochastic_gradient requires p strictly inside (0,1)");
    if (branch == ZetaBranch::task) {
        FGrad g = grad_f(model, row, cfg.lambda_u);
        double s = 1.0 / (1.0 - cfg.p);
        kern::scal(s, g.du.data(), g.du.size());
        kern::scal(s, g.dV.data(), g.dV.size());
        return g;
    }
    FGrad g;
    g.du.assign(model.user_vec.size(), 0.0);
    g.dV = grad_psi(model, global);
    kern::scal(cfg.lambda / cfg.p, g.dV.data(), g.dV.size());
    return g;
}

FedTrainer::FedTrainer(TrainerKind kind, const TrainConfig& cfg,
                       const RatingsDataset& train)
    : kind_(kind),
      cfg_(cfg),
      data_(&train),
      zeta_rng_(derive_seed(cfg.seed, stream::zeta)),
      dropout_rng_(derive_seed(cfg.seed, stream::drop)) {
    if (kind == TrainerKind::fcf)
        throw ConfigError("FedTrainer drives rfrec/rfrecf; use FcfTrainer for fcf");
    cfg_.validate(kind == TrainerKind::rfrecf);

    std::size_t n = train.n_users, m = train.n_items, d = cfg_.d;
    for (std::size_t u = 0; u < n; ++u)
        if (train.rows[u].empty())
            throw DegenerateClientError("client " + std::to_string(u) +
                                        " has no training ratings");

    models_.resize(n);
    noise_rngs_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(cfg_.seed, stream::init, i));
        auto& model = models_[i];
        model.user_vec.resize(d);
        for (auto& v : model.user_vec) v = rng.normal(0.0, cfg_.init_sd);
        model.item_mat = Mat(d, m);
        for (auto& v : model.item_mat.flat()) v = rng.normal(0.0, cfg_.init_sd);
        noise_rngs_.emplace_back(derive_seed(cfg_.seed, stream::noise, i));
    }
    Rng global_rng(derive_seed(cfg_.seed, stream::init, n));
    Mat vbar(d, m);
    for (auto& v : vbar.flat()) v = global_rng.normal(0.0, cfg_.init_sd);
    snapshot_ = std::make_shared<const Mat>(std::move(vbar));
    views_.assign(n, snapshot_);
    last_cohort_.resize(n);
    for (std::size_t i = 0; i < n; ++i) last_cohort_[i] = static_cast<int>(i);
}

void FedTrainer::set_zeta_schedule(std::vector<std::uint8_t> schedule) {
    if (schedule.empty()) throw ConfigError("zeta schedule must be nonempty");
    zeta_schedule_ = std::move(schedule);
}

void FedTrainer::set_state(std::vector<LocalModel> models, Mat global) {
    if (models.size() != models_.size())
        throw ShapeError("set_state: wrong number of clients");
    for (const auto& m : models)
        if (m.user_vec.size() != static_cast<std::size_t>(cfg_.d) ||
            m.item_mat.rows() != static_cast<std::size_t>(cfg_.d) ||
            m.item_mat.cols() != data_->n_items)
            throw ShapeError("set_state: model shape mismatch");
    if (global.rows() != static_cast<std::size_t>(cfg_.d) ||
        global.cols() != data_->n_items)
        throw ShapeError("set_state: global shape mismatch");
    models_ = std::move(models);
    snapshot_ = std::make_shared<const Mat>(std::move(global));
    views_.assign(models_.size(), snapshot_);
}

void FedTrainer::check_finite(std::size_t i) const {
    const auto& model = models_[i];
    if (!kern::all_finite(model.user_vec.data(), model.user_vec.size()) ||
        !kern::all_finite(model.item_mat.data(), model.item_mat.size()))
        throw DivergenceError(static_cast<int>(i), iter_,
                              "client " + std::to_string(i) +
                                  " diverged (non-finite parameters) at iteration " +
                                  std::to_string(iter_));
}

// one gradient step on f_i (+ optional consensus pull), simultaneous in (u,V):
// every term is evaluated at the pre-step parameters
void FedTrainer::local_full_step(std::size_t i, double task_step, double pull) {
    auto& model = models_[i];
    const auto& row = data_->rows[i];
    std::size_t d = model.user_vec.size();
    Vec resid, gu;
    residuals(model, row, resid);
    task_user_grad(model, row, resid, cfg_.lambda_u, gu);
    if (pull != 0.0)
        kern::toward(model.item_mat.data(), pull, views_[i]->data(),
                     model.item_mat.size());
    apply_item_task_step(model, row, resid, task_step);
    kern::axpy(-task_step, gu.data(), model.user_vec.data(), d);
    check_finite(i);
}

void FedTrainer::main_update(std::size_t i, double task_step) {
    local_full_step(i, task_step, 0.0);
}

std::vector<int> FedTrainer::sample_cohort() {
    std::vector<int> cohort;
    cohort.reserve(models_.size());
    if (cfg_.dropout_rate == 0.0) {
        for (std::size_t i = 0; i < models_.size(); ++i)
            cohort.push_back(static_cast<int>(i));
        return cohort;
    }
    for (std::size_t i = 0; i < models_.size(); ++i)
        if (!dropout_rng_.bernoulli(cfg_.dropout_rate))
            cohort.push_back(static_cast<int>(i));
    return cohort;
}

// averages the cohort's (perturbed) item matrices into a fresh snapshot;
// returns the relative Frobenius change of the average, or nullopt when the
// cohort is empty and the previous average is carried over
std::optional<double> FedTrainer::aggregate_cohort(const std::vector<int>& cohort) {
    if (cohort.empty()) {
        ++log_.skipped_aggregations;
        return std::nullopt;
    }
    std::size_t sz = models_.front().item_mat.size();
    if (accum_.size() != sz)
        accum_ = Mat(models_.front().item_mat.rows(), models_.front().item_mat.cols());
    std::fill(accum_.flat().begin(), accum_.flat().end(), 0.0);

    // serial accumulation in client order keeps the result independent of
    // the worker count; noise comes from per-client streams
    for (int i : cohort) {
        if (cfg_.privacy) {
            perturb_into(models_[i].item_mat, *cfg_.privacy, noise_rngs_[i], scratch_);
            kern::add(accum_.data(), scratch_.data(), sz);
        } else {
            kern::add(accum_.data(), models_[i].item_mat.data(), sz);
        }
    }
    kern::scal(1.0 / static_cast<double>(cohort.size()), accum_.data(), sz);

    double denom = std::sqrt(kern::sq_norm(snapshot_->data(), sz));
    double delta = std::sqrt(kern::sq_dist(accum_.data(), snapshot_->data(), sz));
    snapshot_ = std::make_shared<const Mat>(accum_);
    return denom > 0.0 ? delta / denom : std::numeric_limits<double>::infinity();
}

StepOutcome FedTrainer::rfrec_step() {
    int d = cfg_.d, m = static_cast<int>(data_->n_items);
    parallel_for(models_.size(), workers_, [&](std::size_t i) {
        local_full_step(i, cfg_.alpha, cfg_.alpha * cfg_.lambda);
    });

    std::vector<int> cohort = sample_cohort();
    log_.events.push_back({iter_, Direction::client_to_server,
                           static_cast<int>(cohort.size()), d, m});
    std::optional<double> delta = aggregate_cohort(cohort);
    log_.events.push_back({iter_, Direction::server_to_client,
                           static_cast<int>(cohort.size()), d, m});
    for (int i : cohort) views_[i] = snapshot_;
    last_cohort_ = std::move(cohort);

    if (delta && *delta <= cfg_.stop_eps) stop_hit_ = true;
    ++iter_;
    return {2, std::nullopt, delta};
}

StepOutcome FedTrainer::rfrecf_step() {
    int d = cfg_.d, m = static_cast<int>(data_->n_items);
    std::uint8_t zeta;
    if (zeta_schedule_) {
        zeta = (*zeta_schedule_)[static_cast<std::size_t>(iter_) % zeta_schedule_->size()];
    } else {
        zeta = zeta_rng_.bernoulli(cfg_.p) ? 1 : 0;
    }
    std::uint8_t prev = prev_zeta_.value_or(0);

    StepOutcome outcome;
    outcome.zeta = zeta;

    // transfers happen first: the update below consumes the moved state
    if (zeta != prev) {
        outcome.comm_events = 1;
        if (prev == 0) {  // clients upload, server aggregates
            std::vector<int> cohort = sample_cohort();
            log_.events.push_back({iter_, Direction::client_to_server,
                                   static_cast<int>(cohort.size()), d, m});
            outcome.global_delta = aggregate_cohort(cohort);
            last_cohort_ = std::move(cohort);
            if (outcome.global_delta && *outcome.global_delta <= cfg_.stop_eps)
                stop_hit_ = true;
        } else {  // server distributes the average to the cohort
            log_.events.push_back({iter_, Direction::server_to_client,
                                   static_cast<int>(last_cohort_.size()), d, m});
            for (int i : last_cohort_) views_[i] = snapshot_;
        }
    }

    if (zeta == 0) {
        if (prev == 1) {
            double pull = (cfg_.alpha / cfg_.p) * cfg_.lambda;
            parallel_for(models_.size(), workers_, [&](std::size_t i) {
                kern::toward(models_[i].item_mat.data(), pull, views_[i]->data(),
                             models_[i].item_mat.size());
                check_finite(i);
            });
        } else {
            double task_step = cfg_.alpha / (1.0 - cfg_.p);
            parallel_for(models_.size(), workers_,
                         [&](std::size_t i) { main_update(i, task_step); });
        }
    }
    // zeta == 1 after zeta == 1: the stored uploads are unchanged, so the
    // average is already current; nothing moves

    log_.zeta_seq.push_back(zeta);
    prev_zeta_ = zeta;
    ++iter_;
    return outcome;
}

StepOutcome FedTrainer::step() {
    return kind_ == TrainerKind::rfrec ? rfrec_step() : rfrecf_step();
}

double FedTrainer::objective() const {
    double f = 0.0;
    for (std::size_t i = 0; i < models_.size(); ++i)
        f += local_loss(models_[i], data_->rows[i], cfg_.lambda_u);
    double psi = 0.0;
    for (const auto& model : models_)
        psi += kern::sq_dist(model.item_mat.data(), snapshot_->data(),
                             model.item_mat.size());
    return f + cfg_.lambda * 0.5 * psi;
}

RunResult FedTrainer::run(const RunOptions& opts) {
    workers_ = opts.workers;
    if (opts.zeta_schedule) set_zeta_schedule(*opts.zeta_schedule);

    RunResult result;
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
                EvalResult ev =
                    evaluate_models(models_, *snapshot_, *opts.test, cfg_.clip_predictions);
                row.mae = ev.mae;
                row.rmse = ev.rmse;
            }
            row.comm_rounds = log_.rounds();
            result.history.push_back(row);
        }
        if (opts.on_iter) opts.on_iter(iter_, models_, *snapshot_);
        if (stop_hit_) {
            result.stop_reason = "stop_eps";
            break;
        }
        if (opts.comm_round_cap >= 0 && log_.rounds() >= opts.comm_round_cap) {
            result.stop_reason = "round_cap";
            break;
        }
    }
    result.models = models_;
    result.global.avg_item_mat = *snapshot_;
    result.log = log_;
    result.iters = iter_;
    return result;
}

EvalResult evaluate_models(std::span<const LocalModel> models, const Mat& item_mat,
                           const RatingsDataset& test, bool clip) {
    std::vector<Vec> user_vecs;
    user_vecs.reserve(models.size());
    for (const auto& m : models) user_vecs.push_back(m.user_vec);
    return evaluate(user_vecs, item_mat, test, clip);
}

}  // namespace rfrec
