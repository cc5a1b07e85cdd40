// Desk-scale verification battery: numeric estimates of the smoothness and
// strong-convexity constants, convergence-rate fits, expected-smoothness and
// unbiasedness Monte Carlo, communication-rate statistics, and the
// perturbation-floor orderings. Everything runs on small planted instances
// where a trustworthy reference optimum is cheap.

#include <cmath>
#include <limits>

#include "rfrec/kernels.hpp"
#include "rfrec/rng.hpp"
#include "rfrec/theory.hpp"
#include "rfrec/trainers.hpp"
#include "rfrec/privacy.hpp"

namespace rfrec::theory {

double rayleigh_quotient(const FlatProblem& prob, const Vec& x, const Vec& unit_dir,
                         double h) {
    Vec plus = x, minus = x;
    kern::axpy(h, unit_dir.data(), plus.data(), plus.size());
    kern::axpy(-h, unit_dir.data(), minus.data(), minus.size());
    Vec gp = prob.grad_F(plus);
    Vec gm = prob.grad_F(minus);
    kern::axpy(-1.0, gm.data(), gp.data(), gp.size());
    return kern::dot(unit_dir.data(), gp.data(), gp.size()) / (2.0 * h);
}

TrajectoryProbe::TrajectoryProbe(const FlatProblem& prob, const Vec& reference)
    : ref(reference), ref_neg(reference), d(prob.d()) {
    kern::scal(-1.0, ref_neg.data(), ref_neg.size());
}

void TrajectoryProbe::observe(std::span<const LocalModel> models) {
    double a = 0.0, b = 0.0;
    std::size_t off = 0;
    for (const auto& model : models) {
        a += kern::sq_dist(model.user_vec.data(), ref.data() + off, d);
        b += kern::sq_dist(model.user_vec.data(), ref_neg.data() + off, d);
        off += d;
        a += kern::sq_dist(model.item_mat.data(), ref.data() + off, model.item_mat.size());
        b += kern::sq_dist(model.item_mat.data(), ref_neg.data() + off,
                           model.item_mat.size());
        off += model.item_mat.size();
    }
    to_ref.push_back(a);
    to_neg.push_back(b);
}

std::span<const double> TrajectoryProbe::best() const {
    if (to_ref.empty()) return {};
    return to_ref.back() <= to_neg.back() ? std::span<const double>(to_ref)
                                          : std::span<const double>(to_neg);
}

ConvexDesk make_convex_desk(std::uint64_t seed) {
    ConvexDesk desk;
    PlantedSpec planted;
    planted.n_users = 6;
    planted.n_items = 8;
    planted.rank = 1;
    planted.factor_sd = 0.5;
    planted.noise_sd = 0.02;
    planted.seed = derive_seed(seed, stream::synth, 0xdeed);
    planted.name = "convex-desk";
    desk.data = std::make_shared<RatingsDataset>(make_planted(planted));

    desk.cfg.d = 1;
    desk.cfg.lambda = 10.0;
    desk.cfg.lambda_u = 1.0;
    desk.cfg.p = 0.5;
    desk.cfg.seed = seed;
    desk.cfg.stop_eps = 1e-300;  // stop on max_iters only
    desk.cfg.clip_predictions = false;

    FlatProblem prob(*desk.data, desk.cfg);
    Vec x0 = prob.random_point(0.5, 0.5, derive_seed(seed, stream::sample, 7));
    OptimumResult opt = reference_optimum(prob, x0, 1e-10, 1000000);
    desk.x_star = opt.x;

    desk.est.bounds = measure_bounds(prob, desk.x_star);
    ParameterBounds region = desk.est.bounds;
    region.M_u *= 1.5;
    region.M_v *= 1.5;
    desk.est.L_hat = estimate_L(prob, region, 40, derive_seed(seed, stream::sample, 11));
    desk.est.mu_hat = estimate_mu(prob, desk.x_star, 200, 1e-5,
                                  derive_seed(seed, stream::sample, 13));
    desk.est.script_L = script_L(desk.est.L_hat, desk.cfg.lambda, desk.cfg.p);
    desk.est.convexity_threshold =
        convexity_threshold(desk.est.bounds.M_r, desk.est.bounds.M_u, desk.cfg.lambda_u);
    desk.cfg.alpha = 1.0 / (desk.est.L_hat + desk.cfg.lambda);

    FlatProblem prob2(*desk.data, desk.cfg);
    desk.est.sigma2_hat = sigma_squared(prob2, desk.x_star);
    return desk;
}

namespace {

CheckRecord record(std::string name, double lhs, double rhs, bool pass) {
    return {std::move(name), lhs, rhs, rhs - lhs, pass};
}

// tail mean of the squared distance to the clean optimum for a noisy run
double plateau_level(const ConvexDesk& desk, double noise_scale, long long iters) {
    TrainConfig cfg = desk.cfg;
    cfg.max_iters = iters;
    cfg.privacy = PrivacyConfig{10.0, noise_scale};  // clip inactive at this delta
    FedTrainer trainer(TrainerKind::rfrec, cfg, *desk.data);
    FlatProblem prob = desk.problem();
    TrajectoryProbe probe(prob, desk.x_star);
    RunOptions opts;
    opts.eval_every = 0;
    opts.workers = 1;
    opts.on_iter = [&](long long, std::span<const LocalModel> models, const Mat&) {
        probe.observe(models);
    };
    trainer.run(opts);
    auto series = probe.best();
    std::size_t tail = series.size() / 4;
    double sum = 0.0;
    for (std::size_t k = series.size() - tail; k < series.size(); ++k) sum += series[k];
    return sum / static_cast<double>(tail);
}

// tail mean of the squared distance for a stochastic (RFRecF) noise-free run
double rfrecf_floor(const ConvexDesk& desk, double alpha, long long iters) {
    TrainConfig cfg = desk.cfg;
    cfg.alpha = alpha;
    cfg.max_iters = iters;
    FedTrainer trainer(TrainerKind::rfrecf, cfg, *desk.data);
    FlatProblem prob = desk.problem();
    TrajectoryProbe probe(prob, desk.x_star);
    RunOptions opts;
    opts.eval_every = 0;
    opts.workers = 1;
    opts.on_iter = [&](long long, std::span<const LocalModel> models, const Mat&) {
        probe.observe(models);
    };
    trainer.run(opts);
    auto series = probe.best();
    std::size_t tail = series.size() / 4;
    double sum = 0.0;
    for (std::size_t k = series.size() - tail; k < series.size(); ++k) sum += series[k];
    return sum / static_cast<double>(tail);
}

}  // namespace

std::vector<CheckRecord> run_all_checks(std::uint64_t seed, int workers) {
    std::vector<CheckRecord> out;
    ConvexDesk desk = make_convex_desk(seed);
    FlatProblem prob = desk.problem();
    const TheoryEstimates& est = desk.est;

    // constants and identities
    out.push_back(record("lambda_above_convexity_threshold", est.convexity_threshold,
                         desk.cfg.lambda, desk.cfg.lambda > est.convexity_threshold));

    double at_pstar = script_L(est.L_hat, desk.cfg.lambda,
                               desk.cfg.lambda / (est.L_hat + desk.cfg.lambda));
    out.push_back(record("scriptL_equals_L_plus_lambda_at_pstar",
                         std::abs(at_pstar - (est.L_hat + desk.cfg.lambda)), 1e-9,
                         std::abs(at_pstar - (est.L_hat + desk.cfg.lambda)) <= 1e-9));

    {
        // script_L(p) >= L + lambda on a p grid, minimized at p*
        double worst = std::numeric_limits<double>::infinity();
        double best_p = 0.0;
        for (int g = 1; g < 1000; ++g) {
            double p = g / 1000.0;
            double v = script_L(est.L_hat, desk.cfg.lambda, p);
            if (v < worst) {
                worst = v;
                best_p = p;
            }
        }
        double pstar = desk.cfg.lambda / (est.L_hat + desk.cfg.lambda);
        out.push_back(record("scriptL_lower_bound_on_grid", est.L_hat + desk.cfg.lambda,
                             worst, worst >= est.L_hat + desk.cfg.lambda - 1e-9));
        out.push_back(record("pstar_grid_argmin", std::abs(best_p - pstar), 1.0 / 1000.0,
                             std::abs(best_p - pstar) <= 1.0 / 1000.0 + 1e-12));
        // expected-round coefficient max{Lp, lambda(1-p)} has the same argmin
        double best_comm = std::numeric_limits<double>::infinity(), best_comm_p = 0.0;
        for (int g = 1; g < 1000; ++g) {
            double p = g / 1000.0;
            double v = std::max(est.L_hat * p, desk.cfg.lambda * (1.0 - p));
            if (v < best_comm) {
                best_comm = v;
                best_comm_p = p;
            }
        }
        out.push_back(record("comm_coefficient_grid_argmin", std::abs(best_comm_p - pstar),
                             1.0 / 1000.0, std::abs(best_comm_p - pstar) <= 1.0 / 1000.0 + 1e-12));
    }

    out.push_back(record(
        "rfrecf_round_bound_at_most_half_of_rfrec",
        4.0 * desk.cfg.lambda * est.L_hat / (est.L_hat + desk.cfg.lambda),
        est.L_hat + desk.cfg.lambda,
        4.0 * desk.cfg.lambda * est.L_hat / (est.L_hat + desk.cfg.lambda) <=
            est.L_hat + desk.cfg.lambda + 1e-9));

    // two starts reach the same canonicalized optimum (d = 1)
    {
        Vec y0 = prob.random_point(0.4, 0.4, derive_seed(seed, stream::sample, 101));
        OptimumResult o2 = reference_optimum(prob, y0, 1e-11);
        double gap = std::sqrt(kern::sq_dist(o2.x.data(), desk.x_star.data(),
                                             desk.x_star.size()));
        out.push_back(record("reference_optimum_two_start_gap", gap, 1e-6, gap <= 1e-6));
    }

    // linear rate of the noise-free RFRec trajectory (full-gradient descent)
    {
        TrainConfig cfg = desk.cfg;
        cfg.max_iters = 1500;
        FedTrainer trainer(TrainerKind::rfrec, cfg, *desk.data);
        TrajectoryProbe probe(prob, desk.x_star);
        RunOptions opts;
        opts.eval_every = 0;
        opts.workers = workers;
        opts.on_iter = [&](long long, std::span<const LocalModel> models, const Mat&) {
            probe.observe(models);
        };
        trainer.run(opts);
        auto series = probe.best();
        RateFit fit = check_linear_rate(series);
        out.push_back(record("rfrec_rate_slope_negative", fit.slope, 0.0, fit.slope < 0.0));
        out.push_back(record("rfrec_rate_r2", 0.99, fit.r2, fit.r2 >= 0.99));

        // soft-mode Rayleigh estimate including the trajectory's own direction
        double mu = est.mu_hat;
        Vec models_end = prob.from_models(trainer.models());
        Vec dir = models_end;
        kern::axpy(-1.0, (probe.to_ref.back() <= probe.to_neg.back()
                              ? desk.x_star
                              : probe.ref_neg).data(),
                   dir.data(), dir.size());
        double norm = std::sqrt(kern::sq_norm(dir.data(), dir.size()));
        if (norm > 1e-10) {
            kern::scal(1.0 / norm, dir.data(), dir.size());
            mu = std::min(mu, rayleigh_quotient(prob, desk.x_star, dir, 1e-5));
        }
        double bound_slope = 0.4 * std::log(1.0 - desk.cfg.alpha * mu);
        out.push_back(
            record("rfrec_rate_within_bound", fit.slope, bound_slope, fit.slope <= bound_slope));

        // squared distance is monotone under the full-gradient trainer
        bool monotone = true;
        for (std::size_t k = 1; k < series.size(); ++k)
            if (series[k] > series[k - 1] * (1.0 + 1e-12)) monotone = false;
        out.push_back(record("rfrec_sq_dist_monotone", monotone ? 0.0 : 1.0, 0.0, monotone));
    }

    // forced deterministic alternation of RFRecF branches still contracts
    {
        TrainConfig cfg = desk.cfg;
        cfg.alpha = 1.0 / (2.0 * est.script_L);
        cfg.max_iters = 4000;
        FedTrainer trainer(TrainerKind::rfrecf, cfg, *desk.data);
        trainer.set_zeta_schedule({0, 0, 1, 1});
        TrajectoryProbe probe(prob, desk.x_star);
        RunOptions opts;
        opts.eval_every = 0;
        opts.workers = workers;
        opts.on_iter = [&](long long, std::span<const LocalModel> models, const Mat&) {
            probe.observe(models);
        };
        trainer.run(opts);
        auto series = probe.best();
        out.push_back(record("rfrecf_forced_schedule_contracts", series.back(),
                             series.front() * 1e-3, series.back() < series.front() * 1e-3));
    }

    // expected smoothness across p, 20 random points each
    for (double p : {0.1, 0.5, 0.9}) {
        TrainConfig cfg = desk.cfg;
        cfg.p = p;
        FlatProblem pp(*desk.data, cfg);
        double sl = script_L(est.L_hat, cfg.lambda, p);
        bool all_pass = true;
        double worst_margin = std::numeric_limits<double>::infinity();
        for (int t = 0; t < 20; ++t) {
            Vec x = pp.random_point(est.bounds.M_u, est.bounds.M_v,
                                    derive_seed(seed, stream::sample, 300 + t));
            SmoothnessCheck chk = check_expected_smoothness(
                pp, x, desk.x_star, sl, 10000, derive_seed(seed, stream::sample, 400 + t));
            all_pass = all_pass && chk.pass1 && chk.pass2;
            worst_margin = std::min({worst_margin, chk.rhs1 + 3 * chk.se1 - chk.lhs1,
                                     chk.rhs2 + 3 * chk.se2 - chk.lhs2});
        }
        out.push_back(record("expected_smoothness_p" + std::to_string(p).substr(0, 3),
                             -worst_margin, 0.0, all_pass));
    }

    // stochastic gradient is unbiased: MC mean within 3 SE per coordinate
    {
        bool all_pass = true;
        double worst_z = 0.0;
        for (int t = 0; t < 10; ++t) {
            Vec x = prob.random_point(est.bounds.M_u, est.bounds.M_v,
                                      derive_seed(seed, stream::sample, 500 + t));
            Vec gf = prob.grad_f(x), gp = prob.grad_psi(x), gF = prob.grad_F(x);
            kern::scal(1.0 / (1.0 - desk.cfg.p), gf.data(), gf.size());
            kern::scal(desk.cfg.lambda / desk.cfg.p, gp.data(), gp.size());
            int draws = 100000;
            Rng rng(derive_seed(seed, stream::sample, 600 + t));
            long long regs = 0;
            for (int k = 0; k < draws; ++k)
                if (rng.bernoulli(desk.cfg.p)) ++regs;
            double w1 = static_cast<double>(regs) / draws;
            for (std::size_t c = 0; c < prob.dim(); ++c) {
                double mean = (1.0 - w1) * gf[c] + w1 * gp[c];
                double var = (1.0 - w1) * gf[c] * gf[c] + w1 * gp[c] * gp[c] - mean * mean;
                double se = std::sqrt(std::max(var, 0.0) / draws);
                double err = std::abs(mean - gF[c]);
                if (err > 3.0 * se + 1e-12) all_pass = false;
                if (se > 0) worst_z = std::max(worst_z, err / se);
            }
        }
        out.push_back(record("stochastic_gradient_unbiased_worst_z", worst_z, 3.0, all_pass));
    }

    // communication statistics
    {
        TrainConfig cfg = desk.cfg;
        cfg.max_iters = 10000;
        FedTrainer trainer(TrainerKind::rfrecf, cfg, *desk.data);
        RunOptions opts;
        opts.eval_every = 0;
        opts.workers = workers;
        RunResult res = trainer.run(opts);
        CommStats st = comm_schedule_stats(res.log, cfg.p);
        out.push_back(record("rfrecf_comm_rate_z", std::abs(st.z), 3.0, std::abs(st.z) <= 3.0));
        out.push_back(record("rfrecf_rounds_equal_transitions",
                             static_cast<double>(res.log.rounds()),
                             static_cast<double>(res.log.zeta_transitions()),
                             res.log.rounds() == res.log.zeta_transitions()));
        double expected_01 = 2.0 * 0.1 * 0.9;
        out.push_back(record("comm_expected_rate_p01", std::abs(expected_01 - 0.18), 1e-15,
                             std::abs(expected_01 - 0.18) <= 1e-15));
    }
    {
        TrainConfig cfg = desk.cfg;
        cfg.max_iters = 50;
        FedTrainer trainer(TrainerKind::rfrec, cfg, *desk.data);
        RunOptions opts;
        opts.eval_every = 0;
        opts.workers = workers;
        RunResult res = trainer.run(opts);
        out.push_back(record("rfrec_two_rounds_per_iteration",
                             static_cast<double>(res.log.rounds()),
                             static_cast<double>(2 * res.iters),
                             res.log.rounds() == 2 * res.iters));
    }

    // perturbation floor: plateaus ordered across noise scales
    {
        double p1 = plateau_level(desk, 0.02, 1200);
        double p2 = plateau_level(desk, 0.04, 1200);
        double p3 = plateau_level(desk, 0.08, 1200);
        out.push_back(record("perturbation_plateau_ordering", p1, p3,
                             p1 < p2 && p2 < p3));
    }

    // RFRecF variance floor shrinks when alpha is halved
    {
        double a = 1.0 / (2.0 * est.script_L);
        double f1 = rfrecf_floor(desk, a, 6000);
        double f2 = rfrecf_floor(desk, a / 2.0, 6000);
        out.push_back(record("rfrecf_floor_shrinks_with_alpha", f2, f1, f2 < f1));
    }

    // averaged upload noise variance is 2 s^2 / n per entry
    {
        double s = 0.05;
        std::size_t n_clients = 5, trials = 2000;
        Mat base(3, 4);
        Rng init(derive_seed(seed, stream::sample, 900));
        for (auto& v : base.flat()) v = init.uniform(-0.1, 0.1);
        PrivacyConfig pc{1.0, s};  // clip inactive
        Rng noise_rng(derive_seed(seed, stream::noise, 901));
        double sum = 0.0, sumsq = 0.0;
        std::size_t count = 0;
        Mat acc(3, 4), scratch(3, 4);
        for (std::size_t t = 0; t < trials; ++t) {
            std::fill(acc.flat().begin(), acc.flat().end(), 0.0);
            for (std::size_t c = 0; c < n_clients; ++c) {
                perturb_into(base, pc, noise_rng, scratch);
                kern::add(acc.data(), scratch.data(), acc.size());
            }
            kern::scal(1.0 / n_clients, acc.data(), acc.size());
            for (std::size_t e = 0; e < acc.size(); ++e) {
                double dev = acc.data()[e] - base.data()[e];
                sum += dev;
                sumsq += dev * dev;
                ++count;
            }
        }
        double mean = sum / count;
        double var = sumsq / count - mean * mean;
        double want = 2.0 * s * s / static_cast<double>(n_clients);
        double rel = std::abs(var - want) / want;
        out.push_back(record("aggregated_noise_variance_rel_err", rel, 0.10, rel <= 0.10));
    }

    return out;
}

}  // namespace rfrec::theory
