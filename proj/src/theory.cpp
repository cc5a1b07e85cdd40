#include "rfrec/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "rfrec/errors.hpp"
#include "rfrec/kernels.hpp"
#include "rfrec/rng.hpp"
#include "rfrec/trainers.hpp"

namespace rfrec::theory {

FlatProblem::FlatProblem(const RatingsDataset& data, const TrainConfig& cfg)
    : data_(&data), cfg_(cfg), n_(data.n_users), m_(data.n_items),
      d_(static_cast<std::size_t>(cfg.d)), stride_(d_ + d_ * m_) {}

std::span<double> FlatProblem::user(Vec& x, std::size_t i) const {
    return {x.data() + i * stride_, d_};
}
std::span<const double> FlatProblem::user(const Vec& x, std::size_t i) const {
    return {x.data() + i * stride_, d_};
}
std::span<double> FlatProblem::items(Vec& x, std::size_t i) const {
    return {x.data() + i * stride_ + d_, d_ * m_};
}
std::span<const double> FlatProblem::items(const Vec& x, std::size_t i) const {
    return {x.data() + i * stride_ + d_, d_ * m_};
}

Mat FlatProblem::average(const Vec& x) const {
    Mat avg(d_, m_);
    for (std::size_t i = 0; i < n_; ++i)
        kern::add(avg.data(), items(x, i).data(), d_ * m_);
    kern::scal(1.0 / static_cast<double>(n_), avg.data(), avg.size());
    return avg;
}

double FlatProblem::f(const Vec& x) const {
    double total = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
        auto u = user(x, i);
        const double* V = items(x, i).data();
        const auto& row = data_->rows[i];
        for (std::size_t k = 0; k < row.size(); ++k) {
            double r = row.ratings[k] - kern::dot(u.data(), V + row.items[k] * d_, d_);
            total += r * r;
        }
        total += cfg_.lambda_u * kern::sq_norm(u.data(), d_);
    }
    return total;
}

double FlatProblem::psi(const Vec& x) const {
    Mat avg = average(x);
    double total = 0.0;
    for (std::size_t i = 0; i < n_; ++i)
        total += kern::sq_dist(items(x, i).data(), avg.data(), d_ * m_);
    return 0.5 * total;
}

double FlatProblem::F(const Vec& x) const { return f(x) + cfg_.lambda * psi(x); }

Vec FlatProblem::grad_f(const Vec& x) const {
    Vec g(dim(), 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
        auto u = user(x, i);
        const double* V = items(x, i).data();
        double* gu = user(g, i).data();
        double* gV = items(g, i).data();
        const auto& row = data_->rows[i];
        for (std::size_t k = 0; k < row.size(); ++k) {
            const double* col = V + row.items[k] * d_;
            double r = row.ratings[k] - kern::dot(u.data(), col, d_);
            kern::axpy(-2.0 * r, col, gu, d_);
            kern::axpy(-2.0 * r, u.data(), gV + row.items[k] * d_, d_);
        }
        kern::axpy(2.0 * cfg_.lambda_u, u.data(), gu, d_);
    }
    return g;
}

Vec FlatProblem::grad_psi(const Vec& x) const {
    // exact joint gradient: the terms through the average cancel in the sum,
    // leaving block i = V_i - avg
    Mat avg = average(x);
    Vec g(dim(), 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
        double* gV = items(g, i).data();
        const double* V = items(x, i).data();
        for (std::size_t k = 0; k < d_ * m_; ++k) gV[k] = V[k] - avg.data()[k];
    }
    return g;
}

Vec FlatProblem::grad_F(const Vec& x) const {
    Vec g = grad_f(x);
    Vec gp = grad_psi(x);
    kern::axpy(cfg_.lambda, gp.data(), g.data(), g.size());
    return g;
}

Vec FlatProblem::random_point(double user_bound, double item_bound,
                              std::uint64_t seed) const {
    Rng rng(derive_seed(seed, stream::sample));
    Vec x(dim());
    double ua = user_bound / std::sqrt(static_cast<double>(d_));
    double va = item_bound / std::sqrt(static_cast<double>(d_ * m_));
    for (std::size_t i = 0; i < n_; ++i) {
        for (double& v : user(x, i)) v = rng.uniform(-ua, ua);
        for (double& v : items(x, i)) v = rng.uniform(-va, va);
    }
    return x;
}

Vec FlatProblem::from_models(std::span<const LocalModel> models) const {
    Vec x(dim());
    for (std::size_t i = 0; i < n_; ++i) {
        std::copy(models[i].user_vec.begin(), models[i].user_vec.end(),
                  user(x, i).begin());
        auto flat = models[i].item_mat.flat();
        std::copy(flat.begin(), flat.end(), items(x, i).begin());
    }
    return x;
}

std::vector<LocalModel> FlatProblem::to_models(const Vec& x) const {
    std::vector<LocalModel> models(n_);
    for (std::size_t i = 0; i < n_; ++i) {
        auto u = user(x, i);
        models[i].user_vec.assign(u.begin(), u.end());
        models[i].item_mat = Mat(d_, m_);
        auto v = items(x, i);
        std::copy(v.begin(), v.end(), models[i].item_mat.flat().begin());
    }
    return models;
}

void FlatProblem::canonicalize_sign(Vec& x) const {
    Mat avg = average(x);
    double sum = 0.0;
    for (double v : avg.flat()) sum += v;
    if (sum < 0.0) kern::scal(-1.0, x.data(), x.size());
}

OptimumResult reference_optimum(const FlatProblem& prob, const Vec& x0, double tol,
                                long long max_iters) {
    if (x0.size() != prob.dim()) throw ShapeError("reference_optimum: bad start size");
    OptimumResult res;
    res.x = x0;
    double fx = prob.F(res.x);
    double t = 1.0;
    Vec trial(prob.dim());
    for (res.iters = 0; res.iters < max_iters; ++res.iters) {
        Vec g = prob.grad_F(res.x);
        double gn2 = kern::sq_norm(g.data(), g.size());
        res.grad_norm = std::sqrt(gn2);
        if (res.grad_norm <= tol) {
            res.converged = true;
            break;
        }
        // Armijo backtracking, warm-started from the previous accepted step
        t = std::min(t * 2.0, 1.0);
        double f_trial;
        while (true) {
            trial = res.x;
            kern::axpy(-t, g.data(), trial.data(), trial.size());
            f_trial = prob.F(trial);
            if (f_trial <= fx - 1e-4 * t * gn2) break;
            t *= 0.5;
            if (t < 1e-18)
                throw std::runtime_error("reference_optimum: line search collapsed");
        }
        res.x.swap(trial);
        fx = f_trial;
    }
    if (!res.converged)
        throw std::runtime_error(
            "reference_optimum did not reach tolerance; instance may be below "
            "the convexity threshold");
    prob.canonicalize_sign(res.x);
    res.F_value = prob.F(res.x);
    return res;
}

double rating_bound(const RatingsDataset& data) {
    double worst = 0.0;
    for (const auto& row : data.rows) {
        double s = kern::sq_norm(row.ratings.data(), row.ratings.size());
        worst = std::max(worst, s);
    }
    return std::sqrt(worst);
}

ParameterBounds measure_bounds(const FlatProblem& prob, const Vec& x) {
    ParameterBounds b;
    b.M_r = rating_bound(prob.data());
    for (std::size_t i = 0; i < prob.n(); ++i) {
        b.M_u = std::max(b.M_u, std::sqrt(kern::sq_norm(prob.user(x, i).data(), prob.d())));
        b.M_v = std::max(b.M_v,
                         std::sqrt(kern::sq_norm(prob.items(x, i).data(),
                                                 prob.d() * prob.m())));
    }
    return b;
}

double estimate_L(const FlatProblem& prob, const ParameterBounds& bounds,
                  int sample_count, std::uint64_t seed) {
    if (sample_count < 2) throw ConfigError("estimate_L needs at least 2 samples");
    std::vector<Vec> points;
    points.reserve(sample_count);
    for (int s = 0; s < sample_count; ++s)
        points.push_back(prob.random_point(bounds.M_u, bounds.M_v,
                                           derive_seed(seed, stream::sample, s)));
    std::vector<Vec> grads;
    grads.reserve(sample_count);
    for (const auto& pt : points) grads.push_back(prob.grad_f(pt));

    double best = 0.0;
    for (int a = 0; a < sample_count; ++a) {
        for (int b = a + 1; b < sample_count; ++b) {
            double dx = kern::sq_dist(points[a].data(), points[b].data(), points[a].size());
            if (dx < 1e-24) continue;  // duplicated sample points are skipped
            double dg = kern::sq_dist(grads[a].data(), grads[b].data(), grads[a].size());
            best = std::max(best, std::sqrt(dg / dx));
        }
    }
    return best;
}

double estimate_mu(const FlatProblem& prob, const Vec& x, int directions, double h,
                   std::uint64_t seed) {
    Rng rng(derive_seed(seed, stream::sample, 0x6d75));
    std::size_t dim = prob.dim();
    double mu = std::numeric_limits<double>::infinity();
    Vec dir(dim), plus(dim), minus(dim);
    auto quotient = [&](const Vec& direction) {
        plus = x;
        kern::axpy(h, direction.data(), plus.data(), dim);
        minus = x;
        kern::axpy(-h, direction.data(), minus.data(), dim);
        Vec gp = prob.grad_F(plus);
        Vec gm = prob.grad_F(minus);
        kern::axpy(-1.0, gm.data(), gp.data(), dim);
        return kern::dot(direction.data(), gp.data(), dim) / (2.0 * h);
    };
    // coordinate axes first, then random unit directions
    for (std::size_t c = 0; c < dim && c < static_cast<std::size_t>(directions); ++c) {
        std::fill(dir.begin(), dir.end(), 0.0);
        dir[c] = 1.0;
        mu = std::min(mu, quotient(dir));
    }
    for (int s = 0; s < directions; ++s) {
        for (double& v : dir) v = rng.normal();
        double norm = std::sqrt(kern::sq_norm(dir.data(), dim));
        if (norm < 1e-12) continue;
        kern::scal(1.0 / norm, dir.data(), dim);
        mu = std::min(mu, quotient(dir));
    }
    return mu;
}

double convexity_threshold(double M_r, double M_u, double lambda_u) {
    if (!(lambda_u > 0.0))
        throw ConfigError("convexity threshold needs lambda_u > 0");
    return 2.0 * M_r * M_r / lambda_u + 6.0 * M_u * M_u;
}

double script_L(double L, double lambda, double p) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("script_L needs p in (0,1)");
    return std::max(L / (1.0 - p), lambda / p);
}

RateFit check_linear_rate(std::span<const double> sq_dist, double floor,
                          double transient_frac) {
    if (sq_dist.size() < 10)
        throw ConfigError("check_linear_rate: trajectory shorter than 10 points");
    std::size_t start = static_cast<std::size_t>(
        std::ceil(transient_frac * static_cast<double>(sq_dist.size())));
    std::vector<double> ks, ys;
    for (std::size_t k = start; k < sq_dist.size(); ++k) {
        if (sq_dist[k] <= floor) break;  // floating-point floor reached
        ks.push_back(static_cast<double>(k));
        ys.push_back(std::log(sq_dist[k]));
    }
    if (ks.size() < 10)
        throw ConfigError("check_linear_rate: fewer than 10 usable points after trim");
    double n = static_cast<double>(ks.size());
    double mk = std::accumulate(ks.begin(), ks.end(), 0.0) / n;
    double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        double dk = ks[i] - mk, dy = ys[i] - my;
        sxx += dk * dk;
        sxy += dk * dy;
        syy += dy * dy;
    }
    RateFit fit;
    fit.points = ks.size();
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mk;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        double pred = fit.intercept + fit.slope * ks[i];
        ss_res += (ys[i] - pred) * (ys[i] - pred);
    }
    fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    return fit;
}

double sigma_squared(const FlatProblem& prob, const Vec& x_star) {
    const TrainConfig& cfg = prob.cfg();
    if (!(cfg.p > 0.0 && cfg.p < 1.0)) throw ConfigError("sigma^2 needs p in (0,1)");
    Vec gf = prob.grad_f(x_star);
    Mat avg = prob.average(x_star);
    double total = 0.0;
    for (std::size_t i = 0; i < prob.n(); ++i) {
        double gf_i = kern::sq_norm(prob.user(gf, i).data(), prob.d()) +
                      kern::sq_norm(prob.items(gf, i).data(), prob.d() * prob.m());
        double psi_i =
            kern::sq_dist(prob.items(x_star, i).data(), avg.data(), prob.d() * prob.m());
        total += gf_i / (1.0 - cfg.p) + cfg.lambda * cfg.lambda * psi_i / cfg.p;
    }
    return total;
}

SmoothnessCheck check_expected_smoothness(const FlatProblem& prob, const Vec& x,
                                          const Vec& x_star, double script_L_value,
                                          int draws, std::uint64_t seed) {
    const TrainConfig& cfg = prob.cfg();
    double p = cfg.p;
    double inv_task = 1.0 / (1.0 - p), inv_reg = 1.0 / p;

    Vec gf = prob.grad_f(x), gp = prob.grad_psi(x);
    Vec gf_s = prob.grad_f(x_star), gp_s = prob.grad_psi(x_star);
    // branch values of |G(x) - G(x*)|^2 with the draw coupled across both
    kern::scal(cfg.lambda, gp.data(), gp.size());
    kern::scal(cfg.lambda, gp_s.data(), gp_s.size());
    double diff_task = kern::sq_dist(gf.data(), gf_s.data(), gf.size()) * inv_task * inv_task;
    double diff_reg = kern::sq_dist(gp.data(), gp_s.data(), gp.size()) * inv_reg * inv_reg;
    double norm_task = kern::sq_norm(gf.data(), gf.size()) * inv_task * inv_task;
    double norm_reg = kern::sq_norm(gp.data(), gp.size()) * inv_reg * inv_reg;

    Rng rng(derive_seed(seed, stream::sample, 0x736d));
    double sum1 = 0.0, sumsq1 = 0.0, sum2 = 0.0, sumsq2 = 0.0;
    for (int t = 0; t < draws; ++t) {
        bool reg = rng.bernoulli(p);
        double v1 = reg ? diff_reg : diff_task;
        double v2 = reg ? norm_reg : norm_task;
        sum1 += v1;
        sumsq1 += v1 * v1;
        sum2 += v2;
        sumsq2 += v2 * v2;
    }
    double n = static_cast<double>(draws);
    SmoothnessCheck chk;
    chk.sigma2 = sigma_squared(prob, x_star);
    double gap = prob.F(x) - prob.F(x_star);
    chk.lhs1 = sum1 / n;
    chk.rhs1 = 2.0 * script_L_value * gap;
    chk.se1 = std::sqrt(std::max(0.0, sumsq1 / n - chk.lhs1 * chk.lhs1) / n);
    chk.pass1 = chk.lhs1 <= chk.rhs1 + 3.0 * chk.se1 + 1e-12;
    chk.lhs2 = sum2 / n;
    chk.rhs2 = 4.0 * script_L_value * gap + 2.0 * chk.sigma2;
    chk.se2 = std::sqrt(std::max(0.0, sumsq2 / n - chk.lhs2 * chk.lhs2) / n);
    chk.pass2 = chk.lhs2 <= chk.rhs2 + 3.0 * chk.se2 + 1e-12;
    return chk;
}

CommStats comm_schedule_stats(const CommLog& log, double p) {
    if (log.zeta_seq.empty())
        throw ConfigError("comm_schedule_stats needs an RFRecF log with zeta draws");
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("p must be in (0,1)");
    CommStats st;
    st.iters = static_cast<long long>(log.zeta_seq.size());
    st.events = log.zeta_transitions();
    st.expected_rate = 2.0 * p * (1.0 - p);
    st.empirical_rate = static_cast<double>(st.events) / static_cast<double>(st.iters);
    // X_k = 1{zeta_{k-1} != zeta_k} is a 1-dependent sequence: adjacent
    // indicators share a draw, so the variance uses the exact lag-1 term
    double q = 1.0 - p;
    double rate = st.expected_rate;
    double var = rate * (1.0 - rate);
    double cov = p * q - 4.0 * p * p * q * q;
    double t = static_cast<double>(st.iters);
    double total_var = t * var + 2.0 * (t - 1.0) * cov;
    st.z = (static_cast<double>(st.events) - t * rate) / std::sqrt(total_var);
    return st;
}

void write_report_csv(std::span<const CheckRecord> records, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot write " + path);
    std::fprintf(f, "check,lhs,rhs,margin,pass\n");
    for (const auto& r : records)
        std::fprintf(f, "%s,%.17g,%.17g,%.17g,%d\n", r.name.c_str(), r.lhs, r.rhs,
                     r.margin, r.pass ? 1 : 0);
    std::fclose(f);
}

}  // namespace rfrec::theory
