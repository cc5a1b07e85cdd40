#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rfrec/comm.hpp"
#include "rfrec/dataset.hpp"
#include "rfrec/matrix.hpp"
#include "rfrec/model.hpp"

namespace rfrec::theory {

// The joint objective F = f + lambda*psi over the stacked parameter vector
// x = [u_0, vec(V_0), u_1, vec(V_1), ...]. Desk-scale only: everything here
// materializes dense gradients of dimension n*(d + d*m).
class FlatProblem {
public:
    FlatProblem(const RatingsDataset& data, const TrainConfig& cfg);

    std::size_t n() const { return n_; }
    std::size_t m() const { return m_; }
    std::size_t d() const { return d_; }
    std::size_t dim() const { return n_ * stride_; }
    const TrainConfig& cfg() const { return cfg_; }
    const RatingsDataset& data() const { return *data_; }

    std::span<double> user(Vec& x, std::size_t i) const;
    std::span<const double> user(const Vec& x, std::size_t i) const;
    std::span<double> items(Vec& x, std::size_t i) const;
    std::span<const double> items(const Vec& x, std::size_t i) const;

    Mat average(const Vec& x) const;  // mean of the item blocks

    double f(const Vec& x) const;
    double psi(const Vec& x) const;
    double F(const Vec& x) const;

    Vec grad_f(const Vec& x) const;
    Vec grad_psi(const Vec& x) const;  // exact joint gradient: block i is V_i - avg
    Vec grad_F(const Vec& x) const;

    Vec random_point(double user_bound, double item_bound, std::uint64_t seed) const;
    Vec from_models(std::span<const LocalModel> models) const;
    std::vector<LocalModel> to_models(const Vec& x) const;

    // flip the global sign if the average's entry sum is negative; F is
    // invariant under x -> -x, so this picks one of the two mirror optima
    void canonicalize_sign(Vec& x) const;

private:
    const RatingsDataset* data_;
    TrainConfig cfg_;
    std::size_t n_, m_, d_, stride_;
};

struct OptimumResult {
    Vec x;
    double F_value = 0.0;
    double grad_norm = 0.0;
    long long iters = 0;
    bool converged = false;
};

// Full-gradient descent with backtracking line search until |grad F| <= tol.
// Throws on non-convergence (instance likely below the convexity threshold).
OptimumResult reference_optimum(const FlatProblem& prob, const Vec& x0, double tol,
                                long long max_iters = 200000);

struct ParameterBounds {
    double M_u = 1.0;  // bound on |u_i|
    double M_v = 1.0;  // bound on |V_i|_F
    double M_r = 0.0;  // max_i |R_i| over observed entries (from the data)
};

ParameterBounds measure_bounds(const FlatProblem& prob, const Vec& x);
double rating_bound(const RatingsDataset& data);  // max_i |R_i|

// lower estimate of the task smoothness constant: max over sampled pairs of
// |grad f(x) - grad f(y)| / |x - y|, points sampled inside the bounds box.
// Monotone in sample_count for a fixed seed.
double estimate_L(const FlatProblem& prob, const ParameterBounds& bounds,
                  int sample_count, std::uint64_t seed);

// minimum finite-difference Rayleigh quotient of grad F along random unit
// directions at x (plus coordinate directions)
double estimate_mu(const FlatProblem& prob, const Vec& x, int directions, double h,
                   std::uint64_t seed);

// lambda threshold of the strong-convexity condition: 2*M_r^2/lambda_u + 6*M_u^2
double convexity_threshold(double M_r, double M_u, double lambda_u);

double script_L(double L, double lambda, double p);  // max{L/(1-p), lambda/p}

struct TheoryEstimates {
    double L_hat = 0.0;
    double mu_hat = 0.0;
    double script_L = 0.0;
    double sigma2_hat = 0.0;
    ParameterBounds bounds;
    double convexity_threshold = 0.0;
};

struct RateFit {
    double slope = 0.0;      // of log squared distance vs iteration
    double intercept = 0.0;
    double r2 = 0.0;
    std::size_t points = 0;
};

// least-squares line through log(sq_dist) vs k, after discarding the leading
// transient fraction and any tail below the floating-point floor
RateFit check_linear_rate(std::span<const double> sq_dist, double floor = 1e-10,
                          double transient_frac = 0.1);

// sigma^2 = E|G(x*)|^2 of the two-branch stochastic gradient at the optimum
double sigma_squared(const FlatProblem& prob, const Vec& x_star);

struct SmoothnessCheck {
    double lhs1 = 0.0, rhs1 = 0.0, se1 = 0.0;  // E|G(x)-G(x*)|^2 <= 2*scriptL*(F(x)-F*)
    double lhs2 = 0.0, rhs2 = 0.0, se2 = 0.0;  // E|G(x)|^2 <= 4*scriptL*(F(x)-F*) + 2*sigma^2
    bool pass1 = false, pass2 = false;
    double sigma2 = 0.0;
};

// Monte-Carlo check of both expected-smoothness bounds with coupled branch
// draws; passes when lhs <= rhs + 3 standard errors
SmoothnessCheck check_expected_smoothness(const FlatProblem& prob, const Vec& x,
                                          const Vec& x_star, double script_L_value,
                                          int draws, std::uint64_t seed);

struct CommStats {
    double empirical_rate = 0.0;
    double expected_rate = 0.0;  // 2p(1-p)
    double z = 0.0;              // transition-chain variance, not i.i.d.
    long long iters = 0;
    long long events = 0;
};

// communication-event frequency of an RFRecF log vs its expectation;
// throws if the log carries no zeta sequence (wrong trainer kind)
CommStats comm_schedule_stats(const CommLog& log, double p);

// FD Rayleigh quotient dir' * Hessian(F) * dir at x, for a unit direction
double rayleigh_quotient(const FlatProblem& prob, const Vec& x, const Vec& unit_dir,
                         double h);

// Standard strongly-convex desk instance shared by the verification battery
// and the acceptance suite: rank-1 planted ratings small enough that the
// default penalties put lambda above the convexity threshold, d = 1 so the
// optimum is unique once the sign is canonicalized.
struct ConvexDesk {
    std::shared_ptr<RatingsDataset> data;
    TrainConfig cfg;  // alpha preset to 1/(L_hat + lambda)
    TheoryEstimates est;
    Vec x_star;
    FlatProblem problem() const { return FlatProblem(*data, cfg); }
};

ConvexDesk make_convex_desk(std::uint64_t seed);

// Records squared distance of the live trainer state to a reference point
// and its mirror image (F is sign-symmetric); best() returns the series of
// the mirror the trajectory actually converged to.
struct TrajectoryProbe {
    Vec ref, ref_neg;
    std::size_t d = 0;
    std::vector<double> to_ref, to_neg;

    TrajectoryProbe(const FlatProblem& prob, const Vec& reference);
    void observe(std::span<const LocalModel> models);
    std::span<const double> best() const;
};

struct CheckRecord {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    double margin = 0.0;
    bool pass = false;
};

// the full desk-scale verification battery behind `rfrec verify-theory`
std::vector<CheckRecord> run_all_checks(std::uint64_t seed, int workers = 0);

void write_report_csv(std::span<const CheckRecord> records, const std::string& path);

}  // namespace rfrec::theory
