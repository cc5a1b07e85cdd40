#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rfrec/dataset.hpp"
#include "rfrec/matrix.hpp"

namespace rfrec {

// One client's parameters: its user vector and its private item matrix.
struct LocalModel {
    Vec user_vec;   // length d
    Mat item_mat;   // d x m
};

// Server-side average of the (possibly perturbed) client item matrices.
struct GlobalState {
    Mat avg_item_mat;  // d x m
};

struct PrivacyConfig {
    double delta = 0.2;   // clip threshold
    double scale = 0.04;  // Laplace scale; 0 disables the noise term

    void validate() const;
    double budget() const;  // 2*delta/scale
};

struct TrainConfig {
    int d = 20;
    double alpha = 0.05;
    double lambda = 10.0;
    double lambda_u = 0.1;
    double p = 0.5;                 // RFRecF branch probability
    long long max_iters = 100;
    double stop_eps = 1e-4;
    std::uint64_t seed = 1;
    double dropout_rate = 0.0;
    std::optional<PrivacyConfig> privacy;
    bool clip_predictions = true;

    double init_sd = 0.01;          // N(0, 1e-4) initialization

    void validate(bool rfrecf) const;
};

// task loss of one client restricted to its observed entries:
//   sum_j (r_ij - u.v_j)^2 + lambda_u * |u|^2
double local_loss(const LocalModel& model, const RatingRow& row, double lambda_u);

// consensus penalty 0.5 * sum_i |V_i - Vbar|_F^2
double regularizer(std::span<const LocalModel> models, const GlobalState& global);

struct FGrad {
    Vec du;   // length d
    Mat dV;   // d x m, zero on unobserved columns
};

// exact gradient of local_loss; dV column j is -2*(r_ij - u.v_j)*u for
// observed j and zero otherwise
FGrad grad_f(const LocalModel& model, const RatingRow& row, double lambda_u);

// gradient of the consensus penalty with the average held fixed: V_i - Vbar.
// (This also equals the exact joint gradient of the summed penalty: the
// terms through the average cancel when summed over clients.)
Mat grad_psi(const LocalModel& model, const GlobalState& global);

// entrywise mean; participants only under dropout. Throws on an empty list.
GlobalState aggregate(std::span<const Mat* const> item_mats);
GlobalState aggregate(std::span<const Mat> item_mats);

double predict(std::span<const double> user_vec, std::span<const double> item_col,
               std::optional<std::pair<double, double>> bounds);

// --- fused in-place steps used by the trainers ------------------------------
// Mathematically identical to assembling the dense gradients and applying one
// axpy, but touches only observed columns for the task part; equivalence with
// the dense route is property-tested.

// residuals r_ij - u.v_j over the observed columns of `model`
void residuals(const LocalModel& model, const RatingRow& row, Vec& out);

// task-loss gradient wrt u at the current (u, V); call before the item
// columns are stepped, both parts of the step read the pre-step parameters
void task_user_grad(const LocalModel& model, const RatingRow& row, const Vec& resid,
                    double lambda_u, Vec& grad_out);

// V columns j += 2*step*resid_j*u over observed j (task part of the V step)
void apply_item_task_step(LocalModel& model, const RatingRow& row, const Vec& resid,
                          double step);

}  // namespace rfrec
