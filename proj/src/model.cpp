#include "rfrec/model.hpp"

#include <algorithm>
#include <cmath>

#include "rfrec/errors.hpp"
#include "rfrec/kernels.hpp"

namespace rfrec {

void PrivacyConfig::validate() const {
    if (!(delta > 0.0)) throw ConfigError("privacy delta must be positive");
    if (!(scale >= 0.0)) throw ConfigError("privacy scale must be nonnegative");
}

double PrivacyConfig::budget() const {
    validate();
    if (scale == 0.0) throw ConfigError("privacy budget undefined at scale 0");
    return 2.0 * delta / scale;
}

void TrainConfig::validate(bool rfrecf) const {
    if (d <= 0) throw ConfigError("d must be positive");
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (lambda_u < 0.0) throw ConfigError("lambda_u must be nonnegative");
    if (max_iters < 0) throw ConfigError("max_iters must be nonnegative");
    if (!(stop_eps > 0.0)) throw ConfigError("stop_eps must be positive");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ConfigError("dropout_rate must be in [0,1)");
    if (rfrecf && !(p > 0.0 && p < 1.0))
        throw ConfigError("p must be strictly inside (0,1) for RFRecF");
    if (privacy) privacy->validate();
}

namespace {

void require_model_row(const LocalModel& model, const RatingRow& row) {
    if (model.user_vec.size() != model.item_mat.rows())
        throw ShapeError("user_vec length != item_mat rows");
    if (row.empty())
        throw DegenerateClientError("client has no observed ratings");
    if (!row.items.empty() &&
        static_cast<std::size_t>(row.items.back()) >= model.item_mat.cols())
        throw ShapeError("observed item index outside item_mat");
}

}  // namespace

double local_loss(const LocalModel& model, const RatingRow& row, double lambda_u) {
    require_model_row(model, row);
    std::size_t d = model.user_vec.size();
    double loss = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k) {
        double r = row.ratings[k] -
                   kern::dot(model.user_vec.data(), model.item_mat.col(row.items[k]), d);
        loss += r * r;
    }
    loss += lambda_u * kern::sq_norm(model.user_vec.data(), d);
    return loss;
}

double regularizer(std::span<const LocalModel> models, const GlobalState& global) {
    double sum = 0.0;
    for (const auto& m : models) {
        require_same_shape(m.item_mat, global.avg_item_mat, "regularizer shape mismatch");
        sum += kern::sq_dist(m.item_mat.data(), global.avg_item_mat.data(),
                             m.item_mat.size());
    }
    return 0.5 * sum;
}

void residuals(const LocalModel& model, const RatingRow& row, Vec& out) {
    std::size_t d = model.user_vec.size();
    out.resize(row.size());
    for (std::size_t k = 0; k < row.size(); ++k)
        out[k] = row.ratings[k] -
                 kern::dot(model.user_vec.data(), model.item_mat.col(row.items[k]), d);
}

FGrad grad_f(const LocalModel& model, const RatingRow& row, double lambda_u) {
    require_model_row(model, row);
    std::size_t d = model.user_vec.size();
    FGrad g;
    g.du.assign(d, 0.0);
    g.dV = Mat(d, model.item_mat.cols());
    Vec resid;
    residuals(model, row, resid);
    for (std::size_t k = 0; k < row.size(); ++k) {
        kern::axpy(-2.0 * resid[k], model.item_mat.col(row.items[k]), g.du.data(), d);
        kern::axpy(-2.0 * resid[k], model.user_vec.data(), g.dV.col(row.items[k]), d);
    }
    kern::axpy(2.0 * lambda_u, model.user_vec.data(), g.du.data(), d);
    return g;
}

Mat grad_psi(const LocalModel& model, const GlobalState& global) {
    require_same_shape(model.item_mat, global.avg_item_mat, "grad_psi shape mismatch");
    Mat g = model.item_mat;
    kern::axpy(-1.0, global.avg_item_mat.data(), g.data(), g.size());
    return g;
}

GlobalState aggregate(std::span<const Mat* const> item_mats) {
    if (item_mats.empty())
        throw DegenerateClientError("aggregate: no participants");
    GlobalState out;
    out.avg_item_mat = *item_mats.front();
    for (std::size_t i = 1; i < item_mats.size(); ++i) {
        require_same_shape(*item_mats[i], out.avg_item_mat, "aggregate shape mismatch");
        kern::add(out.avg_item_mat.data(), item_mats[i]->data(), out.avg_item_mat.size());
    }
    kern::scal(1.0 / static_cast<double>(item_mats.size()), out.avg_item_mat.data(),
               out.avg_item_mat.size());
    return out;
}

GlobalState aggregate(std::span<const Mat> item_mats) {
    std::vector<const Mat*> ptrs;
    ptrs.reserve(item_mats.size());
    for (const auto& m : item_mats) ptrs.push_back(&m);
    return aggregate(std::span<const Mat* const>(ptrs));
}

double predict(std::span<const double> user_vec, std::span<const double> item_col,
               std::optional<std::pair<double, double>> bounds) {
    if (user_vec.size() != item_col.size())
        throw ShapeError("predict: length mismatch");
    double v = kern::dot(user_vec.data(), item_col.data(), user_vec.size());
    if (bounds) v = std::clamp(v, bounds->first, bounds->second);
    return v;
}

void task_user_grad(const LocalModel& model, const RatingRow& row, const Vec& resid,
                    double lambda_u, Vec& grad_out) {
    std::size_t d = model.user_vec.size();
    grad_out.assign(d, 0.0);
    for (std::size_t k = 0; k < row.size(); ++k)
        kern::axpy(-2.0 * resid[k], model.item_mat.col(row.items[k]), grad_out.data(), d);
    kern::axpy(2.0 * lambda_u, model.user_vec.data(), grad_out.data(), d);
}

void apply_item_task_step(LocalModel& model, const RatingRow& row, const Vec& resid,
                          double step) {
    std::size_t d = model.user_vec.size();
    for (std::size_t k = 0; k < row.size(); ++k)
        kern::axpy(2.0 * step * resid[k], model.user_vec.data(),
                   model.item_mat.col(row.items[k]), d);
}

}  // namespace rfrec
