#include "rfrec/privacy.hpp"

#include "rfrec/errors.hpp"
#include "rfrec/kernels.hpp"

namespace rfrec {

void perturb_into(const Mat& item_mat, const PrivacyConfig& cfg, Rng& rng, Mat& out) {
    cfg.validate();
    if (!kern::all_finite(item_mat.data(), item_mat.size()))
        throw std::invalid_argument("perturb: non-finite entries in input");
    if (!out.same_shape(item_mat)) out = Mat(item_mat.rows(), item_mat.cols());
    kern::clamp(item_mat.data(), -cfg.delta, cfg.delta, out.data(), item_mat.size());
    if (cfg.scale > 0.0) {
        double* o = out.data();
        for (std::size_t i = 0; i < out.size(); ++i) o[i] += rng.laplace(cfg.scale);
    }
}

Mat perturb(const Mat& item_mat, const PrivacyConfig& cfg, Rng& rng) {
    Mat out;
    perturb_into(item_mat, cfg, rng, out);
    return out;
}

}  // namespace rfrec
