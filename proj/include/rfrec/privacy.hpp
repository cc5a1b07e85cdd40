#pragma once

#include "rfrec/matrix.hpp"
#include "rfrec/model.hpp"
#include "rfrec/rng.hpp"

namespace rfrec {

// Clip-and-Laplace upload mechanism: every entry is clamped to
// [-delta, delta], then i.i.d. Laplace(0, scale) noise is added.
// scale == 0 is the noise-off switch (clamp only). Per-entry budget is
// PrivacyConfig::budget() = 2*delta/scale.
//
// Noise is drawn fresh per call in entry order from `rng`, so a fixed
// per-client stream makes uploads deterministic under any threading.
void perturb_into(const Mat& item_mat, const PrivacyConfig& cfg, Rng& rng, Mat& out);

Mat perturb(const Mat& item_mat, const PrivacyConfig& cfg, Rng& rng);

}  // namespace rfrec
