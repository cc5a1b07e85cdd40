#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rfrec/matrix.hpp"

namespace rfrec {

// One user's observed ratings; item indices strictly increasing and unique.
struct RatingRow {
    std::vector<std::int32_t> items;
    std::vector<double> ratings;

    std::size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }
};

struct RatingsDataset {
    std::size_t n_users = 0;
    std::size_t n_items = 0;
    std::vector<RatingRow> rows;        // one per user, index = dense user id
    double rating_lo = 0.0, rating_hi = 0.0;
    double metric_scale = 1.0;          // maps model-space errors back to the
                                        // source rating scale (see normalize_ratings)
    std::string name;

    // original ids, indexed by dense id; empty for synthetic data
    std::vector<std::int64_t> user_ids;
    std::vector<std::int64_t> item_ids;

    std::size_t total_observations() const;
    void check_invariants() const;  // throws on violated index/bounds rules
};

// Column order and shape of a delimited ratings file.
struct TabularFormat {
    char delimiter = '\t';            // '\t', ',', ' ' (space also eats runs)
    int user_col = 0;
    int item_col = 1;
    int rating_col = 2;
    int skip_header = 0;              // leading lines to ignore
    std::optional<double> drop_above; // drop rows with rating > threshold
    std::string name = "dataset";
};

RatingsDataset load_tabular(const std::string& path, const TabularFormat& fmt);

// Affine ingestion transform r -> (r - lo)/(hi - lo) onto [0,1]. Benchmark
// ratings on their raw scale blow up the plain-gradient trainers (per-client
// curvature grows with sum r^2), so runs on real datasets normalize at load;
// MAE/RMSE are still reported on the source scale via metric_scale, which
// the affine map makes exact. Throws when the bounds are degenerate.
void normalize_ratings(RatingsDataset& data);

// internal text format: header "n m count lo hi", then "user item rating"
// per line with ratings printed at full precision (round-trips bit-exactly)
void save_internal(const RatingsDataset& data, const std::string& path);
RatingsDataset load_internal(const std::string& path);

struct SplitSpec {
    double test_fraction = 0.2;
    std::uint64_t seed = 0;
};

// Per-user random partition. Every user keeps at least one training rating;
// users can end up with an empty test row. Deterministic in (seed, user id).
std::pair<RatingsDataset, RatingsDataset> split(const RatingsDataset& data,
                                                const SplitSpec& spec);

struct EvalResult {
    double mae = 0.0;
    double rmse = 0.0;
    std::size_t count = 0;
};

// MAE/RMSE of r_hat = u_i . v_j over all test observations, with v_j taken
// from the shared item matrix; predictions clamped to the rating bounds iff
// clip is set. Throws on an empty test set.
EvalResult evaluate(const std::vector<Vec>& user_vecs, const Mat& item_mat,
                    const RatingsDataset& test, bool clip);

// Synthetic instance with ratings from a planted rank-`rank` model plus
// Gaussian noise; used by desk-scale tests and the theory checks.
struct PlantedSpec {
    std::size_t n_users = 4;
    std::size_t n_items = 6;
    std::size_t rank = 2;
    double density = 1.0;          // per-pair observation probability
    double factor_sd = 0.5;        // entries of the planted factors
    double noise_sd = 0.0;
    std::uint64_t seed = 1;
    std::string name = "planted";
};

RatingsDataset make_planted(const PlantedSpec& spec);

}  // namespace rfrec
