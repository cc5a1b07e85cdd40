#include "rfrec/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "rfrec/errors.hpp"
#include "rfrec/kernels.hpp"
#include "rfrec/rng.hpp"

namespace rfrec {

std::size_t RatingsDataset::total_observations() const {
    std::size_t total = 0;
    for (const auto& row : rows) total += row.size();
    return total;
}

void RatingsDataset::check_invariants() const {
    if (rows.size() != n_users) throw ShapeError("row count != n_users");
    for (std::size_t u = 0; u < rows.size(); ++u) {
        const auto& row = rows[u];
        if (row.items.size() != row.ratings.size())
            throw ShapeError("item/rating length mismatch");
        for (std::size_t k = 0; k < row.items.size(); ++k) {
            if (row.items[k] < 0 || static_cast<std::size_t>(row.items[k]) >= n_items)
                throw ShapeError("item index out of range");
            if (k > 0 && row.items[k] <= row.items[k - 1])
                throw ShapeError("item indices not strictly increasing");
            if (row.ratings[k] < rating_lo || row.ratings[k] > rating_hi)
                throw ShapeError("rating outside declared bounds");
        }
    }
}

namespace {

struct Triple {
    std::int64_t user, item;
    double rating;
};

double parse_double(std::string_view s, std::size_t line_no) {
    // std::from_chars<double> handles plain and scientific forms
    double v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw IoError("malformed number '" + std::string(s) + "' at line " +
                      std::to_string(line_no));
    return v;
}

std::int64_t parse_int(std::string_view s, std::size_t line_no) {
    std::int64_t v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw IoError("malformed integer '" + std::string(s) + "' at line " +
                      std::to_string(line_no));
    return v;
}

std::vector<std::string_view> split_fields(std::string_view line, char delim) {
    std::vector<std::string_view> out;
    if (delim == ' ') {
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
            std::size_t j = i;
            while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
            if (j > i) out.push_back(line.substr(i, j - i));
            i = j;
        }
    } else {
        std::size_t start = 0;
        while (true) {
            std::size_t pos = line.find(delim, start);
            if (pos == std::string_view::npos) {
                out.push_back(line.substr(start));
                break;
            }
            out.push_back(line.substr(start, pos - start));
            start = pos + 1;
        }
    }
    return out;
}

RatingsDataset assemble(std::vector<Triple>&& triples, const std::string& name) {
    if (triples.empty()) throw IoError("no ratings in input: " + name);

    std::map<std::int64_t, std::int32_t> user_map, item_map;
    for (const auto& t : triples) {
        user_map.emplace(t.user, 0);
        item_map.emplace(t.item, 0);
    }
    RatingsDataset data;
    data.name = name;
    data.user_ids.reserve(user_map.size());
    for (auto& [id, dense] : user_map) {
        dense = static_cast<std::int32_t>(data.user_ids.size());
        data.user_ids.push_back(id);
    }
    data.item_ids.reserve(item_map.size());
    for (auto& [id, dense] : item_map) {
        dense = static_cast<std::int32_t>(data.item_ids.size());
        data.item_ids.push_back(id);
    }
    data.n_users = data.user_ids.size();
    data.n_items = data.item_ids.size();
    data.rows.resize(data.n_users);

    data.rating_lo = std::numeric_limits<double>::infinity();
    data.rating_hi = -std::numeric_limits<double>::infinity();

    // gather per user, then sort by item and reject duplicates
    std::vector<std::vector<std::pair<std::int32_t, double>>> buckets(data.n_users);
    for (const auto& t : triples) {
        buckets[user_map[t.user]].push_back({item_map[t.item], t.rating});
        data.rating_lo = std::min(data.rating_lo, t.rating);
        data.rating_hi = std::max(data.rating_hi, t.rating);
    }
    for (std::size_t u = 0; u < buckets.size(); ++u) {
        auto& b = buckets[u];
        std::sort(b.begin(), b.end());
        auto& row = data.rows[u];
        row.items.reserve(b.size());
        row.ratings.reserve(b.size());
        for (std::size_t k = 0; k < b.size(); ++k) {
            if (k > 0 && b[k].first == b[k - 1].first)
                throw IoError("duplicate (user,item) pair in input: user id " +
                              std::to_string(data.user_ids[u]));
            row.items.push_back(b[k].first);
            row.ratings.push_back(b[k].second);
        }
    }
    data.check_invariants();
    return data;
}

}  // namespace

RatingsDataset load_tabular(const std::string& path, const TabularFormat& fmt) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);

    int needed = std::max({fmt.user_col, fmt.item_col, fmt.rating_col}) + 1;
    std::vector<Triple> triples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no <= static_cast<std::size_t>(fmt.skip_header)) continue;
        if (line.empty()) continue;
        auto fields = split_fields(line, fmt.delimiter);
        if (fields.size() < static_cast<std::size_t>(needed))
            throw IoError("line " + std::to_string(line_no) + ": expected at least " +
                          std::to_string(needed) + " fields, got " +
                          std::to_string(fields.size()));
        Triple t;
        t.user = parse_int(fields[fmt.user_col], line_no);
        t.item = parse_int(fields[fmt.item_col], line_no);
        t.rating = parse_double(fields[fmt.rating_col], line_no);
        if (!std::isfinite(t.rating))
            throw IoError("non-finite rating at line " + std::to_string(line_no));
        if (fmt.drop_above && t.rating > *fmt.drop_above) continue;
        triples.push_back(t);
    }
    if (line_no == 0) throw IoError("empty file: " + path);
    return assemble(std::move(triples), fmt.name);
}

void normalize_ratings(RatingsDataset& data) {
    double lo = data.rating_lo, hi = data.rating_hi;
    if (!(hi > lo))
        throw ConfigError("normalize_ratings: degenerate rating bounds");
    double inv = 1.0 / (hi - lo);
    for (auto& row : data.rows)
        for (auto& r : row.ratings) r = (r - lo) * inv;
    data.rating_lo = 0.0;
    data.rating_hi = 1.0;
    data.metric_scale *= hi - lo;
}

void save_internal(const RatingsDataset& data, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot write " + path);
    std::fprintf(f, "%zu %zu %zu %.17g %.17g\n", data.n_users, data.n_items,
                 data.total_observations(), data.rating_lo, data.rating_hi);
    for (std::size_t u = 0; u < data.n_users; ++u) {
        const auto& row = data.rows[u];
        for (std::size_t k = 0; k < row.size(); ++k)
            std::fprintf(f, "%zu %d %.17g\n", u, row.items[k], row.ratings[k]);
    }
    std::fclose(f);
}

RatingsDataset load_internal(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::size_t n, m, count;
    double lo, hi;
    if (!(in >> n >> m >> count >> lo >> hi))
        throw IoError("malformed header in " + path);
    RatingsDataset data;
    data.n_users = n;
    data.n_items = m;
    data.rating_lo = lo;
    data.rating_hi = hi;
    data.name = path;
    data.rows.resize(n);
    std::size_t user;
    std::int32_t item;
    double rating;
    std::size_t seen = 0;
    while (in >> user >> item >> rating) {
        if (user >= n) throw IoError("user index out of range in " + path);
        data.rows[user].items.push_back(item);
        data.rows[user].ratings.push_back(rating);
        ++seen;
    }
    if (seen != count)
        throw IoError("expected " + std::to_string(count) + " observations, found " +
                      std::to_string(seen) + " in " + path);
    data.check_invariants();
    return data;
}

std::pair<RatingsDataset, RatingsDataset> split(const RatingsDataset& data,
                                                const SplitSpec& spec) {
    if (spec.test_fraction < 0.0 || spec.test_fraction >= 1.0)
        throw ConfigError("test_fraction must be in [0,1)");
    RatingsDataset train = data, test = data;
    train.name = data.name + "/train";
    test.name = data.name + "/test";
    for (auto& row : train.rows) row = {};
    for (auto& row : test.rows) row = {};

    for (std::size_t u = 0; u < data.n_users; ++u) {
        const auto& row = data.rows[u];
        std::size_t count = row.size();
        if (count == 0) continue;
        std::size_t want = static_cast<std::size_t>(
            std::floor(spec.test_fraction * static_cast<double>(count)));
        if (want >= count) want = count - 1;  // keep at least one train rating

        std::vector<std::size_t> order(count);
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(spec.seed, stream::split, u));
        for (std::size_t k = count; k > 1; --k) {
            std::size_t j = static_cast<std::size_t>(rng.next_u64() % k);
            std::swap(order[k - 1], order[j]);
        }
        std::vector<bool> in_test(count, false);
        for (std::size_t k = 0; k < want; ++k) in_test[order[k]] = true;
        for (std::size_t k = 0; k < count; ++k) {
            auto& dst = in_test[k] ? test.rows[u] : train.rows[u];
            dst.items.push_back(row.items[k]);
            dst.ratings.push_back(row.ratings[k]);
        }
    }
    return {std::move(train), std::move(test)};
}

EvalResult evaluate(const std::vector<Vec>& user_vecs, const Mat& item_mat,
                    const RatingsDataset& test, bool clip) {
    if (test.n_users != user_vecs.size())
        throw ShapeError("evaluate: user count mismatch");
    if (item_mat.cols() != test.n_items)
        throw ShapeError("evaluate: item count mismatch");
    std::size_t d = item_mat.rows();
    double abs_sum = 0.0, sq_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t u = 0; u < test.n_users; ++u) {
        const auto& row = test.rows[u];
        if (row.empty()) continue;
        if (user_vecs[u].size() != d) throw ShapeError("evaluate: user vector length");
        for (std::size_t k = 0; k < row.size(); ++k) {
            double pred = kern::dot(user_vecs[u].data(), item_mat.col(row.items[k]), d);
            if (clip) pred = std::clamp(pred, test.rating_lo, test.rating_hi);
            double err = row.ratings[k] - pred;
            abs_sum += std::abs(err);
            sq_sum += err * err;
            ++count;
        }
    }
    if (count == 0) throw DegenerateClientError("evaluate: empty test set");
    EvalResult r;
    r.count = count;
    r.mae = test.metric_scale * abs_sum / static_cast<double>(count);
    r.rmse = test.metric_scale * std::sqrt(sq_sum / static_cast<double>(count));
    if (r.rmse < r.mae - 1e-12)
        throw std::logic_error("RMSE < MAE: broken accumulation");
    return r;
}

RatingsDataset make_planted(const PlantedSpec& spec) {
    Rng rng(derive_seed(spec.seed, stream::synth));
    Mat users(spec.rank, spec.n_users), items(spec.rank, spec.n_items);
    for (auto& v : users.flat()) v = rng.normal(0.0, spec.factor_sd);
    for (auto& v : items.flat()) v = rng.normal(0.0, spec.factor_sd);

    RatingsDataset data;
    data.name = spec.name;
    data.n_users = spec.n_users;
    data.n_items = spec.n_items;
    data.rows.resize(spec.n_users);
    data.rating_lo = std::numeric_limits<double>::infinity();
    data.rating_hi = -std::numeric_limits<double>::infinity();
    for (std::size_t u = 0; u < spec.n_users; ++u) {
        for (std::size_t j = 0; j < spec.n_items; ++j) {
            if (spec.density < 1.0 && !rng.bernoulli(spec.density)) continue;
            double r = kern::dot(users.col(u), items.col(j), spec.rank);
            if (spec.noise_sd > 0.0) r += rng.normal(0.0, spec.noise_sd);
            data.rows[u].items.push_back(static_cast<std::int32_t>(j));
            data.rows[u].ratings.push_back(r);
            data.rating_lo = std::min(data.rating_lo, r);
            data.rating_hi = std::max(data.rating_hi, r);
        }
        if (data.rows[u].empty()) {
            // guarantee at least one observation per user
            std::int32_t j = static_cast<std::int32_t>(rng.next_u64() % spec.n_items);
            double r = kern::dot(users.col(u), items.col(j), spec.rank);
            data.rows[u].items.push_back(j);
            data.rows[u].ratings.push_back(r);
            data.rating_lo = std::min(data.rating_lo, r);
            data.rating_hi = std::max(data.rating_hi, r);
        }
    }
    data.check_invariants();
    return data;
}

}  // namespace rfrec
