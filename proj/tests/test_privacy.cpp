#include <doctest.h>

#include <cmath>

#include "rfrec/errors.hpp"
#include "rfrec/kernels.hpp"
#include "rfrec/privacy.hpp"

using namespace rfrec;

TEST_CASE("noise-off perturb with small entries is the identity") {
    Mat m(2, 3);
    Rng fill(3);
    for (auto& v : m.flat()) v = fill.uniform(-0.15, 0.15);
    Rng rng(1);
    Mat out = perturb(m, PrivacyConfig{0.2, 0.0}, rng);
    CHECK(out == m);
}

TEST_CASE("entries are clamped to the clip threshold before noise") {
    Mat m(1, 1);
    m(0, 0) = 0.9;
    Rng rng(1);
    Mat out = perturb(m, PrivacyConfig{0.2, 0.0}, rng);
    CHECK(out(0, 0) == 0.2);
    m(0, 0) = -3.5;
    out = perturb(m, PrivacyConfig{0.2, 0.0}, rng);
    CHECK(out(0, 0) == -0.2);
}

TEST_CASE("perturb output minus noise stays within the clip box") {
    // with noise off the output must lie inside [-delta, delta] for any input
    Rng fill(17), rng(18);
    Mat m(4, 5);
    for (auto& v : m.flat()) v = fill.uniform(-10.0, 10.0);
    Mat out = perturb(m, PrivacyConfig{0.35, 0.0}, rng);
    for (double v : out.flat()) {
        CHECK(v <= 0.35);
        CHECK(v >= -0.35);
    }
}

TEST_CASE("perturb rejects non-finite input") {
    Mat m(1, 2);
    m(0, 1) = std::numeric_limits<double>::quiet_NaN();
    Rng rng(1);
    CHECK_THROWS(perturb(m, PrivacyConfig{0.2, 0.1}, rng));
}

TEST_CASE("Laplace noise has zero mean and variance 2 s^2") {
    const double s = 0.05;
    const int draws = 10000;
    Mat m(3, 4);           // pooled across entries: 120k samples
    Rng fill(7);
    for (auto& v : m.flat()) v = fill.uniform(-0.1, 0.1);
    PrivacyConfig cfg{1.0, s};  // clip inactive at this threshold

    Rng rng(derive_seed(42, stream::noise, 0));
    double sum = 0.0, sumsq = 0.0;
    std::size_t count = 0;
    Mat out;
    for (int t = 0; t < draws; ++t) {
        perturb_into(m, cfg, rng, out);
        for (std::size_t k = 0; k < m.size(); ++k) {
            double noise = out.flat()[k] - m.flat()[k];
            sum += noise;
            sumsq += noise * noise;
            ++count;
        }
    }
    double mean = sum / static_cast<double>(count);
    double var = sumsq / static_cast<double>(count) - mean * mean;
    // mean within 3 standard errors of zero; sd of one draw is sqrt(2)*s
    double se_mean = std::sqrt(2.0) * s / std::sqrt(static_cast<double>(count));
    CHECK(std::abs(mean) <= 3.0 * se_mean);
    CHECK(std::abs(var - 2.0 * s * s) <= 0.05 * 2.0 * s * s);
}

TEST_CASE("averaging n perturbed uploads shrinks the noise variance to 2s^2/n") {
    const double s = 0.04;
    const std::size_t n = 8, trials = 4000;
    Mat base(2, 3);
    Rng fill(9);
    for (auto& v : base.flat()) v = fill.uniform(-0.2, 0.2);
    PrivacyConfig cfg{1.0, s};

    std::vector<Rng> rngs;
    for (std::size_t i = 0; i < n; ++i)
        rngs.emplace_back(derive_seed(7, stream::noise, i));

    double sum = 0.0, sumsq = 0.0;
    std::size_t count = 0;
    Mat acc(2, 3), scratch;
    for (std::size_t t = 0; t < trials; ++t) {
        std::fill(acc.flat().begin(), acc.flat().end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            perturb_into(base, cfg, rngs[i], scratch);
            kern::add(acc.data(), scratch.data(), acc.size());
        }
        kern::scal(1.0 / static_cast<double>(n), acc.data(), acc.size());
        for (std::size_t k = 0; k < base.size(); ++k) {
            double dev = acc.flat()[k] - base.flat()[k];
            sum += dev;
            sumsq += dev * dev;
            ++count;
        }
    }
    double mean = sum / static_cast<double>(count);
    double var = sumsq / static_cast<double>(count) - mean * mean;
    double want = 2.0 * s * s / static_cast<double>(n);
    CHECK(std::abs(var - want) <= 0.10 * want);
}

TEST_CASE("privacy budget arithmetic") {
    CHECK(PrivacyConfig{0.2, 0.04}.budget() == 10.0);
    CHECK(PrivacyConfig{0.2, 0.06}.budget() ==
          doctest::Approx(20.0 / 3.0).epsilon(1e-12));
    CHECK(PrivacyConfig{0.37, 0.37}.budget() == 2.0);
    CHECK_THROWS_AS((PrivacyConfig{0.2, 0.0}).budget(), ConfigError);
    CHECK_THROWS_AS((PrivacyConfig{-0.1, 0.1}).budget(), ConfigError);
}

TEST_CASE("budget is monotone: increasing in delta, decreasing in scale") {
    Rng rng(31);
    for (int t = 0; t < 50; ++t) {
        double delta = rng.uniform(0.01, 2.0);
        double scale = rng.uniform(0.01, 2.0);
        double bump = rng.uniform(0.001, 1.0);
        CHECK(PrivacyConfig{delta + bump, scale}.budget() >
              PrivacyConfig{delta, scale}.budget());
        CHECK(PrivacyConfig{delta, scale + bump}.budget() <
              PrivacyConfig{delta, scale}.budget());
    }
}

TEST_CASE("perturbation is deterministic under a fixed stream") {
    Mat m(3, 3);
    Rng fill(5);
    for (auto& v : m.flat()) v = fill.uniform(-1, 1);
    PrivacyConfig cfg{0.5, 0.1};
    Rng a(derive_seed(11, stream::noise, 2)), b(derive_seed(11, stream::noise, 2));
    CHECK(perturb(m, cfg, a) == perturb(m, cfg, b));
}
