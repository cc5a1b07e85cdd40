#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "rfrec/errors.hpp"
#include "rfrec/kernels.hpp"
#include "rfrec/model.hpp"
#include "test_paths.hpp"

using namespace rfrec;

namespace {

LocalModel make_model(std::size_t d, std::size_t m, std::vector<double> u,
                      std::vector<double> v_colmajor) {
    LocalModel model;
    model.user_vec = std::move(u);
    model.item_mat = Mat(d, m);
    std::copy(v_colmajor.begin(), v_colmajor.end(), model.item_mat.flat().begin());
    return model;
}

}  // namespace

TEST_CASE("local_loss: zero residuals and zero user vector give zero") {
    LocalModel model = make_model(2, 3, {0.0, 0.0}, {0.3, -0.1, 0.4, 0.2, -0.5, 0.9});
    RatingRow row{{0, 2}, {0.0, 0.0}};
    CHECK(local_loss(model, row, 0.1) == 0.0);
}

TEST_CASE("local_loss: worked scalar instance") {
    // d=1, u=[2], item columns [1, 3], ratings {0:1, 1:5}
    LocalModel model = make_model(1, 2, {2.0}, {1.0, 3.0});
    RatingRow row{{0, 1}, {1.0, 5.0}};
    // (1-2)^2 + (5-6)^2 + 0.1*4 = 2.4
    CHECK(local_loss(model, row, 0.1) == doctest::Approx(2.4).epsilon(1e-15));
}

TEST_CASE("local_loss matches an entry-by-entry oracle loop") {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        auto inst = oracle::random_instance(seed);
        double got = local_loss(inst.model, inst.row, 0.1);
        double want = oracle::naive_local_loss(inst.model, inst.row, 0.1);
        CHECK(got == doctest::Approx(want).epsilon(1e-10));
    }
}

TEST_CASE("local_loss error paths") {
    LocalModel model = make_model(2, 2, {1.0, 2.0}, {1, 2, 3, 4});
    RatingRow empty;
    CHECK_THROWS_AS(local_loss(model, empty, 0.1), DegenerateClientError);
    RatingRow out_of_range{{5}, {1.0}};
    CHECK_THROWS_AS(local_loss(model, out_of_range, 0.1), ShapeError);
}

TEST_CASE("regularizer: zero at consensus, worked 2-client instance, oracle loop") {
    GlobalState global;
    global.avg_item_mat = Mat(1, 1);
    global.avg_item_mat(0, 0) = 1.0;
    std::vector<LocalModel> models(2);
    models[0] = make_model(1, 1, {0.0}, {0.0});
    models[1] = make_model(1, 1, {0.0}, {2.0});
    // 0.5*((0-1)^2 + (2-1)^2) = 1
    CHECK(regularizer(models, global) == doctest::Approx(1.0).epsilon(1e-15));

    models[0].item_mat(0, 0) = 1.0;
    models[1].item_mat(0, 0) = 1.0;
    CHECK(regularizer(models, global) == 0.0);

    // random n=3 instance vs the naive double loop
    Rng rng(99);
    std::vector<LocalModel> rnd(3);
    Mat avg(3, 4);
    for (auto& v : avg.flat()) v = rng.uniform(-1, 1);
    for (auto& m : rnd) {
        m.user_vec.assign(3, 0.0);
        m.item_mat = Mat(3, 4);
        for (auto& v : m.item_mat.flat()) v = rng.uniform(-1, 1);
    }
    GlobalState g2{avg};
    CHECK(regularizer(rnd, g2) ==
          doctest::Approx(oracle::naive_regularizer(rnd, avg)).epsilon(1e-12));

    rnd[1].item_mat = Mat(2, 4);
    CHECK_THROWS_AS(regularizer(rnd, g2), ShapeError);
}

TEST_CASE("grad_f: stationary at a perfect fit with no penalty") {
    LocalModel model = make_model(2, 2, {1.0, 2.0}, {0.5, 0.25, -1.0, 0.75});
    RatingRow row{{0, 1}, {0.0, 0.0}};
    row.ratings[0] = 1.0 * 0.5 + 2.0 * 0.25;   // exact inner products
    row.ratings[1] = 1.0 * -1.0 + 2.0 * 0.75;
    FGrad g = grad_f(model, row, 0.0);
    for (double v : g.du) CHECK(v == 0.0);
    for (double v : g.dV.flat()) CHECK(v == 0.0);
}

TEST_CASE("grad_f: worked scalar instance") {
    LocalModel model = make_model(1, 2, {2.0}, {1.0, 3.0});
    RatingRow row{{0, 1}, {1.0, 5.0}};
    FGrad g = grad_f(model, row, 0.1);
    // du = -2((1-2)*1 + (5-6)*3) + 2*0.1*2 = 8.4
    CHECK(g.du[0] == doctest::Approx(8.4).epsilon(1e-15));
    // dV col j = -2*(r_j - u*v_j)*u = -2*(-1)*2 = 4 for both observed columns
    CHECK(g.dV(0, 0) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(g.dV(0, 1) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("grad_f and grad_psi match central finite differences on 100 instances") {
    const double h = 1e-5;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        auto inst = oracle::random_instance(seed, 4, 8);
        std::size_t d = inst.model.user_vec.size();
        std::size_t m = inst.model.item_mat.cols();

        FGrad g = grad_f(inst.model, inst.row, 0.1);

        // flat vector [u, vec(V)] -> loss
        auto loss_of = [&](const std::vector<double>& x) {
            LocalModel trial = inst.model;
            std::copy(x.begin(), x.begin() + d, trial.user_vec.begin());
            std::copy(x.begin() + d, x.end(), trial.item_mat.flat().begin());
            return local_loss(trial, inst.row, 0.1);
        };
        std::vector<double> x0(d + d * m);
        std::copy(inst.model.user_vec.begin(), inst.model.user_vec.end(), x0.begin());
        auto flat = inst.model.item_mat.flat();
        std::copy(flat.begin(), flat.end(), x0.begin() + d);

        std::vector<double> fd = oracle::central_diff(loss_of, x0, h);
        for (std::size_t c = 0; c < d; ++c)
            CHECK(oracle::rel_err(g.du[c], fd[c]) <= 1e-4);
        for (std::size_t c = 0; c < d * m; ++c)
            CHECK(oracle::rel_err(g.dV.flat()[c], fd[d + c]) <= 1e-4);

        // psi gradient with the average held fixed
        GlobalState global;
        global.avg_item_mat = Mat(d, m);
        Rng rng(seed * 31 + 7);
        for (auto& v : global.avg_item_mat.flat()) v = rng.uniform(-1, 1);
        Mat gp = grad_psi(inst.model, global);
        auto psi_of = [&](const std::vector<double>& vflat) {
            double s = 0.0;
            for (std::size_t c = 0; c < vflat.size(); ++c) {
                double diff = vflat[c] - global.avg_item_mat.flat()[c];
                s += diff * diff;
            }
            return 0.5 * s;
        };
        std::vector<double> v0(flat.begin(), flat.end());
        std::vector<double> fd_psi = oracle::central_diff(psi_of, v0, 1e-6);
        for (std::size_t c = 0; c < d * m; ++c)
            CHECK(std::abs(gp.flat()[c] - fd_psi[c]) <= 1e-6);
    }
}

TEST_CASE("grad_psi: consensus and worked instance") {
    GlobalState global;
    global.avg_item_mat = Mat(1, 1);
    global.avg_item_mat(0, 0) = 1.0;
    LocalModel model = make_model(1, 1, {0.0}, {3.0});
    Mat g = grad_psi(model, global);
    CHECK(g(0, 0) == 2.0);
    model.item_mat(0, 0) = 1.0;
    g = grad_psi(model, global);
    CHECK(g(0, 0) == 0.0);
}

TEST_CASE("aggregate: identity, symmetry, oracle, permutation invariance") {
    Rng rng(5);
    Mat a(2, 3), b(2, 3), c(2, 3);
    for (auto& v : a.flat()) v = rng.uniform(-1, 1);
    for (auto& v : b.flat()) v = rng.uniform(-1, 1);
    for (auto& v : c.flat()) v = rng.uniform(-1, 1);

    std::vector<Mat> one{a};
    CHECK(aggregate(std::span<const Mat>(one)).avg_item_mat == a);

    Mat neg = a;
    kern::scal(-1.0, neg.data(), neg.size());
    std::vector<Mat> pair{a, neg};
    GlobalState cancelled = aggregate(std::span<const Mat>(pair));
    for (double v : cancelled.avg_item_mat.flat()) CHECK(v == 0.0);

    std::vector<Mat> three{a, b, c};
    GlobalState got = aggregate(std::span<const Mat>(three));
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t j = 0; j < 3; ++j) {
            double want = (a(r, j) + b(r, j) + c(r, j)) / 3.0;
            CHECK(got.avg_item_mat(r, j) == doctest::Approx(want).epsilon(1e-12));
        }

    std::vector<Mat> permuted{c, a, b};
    GlobalState got2 = aggregate(std::span<const Mat>(permuted));
    for (std::size_t k = 0; k < got.avg_item_mat.size(); ++k)
        CHECK(got.avg_item_mat.flat()[k] ==
              doctest::Approx(got2.avg_item_mat.flat()[k]).epsilon(1e-13));

    std::vector<Mat> empty;
    CHECK_THROWS_AS(aggregate(std::span<const Mat>(empty)), DegenerateClientError);
}

TEST_CASE("predict: orthogonal, worked, clamped") {
    CHECK(predict(std::vector{1.0, 0.0}, std::vector{0.0, 1.0}, {}) == 0.0);
    CHECK(predict(std::vector{1.0, 2.0}, std::vector{3.0, 4.0}, {}) == 11.0);
    CHECK(predict(std::vector{1.0}, std::vector{7.3}, {{1.0, 5.0}}) == 5.0);
    CHECK_THROWS_AS(predict(std::vector{1.0}, std::vector{1.0, 2.0}, {}), ShapeError);
}

TEST_CASE("fused trainer step equals the dense-gradient route") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto inst = oracle::random_instance(seed);
        std::size_t d = inst.model.user_vec.size();
        std::size_t m = inst.model.item_mat.cols();
        GlobalState global;
        global.avg_item_mat = Mat(d, m);
        Rng rng(seed + 1000);
        for (auto& v : global.avg_item_mat.flat()) v = rng.uniform(-1, 1);

        double step = 0.01, lambda = 3.0, lambda_u = 0.1;

        // dense route: x - step*(grad_f + lambda*grad_psi)
        FGrad g = grad_f(inst.model, inst.row, lambda_u);
        Mat gp = grad_psi(inst.model, global);
        LocalModel dense = inst.model;
        kern::axpy(-step, g.du.data(), dense.user_vec.data(), d);
        kern::axpy(-step, g.dV.data(), dense.item_mat.data(), dense.item_mat.size());
        kern::axpy(-step * lambda, gp.data(), dense.item_mat.data(),
                   dense.item_mat.size());

        // fused route (the trainers' path)
        LocalModel fused = inst.model;
        Vec resid, gu;
        residuals(fused, inst.row, resid);
        task_user_grad(fused, inst.row, resid, lambda_u, gu);
        kern::toward(fused.item_mat.data(), step * lambda, global.avg_item_mat.data(),
                     fused.item_mat.size());
        apply_item_task_step(fused, inst.row, resid, step);
        kern::axpy(-step, gu.data(), fused.user_vec.data(), d);

        for (std::size_t c = 0; c < d; ++c)
            CHECK(fused.user_vec[c] ==
                  doctest::Approx(dense.user_vec[c]).epsilon(1e-12));
        for (std::size_t c = 0; c < d * m; ++c)
            CHECK(fused.item_mat.flat()[c] ==
                  doctest::Approx(dense.item_mat.flat()[c]).epsilon(1e-12));
    }
}

TEST_CASE("local_loss on an ml-100k row matches the oracle loop") {
    TabularFormat fmt;
    fmt.name = "ml-100k";
    RatingsDataset data = load_tabular(kMl100kPath, fmt);
    REQUIRE(data.n_users == 943);
    LocalModel model;
    Rng rng(2024);
    model.user_vec.resize(8);
    for (auto& v : model.user_vec) v = rng.normal(0, 0.5);
    model.item_mat = Mat(8, data.n_items);
    for (auto& v : model.item_mat.flat()) v = rng.normal(0, 0.5);
    const RatingRow& row = data.rows[41];
    double got = local_loss(model, row, 0.1);
    double want = oracle::naive_local_loss(model, row, 0.1);
    CHECK(got == doctest::Approx(want).epsilon(1e-10));
}
