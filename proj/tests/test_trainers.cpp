#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "rfrec/errors.hpp"
#include "rfrec/kernels.hpp"
#include "rfrec/theory.hpp"
#include "rfrec/trainers.hpp"

using namespace rfrec;

namespace {

RatingsDataset small_desk(std::uint64_t seed = 1, std::size_t n = 4, std::size_t m = 6) {
    PlantedSpec spec;
    spec.n_users = n;
    spec.n_items = m;
    spec.rank = 2;
    spec.factor_sd = 0.4;
    spec.noise_sd = 0.02;
    spec.seed = seed;
    return make_planted(spec);
}

TrainConfig desk_config() {
    TrainConfig cfg;
    cfg.d = 2;
    cfg.alpha = 0.05;
    cfg.lambda = 10.0;
    cfg.lambda_u = 0.1;
    cfg.max_iters = 100;
    cfg.stop_eps = 1e-300;
    cfg.seed = 11;
    cfg.clip_predictions = false;
    return cfg;
}

// exact-fit instance: every client holds the same item matrix and the ratings
// are the exact inner products, so residuals and the consensus pull vanish
struct ConsensusFit {
    RatingsDataset data;
    std::vector<LocalModel> models;
    Mat shared;
};

ConsensusFit make_consensus_fit(std::size_t n, std::size_t m, int d,
                                std::uint64_t seed) {
    ConsensusFit fit;
    fit.data = small_desk(seed, n, m);
    Rng rng(seed * 7 + 1);
    fit.shared = Mat(d, m);
    for (auto& v : fit.shared.flat()) v = rng.uniform(-0.5, 0.5);
    fit.models.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        fit.models[i].user_vec.resize(d);
        for (auto& v : fit.models[i].user_vec) v = rng.uniform(-0.5, 0.5);
        fit.models[i].item_mat = fit.shared;
        auto& row = fit.data.rows[i];
        for (std::size_t k = 0; k < row.size(); ++k)
            row.ratings[k] = kern::dot(fit.models[i].user_vec.data(),
                                       fit.shared.col(row.items[k]), d);
    }
    fit.data.rating_lo = -10;
    fit.data.rating_hi = 10;
    return fit;
}

}  // namespace

TEST_CASE("rfrec: zero residual consensus start is a fixed point") {
    ConsensusFit fit = make_consensus_fit(2, 5, 2, 77);  // n=2: averaging is exact
    TrainConfig cfg = desk_config();
    cfg.lambda_u = 0.0;
    FedTrainer trainer(TrainerKind::rfrec, cfg, fit.data);
    trainer.set_state(fit.models, fit.shared);
    std::vector<LocalModel> before(trainer.models().begin(), trainer.models().end());

    StepOutcome out = trainer.step();
    CHECK(out.comm_events == 2);
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(trainer.models()[i].user_vec == before[i].user_vec);
        CHECK(trainer.models()[i].item_mat == before[i].item_mat);
    }
    // the average of identical matrices does not move: stop criterion fires
    CHECK(out.global_delta.has_value());
    CHECK(*out.global_delta == 0.0);
}

TEST_CASE("rfrec with one client reduces to plain gradient descent on f") {
    RatingsDataset data = small_desk(5, 1, 6);
    TrainConfig cfg = desk_config();
    cfg.seed = 21;
    FedTrainer trainer(TrainerKind::rfrec, cfg, data);
    trainer.step();  // after the first aggregation the average equals V_(1)

    LocalModel oracle_model = trainer.models()[0];
    const RatingRow& row = data.rows[0];
    for (int k = 0; k < 40; ++k) {
        trainer.step();
        // oracle: simultaneous GD step on f only (psi vanishes when n = 1)
        FGrad g = grad_f(oracle_model, row, cfg.lambda_u);
        kern::axpy(-cfg.alpha, g.du.data(), oracle_model.user_vec.data(),
                   oracle_model.user_vec.size());
        kern::axpy(-cfg.alpha, g.dV.data(), oracle_model.item_mat.data(),
                   oracle_model.item_mat.size());
        for (std::size_t c = 0; c < oracle_model.user_vec.size(); ++c)
            CHECK(trainer.models()[0].user_vec[c] ==
                  doctest::Approx(oracle_model.user_vec[c]).epsilon(1e-10));
        for (std::size_t c = 0; c < oracle_model.item_mat.size(); ++c)
            CHECK(trainer.models()[0].item_mat.flat()[c] ==
                  doctest::Approx(oracle_model.item_mat.flat()[c]).epsilon(1e-10));
    }
}

TEST_CASE("rfrec trajectory equals joint gradient descent on F") {
    RatingsDataset data = small_desk(7, 3, 5);
    TrainConfig cfg = desk_config();
    cfg.seed = 31;
    FedTrainer trainer(TrainerKind::rfrec, cfg, data);
    theory::FlatProblem prob(data, cfg);
    Vec x = prob.from_models(trainer.models());

    for (int k = 0; k < 15; ++k) {
        // jointly: x <- x - alpha*gradF(x), except the average used by the
        // trainer is the one aggregated at the END of the previous step;
        // before the first aggregation it is the random initialization
        Vec g = prob.grad_f(x);
        Mat avg = k == 0 ? trainer.global() : prob.average(x);
        for (std::size_t i = 0; i < prob.n(); ++i) {
            auto items = prob.items(x, i);
            const double* gi = prob.items(g, i).data();
            for (std::size_t c = 0; c < items.size(); ++c)
                items[c] -= cfg.alpha * (gi[c] + cfg.lambda * (items[c] - avg.data()[c]));
            auto u = prob.user(x, i);
            const double* gu = prob.user(g, i).data();
            for (std::size_t c = 0; c < u.size(); ++c) u[c] -= cfg.alpha * gu[c];
        }
        trainer.step();
        Vec got = prob.from_models(trainer.models());
        for (std::size_t c = 0; c < x.size(); ++c)
            CHECK(got[c] == doctest::Approx(x[c]).epsilon(1e-11));
    }
}

TEST_CASE("rfrec on the desk instance reaches the long-run optimum of F") {
    // factors sized so the slowest objective mode decays well inside 500
    // iterations at alpha = 0.05
    PlantedSpec pspec;
    pspec.n_users = 4;
    pspec.n_items = 6;
    pspec.rank = 2;
    pspec.factor_sd = 0.8;
    pspec.noise_sd = 0.02;
    pspec.seed = 1;
    RatingsDataset data = make_planted(pspec);
    TrainConfig cfg = desk_config();
    cfg.lambda_u = 0.5;
    cfg.max_iters = 500;
    cfg.seed = 41;
    FedTrainer trainer(TrainerKind::rfrec, cfg, data);
    RunOptions opts;
    opts.eval_every = 0;
    opts.workers = 1;
    RunResult res = trainer.run(opts);
    double f_trainer = trainer.objective();

    // reference: 50k plain gradient-descent steps from the same init
    theory::FlatProblem prob(data, cfg);
    FedTrainer fresh(TrainerKind::rfrec, cfg, data);
    Vec x = prob.from_models(fresh.models());
    for (int k = 0; k < 50000; ++k) {
        Vec g = prob.grad_F(x);
        kern::axpy(-cfg.alpha, g.data(), x.data(), x.size());
    }
    double f_ref = prob.F(x);
    CHECK(f_trainer == doctest::Approx(f_ref).epsilon(1e-6));
    CHECK(res.log.rounds() == 2 * res.iters);
}

TEST_CASE("rfrecf forced schedules: communication only at transitions") {
    RatingsDataset data = small_desk(9, 3, 4);
    TrainConfig cfg = desk_config();

    SUBCASE("all-local schedule has no communication") {
        cfg.max_iters = 3;
        FedTrainer trainer(TrainerKind::rfrecf, cfg, data);
        trainer.set_zeta_schedule({0, 0, 0});
        RunOptions opts;
        opts.eval_every = 0;
        RunResult res = trainer.run(opts);
        CHECK(res.log.rounds() == 0);
        CHECK(res.log.zeta_seq == std::vector<std::uint8_t>{0, 0, 0});

        // all three steps are main updates: 1/(1-p) scaled task steps
        FedTrainer manual(TrainerKind::rfrecf, cfg, data);
        std::vector<LocalModel> state(manual.models().begin(), manual.models().end());
        double step = cfg.alpha / (1.0 - cfg.p);
        for (int k = 0; k < 3; ++k) {
            for (std::size_t i = 0; i < state.size(); ++i) {
                FGrad g = grad_f(state[i], data.rows[i], cfg.lambda_u);
                kern::axpy(-step, g.du.data(), state[i].user_vec.data(),
                           state[i].user_vec.size());
                kern::axpy(-step, g.dV.data(), state[i].item_mat.data(),
                           state[i].item_mat.size());
            }
        }
        for (std::size_t i = 0; i < state.size(); ++i)
            for (std::size_t c = 0; c < state[i].item_mat.size(); ++c)
                CHECK(res.models[i].item_mat.flat()[c] ==
                      doctest::Approx(state[i].item_mat.flat()[c]).epsilon(1e-12));
    }

    SUBCASE("0,1,0 emits exactly an upload then a distribute") {
        cfg.max_iters = 3;
        FedTrainer trainer(TrainerKind::rfrecf, cfg, data);
        trainer.set_zeta_schedule({0, 1, 0});
        StepOutcome s0 = trainer.step();
        CHECK(s0.comm_events == 0);
        StepOutcome s1 = trainer.step();
        CHECK(s1.comm_events == 1);
        CHECK(s1.global_delta.has_value());
        StepOutcome s2 = trainer.step();
        CHECK(s2.comm_events == 1);
        CHECK_FALSE(s2.global_delta.has_value());
        const CommLog& log = trainer.log();
        REQUIRE(log.rounds() == 2);
        CHECK(log.events[0].dir == Direction::client_to_server);
        CHECK(log.events[0].iter == 1);
        CHECK(log.events[1].dir == Direction::server_to_client);
        CHECK(log.events[1].iter == 2);
        CHECK(log.zeta_transitions() == 2);
    }

    SUBCASE("repeated aggregation steps change nothing") {
        cfg.max_iters = 4;
        FedTrainer trainer(TrainerKind::rfrecf, cfg, data);
        trainer.set_zeta_schedule({0, 1, 1, 1});
        trainer.step();
        trainer.step();
        Mat after_first = trainer.global();
        StepOutcome s2 = trainer.step();
        StepOutcome s3 = trainer.step();
        CHECK(s2.comm_events == 0);
        CHECK(s3.comm_events == 0);
        CHECK(trainer.global() == after_first);
    }
}

TEST_CASE("rfrecf communication frequency matches 2p(1-p)") {
    RatingsDataset data = small_desk(13, 3, 4);
    TrainConfig cfg = desk_config();
    cfg.alpha = 0.01;
    cfg.p = 0.5;
    cfg.max_iters = 10000;
    cfg.seed = 123;
    FedTrainer trainer(TrainerKind::rfrecf, cfg, data);
    RunOptions opts;
    opts.eval_every = 0;
    RunResult res = trainer.run(opts);
    double rate = static_cast<double>(res.log.rounds()) /
                  static_cast<double>(res.iters);
    double se = std::sqrt(0.25 / static_cast<double>(res.iters));
    CHECK(std::abs(rate - 0.5) <= 3.0 * se);
    CHECK(res.log.rounds() == res.log.zeta_transitions());
}

TEST_CASE("stochastic_gradient branch values") {
    RatingsDataset data = small_desk(15, 2, 4);
    TrainConfig cfg = desk_config();
    cfg.p = 0.5;
    FedTrainer trainer(TrainerKind::rfrec, cfg, data);
    const LocalModel& model = trainer.models()[0];
    GlobalState global{trainer.global()};

    // task branch at p = 1/2 is exactly twice grad f (division by 0.5 is exact)
    FGrad plain = grad_f(model, data.rows[0], cfg.lambda_u);
    FGrad task = stochastic_gradient(model, data.rows[0], global, cfg, ZetaBranch::task);
    for (std::size_t c = 0; c < plain.du.size(); ++c)
        CHECK(task.du[c] == 2.0 * plain.du[c]);
    for (std::size_t c = 0; c < plain.dV.size(); ++c)
        CHECK(task.dV.flat()[c] == 2.0 * plain.dV.flat()[c]);

    // regularizer branch at consensus vanishes
    LocalModel at_consensus = model;
    at_consensus.item_mat = global.avg_item_mat;
    FGrad reg = stochastic_gradient(at_consensus, data.rows[0], global, cfg,
                                    ZetaBranch::regularizer);
    for (double v : reg.du) CHECK(v == 0.0);
    for (double v : reg.dV.flat()) CHECK(v == 0.0);

    TrainConfig bad = cfg;
    bad.p = 0.0;
    CHECK_THROWS_AS(
        stochastic_gradient(model, data.rows[0], global, bad, ZetaBranch::task),
        ConfigError);
}

TEST_CASE("zero max_iters returns the initialized state and an empty log") {
    RatingsDataset data = small_desk(17, 3, 4);
    TrainConfig cfg = desk_config();
    cfg.max_iters = 0;
    FedTrainer trainer(TrainerKind::rfrec, cfg, data);
    std::vector<LocalModel> before(trainer.models().begin(), trainer.models().end());
    RunResult res = trainer.run();
    CHECK(res.iters == 0);
    CHECK(res.log.rounds() == 0);
    CHECK(res.history.empty());
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(res.models[i].item_mat == before[i].item_mat);
}

TEST_CASE("identical config and seed give bit-identical trajectories and logs") {
    RatingsDataset data = small_desk(19, 4, 5);
    for (TrainerKind kind : {TrainerKind::rfrec, TrainerKind::rfrecf}) {
        TrainConfig cfg = desk_config();
        cfg.max_iters = 60;
        cfg.dropout_rate = 0.3;
        cfg.privacy = PrivacyConfig{0.5, 0.02};
        RunOptions opts;
        opts.eval_every = 5;
        opts.workers = 2;
        FedTrainer a(kind, cfg, data);
        RunResult ra = a.run(opts);
        FedTrainer b(kind, cfg, data);
        RunResult rb = b.run(opts);

        REQUIRE(ra.iters == rb.iters);
        for (std::size_t i = 0; i < ra.models.size(); ++i) {
            CHECK(ra.models[i].user_vec == rb.models[i].user_vec);
            CHECK(ra.models[i].item_mat == rb.models[i].item_mat);
        }
        CHECK(ra.global.avg_item_mat == rb.global.avg_item_mat);
        REQUIRE(ra.log.rounds() == rb.log.rounds());
        for (std::size_t e = 0; e < ra.log.events.size(); ++e) {
            CHECK(ra.log.events[e].iter == rb.log.events[e].iter);
            CHECK(ra.log.events[e].participants == rb.log.events[e].participants);
        }
        CHECK(ra.log.zeta_seq == rb.log.zeta_seq);
        REQUIRE(ra.history.size() == rb.history.size());
        for (std::size_t h = 0; h < ra.history.size(); ++h)
            CHECK(ra.history[h].loss == rb.history[h].loss);
    }
}

TEST_CASE("worker count does not change results") {
    RatingsDataset data = small_desk(23, 5, 6);
    TrainConfig cfg = desk_config();
    cfg.max_iters = 40;
    RunOptions one;
    one.eval_every = 0;
    one.workers = 1;
    RunOptions four;
    four.eval_every = 0;
    four.workers = 4;
    FedTrainer a(TrainerKind::rfrec, cfg, data);
    RunResult ra = a.run(one);
    FedTrainer b(TrainerKind::rfrec, cfg, data);
    RunResult rb = b.run(four);
    for (std::size_t i = 0; i < ra.models.size(); ++i)
        CHECK(ra.models[i].item_mat == rb.models[i].item_mat);
    CHECK(ra.global.avg_item_mat == rb.global.avg_item_mat);
}

TEST_CASE("dropout: cohorts shrink, dropped clients keep stepping, empty cohorts skip") {
    RatingsDataset data = small_desk(29, 6, 5);
    TrainConfig cfg = desk_config();
    cfg.dropout_rate = 0.5;
    cfg.max_iters = 30;
    cfg.seed = 3;
    FedTrainer trainer(TrainerKind::rfrec, cfg, data);

    std::vector<LocalModel> before(trainer.models().begin(), trainer.models().end());
    bool saw_partial = false;
    for (int k = 0; k < 30; ++k) {
        StepOutcome out = trainer.step();
        (void)out;
        const CommEvent& up = trainer.log().events[2 * k];
        if (up.participants < static_cast<int>(data.n_users)) saw_partial = true;
    }
    CHECK(saw_partial);
    // every client moved even though some never reached a full cohort
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(trainer.models()[i].item_mat != before[i].item_mat);

    // near-certain empty cohorts: the average must be carried over unchanged
    TrainConfig heavy = desk_config();
    heavy.dropout_rate = 0.99;
    heavy.max_iters = 50;
    RatingsDataset tiny = small_desk(31, 2, 4);
    FedTrainer t2(TrainerKind::rfrec, heavy, tiny);
    long long skipped = 0;
    for (int k = 0; k < 50; ++k) {
        Mat prev = t2.global();
        StepOutcome out = t2.step();
        if (!out.global_delta) {
            ++skipped;
            CHECK(t2.global() == prev);
        }
    }
    CHECK(skipped == t2.log().skipped_aggregations);
    CHECK(skipped > 0);
}

TEST_CASE("divergence raises an error naming client and iteration") {
    RatingsDataset data = small_desk(37, 3, 4);
    // exaggerate the ratings so a huge step overflows quickly
    for (auto& row : data.rows)
        for (auto& r : row.ratings) r *= 1e6;
    data.rating_lo = -1e7;
    data.rating_hi = 1e7;
    TrainConfig cfg = desk_config();
    cfg.alpha = 1e3;
    cfg.max_iters = 50;
    FedTrainer trainer(TrainerKind::rfrec, cfg, data);
    try {
        for (int k = 0; k < 50; ++k) trainer.step();
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.client >= 0);
        CHECK(e.iter >= 0);
        CHECK(std::string(e.what()).find("client") != std::string::npos);
    }
}

TEST_CASE("history cadence and cumulative round counts") {
    RatingsDataset data = small_desk(43, 3, 4);
    TrainConfig cfg = desk_config();
    cfg.max_iters = 5;
    FedTrainer trainer(TrainerKind::rfrec, cfg, data);
    RunOptions opts;
    opts.eval_every = 2;
    RunResult res = trainer.run(opts);
    REQUIRE(res.history.size() == 3);  // iters 2, 4, 5
    CHECK(res.history[0].iter == 2);
    CHECK(res.history[1].iter == 4);
    CHECK(res.history[2].iter == 5);
    for (const auto& row : res.history)
        CHECK(row.comm_rounds == 2 * row.iter);
}

TEST_CASE("validation rejects out-of-range configs") {
    RatingsDataset data = small_desk(47, 2, 3);
    TrainConfig cfg = desk_config();
    cfg.p = 1.0;
    CHECK_THROWS_AS(FedTrainer(TrainerKind::rfrecf, cfg, data), ConfigError);
    cfg = desk_config();
    cfg.alpha = -1.0;
    CHECK_THROWS_AS(FedTrainer(TrainerKind::rfrec, cfg, data), ConfigError);
    cfg = desk_config();
    cfg.dropout_rate = 1.0;
    CHECK_THROWS_AS(FedTrainer(TrainerKind::rfrec, cfg, data), ConfigError);
    CHECK_THROWS_AS(FedTrainer(TrainerKind::fcf, desk_config(), data), ConfigError);
}
