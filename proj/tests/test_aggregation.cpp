#include <cmath>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "qaf/aggregation.hpp"
#include "test_util.hpp"

using namespace qaf;
using qaf::test::random_matrix;

namespace {

LevelBundle random_bundle(Rng& rng, std::size_t q, std::size_t t, std::size_t d) {
    LevelBundle bundle;
    for (std::size_t i = 0; i < q; ++i) bundle.levels.push_back(random_matrix(rng, t, d));
    return bundle;
}

}  // namespace

TEST_CASE("mean_pool_levels basics and naive-loop oracle") {
    LevelBundle single;
    single.levels = {Matrix(2, 2, 3.5)};
    CHECK(mean_pool_levels(single) == single.levels[0]);

    LevelBundle two;
    Matrix a(1, 1), b(1, 1);
    a(0, 0) = 2.0;
    b(0, 0) = 4.0;
    two.levels = {a, b};
    CHECK(mean_pool_levels(two)(0, 0) == doctest::Approx(3.0));

    Rng rng(101);
    LevelBundle bundle = random_bundle(rng, 5, 4, 3);
    Matrix pooled = mean_pool_levels(bundle);
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t d = 0; d < 3; ++d) {
            double s = 0.0;
            for (std::size_t q = 0; q < 5; ++q) s += bundle.levels[q](t, d);
            CHECK(pooled(t, d) == doctest::Approx(s / 5.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("qaf_alpha: uniform logits give 1/Q") {
    QafParams params;
    params.W = Matrix(4, 3);
    params.tau = 2.7;
    AlphaMatrix alpha = qaf_alpha(params);
    for (std::size_t i = 0; i < alpha.size(); ++i)
        CHECK(alpha.data()[i] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("qaf_alpha: hand softmax value") {
    QafParams params;
    params.W = Matrix(2, 1);
    params.W(0, 0) = std::log(2.0);
    params.W(1, 0) = 0.0;
    params.tau = 1.0;
    AlphaMatrix alpha = qaf_alpha(params);
    CHECK(alpha(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(alpha(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("qaf_alpha: low temperature is near one-hot") {
    Rng rng(103);
    QafParams params;
    params.W = random_matrix(rng, 4, 2);
    params.tau = 1e-3;
    AlphaMatrix alpha = qaf_alpha(params);
    for (std::size_t d = 0; d < 2; ++d) {
        double max_entry = 0.0;
        for (std::size_t q = 0; q < 4; ++q) max_entry = std::max(max_entry, alpha(q, d));
        CHECK(max_entry >= 1.0 - 1e-6);
    }
}

TEST_CASE("qaf_alpha columns sum to one across temperatures") {
    Rng rng(107);
    for (double tau : {1e-3, 1.0, 1e3}) {
        for (int round = 0; round < 20; ++round) {
            QafParams params;
            params.W = random_matrix(rng, 3 + rng.uniform_index(4), 1 + rng.uniform_index(5), 3.0);
            params.tau = tau;
            AlphaMatrix alpha = qaf_alpha(params);
            for (std::size_t d = 0; d < alpha.cols(); ++d) {
                double sum = 0.0;
                for (std::size_t q = 0; q < alpha.rows(); ++q) sum += alpha(q, d);
                CHECK(std::abs(sum - 1.0) <= 1e-9);
            }
        }
    }
}

TEST_CASE("qaf_alpha is invariant to shifting one column of W") {
    Rng rng(109);
    for (int round = 0; round < 30; ++round) {
        QafParams params;
        params.W = random_matrix(rng, 4, 3);
        params.tau = 0.5 + rng.uniform();
        AlphaMatrix before = qaf_alpha(params);
        std::size_t d = rng.uniform_index(3);
        double shift = rng.normal(0.0, 5.0);
        for (std::size_t q = 0; q < 4; ++q) params.W(q, d) += shift;
        AlphaMatrix after = qaf_alpha(params);
        for (std::size_t i = 0; i < before.size(); ++i)
            CHECK(std::abs(before.data()[i] - after.data()[i]) <= 1e-12);
    }
}

TEST_CASE("qaf_aggregate with zero W reduces to mean pooling") {
    Rng rng(113);
    LevelBundle bundle = random_bundle(rng, 4, 6, 5);
    QafParams params;
    params.W = Matrix(4, 5);
    params.tau = 1.0;
    Matrix qaf = qaf_aggregate(bundle, params);
    Matrix mean = mean_pool_levels(bundle);
    for (std::size_t i = 0; i < qaf.size(); ++i)
        CHECK(std::abs(qaf.data()[i] - mean.data()[i]) <= 1e-12);
}

TEST_CASE("qaf_aggregate hand-worked convex combination") {
    LevelBundle bundle;
    Matrix l0(1, 1), l1(1, 1);
    l0(0, 0) = 0.0;
    l1(0, 0) = 10.0;
    bundle.levels = {l0, l1};
    QafParams params;
    params.W = Matrix(2, 1);
    params.W(0, 0) = std::log(2.0);  // alpha = (2/3, 1/3)
    params.tau = 1.0;
    Matrix out = qaf_aggregate(bundle, params);
    CHECK(out(0, 0) == doctest::Approx(10.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("qaf_aggregate converges to the favored level as tau -> 0") {
    Rng rng(127);
    LevelBundle bundle = random_bundle(rng, 3, 4, 2);
    QafParams params;
    params.W = Matrix(3, 2);
    for (std::size_t d = 0; d < 2; ++d) params.W(1, d) = 1.0;  // favor level 2 everywhere
    params.tau = 1e-4;
    Matrix out = qaf_aggregate(bundle, params);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t d = 0; d < 2; ++d)
            CHECK(out(t, d) == doctest::Approx(bundle.levels[1](t, d)).epsilon(1e-9));
}

TEST_CASE("qaf_aggregate stays inside the per-entry level envelope") {
    Rng rng(131);
    for (int round = 0; round < 1000; ++round) {
        std::size_t q = 2 + rng.uniform_index(3);
        std::size_t t = 1 + rng.uniform_index(3);
        std::size_t d = 1 + rng.uniform_index(3);
        LevelBundle bundle = random_bundle(rng, q, t, d);
        QafParams params;
        params.W = random_matrix(rng, q, d, 2.0);
        params.tau = std::pow(10.0, rng.uniform(-2.0, 2.0));
        Matrix out = qaf_aggregate(bundle, params);
        for (std::size_t tt = 0; tt < t; ++tt) {
            for (std::size_t dd = 0; dd < d; ++dd) {
                double lo = bundle.levels[0](tt, dd), hi = lo;
                for (std::size_t qq = 1; qq < q; ++qq) {
                    lo = std::min(lo, bundle.levels[qq](tt, dd));
                    hi = std::max(hi, bundle.levels[qq](tt, dd));
                }
                CHECK(out(tt, dd) >= lo - 1e-12);
                CHECK(out(tt, dd) <= hi + 1e-12);
            }
        }
    }
}

TEST_CASE("qaf_backward: zero upstream gives zero gradients") {
    Rng rng(137);
    LevelBundle bundle = random_bundle(rng, 3, 2, 2);
    QafParams params;
    params.W = random_matrix(rng, 3, 2);
    QafBackwardResult back = qaf_backward(bundle, params, Matrix(2, 2));
    for (std::size_t i = 0; i < back.grad_W.size(); ++i) CHECK(back.grad_W.data()[i] == 0.0);
    for (const auto& gl : back.grad_levels)
        for (std::size_t i = 0; i < gl.size(); ++i) CHECK(gl.data()[i] == 0.0);
}

TEST_CASE("qaf_backward: identical levels annihilate the W gradient") {
    Rng rng(139);
    Matrix level = random_matrix(rng, 3, 2);
    LevelBundle bundle;
    bundle.levels = {level, level, level};
    QafParams params;
    params.W = random_matrix(rng, 3, 2);
    Matrix upstream = random_matrix(rng, 3, 2);
    QafBackwardResult back = qaf_backward(bundle, params, upstream);
    for (std::size_t i = 0; i < back.grad_W.size(); ++i)
        CHECK(std::abs(back.grad_W.data()[i]) <= 1e-12);
}

TEST_CASE("qaf_backward matches central finite differences on 100 seeds") {
    const double step = 1e-5;
    for (int seed = 0; seed < 100; ++seed) {
        Rng rng(1000 + seed);
        LevelBundle bundle = random_bundle(rng, 3, 2, 2);
        QafParams params;
        params.W = random_matrix(rng, 3, 2);
        params.tau = 0.5 + rng.uniform();
        Matrix upstream = random_matrix(rng, 2, 2);

        QafBackwardResult back = qaf_backward(bundle, params, upstream);
        auto loss = [&]() {
            Matrix out = qaf_aggregate(bundle, params);
            double s = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) s += upstream.data()[i] * out.data()[i];
            return s;
        };
        for (std::size_t i = 0; i < params.W.size(); ++i) {
            double saved = params.W.data()[i];
            params.W.data()[i] = saved + step;
            double up = loss();
            params.W.data()[i] = saved - step;
            double down = loss();
            params.W.data()[i] = saved;
            double numeric = (up - down) / (2.0 * step);
            double analytic = back.grad_W.data()[i];
            if (std::abs(analytic) + std::abs(numeric) > 1e-8) {
                CHECK(std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric)) <
                      1e-6);
            }
        }
        // grad_levels has the closed form alpha * upstream.
        AlphaMatrix alpha = qaf_alpha(params);
        for (std::size_t q = 0; q < 3; ++q)
            for (std::size_t t = 0; t < 2; ++t)
                for (std::size_t d = 0; d < 2; ++d)
                    CHECK(back.grad_levels[q](t, d) ==
                          doctest::Approx(alpha(q, d) * upstream(t, d)).epsilon(1e-12));
    }
}

TEST_CASE("aggregation error contracts") {
    Rng rng(149);
    LevelBundle bundle = random_bundle(rng, 3, 2, 2);
    QafParams params;
    params.W = random_matrix(rng, 3, 2);

    QafParams bad_tau = params;
    bad_tau.tau = 0.0;
    CHECK_THROWS_AS(qaf_alpha(bad_tau), ValueError);

    QafParams bad_w = params;
    bad_w.W(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(qaf_alpha(bad_w), ValueError);

    QafParams wrong_shape = params;
    wrong_shape.W = random_matrix(rng, 2, 2);
    CHECK_THROWS_AS(qaf_aggregate(bundle, wrong_shape), ShapeError);

    LevelBundle ragged = bundle;
    ragged.levels[1] = random_matrix(rng, 3, 2);
    CHECK_THROWS_AS(mean_pool_levels(ragged), ShapeError);

    CHECK_THROWS_AS(qaf_backward(bundle, params, Matrix(5, 2)), ShapeError);
}

TEST_CASE("write_alpha_csv emits q-major rows plus per-quantizer means") {
    Matrix alpha(2, 2);
    alpha(0, 0) = 0.25;
    alpha(0, 1) = 0.75;
    alpha(1, 0) = 0.75;
    alpha(1, 1) = 0.25;
    const std::string path = "alpha_test.csv";
    write_alpha_csv(alpha, path);
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    CHECK(line == "quantizer,dim,alpha");
    std::getline(f, line);
    CHECK(line == "1,0,0.25");
    std::getline(f, line);
    CHECK(line == "1,1,0.75");
    std::getline(f, line);
    CHECK(line == "2,0,0.75");
    std::getline(f, line);
    CHECK(line == "2,1,0.25");
    std::getline(f, line);
    CHECK(line == "1,mean,0.5");
    std::getline(f, line);
    CHECK(line == "2,mean,0.5");
    std::remove(path.c_str());
}
