#include <cmath>
#include <random>

#include <doctest.h>

#include "evcal/numerics.hpp"

using namespace evcal;
using namespace evcal::numerics;

TEST_CASE("log_gamma fixed points") {
    CHECK(log_gamma(1.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(log_gamma(2.0) == doctest::Approx(0.0).epsilon(1e-12));
    // ln sqrt(pi)
    CHECK(log_gamma(0.5) == doctest::Approx(0.57236494292470008707).epsilon(1e-12));
    CHECK_THROWS_AS(log_gamma(0.0), std::domain_error);
    CHECK_THROWS_AS(log_gamma(-1.0), std::domain_error);
}

TEST_CASE("digamma fixed points") {
    // -euler_gamma; psi(2) = psi(1) + 1; psi(1/2) = -gamma - 2 ln 2
    CHECK(digamma(1.0) == doctest::Approx(-0.57721566490153286).epsilon(1e-10));
    CHECK(digamma(2.0) == doctest::Approx(0.42278433509846714).epsilon(1e-10));
    CHECK(digamma(0.5) == doctest::Approx(-1.9635100260214235).epsilon(1e-10));
    CHECK_THROWS_AS(digamma(0.0), std::domain_error);
    CHECK_THROWS_AS(digamma(-0.5), std::domain_error);
}

TEST_CASE("lgamma/digamma recurrences over random arguments") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(1e-3, 100.0);
    for (int i = 0; i < 500; ++i) {
        const double x = dist(rng);
        CHECK(std::abs(digamma(x + 1.0) - digamma(x) - 1.0 / x) < 1e-10);
        CHECK(std::abs(log_gamma(x + 1.0) - log_gamma(x) - std::log(x)) < 1e-10);
        CHECK(std::abs(trigamma(x + 1.0) - trigamma(x) + 1.0 / (x * x)) < 1e-10);
    }
}

TEST_CASE("softmax basics") {
    const Matrix out = softmax(Matrix::from_rows({{0.0, 0.0}, {0.0, 1.0}}));
    CHECK(out(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out(1, 0) == doctest::Approx(1.0 / (1.0 + std::exp(1.0))).epsilon(1e-12));
    CHECK(out(1, 1) == doctest::Approx(std::exp(1.0) / (1.0 + std::exp(1.0))).epsilon(1e-12));
}

TEST_CASE("softmax translation invariance") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> logits(-5.0, 5.0);
    std::uniform_real_distribution<double> shifts(-50.0, 50.0);
    for (int t = 0; t < 100; ++t) {
        Matrix a(1, 4);
        for (double& v : a.storage()) v = logits(rng);
        Matrix b = a;
        const double c = shifts(rng);
        for (double& v : b.storage()) v += c;
        const Matrix pa = softmax(a);
        const Matrix pb = softmax(b);
        for (std::size_t k = 0; k < 4; ++k)
            CHECK(std::abs(pa(0, k) - pb(0, k)) < 1e-12);
    }
}

TEST_CASE("calibrated softmax values") {
    const double e = std::exp(1.0);
    SUBCASE("gamma=0 reduces to softmax") {
        const Matrix logits = Matrix::from_rows({{0.0, 1.0}});
        const Matrix a = calibrated_softmax(logits, 0.0);
        const Matrix b = softmax(logits);
        CHECK(a(0, 0) == doctest::Approx(b(0, 0)).epsilon(1e-15));
        CHECK(a(0, 1) == doctest::Approx(b(0, 1)).epsilon(1e-15));
    }
    SUBCASE("gamma=1 on (0,1): (1+1, e+1)/(e+3)") {
        const Matrix p = calibrated_softmax(Matrix::from_rows({{0.0, 1.0}}), 1.0);
        CHECK(p(0, 0) == doctest::Approx(2.0 / (e + 3.0)).epsilon(1e-12));
        CHECK(p(0, 1) == doctest::Approx((e + 1.0) / (e + 3.0)).epsilon(1e-12));
    }
    SUBCASE("gamma=1 on (1,2) differs from (0,1): translation invariance broken") {
        const Matrix p = calibrated_softmax(Matrix::from_rows({{1.0, 2.0}}), 1.0);
        const double e2 = e * e;
        CHECK(p(0, 0) == doctest::Approx((e + 1.0) / (e + e2 + 2.0)).epsilon(1e-12));
        CHECK(p(0, 0) == doctest::Approx(0.30711).epsilon(1e-4));
        CHECK(p(0, 1) == doctest::Approx(0.69289).epsilon(1e-4));
    }
    SUBCASE("negative gamma rejected") {
        CHECK_THROWS_AS(calibrated_softmax(Matrix(1, 2), -0.1), std::invalid_argument);
    }
}

TEST_CASE("calibrated softmax breaks translation invariance on random rows") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    for (int t = 0; t < 100; ++t) {
        Matrix a(1, 5);
        for (double& v : a.storage()) v = dist(rng);
        a(0, 0) += 0.5;  // ensure non-constant row
        Matrix b = a;
        for (double& v : b.storage()) v += 1.0;
        const Matrix pa = calibrated_softmax(a, 1.0);
        const Matrix pb = calibrated_softmax(b, 1.0);
        double diff = 0.0;
        for (std::size_t k = 0; k < 5; ++k) diff += std::abs(pa(0, k) - pb(0, k));
        CHECK(diff > 1e-8);
    }
}

TEST_CASE("calibrated softmax entries strictly positive for gamma > 0") {
    const Matrix p = calibrated_softmax(Matrix::from_rows({{-500.0, 0.0, 500.0}}), 0.5);
    for (double v : p.storage()) CHECK(v > 0.0);
    double sum = 0.0;
    for (double v : p.storage()) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rows sum to one") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> dist(-10.0, 10.0);
    Matrix logits(20, 6);
    for (double& v : logits.storage()) v = dist(rng);
    for (double g : {0.0, 0.3, 1.0, 5.0}) {
        const Matrix p = calibrated_softmax(logits, g);
        for (std::size_t i = 0; i < p.rows(); ++i) {
            double sum = 0.0;
            for (double v : p.row(i)) sum += v;
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("non-finite logits rejected") {
    Matrix logits(1, 2);
    logits(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(softmax(logits), std::invalid_argument);
    CHECK_THROWS_AS(calibrated_softmax(logits, 1.0), std::invalid_argument);
}
