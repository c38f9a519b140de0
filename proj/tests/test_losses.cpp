#include <cmath>
#include <random>

#include <doctest.h>

#include "evcal/losses.hpp"
#include "evcal/numerics.hpp"
#include "evcal/verify.hpp"

using namespace evcal;
using namespace evcal::losses;

namespace {

Matrix random_logits(std::size_t n, std::size_t k, std::uint64_t seed,
                     double lo = -2.0, double hi = 2.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(n, k);
    for (double& v : m.storage()) v = dist(rng);
    return m;
}

Matrix random_onehot(std::size_t n, std::size_t k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dist(0, static_cast<int>(k) - 1);
    std::vector<int> y(n);
    for (int& v : y) v = dist(rng);
    return one_hot(y, k);
}

void check_gradient(const std::function<LossValue(const Matrix&)>& loss,
                    const Matrix& logits) {
    const Matrix analytic = loss(logits).grad_logits;
    const Matrix numeric = verify::finite_difference(
        [&](const Matrix& o) { return loss(o).value; }, logits);
    const auto cmp = verify::compare_gradients(analytic, numeric, 1e-4, 1e-8);
    INFO(cmp.worst_entry);
    CHECK(cmp.ok);
}

}  // namespace

TEST_CASE("evidence from logits") {
    SUBCASE("symmetric row") {
        auto b = evidence_from_logits(Matrix::from_rows({{0.0, 0.0}}), 1.0);
        CHECK(b.alpha(0, 0) == doctest::Approx(2.0));
        CHECK(b.alpha(0, 1) == doctest::Approx(2.0));
        const Matrix p = b.probabilities();
        CHECK(p(0, 0) == doctest::Approx(0.5));
    }
    SUBCASE("log-scaled evidence") {
        auto b = evidence_from_logits(
            Matrix::from_rows({{std::log(1.0), std::log(3.0)}}), 1.0);
        CHECK(b.alpha(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(b.alpha(0, 1) == doctest::Approx(4.0).epsilon(1e-12));
        const Matrix p = b.probabilities();
        CHECK(p(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        CHECK(p(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("evidence probabilities match calibrated softmax with gamma = lambda") {
        const Matrix logits = random_logits(16, 5, 21);
        for (double lambda : {0.5, 1.0, 2.0}) {
            const Matrix p1 = evidence_from_logits(logits, lambda).probabilities();
            const Matrix p2 = numerics::calibrated_softmax(logits, lambda);
            for (std::size_t i = 0; i < p1.size(); ++i)
                CHECK(std::abs(p1.storage()[i] - p2.storage()[i]) < 1e-12);
        }
    }
    SUBCASE("lambda <= 0 rejected") {
        CHECK_THROWS_AS(evidence_from_logits(Matrix(1, 2), 0.0), std::invalid_argument);
    }
}

TEST_CASE("nll loss values") {
    SUBCASE("hand row") {
        DirichletBatch b;
        b.alpha = Matrix::from_rows({{2.0, 1.0, 1.0}});
        b.lambda = 1.0;
        const Matrix y = Matrix::from_rows({{1.0, 0.0, 0.0}});
        CHECK(nll_loss(b, y).value ==
              doctest::Approx(std::log(4.0) - std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("uniform evidence gives ln K") {
        DirichletBatch b;
        b.alpha = Matrix(1, 4, 1.0);
        b.lambda = 0.5;
        const Matrix y = Matrix::from_rows({{0.0, 0.0, 1.0, 0.0}});
        CHECK(nll_loss(b, y).value == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
    SUBCASE("non-one-hot labels rejected") {
        DirichletBatch b;
        b.alpha = Matrix(1, 2, 1.0);
        CHECK_THROWS_AS(nll_loss(b, Matrix::from_rows({{0.5, 0.5}})),
                        std::invalid_argument);
        CHECK_THROWS_AS(nll_loss(b, Matrix::from_rows({{1.0, 1.0}})),
                        std::invalid_argument);
    }
    SUBCASE("nonnegative on random batches") {
        for (std::uint64_t s = 0; s < 10; ++s) {
            const auto b = evidence_from_logits(random_logits(8, 5, s), 1.0);
            CHECK(nll_loss(b, random_onehot(8, 5, s + 100)).value >= 0.0);
        }
    }
}

TEST_CASE("kl loss values") {
    SUBCASE("all-ones alpha gives zero") {
        DirichletBatch b;
        b.alpha = Matrix(3, 4, 1.0);
        b.lambda = 1.0;
        CHECK(kl_loss(b, random_onehot(3, 4, 1)).value ==
              doctest::Approx(0.0).epsilon(1e-14));
    }
    SUBCASE("alpha (5,3), true class 1: symbolic expansion") {
        DirichletBatch b;
        b.alpha = Matrix::from_rows({{5.0, 3.0}});
        b.lambda = 1.0;
        const Matrix y = Matrix::from_rows({{1.0, 0.0}});
        // alpha~ = (1, 3), S~ = 4
        using numerics::digamma;
        using numerics::log_gamma;
        const double expected =
            0.5 * (log_gamma(4.0) - log_gamma(2.0) - log_gamma(3.0) +
                   2.0 * (digamma(3.0) - digamma(4.0)));
        CHECK(kl_loss(b, y).value == doctest::Approx(expected).epsilon(1e-12));
    }
    SUBCASE("no gradient through the true class") {
        const auto b = evidence_from_logits(random_logits(4, 3, 77), 1.0);
        const Matrix y = one_hot({0, 1, 2, 0}, 3);
        const auto loss = kl_loss(b, y);
        CHECK(loss.grad_logits(0, 0) == 0.0);
        CHECK(loss.grad_logits(1, 1) == 0.0);
        CHECK(loss.grad_logits(2, 2) == 0.0);
        CHECK(loss.grad_logits(3, 0) == 0.0);
    }
}

TEST_CASE("edl loss composition") {
    const auto b = evidence_from_logits(random_logits(6, 4, 31), 1.0);
    const Matrix y = random_onehot(6, 4, 32);
    SUBCASE("beta=0 equals nll") {
        CHECK(edl_loss(b, y, 0.0).value == doctest::Approx(nll_loss(b, y).value));
    }
    SUBCASE("linearity in beta") {
        const double diff = edl_loss(b, y, 1.0).value - edl_loss(b, y, 0.0).value;
        CHECK(std::abs(diff - kl_loss(b, y).value) < 1e-12);
    }
    SUBCASE("beta=0.5 is the weighted sum") {
        const double expected = nll_loss(b, y).value + 0.5 * kl_loss(b, y).value;
        CHECK(edl_loss(b, y, 0.5).value == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("entropy loss values") {
    SUBCASE("uniform logits give ln 2") {
        CHECK(entropy_loss(Matrix(3, 2, 0.7), 0.0).value ==
              doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("near one-hot logits give near-zero entropy") {
        CHECK(entropy_loss(Matrix::from_rows({{30.0, -30.0}}), 0.0).value ==
              doctest::Approx(0.0).epsilon(1e-8));
    }
    SUBCASE("range [0, ln K]") {
        for (std::uint64_t s = 0; s < 20; ++s) {
            const double v = entropy_loss(random_logits(8, 5, s), 1.0).value;
            CHECK(v >= 0.0);
            CHECK(v <= std::log(5.0) + 1e-12);
        }
    }
}

TEST_CASE("diversity loss values") {
    SUBCASE("uniform mean prediction gives -ln K") {
        // two opposite confident rows average to uniform
        const Matrix logits = Matrix::from_rows({{5.0, -5.0}, {-5.0, 5.0}});
        CHECK(diversity_loss(logits, 0.0).value ==
              doctest::Approx(-std::log(2.0)).epsilon(1e-6));
    }
    SUBCASE("all mass on one class gives near zero") {
        const Matrix logits = Matrix::from_rows({{30.0, -30.0}, {30.0, -30.0}});
        CHECK(diversity_loss(logits, 0.0).value == doctest::Approx(0.0).epsilon(1e-8));
    }
    SUBCASE("range [-ln K, 0]") {
        for (std::uint64_t s = 0; s < 20; ++s) {
            const double v = diversity_loss(random_logits(8, 5, s), 1.0).value;
            CHECK(v >= -std::log(5.0) - 1e-12);
            CHECK(v <= 0.0);
        }
    }
}

TEST_CASE("total loss composition") {
    const Matrix logits = random_logits(8, 5, 41);
    const Matrix y = random_onehot(8, 5, 42);
    SUBCASE("zero weights give zero loss and gradient") {
        LossWeights w{0.0, 0.0, 0.5, 1.0};
        const auto loss = total_loss(logits, y, w, 1.0);
        CHECK(loss.value == 0.0);
        for (double g : loss.grad_logits.storage()) CHECK(g == 0.0);
    }
    SUBCASE("paper defaults equal hand-composed sum") {
        LossWeights w;  // w1=0.3, w2=1.0, beta=0.5, gamma=1.0
        const auto b = evidence_from_logits(logits, 1.0);
        const double expected =
            0.3 * (nll_loss(b, y).value + 0.5 * kl_loss(b, y).value) +
            1.0 * (entropy_loss(logits, 1.0).value + diversity_loss(logits, 1.0).value);
        CHECK(std::abs(total_loss(logits, y, w, 1.0).value - expected) < 1e-12);
    }
}

TEST_CASE("gradients match central finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Matrix logits = random_logits(8, 5, seed);
        const Matrix y = random_onehot(8, 5, seed + 50);
        check_gradient([&](const Matrix& o) {
            return nll_loss(evidence_from_logits(o, 1.0), y);
        }, logits);
        check_gradient([&](const Matrix& o) {
            return kl_loss(evidence_from_logits(o, 1.0), y);
        }, logits);
        check_gradient([&](const Matrix& o) {
            return edl_loss(evidence_from_logits(o, 1.0), y, 0.5);
        }, logits);
        check_gradient([&](const Matrix& o) { return entropy_loss(o, 1.0); }, logits);
        check_gradient([&](const Matrix& o) { return entropy_loss(o, 0.0); }, logits);
        check_gradient([&](const Matrix& o) { return diversity_loss(o, 1.0); }, logits);
        check_gradient([&](const Matrix& o) {
            return total_loss(o, y, LossWeights{}, 1.0);
        }, logits);
    }
}
