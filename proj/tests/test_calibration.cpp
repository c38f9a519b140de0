#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <doctest.h>

#include "evcal/calibration.hpp"
#include "evcal/verify.hpp"

using namespace evcal;
using namespace evcal::calibration;

namespace {

Matrix random_probs(std::size_t n, std::size_t k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.01, 1.0);
    Matrix m(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            m(i, j) = dist(rng);
            sum += m(i, j);
        }
        for (std::size_t j = 0; j < k; ++j) m(i, j) /= sum;
    }
    return m;
}

std::vector<int> random_labels(std::size_t n, std::size_t k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dist(0, static_cast<int>(k) - 1);
    std::vector<int> y(n);
    for (int& v : y) v = dist(rng);
    return y;
}

}  // namespace

TEST_CASE("single-bin hand cases") {
    SUBCASE("perfectly calibrated: all confident and all correct") {
        const Matrix probs = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
        const auto rep = ece(probs, {0, 1}, 1);
        CHECK(rep.ece == doctest::Approx(0.0).epsilon(1e-15));
        REQUIRE(rep.bins.size() == 1);
        CHECK(rep.bins[0].count == 2);
        CHECK(rep.bins[0].accuracy == doctest::Approx(1.0));
    }
    SUBCASE("confidence 0.75, accuracy 0.5 gives 0.25") {
        const Matrix probs = Matrix::from_rows({{0.75, 0.25}, {0.75, 0.25}});
        const auto rep = ece(probs, {0, 1}, 1);
        CHECK(rep.ece == doctest::Approx(0.25).epsilon(1e-15));
        CHECK(rep.bins[0].mean_confidence == doctest::Approx(0.75));
        CHECK(rep.bins[0].accuracy == doctest::Approx(0.5));
    }
}

TEST_CASE("right-inclusive bin edges") {
    // with m = 2, confidence exactly 0.5 belongs to the first bin
    const Matrix probs = Matrix::from_rows({{0.5, 0.5}, {0.9, 0.1}});
    const auto rep = ece(probs, {0, 0}, 2);
    REQUIRE(rep.bins.size() == 2);
    CHECK(rep.bins[0].count == 1);
    CHECK(rep.bins[1].count == 1);
    CHECK(rep.bins[0].mean_confidence == doctest::Approx(0.5));
    CHECK(rep.bins[1].mean_confidence == doctest::Approx(0.9));
}

TEST_CASE("empty bins contribute zero and are retained") {
    const Matrix probs = Matrix::from_rows({{0.95, 0.05}});
    const auto rep = ece(probs, {0}, 10);
    CHECK(rep.bins.size() == 10);
    std::size_t nonzero = 0;
    for (const auto& b : rep.bins)
        if (b.count > 0) ++nonzero;
    CHECK(nonzero == 1);
    CHECK(rep.ece == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("ece matches the independent reference on random instances") {
    for (std::uint64_t t = 0; t < 200; ++t) {
        const std::size_t n = 5 + t % 40;
        const std::size_t k = 2 + t % 4;
        const std::size_t m = 1 + t % 20;
        const Matrix probs = random_probs(n, k, t);
        const auto y = random_labels(n, k, t + 777);
        const double got = ece(probs, y, m).ece;
        const double ref = verify::reference_ece(probs, y, m);
        CHECK(std::abs(got - ref) < 1e-12);
    }
}

TEST_CASE("ece is invariant to sample order") {
    const Matrix probs = random_probs(50, 3, 4);
    const auto y = random_labels(50, 3, 5);
    const double base = ece(probs, y, 15).ece;

    std::vector<std::size_t> perm(50);
    for (std::size_t i = 0; i < 50; ++i) perm[i] = i;
    std::mt19937_64 rng(6);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix shuffled(50, 3);
    std::vector<int> ys(50);
    for (std::size_t i = 0; i < 50; ++i) {
        for (std::size_t j = 0; j < 3; ++j) shuffled(i, j) = probs(perm[i], j);
        ys[i] = y[perm[i]];
    }
    CHECK(ece(shuffled, ys, 15).ece == doctest::Approx(base).epsilon(1e-13));
}

TEST_CASE("input validation") {
    CHECK_THROWS_AS(ece(Matrix::from_rows({{0.9, 0.2}}), {0}, 15),
                    std::invalid_argument);  // row does not sum to 1
    CHECK_THROWS_AS(ece(random_probs(3, 2, 1), {0, 1}, 15),
                    std::invalid_argument);  // label count mismatch
    CHECK_THROWS_AS(ece(random_probs(3, 2, 1), {0, 1, 5}, 15),
                    std::invalid_argument);  // label out of range
    CHECK_THROWS_AS(ece(random_probs(3, 2, 1), {0, 1, 0}, 0),
                    std::invalid_argument);  // zero bins
}

TEST_CASE("nll values") {
    const Matrix probs = Matrix::from_rows({{0.5, 0.5}, {0.25, 0.75}});
    const double expected = -(std::log(0.5) + std::log(0.75)) / 2.0;
    CHECK(nll(probs, {0, 1}) == doctest::Approx(expected).epsilon(1e-12));

    // floor keeps zero probabilities finite
    const Matrix hard = Matrix::from_rows({{1.0, 0.0}});
    const double floored = nll(hard, {1});
    CHECK(std::isfinite(floored));
    CHECK(floored == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));
}

TEST_CASE("reliability curve keeps only populated bins") {
    const Matrix probs = random_probs(40, 3, 12);
    const auto y = random_labels(40, 3, 13);
    const auto rep = ece(probs, y, 15);
    const auto curve = reliability_curve(rep);
    std::size_t populated = 0;
    for (const auto& b : rep.bins)
        if (b.count > 0) ++populated;
    CHECK(curve.size() == populated);
    for (const auto& pt : curve) {
        CHECK(pt.count > 0);
        CHECK(pt.confidence > pt.lo);
        CHECK(pt.confidence <= pt.hi + 1e-12);
    }
}

TEST_CASE("report serialization") {
    const Matrix probs = random_probs(30, 3, 20);
    const auto y = random_labels(30, 3, 21);
    auto rep = ece(probs, y, 5);
    rep.nll = nll(probs, y);

    const std::string json = rep.to_json();
    CHECK(json.find("\"ece\"") != std::string::npos);
    CHECK(json.find("\"nll\"") != std::string::npos);
    CHECK(json.find("\"bins\"") != std::string::npos);

    const std::string path = "test_reliability.csv";
    write_reliability_csv(rep, path);
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string header;
    std::getline(in, header);
    CHECK(header == "bin_lo,bin_hi,count,confidence,accuracy");
    std::size_t lines = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++lines;
    std::size_t populated = 0;
    for (const auto& b : rep.bins)
        if (b.count > 0) ++populated;
    CHECK(lines == populated);
    in.close();
    std::remove(path.c_str());
}
