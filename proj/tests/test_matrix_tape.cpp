#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "metadt/matrix.hpp"
#include "metadt/tape.hpp"

using namespace metadt;
using namespace metadt::testing;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = gauss(rng);
    return m;
}

// Entry-wise triple-loop product, the independent reference for matmul.
Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

}  // namespace

TEST_CASE("matmul basics") {
    GradTape t;
    Matrix m{{2.0, -1.0}, {0.5, 3.0}};
    Var r = t.matmul(t.constant(Matrix::identity(2)), t.constant(m));
    CHECK(t.value(r) == m);

    Var v = t.matmul(t.constant(Matrix{{1, 2}, {3, 4}}), t.constant(Matrix{{1}, {1}}));
    CHECK(t.value(v)(0, 0) == 3.0);
    CHECK(t.value(v)(1, 0) == 7.0);

    CHECK_THROWS_AS(t.matmul(t.constant(Matrix(2, 3)), t.constant(Matrix(2, 2))), ShapeError);
}

TEST_CASE("matmul agrees with the triple-loop oracle") {
    Rng rng(11);
    std::uniform_int_distribution<std::size_t> dim(1, 8);
    for (int it = 0; it < 100; ++it) {
        std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
        Matrix a = random_matrix(m, k, rng), b = random_matrix(k, n, rng);
        Matrix got = matmul_plain(a, b);
        Matrix want = matmul_oracle(a, b);
        for (std::size_t i = 0; i < got.size(); ++i)
            REQUIRE(std::abs(got[i] - want[i]) < 1e-10);
    }
}

TEST_CASE("relu values and gradient mask") {
    GradTape t;
    Var x = t.input(Matrix::row({-1.0, 0.0, 2.0}));
    Var y = t.relu(x);
    CHECK(t.value(y) == Matrix::row({0.0, 0.0, 2.0}));

    Var all_neg = t.relu(t.input(Matrix::row({-3.0, -0.5})));
    CHECK(t.value(all_neg) == Matrix::row({0.0, 0.0}));

    GradTape t2;
    Var z = t2.input(Matrix::row({3.0, -3.0}));
    Var loss = t2.sum(t2.relu(z));
    t2.backward(loss);
    CHECK(t2.grad(z)[0] == 1.0);
    CHECK(t2.grad(z)[1] == 0.0);
}

TEST_CASE("cosine similarity values") {
    std::vector<double> u{0.3, -1.2, 0.7};
    CHECK(cosine_similarity(u, u) == Catch::Approx(1.0).margin(1e-12));
    CHECK(cosine_similarity({1, 0}, {0, 1}) == Catch::Approx(0.0).margin(1e-12));
    CHECK(cosine_similarity({1, 0}, {1, 1}) ==
          Catch::Approx(0.7071067811865475).margin(1e-12));
    CHECK_THROWS_AS(cosine_similarity({0, 0}, {1, 1}), DegenerateInputError);
}

TEST_CASE("cosine similarity is invariant to positive scaling") {
    Rng rng(7);
    for (int it = 0; it < 100; ++it) {
        auto u = random_vec(5, rng);
        auto v = random_vec(5, rng);
        std::uniform_real_distribution<double> cdist(1e-3, 1e3);
        double c = cdist(rng);
        auto cu = u;
        for (double& x : cu) x *= c;
        CHECK(std::abs(cosine_similarity(cu, v) - cosine_similarity(u, v)) < 1e-12);
    }
}

TEST_CASE("softmax_scaled values") {
    auto uniform = softmax_scaled({1.5, 1.5, 1.5, 1.5}, 10.0);
    for (double p : uniform) CHECK(p == Catch::Approx(0.25).margin(1e-12));

    CHECK(softmax_scaled({42.0}, 3.0) == std::vector<double>{1.0});

    // direct exp-ratio oracle
    double gamma = 10.0;
    double e0 = std::exp(gamma * 0.9), e1 = std::exp(gamma * 0.1);
    auto p = softmax_scaled({0.9, 0.1}, gamma);
    CHECK(p[0] == Catch::Approx(e0 / (e0 + e1)).margin(1e-12));
    CHECK(p[1] == Catch::Approx(e1 / (e0 + e1)).margin(1e-12));

    CHECK_THROWS_AS(softmax_scaled({}, 1.0), ShapeError);
}

TEST_CASE("softmax_scaled sums to one with positive entries") {
    Rng rng(19);
    std::uniform_real_distribution<double> gdist(0.1, 20.0);
    std::uniform_int_distribution<std::size_t> ndist(1, 12);
    for (int it = 0; it < 200; ++it) {
        auto logits = random_vec(ndist(rng), rng);
        for (double& l : logits) l *= 50.0;  // stress the max-subtraction
        auto p = softmax_scaled(logits, gdist(rng));
        double s = 0.0;
        for (double x : p) {
            CHECK(x >= 0.0);  // extreme logits may underflow to exactly zero
            s += x;
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("cross entropy values") {
    CHECK(cross_entropy({0.0, 1.0, 0.0}, 1) == Catch::Approx(0.0).margin(1e-9));
    CHECK(cross_entropy({0.2, 0.2, 0.2, 0.2, 0.2}, 3) ==
          Catch::Approx(std::log(5.0)).margin(1e-12));
    // 0.42 is the worked-example class probability
    CHECK(cross_entropy({0.42, 0.58}, 0) == Catch::Approx(-std::log(0.42)).margin(1e-9));
    CHECK_THROWS_AS(cross_entropy({0.5, 0.5}, 2), IndexError);
}

TEST_CASE("backward on constants and simple sums") {
    GradTape t;
    Var x = t.input(Matrix::row({1.0, 2.0}));
    Var c = t.constant(Matrix(1, 1, {5.0}));
    t.backward(c);
    CHECK(t.grad(x) == Matrix(1, 2));  // loss independent of x

    GradTape t2;
    Var y = t2.input(Matrix::row({1.0, 2.0}));
    Var loss = t2.sum(t2.mul_elem(y, y));
    t2.backward(loss);
    CHECK(t2.grad(y)[0] == Catch::Approx(2.0));
    CHECK(t2.grad(y)[1] == Catch::Approx(4.0));

    CHECK_THROWS_AS(t2.backward(t2.input(Matrix::row({1.0, 2.0}))), TapeError);
    GradTape other;
    CHECK_THROWS_AS(other.backward(Var{99}), TapeError);
}

TEST_CASE("gather, concat, pick and mean wiring") {
    GradTape t;
    Var v = t.input(Matrix::row({10.0, 20.0, 30.0}));
    Var g = t.gather(v, {2, 0});
    CHECK(t.value(g) == Matrix::row({30.0, 10.0}));
    Var s = t.mean({t.pick(g, 0), t.pick(g, 1)});
    t.backward(s);
    CHECK(t.grad(v) == Matrix::row({0.5, 0.0, 0.5}));
    CHECK_THROWS_AS(t.gather(v, {3}), IndexError);
}
