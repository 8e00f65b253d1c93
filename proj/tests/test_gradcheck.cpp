#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "metadt/metalearn.hpp"

using namespace metadt;
using namespace metadt::testing;

namespace {

struct Instance {
    HierarchyGraph g;
    AdjacencyOperator a_hat;
    DTINetParams params;
    std::vector<LabeledFeature> support;
};

Instance make_instance(Rng& rng, const Dims& d) {
    Instance in;
    in.g = random_tree(rng, 3, 8, d.d_s);
    in.a_hat = normalize_adjacency(build_adjacency(in.g));
    in.params = init_params(d, rng);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::size_t n = in.g.num_classes();
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<double> f(d.d_f);
        for (double& x : f) x = 1.0 + gauss(rng);  // keep norms away from zero
        in.support.push_back(LabeledFeature{"s" + std::to_string(k), k, std::move(f)});
    }
    return in;
}

double loss_at(const Instance& in, const DTINetParams& p, double gamma) {
    return support_loss(p, in.g, in.a_hat, in.support, gamma, false).loss;
}

// Check a handful of coordinates of one weight matrix against central
// differences of the end-to-end support loss.
void check_matrix_grad(const Instance& in, const Matrix& analytic,
                       Matrix DTINetParams::* which, double gamma, Rng& rng) {
    DTINetParams p = in.params;
    std::uniform_int_distribution<std::size_t> pick(0, (p.*which).size() - 1);
    for (int c = 0; c < 4; ++c) {
        std::size_t i = pick(rng);
        auto f = [&](double x) {
            DTINetParams q = in.params;
            (q.*which)[i] = x;
            return loss_at(in, q, gamma);
        };
        double fd = central_diff(f, (in.params.*which)[i]);
        REQUIRE(rel_err(fd, analytic[i]) < 1e-4);
    }
}

}  // namespace

TEST_CASE("support loss gradients match central differences end to end") {
    Rng rng(2024);
    Dims d{4, 6, 5, 3};
    double gamma = 10.0;
    for (int it = 0; it < 12; ++it) {
        Instance in = make_instance(rng, d);
        auto r = support_loss(in.params, in.g, in.a_hat, in.support, gamma, true);
        REQUIRE(std::isfinite(r.loss));
        check_matrix_grad(in, r.grads.w0, &DTINetParams::w0, gamma, rng);
        check_matrix_grad(in, r.grads.w1, &DTINetParams::w1, gamma, rng);
        check_matrix_grad(in, r.grads.w2, &DTINetParams::w2, gamma, rng);
    }
}

TEST_CASE("cosine_rows gradient matches central differences") {
    Rng rng(5);
    for (int it = 0; it < 20; ++it) {
        Matrix theta(3, 4);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = 1.0 + gauss(rng);
        auto x = random_vec(4, rng);
        x[0] += 2.0;

        GradTape t;
        Var th = t.input(theta);
        Var s = t.cosine_rows(th, x);
        // arbitrary fixed linear functional of the cosines
        Var loss = t.mean({t.pick(s, 0), t.pick(s, 1), t.pick(s, 2)});
        t.backward(loss);
        const Matrix& an = t.grad(th);

        std::uniform_int_distribution<std::size_t> pick(0, theta.size() - 1);
        for (int c = 0; c < 3; ++c) {
            std::size_t i = pick(rng);
            auto f = [&](double v) {
                Matrix q = theta;
                q[i] = v;
                GradTape t2;
                Var s2 = t2.cosine_rows(t2.constant(q), x);
                return (t2.value(s2)[0] + t2.value(s2)[1] + t2.value(s2)[2]) / 3.0;
            };
            double fd = central_diff(f, theta[i]);
            REQUIRE(rel_err(fd, an[i]) < 1e-4);
        }
    }
}

TEST_CASE("softmax + cross entropy gradient matches central differences") {
    Rng rng(31);
    std::uniform_real_distribution<double> ldist(0.0, 1.0);
    for (int it = 0; it < 20; ++it) {
        // bounded logits keep every probability, and hence every gradient
        // entry, far enough from zero for the finite-difference comparison
        std::vector<double> logits(5);
        for (double& l : logits) l = ldist(rng);
        std::size_t label = std::uniform_int_distribution<std::size_t>(0, 4)(rng);
        double gamma = 10.0;

        GradTape t;
        Var l = t.input(Matrix::row(logits));
        Var loss = t.cross_entropy(t.softmax_scaled(l, gamma), label);
        t.backward(loss);
        const Matrix& an = t.grad(l);

        for (std::size_t i = 0; i < logits.size(); ++i) {
            auto f = [&](double v) {
                auto q = logits;
                q[i] = v;
                return cross_entropy(softmax_scaled(q, gamma), label);
            };
            double fd = central_diff(f, logits[i]);
            REQUIRE(rel_err(fd, an[i]) < 1e-4);
        }
    }
}

TEST_CASE("tree class probability gradients match central differences") {
    Rng rng(47);
    for (int it = 0; it < 10; ++it) {
        HierarchyGraph g = random_tree(rng, 2, 6, 4);
        std::size_t d_f = 3;
        TreeParams tp = random_params(g, d_f, rng);
        for (std::size_t i = 0; i < tp.weights.size(); ++i) tp.weights[i] += 1.5;
        auto x = random_vec(d_f, rng);
        x[0] += 2.0;
        std::size_t label =
            std::uniform_int_distribution<std::size_t>(0, g.num_classes() - 1)(rng);

        GradTape t;
        Var theta = t.input(tp.weights);
        Var loss = t.cross_entropy(class_probs_on_tape(t, theta, tp.gamma, g, x), label);
        t.backward(loss);
        const Matrix& an = t.grad(theta);

        std::uniform_int_distribution<std::size_t> pick(0, tp.weights.size() - 1);
        for (int c = 0; c < 5; ++c) {
            std::size_t i = pick(rng);
            auto f = [&](double v) {
                TreeParams q = tp;
                q.weights[i] = v;
                return cross_entropy(class_probs(q, g, x).probs, label);
            };
            double fd = central_diff(f, tp.weights[i]);
            REQUIRE(rel_err(fd, an[i]) < 1e-4);
        }
    }
}
