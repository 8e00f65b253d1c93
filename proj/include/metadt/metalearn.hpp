#ifndef METADT_METALEARN_HPP
#define METADT_METALEARN_HPP

#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "metadt/dtinet.hpp"
#include "metadt/episodes.hpp"
#include "metadt/errors.hpp"
#include "metadt/hierarchy.hpp"
#include "metadt/iddtree.hpp"
#include "metadt/tape.hpp"

namespace metadt {

struct InnerLoopConfig {
    std::size_t steps = 25;  // M
    double lr = 0.05;        // alpha_inner

    void validate() const {
        if (lr <= 0.0) throw ConfigError("inner-loop learning rate must be positive");
    }
};

struct AdamConfig {
    double lr = 1e-4;
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

enum class GradMode { first_order, full_second_order };

struct OuterLoopConfig {
    std::size_t epochs = 20;
    std::size_t episodes_per_epoch = 50;
    AdamConfig optimizer;
    GradMode grad_mode = GradMode::first_order;

    void validate() const {
        if (epochs < 1) throw ConfigError("outer-loop epochs must be >= 1");
        if (optimizer.lr <= 0.0) throw ConfigError("outer-loop learning rate must be positive");
    }
};

struct ParamGrads {
    Matrix w0, w1, w2;

    ParamGrads() = default;
    explicit ParamGrads(const DTINetParams& like)
        : w0(like.w0.rows(), like.w0.cols()),
          w1(like.w1.rows(), like.w1.cols()),
          w2(like.w2.rows(), like.w2.cols()) {}
};

struct AdaptedState {
    DTINetParams params;                    // theta'_g
    std::vector<double> support_losses;     // length M+1
    std::vector<DTINetParams> trajectory;   // params before each step; back() == params
};

struct SupportLossResult {
    double loss;
    ParamGrads grads;
};

// Mean cross-entropy over the support set through the inferred tree, with
// gradients for all three weight matrices when requested.
inline SupportLossResult support_loss(const DTINetParams& params, const HierarchyGraph& g,
                                      const AdjacencyOperator& a_hat,
                                      const std::vector<LabeledFeature>& support,
                                      double gamma = 10.0, bool want_grad = true,
                                      const DropoutConfig& dropout = {},
                                      Phase phase = Phase::inner_adapt, Rng* rng = nullptr) {
    if (support.empty()) throw ContractError("support_loss: empty support set");
    GradTape t;
    DTINetVars w{t.input(params.w0, want_grad), t.input(params.w1, want_grad),
                 t.input(params.w2, want_grad)};
    Var theta = infer_tree_params_on_tape(t, w, g.semantic, a_hat, dropout, phase, rng);
    std::vector<Var> losses;
    losses.reserve(support.size());
    for (const auto& s : support) {
        if (s.label >= g.num_classes())
            throw IndexError("support label " + std::to_string(s.label) + " out of range");
        Var probs = class_probs_on_tape(t, theta, gamma, g, s.features);
        losses.push_back(t.cross_entropy(probs, s.label));
    }
    Var loss = t.mean(losses);
    SupportLossResult r;
    r.loss = t.scalar(loss);
    if (want_grad) {
        t.backward(loss);
        r.grads.w0 = t.grad(w.w0);
        r.grads.w1 = t.grad(w.w1);
        r.grads.w2 = t.grad(w.w2);
    }
    return r;
}

// M plain gradient-descent steps on the support loss. The initial params are
// never mutated; support_losses records the trajectory (initial loss first).
inline AdaptedState adapt(const DTINetParams& init, const std::vector<LabeledFeature>& support,
                          const HierarchyGraph& g, const AdjacencyOperator& a_hat,
                          const InnerLoopConfig& cfg, double gamma = 10.0) {
    cfg.validate();
    AdaptedState st;
    st.params = init;
    for (std::size_t m = 0; m < cfg.steps; ++m) {
        SupportLossResult r;
        try {
            r = support_loss(st.params, g, a_hat, support, gamma, true);
        } catch (const NumericError& e) {
            throw DivergenceError("inner loop diverged at step " + std::to_string(m) + ": " +
                                      e.what(),
                                  static_cast<long>(m));
        }
        if (!std::isfinite(r.loss))
            throw DivergenceError("non-finite support loss at step " + std::to_string(m),
                                  static_cast<long>(m));
        st.support_losses.push_back(r.loss);
        st.trajectory.push_back(st.params);
        st.params.w0 -= cfg.lr * r.grads.w0;
        st.params.w1 -= cfg.lr * r.grads.w1;
        st.params.w2 -= cfg.lr * r.grads.w2;
    }
    double final_loss = support_loss(st.params, g, a_hat, support, gamma, false).loss;
    if (!std::isfinite(final_loss))
        throw DivergenceError("non-finite support loss after adaptation",
                              static_cast<long>(cfg.steps));
    st.support_losses.push_back(final_loss);
    st.trajectory.push_back(st.params);
    return st;
}

// Class distribution for one query under the adapted tree, dropout disabled.
inline ClassDistribution query_distribution(const AdaptedState& adapted, const HierarchyGraph& g,
                                            const AdjacencyOperator& a_hat,
                                            const std::vector<double>& x_feat,
                                            double gamma = 10.0) {
    TreeParams tp = infer_tree_params(adapted.params, g.semantic, a_hat, {}, Phase::eval, nullptr,
                                      gamma);
    return class_probs(tp, g, x_feat);
}

// ---------------------------------------------------------------------------
// Outer loop.

struct Task {
    Episode episode;
    HierarchyGraph g;
    AdjacencyOperator a_hat;
};

using TaskStream = std::function<Task(Rng&)>;

struct TrainRecord {
    std::size_t epoch;
    std::size_t episode;
    double support_loss_initial;
    double support_loss_final;
    double query_loss;
    double query_accuracy;
    long wall_ms;
};

struct AdamState {
    Matrix m, v;
    explicit AdamState(const Matrix& like) : m(like.rows(), like.cols()), v(like.rows(), like.cols()) {}

    void step(Matrix& param, const Matrix& grad, const AdamConfig& cfg, std::size_t t) {
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < param.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            double mh = m[i] / bc1;
            double vh = v[i] / bc2;
            // Decoupled weight decay; the inner loop never sees it.
            param[i] -= cfg.lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * param[i]);
        }
    }
};

struct QueryLossResult {
    double loss;
    double accuracy;
    ParamGrads grads;  // w.r.t. the adapted params
};

inline QueryLossResult query_loss_and_grad(const DTINetParams& adapted, const Task& task,
                                           double gamma, const DropoutConfig& dropout,
                                           Phase phase, Rng* rng, bool want_grad) {
    GradTape t;
    DTINetVars w{t.input(adapted.w0, want_grad), t.input(adapted.w1, want_grad),
                 t.input(adapted.w2, want_grad)};
    Var theta = infer_tree_params_on_tape(t, w, task.g.semantic, task.a_hat, dropout, phase, rng);
    std::vector<Var> losses;
    std::size_t correct = 0;
    for (const auto& q : task.episode.query) {
        Var probs = class_probs_on_tape(t, theta, gamma, task.g, q.features);
        if (argmax_class(t.value(probs).data()) == q.label) ++correct;
        losses.push_back(t.cross_entropy(probs, q.label));
    }
    Var loss = t.mean(losses);
    QueryLossResult r;
    r.loss = t.scalar(loss);
    r.accuracy = static_cast<double>(correct) / static_cast<double>(task.episode.query.size());
    if (want_grad) {
        t.backward(loss);
        r.grads.w0 = t.grad(w.w0);
        r.grads.w1 = t.grad(w.w1);
        r.grads.w2 = t.grad(w.w2);
    }
    return r;
}

namespace detail {

// Hessian-vector product of the support loss via central differences of the
// analytic gradient.
inline ParamGrads support_hvp(const DTINetParams& at, const ParamGrads& v, const Task& task,
                              double gamma) {
    const double h = 1e-5;
    DTINetParams plus = at, minus = at;
    plus.w0 += h * v.w0;
    plus.w1 += h * v.w1;
    plus.w2 += h * v.w2;
    minus.w0 -= h * v.w0;
    minus.w1 -= h * v.w1;
    minus.w2 -= h * v.w2;
    auto gp = support_loss(plus, task.g, task.a_hat, task.episode.support, gamma, true).grads;
    auto gm = support_loss(minus, task.g, task.a_hat, task.episode.support, gamma, true).grads;
    ParamGrads out(at);
    out.w0 = (gp.w0 - gm.w0) * (0.5 / h);
    out.w1 = (gp.w1 - gm.w1) * (0.5 / h);
    out.w2 = (gp.w2 - gm.w2) * (0.5 / h);
    return out;
}

}  // namespace detail

// Gradient of the query loss with respect to the *initial* params. First
// order keeps the adapted-point gradient; full second order backpropagates
// through the inner updates with Hessian-vector products, supported for
// M <= 3 only.
inline ParamGrads outer_gradient(const AdaptedState& adapted, const Task& task, double gamma,
                                 const InnerLoopConfig& inner, GradMode mode,
                                 const ParamGrads& query_grad_at_adapted) {
    if (mode == GradMode::first_order) return query_grad_at_adapted;
    if (inner.steps > 3)
        throw ConfigError("full_second_order supported for M <= 3 inner steps, got M=" +
                          std::to_string(inner.steps));
    ParamGrads g = query_grad_at_adapted;
    for (std::size_t m = inner.steps; m-- > 0;) {
        ParamGrads hv = detail::support_hvp(adapted.trajectory[m], g, task, gamma);
        g.w0 -= inner.lr * hv.w0;
        g.w1 -= inner.lr * hv.w1;
        g.w2 -= inner.lr * hv.w2;
    }
    return g;
}

struct TrainResult {
    DTINetParams params;
    std::vector<TrainRecord> log;
};

// Episodic meta-training (Adam with decoupled weight decay, one episode per
// outer update).
inline TrainResult meta_train(const DTINetParams& init, const TaskStream& stream,
                              const InnerLoopConfig& inner, const OuterLoopConfig& outer,
                              Rng& rng, double gamma = 10.0, const DropoutConfig& dropout = {},
                              const std::function<void(const TrainRecord&)>& on_record = {}) {
    inner.validate();
    outer.validate();
    TrainResult res;
    res.params = init;
    AdamState a0(init.w0), a1(init.w1), a2(init.w2);
    std::size_t t = 0;
    for (std::size_t epoch = 0; epoch < outer.epochs; ++epoch) {
        for (std::size_t ep = 0; ep < outer.episodes_per_epoch; ++ep) {
            auto t0 = std::chrono::steady_clock::now();
            Task task = stream(rng);
            AdaptedState adapted;
            QueryLossResult q;
            try {
                adapted = adapt(res.params, task.episode.support, task.g, task.a_hat, inner, gamma);
                q = query_loss_and_grad(adapted.params, task, gamma, dropout, Phase::outer_train,
                                        &rng, true);
            } catch (const DivergenceError& e) {
                throw DivergenceError("meta_train: epoch " + std::to_string(epoch) + " episode " +
                                          std::to_string(ep) + ": " + e.what(),
                                      e.step());
            }
            ParamGrads g = outer_gradient(adapted, task, gamma, inner, outer.grad_mode, q.grads);
            ++t;
            a0.step(res.params.w0, g.w0, outer.optimizer, t);
            a1.step(res.params.w1, g.w1, outer.optimizer, t);
            a2.step(res.params.w2, g.w2, outer.optimizer, t);
            auto t1 = std::chrono::steady_clock::now();
            TrainRecord rec{epoch,
                            ep,
                            adapted.support_losses.front(),
                            adapted.support_losses.back(),
                            q.loss,
                            q.accuracy,
                            std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count()};
            res.log.push_back(rec);
            if (on_record) on_record(rec);
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Meta-test.

struct EpisodeEval {
    std::vector<std::size_t> predictions;
    std::vector<ClassDistribution> distributions;
    double accuracy;
    AdaptedState adapted;
};

inline EpisodeEval eval_episode(const DTINetParams& params, const Task& task,
                                const InnerLoopConfig& inner, double gamma = 10.0) {
    EpisodeEval ev;
    ev.adapted = adapt(params, task.episode.support, task.g, task.a_hat, inner, gamma);
    TreeParams tp = infer_tree_params(ev.adapted.params, task.g.semantic, task.a_hat, {},
                                      Phase::eval, nullptr, gamma);
    std::size_t correct = 0;
    for (const auto& q : task.episode.query) {
        ClassDistribution d = class_probs(tp, task.g, q.features);
        std::size_t pred = argmax_class(d.probs);
        if (pred == q.label) ++correct;
        ev.predictions.push_back(pred);
        ev.distributions.push_back(std::move(d));
    }
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(task.episode.query.size());
    return ev;
}

struct AccuracyReport {
    double mean = 0.0;
    double ci95 = 0.0;  // 1.96 * sigma / sqrt(n)
    std::vector<double> per_episode;
};

inline AccuracyReport summarize_accuracies(const std::vector<double>& acc) {
    AccuracyReport rep;
    rep.per_episode = acc;
    if (acc.empty()) return rep;
    double n = static_cast<double>(acc.size());
    for (double a : acc) rep.mean += a;
    rep.mean /= n;
    double var = 0.0;
    for (double a : acc) var += (a - rep.mean) * (a - rep.mean);
    double sigma = acc.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    rep.ci95 = 1.96 * sigma / std::sqrt(n);
    return rep;
}

inline AccuracyReport meta_test(const DTINetParams& trained, const std::vector<Task>& episodes,
                                const InnerLoopConfig& inner, double gamma = 10.0) {
    std::vector<double> acc;
    acc.reserve(episodes.size());
    for (const auto& task : episodes)
        acc.push_back(eval_episode(trained, task, inner, gamma).accuracy);
    return summarize_accuracies(acc);
}

}  // namespace metadt

#endif
