#ifndef METADT_TAPE_HPP
#define METADT_TAPE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "metadt/errors.hpp"
#include "metadt/matrix.hpp"

namespace metadt {

// Handle to a value recorded on a GradTape.
struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

// Reverse-mode tape over matrix-valued primitives. The computation graph is
// fixed and small (GCN layers -> cosine-softmax tree -> cross-entropy), so
// primitives are recorded at matrix granularity. A tape is confined to one
// logical thread; Matrix values are immutable and safe to share.
class GradTape {
public:
    static constexpr double kCosineNormFloor = 1e-12;
    static constexpr double kCrossEntropyEps = 1e-12;

    Var input(Matrix value, bool requires_grad = true) {
        check_finite(value, "input");
        return push(std::move(value), requires_grad, nullptr);
    }
    Var constant(Matrix value) { return input(std::move(value), false); }

    const Matrix& value(Var v) const { return node(v).value; }
    double scalar(Var v) const {
        const Matrix& m = node(v).value;
        if (m.size() != 1) throw ShapeError("scalar() on " + m.shape_str() + " node");
        return m[0];
    }

    // Gradient of the last backward() target with respect to v.
    const Matrix& grad(Var v) const {
        const Node& n = node(v);
        if (n.grad.empty() && n.value.size() > 0)
            const_cast<Node&>(n).grad = Matrix(n.value.rows(), n.value.cols());
        return n.grad;
    }

    Var matmul(Var a, Var b) {
        const Matrix& A = value(a);
        const Matrix& B = value(b);
        Matrix C = matmul_plain(A, B);
        return push(std::move(C), needs(a) || needs(b), [a, b](GradTape& t, const Matrix& gC) {
            if (t.needs(a)) t.accum(a, matmul_plain(gC, t.value(b).transpose()));
            if (t.needs(b)) t.accum(b, matmul_plain(t.value(a).transpose(), gC));
        });
    }

    Var relu(Var a) {
        Matrix out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
        return push(std::move(out), needs(a), [a](GradTape& t, const Matrix& g) {
            if (!t.needs(a)) return;
            const Matrix& x = t.value(a);
            Matrix gx = g;
            for (std::size_t i = 0; i < gx.size(); ++i)
                if (x[i] <= 0.0) gx[i] = 0.0;
            t.accum(a, gx);
        });
    }

    Var add(Var a, Var b) {
        Matrix out = value(a) + value(b);
        return push(std::move(out), needs(a) || needs(b), [a, b](GradTape& t, const Matrix& g) {
            if (t.needs(a)) t.accum(a, g);
            if (t.needs(b)) t.accum(b, g);
        });
    }

    Var scale(Var a, double s) {
        Matrix out = value(a) * s;
        return push(std::move(out), needs(a), [a, s](GradTape& t, const Matrix& g) {
            if (t.needs(a)) t.accum(a, g * s);
        });
    }

    // Elementwise product of two recorded values.
    Var mul_elem(Var a, Var b) {
        Matrix out = hadamard_plain(value(a), value(b));
        return push(std::move(out), needs(a) || needs(b), [a, b](GradTape& t, const Matrix& g) {
            if (t.needs(a)) t.accum(a, hadamard_plain(g, t.value(b)));
            if (t.needs(b)) t.accum(b, hadamard_plain(g, t.value(a)));
        });
    }

    // Elementwise product with a fixed mask (dropout).
    Var mask(Var a, Matrix m) {
        Matrix out = hadamard_plain(value(a), m);
        return push(std::move(out), needs(a),
                    [a, m = std::move(m)](GradTape& t, const Matrix& g) {
                        if (t.needs(a)) t.accum(a, hadamard_plain(g, m));
                    });
    }

    Var sum(Var a) {
        double s = 0.0;
        for (double v : value(a).data()) s += v;
        return push(Matrix(1, 1, {s}), needs(a), [a](GradTape& t, const Matrix& g) {
            if (!t.needs(a)) return;
            Matrix gx(t.value(a).rows(), t.value(a).cols(), g[0]);
            t.accum(a, gx);
        });
    }

    // cos(u, v) for two recorded vectors; gradient flows to both.
    Var cosine(Var u, Var v) {
        const Matrix& U = value(u);
        const Matrix& V = value(v);
        if (U.size() != V.size())
            throw ShapeError("cosine length mismatch: " + U.shape_str() + " vs " + V.shape_str());
        double nu = norm(U.data()), nv = norm(V.data());
        if (nu < kCosineNormFloor || nv < kCosineNormFloor)
            throw DegenerateInputError("cosine: zero-norm argument");
        double c = dot(U.data(), V.data()) / (nu * nv);
        return push(Matrix(1, 1, {c}), needs(u) || needs(v),
                    [u, v, nu, nv, c](GradTape& t, const Matrix& g) {
                        const auto& ud = t.value(u).data();
                        const auto& vd = t.value(v).data();
                        if (t.needs(u)) {
                            Matrix gu(t.value(u).rows(), t.value(u).cols());
                            for (std::size_t i = 0; i < ud.size(); ++i)
                                gu[i] = g[0] * (vd[i] / (nu * nv) - c * ud[i] / (nu * nu));
                            t.accum(u, gu);
                        }
                        if (t.needs(v)) {
                            Matrix gv(t.value(v).rows(), t.value(v).cols());
                            for (std::size_t i = 0; i < vd.size(); ++i)
                                gv[i] = g[0] * (ud[i] / (nu * nv) - c * vd[i] / (nv * nv));
                            t.accum(v, gv);
                        }
                    });
    }

    // Row-wise cosine of a recorded F x d matrix against a fixed d-vector x.
    // Output is 1 x F with s_i = cos(theta_i, x).
    Var cosine_rows(Var theta, const std::vector<double>& x) {
        const Matrix& T = value(theta);
        if (T.cols() != x.size())
            throw ShapeError("cosine_rows: " + T.shape_str() + " vs vector of length " +
                             std::to_string(x.size()));
        double nx = norm(x);
        if (nx < kCosineNormFloor) throw DegenerateInputError("cosine_rows: zero-norm feature");
        Matrix s(1, T.rows());
        std::vector<double> rnorm(T.rows());
        for (std::size_t i = 0; i < T.rows(); ++i) {
            auto r = T.row_vec(i);
            rnorm[i] = norm(r);
            if (rnorm[i] < kCosineNormFloor)
                throw DegenerateInputError("cosine_rows: zero-norm prototype at row " +
                                           std::to_string(i));
            s[i] = dot(r, x) / (rnorm[i] * nx);
        }
        Matrix sval = s;
        return push(std::move(sval), needs(theta),
                    [theta, x, nx, rnorm = std::move(rnorm), s = std::move(s)](
                        GradTape& t, const Matrix& g) {
                        if (!t.needs(theta)) return;
                        const Matrix& T = t.value(theta);
                        Matrix gT(T.rows(), T.cols());
                        for (std::size_t i = 0; i < T.rows(); ++i)
                            for (std::size_t j = 0; j < T.cols(); ++j)
                                gT(i, j) = g[i] * (x[j] / (rnorm[i] * nx) -
                                                   s[i] * T(i, j) / (rnorm[i] * rnorm[i]));
                        t.accum(theta, gT);
                    });
    }

    // Subset of a recorded row vector.
    Var gather(Var v, std::vector<std::size_t> idx) {
        const Matrix& V = value(v);
        Matrix out(1, idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] >= V.size())
                throw IndexError("gather index " + std::to_string(idx[i]) + " out of range " +
                                 std::to_string(V.size()));
            out[i] = V[idx[i]];
        }
        return push(std::move(out), needs(v),
                    [v, idx = std::move(idx)](GradTape& t, const Matrix& g) {
                        if (!t.needs(v)) return;
                        Matrix gv(t.value(v).rows(), t.value(v).cols());
                        for (std::size_t i = 0; i < idx.size(); ++i) gv[idx[i]] += g[i];
                        t.accum(v, gv);
                    });
    }

    // softmax(gamma * logits), max-subtracted for stability.
    Var softmax_scaled(Var logits, double gamma) {
        const Matrix& L = value(logits);
        if (L.size() == 0) throw ShapeError("softmax_scaled: empty logits");
        Matrix p = softmax_scaled_plain(L, gamma);
        Matrix pv = p;
        return push(std::move(pv), needs(logits),
                    [logits, gamma, p = std::move(p)](GradTape& t, const Matrix& g) {
                        if (!t.needs(logits)) return;
                        double gp = 0.0;
                        for (std::size_t i = 0; i < p.size(); ++i) gp += g[i] * p[i];
                        Matrix gl(t.value(logits).rows(), t.value(logits).cols());
                        for (std::size_t i = 0; i < p.size(); ++i)
                            gl[i] = gamma * p[i] * (g[i] - gp);
                        t.accum(logits, gl);
                    });
    }

    Var log(Var v) {
        Matrix out = value(v);
        for (double& x : out.data()) x = std::log(x);
        check_finite(out, "log");
        return push(std::move(out), needs(v), [v](GradTape& t, const Matrix& g) {
            if (!t.needs(v)) return;
            const Matrix& x = t.value(v);
            Matrix gv = g;
            for (std::size_t i = 0; i < gv.size(); ++i) gv[i] /= x[i];
            t.accum(v, gv);
        });
    }

    Var pick(Var v, std::size_t i) { return gather(v, {i}); }

    // Scalar product of recorded scalars (chained pairwise).
    Var mul(Var a, Var b) { return mul_elem(a, b); }

    // Row vector assembled from recorded scalars.
    Var concat(const std::vector<Var>& parts) {
        std::vector<double> vals;
        for (Var p : parts) vals.push_back(scalar(p));
        bool ng = false;
        for (Var p : parts) ng = ng || needs(p);
        return push(Matrix::row(vals), ng, [parts](GradTape& t, const Matrix& g) {
            for (std::size_t i = 0; i < parts.size(); ++i)
                if (t.needs(parts[i])) t.accum(parts[i], Matrix(1, 1, {g[i]}));
        });
    }

    // -log(probs[label] + eps)
    Var cross_entropy(Var probs, std::size_t label) {
        const Matrix& P = value(probs);
        if (label >= P.size())
            throw IndexError("cross_entropy label " + std::to_string(label) + " out of range " +
                             std::to_string(P.size()));
        double loss = -std::log(P[label] + kCrossEntropyEps);
        return push(Matrix(1, 1, {loss}), needs(probs),
                    [probs, label](GradTape& t, const Matrix& g) {
                        if (!t.needs(probs)) return;
                        const Matrix& P = t.value(probs);
                        Matrix gp(P.rows(), P.cols());
                        gp[label] = -g[0] / (P[label] + kCrossEntropyEps);
                        t.accum(probs, gp);
                    });
    }

    Var mean(const std::vector<Var>& scalars) {
        if (scalars.empty()) throw ShapeError("mean of zero scalars");
        double s = 0.0;
        bool ng = false;
        for (Var v : scalars) {
            s += scalar(v);
            ng = ng || needs(v);
        }
        double inv = 1.0 / static_cast<double>(scalars.size());
        return push(Matrix(1, 1, {s * inv}), ng, [scalars, inv](GradTape& t, const Matrix& g) {
            for (Var v : scalars)
                if (t.needs(v)) t.accum(v, Matrix(1, 1, {g[0] * inv}));
        });
    }

    // Reverse sweep from a recorded scalar loss. Adjoints of earlier
    // backward() calls are cleared first.
    void backward(Var loss) {
        const Node& ln = node(loss);
        if (ln.value.size() != 1) throw TapeError("backward target is not a scalar");
        for (Node& n : nodes_) n.grad = Matrix();
        node_mut(loss).grad = Matrix(1, 1, {1.0});
        for (int i = loss.idx; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.backprop || n.grad.empty()) continue;
            n.backprop(*this, n.grad);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad;
        std::function<void(GradTape&, const Matrix&)> backprop;
    };

    static Matrix softmax_scaled_plain(const Matrix& L, double gamma) {
        double mx = L[0] * gamma;
        for (double v : L.data()) mx = std::max(mx, v * gamma);
        Matrix p = L;
        double z = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = std::exp(L[i] * gamma - mx);
            z += p[i];
        }
        for (std::size_t i = 0; i < p.size(); ++i) p[i] /= z;
        return p;
    }

    bool needs(Var v) const { return node(v).requires_grad; }

    void accum(Var v, const Matrix& g) {
        Node& n = node_mut(v);
        if (n.grad.empty())
            n.grad = g;
        else
            n.grad += g;
    }

    const Node& node(Var v) const {
        if (!v.valid() || static_cast<std::size_t>(v.idx) >= nodes_.size())
            throw TapeError("variable not recorded on this tape");
        return nodes_[v.idx];
    }
    Node& node_mut(Var v) { return const_cast<Node&>(node(v)); }

    static void check_finite(const Matrix& m, const char* op) {
        if (!m.finite()) throw NumericError(std::string("non-finite result in ") + op);
    }

    Var push(Matrix value, bool requires_grad,
             std::function<void(GradTape&, const Matrix&)> backprop) {
        check_finite(value, "op");
        nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(backprop)});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
};

// Plain (tape-free) helpers shared with the forward-only paths.
inline std::vector<double> softmax_scaled(const std::vector<double>& logits, double gamma) {
    if (logits.empty()) throw ShapeError("softmax_scaled: empty logits");
    double mx = logits[0] * gamma;
    for (double v : logits) mx = std::max(mx, v * gamma);
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i] * gamma - mx);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

inline double cosine_similarity(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size()) throw ShapeError("cosine_similarity: length mismatch");
    double nu = norm(u), nv = norm(v);
    if (nu < GradTape::kCosineNormFloor || nv < GradTape::kCosineNormFloor)
        throw DegenerateInputError("cosine_similarity: zero-norm argument");
    return dot(u, v) / (nu * nv);
}

inline double cross_entropy(const std::vector<double>& probs, std::size_t label) {
    if (label >= probs.size())
        throw IndexError("cross_entropy label out of range");
    return -std::log(probs[label] + GradTape::kCrossEntropyEps);
}

}  // namespace metadt

#endif
