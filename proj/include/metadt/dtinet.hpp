#ifndef METADT_DTINET_HPP
#define METADT_DTINET_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "metadt/errors.hpp"
#include "metadt/hierarchy.hpp"
#include "metadt/matrix.hpp"
#include "metadt/rng.hpp"
#include "metadt/tape.hpp"

namespace metadt {

struct Dims {
    std::size_t d_s = 16;
    std::size_t d_in = 32;
    std::size_t d_hid = 64;
    std::size_t d_f = 32;

    // Full-size configuration used by the original experiments.
    static Dims paper() { return Dims{300, 1024, 2048, 640}; }
};

// theta_g = {W0, W1, W2}: the three weight matrices of the inference network.
struct DTINetParams {
    Matrix w0;  // d_s x d_in
    Matrix w1;  // d_in x d_hid
    Matrix w2;  // d_hid x d_f

    bool same_shape(const DTINetParams& o) const {
        return w0.same_shape(o.w0) && w1.same_shape(o.w1) && w2.same_shape(o.w2);
    }
};

enum class Phase { outer_train, inner_adapt, eval };

struct DropoutConfig {
    double rate = 0.0;
    bool on_outer_train = true;
    bool on_inner_adapt = false;
    bool on_eval = false;

    bool enabled_for(Phase p) const {
        if (rate <= 0.0) return false;
        switch (p) {
            case Phase::outer_train: return on_outer_train;
            case Phase::inner_adapt: return on_inner_adapt;
            case Phase::eval: return on_eval;
        }
        return false;
    }
};

// Per-node tree parameters with the sibling-softmax scale.
struct TreeParams {
    Matrix weights;  // F x d_f, row i = theta_d^i
    double gamma = 10.0;
};

struct DTINetVars {
    Var w0, w1, w2;
};

inline void check_infer_shapes(const DTINetParams& p, const Matrix& h, const Matrix& a_hat) {
    if (a_hat.rows() != a_hat.cols() || a_hat.rows() != h.rows())
        throw ShapeError("dtinet: adjacency " + a_hat.shape_str() + " vs semantic " +
                         h.shape_str());
    if (h.cols() != p.w0.rows())
        throw ShapeError("dtinet layer 0: semantic " + h.shape_str() + " vs W0 " +
                         p.w0.shape_str());
    if (p.w0.cols() != p.w1.rows())
        throw ShapeError("dtinet layer 1: W0 " + p.w0.shape_str() + " vs W1 " + p.w1.shape_str());
    if (p.w1.cols() != p.w2.rows())
        throw ShapeError("dtinet layer 2: W1 " + p.w1.shape_str() + " vs W2 " + p.w2.shape_str());
}

inline Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
    Matrix m(rows, cols);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double keep = 1.0 - rate;
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = u(rng) < keep ? 1.0 / keep : 0.0;
    return m;
}

// theta_d = A^ relu(A^ relu(A^ H W0) W1) W2, recorded on the tape so gradients
// flow to all three weight matrices. Dropout (inverted scaling) is applied
// after each ReLU only in the enabled phases.
inline Var infer_tree_params_on_tape(GradTape& t, const DTINetVars& w, const Matrix& h,
                                     const AdjacencyOperator& a_hat,
                                     const DropoutConfig& dropout = {},
                                     Phase phase = Phase::eval, Rng* rng = nullptr) {
    DTINetParams shapes{t.value(w.w0), t.value(w.w1), t.value(w.w2)};
    check_infer_shapes(shapes, h, a_hat.a_hat);
    bool drop = dropout.enabled_for(phase);
    if (drop && !rng) throw ContractError("dtinet: dropout enabled but no rng supplied");

    Var A = t.constant(a_hat.a_hat);
    Var ah = t.constant(matmul_plain(a_hat.a_hat, h));
    Var x = t.relu(t.matmul(ah, w.w0));
    if (drop) x = t.mask(x, dropout_mask(t.value(x).rows(), t.value(x).cols(), dropout.rate, *rng));
    x = t.relu(t.matmul(t.matmul(A, x), w.w1));
    if (drop) x = t.mask(x, dropout_mask(t.value(x).rows(), t.value(x).cols(), dropout.rate, *rng));
    Var out = t.matmul(t.matmul(A, x), w.w2);
    if (!t.value(out).finite()) throw NumericError("dtinet: non-finite output layer");
    return out;
}

inline TreeParams infer_tree_params(const DTINetParams& p, const Matrix& h,
                                    const AdjacencyOperator& a_hat,
                                    const DropoutConfig& dropout = {}, Phase phase = Phase::eval,
                                    Rng* rng = nullptr, double gamma = 10.0) {
    GradTape t;
    DTINetVars w{t.input(p.w0, false), t.input(p.w1, false), t.input(p.w2, false)};
    Var out = infer_tree_params_on_tape(t, w, h, a_hat, dropout, phase, rng);
    return TreeParams{t.value(out), gamma};
}

// Glorot-uniform initialization, deterministic under a fixed seed.
inline Matrix glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = u(rng);
    return m;
}

inline DTINetParams init_params(const Dims& d, Rng& rng) {
    if (d.d_s == 0 || d.d_in == 0 || d.d_hid == 0 || d.d_f == 0)
        throw ConfigError("init_params: zero dimension");
    DTINetParams p;
    p.w0 = glorot_uniform(d.d_s, d.d_in, rng);
    p.w1 = glorot_uniform(d.d_in, d.d_hid, rng);
    p.w2 = glorot_uniform(d.d_hid, d.d_f, rng);
    return p;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "MDTC", u32 version, then rows/cols/payload for each of
// W0, W1, W2 (little-endian f64), then a 32-byte config digest.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
inline void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ParseError("checkpoint truncated");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}
inline void put_matrix(std::ofstream& out, const Matrix& m) {
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    static_assert(sizeof(double) == 8);
    out.write(reinterpret_cast<const char*>(m.data().data()),
              static_cast<std::streamsize>(m.size() * 8));
}
inline Matrix get_matrix(std::ifstream& in) {
    std::uint32_t r = get_u32(in), c = get_u32(in);
    Matrix m(r, c);
    in.read(reinterpret_cast<char*>(m.data().data()), static_cast<std::streamsize>(m.size() * 8));
    if (!in) throw ParseError("checkpoint truncated");
    return m;
}
}  // namespace detail

// Atomic write: stream to <path>.tmp, then rename.
inline void save_checkpoint(const DTINetParams& p, const std::array<std::uint8_t, 32>& digest,
                            const std::string& path) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ParseError("cannot write checkpoint: " + tmp);
        out.write("MDTC", 4);
        detail::put_u32(out, kCheckpointVersion);
        detail::put_matrix(out, p.w0);
        detail::put_matrix(out, p.w1);
        detail::put_matrix(out, p.w2);
        out.write(reinterpret_cast<const char*>(digest.data()), 32);
        if (!out) throw ParseError("checkpoint write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw ParseError("cannot move checkpoint into place: " + path);
}

struct Checkpoint {
    DTINetParams params;
    std::array<std::uint8_t, 32> config_digest;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "MDTC")
        throw ParseError("not a checkpoint file: " + path);
    std::uint32_t version = detail::get_u32(in);
    if (version != kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    c.params.w0 = detail::get_matrix(in);
    c.params.w1 = detail::get_matrix(in);
    c.params.w2 = detail::get_matrix(in);
    in.read(reinterpret_cast<char*>(c.config_digest.data()), 32);
    if (!in) throw ParseError("checkpoint truncated: " + path);
    return c;
}

}  // namespace metadt

#endif
