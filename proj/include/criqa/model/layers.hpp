#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "criqa/error.hpp"
#include "criqa/rng.hpp"

namespace criqa {

template <class Real>
using MatX = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using VecX = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

/// One named tensor of learnable weights plus its gradient accumulator.
/// Vectors are stored as 1 x N matrices so every parameter serializes the
/// same way.
template <class Real>
struct Param {
    std::string name;
    MatX<Real> value;
    MatX<Real> grad;

    void resize(std::string param_name, Eigen::Index rows, Eigen::Index cols) {
        name = std::move(param_name);
        value.setZero(rows, cols);
        grad.setZero(rows, cols);
    }
    void zero_grad() { grad.setZero(); }
    std::size_t count() const { return static_cast<std::size_t>(value.size()); }
};

namespace nn {

template <class Real>
inline void init_trunc_normal(MatX<Real>& m, Rng& rng, double stddev = 0.02) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            m(i, j) = static_cast<Real>(rng.trunc_normal(stddev));
        }
    }
}

// ---------------------------------------------------------------------------
// Dense: Y = X W + b (b broadcast over rows)

template <class Real>
struct Dense {
    Param<Real> weight;  // in x out
    Param<Real> bias;    // 1 x out

    struct Cache {
        MatX<Real> input;
    };

    void init(const std::string& name, int in, int out, Rng& rng) {
        weight.resize(name + ".weight", in, out);
        bias.resize(name + ".bias", 1, out);
        init_trunc_normal(weight.value, rng);
    }

    MatX<Real> forward(const MatX<Real>& x, Cache& cache) const {
        cache.input = x;
        return (x * weight.value).rowwise() + bias.value.row(0);
    }

    MatX<Real> backward(const Cache& cache, const MatX<Real>& dy) {
        weight.grad.noalias() += cache.input.transpose() * dy;
        bias.grad.row(0) += dy.colwise().sum();
        return dy * weight.value.transpose();
    }

    void collect(std::vector<Param<Real>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

// ---------------------------------------------------------------------------
// LayerNorm over the feature axis (row-wise)

template <class Real>
struct LayerNorm {
    Param<Real> gamma;  // 1 x D
    Param<Real> beta;   // 1 x D
    static constexpr double kEps = 1e-5;

    struct Cache {
        MatX<Real> xhat;
        VecX<Real> inv_std;
    };

    void init(const std::string& name, int dim) {
        gamma.resize(name + ".gamma", 1, dim);
        beta.resize(name + ".beta", 1, dim);
        gamma.value.setOnes();
    }

    MatX<Real> forward(const MatX<Real>& x, Cache& cache) const {
        const Eigen::Index n = x.rows(), d = x.cols();
        cache.xhat.resize(n, d);
        cache.inv_std.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Real mean = x.row(i).mean();
            const Real var = (x.row(i).array() - mean).square().sum() / static_cast<Real>(d);
            const Real inv = Real(1) / std::sqrt(var + static_cast<Real>(kEps));
            cache.inv_std(i) = inv;
            cache.xhat.row(i) = (x.row(i).array() - mean) * inv;
        }
        return ((cache.xhat.array().rowwise() * gamma.value.row(0).array()).rowwise() +
                beta.value.row(0).array())
            .matrix();
    }

    MatX<Real> backward(const Cache& cache, const MatX<Real>& dy) {
        const Eigen::Index n = dy.rows(), d = dy.cols();
        gamma.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
        beta.grad.row(0) += dy.colwise().sum();
        MatX<Real> dx(n, d);
        for (Eigen::Index i = 0; i < n; ++i) {
            // dL/dxhat for this row
            const Eigen::Array<Real, 1, Eigen::Dynamic> g =
                dy.row(i).array() * gamma.value.row(0).array();
            const Real mean_g = g.mean();
            const Real mean_gx = (g * cache.xhat.row(i).array()).mean();
            dx.row(i) = ((g - mean_g - cache.xhat.row(i).array() * mean_gx) *
                         cache.inv_std(i))
                            .matrix();
        }
        return dx;
    }

    void collect(std::vector<Param<Real>*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

// ---------------------------------------------------------------------------
// Exact GELU: x * CDF(x) with the erf form, not the tanh approximation, so
// finite-difference checks see the true derivative.

template <class Real>
struct Gelu {
    struct Cache {
        MatX<Real> input;
    };

    static MatX<Real> forward(const MatX<Real>& x, Cache& cache) {
        cache.input = x;
        return x.unaryExpr([](Real v) {
            return static_cast<Real>(0.5 * static_cast<double>(v) *
                                     (1.0 + std::erf(static_cast<double>(v) *
                                                     0.7071067811865476)));
        });
    }

    static MatX<Real> backward(const Cache& cache, const MatX<Real>& dy) {
        MatX<Real> dx = cache.input.unaryExpr([](Real v) {
            const double x = static_cast<double>(v);
            const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
            const double pdf = 0.3989422804014327 * std::exp(-0.5 * x * x);
            return static_cast<Real>(cdf + x * pdf);
        });
        return dx.cwiseProduct(dy);
    }
};

// ---------------------------------------------------------------------------
// Multi-head attention. Queries come from x_q, keys/values from x_kv, so the
// same block serves self-attention (x_q == x_kv) and cross-attention.

template <class Real>
struct Attention {
    int heads = 1;
    Dense<Real> wq, wk, wv, wo;

    struct Cache {
        typename Dense<Real>::Cache q_in, k_in, v_in, o_in;
        MatX<Real> q, k, v;              // projected, full width
        std::vector<MatX<Real>> probs;   // per head: n_q x n_k softmax rows
    };

    void init(const std::string& name, int dim, int n_heads, Rng& rng) {
        heads = n_heads;
        wq.init(name + ".wq", dim, dim, rng);
        wk.init(name + ".wk", dim, dim, rng);
        wv.init(name + ".wv", dim, dim, rng);
        wo.init(name + ".wo", dim, dim, rng);
    }

    /// capture, when non-null, receives a copy of each head's probability
    /// matrix (rows sum to 1).
    MatX<Real> forward(const MatX<Real>& x_q, const MatX<Real>& x_kv, Cache& cache,
                       std::vector<MatX<Real>>* capture = nullptr) const {
        const Eigen::Index dim = x_q.cols();
        const Eigen::Index dh = dim / heads;
        const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));

        cache.q = wq.forward(x_q, cache.q_in);
        cache.k = wk.forward(x_kv, cache.k_in);
        cache.v = wv.forward(x_kv, cache.v_in);
        cache.probs.assign(heads, MatX<Real>());

        MatX<Real> concat(x_q.rows(), dim);
        for (int h = 0; h < heads; ++h) {
            const auto qh = cache.q.middleCols(h * dh, dh);
            const auto kh = cache.k.middleCols(h * dh, dh);
            const auto vh = cache.v.middleCols(h * dh, dh);
            MatX<Real> scores = qh * kh.transpose() * scale;
            // Row-wise softmax, max-shifted for stability.
            for (Eigen::Index i = 0; i < scores.rows(); ++i) {
                const Real m = scores.row(i).maxCoeff();
                scores.row(i) = (scores.row(i).array() - m).exp();
                scores.row(i) /= scores.row(i).sum();
            }
            cache.probs[h] = std::move(scores);
            concat.middleCols(h * dh, dh).noalias() = cache.probs[h] * vh;
        }
        if (capture != nullptr) *capture = cache.probs;
        return wo.forward(concat, cache.o_in);
    }

    /// Returns dX_q and accumulates dX_kv (self-attention callers pass the
    /// same matrix for both accumulators' source and sum the results).
    MatX<Real> backward(const Cache& cache, const MatX<Real>& dy, MatX<Real>& dx_kv_accum) {
        const Eigen::Index dim = cache.q.cols();
        const Eigen::Index dh = dim / heads;
        const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));

        const MatX<Real> d_concat = wo.backward(cache.o_in, dy);
        MatX<Real> dq(cache.q.rows(), dim), dk(cache.k.rows(), dim), dv(cache.v.rows(), dim);
        for (int h = 0; h < heads; ++h) {
            const auto kh = cache.k.middleCols(h * dh, dh);
            const auto vh = cache.v.middleCols(h * dh, dh);
            const MatX<Real>& p = cache.probs[h];
            const auto d_oh = d_concat.middleCols(h * dh, dh);

            const MatX<Real> dp = d_oh * vh.transpose();
            dv.middleCols(h * dh, dh).noalias() = p.transpose() * d_oh;

            // Softmax backward: dS = P .* (dP - rowsum(dP .* P))
            MatX<Real> ds = dp.cwiseProduct(p);
            const VecX<Real> row_dot = ds.rowwise().sum();
            ds.noalias() -= row_dot.asDiagonal() * p;
            ds *= scale;

            dq.middleCols(h * dh, dh).noalias() = ds * kh;
            dk.middleCols(h * dh, dh).noalias() = ds.transpose() * cache.q.middleCols(h * dh, dh);
        }
        dx_kv_accum += wk.backward(cache.k_in, dk);
        dx_kv_accum += wv.backward(cache.v_in, dv);
        return wq.backward(cache.q_in, dq);
    }

    void collect(std::vector<Param<Real>*>& out) {
        wq.collect(out);
        wk.collect(out);
        wv.collect(out);
        wo.collect(out);
    }
};

// ---------------------------------------------------------------------------
// Position-wise feed-forward: Dense -> GELU -> Dense

template <class Real>
struct FeedForward {
    Dense<Real> expand, project;

    struct Cache {
        typename Dense<Real>::Cache in1, in2;
        typename Gelu<Real>::Cache act;
    };

    void init(const std::string& name, int dim, int hidden, Rng& rng) {
        expand.init(name + ".expand", dim, hidden, rng);
        project.init(name + ".project", hidden, dim, rng);
    }

    MatX<Real> forward(const MatX<Real>& x, Cache& cache) const {
        return project.forward(
            Gelu<Real>::forward(expand.forward(x, cache.in1), cache.act), cache.in2);
    }

    MatX<Real> backward(const Cache& cache, const MatX<Real>& dy) {
        return expand.backward(cache.in1,
                               Gelu<Real>::backward(cache.act, project.backward(cache.in2, dy)));
    }

    void collect(std::vector<Param<Real>*>& out) {
        expand.collect(out);
        project.collect(out);
    }
};

// ---------------------------------------------------------------------------
// Pre-norm transformer blocks

template <class Real>
struct EncoderBlock {
    LayerNorm<Real> ln1, ln2;
    Attention<Real> attn;
    FeedForward<Real> ff;

    struct Cache {
        typename LayerNorm<Real>::Cache ln1c, ln2c;
        typename Attention<Real>::Cache attnc;
        typename FeedForward<Real>::Cache ffc;
        Eigen::Index rows = 0, cols = 0;
    };

    void init(const std::string& name, int dim, int heads, int hidden, Rng& rng) {
        ln1.init(name + ".ln1", dim);
        attn.init(name + ".attn", dim, heads, rng);
        ln2.init(name + ".ln2", dim);
        ff.init(name + ".ff", dim, hidden, rng);
    }

    MatX<Real> forward(const MatX<Real>& x, Cache& cache) const {
        cache.rows = x.rows();
        cache.cols = x.cols();
        const MatX<Real> a = ln1.forward(x, cache.ln1c);
        const MatX<Real> y = x + attn.forward(a, a, cache.attnc);
        return y + ff.forward(ln2.forward(y, cache.ln2c), cache.ffc);
    }

    MatX<Real> backward(const Cache& cache, const MatX<Real>& dz) {
        MatX<Real> dy = dz + ln2.backward(cache.ln2c, ff.backward(cache.ffc, dz));
        MatX<Real> da_kv = MatX<Real>::Zero(cache.rows, cache.cols);
        const MatX<Real> da_q = attn.backward(cache.attnc, dy, da_kv);
        return dy + ln1.backward(cache.ln1c, da_q + da_kv);
    }

    void collect(std::vector<Param<Real>*>& out) {
        ln1.collect(out);
        attn.collect(out);
        ln2.collect(out);
        ff.collect(out);
    }
};

template <class Real>
struct DecoderLayer {
    LayerNorm<Real> ln1, ln2, ln3;
    Attention<Real> self_attn, cross_attn;
    FeedForward<Real> ff;

    struct Cache {
        typename LayerNorm<Real>::Cache ln1c, ln2c, ln3c;
        typename Attention<Real>::Cache selfc, crossc;
        typename FeedForward<Real>::Cache ffc;
        Eigen::Index rows = 0, cols = 0;
    };

    void init(const std::string& name, int dim, int heads, int hidden, Rng& rng) {
        ln1.init(name + ".ln1", dim);
        self_attn.init(name + ".self", dim, heads, rng);
        ln2.init(name + ".ln2", dim);
        cross_attn.init(name + ".cross", dim, heads, rng);
        ln3.init(name + ".ln3", dim);
        ff.init(name + ".ff", dim, hidden, rng);
    }

    /// memory = concatenated reference tokens (keys and values).
    MatX<Real> forward(const MatX<Real>& x, const MatX<Real>& memory, Cache& cache,
                       std::vector<MatX<Real>>* capture = nullptr) const {
        cache.rows = x.rows();
        cache.cols = x.cols();
        const MatX<Real> a = ln1.forward(x, cache.ln1c);
        const MatX<Real> x1 = x + self_attn.forward(a, a, cache.selfc);
        const MatX<Real> b = ln2.forward(x1, cache.ln2c);
        const MatX<Real> x2 = x1 + cross_attn.forward(b, memory, cache.crossc, capture);
        return x2 + ff.forward(ln3.forward(x2, cache.ln3c), cache.ffc);
    }

    /// Accumulates the memory gradient into d_memory.
    MatX<Real> backward(const Cache& cache, const MatX<Real>& dz, MatX<Real>& d_memory) {
        MatX<Real> dx2 = dz + ln3.backward(cache.ln3c, ff.backward(cache.ffc, dz));
        const MatX<Real> db = cross_attn.backward(cache.crossc, dx2, d_memory);
        MatX<Real> dx1 = dx2 + ln2.backward(cache.ln2c, db);
        MatX<Real> da_kv = MatX<Real>::Zero(cache.rows, cache.cols);
        const MatX<Real> da_q = self_attn.backward(cache.selfc, dx1, da_kv);
        return dx1 + ln1.backward(cache.ln1c, da_q + da_kv);
    }

    void collect(std::vector<Param<Real>*>& out) {
        ln1.collect(out);
        self_attn.collect(out);
        ln2.collect(out);
        cross_attn.collect(out);
        ln3.collect(out);
        ff.collect(out);
    }
};

}  // namespace nn
}  // namespace criqa
