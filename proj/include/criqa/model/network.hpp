#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "criqa/error.hpp"
#include "criqa/image.hpp"
#include "criqa/model/config.hpp"
#include "criqa/model/layers.hpp"
#include "criqa/rng.hpp"

namespace criqa {

/// Feature matrix of one image: one D-dimensional row per non-overlapping
/// patch, token order row-major over the patch grid.
template <class Real>
struct PatchTokensT {
    int rows = 0;
    int cols = 0;
    MatX<Real> tokens;  // (rows*cols) x D
};

using PatchTokens = PatchTokensT<float>;

/// Cross-attention probabilities captured during a forward pass:
/// layers[l][h] is the n_query_tokens x n_memory_tokens row-stochastic matrix
/// of decoder layer l, head h. Reference boundaries let callers slice the
/// memory axis back into per-image grids.
template <class Real>
struct AttentionRecordT {
    int query_rows = 0;
    int query_cols = 0;
    std::vector<std::pair<int, int>> ref_grids;  // (rows, cols) per reference
    std::vector<int> ref_offsets;                // first memory token per reference
    std::vector<std::vector<MatX<Real>>> layers;
};

using AttentionRecord = AttentionRecordT<float>;

namespace nn {

/// Unfolds an image into patch rows: token (r,c) -> matrix row r*cols+c,
/// features ordered (py, px, channel) within the patch.
template <class Real>
MatX<Real> patchify(const ImageGrid& img, int patch) {
    const int rows = img.height / patch, cols = img.width / patch;
    MatX<Real> out(static_cast<Eigen::Index>(rows) * cols,
                   static_cast<Eigen::Index>(patch) * patch * img.channels);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            Eigen::Index f = 0;
            const Eigen::Index token = static_cast<Eigen::Index>(r) * cols + c;
            for (int py = 0; py < patch; ++py) {
                for (int px = 0; px < patch; ++px) {
                    for (int ch = 0; ch < img.channels; ++ch) {
                        out(token, f++) =
                            static_cast<Real>(img.at(r * patch + py, c * patch + px, ch));
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace nn

// ---------------------------------------------------------------------------
// Encoder: patchify -> linear embed -> grid positional embedding -> pre-norm
// self-attention blocks -> final LayerNorm. No class token anywhere; the same
// weights encode queries and references alike.

template <class Real>
struct Encoder {
    int patch = 14;
    int max_grid = 24;
    int in_channels = 3;
    nn::Dense<Real> embed;
    Param<Real> pos;  // max_grid*max_grid x D, indexed by grid coordinate
    std::vector<nn::EncoderBlock<Real>> blocks;
    nn::LayerNorm<Real> final_ln;

    struct Cache {
        typename nn::Dense<Real>::Cache embedc;
        std::vector<typename nn::EncoderBlock<Real>::Cache> blockc;
        typename nn::LayerNorm<Real>::Cache lnc;
        int rows = 0, cols = 0;
    };

    void init(const ModelConfig& cfg, Rng& rng) {
        patch = cfg.patch_size;
        max_grid = cfg.max_grid;
        in_channels = cfg.in_channels;
        embed.init("encoder.embed", patch * patch * cfg.in_channels, cfg.embed_dim, rng);
        pos.resize("encoder.pos", static_cast<Eigen::Index>(max_grid) * max_grid,
                   cfg.embed_dim);
        nn::init_trunc_normal(pos.value, rng);
        blocks.resize(cfg.encoder_depth);
        for (int b = 0; b < cfg.encoder_depth; ++b) {
            blocks[b].init("encoder.block" + std::to_string(b), cfg.embed_dim,
                           cfg.attention_heads, cfg.mlp_hidden, rng);
        }
        final_ln.init("encoder.final_ln", cfg.embed_dim);
    }

    void check_dims(const ImageGrid& img) const {
        if (img.pixel_count() == 0) throw ValidationError("encoder: empty image");
        if (img.channels != in_channels) {
            throw ShapeError("encoder: expected " + std::to_string(in_channels) +
                             " channels, got " + std::to_string(img.channels));
        }
        if (img.height % patch != 0 || img.width % patch != 0) {
            throw ShapeError("encoder: image " + std::to_string(img.height) + "x" +
                             std::to_string(img.width) +
                             " not divisible by patch size " + std::to_string(patch) +
                             "; crop to a multiple of the patch size first");
        }
        if (img.height / patch > max_grid || img.width / patch > max_grid) {
            throw ShapeError("encoder: patch grid exceeds max_grid " +
                             std::to_string(max_grid) +
                             "; raise model.max_grid for inputs this large");
        }
    }

    MatX<Real> forward(const ImageGrid& img, Cache& cache) const {
        check_dims(img);
        require_finite(img, "encoder");
        cache.rows = img.height / patch;
        cache.cols = img.width / patch;
        MatX<Real> x = embed.forward(nn::patchify<Real>(img, patch), cache.embedc);
        for (int r = 0; r < cache.rows; ++r) {
            for (int c = 0; c < cache.cols; ++c) {
                x.row(static_cast<Eigen::Index>(r) * cache.cols + c) +=
                    pos.value.row(static_cast<Eigen::Index>(r) * max_grid + c);
            }
        }
        cache.blockc.resize(blocks.size());
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            x = blocks[b].forward(x, cache.blockc[b]);
        }
        return final_ln.forward(x, cache.lnc);
    }

    void backward(Cache& cache, const MatX<Real>& d_out) {
        MatX<Real> dx = final_ln.backward(cache.lnc, d_out);
        for (std::size_t b = blocks.size(); b-- > 0;) {
            dx = blocks[b].backward(cache.blockc[b], dx);
        }
        for (int r = 0; r < cache.rows; ++r) {
            for (int c = 0; c < cache.cols; ++c) {
                pos.grad.row(static_cast<Eigen::Index>(r) * max_grid + c) +=
                    dx.row(static_cast<Eigen::Index>(r) * cache.cols + c);
            }
        }
        embed.backward(cache.embedc, dx);  // input gradient unused: images are data
    }

    void collect(std::vector<Param<Real>*>& out) {
        embed.collect(out);
        out.push_back(&pos);
        for (auto& b : blocks) b.collect(out);
        final_ln.collect(out);
    }
};

// ---------------------------------------------------------------------------
// Cross-reference module: transformer decoder layers whose queries are the
// query image's tokens and whose keys/values are the plain concatenation of
// all reference tokens — no image-index embedding, so reference order cannot
// influence the result.

template <class Real>
struct CrossModule {
    std::vector<nn::DecoderLayer<Real>> layers;
    nn::LayerNorm<Real> final_norm;

    struct Cache {
        std::vector<typename nn::DecoderLayer<Real>::Cache> layerc;
        typename nn::LayerNorm<Real>::Cache lnc;
    };

    void init(const ModelConfig& cfg, Rng& rng) {
        layers.resize(cfg.decoder_layers);
        for (int l = 0; l < cfg.decoder_layers; ++l) {
            layers[l].init("cross.layer" + std::to_string(l), cfg.embed_dim,
                           cfg.attention_heads, cfg.mlp_hidden, rng);
        }
        final_norm.init("cross.final_norm", cfg.embed_dim);
    }

    MatX<Real> forward(const MatX<Real>& query_tokens, const MatX<Real>& memory,
                       Cache& cache,
                       std::vector<std::vector<MatX<Real>>>* capture = nullptr) const {
        if (capture != nullptr) capture->resize(layers.size());
        cache.layerc.resize(layers.size());
        MatX<Real> x = query_tokens;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            x = layers[l].forward(x, memory, cache.layerc[l],
                                  capture != nullptr ? &(*capture)[l] : nullptr);
        }
        return final_norm.forward(x, cache.lnc);
    }

    MatX<Real> backward(Cache& cache, const MatX<Real>& d_out, MatX<Real>& d_memory) {
        MatX<Real> dx = final_norm.backward(cache.lnc, d_out);
        for (std::size_t l = layers.size(); l-- > 0;) {
            dx = layers[l].backward(cache.layerc[l], dx, d_memory);
        }
        return dx;
    }

    void collect(std::vector<Param<Real>*>& out) {
        for (auto& l : layers) l.collect(out);
        final_norm.collect(out);
    }
};

// ---------------------------------------------------------------------------
// Head: two-layer MLP per token, logistic output, one scalar per patch pixel.

template <class Real>
struct Head {
    nn::Dense<Real> h1, h2;

    struct Cache {
        typename nn::Dense<Real>::Cache in1, in2;
        typename nn::Gelu<Real>::Cache act;
        MatX<Real> out;  // post-sigmoid, reused for the backward pass
    };

    void init(const ModelConfig& cfg, Rng& rng) {
        h1.init("head.h1", cfg.embed_dim, cfg.mlp_hidden, rng);
        h2.init("head.h2", cfg.mlp_hidden, cfg.patch_size * cfg.patch_size, rng);
    }

    MatX<Real> forward(const MatX<Real>& x, Cache& cache) const {
        MatX<Real> z = h2.forward(
            nn::Gelu<Real>::forward(h1.forward(x, cache.in1), cache.act), cache.in2);
        cache.out = z.unaryExpr([](Real v) {
            return static_cast<Real>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
        });
        return cache.out;
    }

    MatX<Real> backward(Cache& cache, const MatX<Real>& d_pred) {
        // d(sigmoid)/dz = out * (1 - out)
        const MatX<Real> dz =
            (d_pred.array() * cache.out.array() * (Real(1) - cache.out.array())).matrix();
        return h1.backward(cache.in1,
                           nn::Gelu<Real>::backward(cache.act, h2.backward(cache.in2, dz)));
    }

    void collect(std::vector<Param<Real>*>& out) {
        h1.collect(out);
        h2.collect(out);
    }
};

// ---------------------------------------------------------------------------
// Token-grid <-> pixel-map conversions shared by the head and the trainer.

/// Row-major reshape of each token's patch*patch outputs into its pixel block.
template <class Real>
ScoreMap token_matrix_to_map(const MatX<Real>& m, int grid_rows, int grid_cols, int patch) {
    ScoreMap map(grid_rows * patch, grid_cols * patch);
    for (int r = 0; r < grid_rows; ++r) {
        for (int c = 0; c < grid_cols; ++c) {
            const Eigen::Index token = static_cast<Eigen::Index>(r) * grid_cols + c;
            for (int py = 0; py < patch; ++py) {
                for (int px = 0; px < patch; ++px) {
                    map.at(r * patch + py, c * patch + px) =
                        static_cast<float>(m(token, py * patch + px));
                }
            }
        }
    }
    return map;
}

template <class Real>
MatX<Real> map_to_token_matrix(const ScoreMap& map, int patch) {
    const int rows = map.height / patch, cols = map.width / patch;
    MatX<Real> m(static_cast<Eigen::Index>(rows) * cols,
                 static_cast<Eigen::Index>(patch) * patch);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const Eigen::Index token = static_cast<Eigen::Index>(r) * cols + c;
            for (int py = 0; py < patch; ++py) {
                for (int px = 0; px < patch; ++px) {
                    m(token, py * patch + px) =
                        static_cast<Real>(map.at(r * patch + py, c * patch + px));
                }
            }
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// The full network.

template <class Real>
struct ForwardResultT {
    ScoreMap map;
    std::optional<AttentionRecordT<Real>> attention;
};

using ForwardResult = ForwardResultT<float>;

template <class Real>
class CrossRefModelT {
  public:
    explicit CrossRefModelT(ModelConfig cfg = {}) : cfg_(std::move(cfg)) {
        cfg_.validate();
        init_params(0);
    }

    /// Re-randomizes every weight from the given seed.
    void init_params(std::uint64_t seed) {
        Rng rng(derive_seed(seed, "model-init"));
        encoder_.init(cfg_, rng);
        cross_.init(cfg_, rng);
        head_.init(cfg_, rng);
    }

    const ModelConfig& config() const { return cfg_; }

    /// All parameters in canonical (serialization) order. Pointers stay valid
    /// while the model object does; collected fresh so the model remains
    /// freely copyable.
    std::vector<Param<Real>*> params() {
        std::vector<Param<Real>*> out;
        encoder_.collect(out);
        cross_.collect(out);
        head_.collect(out);
        return out;
    }

    /// Parameters the optimizer may update; excludes the encoder when it is
    /// declared frozen (weights imported from an external backbone).
    std::vector<Param<Real>*> trainable_params() {
        std::vector<Param<Real>*> all = params();
        if (cfg_.encoder_mode == EncoderMode::trainable) return all;
        std::vector<Param<Real>*> out;
        for (Param<Real>* p : all) {
            if (p->name.rfind("encoder.", 0) != 0) out.push_back(p);
        }
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (const Param<Real>* p : params()) n += p->count();
        return n;
    }

    // -- Inference API ------------------------------------------------------

    PatchTokensT<Real> encode_patches(const ImageGrid& img) const {
        typename Encoder<Real>::Cache cache;
        PatchTokensT<Real> out;
        out.tokens = encoder_.forward(img, cache);
        out.rows = cache.rows;
        out.cols = cache.cols;
        return out;
    }

    PatchTokensT<Real> cross_reference(
        const PatchTokensT<Real>& query_tokens,
        const std::vector<PatchTokensT<Real>>& ref_token_sets,
        std::vector<std::vector<MatX<Real>>>* capture = nullptr) const {
        if (ref_token_sets.empty()) {
            throw ValidationError(
                "cross_reference: empty reference list (the zero-reference "
                "ablation passes zeroed images, not an empty list)");
        }
        Eigen::Index mem_rows = 0;
        for (const auto& r : ref_token_sets) {
            if (r.tokens.cols() != query_tokens.tokens.cols()) {
                throw ShapeError("cross_reference: reference token width mismatch");
            }
            mem_rows += r.tokens.rows();
        }
        MatX<Real> memory(mem_rows, query_tokens.tokens.cols());
        Eigen::Index at = 0;
        for (const auto& r : ref_token_sets) {
            memory.middleRows(at, r.tokens.rows()) = r.tokens;
            at += r.tokens.rows();
        }
        typename CrossModule<Real>::Cache cache;
        PatchTokensT<Real> out;
        out.tokens = cross_.forward(query_tokens.tokens, memory, cache, capture);
        out.rows = query_tokens.rows;
        out.cols = query_tokens.cols;
        return out;
    }

    ScoreMap regress_scores(const PatchTokensT<Real>& latent) const {
        typename Head<Real>::Cache cache;
        const MatX<Real> pred = head_.forward(latent.tokens, cache);
        return token_matrix_to_map(pred, latent.rows, latent.cols, cfg_.patch_size);
    }

    ForwardResultT<Real> forward(const ImageGrid& query,
                                 const std::vector<ImageGrid>& refs,
                                 bool capture_attention = false) const {
        const PatchTokensT<Real> q = encode_patches(query);
        std::vector<PatchTokensT<Real>> r;
        r.reserve(refs.size());
        for (const ImageGrid& img : refs) r.push_back(encode_patches(img));

        std::vector<std::vector<MatX<Real>>> probs;
        const PatchTokensT<Real> latent =
            cross_reference(q, r, capture_attention ? &probs : nullptr);

        ForwardResultT<Real> result;
        result.map = regress_scores(latent);
        if (capture_attention) {
            AttentionRecordT<Real> rec;
            rec.query_rows = q.rows;
            rec.query_cols = q.cols;
            int offset = 0;
            for (const auto& tokens : r) {
                rec.ref_grids.emplace_back(tokens.rows, tokens.cols);
                rec.ref_offsets.push_back(offset);
                offset += tokens.rows * tokens.cols;
            }
            rec.layers = std::move(probs);
            result.attention = std::move(rec);
        }
        return result;
    }

    // -- Training API -------------------------------------------------------

    struct TrainCache {
        typename Encoder<Real>::Cache query_enc;
        std::vector<typename Encoder<Real>::Cache> ref_enc;
        typename CrossModule<Real>::Cache cross;
        typename Head<Real>::Cache head;
        std::vector<Eigen::Index> ref_token_counts;
        int grid_rows = 0, grid_cols = 0;
    };

    /// Differentiable forward pass. Returns the post-sigmoid prediction as a
    /// token matrix (n_tokens x patch^2) so the loss stays in matrix form.
    MatX<Real> training_forward(const ImageGrid& query,
                                const std::vector<ImageGrid>& refs, TrainCache& cache) {
        if (refs.empty()) {
            throw ValidationError("training_forward: empty reference list");
        }
        const MatX<Real> q = encoder_.forward(query, cache.query_enc);
        cache.grid_rows = cache.query_enc.rows;
        cache.grid_cols = cache.query_enc.cols;

        cache.ref_enc.resize(refs.size());
        cache.ref_token_counts.clear();
        Eigen::Index mem_rows = 0;
        std::vector<MatX<Real>> ref_tokens(refs.size());
        for (std::size_t i = 0; i < refs.size(); ++i) {
            ref_tokens[i] = encoder_.forward(refs[i], cache.ref_enc[i]);
            cache.ref_token_counts.push_back(ref_tokens[i].rows());
            mem_rows += ref_tokens[i].rows();
        }
        MatX<Real> memory(mem_rows, q.cols());
        Eigen::Index at = 0;
        for (const auto& t : ref_tokens) {
            memory.middleRows(at, t.rows()) = t;
            at += t.rows();
        }
        const MatX<Real> latent = cross_.forward(q, memory, cache.cross, nullptr);
        return head_.forward(latent, cache.head);
    }

    /// Accumulates parameter gradients for d(loss)/d(prediction matrix).
    void backward(TrainCache& cache, const MatX<Real>& d_pred) {
        const MatX<Real> d_latent = head_.backward(cache.head, d_pred);
        Eigen::Index mem_rows = 0;
        for (Eigen::Index n : cache.ref_token_counts) mem_rows += n;
        MatX<Real> d_memory = MatX<Real>::Zero(mem_rows, d_latent.cols());
        const MatX<Real> d_query_tokens = cross_.backward(cache.cross, d_latent, d_memory);
        encoder_.backward(cache.query_enc, d_query_tokens);
        Eigen::Index at = 0;
        for (std::size_t i = 0; i < cache.ref_enc.size(); ++i) {
            encoder_.backward(cache.ref_enc[i],
                              d_memory.middleRows(at, cache.ref_token_counts[i]));
            at += cache.ref_token_counts[i];
        }
    }

    void zero_grad() {
        for (Param<Real>* p : params()) p->zero_grad();
    }

    Encoder<Real>& encoder() { return encoder_; }
    CrossModule<Real>& cross_module() { return cross_; }
    Head<Real>& head() { return head_; }

  private:
    ModelConfig cfg_;
    Encoder<Real> encoder_;
    CrossModule<Real> cross_;
    Head<Real> head_;
};

using CrossRefModel = CrossRefModelT<float>;

}  // namespace criqa
