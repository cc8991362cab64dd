#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dialdesc/tensor.hpp"

namespace dialdesc {

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kMaskedLogit = -1e9;
inline constexpr double kInitRange = 0.1;

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

struct LinearParams {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".w", weight);
        fn(prefix + ".b", bias);
    }
};

struct LayerNormParams {
    Tensor gain;
    Tensor bias;

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".gain", gain);
        fn(prefix + ".bias", bias);
    }
};

struct MultiHeadParams {
    std::vector<Tensor> wq, wk, wv;  // per head, [d_model x d_head]
    Tensor wo;                       // [(H*d_head) x d_model]

    std::size_t head_count() const { return wq.size(); }
    void visit(const std::string& prefix, const ParamVisitor& fn) {
        for (std::size_t h = 0; h < wq.size(); ++h) {
            const std::string head = prefix + ".h" + std::to_string(h);
            fn(head + ".wq", wq[h]);
            fn(head + ".wk", wk[h]);
            fn(head + ".wv", wv[h]);
        }
        fn(prefix + ".wo", wo);
    }
};

// One LSTM direction: gate blocks act on [x_t ; h_{t-1}].
struct LstmGateParams {
    Tensor wi, wf, wo, wg;  // [(input+hidden) x hidden]
    Tensor bi, bf, bo, bg;  // [hidden]

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + ".wi", wi);
        fn(prefix + ".wf", wf);
        fn(prefix + ".wo", wo);
        fn(prefix + ".wg", wg);
        fn(prefix + ".bi", bi);
        fn(prefix + ".bf", bf);
        fn(prefix + ".bo", bo);
        fn(prefix + ".bg", bg);
    }
};

struct LstmParams {
    LstmGateParams fwd, bwd;

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fwd.visit(prefix + ".fwd", fn);
        bwd.visit(prefix + ".bwd", fn);
    }
};

struct TransformerLayerParams {
    MultiHeadParams self_attn;
    LayerNormParams self_norm;
    std::optional<MultiHeadParams> context_attn;  // decoder layers only
    std::optional<LayerNormParams> context_norm;
    LinearParams ffn_inner, ffn_outer;
    LayerNormParams ffn_norm;

    bool is_decoder_layer() const { return context_attn.has_value(); }
    void visit(const std::string& prefix, const ParamVisitor& fn) {
        self_attn.visit(prefix + ".self", fn);
        self_norm.visit(prefix + ".ln_self", fn);
        if (context_attn) {
            context_attn->visit(prefix + ".ctx", fn);
            context_norm->visit(prefix + ".ln_ctx", fn);
        }
        ffn_inner.visit(prefix + ".ffn1", fn);
        ffn_outer.visit(prefix + ".ffn2", fn);
        ffn_norm.visit(prefix + ".ln_ffn", fn);
    }
};

// Weights uniform in [-kInitRange, kInitRange]; biases zero; LN gain one.
LinearParams make_linear(std::size_t in, std::size_t out, Rng& rng);
LayerNormParams make_layer_norm(std::size_t d);
MultiHeadParams make_multi_head(std::size_t d_model, std::size_t heads, Rng& rng);
LstmGateParams make_lstm_gates(std::size_t input, std::size_t hidden, Rng& rng);
LstmParams make_bilstm(std::size_t input, std::size_t hidden_per_dir, Rng& rng);
TransformerLayerParams make_transformer_layer(std::size_t d_model, std::size_t heads,
                                              std::size_t d_ff, bool decoder_layer, Rng& rng);

// Sinusoidal table for positions [first, first+count). No gradient.
Tensor positional_encoding(std::size_t count, std::size_t d_model, std::size_t first = 0);

struct AttentionResult {
    Tensor output;   // [d_v]
    Tensor weights;  // [T]
};

// Single-query attention over T key/value rows.
AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& keys, const Tensor& values);

struct MultiHeadResult {
    Tensor output;        // [Tq x d_model]
    Tensor head_weights;  // [H x Tq x T]
};

// mask (when defined) is [Tq x T] with 1 = may attend, 0 = blocked; blocked
// logits are shifted by kMaskedLogit which underflows to exactly zero weight.
MultiHeadResult multi_head_attention(const MultiHeadParams& params, const Tensor& queries,
                                     const Tensor& keys, const Tensor& values,
                                     const Tensor& mask = Tensor());

// Lower-triangular [n x n] allow-mask: row i may attend columns 0..i.
Tensor causal_mask(std::size_t n);

// Mean of the per-head weight stack [H x Tq x T] -> [Tq x T].
Tensor head_mean(const Tensor& head_weights);

Tensor bilstm(const LstmParams& params, const Tensor& inputs);

Tensor feed_forward(const LinearParams& inner, const LinearParams& outer, const Tensor& x);

// layer_norm(x + f(x)); f must preserve the shape of x.
Tensor sublayer(const Tensor& x, const std::function<Tensor(const Tensor&)>& f,
                const LayerNormParams& norm);

}  // namespace dialdesc
