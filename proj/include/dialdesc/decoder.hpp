#pragma once

#include <vector>

#include "dialdesc/encoder.hpp"

namespace dialdesc {

struct DecoderConfig {
    std::size_t layer_count = 2;
    std::size_t head_count = 4;
    std::size_t d_model = 256;
    std::size_t d_ff = 1024;
    std::size_t max_target_len = 15;
    std::size_t min_target_len = 5;

    void validate() const;
};

struct DecoderParams {
    std::vector<TransformerLayerParams> layers;  // each with context attention
    LinearParams out_proj;                       // [d_model x |V|] + [|V|]
    Tensor ptr_w;                                // [d_model x 1]
    Tensor ptr_b;                                // [1]

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].visit(prefix + ".l" + std::to_string(i), fn);
        }
        out_proj.visit(prefix + ".out", fn);
        fn(prefix + ".ptr.w", ptr_w);
        fn(prefix + ".ptr.b", ptr_b);
    }
};

DecoderParams make_decoder(const DecoderConfig& config, std::size_t vocab_size, Rng& rng);

struct ExtendedDistribution {
    std::vector<double> probs;
    std::size_t extended_size = 0;

    // Nonnegative and sums to 1 within 1e-6.
    void check() const;
};

struct DecoderStepOutput {
    Tensor state;              // [1 x d_model]
    Tensor context_attention;  // [H x L], each head row stochastic
    Tensor mixture;            // [1 x extended_size], differentiable
    ExtendedDistribution distribution;
    double p_gen = 0.0;
};

// Teacher-forced pass over a BOS-led prefix of extended ids. Extended ids
// beyond the base vocabulary embed as UNK; position t never sees tokens > t.
std::vector<DecoderStepOutput> decoder_forward(const std::vector<int>& prefix,
                                               const EncoderMemory& memory,
                                               const Tensor& embed_table,
                                               const DecoderParams& params,
                                               const DecoderConfig& config);

// Rows of per-layer inputs accumulated so far for one hypothesis; feeding
// tokens one at a time reproduces decoder_forward outputs exactly.
struct DecoderCache {
    std::vector<Tensor> layer_inputs;
    std::size_t steps = 0;
};

DecoderStepOutput decoder_step(int token_ext_id, DecoderCache& cache,
                               const EncoderMemory& memory, const Tensor& embed_table,
                               const DecoderParams& params, const DecoderConfig& config);

Tensor vocab_distribution(const Tensor& state, const LinearParams& proj);            // [1 x V]
Tensor generation_probability(const Tensor& state, const Tensor& w, const Tensor& b);  // [1]

// Head-averaged copy distribution scattered onto extended ids.
Tensor pointer_distribution(const Tensor& context_attention,
                            const std::vector<AlignmentEntry>& alignment,
                            std::size_t extended_size);  // [1 x extended_size]

// p_gen * P_v (zero-padded over OOV slots) + (1 - p_gen) * pointer mass.
Tensor mixture(const Tensor& vocab_probs, const Tensor& pointer_probs, const Tensor& p_gen,
               std::size_t extended_size);

Tensor step_loss(const Tensor& mixture_probs, int target_ext_id);
Tensor sequence_loss(const std::vector<Tensor>& step_losses);

}  // namespace dialdesc
