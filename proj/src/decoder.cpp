#include "dialdesc/decoder.hpp"

#include <cmath>

namespace dialdesc {

void DecoderConfig::validate() const {
    if (layer_count == 0) throw ConfigError("decoder needs at least one layer");
    if (head_count == 0 || d_model % head_count != 0) {
        throw ConfigError("decoder width " + std::to_string(d_model) +
                          " is not divisible by head count " + std::to_string(head_count));
    }
    if (d_model % 2 != 0) {
        throw ConfigError("decoder width " + std::to_string(d_model) + " must be even");
    }
    if (min_target_len == 0 || min_target_len > max_target_len) {
        throw ConfigError("target length bounds " + std::to_string(min_target_len) + ".." +
                          std::to_string(max_target_len) + " are inconsistent");
    }
}

DecoderParams make_decoder(const DecoderConfig& config, std::size_t vocab_size, Rng& rng) {
    config.validate();
    DecoderParams p;
    for (std::size_t i = 0; i < config.layer_count; ++i) {
        p.layers.push_back(
            make_transformer_layer(config.d_model, config.head_count, config.d_ff, true, rng));
    }
    p.out_proj = make_linear(config.d_model, vocab_size, rng);
    p.ptr_w = Tensor::uniform({config.d_model, 1}, -kInitRange, kInitRange, rng, true);
    p.ptr_b = Tensor::zeros({1}, true);
    return p;
}

void ExtendedDistribution::check() const {
    if (probs.size() != extended_size) {
        throw NumericError("distribution holds " + std::to_string(probs.size()) +
                           " entries for extended size " + std::to_string(extended_size));
    }
    double total = 0.0;
    for (double p : probs) {
        if (p < 0.0 || !std::isfinite(p)) {
            throw NumericError("distribution entry " + std::to_string(p) + " is invalid");
        }
        total += p;
    }
    if (std::fabs(total - 1.0) > 1e-6) {
        throw NumericError("distribution sums to " + std::to_string(total));
    }
}

Tensor vocab_distribution(const Tensor& state, const LinearParams& proj) {
    return softmax(add_rowwise(matmul(state, proj.weight), proj.bias), 1);
}

Tensor generation_probability(const Tensor& state, const Tensor& w, const Tensor& b) {
    return reshape(sigmoid(add(matmul(state, w), b)), {1});
}

Tensor pointer_distribution(const Tensor& context_attention,
                            const std::vector<AlignmentEntry>& alignment,
                            std::size_t extended_size) {
    if (context_attention.rank() != 2 || context_attention.dim(1) != alignment.size()) {
        throw ShapeError("pointer_distribution: attention " +
                         shape_string(context_attention.shape()) + " does not cover " +
                         std::to_string(alignment.size()) + " memory rows");
    }
    const std::size_t h = context_attention.dim(0);
    const std::size_t l = context_attention.dim(1);
    Tensor averaged = head_mean(reshape(context_attention, {h, 1, l}));  // [1 x L]
    std::vector<int> cols;
    cols.reserve(alignment.size());
    for (const auto& entry : alignment) cols.push_back(entry.extended_id);
    return scatter_add_cols(averaged, cols, extended_size);
}

Tensor mixture(const Tensor& vocab_probs, const Tensor& pointer_probs, const Tensor& p_gen,
               std::size_t extended_size) {
    const std::size_t v = vocab_probs.dim(1);
    if (extended_size < v || pointer_probs.dim(1) != extended_size) {
        throw ShapeError("mixture: vocabulary " + std::to_string(v) + ", pointer " +
                         shape_string(pointer_probs.shape()) + ", extended size " +
                         std::to_string(extended_size));
    }
    Tensor padded = vocab_probs;
    if (extended_size > v) {
        padded = concat({vocab_probs, Tensor::zeros({1, extended_size - v})}, 1);
    }
    Tensor copy_gate = sub(Tensor::scalar(1.0), p_gen);
    return add(mul(padded, p_gen), mul(pointer_probs, copy_gate));
}

Tensor step_loss(const Tensor& mixture_probs, int target_ext_id) {
    if (target_ext_id < 0 ||
        static_cast<std::size_t>(target_ext_id) >= mixture_probs.numel()) {
        throw DataError("target id " + std::to_string(target_ext_id) +
                        " outside extended vocabulary of " +
                        std::to_string(mixture_probs.numel()));
    }
    Tensor p = clamp_min(pick(mixture_probs, static_cast<std::size_t>(target_ext_id)), 1e-12);
    return negate(log(p));
}

Tensor sequence_loss(const std::vector<Tensor>& step_losses) {
    if (step_losses.empty()) throw ShapeError("sequence_loss: no steps");
    return mean(concat(step_losses, 0));
}

namespace {

std::vector<int> embeddable_ids(const std::vector<int>& ext_ids, std::size_t vocab_size) {
    std::vector<int> ids;
    ids.reserve(ext_ids.size());
    for (int id : ext_ids) {
        if (id < 0) throw DataError("negative token id " + std::to_string(id));
        ids.push_back(static_cast<std::size_t>(id) < vocab_size ? id : kUnkId);
    }
    return ids;
}

DecoderStepOutput finish_step(const Tensor& state, const Tensor& ctx_attention,
                              const EncoderMemory& memory, const DecoderParams& params,
                              std::size_t extended_size) {
    DecoderStepOutput out;
    out.state = state;
    out.context_attention = ctx_attention;
    Tensor pv = vocab_distribution(state, params.out_proj);
    Tensor pg = generation_probability(state, params.ptr_w, params.ptr_b);
    Tensor ptr = pointer_distribution(ctx_attention, memory.alignment, extended_size);
    out.mixture = mixture(pv, ptr, pg, extended_size);
    out.p_gen = pg.value();
    out.distribution.extended_size = extended_size;
    out.distribution.probs.assign(out.mixture.data().begin(), out.mixture.data().end());
    out.distribution.check();
    return out;
}

}  // namespace

std::vector<DecoderStepOutput> decoder_forward(const std::vector<int>& prefix,
                                               const EncoderMemory& memory,
                                               const Tensor& embed_table,
                                               const DecoderParams& params,
                                               const DecoderConfig& config) {
    config.validate();
    if (prefix.empty()) throw DataError("decoder prefix is empty");
    if (prefix.size() > config.max_target_len + 1) {
        throw DataError("decoder prefix of " + std::to_string(prefix.size()) +
                        " exceeds max target length " + std::to_string(config.max_target_len) +
                        " + BOS");
    }
    const std::size_t t_len = prefix.size();
    const std::size_t vocab = embed_table.dim(0);

    Tensor x = add(embed_lookup(embed_table, embeddable_ids(prefix, vocab)),
                   positional_encoding(t_len, config.d_model));
    Tensor mask = causal_mask(t_len);
    MultiHeadResult last_ctx;
    for (const auto& layer : params.layers) {
        if (!layer.context_attn) {
            throw ConfigError("decoder layer lacks context attention parameters");
        }
        x = sublayer(
            x,
            [&](const Tensor& in) {
                return multi_head_attention(layer.self_attn, in, in, in, mask).output;
            },
            layer.self_norm);
        x = sublayer(
            x,
            [&](const Tensor& in) {
                last_ctx = multi_head_attention(*layer.context_attn, in, memory.memory,
                                                memory.memory);
                return last_ctx.output;
            },
            *layer.context_norm);
        x = sublayer(
            x, [&](const Tensor& in) { return feed_forward(layer.ffn_inner, layer.ffn_outer, in); },
            layer.ffn_norm);
    }

    const std::size_t h = config.head_count;
    const std::size_t l = memory.length();
    const std::size_t extended_size =
        vocab + [&] {
            std::size_t max_oov = 0;
            for (const auto& entry : memory.alignment) {
                if (entry.extended_id >= static_cast<int>(vocab)) {
                    max_oov = std::max(max_oov,
                                       static_cast<std::size_t>(entry.extended_id) - vocab + 1);
                }
            }
            return max_oov;
        }();

    std::vector<DecoderStepOutput> outputs;
    outputs.reserve(t_len);
    for (std::size_t t = 0; t < t_len; ++t) {
        Tensor state = slice(x, 0, t, t + 1);
        Tensor ctx_t = reshape(slice(last_ctx.head_weights, 1, t, t + 1), {h, l});
        outputs.push_back(finish_step(state, ctx_t, memory, params, extended_size));
    }
    return outputs;
}

DecoderStepOutput decoder_step(int token_ext_id, DecoderCache& cache,
                               const EncoderMemory& memory, const Tensor& embed_table,
                               const DecoderParams& params, const DecoderConfig& config) {
    config.validate();
    if (cache.layer_inputs.empty()) {
        cache.layer_inputs.assign(params.layers.size(), Tensor());
    }
    if (cache.layer_inputs.size() != params.layers.size()) {
        throw ShapeError("decoder cache tracks " + std::to_string(cache.layer_inputs.size()) +
                         " layers, parameters have " + std::to_string(params.layers.size()));
    }
    if (cache.steps >= config.max_target_len + 1) {
        throw DataError("decoder cache already holds " + std::to_string(cache.steps) +
                        " positions at max target length " +
                        std::to_string(config.max_target_len));
    }
    const std::size_t vocab = embed_table.dim(0);
    const std::size_t pos = cache.steps;

    Tensor x = add(embed_lookup(embed_table, embeddable_ids({token_ext_id}, vocab)),
                   positional_encoding(1, config.d_model, pos));
    MultiHeadResult last_ctx;
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        const auto& layer = params.layers[li];
        Tensor& history = cache.layer_inputs[li];
        history = history.defined() ? concat({history, x}, 0) : x;
        x = sublayer(
            x,
            [&](const Tensor& in) {
                return multi_head_attention(layer.self_attn, in, history, history).output;
            },
            layer.self_norm);
        x = sublayer(
            x,
            [&](const Tensor& in) {
                last_ctx = multi_head_attention(*layer.context_attn, in, memory.memory,
                                                memory.memory);
                return last_ctx.output;
            },
            *layer.context_norm);
        x = sublayer(
            x, [&](const Tensor& in) { return feed_forward(layer.ffn_inner, layer.ffn_outer, in); },
            layer.ffn_norm);
    }
    cache.steps = pos + 1;

    const std::size_t extended_size = [&] {
        std::size_t max_oov = 0;
        for (const auto& entry : memory.alignment) {
            if (entry.extended_id >= static_cast<int>(vocab)) {
                max_oov = std::max(max_oov,
                                   static_cast<std::size_t>(entry.extended_id) - vocab + 1);
            }
        }
        return vocab + max_oov;
    }();
    Tensor ctx = reshape(last_ctx.head_weights, {config.head_count, memory.length()});
    return finish_step(x, ctx, memory, params, extended_size);
}

}  // namespace dialdesc
