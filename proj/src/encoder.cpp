#include "dialdesc/encoder.hpp"

#include <cmath>

namespace dialdesc {

EncoderParams make_encoder(std::size_t d_emb, std::size_t d_model, std::size_t heads,
                           std::size_t d_ff, Rng& rng) {
    if (d_model % 2 != 0) {
        throw ConfigError("encoder width " + std::to_string(d_model) + " must be even");
    }
    EncoderParams p;
    p.utt_lstm = make_bilstm(d_emb, d_model / 2, rng);
    p.dense_lstm = make_bilstm(4 * d_model + d_emb, d_model / 2, rng);
    p.memory_layer = make_transformer_layer(d_model, heads, d_ff, false, rng);
    return p;
}

std::pair<Tensor, Tensor> encode_utterance_pair(const Tensor& a_embed, const Tensor& b_embed,
                                                const LstmParams& params) {
    return {bilstm(params, a_embed), bilstm(params, b_embed)};
}

InteractionResult interact(const Tensor& h_a, const Tensor& h_b) {
    if (h_a.rank() != 2 || h_b.rank() != 2 || h_a.dim(1) != h_b.dim(1)) {
        throw ShapeError("interact: incompatible shapes " + shape_string(h_a.shape()) + " and " +
                         shape_string(h_b.shape()));
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(h_a.dim(1)));
    InteractionResult r;
    r.attn_ab = softmax(mul_scalar(matmul(h_a, transpose(h_b)), scale), 1);
    r.attn_ba = softmax(mul_scalar(matmul(h_b, transpose(h_a)), scale), 1);
    r.s_a = matmul(r.attn_ab, h_b);
    r.s_b = matmul(r.attn_ba, h_a);
    return r;
}

Tensor enhance(const Tensor& h, const Tensor& s) {
    if (h.shape() != s.shape()) {
        throw ShapeError("enhance: representation " + shape_string(h.shape()) +
                         " vs interaction " + shape_string(s.shape()));
    }
    return concat({h, s, sub(h, s), mul(h, s)}, 1);
}

Tensor dense_recurrent(const Tensor& enhanced, const Tensor& embeddings,
                       const LstmParams& params) {
    if (enhanced.dim(0) != embeddings.dim(0)) {
        throw ShapeError("dense_recurrent: " + std::to_string(enhanced.dim(0)) +
                         " enhanced rows vs " + std::to_string(embeddings.dim(0)) +
                         " embedding rows");
    }
    return bilstm(params, concat({enhanced, embeddings}, 1));
}

EncoderMemory memory_output(const std::vector<std::pair<Tensor, Tensor>>& turn_states,
                            const DialoguePairBatchItem& item, const ExtendedVocabulary& ext,
                            const TransformerLayerParams& layer, EncoderTrace* trace) {
    if (turn_states.empty()) throw ShapeError("memory_output: no turns");
    if (turn_states.size() != item.turns.size()) {
        throw ShapeError("memory_output: " + std::to_string(turn_states.size()) +
                         " turn states for " + std::to_string(item.turns.size()) + " turns");
    }

    std::vector<Tensor> rows;
    rows.reserve(turn_states.size() * 2);
    EncoderMemory out;
    std::size_t flat = 0;
    for (std::size_t t = 0; t < turn_states.size(); ++t) {
        const auto& [ha, hb] = turn_states[t];
        rows.push_back(ha);
        rows.push_back(hb);
        for (std::size_t i = 0; i < ha.dim(0); ++i, ++flat) {
            out.alignment.push_back(
                {t, 'A', i, ext.extended_id(item.source_tokens.at(flat))});
        }
        for (std::size_t i = 0; i < hb.dim(0); ++i, ++flat) {
            out.alignment.push_back(
                {t, 'B', i, ext.extended_id(item.source_tokens.at(flat))});
        }
    }
    if (flat != item.source_tokens.size()) {
        throw ShapeError("memory_output: " + std::to_string(flat) + " memory rows for " +
                         std::to_string(item.source_tokens.size()) + " source tokens");
    }

    Tensor m = rows.size() == 1 ? rows[0] : concat(rows, 0);
    m = add(m, positional_encoding(m.dim(0), m.dim(1)));

    MultiHeadResult self;
    m = sublayer(
        m,
        [&](const Tensor& x) {
            self = multi_head_attention(layer.self_attn, x, x, x);
            return self.output;
        },
        layer.self_norm);
    m = sublayer(
        m, [&](const Tensor& x) { return feed_forward(layer.ffn_inner, layer.ffn_outer, x); },
        layer.ffn_norm);

    if (trace) trace->memory_self_attention = self.head_weights;
    out.memory = m;
    return out;
}

EncoderMemory encode_dialogue(const DialoguePairBatchItem& item, const ExtendedVocabulary& ext,
                              const Tensor& embed_table, const EncoderParams& params,
                              EncoderTrace* trace) {
    if (item.turns.empty()) throw ShapeError("encode_dialogue: dialogue has no turns");
    std::vector<std::pair<Tensor, Tensor>> turn_states;
    turn_states.reserve(item.turns.size());
    for (const auto& [a_ids, b_ids] : item.turns) {
        Tensor va = embed_lookup(embed_table, a_ids);
        Tensor vb = embed_lookup(embed_table, b_ids);
        auto [ha, hb] = encode_utterance_pair(va, vb, params.utt_lstm);
        InteractionResult inter = interact(ha, hb);
        Tensor sa_hat = enhance(ha, inter.s_a);
        Tensor sb_hat = enhance(hb, inter.s_b);
        turn_states.emplace_back(dense_recurrent(sa_hat, va, params.dense_lstm),
                                 dense_recurrent(sb_hat, vb, params.dense_lstm));
        if (trace) {
            trace->attn_ab.push_back(inter.attn_ab);
            trace->attn_ba.push_back(inter.attn_ba);
        }
    }
    return memory_output(turn_states, item, ext, params.memory_layer, trace);
}

}  // namespace dialdesc
