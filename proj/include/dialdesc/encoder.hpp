#pragma once

#include <utility>
#include <vector>

#include "dialdesc/data.hpp"
#include "dialdesc/nn.hpp"

namespace dialdesc {

struct EncoderParams {
    LstmParams utt_lstm;                  // word embeddings -> d_model
    LstmParams dense_lstm;                // [enhanced ; embedding] -> d_model
    TransformerLayerParams memory_layer;  // single encoder transformer layer

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        utt_lstm.visit(prefix + ".utt_lstm", fn);
        dense_lstm.visit(prefix + ".dense_lstm", fn);
        memory_layer.visit(prefix + ".mem", fn);
    }
};

EncoderParams make_encoder(std::size_t d_emb, std::size_t d_model, std::size_t heads,
                           std::size_t d_ff, Rng& rng);

struct AlignmentEntry {
    std::size_t turn;
    char speaker;       // 'A' or 'B'
    std::size_t token;  // index within the utterance
    int extended_id;
};

struct EncoderMemory {
    Tensor memory;  // [L x d_model], turn-major, A rows before B rows
    std::vector<AlignmentEntry> alignment;

    std::size_t length() const { return alignment.size(); }
};

// Attention matrices collected for the inspection tooling.
struct EncoderTrace {
    std::vector<Tensor> attn_ab;   // per turn [lenA x lenB]
    std::vector<Tensor> attn_ba;   // per turn [lenB x lenA]
    Tensor memory_self_attention;  // [H x L x L]
};

// Contextualizes one A/B utterance pair from embedded tokens.
std::pair<Tensor, Tensor> encode_utterance_pair(const Tensor& a_embed, const Tensor& b_embed,
                                                const LstmParams& params);

struct InteractionResult {
    Tensor s_a, s_b;        // [lenA x d], [lenB x d]
    Tensor attn_ab;         // [lenA x lenB], rows stochastic
    Tensor attn_ba;         // [lenB x lenA]
};

// Within-turn cross-speaker attention: each A position attends B and back.
InteractionResult interact(const Tensor& h_a, const Tensor& h_b);

// Row-wise [h ; s ; h - s ; h * s].
Tensor enhance(const Tensor& h, const Tensor& s);

// Second biLSTM over [enhanced ; original embeddings].
Tensor dense_recurrent(const Tensor& enhanced, const Tensor& embeddings,
                       const LstmParams& params);

// Turn-major concatenation + positional encoding + one transformer layer.
EncoderMemory memory_output(const std::vector<std::pair<Tensor, Tensor>>& turn_states,
                            const DialoguePairBatchItem& item, const ExtendedVocabulary& ext,
                            const TransformerLayerParams& layer, EncoderTrace* trace = nullptr);

EncoderMemory encode_dialogue(const DialoguePairBatchItem& item, const ExtendedVocabulary& ext,
                              const Tensor& embed_table, const EncoderParams& params,
                              EncoderTrace* trace = nullptr);

}  // namespace dialdesc
