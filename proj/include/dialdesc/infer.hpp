#pragma once

#include <string>
#include <vector>

#include "dialdesc/model.hpp"

namespace dialdesc {

struct BeamHypothesis {
    std::vector<int> tokens;  // content extended ids, BOS/EOS excluded
    double log_prob = 0.0;    // cumulative, no length normalization
    bool finished = false;
    DecoderCache cache;

    // A finished hypothesis shorter than max_target_len ended on EOS and its
    // score includes the EOS term; one at max length was force-stopped.
    bool ends_with_eos(const ModelConfig& config) const {
        return finished && tokens.size() < config.max_target_len;
    }
};

struct BeamResult {
    BeamHypothesis best;
    std::vector<BeamHypothesis> k_best;  // rank order, at most K entries
};

// Argmax token per step, ties to the lowest id. EOS is masked out until
// min_target_len content tokens exist; decoding stops at max_target_len.
std::vector<int> greedy_decode(const Model& model, const EncoderMemory& memory);

// Standard beam over the extended vocabulary: expand every live hypothesis,
// keep the top K by cumulative log-probability. Ties break on the lower
// token sequence, then shorter length. PAD and BOS are never generated.
BeamResult beam_search(const Model& model, const EncoderMemory& memory, std::size_t k);

// Extended ids to surface words; copied ids resolve to their source token,
// never to the unknown marker.
std::vector<std::string> resolve_copies(const std::vector<int>& ids,
                                        const ExtendedVocabulary& ext);

// Teacher-forced cumulative log-probability of a content-token sequence,
// optionally including the terminating EOS term. Matches beam scores.
double score_sequence(const Model& model, const EncoderMemory& memory,
                      const std::vector<int>& tokens, bool include_eos);

struct TurnAttentionDump {
    std::size_t turn = 0;
    std::vector<std::string> a_tokens, b_tokens;
    Tensor a_to_b;  // [lenA x lenB], rows stochastic
    Tensor b_to_a;  // [lenB x lenA], rows stochastic
};

struct DecoderStepDump {
    std::string token;  // generated surface form
    Tensor heads;       // [H x L] context attention, rows stochastic
};

struct AttentionDump {
    std::vector<TurnAttentionDump> turns;
    std::vector<std::string> memory_tokens;  // labels for the L memory rows
    std::vector<DecoderStepDump> steps;      // one per greedily generated token
};

AttentionDump dump_attention(const Model& model, const EncodedExample& example);

// JSON with matrix payloads and shape metadata, one object per dump.
std::string format_attention(const AttentionDump& dump);

}  // namespace dialdesc
