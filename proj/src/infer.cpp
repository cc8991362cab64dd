#include "dialdesc/infer.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace dialdesc {

namespace {

using json = nlohmann::json;

bool token_allowed(int id, std::size_t produced, const ModelConfig& config) {
    if (id == kPadId || id == kBosId) return false;
    if (id == kEosId && produced < config.min_target_len) return false;
    return true;
}

std::vector<int> greedy_with_record(const Model& model, const EncoderMemory& memory,
                                    std::vector<DecoderStepOutput>* record) {
    const DecoderConfig dcfg = model.config.decoder_config();
    std::vector<int> out;
    DecoderCache cache;
    DecoderStepOutput step =
        decoder_step(kBosId, cache, memory, model.embed, model.decoder, dcfg);
    while (true) {
        const std::vector<double>& probs = step.distribution.probs;
        int best = -1;
        for (std::size_t id = 0; id < probs.size(); ++id) {
            if (!token_allowed(static_cast<int>(id), out.size(), model.config)) continue;
            if (best < 0 || probs[id] > probs[static_cast<std::size_t>(best)]) {
                best = static_cast<int>(id);
            }
        }
        if (best == kEosId) break;
        out.push_back(best);
        if (record != nullptr) record->push_back(step);
        if (out.size() >= model.config.max_target_len) break;
        step = decoder_step(best, cache, memory, model.embed, model.decoder, dcfg);
    }
    return out;
}

// Three-way lexicographic compare of parent tokens plus an optional appended
// id (-1 for none); shorter sequences order first on a shared prefix.
int appended_cmp(const std::vector<int>& a, int ta, const std::vector<int>& b, int tb) {
    const std::size_t la = a.size() + (ta >= 0 ? 1 : 0);
    const std::size_t lb = b.size() + (tb >= 0 ? 1 : 0);
    const std::size_t n = std::min(la, lb);
    for (std::size_t i = 0; i < n; ++i) {
        const int ai = i < a.size() ? a[i] : ta;
        const int bi = i < b.size() ? b[i] : tb;
        if (ai != bi) return ai < bi ? -1 : 1;
    }
    if (la != lb) return la < lb ? -1 : 1;
    return 0;
}

struct LiveBeam {
    BeamHypothesis hyp;
    std::vector<double> next_probs;  // distribution following the last fed token
};

struct Candidate {
    double score;
    std::size_t parent;
    int token;  // -1 carries a finished hypothesis through unchanged
};

}  // namespace

std::vector<int> greedy_decode(const Model& model, const EncoderMemory& memory) {
    std::vector<int> out = greedy_with_record(model, memory, nullptr);
    Graph::current().clear();
    return out;
}

BeamResult beam_search(const Model& model, const EncoderMemory& memory, std::size_t k) {
    if (k < 1) throw ConfigError("beam size must be at least 1");
    const DecoderConfig dcfg = model.config.decoder_config();

    std::vector<LiveBeam> beams(1);
    {
        DecoderStepOutput first =
            decoder_step(kBosId, beams[0].hyp.cache, memory, model.embed, model.decoder, dcfg);
        beams[0].next_probs = first.distribution.probs;
    }

    for (std::size_t round = 0; round < model.config.max_target_len + 1; ++round) {
        bool any_live = false;
        std::vector<Candidate> pool;
        for (std::size_t p = 0; p < beams.size(); ++p) {
            const LiveBeam& parent = beams[p];
            if (parent.hyp.finished) {
                pool.push_back({parent.hyp.log_prob, p, -1});
                continue;
            }
            any_live = true;
            for (std::size_t id = 0; id < parent.next_probs.size(); ++id) {
                if (!token_allowed(static_cast<int>(id), parent.hyp.tokens.size(),
                                   model.config)) {
                    continue;
                }
                pool.push_back({parent.hyp.log_prob + std::log(parent.next_probs[id]), p,
                                static_cast<int>(id)});
            }
        }
        if (!any_live) break;

        auto better = [&](const Candidate& a, const Candidate& b) {
            if (a.score != b.score) return a.score > b.score;
            const int c = appended_cmp(beams[a.parent].hyp.tokens, a.token,
                                       beams[b.parent].hyp.tokens, b.token);
            if (c != 0) return c < 0;
            return a.token < b.token;  // finished carry-through first
        };
        const std::size_t keep = std::min(k, pool.size());
        std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep),
                          pool.end(), better);
        pool.resize(keep);

        std::vector<LiveBeam> next;
        next.reserve(keep);
        for (const Candidate& cand : pool) {
            if (cand.token < 0) {
                next.push_back(beams[cand.parent]);
                continue;
            }
            LiveBeam child;
            child.hyp.tokens = beams[cand.parent].hyp.tokens;
            child.hyp.log_prob = cand.score;
            if (cand.token == kEosId) {
                child.hyp.finished = true;
            } else {
                child.hyp.tokens.push_back(cand.token);
                if (child.hyp.tokens.size() >= model.config.max_target_len) {
                    child.hyp.finished = true;
                } else {
                    child.hyp.cache = beams[cand.parent].hyp.cache;
                    DecoderStepOutput step = decoder_step(cand.token, child.hyp.cache, memory,
                                                          model.embed, model.decoder, dcfg);
                    child.next_probs = step.distribution.probs;
                }
            }
            next.push_back(std::move(child));
        }
        beams = std::move(next);
    }

    BeamResult result;
    for (LiveBeam& b : beams) result.k_best.push_back(std::move(b.hyp));
    result.best = result.k_best.front();
    Graph::current().clear();
    return result;
}

std::vector<std::string> resolve_copies(const std::vector<int>& ids,
                                        const ExtendedVocabulary& ext) {
    std::vector<std::string> words;
    words.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= ext.extended_size()) {
            throw DataError("extended id " + std::to_string(id) + " is out of range for size " +
                            std::to_string(ext.extended_size()));
        }
        words.push_back(ext.token_of(static_cast<std::size_t>(id)));
    }
    return words;
}

double score_sequence(const Model& model, const EncoderMemory& memory,
                      const std::vector<int>& tokens, bool include_eos) {
    std::vector<int> prefix;
    prefix.reserve(tokens.size() + 1);
    prefix.push_back(kBosId);
    prefix.insert(prefix.end(), tokens.begin(), tokens.end());
    const std::vector<DecoderStepOutput> steps = decoder_forward(
        prefix, memory, model.embed, model.decoder, model.config.decoder_config());

    double total = 0.0;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const std::vector<double>& probs = steps[t].distribution.probs;
        if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= probs.size()) {
            throw DataError("token id " + std::to_string(tokens[t]) +
                            " is outside the extended distribution");
        }
        total += std::log(probs[static_cast<std::size_t>(tokens[t])]);
    }
    if (include_eos) {
        total += std::log(steps.back().distribution.probs[kEosId]);
    }
    Graph::current().clear();
    return total;
}

AttentionDump dump_attention(const Model& model, const EncodedExample& example) {
    EncoderTrace trace;
    const EncoderMemory memory = model_encode(model, example, &trace);

    AttentionDump dump;
    dump.memory_tokens = example.item.source_tokens;

    dump.turns.resize(example.item.turns.size());
    for (std::size_t t = 0; t < dump.turns.size(); ++t) {
        dump.turns[t].turn = t;
        dump.turns[t].a_to_b = trace.attn_ab[t];
        dump.turns[t].b_to_a = trace.attn_ba[t];
    }
    for (std::size_t i = 0; i < memory.alignment.size(); ++i) {
        const AlignmentEntry& entry = memory.alignment[i];
        auto& labels = entry.speaker == 'A' ? dump.turns[entry.turn].a_tokens
                                            : dump.turns[entry.turn].b_tokens;
        if (labels.size() <= entry.token) labels.resize(entry.token + 1);
        labels[entry.token] = example.item.source_tokens[i];
    }

    std::vector<DecoderStepOutput> steps;
    const std::vector<int> generated = greedy_with_record(model, memory, &steps);
    const std::vector<std::string> words = resolve_copies(generated, example.ext);
    dump.steps.resize(generated.size());
    for (std::size_t t = 0; t < generated.size(); ++t) {
        dump.steps[t].token = words[t];
        dump.steps[t].heads = steps[t].context_attention;
    }
    Graph::current().clear();
    return dump;
}

namespace {

json matrix_json(const Tensor& t) {
    const std::size_t rows = t.dim(0), cols = t.dim(1);
    const auto flat = t.data();
    json m = json::array();
    for (std::size_t r = 0; r < rows; ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < cols; ++c) row.push_back(flat[r * cols + c]);
        m.push_back(std::move(row));
    }
    return json{{"shape", {rows, cols}}, {"rows", std::move(m)}};
}

}  // namespace

std::string format_attention(const AttentionDump& dump) {
    json turns = json::array();
    for (const TurnAttentionDump& t : dump.turns) {
        turns.push_back(json{{"turn", t.turn},
                             {"a_tokens", t.a_tokens},
                             {"b_tokens", t.b_tokens},
                             {"a_to_b", matrix_json(t.a_to_b)},
                             {"b_to_a", matrix_json(t.b_to_a)}});
    }
    json steps = json::array();
    for (const DecoderStepDump& s : dump.steps) {
        steps.push_back(json{{"token", s.token}, {"heads", matrix_json(s.heads)}});
    }
    return json{{"turns", std::move(turns)},
                {"memory_tokens", dump.memory_tokens},
                {"decoder_steps", std::move(steps)}}
        .dump();
}

}  // namespace dialdesc
