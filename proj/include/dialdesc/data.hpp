#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dialdesc/common.hpp"

namespace dialdesc {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kBosId = 2;
inline constexpr int kEosId = 3;

// Lowercases and splits on whitespace after detaching , . ? ! ' " as
// standalone tokens. Idempotent on its own joined output.
std::vector<std::string> tokenize(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);

struct Utterance {
    std::string speaker;  // "A" or "B"
    std::string text;
};

struct CorpusRecord {
    std::string id;
    std::vector<Utterance> dialogue;
    std::string description;
    std::vector<std::string> references;  // test split only

    // Enforces non-empty dialogue and strict A/B alternation starting at A.
    void validate() const;
};

class Vocabulary {
  public:
    static constexpr std::size_t kReserved = 4;

    Vocabulary();

    // Frequency-ranked tokens from dialogues and descriptions jointly,
    // ties broken lexicographically, reserved ids first, size capped.
    static Vocabulary build(const std::vector<CorpusRecord>& records, std::size_t cap = 20000);
    static Vocabulary from_tokens(const std::vector<std::string>& id_to_token);

    std::size_t size() const { return to_token_.size(); }
    bool contains(const std::string& token) const { return to_id_.count(token) > 0; }
    int id_of(const std::string& token) const;  // kUnkId when absent
    const std::string& token_of(std::size_t id) const;
    const std::vector<std::string>& tokens() const { return to_token_; }

  private:
    std::unordered_map<std::string, int> to_id_;
    std::vector<std::string> to_token_;
};

// Per-example vocabulary union: base ids stay put, the k-th dialogue-only
// token gets id |V|+k.
struct ExtendedVocabulary {
    const Vocabulary* base = nullptr;
    std::vector<std::string> oov_tokens;

    std::size_t extended_size() const { return base->size() + oov_tokens.size(); }
    int extended_id(const std::string& token) const;  // kUnkId when nowhere
    std::string token_of(std::size_t ext_id) const;
};

struct DialoguePairBatchItem {
    // Base vocabulary ids per turn, each utterance truncated; an utterance
    // that tokenizes to nothing is replaced by a single padding token.
    std::vector<std::pair<std::vector<int>, std::vector<int>>> turns;
    // Surface forms flattened turn-major (A before B), aligned with the
    // encoder memory rows.
    std::vector<std::string> source_tokens;
};

struct EncodedExample {
    DialoguePairBatchItem item;
    std::vector<int> target;  // BOS ... EOS, extended ids
    ExtendedVocabulary ext;
};

// max_target_tokens == 0 means unbounded.
EncodedExample encode_example(const CorpusRecord& record, const Vocabulary& vocab,
                              std::size_t max_utterance_tokens = 20,
                              std::size_t max_target_tokens = 0);

// One JSON object per line with fields id/dialogue/description/references.
std::vector<CorpusRecord> load_corpus(const std::string& path);
void save_corpus(const std::string& path, const std::vector<CorpusRecord>& records);

struct SplitStats {
    std::size_t records = 0;
    double mean_dialogue_tokens = 0.0;
    double mean_description_tokens = 0.0;
};

struct BuildReport {
    SplitStats train, dev, test;
    std::size_t joined_pairs = 0;
    std::size_t images_without_captions = 0;
    std::size_t captions_without_dialogue = 0;
    std::size_t ambiguous_images = 0;
};

struct BuildOptions {
    std::uint64_t seed = 1;
    // false: captions deduplicated within one image; true: across the corpus.
    bool global_dedup = false;
    std::size_t max_test_references = 5;
};

// Joins a dialogue dump and a caption dump on image id, writes
// train/dev/test .jsonl files into out_dir, and reports counts.
BuildReport build_dataset(const std::string& dialogue_path, const std::string& caption_path,
                          const std::string& out_dir, const BuildOptions& options = {});

std::string format_stats_table(const BuildReport& report);

}  // namespace dialdesc
