#include "dialdesc/data.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dialdesc {

using nlohmann::json;

namespace {

const char* kReservedSurfaces[Vocabulary::kReserved] = {"<pad>", "<unk>", "<bos>", "<eos>"};

bool is_separator(char c) {
    return c == ',' || c == '.' || c == '?' || c == '!' || c == '\'' || c == '"';
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
    std::string spaced;
    spaced.reserve(text.size() + 8);
    for (char c : text) {
        if (is_separator(c)) {
            spaced.push_back(' ');
            spaced.push_back(c);
            spaced.push_back(' ');
        } else {
            spaced.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    std::vector<std::string> tokens;
    std::istringstream is(spaced);
    std::string tok;
    while (is >> tok) tokens.push_back(tok);
    return tokens;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

void CorpusRecord::validate() const {
    if (dialogue.empty()) {
        throw DataError("record " + id + ": empty dialogue");
    }
    for (std::size_t i = 0; i < dialogue.size(); ++i) {
        const std::string expected = i % 2 == 0 ? "A" : "B";
        if (dialogue[i].speaker != expected) {
            throw DataError("record " + id + ": utterance " + std::to_string(i) +
                            " has speaker '" + dialogue[i].speaker + "', expected '" + expected +
                            "'");
        }
    }
}

Vocabulary::Vocabulary() {
    for (std::size_t i = 0; i < kReserved; ++i) {
        to_id_.emplace(kReservedSurfaces[i], static_cast<int>(i));
        to_token_.emplace_back(kReservedSurfaces[i]);
    }
}

Vocabulary Vocabulary::build(const std::vector<CorpusRecord>& records, std::size_t cap) {
    if (records.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
    if (cap <= kReserved) {
        throw ConfigError("vocabulary cap " + std::to_string(cap) + " leaves no room beyond " +
                          std::to_string(kReserved) + " reserved ids");
    }
    std::unordered_map<std::string, std::size_t> counts;
    auto feed = [&](const std::string& text) {
        for (auto& tok : tokenize(text)) ++counts[tok];
    };
    for (const auto& rec : records) {
        for (const auto& utt : rec.dialogue) feed(utt.text);
        feed(rec.description);
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary vocab;
    for (const auto& [token, freq] : ranked) {
        if (vocab.to_token_.size() >= cap) break;
        if (vocab.to_id_.count(token)) continue;
        vocab.to_id_.emplace(token, static_cast<int>(vocab.to_token_.size()));
        vocab.to_token_.push_back(token);
    }
    return vocab;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& id_to_token) {
    if (id_to_token.size() < kReserved) {
        throw DataError("vocabulary list too short: " + std::to_string(id_to_token.size()));
    }
    for (std::size_t i = 0; i < kReserved; ++i) {
        if (id_to_token[i] != kReservedSurfaces[i]) {
            throw DataError("vocabulary slot " + std::to_string(i) + " holds '" +
                            id_to_token[i] + "', expected '" + kReservedSurfaces[i] + "'");
        }
    }
    Vocabulary vocab;
    for (std::size_t i = kReserved; i < id_to_token.size(); ++i) {
        auto [it, fresh] = vocab.to_id_.emplace(id_to_token[i],
                                                static_cast<int>(vocab.to_token_.size()));
        if (!fresh) throw DataError("duplicate vocabulary token '" + id_to_token[i] + "'");
        vocab.to_token_.push_back(id_to_token[i]);
    }
    return vocab;
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = to_id_.find(token);
    return it == to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token_of(std::size_t id) const {
    if (id >= to_token_.size()) {
        throw DataError("vocabulary id " + std::to_string(id) + " outside size " +
                        std::to_string(to_token_.size()));
    }
    return to_token_[id];
}

int ExtendedVocabulary::extended_id(const std::string& token) const {
    if (base->contains(token)) return base->id_of(token);
    for (std::size_t k = 0; k < oov_tokens.size(); ++k) {
        if (oov_tokens[k] == token) return static_cast<int>(base->size() + k);
    }
    return kUnkId;
}

std::string ExtendedVocabulary::token_of(std::size_t ext_id) const {
    if (ext_id < base->size()) return base->token_of(ext_id);
    const std::size_t k = ext_id - base->size();
    if (k >= oov_tokens.size()) {
        throw DataError("extended id " + std::to_string(ext_id) + " outside size " +
                        std::to_string(extended_size()));
    }
    return oov_tokens[k];
}

EncodedExample encode_example(const CorpusRecord& record, const Vocabulary& vocab,
                              std::size_t max_utterance_tokens, std::size_t max_target_tokens) {
    record.validate();
    EncodedExample ex;
    ex.ext.base = &vocab;

    auto prepare = [&](const std::string& text) {
        std::vector<std::string> toks = tokenize(text);
        if (toks.size() > max_utterance_tokens) toks.resize(max_utterance_tokens);
        if (toks.empty()) toks.push_back(kReservedSurfaces[kPadId]);
        return toks;
    };

    const std::size_t turn_count = (record.dialogue.size() + 1) / 2;
    std::vector<std::vector<std::string>> a_toks(turn_count), b_toks(turn_count);
    for (std::size_t t = 0; t < turn_count; ++t) {
        a_toks[t] = prepare(record.dialogue[2 * t].text);
        const bool has_b = 2 * t + 1 < record.dialogue.size();
        b_toks[t] = prepare(has_b ? record.dialogue[2 * t + 1].text : std::string());
    }

    for (std::size_t t = 0; t < turn_count; ++t) {
        for (const auto* side : {&a_toks[t], &b_toks[t]}) {
            for (const auto& tok : *side) {
                ex.item.source_tokens.push_back(tok);
                if (!vocab.contains(tok) &&
                    std::find(ex.ext.oov_tokens.begin(), ex.ext.oov_tokens.end(), tok) ==
                        ex.ext.oov_tokens.end()) {
                    ex.ext.oov_tokens.push_back(tok);
                }
            }
        }
    }

    auto to_ids = [&](const std::vector<std::string>& toks) {
        std::vector<int> ids;
        ids.reserve(toks.size());
        for (const auto& tok : toks) ids.push_back(vocab.id_of(tok));
        return ids;
    };
    for (std::size_t t = 0; t < turn_count; ++t) {
        ex.item.turns.emplace_back(to_ids(a_toks[t]), to_ids(b_toks[t]));
    }

    std::vector<std::string> target_toks = tokenize(record.description);
    if (max_target_tokens > 0 && target_toks.size() > max_target_tokens) {
        target_toks.resize(max_target_tokens);
    }
    ex.target.push_back(kBosId);
    for (const auto& tok : target_toks) {
        ex.target.push_back(vocab.contains(tok) ? vocab.id_of(tok) : ex.ext.extended_id(tok));
    }
    ex.target.push_back(kEosId);
    return ex;
}

// --- corpus files ------------------------------------------------------

std::vector<CorpusRecord> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file " + path);
    std::vector<CorpusRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        try {
            CorpusRecord rec;
            rec.id = j.at("id").get<std::string>();
            for (const auto& turn : j.at("dialogue")) {
                rec.dialogue.push_back(
                    {turn.at(0).get<std::string>(), turn.at(1).get<std::string>()});
            }
            rec.description = j.at("description").get<std::string>();
            if (j.contains("references")) {
                rec.references = j.at("references").get<std::vector<std::string>>();
            }
            rec.validate();
            records.push_back(std::move(rec));
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

void save_corpus(const std::string& path, const std::vector<CorpusRecord>& records) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write corpus file " + path);
    for (const auto& rec : records) {
        json turns = json::array();
        for (const auto& utt : rec.dialogue) turns.push_back({utt.speaker, utt.text});
        json j{{"id", rec.id}, {"dialogue", turns}, {"description", rec.description}};
        if (!rec.references.empty()) j["references"] = rec.references;
        out << j.dump() << "\n";
    }
    if (!out) throw DataError("failed while writing " + path);
}

// --- dataset builder ----------------------------------------------------

namespace {

std::size_t dialogue_token_count(const CorpusRecord& rec) {
    std::size_t n = 0;
    for (const auto& utt : rec.dialogue) n += tokenize(utt.text).size();
    return n;
}

SplitStats stats_for(const std::vector<CorpusRecord>& records) {
    SplitStats s;
    s.records = records.size();
    if (records.empty()) return s;
    double dial = 0.0, desc = 0.0;
    for (const auto& rec : records) {
        dial += static_cast<double>(dialogue_token_count(rec));
        desc += static_cast<double>(tokenize(rec.description).size());
    }
    s.mean_dialogue_tokens = dial / static_cast<double>(records.size());
    s.mean_description_tokens = desc / static_cast<double>(records.size());
    return s;
}

json parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

}  // namespace

BuildReport build_dataset(const std::string& dialogue_path, const std::string& caption_path,
                          const std::string& out_dir, const BuildOptions& options) {
    const json dialogue_dump = parse_file(dialogue_path);
    const json caption_dump = parse_file(caption_path);

    BuildReport report;

    // Dialogue adapter: {"data": {"questions": [...], "answers": [...],
    // "dialogs": [{"image_id": n, "dialog": [{"question": qi, "answer": ai}]}]}}
    std::vector<std::string> questions, answers;
    std::vector<std::pair<long, std::vector<Utterance>>> dialogs;
    std::map<long, std::size_t> dialog_count;
    try {
        const json& data = dialogue_dump.at("data");
        questions = data.at("questions").get<std::vector<std::string>>();
        answers = data.at("answers").get<std::vector<std::string>>();
        for (const auto& d : data.at("dialogs")) {
            const long image = d.at("image_id").get<long>();
            std::vector<Utterance> turns;
            for (const auto& qa : d.at("dialog")) {
                const auto qi = qa.at("question").get<std::size_t>();
                const auto ai = qa.at("answer").get<std::size_t>();
                if (qi >= questions.size() || ai >= answers.size()) {
                    throw DataError(dialogue_path + ": dialog for image " +
                                    std::to_string(image) + " references question " +
                                    std::to_string(qi) + "/answer " + std::to_string(ai) +
                                    " outside the shared lists");
                }
                turns.push_back({"A", questions[qi]});
                turns.push_back({"B", answers[ai]});
            }
            dialogs.emplace_back(image, std::move(turns));
            ++dialog_count[image];
        }
    } catch (const json::exception& e) {
        throw DataError(dialogue_path + ": " + e.what());
    }

    // Caption adapter: {"annotations": [{"image_id": n, "caption": "..."}]}
    std::map<long, std::vector<std::string>> captions;
    std::size_t caption_rows = 0;
    try {
        for (const auto& ann : caption_dump.at("annotations")) {
            captions[ann.at("image_id").get<long>()].push_back(
                ann.at("caption").get<std::string>());
            ++caption_rows;
        }
    } catch (const json::exception& e) {
        throw DataError(caption_path + ": " + e.what());
    }

    struct ImagePairs {
        long image;
        std::vector<Utterance> dialogue;
        std::vector<std::string> distinct_captions;
    };
    std::vector<ImagePairs> joined;
    std::set<long> usable_images;
    std::set<std::string> global_seen;
    for (auto& [image, turns] : dialogs) {
        if (dialog_count[image] > 1) {
            ++report.ambiguous_images;
            dialog_count[image] = 0;  // count each ambiguous image once
            continue;
        }
        if (dialog_count[image] == 0) continue;
        auto it = captions.find(image);
        if (it == captions.end()) {
            ++report.images_without_captions;
            continue;
        }
        ImagePairs entry{image, std::move(turns), {}};
        std::set<std::string> local_seen;
        for (const auto& cap : it->second) {
            auto& seen = options.global_dedup ? global_seen : local_seen;
            if (seen.insert(cap).second) entry.distinct_captions.push_back(cap);
        }
        if (entry.distinct_captions.empty()) {
            ++report.images_without_captions;
            continue;
        }
        report.joined_pairs += entry.distinct_captions.size();
        usable_images.insert(image);
        joined.push_back(std::move(entry));
    }
    for (const auto& [image, caps] : captions) {
        if (!usable_images.count(image)) report.captions_without_dialogue += caps.size();
    }
    if (joined.empty()) {
        throw DataError("join of " + dialogue_path + " and " + caption_path +
                        " produced no dialogue-description pairs");
    }

    // Seeded split by image, so every pair of one dialogue lands in one split
    // and test references can aggregate that dialogue's captions.
    std::vector<std::size_t> order(joined.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(options.seed);
    rng.shuffle(order);
    const std::size_t n = order.size();
    const std::size_t n_train = n * 8 / 10;
    const std::size_t n_dev = n / 10;

    std::vector<CorpusRecord> train, dev, test;
    for (std::size_t rank = 0; rank < n; ++rank) {
        const ImagePairs& entry = joined[order[rank]];
        if (rank < n_train + n_dev) {
            auto& split = rank < n_train ? train : dev;
            for (std::size_t k = 0; k < entry.distinct_captions.size(); ++k) {
                CorpusRecord rec;
                rec.id = std::to_string(entry.image) + "#" + std::to_string(k);
                rec.dialogue = entry.dialogue;
                rec.description = entry.distinct_captions[k];
                split.push_back(std::move(rec));
            }
        } else {
            CorpusRecord rec;
            rec.id = std::to_string(entry.image) + "#ref";
            rec.dialogue = entry.dialogue;
            rec.description = entry.distinct_captions[0];
            rec.references = entry.distinct_captions;
            if (rec.references.size() > options.max_test_references) {
                rec.references.resize(options.max_test_references);
            }
            test.push_back(std::move(rec));
        }
    }

    std::filesystem::create_directories(out_dir);
    const auto dir = std::filesystem::path(out_dir);
    save_corpus((dir / "train.jsonl").string(), train);
    save_corpus((dir / "dev.jsonl").string(), dev);
    save_corpus((dir / "test.jsonl").string(), test);

    report.train = stats_for(train);
    report.dev = stats_for(dev);
    report.test = stats_for(test);
    return report;
}

std::string format_stats_table(const BuildReport& report) {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-6s %10s %20s %18s\n", "split", "#samples",
                  "mean #dialog tokens", "mean #desc tokens");
    os << buf;
    auto row = [&](const char* name, const SplitStats& s) {
        std::snprintf(buf, sizeof(buf), "%-6s %10zu %20.2f %18.2f\n", name, s.records,
                      s.mean_dialogue_tokens, s.mean_description_tokens);
        os << buf;
    };
    row("train", report.train);
    row("dev", report.dev);
    row("test", report.test);
    return os.str();
}

}  // namespace dialdesc
