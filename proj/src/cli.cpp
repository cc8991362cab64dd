#include "dialdesc/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "CLI11.hpp"
#include "dialdesc/infer.hpp"
#include "dialdesc/metrics.hpp"
#include "dialdesc/train.hpp"
#include <json.hpp>

namespace dialdesc {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct RunConfig {
    std::string dialogues, captions;               // build-dataset inputs
    std::string train_corpus, dev_corpus, corpus;  // jsonl corpora
    std::string checkpoint, resume;
    std::string hypotheses;
    std::string record_id;
    std::string out;
    ModelConfig model;
    TrainConfig train;
    std::size_t vocab_cap = 20000;
    std::uint64_t seed = 1;
    std::size_t beam = 5;
    std::vector<std::size_t> beam_sweep = {1, 2, 4, 5, 7, 9, 10};
    bool global_dedup = false;
    std::size_t max_test_references = 5;
};

void reject_unknown(const json& obj, const std::string& context,
                    std::initializer_list<const char*> allowed) {
    for (const auto& item : obj.items()) {
        const bool known = std::any_of(allowed.begin(), allowed.end(),
                                       [&](const char* a) { return item.key() == a; });
        if (!known) {
            throw ConfigError("unknown config key '" + item.key() + "' in " + context);
        }
    }
}

RunConfig parse_config(const json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    RunConfig cfg;
    reject_unknown(j, "config",
                   {"dialogues", "captions", "train_corpus", "dev_corpus", "corpus",
                    "checkpoint", "resume", "hypotheses", "record_id", "out", "model", "train",
                    "vocab_cap", "seed", "beam", "beam_sweep", "global_dedup",
                    "max_test_references"});
    cfg.dialogues = j.value("dialogues", "");
    cfg.captions = j.value("captions", "");
    cfg.train_corpus = j.value("train_corpus", "");
    cfg.dev_corpus = j.value("dev_corpus", "");
    cfg.corpus = j.value("corpus", "");
    cfg.checkpoint = j.value("checkpoint", "");
    cfg.resume = j.value("resume", "");
    cfg.hypotheses = j.value("hypotheses", "");
    cfg.record_id = j.value("record_id", "");
    cfg.out = j.value("out", "");
    cfg.vocab_cap = j.value("vocab_cap", cfg.vocab_cap);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.beam = j.value("beam", cfg.beam);
    cfg.beam_sweep = j.value("beam_sweep", cfg.beam_sweep);
    cfg.global_dedup = j.value("global_dedup", cfg.global_dedup);
    cfg.max_test_references = j.value("max_test_references", cfg.max_test_references);

    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m, "model", {"d_model", "head_count", "d_ff", "decoder_layers",
                                    "max_target_len", "min_target_len",
                                    "max_utterance_tokens"});
        cfg.model.d_model = m.value("d_model", cfg.model.d_model);
        cfg.model.head_count = m.value("head_count", cfg.model.head_count);
        cfg.model.d_ff = m.value("d_ff", cfg.model.d_ff);
        cfg.model.decoder_layers = m.value("decoder_layers", cfg.model.decoder_layers);
        cfg.model.max_target_len = m.value("max_target_len", cfg.model.max_target_len);
        cfg.model.min_target_len = m.value("min_target_len", cfg.model.min_target_len);
        cfg.model.max_utterance_tokens =
            m.value("max_utterance_tokens", cfg.model.max_utterance_tokens);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        reject_unknown(t, "train",
                       {"steps", "batch_examples", "batch_tokens", "optimizer", "clip_norm",
                        "eval_every", "checkpoint_every", "adagrad", "adam"});
        cfg.train.steps = t.value("steps", cfg.train.steps);
        cfg.train.batch_examples = t.value("batch_examples", cfg.train.batch_examples);
        cfg.train.batch_tokens = t.value("batch_tokens", cfg.train.batch_tokens);
        cfg.train.optimizer = t.value("optimizer", cfg.train.optimizer);
        cfg.train.clip_norm = t.value("clip_norm", cfg.train.clip_norm);
        cfg.train.eval_every = t.value("eval_every", cfg.train.eval_every);
        cfg.train.checkpoint_every = t.value("checkpoint_every", cfg.train.checkpoint_every);
        if (t.contains("adagrad")) {
            const json& a = t.at("adagrad");
            reject_unknown(a, "train.adagrad", {"lr", "acc0"});
            cfg.train.adagrad.lr = a.value("lr", cfg.train.adagrad.lr);
            cfg.train.adagrad.acc0 = a.value("acc0", cfg.train.adagrad.acc0);
        }
        if (t.contains("adam")) {
            const json& a = t.at("adam");
            reject_unknown(a, "train.adam", {"beta1", "beta2", "eps", "warmup_steps"});
            cfg.train.adam.beta1 = a.value("beta1", cfg.train.adam.beta1);
            cfg.train.adam.beta2 = a.value("beta2", cfg.train.adam.beta2);
            cfg.train.adam.eps = a.value("eps", cfg.train.adam.eps);
            cfg.train.adam.warmup_steps = a.value("warmup_steps", cfg.train.adam.warmup_steps);
        }
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    try {
        return parse_config(json::parse(in));
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
}

std::vector<std::string> reference_set(const CorpusRecord& rec) {
    if (!rec.references.empty()) return rec.references;
    return {rec.description};
}

struct LoadedModel {
    Model model;
    Vocabulary vocab;
};

LoadedModel load_model(const std::string& path) {
    if (path.empty()) throw ConfigError("a 'checkpoint' path is required");
    Checkpoint ckpt = load_checkpoint(path);
    LoadedModel lm;
    lm.model = model_from_checkpoint(ckpt);
    lm.vocab = vocab_from_checkpoint(ckpt);
    return lm;
}

struct Generated {
    std::string id;
    std::string text;
    BeamResult beam;
    const EncodedExample* ex = nullptr;
};

std::vector<Generated> generate_all(const LoadedModel& lm,
                                    const std::vector<EncodedExample>& examples,
                                    const std::vector<CorpusRecord>& records, std::size_t k) {
    std::vector<Generated> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const EncoderMemory memory = model_encode(lm.model, examples[i]);
        Generated g;
        g.id = records[i].id;
        g.beam = beam_search(lm.model, memory, k);
        g.text = join_tokens(resolve_copies(g.beam.best.tokens, examples[i].ext));
        g.ex = &examples[i];
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<EncodedExample> encode_for_generation(const LoadedModel& lm,
                                                  const std::vector<CorpusRecord>& records) {
    std::vector<EncodedExample> examples;
    examples.reserve(records.size());
    for (const CorpusRecord& rec : records) {
        examples.push_back(encode_example(rec, lm.vocab, lm.model.config.max_utterance_tokens));
    }
    return examples;
}

int cmd_build_dataset(const RunConfig& cfg) {
    if (cfg.dialogues.empty() || cfg.captions.empty()) {
        throw ConfigError("build-dataset needs 'dialogues' and 'captions' in the config");
    }
    if (cfg.out.empty()) throw ConfigError("build-dataset needs an output directory");
    BuildOptions options;
    options.seed = cfg.seed;
    options.global_dedup = cfg.global_dedup;
    options.max_test_references = cfg.max_test_references;
    const BuildReport report = build_dataset(cfg.dialogues, cfg.captions, cfg.out, options);
    std::cout << format_stats_table(report);
    std::cout << "joined_pairs=" << report.joined_pairs
              << " images_without_captions=" << report.images_without_captions
              << " captions_without_dialogue=" << report.captions_without_dialogue
              << " ambiguous_images=" << report.ambiguous_images << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    if (cfg.train_corpus.empty()) throw ConfigError("train needs a 'train_corpus' path");
    if (cfg.out.empty()) throw ConfigError("train needs an output directory");
    fs::create_directories(cfg.out);
    const std::vector<CorpusRecord> train_records = load_corpus(cfg.train_corpus);
    std::vector<CorpusRecord> dev_records;
    if (!cfg.dev_corpus.empty()) dev_records = load_corpus(cfg.dev_corpus);

    TrainResult result;
    if (!cfg.resume.empty()) {
        const Checkpoint ckpt = load_checkpoint(cfg.resume);
        Vocabulary vocab = vocab_from_checkpoint(ckpt);
        Model model = model_from_checkpoint(ckpt);
        result = train(model, vocab, train_records, dev_records, cfg.train, cfg.out, &ckpt);
    } else {
        Vocabulary vocab = Vocabulary::build(train_records, cfg.vocab_cap);
        Rng rng(cfg.seed);
        Model model = make_model(cfg.model, vocab.size(), rng);
        result = train(model, vocab, train_records, dev_records, cfg.train, cfg.out);
    }
    std::cout << "steps=" << (result.curve.empty() ? 0 : result.curve.back().step)
              << " final_train_loss=" << (result.curve.empty() ? 0.0 : result.curve.back().train_loss)
              << " checkpoint=" << result.final_checkpoint << "\n";
    return 0;
}

int cmd_generate(const RunConfig& cfg) {
    if (cfg.corpus.empty()) throw ConfigError("generate needs a 'corpus' path");
    if (cfg.out.empty()) throw ConfigError("generate needs an output directory");
    const LoadedModel lm = load_model(cfg.checkpoint);
    const std::vector<CorpusRecord> records = load_corpus(cfg.corpus);
    const std::vector<EncodedExample> examples = encode_for_generation(lm, records);
    const std::vector<Generated> generated = generate_all(lm, examples, records, cfg.beam);

    fs::create_directories(cfg.out);
    const fs::path dir(cfg.out);
    std::ofstream best_out(dir / "hypotheses.jsonl", std::ios::trunc);
    std::ofstream kbest_out(dir / "kbest.jsonl", std::ios::trunc);
    if (!best_out || !kbest_out) throw DataError("cannot write outputs in " + cfg.out);
    for (const Generated& g : generated) {
        best_out << json{{"id", g.id}, {"text", g.text}, {"score", g.beam.best.log_prob}}.dump()
                 << "\n";
        for (std::size_t rank = 0; rank < g.beam.k_best.size(); ++rank) {
            const BeamHypothesis& hyp = g.beam.k_best[rank];
            kbest_out << json{{"id", g.id},
                              {"rank", rank},
                              {"score", hyp.log_prob},
                              {"text", join_tokens(resolve_copies(hyp.tokens, g.ex->ext))}}
                             .dump()
                      << "\n";
        }
    }
    std::cout << "generated=" << generated.size() << " beam=" << cfg.beam
              << " hypotheses=" << (dir / "hypotheses.jsonl").string() << "\n";
    return 0;
}

std::vector<std::pair<std::string, std::string>> load_hypotheses(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open hypothesis file " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            out.emplace_back(j.at("id").get<std::string>(), j.at("text").get<std::string>());
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (out.empty()) throw DataError("hypothesis file " + path + " is empty");
    return out;
}

EvalReport evaluate_against(const std::vector<std::pair<std::string, std::string>>& hyps,
                            const std::vector<CorpusRecord>& records) {
    std::unordered_map<std::string, const CorpusRecord*> by_id;
    for (const CorpusRecord& rec : records) {
        if (!by_id.emplace(rec.id, &rec).second) {
            throw DataError("duplicate id '" + rec.id + "' in reference corpus");
        }
    }
    std::vector<std::string> texts;
    std::vector<std::vector<std::string>> refs;
    for (const auto& [id, text] : hyps) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw DataError("hypothesis id '" + id + "' is missing from the reference corpus");
        }
        texts.push_back(text);
        refs.push_back(reference_set(*it->second));
    }
    return evaluate(texts, refs);
}

int cmd_evaluate(const RunConfig& cfg) {
    if (cfg.hypotheses.empty()) throw ConfigError("evaluate needs a 'hypotheses' path");
    if (cfg.corpus.empty()) throw ConfigError("evaluate needs a reference 'corpus' path");
    const auto hyps = load_hypotheses(cfg.hypotheses);
    const std::vector<CorpusRecord> records = load_corpus(cfg.corpus);
    const EvalReport report = evaluate_against(hyps, records);
    std::cout << format_report(report);
    if (!cfg.out.empty()) {
        fs::create_directories(cfg.out);
        std::ofstream out(fs::path(cfg.out) / "report.json", std::ios::trunc);
        if (!out) throw DataError("cannot write report in " + cfg.out);
        out << report_json(report) << "\n";
    }
    return 0;
}

int cmd_sweep_beam(const RunConfig& cfg) {
    if (cfg.corpus.empty()) throw ConfigError("sweep-beam needs a 'corpus' path");
    if (cfg.beam_sweep.empty()) throw ConfigError("sweep-beam needs a non-empty K list");
    const LoadedModel lm = load_model(cfg.checkpoint);
    const std::vector<CorpusRecord> records = load_corpus(cfg.corpus);
    const std::vector<EncodedExample> examples = encode_for_generation(lm, records);

    std::ostringstream table;
    table << "K\tBLEU-1\tBLEU-2\tBLEU-3\tBLEU-4\tROUGE-L\tCIDEr\n";
    table.setf(std::ios::fixed);
    for (std::size_t k : cfg.beam_sweep) {
        const std::vector<Generated> generated = generate_all(lm, examples, records, k);
        std::vector<std::string> texts;
        std::vector<std::vector<std::string>> refs;
        for (std::size_t i = 0; i < generated.size(); ++i) {
            texts.push_back(generated[i].text);
            refs.push_back(reference_set(records[i]));
        }
        const EvalReport report = evaluate(texts, refs);
        table.precision(2);
        table << k << '\t' << 100.0 * report.bleu_1 << '\t' << 100.0 * report.bleu_2 << '\t'
              << 100.0 * report.bleu_3 << '\t' << 100.0 * report.bleu_4 << '\t'
              << 100.0 * report.rouge_l << '\t';
        table.precision(4);
        table << report.cider << '\n';
    }
    std::cout << table.str();
    if (!cfg.out.empty()) {
        fs::create_directories(cfg.out);
        std::ofstream out(fs::path(cfg.out) / "sweep.tsv", std::ios::trunc);
        if (!out) throw DataError("cannot write sweep table in " + cfg.out);
        out << table.str();
    }
    return 0;
}

int cmd_inspect_attention(const RunConfig& cfg) {
    if (cfg.corpus.empty()) throw ConfigError("inspect-attention needs a 'corpus' path");
    if (cfg.record_id.empty()) throw ConfigError("inspect-attention needs a 'record_id'");
    const LoadedModel lm = load_model(cfg.checkpoint);
    const std::vector<CorpusRecord> records = load_corpus(cfg.corpus);
    const auto it = std::find_if(records.begin(), records.end(), [&](const CorpusRecord& r) {
        return r.id == cfg.record_id;
    });
    if (it == records.end()) {
        throw DataError("record id '" + cfg.record_id + "' not found in " + cfg.corpus);
    }
    const EncodedExample ex =
        encode_example(*it, lm.vocab, lm.model.config.max_utterance_tokens);
    const std::string text = format_attention(dump_attention(lm.model, ex));
    if (cfg.out.empty()) {
        std::cout << text << "\n";
        return 0;
    }
    fs::create_directories(cfg.out);
    std::string safe = cfg.record_id;
    std::replace_if(
        safe.begin(), safe.end(), [](char c) { return c == '/' || c == '#'; }, '_');
    const fs::path path = fs::path(cfg.out) / ("attention-" + safe + ".json");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write attention dump in " + cfg.out);
    out << text << "\n";
    std::cout << "attention=" << path.string() << "\n";
    return 0;
}

std::string one_line(std::string text) {
    std::replace(text.begin(), text.end(), '\n', ' ');
    return text;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"dialogue description toolkit", "dialdesc"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> beam;
    std::optional<std::string> out;

    const std::vector<std::pair<std::string, std::string>> names = {
        {"build-dataset", "join dialogue and caption dumps into corpus splits"},
        {"train", "train a model and write checkpoints"},
        {"generate", "decode descriptions for a corpus with beam search"},
        {"evaluate", "score generated descriptions against references"},
        {"sweep-beam", "evaluate across a list of beam sizes"},
        {"inspect-attention", "dump attention maps for one record"},
    };
    for (const auto& [name, blurb] : names) {
        CLI::App* sub = app.add_subcommand(name, blurb);
        sub->add_option("--config", config_path, "JSON run configuration")->required();
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--beam", beam, "override the beam size");
        sub->add_option("--out", out, "override the output directory");
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(std::move(reversed));
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        std::cerr << "usage: dialdesc <subcommand> --config <path> [--seed N] [--beam K] [--out DIR]\n";
        return 2;
    }

    try {
        RunConfig cfg = load_config(config_path);
        if (seed.has_value()) cfg.seed = *seed;
        if (beam.has_value()) {
            cfg.beam = *beam;
            cfg.beam_sweep = {*beam};
        }
        if (out.has_value()) cfg.out = *out;
        cfg.train.seed = cfg.seed;

        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "build-dataset") return cmd_build_dataset(cfg);
        if (name == "train") return cmd_train(cfg);
        if (name == "generate") return cmd_generate(cfg);
        if (name == "evaluate") return cmd_evaluate(cfg);
        if (name == "sweep-beam") return cmd_sweep_beam(cfg);
        return cmd_inspect_attention(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << one_line(e.what()) << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: numeric: " << one_line(e.what()) << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "error: data: " << one_line(e.what()) << "\n";
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "error: data: " << one_line(e.what()) << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << one_line(e.what()) << "\n";
        return 4;
    }
}

}  // namespace dialdesc
