#include "dialdesc/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace dialdesc {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian f64");

namespace {

constexpr char kMagic[4] = {'D', 'D', 'C', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

using nlohmann::json;

void check_aligned(const std::string& name, std::size_t have, std::size_t want,
                   const char* what) {
    if (have != want) {
        throw ShapeError(std::string(what) + " for " + name + " holds " +
                         std::to_string(have) + " values, parameter has " +
                         std::to_string(want));
    }
}

}  // namespace

void adagrad_step(NamedParams& params, AdagradState& state) {
    for (auto& [name, t] : params) {
        auto& acc = state.accum[name];
        if (acc.empty()) acc.assign(t.numel(), state.config.acc0);
        check_aligned(name, acc.size(), t.numel(), "adagrad accumulator");
        if (!t.has_grad()) continue;
        auto g = t.grad();
        auto w = t.data_mut();
        for (std::size_t i = 0; i < w.size(); ++i) {
            acc[i] += g[i] * g[i];
            w[i] -= state.config.lr * g[i] / std::sqrt(acc[i]);
        }
    }
}

double adam_warmup_lr(std::size_t step, std::size_t d_model, std::size_t warmup_steps) {
    if (step == 0) throw ConfigError("schedule step counts from 1");
    if (d_model == 0 || warmup_steps == 0) {
        throw ConfigError("schedule needs positive d_model and warmup");
    }
    const double s = static_cast<double>(step);
    return std::pow(static_cast<double>(d_model), -0.5) *
           std::min(std::pow(s, -0.5), s * std::pow(static_cast<double>(warmup_steps), -1.5));
}

void adam_warmup_step(NamedParams& params, AdamWarmupState& state) {
    const auto& c = state.config;
    state.step += 1;
    const double lr = adam_warmup_lr(state.step, c.d_model, c.warmup_steps);
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (auto& [name, t] : params) {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(t.numel(), 0.0);
        if (v.empty()) v.assign(t.numel(), 0.0);
        check_aligned(name, m.size(), t.numel(), "adam first moment");
        check_aligned(name, v.size(), t.numel(), "adam second moment");
        const bool has = t.has_grad();
        auto w = t.data_mut();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = has ? t.grad()[i] : 0.0;
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

double clip_gradients(NamedParams& params, double max_norm) {
    double sq = 0.0;
    for (auto& [name, t] : params) {
        if (!t.has_grad()) continue;
        for (double g : t.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& [name, t] : params) {
            if (!t.has_grad()) continue;
            for (double& g : t.grad_mut()) g *= scale;
        }
    }
    return norm;
}

void OptimizerState::apply(NamedParams& params) {
    if (kind == "adagrad") {
        adagrad_step(params, adagrad);
    } else if (kind == "adam-warmup") {
        adam_warmup_step(params, adam);
    } else {
        throw ConfigError("unknown optimizer '" + kind + "'");
    }
}

void TrainConfig::validate() const {
    if (steps == 0) throw ConfigError("step budget must be positive");
    if (batch_examples == 0 && batch_tokens == 0) {
        throw ConfigError("either batch_examples or batch_tokens must be positive");
    }
    if (optimizer != "adagrad" && optimizer != "adam-warmup") {
        throw ConfigError("unknown optimizer '" + optimizer + "'");
    }
    if (clip_norm < 0.0) throw ConfigError("clip norm must be nonnegative");
}

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"d_model", c.d_model},
                {"head_count", c.head_count},
                {"d_ff", c.d_ff},
                {"decoder_layers", c.decoder_layers},
                {"max_target_len", c.max_target_len},
                {"min_target_len", c.min_target_len},
                {"max_utterance_tokens", c.max_utterance_tokens}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<std::size_t>();
    c.head_count = j.at("head_count").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.decoder_layers = j.at("decoder_layers").get<std::size_t>();
    c.max_target_len = j.at("max_target_len").get<std::size_t>();
    c.min_target_len = j.at("min_target_len").get<std::size_t>();
    c.max_utterance_tokens = j.at("max_utterance_tokens").get<std::size_t>();
    return c;
}

std::vector<std::string> sorted_keys(
    const std::unordered_map<std::string, std::vector<double>>& arrays) {
    std::vector<std::string> keys;
    keys.reserve(arrays.size());
    for (const auto& [k, v] : arrays) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    return keys;
}

json array_directory(const std::unordered_map<std::string, std::vector<double>>& arrays) {
    json dir = json::array();
    for (const auto& k : sorted_keys(arrays)) {
        dir.push_back(json{{"name", k}, {"size", arrays.at(k).size()}});
    }
    return dir;
}

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_doubles(std::ofstream& out, const double* data, std::size_t n) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 8));
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw DataError("checkpoint " + path + " is truncated");
    return v;
}

std::vector<double> read_doubles(std::ifstream& in, std::size_t n, const std::string& path) {
    std::vector<double> out(n);
    in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(n * 8));
    if (!in) throw DataError("checkpoint " + path + " is truncated");
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model, const Vocabulary& vocab,
                     const OptimizerState& optimizer, std::size_t step, const Rng& rng,
                     const SamplerState* sampler) {
    NamedParams params = named_parameters(model);

    json tensors = json::array();
    for (const auto& [name, t] : params) {
        tensors.push_back(json{{"name", name}, {"shape", t.shape()}});
    }
    json opt{{"kind", optimizer.kind}};
    if (optimizer.kind == "adagrad") {
        opt["lr"] = optimizer.adagrad.config.lr;
        opt["acc0"] = optimizer.adagrad.config.acc0;
        opt["accum"] = array_directory(optimizer.adagrad.accum);
    } else if (optimizer.kind == "adam-warmup") {
        const auto& c = optimizer.adam.config;
        opt["beta1"] = c.beta1;
        opt["beta2"] = c.beta2;
        opt["eps"] = c.eps;
        opt["warmup_steps"] = c.warmup_steps;
        opt["d_model"] = c.d_model;
        opt["step"] = optimizer.adam.step;
        opt["m"] = array_directory(optimizer.adam.m);
        opt["v"] = array_directory(optimizer.adam.v);
    } else {
        throw ConfigError("unknown optimizer '" + optimizer.kind + "'");
    }

    json header{{"config", config_to_json(model.config)},
                {"vocab", vocab.tokens()},
                {"tensors", tensors},
                {"optimizer", opt},
                {"step", step},
                {"rng", rng.serialize()}};
    if (sampler != nullptr) {
        header["sampler"] = json{{"order", sampler->order}, {"cursor", sampler->cursor}};
    }
    const std::string header_text = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint " + tmp);
        out.write(kMagic, 4);
        write_u32(out, kCheckpointVersion);
        write_u32(out, static_cast<std::uint32_t>(header_text.size()));
        out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
        for (const auto& [name, t] : params) {
            write_doubles(out, t.data().data(), t.numel());
        }
        if (optimizer.kind == "adagrad") {
            for (const auto& k : sorted_keys(optimizer.adagrad.accum)) {
                const auto& a = optimizer.adagrad.accum.at(k);
                write_doubles(out, a.data(), a.size());
            }
        } else {
            for (const auto& k : sorted_keys(optimizer.adam.m)) {
                const auto& a = optimizer.adam.m.at(k);
                write_doubles(out, a.data(), a.size());
            }
            for (const auto& k : sorted_keys(optimizer.adam.v)) {
                const auto& a = optimizer.adam.v.at(k);
                write_doubles(out, a.data(), a.size());
            }
        }
        out.flush();
        if (!out) throw DataError("failed writing checkpoint " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw DataError("cannot move checkpoint into place at " + path);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || !std::equal(magic, magic + 4, kMagic)) {
        throw DataError(path + " is not a checkpoint file");
    }
    const std::uint32_t version = read_u32(in, path);
    if (version != kCheckpointVersion) {
        throw DataError("checkpoint " + path + " has unsupported version " +
                        std::to_string(version));
    }
    const std::uint32_t header_len = read_u32(in, path);
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), header_len);
    if (!in) throw DataError("checkpoint " + path + " is truncated");

    Checkpoint ckpt;
    ckpt.version = version;
    try {
        const json header = json::parse(header_text);
        ckpt.config = config_from_json(header.at("config"));
        ckpt.vocab_tokens = header.at("vocab").get<std::vector<std::string>>();
        ckpt.step = header.at("step").get<std::size_t>();
        ckpt.rng_state = header.at("rng").get<std::string>();
        if (header.contains("sampler")) {
            SamplerState s;
            s.order = header.at("sampler").at("order").get<std::vector<std::size_t>>();
            s.cursor = header.at("sampler").at("cursor").get<std::size_t>();
            ckpt.sampler = std::move(s);
        }

        for (const auto& entry : header.at("tensors")) {
            const std::string name = entry.at("name").get<std::string>();
            const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
            std::size_t numel = 1;
            for (std::size_t d : shape) numel *= d;
            ckpt.tensors.emplace_back(
                name, Tensor::from_data(shape, read_doubles(in, numel, path), true));
        }

        const json& opt = header.at("optimizer");
        ckpt.optimizer.kind = opt.at("kind").get<std::string>();
        if (ckpt.optimizer.kind == "adagrad") {
            ckpt.optimizer.adagrad.config.lr = opt.at("lr").get<double>();
            ckpt.optimizer.adagrad.config.acc0 = opt.at("acc0").get<double>();
            for (const auto& entry : opt.at("accum")) {
                ckpt.optimizer.adagrad.accum[entry.at("name").get<std::string>()] =
                    read_doubles(in, entry.at("size").get<std::size_t>(), path);
            }
        } else if (ckpt.optimizer.kind == "adam-warmup") {
            auto& c = ckpt.optimizer.adam.config;
            c.beta1 = opt.at("beta1").get<double>();
            c.beta2 = opt.at("beta2").get<double>();
            c.eps = opt.at("eps").get<double>();
            c.warmup_steps = opt.at("warmup_steps").get<std::size_t>();
            c.d_model = opt.at("d_model").get<std::size_t>();
            ckpt.optimizer.adam.step = opt.at("step").get<std::size_t>();
            for (const auto& entry : opt.at("m")) {
                ckpt.optimizer.adam.m[entry.at("name").get<std::string>()] =
                    read_doubles(in, entry.at("size").get<std::size_t>(), path);
            }
            for (const auto& entry : opt.at("v")) {
                ckpt.optimizer.adam.v[entry.at("name").get<std::string>()] =
                    read_doubles(in, entry.at("size").get<std::size_t>(), path);
            }
        } else {
            throw DataError("checkpoint " + path + " names unknown optimizer '" +
                            ckpt.optimizer.kind + "'");
        }
    } catch (const json::exception& e) {
        throw DataError("checkpoint " + path + " has a malformed header: " + e.what());
    }
    in.peek();
    if (!in.eof()) throw DataError("checkpoint " + path + " has trailing bytes");
    return ckpt;
}

void restore_parameters(const Checkpoint& ckpt, Model& model) {
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;

    std::size_t used = 0;
    NamedParams params = named_parameters(model);
    for (auto& [name, t] : params) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw DataError("checkpoint lacks tensor " + name);
        }
        const Tensor& src = *it->second;
        if (src.shape() != t.shape()) {
            throw ShapeError("checkpoint tensor " + name + " has shape " +
                             shape_string(src.shape()) + ", model expects " +
                             shape_string(t.shape()));
        }
        std::copy(src.data().begin(), src.data().end(), t.data_mut().begin());
        ++used;
    }
    if (used != by_name.size()) {
        for (const auto& [name, t] : ckpt.tensors) {
            bool found = false;
            for (const auto& [pname, pt] : params) {
                if (pname == name) {
                    found = true;
                    break;
                }
            }
            if (!found) throw DataError("checkpoint carries unknown tensor " + name);
        }
    }
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
    Rng rng(0);
    Model model = make_model(ckpt.config, ckpt.vocab_tokens.size(), rng);
    restore_parameters(ckpt, model);
    return model;
}

Vocabulary vocab_from_checkpoint(const Checkpoint& ckpt) {
    return Vocabulary::from_tokens(ckpt.vocab_tokens);
}

double corpus_loss(const Model& model, const std::vector<EncodedExample>& examples) {
    if (examples.empty()) throw DataError("loss over an empty example set");
    NoGradGuard guard;
    double total = 0.0;
    for (const auto& ex : examples) total += model_loss(model, ex).value();
    return total / static_cast<double>(examples.size());
}

std::vector<EncodedExample> encode_corpus(const std::vector<CorpusRecord>& records,
                                          const Vocabulary& vocab, const ModelConfig& config) {
    std::vector<EncodedExample> out;
    out.reserve(records.size());
    for (const auto& rec : records) {
        out.push_back(
            encode_example(rec, vocab, config.max_utterance_tokens, config.max_target_len));
    }
    return out;
}

TrainResult train(Model& model, const Vocabulary& vocab,
                  const std::vector<CorpusRecord>& train_records,
                  const std::vector<CorpusRecord>& dev_records, const TrainConfig& config,
                  const std::string& out_dir, const Checkpoint* resume) {
    config.validate();
    if (train_records.empty()) throw DataError("training corpus is empty");
    const auto train_ex = encode_corpus(train_records, vocab, model.config);
    const auto dev_ex = encode_corpus(dev_records, vocab, model.config);
    NamedParams params = named_parameters(model);

    OptimizerState opt;
    opt.kind = config.optimizer;
    opt.adagrad.config = config.adagrad;
    opt.adam.config = config.adam;
    opt.adam.config.d_model = model.config.d_model;

    Rng rng(config.seed);
    std::size_t start_step = 0;
    if (resume != nullptr) {
        restore_parameters(*resume, model);
        opt = resume->optimizer;
        start_step = resume->step;
        rng.deserialize(resume->rng_state);
    }

    TrainResult result;
    result.best_dev_loss = std::numeric_limits<double>::infinity();

    SamplerState sampler;
    sampler.order.resize(train_ex.size());
    std::iota(sampler.order.begin(), sampler.order.end(), 0);
    sampler.cursor = sampler.order.size();  // shuffle on first use
    if (resume != nullptr && resume->sampler.has_value() &&
        resume->sampler->order.size() == train_ex.size()) {
        std::vector<bool> seen(train_ex.size(), false);
        for (std::size_t idx : resume->sampler->order) {
            if (idx >= train_ex.size() || seen[idx]) {
                throw DataError("checkpoint sampler order is not a permutation");
            }
            seen[idx] = true;
        }
        if (resume->sampler->cursor > train_ex.size()) {
            throw DataError("checkpoint sampler cursor is out of range");
        }
        sampler = *resume->sampler;
    }
    auto next_example = [&]() -> const EncodedExample& {
        if (sampler.cursor >= sampler.order.size()) {
            rng.shuffle(sampler.order);
            sampler.cursor = 0;
        }
        return train_ex[sampler.order[sampler.cursor++]];
    };

    for (std::size_t step = start_step + 1; step <= config.steps; ++step) {
        std::vector<const EncodedExample*> batch;
        if (config.batch_tokens > 0) {
            std::size_t budget = 0;
            while (budget < config.batch_tokens) {
                const EncodedExample& ex = next_example();
                batch.push_back(&ex);
                budget += ex.item.source_tokens.size() + ex.target.size();
            }
        } else {
            for (std::size_t i = 0; i < config.batch_examples; ++i) {
                batch.push_back(&next_example());
            }
        }

        for (auto& [name, t] : params) t.zero_grad();
        double total = 0.0;
        for (const EncodedExample* ex : batch) {
            try {
                Tensor loss = model_loss(model, *ex);
                const double lv = loss.value();
                if (!std::isfinite(lv)) {
                    throw NumericError("non-finite training loss");
                }
                backward(loss);
                total += lv;
            } catch (const NumericError& e) {
                Graph::current().clear();
                throw NumericError("step " + std::to_string(step) + ": " + e.what());
            }
            Graph::current().clear();
        }
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (auto& [name, t] : params) {
            if (!t.has_grad()) continue;
            for (double& g : t.grad_mut()) g *= inv;
        }
        clip_gradients(params, config.clip_norm);
        opt.apply(params);

        LossPoint point;
        point.step = step;
        point.train_loss = total * inv;
        const bool eval_now = !dev_ex.empty() && config.eval_every > 0 &&
                              (step % config.eval_every == 0 || step == config.steps);
        if (eval_now) {
            point.dev_loss = corpus_loss(model, dev_ex);
            point.has_dev = true;
            if (point.dev_loss < result.best_dev_loss) {
                result.best_dev_loss = point.dev_loss;
                result.best_step = step;
                if (!out_dir.empty()) {
                    result.best_checkpoint = out_dir + "/best.ckpt";
                    save_checkpoint(result.best_checkpoint, model, vocab, opt, step, rng,
                                    &sampler);
                }
            }
        }
        result.curve.push_back(point);
        if (!out_dir.empty() && config.checkpoint_every > 0 &&
            step % config.checkpoint_every == 0) {
            save_checkpoint(out_dir + "/step-" + std::to_string(step) + ".ckpt", model, vocab,
                            opt, step, rng, &sampler);
        }
    }

    if (!out_dir.empty()) {
        result.final_checkpoint = out_dir + "/final.ckpt";
        save_checkpoint(result.final_checkpoint, model, vocab, opt, config.steps, rng, &sampler);
        std::ofstream curve(out_dir + "/loss.tsv", std::ios::trunc);
        if (!curve) throw DataError("cannot write loss curve in " + out_dir);
        curve << "step\ttrain_loss\tdev_loss\n";
        for (const auto& p : result.curve) {
            curve << p.step << '\t' << p.train_loss << '\t';
            if (p.has_dev) {
                curve << p.dev_loss;
            } else {
                curve << '-';
            }
            curve << '\n';
        }
    }
    return result;
}

}  // namespace dialdesc
