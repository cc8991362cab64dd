#pragma once

#include <optional>
#include <unordered_map>

#include "dialdesc/model.hpp"

namespace dialdesc {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct AdagradConfig {
    double lr = 0.15;
    double acc0 = 0.1;
};

struct AdagradState {
    AdagradConfig config;
    std::unordered_map<std::string, std::vector<double>> accum;
};

// accum += g^2; param -= lr * g / sqrt(accum). A parameter with no gradient
// buffer counts as all-zero gradients.
void adagrad_step(NamedParams& params, AdagradState& state);

struct AdamWarmupConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    std::size_t warmup_steps = 8000;
    std::size_t d_model = 256;
};

struct AdamWarmupState {
    AdamWarmupConfig config;
    std::size_t step = 0;  // completed updates
    std::unordered_map<std::string, std::vector<double>> m;
    std::unordered_map<std::string, std::vector<double>> v;
};

// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5); step counts from 1.
double adam_warmup_lr(std::size_t step, std::size_t d_model, std::size_t warmup_steps);

void adam_warmup_step(NamedParams& params, AdamWarmupState& state);

// Scales gradients so the global L2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_gradients(NamedParams& params, double max_norm);

struct OptimizerState {
    std::string kind = "adam-warmup";  // or "adagrad"
    AdagradState adagrad;
    AdamWarmupState adam;

    void apply(NamedParams& params);
};

struct TrainConfig {
    std::size_t steps = 200;
    std::size_t batch_examples = 16;
    std::size_t batch_tokens = 0;  // > 0 switches to token-count batching
    std::string optimizer = "adam-warmup";
    AdagradConfig adagrad;
    AdamWarmupConfig adam;  // d_model is taken from the model
    double clip_norm = 2.0;
    std::size_t eval_every = 50;      // dev-loss cadence, 0 disables
    std::size_t checkpoint_every = 0;  // 0 keeps only best and final
    std::uint64_t seed = 1;

    void validate() const;
};

struct LossPoint {
    std::size_t step = 0;
    double train_loss = 0.0;
    double dev_loss = 0.0;
    bool has_dev = false;
};

struct TrainResult {
    std::vector<LossPoint> curve;
    std::size_t best_step = 0;
    double best_dev_loss = 0.0;
    std::string best_checkpoint;
    std::string final_checkpoint;
};

// Epoch sampler position: the current permutation of example indices and the
// cursor into it. The RNG state alone cannot reproduce an in-place shuffle
// history, so bitwise-identical resume needs both.
struct SamplerState {
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
};

struct Checkpoint {
    std::uint32_t version = 0;
    ModelConfig config;
    std::vector<std::string> vocab_tokens;
    NamedParams tensors;
    OptimizerState optimizer;
    std::size_t step = 0;
    std::string rng_state;
    std::optional<SamplerState> sampler;
};

// Versioned binary: magic, version, header length, JSON header (hyperparams,
// vocabulary, tensor directory, optimizer directory), then raw little-endian
// f64 payloads. Written atomically via a temporary file and rename.
void save_checkpoint(const std::string& path, Model& model, const Vocabulary& vocab,
                     const OptimizerState& optimizer, std::size_t step, const Rng& rng,
                     const SamplerState* sampler = nullptr);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into an existing model; mismatches name the tensor.
void restore_parameters(const Checkpoint& ckpt, Model& model);
Model model_from_checkpoint(const Checkpoint& ckpt);
Vocabulary vocab_from_checkpoint(const Checkpoint& ckpt);

// Mean teacher-forced NLL over a set of encoded examples, gradient-free.
double corpus_loss(const Model& model, const std::vector<EncodedExample>& examples);

std::vector<EncodedExample> encode_corpus(const std::vector<CorpusRecord>& records,
                                          const Vocabulary& vocab, const ModelConfig& config);

// Teacher-forced training. Resuming from a checkpoint restores parameters,
// optimizer state, step count, and the shuffling RNG. With a non-empty
// out_dir, writes best/final (and optional per-cadence) checkpoints plus
// loss.tsv; aborts with NumericError naming the step on non-finite loss.
TrainResult train(Model& model, const Vocabulary& vocab,
                  const std::vector<CorpusRecord>& train_records,
                  const std::vector<CorpusRecord>& dev_records, const TrainConfig& config,
                  const std::string& out_dir = "", const Checkpoint* resume = nullptr);

}  // namespace dialdesc
