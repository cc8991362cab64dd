#pragma once

#include "dialdesc/decoder.hpp"

namespace dialdesc {

// One embedding table shared by the dialogue encoder and the decoder, so the
// embedding width is the model width.
struct ModelConfig {
    std::size_t d_model = 256;
    std::size_t head_count = 4;
    std::size_t d_ff = 1024;
    std::size_t decoder_layers = 2;
    std::size_t max_target_len = 15;
    std::size_t min_target_len = 5;
    std::size_t max_utterance_tokens = 20;

    DecoderConfig decoder_config() const;
    void validate() const;
};

struct Model {
    ModelConfig config;
    Tensor embed;  // [|V| x d_model]
    EncoderParams encoder;
    DecoderParams decoder;

    std::size_t vocab_size() const { return embed.dim(0); }

    void visit(const ParamVisitor& fn) {
        fn("embed", embed);
        encoder.visit("enc", fn);
        decoder.visit("dec", fn);
    }
};

Model make_model(const ModelConfig& config, std::size_t vocab_size, Rng& rng);

// All trainable tensors with stable names; handles alias the model's storage.
std::vector<std::pair<std::string, Tensor>> named_parameters(Model& model);

EncoderMemory model_encode(const Model& model, const EncodedExample& example,
                           EncoderTrace* trace = nullptr);

// Teacher-forced mean negative log likelihood of the example's target.
Tensor model_loss(const Model& model, const EncodedExample& example);

}  // namespace dialdesc
