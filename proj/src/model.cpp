#include "dialdesc/model.hpp"

namespace dialdesc {

DecoderConfig ModelConfig::decoder_config() const {
    DecoderConfig dc;
    dc.layer_count = decoder_layers;
    dc.head_count = head_count;
    dc.d_model = d_model;
    dc.d_ff = d_ff;
    dc.max_target_len = max_target_len;
    dc.min_target_len = min_target_len;
    return dc;
}

void ModelConfig::validate() const {
    if (max_utterance_tokens == 0) throw ConfigError("utterance budget must be positive");
    decoder_config().validate();
}

Model make_model(const ModelConfig& config, std::size_t vocab_size, Rng& rng) {
    config.validate();
    if (vocab_size < Vocabulary::kReserved) {
        throw ConfigError("vocabulary of " + std::to_string(vocab_size) +
                          " lacks the reserved tokens");
    }
    Model m;
    m.config = config;
    m.embed =
        Tensor::uniform({vocab_size, config.d_model}, -kInitRange, kInitRange, rng, true);
    m.encoder =
        make_encoder(config.d_model, config.d_model, config.head_count, config.d_ff, rng);
    m.decoder = make_decoder(config.decoder_config(), vocab_size, rng);
    return m;
}

std::vector<std::pair<std::string, Tensor>> named_parameters(Model& model) {
    std::vector<std::pair<std::string, Tensor>> out;
    model.visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
}

EncoderMemory model_encode(const Model& model, const EncodedExample& example,
                           EncoderTrace* trace) {
    return encode_dialogue(example.item, example.ext, model.embed, model.encoder, trace);
}

Tensor model_loss(const Model& model, const EncodedExample& example) {
    if (example.target.size() < 2) {
        throw DataError("example target has no content beyond BOS");
    }
    EncoderMemory memory = model_encode(model, example);
    std::vector<int> prefix(example.target.begin(), example.target.end() - 1);
    auto steps =
        decoder_forward(prefix, memory, model.embed, model.decoder, model.config.decoder_config());
    std::vector<Tensor> losses;
    losses.reserve(steps.size());
    for (std::size_t t = 0; t < steps.size(); ++t) {
        losses.push_back(step_loss(steps[t].mixture, example.target[t + 1]));
    }
    return sequence_loss(losses);
}

}  // namespace dialdesc
