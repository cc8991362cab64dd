#include "dialdesc/nn.hpp"

#include <cmath>

namespace dialdesc {

LinearParams make_linear(std::size_t in, std::size_t out, Rng& rng) {
    LinearParams p;
    p.weight = Tensor::uniform({in, out}, -kInitRange, kInitRange, rng, true);
    p.bias = Tensor::zeros({out}, true);
    return p;
}

LayerNormParams make_layer_norm(std::size_t d) {
    LayerNormParams p;
    p.gain = Tensor::full({d}, 1.0, true);
    p.bias = Tensor::zeros({d}, true);
    return p;
}

MultiHeadParams make_multi_head(std::size_t d_model, std::size_t heads, Rng& rng) {
    if (heads == 0 || d_model % heads != 0) {
        throw ConfigError("attention width " + std::to_string(d_model) +
                          " is not divisible by head count " + std::to_string(heads));
    }
    const std::size_t d_head = d_model / heads;
    MultiHeadParams p;
    for (std::size_t h = 0; h < heads; ++h) {
        p.wq.push_back(Tensor::uniform({d_model, d_head}, -kInitRange, kInitRange, rng, true));
        p.wk.push_back(Tensor::uniform({d_model, d_head}, -kInitRange, kInitRange, rng, true));
        p.wv.push_back(Tensor::uniform({d_model, d_head}, -kInitRange, kInitRange, rng, true));
    }
    p.wo = Tensor::uniform({heads * d_head, d_model}, -kInitRange, kInitRange, rng, true);
    return p;
}

LstmGateParams make_lstm_gates(std::size_t input, std::size_t hidden, Rng& rng) {
    LstmGateParams p;
    const std::size_t rows = input + hidden;
    p.wi = Tensor::uniform({rows, hidden}, -kInitRange, kInitRange, rng, true);
    p.wf = Tensor::uniform({rows, hidden}, -kInitRange, kInitRange, rng, true);
    p.wo = Tensor::uniform({rows, hidden}, -kInitRange, kInitRange, rng, true);
    p.wg = Tensor::uniform({rows, hidden}, -kInitRange, kInitRange, rng, true);
    p.bi = Tensor::zeros({hidden}, true);
    p.bf = Tensor::zeros({hidden}, true);
    p.bo = Tensor::zeros({hidden}, true);
    p.bg = Tensor::zeros({hidden}, true);
    return p;
}

LstmParams make_bilstm(std::size_t input, std::size_t hidden_per_dir, Rng& rng) {
    LstmParams p;
    p.fwd = make_lstm_gates(input, hidden_per_dir, rng);
    p.bwd = make_lstm_gates(input, hidden_per_dir, rng);
    return p;
}

TransformerLayerParams make_transformer_layer(std::size_t d_model, std::size_t heads,
                                              std::size_t d_ff, bool decoder_layer, Rng& rng) {
    TransformerLayerParams p;
    p.self_attn = make_multi_head(d_model, heads, rng);
    p.self_norm = make_layer_norm(d_model);
    if (decoder_layer) {
        p.context_attn = make_multi_head(d_model, heads, rng);
        p.context_norm = make_layer_norm(d_model);
    }
    p.ffn_inner = make_linear(d_model, d_ff, rng);
    p.ffn_outer = make_linear(d_ff, d_model, rng);
    p.ffn_norm = make_layer_norm(d_model);
    return p;
}

Tensor positional_encoding(std::size_t count, std::size_t d_model, std::size_t first) {
    if (d_model % 2 != 0) {
        throw ConfigError("positional encoding needs an even width, got " +
                          std::to_string(d_model));
    }
    std::vector<double> data(count * d_model);
    for (std::size_t t = 0; t < count; ++t) {
        const double pos = static_cast<double>(first + t);
        for (std::size_t i = 0; i < d_model / 2; ++i) {
            const double freq =
                std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d_model));
            data[t * d_model + 2 * i] = std::sin(pos * freq);
            data[t * d_model + 2 * i + 1] = std::cos(pos * freq);
        }
    }
    return Tensor::from_data({count, d_model}, std::move(data));
}

AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& keys, const Tensor& values) {
    if (q.rank() != 1 || keys.rank() != 2 || values.rank() != 2) {
        throw ShapeError("scaled_dot_attention: expected q[d], keys[Txd], values[Txd_v]");
    }
    const std::size_t d = q.dim(0);
    const std::size_t t = keys.dim(0);
    if (keys.dim(1) != d) {
        throw ShapeError("scaled_dot_attention: query width " + std::to_string(d) +
                         " vs key width " + std::to_string(keys.dim(1)));
    }
    if (values.dim(0) != t) {
        throw ShapeError("scaled_dot_attention: " + std::to_string(t) + " keys but " +
                         std::to_string(values.dim(0)) + " values");
    }
    Tensor logits = mul_scalar(matmul(keys, reshape(q, {d, 1})),
                               1.0 / std::sqrt(static_cast<double>(d)));
    Tensor w = softmax(logits, 0);  // [T x 1]
    Tensor out = matmul(transpose(w), values);
    return {reshape(out, {values.dim(1)}), reshape(w, {t})};
}

Tensor causal_mask(std::size_t n) {
    std::vector<double> data(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) data[i * n + j] = 1.0;
    }
    return Tensor::from_data({n, n}, std::move(data));
}

MultiHeadResult multi_head_attention(const MultiHeadParams& params, const Tensor& queries,
                                     const Tensor& keys, const Tensor& values,
                                     const Tensor& mask) {
    const std::size_t heads = params.head_count();
    if (heads == 0) throw ConfigError("multi_head_attention: no heads");
    if (queries.rank() != 2 || keys.rank() != 2 || values.rank() != 2) {
        throw ShapeError("multi_head_attention: expected rank-2 queries/keys/values");
    }
    const std::size_t tq = queries.dim(0);
    const std::size_t tk = keys.dim(0);
    if (keys.dim(1) != queries.dim(1) || values.dim(0) != tk) {
        throw ShapeError("multi_head_attention: inconsistent shapes " +
                         shape_string(queries.shape()) + ", " + shape_string(keys.shape()) +
                         ", " + shape_string(values.shape()));
    }

    Tensor logit_shift;
    if (mask.defined()) {
        if (mask.shape() != std::vector<std::size_t>{tq, tk}) {
            throw ShapeError("multi_head_attention: mask " + shape_string(mask.shape()) +
                             " does not cover " + std::to_string(tq) + "x" + std::to_string(tk));
        }
        std::vector<double> shift(tq * tk);
        for (std::size_t i = 0; i < tq; ++i) {
            bool any = false;
            for (std::size_t j = 0; j < tk; ++j) {
                const double m = mask(i, j);
                if (m != 0.0 && m != 1.0) {
                    throw ShapeError("multi_head_attention: mask entries must be 0 or 1");
                }
                any = any || m == 1.0;
                shift[i * tk + j] = m == 1.0 ? 0.0 : kMaskedLogit;
            }
            if (!any) {
                throw ShapeError("multi_head_attention: query row " + std::to_string(i) +
                                 " has every key masked");
            }
        }
        logit_shift = Tensor::from_data({tq, tk}, std::move(shift));
    }

    const std::size_t d_head = params.wq[0].dim(1);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_head));
    std::vector<Tensor> head_outputs, head_weights;
    head_outputs.reserve(heads);
    head_weights.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = matmul(queries, params.wq[h]);
        Tensor kh = matmul(keys, params.wk[h]);
        Tensor vh = matmul(values, params.wv[h]);
        Tensor logits = mul_scalar(matmul(qh, transpose(kh)), scale);
        if (logit_shift.defined()) logits = add(logits, logit_shift);
        Tensor w = softmax(logits, 1);  // [Tq x Tk]
        head_outputs.push_back(matmul(w, vh));
        head_weights.push_back(reshape(w, {1, tq, tk}));
    }
    Tensor merged = heads == 1 ? head_outputs[0] : concat(head_outputs, 1);
    return {matmul(merged, params.wo),
            heads == 1 ? head_weights[0] : concat(head_weights, 0)};
}

Tensor head_mean(const Tensor& head_weights) {
    if (head_weights.rank() != 3) {
        throw ShapeError("head_mean: expected [H x Tq x T], got " +
                         shape_string(head_weights.shape()));
    }
    const std::size_t h = head_weights.dim(0);
    const std::size_t tq = head_weights.dim(1);
    const std::size_t tk = head_weights.dim(2);
    Tensor acc = reshape(slice(head_weights, 0, 0, 1), {tq, tk});
    for (std::size_t i = 1; i < h; ++i) {
        acc = add(acc, reshape(slice(head_weights, 0, i, i + 1), {tq, tk}));
    }
    return mul_scalar(acc, 1.0 / static_cast<double>(h));
}

namespace {

Tensor lstm_direction(const LstmGateParams& p, const Tensor& inputs, bool reverse) {
    const std::size_t t_len = inputs.dim(0);
    const std::size_t hidden = p.bi.numel();
    Tensor h = Tensor::zeros({1, hidden});
    Tensor c = Tensor::zeros({1, hidden});
    std::vector<Tensor> states(t_len);
    for (std::size_t step = 0; step < t_len; ++step) {
        const std::size_t t = reverse ? t_len - 1 - step : step;
        Tensor xh = concat({slice(inputs, 0, t, t + 1), h}, 1);
        Tensor gi = sigmoid(add_rowwise(matmul(xh, p.wi), p.bi));
        Tensor gf = sigmoid(add_rowwise(matmul(xh, p.wf), p.bf));
        Tensor go = sigmoid(add_rowwise(matmul(xh, p.wo), p.bo));
        Tensor gg = tanh(add_rowwise(matmul(xh, p.wg), p.bg));
        c = add(mul(gf, c), mul(gi, gg));
        h = mul(go, tanh(c));
        states[t] = h;
    }
    return t_len == 1 ? states[0] : concat(states, 0);
}

}  // namespace

Tensor bilstm(const LstmParams& params, const Tensor& inputs) {
    if (!inputs.defined() || inputs.rank() != 2 || inputs.dim(0) == 0) {
        throw ShapeError("bilstm: expected a non-empty [T x input] tensor");
    }
    const std::size_t width = params.fwd.wi.dim(0) - params.fwd.bi.numel();
    if (inputs.dim(1) != width) {
        throw ShapeError("bilstm: input width " + std::to_string(inputs.dim(1)) +
                         " does not match parameter width " + std::to_string(width));
    }
    Tensor fwd = lstm_direction(params.fwd, inputs, false);
    Tensor bwd = lstm_direction(params.bwd, inputs, true);
    return concat({fwd, bwd}, 1);
}

Tensor feed_forward(const LinearParams& inner, const LinearParams& outer, const Tensor& x) {
    Tensor hidden = relu(add_rowwise(matmul(x, inner.weight), inner.bias));
    return add_rowwise(matmul(hidden, outer.weight), outer.bias);
}

Tensor sublayer(const Tensor& x, const std::function<Tensor(const Tensor&)>& f,
                const LayerNormParams& norm) {
    Tensor branch = f(x);
    if (branch.shape() != x.shape()) {
        throw ShapeError("sublayer: branch produced " + shape_string(branch.shape()) +
                         " from " + shape_string(x.shape()));
    }
    return layer_norm(add(x, branch), norm.gain, norm.bias, kLayerNormEps);
}

}  // namespace dialdesc
