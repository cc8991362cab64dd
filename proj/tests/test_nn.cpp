#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dialdesc/nn.hpp"
#include "testutil.hpp"

using namespace dialdesc;

namespace {

bool close(double a, double b, double tol = 1e-9) { return std::fabs(a - b) < tol; }

Tensor identity(std::size_t n) {
    std::vector<double> data(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) data[i * n + i] = 1.0;
    return Tensor::from_data({n, n}, std::move(data));
}

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST_CASE("positional encoding matches the sinusoid definition") {
    Tensor pe = positional_encoding(2, 4);
    CHECK(close(pe(0, 0), 0.0));
    CHECK(close(pe(0, 1), 1.0));
    CHECK(close(pe(0, 2), 0.0));
    CHECK(close(pe(0, 3), 1.0));
    CHECK(close(pe(1, 0), std::sin(1.0)));
    CHECK(close(pe(1, 1), std::cos(1.0)));
    CHECK(close(pe(1, 2), std::sin(0.01)));
    CHECK(close(pe(1, 3), std::cos(0.01)));

    Tensor pe2 = positional_encoding(1, 2, 1);
    CHECK(close(pe2(0, 0), 0.84147098480789650));
    CHECK(close(pe2(0, 1), 0.54030230586813977));

    CHECK_THROWS_AS(positional_encoding(2, 3), ConfigError);
    CHECK(!pe.requires_grad());
}

TEST_CASE("positional encoding columns follow a geometric wavelength progression") {
    const std::size_t d = 8, count = 50;
    Tensor pe = positional_encoding(count, d);
    for (std::size_t t = 0; t < count; ++t) {
        for (std::size_t j = 0; j < d; ++j) {
            CHECK(pe(t, j) >= -1.0);
            CHECK(pe(t, j) <= 1.0);
        }
        for (std::size_t i = 0; i < d / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * double(i) / double(d));
            CHECK(close(pe(t, 2 * i), std::sin(double(t) * freq)));
            CHECK(close(pe(t, 2 * i + 1), std::cos(double(t) * freq)));
        }
    }
    Tensor offset = positional_encoding(10, d, 7);
    Tensor plain = positional_encoding(17, d);
    for (std::size_t t = 0; t < 10; ++t) {
        for (std::size_t j = 0; j < d; ++j) CHECK(close(offset(t, j), plain(t + 7, j)));
    }
}

TEST_CASE("scaled dot attention degenerate cases") {
    Tensor q = Tensor::from_data({2}, {0.3, -0.7});
    Tensor k1 = Tensor::from_data({1, 2}, {1.0, 2.0});
    Tensor v1 = Tensor::from_data({1, 3}, {5.0, 6.0, 7.0});
    auto single = scaled_dot_attention(q, k1, v1);
    CHECK(close(single.weights(0), 1.0));
    CHECK(close(single.output(1), 6.0));

    Tensor same_keys = Tensor::from_data({3, 2}, {1, 1, 1, 1, 1, 1});
    Tensor vals = Tensor::from_data({3, 1}, {3.0, 6.0, 9.0});
    auto uniform = scaled_dot_attention(q, same_keys, vals);
    for (std::size_t t = 0; t < 3; ++t) CHECK(close(uniform.weights(t), 1.0 / 3.0));
    CHECK(close(uniform.output(0), 6.0));
}

TEST_CASE("scaled dot attention matches hand arithmetic") {
    Tensor q = Tensor::from_data({2}, {1, 0});
    Tensor k = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor v = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto r = scaled_dot_attention(q, k, v);
    const double s = 1.0 / std::sqrt(2.0);
    const double w0 = std::exp(s) / (std::exp(s) + 1.0);
    CHECK(close(r.weights(0), w0));
    CHECK(close(r.weights(1), 1.0 - w0));
    CHECK(close(r.weights(0), 0.6698, 1e-4));
    CHECK(close(r.output(0), w0));
    CHECK(close(r.output(1), 1.0 - w0));
    CHECK(close(r.weights(0) + r.weights(1), 1.0, 1e-12));

    CHECK_THROWS_AS(scaled_dot_attention(q, Tensor::from_data({1, 3}, {1, 2, 3}), v),
                    ShapeError);
    CHECK_THROWS_AS(scaled_dot_attention(q, k, Tensor::from_data({1, 2}, {1, 2})), ShapeError);
}

TEST_CASE("single head with identity projections reproduces scaled dot attention") {
    MultiHeadParams p;
    p.wq.push_back(identity(2));
    p.wk.push_back(identity(2));
    p.wv.push_back(identity(2));
    p.wo = identity(2);
    Tensor queries = Tensor::from_data({2, 2}, {1, 0, 0.4, -0.2});
    Tensor kv = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto mh = multi_head_attention(p, queries, kv, kv);
    for (std::size_t row = 0; row < 2; ++row) {
        Tensor q = Tensor::from_data({2}, {queries(row, 0), queries(row, 1)});
        auto ref = scaled_dot_attention(q, kv, kv);
        CHECK(close(mh.output(row, 0), ref.output(0)));
        CHECK(close(mh.output(row, 1), ref.output(1)));
        CHECK(close(mh.head_weights(0 * 4 + row * 2 + 0), ref.weights(0)));
    }
}

TEST_CASE("causal mask blocks future keys with exactly zero weight") {
    Rng rng(5);
    MultiHeadParams p = make_multi_head(4, 2, rng);
    Tensor x = Tensor::uniform({3, 4}, -1.0, 1.0, rng);
    auto mh = multi_head_attention(p, x, x, x, causal_mask(3));
    // head_weights is [2 x 3 x 3]
    for (std::size_t h = 0; h < 2; ++h) {
        CHECK(close(mh.head_weights(h * 9 + 0 * 3 + 0), 1.0));
        CHECK(mh.head_weights(h * 9 + 0 * 3 + 1) == 0.0);
        CHECK(mh.head_weights(h * 9 + 0 * 3 + 2) == 0.0);
        CHECK(mh.head_weights(h * 9 + 1 * 3 + 2) == 0.0);
        for (std::size_t i = 0; i < 3; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < 3; ++j) row += mh.head_weights(h * 9 + i * 3 + j);
            CHECK(close(row, 1.0, 1e-9));
        }
    }
}

TEST_CASE("attention weight rows are probability vectors for random inputs") {
    Rng rng(17);
    MultiHeadParams p = make_multi_head(6, 3, rng);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor q = Tensor::uniform({4, 6}, -2.0, 2.0, rng);
        Tensor kv = Tensor::uniform({5, 6}, -2.0, 2.0, rng);
        auto mh = multi_head_attention(p, q, kv, kv);
        const auto w = mh.head_weights.data();
        for (std::size_t h = 0; h < 3; ++h) {
            for (std::size_t i = 0; i < 4; ++i) {
                double row = 0.0;
                for (std::size_t j = 0; j < 5; ++j) {
                    const double wv = w[h * 20 + i * 5 + j];
                    CHECK(wv >= 0.0);
                    row += wv;
                }
                CHECK(close(row, 1.0, 1e-9));
            }
        }
    }
}

TEST_CASE("attention output is invariant to permuting key/value pairs") {
    Rng rng(23);
    MultiHeadParams p = make_multi_head(4, 2, rng);
    Tensor q = Tensor::uniform({2, 4}, -1.0, 1.0, rng);
    Tensor keys = Tensor::uniform({3, 4}, -1.0, 1.0, rng);
    Tensor vals = Tensor::uniform({3, 4}, -1.0, 1.0, rng);
    auto base = multi_head_attention(p, q, keys, vals);

    const std::vector<std::size_t> perm{2, 0, 1};
    std::vector<double> kp(12), vp(12);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
            kp[r * 4 + c] = keys(perm[r], c);
            vp[r * 4 + c] = vals(perm[r], c);
        }
    }
    auto permuted = multi_head_attention(p, q, Tensor::from_data({3, 4}, kp),
                                         Tensor::from_data({3, 4}, vp));
    for (std::size_t i = 0; i < base.output.numel(); ++i) {
        CHECK(close(base.output(i), permuted.output(i), 1e-12));
    }
}

TEST_CASE("fully masked query rows and bad masks are rejected") {
    Rng rng(29);
    MultiHeadParams p = make_multi_head(4, 1, rng);
    Tensor x = Tensor::uniform({2, 4}, -1.0, 1.0, rng);
    Tensor dead = Tensor::from_data({2, 2}, {1, 0, 0, 0});
    CHECK_THROWS_AS(multi_head_attention(p, x, x, x, dead), ShapeError);
    Tensor fuzzy = Tensor::from_data({2, 2}, {1, 0.5, 1, 1});
    CHECK_THROWS_AS(multi_head_attention(p, x, x, x, fuzzy), ShapeError);
    Tensor wrong = Tensor::from_data({1, 2}, {1, 1});
    CHECK_THROWS_AS(multi_head_attention(p, x, x, x, wrong), ShapeError);
    CHECK_THROWS_AS(make_multi_head(5, 2, rng), ConfigError);
}

TEST_CASE("head_mean averages the per-head stack") {
    Tensor stack = Tensor::from_data({2, 1, 2}, {0.2, 0.8, 0.6, 0.4});
    Tensor m = head_mean(stack);
    CHECK(close(m(0, 0), 0.4));
    CHECK(close(m(0, 1), 0.6));
    CHECK_THROWS_AS(head_mean(Tensor::from_data({2, 2}, {1, 2, 3, 4})), ShapeError);
}

TEST_CASE("multi head attention gradients pass finite differences") {
    Rng rng(31);
    MultiHeadParams p = make_multi_head(4, 2, rng);
    Tensor q = Tensor::uniform({2, 4}, -0.5, 0.5, rng, true);
    Tensor kv = Tensor::uniform({3, 4}, -0.5, 0.5, rng, true);

    auto loss_fn = [&]() {
        auto mh = multi_head_attention(p, q, kv, kv, Tensor());
        return add(mean(mh.output), mean(mul(mh.head_weights, mh.head_weights)));
    };
    auto report = testutil::finite_difference_check(
        loss_fn,
        {{"wq0", p.wq[0]}, {"wk1", p.wk[1]}, {"wv0", p.wv[0]}, {"wo", p.wo}, {"q", q}, {"kv", kv}},
        5);
    INFO(report.first_failure);
    CHECK(report.ok());
}

TEST_CASE("bilstm with zero parameters emits zeros") {
    LstmParams p;
    Rng rng(1);
    p.fwd = make_lstm_gates(2, 3, rng);
    p.bwd = make_lstm_gates(2, 3, rng);
    for (Tensor* t : {&p.fwd.wi, &p.fwd.wf, &p.fwd.wo, &p.fwd.wg, &p.bwd.wi, &p.bwd.wf,
                      &p.bwd.wo, &p.bwd.wg}) {
        std::fill(t->data_mut().begin(), t->data_mut().end(), 0.0);
    }
    Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor out = bilstm(p, x);
    REQUIRE(out.shape() == std::vector<std::size_t>({2, 6}));
    for (double v : out.data()) CHECK(close(v, 0.0));
}

TEST_CASE("bilstm direction symmetry under shared parameters") {
    Rng rng(37);
    LstmGateParams shared = make_lstm_gates(2, 3, rng);
    LstmParams p{shared, shared};
    Tensor x = Tensor::uniform({4, 2}, -1.0, 1.0, rng);
    std::vector<double> rev(x.numel());
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t c = 0; c < 2; ++c) rev[t * 2 + c] = x(3 - t, c);
    }
    Tensor xr = Tensor::from_data({4, 2}, std::move(rev));
    Tensor out = bilstm(p, x);
    Tensor out_r = bilstm(p, xr);
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(close(out_r(t, c), out(3 - t, c + 3), 1e-12));
            CHECK(close(out_r(t, c + 3), out(3 - t, c), 1e-12));
        }
    }
}

TEST_CASE("bilstm matches a hand-rolled scalar recurrence") {
    LstmParams p;
    Rng rng(2);
    p.fwd = make_lstm_gates(1, 1, rng);
    p.bwd = make_lstm_gates(1, 1, rng);
    auto set = [](Tensor& t, std::vector<double> v) {
        std::copy(v.begin(), v.end(), t.data_mut().begin());
    };
    set(p.fwd.wi, {0.5, 0.25});
    set(p.fwd.wf, {-0.3, 0.1});
    set(p.fwd.wo, {0.2, -0.4});
    set(p.fwd.wg, {0.7, 0.6});
    set(p.fwd.bi, {0.05});
    set(p.fwd.bf, {-0.02});
    set(p.fwd.bo, {0.03});
    set(p.fwd.bg, {0.0});

    const std::vector<double> xs{0.3, -0.4};
    Tensor x = Tensor::from_data({2, 1}, xs);
    Tensor out = bilstm(p, x);

    double h = 0.0, c = 0.0;
    std::vector<double> expect;
    for (double xv : xs) {
        const double gi = logistic(0.5 * xv + 0.25 * h + 0.05);
        const double gf = logistic(-0.3 * xv + 0.1 * h - 0.02);
        const double go = logistic(0.2 * xv - 0.4 * h + 0.03);
        const double gg = std::tanh(0.7 * xv + 0.6 * h);
        c = gf * c + gi * gg;
        h = go * std::tanh(c);
        expect.push_back(h);
    }
    CHECK(close(out(0, 0), expect[0], 1e-12));
    CHECK(close(out(1, 0), expect[1], 1e-12));

    CHECK_THROWS_AS(bilstm(p, Tensor::from_data({1, 2}, {1, 2})), ShapeError);
}

TEST_CASE("bilstm gradients pass finite differences") {
    Rng rng(41);
    LstmParams p = make_bilstm(2, 2, rng);
    Tensor x = Tensor::uniform({3, 2}, -0.5, 0.5, rng, true);
    auto loss_fn = [&]() { return mean(mul(bilstm(p, x), bilstm(p, x))); };
    auto report = testutil::finite_difference_check(
        loss_fn,
        {{"x", x},
         {"fwd.wi", p.fwd.wi},
         {"fwd.wg", p.fwd.wg},
         {"fwd.bf", p.fwd.bf},
         {"bwd.wo", p.bwd.wo},
         {"bwd.bi", p.bwd.bi}},
        4);
    INFO(report.first_failure);
    CHECK(report.ok());
}

TEST_CASE("feed forward matches its definition") {
    Rng rng(3);
    LinearParams inner = make_linear(1, 2, rng);
    LinearParams outer = make_linear(2, 1, rng);
    std::fill(inner.weight.data_mut().begin(), inner.weight.data_mut().end(), 0.0);
    inner.weight.data_mut()[0] = 1.0;
    inner.weight.data_mut()[1] = -1.0;
    outer.weight.data_mut()[0] = 2.0;
    outer.weight.data_mut()[1] = 2.0;
    Tensor x = Tensor::from_data({1, 1}, {1.0});
    Tensor y = feed_forward(inner, outer, x);
    CHECK(close(y(0, 0), 2.0));

    LinearParams zero_inner = make_linear(3, 4, rng);
    std::fill(zero_inner.weight.data_mut().begin(), zero_inner.weight.data_mut().end(), 0.0);
    LinearParams out2 = make_linear(4, 3, rng);
    out2.bias.data_mut()[0] = 1.5;
    out2.bias.data_mut()[2] = -2.5;
    Tensor x2 = Tensor::uniform({2, 3}, -1.0, 1.0, rng);
    Tensor y2 = feed_forward(zero_inner, out2, x2);
    for (std::size_t r = 0; r < 2; ++r) {
        CHECK(close(y2(r, 0), 1.5));
        CHECK(close(y2(r, 2), -2.5));
    }
}

TEST_CASE("feed forward is position-wise") {
    Rng rng(43);
    LinearParams inner = make_linear(3, 5, rng);
    LinearParams outer = make_linear(5, 3, rng);
    Tensor x = Tensor::uniform({4, 3}, -1.0, 1.0, rng);
    Tensor y = feed_forward(inner, outer, x);
    std::vector<double> permuted(x.numel());
    const std::vector<std::size_t> perm{3, 1, 0, 2};
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 3; ++c) permuted[r * 3 + c] = x(perm[r], c);
    }
    Tensor yp = feed_forward(inner, outer, Tensor::from_data({4, 3}, std::move(permuted)));
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 3; ++c) CHECK(close(yp(r, c), y(perm[r], c), 1e-12));
    }
}

TEST_CASE("sublayer wraps residual plus layer norm") {
    LayerNormParams norm = make_layer_norm(3);
    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto zero_fn = [](const Tensor& in) { return Tensor::zeros(in.shape()); };
    Tensor y = sublayer(x, zero_fn, norm);
    Tensor ref = layer_norm(x, norm.gain, norm.bias, kLayerNormEps);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(close(y(i), ref(i)));

    Tensor flat = Tensor::full({2, 3}, 7.0);
    Tensor yf = sublayer(flat, zero_fn, norm);
    for (double v : yf.data()) CHECK(close(v, 0.0));

    auto bad_fn = [](const Tensor& in) { return Tensor::zeros({in.dim(0), in.dim(1) + 1}); };
    CHECK_THROWS_AS(sublayer(x, bad_fn, norm), ShapeError);
}

TEST_CASE("sublayer gradient flows through branch and skip") {
    Rng rng(47);
    LinearParams inner = make_linear(3, 4, rng);
    LinearParams outer = make_linear(4, 3, rng);
    LayerNormParams norm = make_layer_norm(3);
    Tensor x = Tensor::uniform({2, 3}, -0.5, 0.5, rng, true);
    auto loss_fn = [&]() {
        auto branch = [&](const Tensor& in) { return feed_forward(inner, outer, in); };
        return mean(mul(sublayer(x, branch, norm), x));
    };
    auto report = testutil::finite_difference_check(
        loss_fn,
        {{"x", x},
         {"inner.w", inner.weight},
         {"outer.b", outer.bias},
         {"gain", norm.gain},
         {"bias", norm.bias}},
        5);
    INFO(report.first_failure);
    CHECK(report.ok());
}

TEST_CASE("transformer layer parameter shapes and registry names") {
    Rng rng(53);
    TransformerLayerParams enc = make_transformer_layer(8, 2, 16, false, rng);
    TransformerLayerParams dec = make_transformer_layer(8, 2, 16, true, rng);
    CHECK(!enc.is_decoder_layer());
    CHECK(dec.is_decoder_layer());
    CHECK(enc.self_attn.wq[0].shape() == std::vector<std::size_t>({8, 4}));
    CHECK(enc.ffn_inner.weight.shape() == std::vector<std::size_t>({8, 16}));

    std::vector<std::string> names;
    dec.visit("dec.l0", [&](const std::string& name, Tensor& t) {
        names.push_back(name);
        CHECK(t.defined());
        CHECK(t.requires_grad());
    });
    // two attention stacks of 7 tensors, three layer norms, two ffn linears
    CHECK(names.size() == 7 + 2 + 7 + 2 + 2 + 2 + 2);
    CHECK(std::find(names.begin(), names.end(), "dec.l0.ctx.h1.wv") != names.end());
    CHECK(std::find(names.begin(), names.end(), "dec.l0.ln_ffn.gain") != names.end());
}
