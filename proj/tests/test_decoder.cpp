#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "dialdesc/decoder.hpp"
#include "testutil.hpp"

using namespace dialdesc;

namespace {

struct Fixture {
    Rng rng{7};
    DecoderConfig cfg;
    std::size_t vocab = 12;
    DecoderParams params;
    Tensor embed;
    EncoderMemory memory;

    Fixture() {
        cfg.layer_count = 2;
        cfg.head_count = 2;
        cfg.d_model = 8;
        cfg.d_ff = 12;
        params = make_decoder(cfg, vocab, rng);
        embed = Tensor::uniform({vocab, cfg.d_model}, -0.1, 0.1, rng, true);
        memory.memory = Tensor::uniform({3, cfg.d_model}, -0.5, 0.5, rng, true);
        // Last slot is a source-only OOV: extended id |V|.
        memory.alignment = {{0, 'A', 0, 4},
                            {0, 'A', 1, 5},
                            {0, 'B', 0, static_cast<int>(vocab)}};
    }

    std::size_t ext_size() const { return vocab + 1; }
};

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        if (a.data()[i] != b.data()[i]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("decoder forward produces one output per prefix position with expected shapes") {
    Fixture f;
    auto steps = decoder_forward({kBosId, 4, 5, static_cast<int>(f.vocab)}, f.memory, f.embed,
                                 f.params, f.cfg);
    REQUIRE(steps.size() == 4);
    for (const auto& s : steps) {
        CHECK(s.state.shape() == std::vector<std::size_t>{1, f.cfg.d_model});
        CHECK(s.context_attention.shape() ==
              std::vector<std::size_t>{f.cfg.head_count, f.memory.length()});
        CHECK(s.mixture.shape() == std::vector<std::size_t>{1, f.ext_size()});
        CHECK(s.distribution.extended_size == f.ext_size());
        CHECK(s.p_gen > 0.0);
        CHECK(s.p_gen < 1.0);
        // Each head row over memory is stochastic.
        for (std::size_t h = 0; h < f.cfg.head_count; ++h) {
            double row = 0.0;
            for (std::size_t l = 0; l < f.memory.length(); ++l) {
                row += s.context_attention(h, l);
            }
            CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("changing a later prefix token leaves earlier outputs bit-identical") {
    Fixture f;
    auto base = decoder_forward({kBosId, 4, 5, 6}, f.memory, f.embed, f.params, f.cfg);
    auto perturbed = decoder_forward({kBosId, 4, 9, 11}, f.memory, f.embed, f.params, f.cfg);
    for (std::size_t t = 0; t < 2; ++t) {
        CHECK(bit_equal(base[t].state, perturbed[t].state));
        CHECK(bit_equal(base[t].context_attention, perturbed[t].context_attention));
        CHECK(bit_equal(base[t].mixture, perturbed[t].mixture));
        CHECK(base[t].p_gen == perturbed[t].p_gen);
    }
    // Position 2 does change (the token there differs).
    CHECK(!bit_equal(base[2].state, perturbed[2].state));
}

TEST_CASE("singleton memory forces every context attention row to [1]") {
    Fixture f;
    f.memory.memory = Tensor::uniform({1, f.cfg.d_model}, -0.5, 0.5, f.rng);
    f.memory.alignment = {{0, 'A', 0, 4}};
    auto steps = decoder_forward({kBosId, 4, 5}, f.memory, f.embed, f.params, f.cfg);
    for (const auto& s : steps) {
        REQUIRE(s.context_attention.shape() ==
                std::vector<std::size_t>{f.cfg.head_count, 1});
        for (std::size_t h = 0; h < f.cfg.head_count; ++h) {
            CHECK(s.context_attention(h, 0) == 1.0);
        }
    }
}

TEST_CASE("incremental decoding with a cache matches the full forward bit for bit") {
    Fixture f;
    std::vector<int> prefix = {kBosId, 4, static_cast<int>(f.vocab), 7, 5};
    auto full = decoder_forward(prefix, f.memory, f.embed, f.params, f.cfg);

    DecoderCache cache;
    for (std::size_t t = 0; t < prefix.size(); ++t) {
        auto step = decoder_step(prefix[t], cache, f.memory, f.embed, f.params, f.cfg);
        CHECK(bit_equal(full[t].state, step.state));
        CHECK(bit_equal(full[t].context_attention, step.context_attention));
        CHECK(bit_equal(full[t].mixture, step.mixture));
        CHECK(full[t].p_gen == step.p_gen);
    }
    CHECK(cache.steps == prefix.size());
}

TEST_CASE("prefix length limits are enforced") {
    Fixture f;
    CHECK_THROWS_AS(decoder_forward({}, f.memory, f.embed, f.params, f.cfg), DataError);
    std::vector<int> too_long(f.cfg.max_target_len + 2, 4);
    too_long[0] = kBosId;
    CHECK_THROWS_AS(decoder_forward(too_long, f.memory, f.embed, f.params, f.cfg), DataError);

    DecoderCache cache;
    for (std::size_t t = 0; t < f.cfg.max_target_len + 1; ++t) {
        decoder_step(4, cache, f.memory, f.embed, f.params, f.cfg);
    }
    CHECK_THROWS_AS(decoder_step(4, cache, f.memory, f.embed, f.params, f.cfg), DataError);
}

TEST_CASE("vocab distribution is uniform under zero projection and tracks logit argmax") {
    Rng rng(3);
    const std::size_t d = 6, v = 9;
    Tensor state = Tensor::uniform({1, d}, -1.0, 1.0, rng);

    LinearParams zero{Tensor::zeros({d, v}), Tensor::zeros({v})};
    Tensor uniform = vocab_distribution(state, zero);
    for (std::size_t j = 0; j < v; ++j) {
        CHECK(uniform(0, j) == doctest::Approx(1.0 / v).epsilon(1e-12));
    }

    LinearParams proj = make_linear(d, v, rng);
    Tensor pv = vocab_distribution(state, proj);
    double total = 0.0;
    for (std::size_t j = 0; j < v; ++j) total += pv(0, j);
    CHECK(std::fabs(total - 1.0) < 1e-9);

    NoGradGuard guard;
    Tensor logits = add_rowwise(matmul(state, proj.weight), proj.bias);
    std::size_t arg_logit = 0, arg_prob = 0;
    for (std::size_t j = 1; j < v; ++j) {
        if (logits(0, j) > logits(0, arg_logit)) arg_logit = j;
        if (pv(0, j) > pv(0, arg_prob)) arg_prob = j;
    }
    CHECK(arg_logit == arg_prob);
}

TEST_CASE("generation probability gate saturates but stays inside (0,1)") {
    Rng rng(4);
    const std::size_t d = 6;
    Tensor state = Tensor::uniform({1, d}, -1.0, 1.0, rng);

    Tensor w0 = Tensor::zeros({d, 1});
    CHECK(generation_probability(state, w0, Tensor::zeros({1})).value() == 0.5);
    CHECK(generation_probability(state, w0, Tensor::full({1}, 20.0)).value() ==
          doctest::Approx(1.0).epsilon(1e-8));
    CHECK(generation_probability(state, w0, Tensor::full({1}, -20.0)).value() ==
          doctest::Approx(0.0).epsilon(1e-8));

    for (double logit : {-35.0, -20.0, -5.0, 0.0, 5.0, 20.0, 35.0}) {
        double p = generation_probability(state, w0, Tensor::full({1}, logit)).value();
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("pointer distribution scatters head-averaged mass onto extended ids") {
    std::vector<AlignmentEntry> align = {{0, 'A', 0, 2}, {0, 'A', 1, 5}, {0, 'B', 0, 2}};

    SUBCASE("point mass lands on the attended token") {
        Tensor attn = Tensor::from_data({1, 3}, {0.0, 1.0, 0.0});
        Tensor a = pointer_distribution(attn, align, 7);
        CHECK(a(0, 5) == 1.0);
        CHECK(a(0, 2) == 0.0);
    }

    SUBCASE("repeated source token accumulates 0.3 + 0.2") {
        Tensor attn = Tensor::from_data({1, 3}, {0.3, 0.5, 0.2});
        Tensor a = pointer_distribution(attn, align, 7);
        CHECK(a(0, 2) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(a(0, 5) == doctest::Approx(0.5).epsilon(1e-12));
    }

    SUBCASE("head average of stochastic rows sums to one") {
        Tensor attn = Tensor::from_data({2, 3}, {0.3, 0.5, 0.2, 0.1, 0.1, 0.8});
        Tensor a = pointer_distribution(attn, align, 7);
        double total = 0.0;
        for (std::size_t j = 0; j < 7; ++j) total += a(0, j);
        CHECK(std::fabs(total - 1.0) < 1e-9);
        CHECK(a(0, 2) == doctest::Approx((0.3 + 0.2 + 0.1 + 0.8) / 2.0).epsilon(1e-12));
    }

    SUBCASE("attention width must match the alignment") {
        Tensor attn = Tensor::from_data({1, 2}, {0.5, 0.5});
        CHECK_THROWS_AS(pointer_distribution(attn, align, 7), ShapeError);
    }
}

TEST_CASE("mixture degenerates correctly at the gate extremes") {
    Tensor pv = Tensor::from_data({1, 3}, {0.5, 0.3, 0.2});
    Tensor ptr = Tensor::from_data({1, 5}, {0.2, 0.0, 0.3, 0.1, 0.4});

    Tensor pure_gen = mixture(pv, ptr, Tensor::scalar(1.0), 5);
    CHECK(pure_gen(0, 0) == 0.5);
    CHECK(pure_gen(0, 1) == 0.3);
    CHECK(pure_gen(0, 2) == 0.2);
    CHECK(pure_gen(0, 3) == 0.0);  // OOV slots exactly zero
    CHECK(pure_gen(0, 4) == 0.0);

    Tensor pure_copy = mixture(pv, ptr, Tensor::scalar(0.0), 5);
    for (std::size_t j = 0; j < 5; ++j) CHECK(pure_copy(0, j) == ptr(0, j));
}

TEST_CASE("mixture hand oracle: 0.6 * 0.5 + 0.4 * 0.2 = 0.38") {
    Tensor pv = Tensor::from_data({1, 2}, {0.5, 0.5});
    Tensor ptr = Tensor::from_data({1, 2}, {0.2, 0.8});
    Tensor p = mixture(pv, ptr, Tensor::scalar(0.6), 2);
    CHECK(p(0, 0) == doctest::Approx(0.38).epsilon(1e-12));
    CHECK(p(0, 1) == doctest::Approx(0.6 * 0.5 + 0.4 * 0.8).epsilon(1e-12));
}

TEST_CASE("mixture stays a distribution for random gates and inputs") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t v = 4, l = 3, ext = 6;
        Tensor pv = softmax(Tensor::uniform({1, v}, -2.0, 2.0, rng), 1);
        Tensor attn = softmax(Tensor::uniform({2, l}, -2.0, 2.0, rng), 1);
        std::vector<AlignmentEntry> align = {{0, 'A', 0, 1}, {0, 'A', 1, 4}, {0, 'B', 0, 5}};
        Tensor ptr = pointer_distribution(attn, align, ext);
        Tensor gate = Tensor::from_data({1}, {rng.uniform(0.0, 1.0)});
        Tensor mixed = mixture(pv, ptr, gate, ext);

        ExtendedDistribution dist;
        dist.extended_size = ext;
        dist.probs.assign(mixed.data().begin(), mixed.data().end());
        dist.check();
    }

    ExtendedDistribution bad;
    bad.extended_size = 2;
    bad.probs = {0.9, 0.2};
    CHECK_THROWS_AS(bad.check(), NumericError);
    bad.probs = {1.2, -0.2};
    CHECK_THROWS_AS(bad.check(), NumericError);
}

TEST_CASE("step and sequence losses follow the negative log likelihood oracles") {
    Tensor certain = Tensor::from_data({1, 4}, {0.0, 1.0, 0.0, 0.0});
    CHECK(step_loss(certain, 1).value() == doctest::Approx(0.0).epsilon(1e-12));

    Tensor uniform = Tensor::full({1, 5}, 0.2);
    CHECK(step_loss(uniform, 3).value() == doctest::Approx(std::log(5.0)).epsilon(1e-12));

    // Floor keeps an exact zero finite: -log(1e-12).
    CHECK(step_loss(certain, 0).value() ==
          doctest::Approx(-std::log(1e-12)).epsilon(1e-12));

    CHECK_THROWS_AS(step_loss(uniform, 5), DataError);
    CHECK_THROWS_AS(step_loss(uniform, -1), DataError);

    Tensor half = Tensor::from_data({1, 2}, {0.5, 0.5});
    Tensor quarter = Tensor::from_data({1, 4}, {0.25, 0.25, 0.25, 0.25});
    Tensor seq = sequence_loss({step_loss(half, 0), step_loss(quarter, 0)});
    CHECK(seq.value() == doctest::Approx(1.5 * std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(sequence_loss({}), ShapeError);
}

TEST_CASE("source-only OOV target keeps a finite loss through the copy path") {
    Fixture f;
    const int oov = static_cast<int>(f.vocab);
    auto steps = decoder_forward({kBosId, 4}, f.memory, f.embed, f.params, f.cfg);
    // Softmax attention gives every memory slot positive weight, so the OOV
    // slot carries copy mass whenever p_gen < 1.
    CHECK(steps[1].distribution.probs[oov] > 0.0);
    double loss = step_loss(steps[1].mixture, oov).value();
    CHECK(std::isfinite(loss));
    CHECK(loss < -std::log(1e-12));
}

TEST_CASE("teacher-forced decoder matches finite differences end to end") {
    Fixture f;
    std::vector<int> prefix = {kBosId, 4, 5};
    std::vector<int> targets = {4, 5, static_cast<int>(f.vocab)};

    auto loss_fn = [&]() {
        auto steps = decoder_forward(prefix, f.memory, f.embed, f.params, f.cfg);
        std::vector<Tensor> losses;
        for (std::size_t t = 0; t < steps.size(); ++t) {
            losses.push_back(step_loss(steps[t].mixture, targets[t]));
        }
        return sequence_loss(losses);
    };

    std::vector<std::pair<std::string, Tensor>> checked = {
        {"embed", f.embed},
        {"memory", f.memory.memory},
        {"dec.l0.self.h0.wq", f.params.layers[0].self_attn.wq[0]},
        {"dec.l0.ctx.h1.wk", f.params.layers[0].context_attn->wk[1]},
        {"dec.l0.ctx.wo", f.params.layers[0].context_attn->wo},
        {"dec.l0.ffn1.w", f.params.layers[0].ffn_inner.weight},
        {"dec.l1.self.wo", f.params.layers[1].self_attn.wo},
        {"dec.l1.ln_ctx.gain", f.params.layers[1].context_norm->gain},
        {"dec.out.w", f.params.out_proj.weight},
        {"dec.out.b", f.params.out_proj.bias},
        {"dec.ptr.w", f.params.ptr_w},
        {"dec.ptr.b", f.params.ptr_b},
    };
    auto report = testutil::finite_difference_check(loss_fn, checked);
    INFO(report.first_failure);
    CHECK(report.ok());
    CHECK(report.checked >= 12);
}

TEST_CASE("decoder parameter registry names every tensor once") {
    Fixture f;
    std::set<std::string> names;
    std::size_t count = 0;
    f.params.visit("dec", [&](const std::string& name, Tensor&) {
        names.insert(name);
        ++count;
    });
    CHECK(count == names.size());
    CHECK(count == 2 * 24 + 2 + 2);
    CHECK(names.count("dec.l0.self.h0.wq") == 1);
    CHECK(names.count("dec.l1.ctx.h1.wv") == 1);
    CHECK(names.count("dec.l1.ln_ffn.bias") == 1);
    CHECK(names.count("dec.out.w") == 1);
    CHECK(names.count("dec.ptr.w") == 1);
    CHECK(names.count("dec.ptr.b") == 1);
}

TEST_CASE("decoder config rejects inconsistent settings") {
    DecoderConfig bad;
    bad.layer_count = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = DecoderConfig{};
    bad.d_model = 10;
    bad.head_count = 4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = DecoderConfig{};
    bad.min_target_len = 20;
    bad.max_target_len = 15;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_NOTHROW(DecoderConfig{}.validate());
}
