#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "dialdesc/metrics.hpp"

using namespace dialdesc;

namespace {

using Refs = std::vector<std::vector<std::string>>;

// Four or more tokens each so every CIDEr order has n-grams; disjoint
// alphabets keep the document frequencies at one.
const std::vector<std::string> kIdentityHyps = {"the cat sat on a mat", "two dogs ran far away"};
const Refs kIdentityRefs = {{"the cat sat on a mat"}, {"two dogs ran far away"}};

}  // namespace

TEST_CASE("identical hypothesis and reference score perfectly") {
    for (std::size_t n = 1; n <= 4; ++n) {
        CHECK(bleu(kIdentityHyps, kIdentityRefs, n) == 1.0);
    }
    CHECK(rouge_l(kIdentityHyps, kIdentityRefs) == 1.0);
    CHECK(std::abs(cider(kIdentityHyps, kIdentityRefs) - 10.0) <= 1e-9);
    // An order with no n-grams contributes zero cosine: a three-token
    // identity covers only orders 1..3.
    CHECK(std::abs(cider({"a b c", "x y z"}, {{"a b c"}, {"x y z"}}) - 7.5) <= 1e-9);
}

TEST_CASE("brevity penalty follows the hand computed oracle") {
    const double score = bleu({"the cat"}, {{"the cat sat"}}, 1);
    CHECK(std::abs(score - std::exp(-0.5)) <= 1e-6);
    CHECK(std::abs(score - 0.6065306597126334) <= 1e-9);
    CHECK(bleu({"the cat"}, {{"the cat sat"}}, 2) == score);
}

TEST_CASE("closest reference length ties break to the shorter reference") {
    // Lengths 2 and 4 are equally close to 3; choosing 2 leaves no penalty.
    CHECK(bleu({"a b c"}, {{"a b", "a b c d"}}, 1) == 1.0);
}

TEST_CASE("zero precision collapses BLEU to zero without smoothing") {
    CHECK(bleu({"x y z"}, {{"a b c"}}, 1) == 0.0);
    CHECK(bleu({"a b"}, {{"a b"}}, 3) == 0.0);  // no trigram in a 2-token pair
}

TEST_CASE("degenerate evaluation inputs are rejected") {
    CHECK_THROWS_AS(bleu({}, {}, 4), DataError);
    CHECK_THROWS_AS(bleu({"a"}, {}, 4), DataError);
    CHECK_THROWS_AS(bleu({"a"}, {{}}, 4), DataError);
    CHECK_THROWS_AS(bleu({"a"}, {{"a"}}, 0), ConfigError);
    CHECK_THROWS_AS(rouge_l({}, {}), DataError);
    CHECK_THROWS_AS(cider({"a"}, {{"a"}, {"b"}}), DataError);
    CHECK_THROWS_AS(cider({"a", "b"}, {{"a"}, {}}), DataError);
}

TEST_CASE("lcs f-measure follows the hand oracle") {
    CHECK(std::abs(rouge_l({"a b c"}, {{"a x c"}}) - 2.0 / 3.0) <= 1e-6);
    CHECK(rouge_l({"x y"}, {{"a b"}}) == 0.0);
    CHECK(rouge_l({"a b c"}, {{"x y z", "a b c"}}) == 1.0);
    const double mean = rouge_l({"a b c", "a b c"}, {{"a b c"}, {"a x c"}});
    CHECK(std::abs(mean - (1.0 + 2.0 / 3.0) / 2.0) <= 1e-12);
}

TEST_CASE("cider vanishes when no n-gram is shared") {
    const double score =
        cider({"x y z w", "a dog ran far"}, {{"p q r s"}, {"a dog ran far"}});
    const double only_second = 10.0;
    CHECK(std::abs(score - only_second / 2.0) <= 1e-9);
}

TEST_CASE("metrics ignore reference order within an example") {
    const std::vector<std::string> hyps = {"a cat on the mat", "two people outside"};
    const Refs fwd = {{"a cat sat on the mat", "the cat is here", "a cat on a mat"},
                      {"two people walk outside", "people outside"}};
    Refs rev = fwd;
    for (auto& refs : rev) std::reverse(refs.begin(), refs.end());

    for (std::size_t n = 1; n <= 4; ++n) CHECK(bleu(hyps, fwd, n) == bleu(hyps, rev, n));
    CHECK(rouge_l(hyps, fwd) == rouge_l(hyps, rev));
    CHECK(std::abs(cider(hyps, fwd) - cider(hyps, rev)) <= 1e-12);

    const Refs two_fwd = {{"a cat sat", "a cat here"}, {"people walk", "two people"}};
    const Refs two_rev = {{"a cat here", "a cat sat"}, {"two people", "people walk"}};
    CHECK(cider(hyps, two_fwd) == cider(hyps, two_rev));
}

TEST_CASE("adding the hypothesis as an extra reference never hurts") {
    // Disjoint alphabets keep document frequencies decoupled across examples.
    const std::vector<std::string> hyps = {"a b c d e", "v w x y z"};
    const Refs before = {{"a b c f g"}, {"v w q r s"}};
    Refs after = before;
    after[0].push_back(hyps[0]);
    after[1].push_back(hyps[1]);

    for (std::size_t n = 1; n <= 4; ++n) {
        CHECK(bleu(hyps, after, n) >= bleu(hyps, before, n));
    }
    CHECK(rouge_l(hyps, after) >= rouge_l(hyps, before));
    CHECK(cider(hyps, after) >= cider(hyps, before));
}

TEST_CASE("metrics stay within their documented bounds") {
    const std::vector<std::string> hyps = {"a b a c", "the cat sat on the mat", "q"};
    const Refs refs = {{"a c a b", "b a"}, {"the cat sat", "a cat on a mat"}, {"q q q"}};
    for (std::size_t n = 1; n <= 4; ++n) {
        const double b = bleu(hyps, refs, n);
        CHECK(b >= 0.0);
        CHECK(b <= 1.0);
        CHECK(b == bleu(hyps, refs, n));
    }
    const double r = rouge_l(hyps, refs);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
    const double c = cider(hyps, refs);
    CHECK(c >= 0.0);
    CHECK(r == rouge_l(hyps, refs));
    CHECK(c == cider(hyps, refs));
}

TEST_CASE("evaluate mirrors the standalone metrics with a breakdown") {
    const std::vector<std::string> hyps = {"the cat sat", "two people outside"};
    const Refs refs = {{"the cat sat on a mat"}, {"two people walking outside"}};
    const EvalReport report = evaluate(hyps, refs);

    CHECK(report.bleu_1 == bleu(hyps, refs, 1));
    CHECK(report.bleu_2 == bleu(hyps, refs, 2));
    CHECK(report.bleu_3 == bleu(hyps, refs, 3));
    CHECK(report.bleu_4 == bleu(hyps, refs, 4));
    CHECK(report.rouge_l == rouge_l(hyps, refs));
    CHECK(report.cider == cider(hyps, refs));
    REQUIRE(report.examples.size() == 2);
    for (const ExampleScores& e : report.examples) {
        CHECK(e.bleu_4_smoothed >= 0.0);
        CHECK(e.bleu_4_smoothed <= 1.0);
        CHECK(e.rouge_l > 0.0);
        CHECK(e.cider > 0.0);
    }
}

TEST_CASE("report table keeps the expected column order and scaling") {
    const EvalReport report = evaluate(kIdentityHyps, kIdentityRefs);
    const std::string table = format_report(report);
    const std::vector<std::string> cols = {"BLEU-1", "BLEU-2", "BLEU-3",
                                           "BLEU-4", "ROUGE-L", "CIDEr"};
    std::size_t pos = 0;
    for (const std::string& col : cols) {
        const std::size_t at = table.find(col);
        REQUIRE(at != std::string::npos);
        CHECK(at >= pos);
        pos = at;
    }
    CHECK(table.find("100.00") != std::string::npos);

    const nlohmann::json parsed = nlohmann::json::parse(report_json(report));
    CHECK(parsed.at("bleu_1").get<double>() == 1.0);
    CHECK(parsed.at("rouge_l").get<double>() == 1.0);
    CHECK(std::abs(parsed.at("cider").get<double>() - 10.0) <= 1e-9);
    CHECK(parsed.at("examples").size() == 2);
}
