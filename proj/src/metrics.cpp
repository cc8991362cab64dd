#include "dialdesc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dialdesc/common.hpp"
#include <json.hpp>

namespace dialdesc {

namespace {

constexpr std::size_t kCiderOrders = 4;
constexpr double kRougeBeta = 1.2;
constexpr double kSentenceEps = 1e-9;

using Tokens = std::vector<std::string>;
using Counts = std::unordered_map<std::string, double>;

struct Corpus {
    std::vector<Tokens> hyps;
    std::vector<std::vector<Tokens>> refs;
};

Corpus tokenize_corpus(const std::vector<std::string>& hypotheses,
                       const std::vector<std::vector<std::string>>& reference_sets,
                       bool require_references) {
    if (hypotheses.empty()) throw DataError("evaluation corpus is empty");
    if (hypotheses.size() != reference_sets.size()) {
        throw DataError("got " + std::to_string(hypotheses.size()) + " hypotheses for " +
                        std::to_string(reference_sets.size()) + " reference sets");
    }
    Corpus corpus;
    corpus.hyps.reserve(hypotheses.size());
    corpus.refs.reserve(reference_sets.size());
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        if (require_references && reference_sets[i].empty()) {
            throw DataError("example " + std::to_string(i) + " has no references");
        }
        corpus.hyps.push_back(tokenize(hypotheses[i]));
        std::vector<Tokens> refs;
        refs.reserve(reference_sets[i].size());
        for (const std::string& r : reference_sets[i]) refs.push_back(tokenize(r));
        corpus.refs.push_back(std::move(refs));
    }
    return corpus;
}

Counts ngram_counts(const Tokens& toks, std::size_t k) {
    Counts counts;
    if (toks.size() < k) return counts;
    for (std::size_t i = 0; i + k <= toks.size(); ++i) {
        std::string key = toks[i];
        for (std::size_t j = 1; j < k; ++j) {
            key.push_back('\x1f');
            key += toks[i + j];
        }
        counts[key] += 1.0;
    }
    return counts;
}

// Modified precision numerator/denominator for one example at one order.
std::pair<double, double> clipped_counts(const Tokens& hyp, const std::vector<Tokens>& refs,
                                         std::size_t k) {
    const Counts hyp_counts = ngram_counts(hyp, k);
    Counts best;
    for (const Tokens& ref : refs) {
        for (const auto& [gram, count] : ngram_counts(ref, k)) {
            best[gram] = std::max(best[gram], count);
        }
    }
    double num = 0.0, den = 0.0;
    for (const auto& [gram, count] : hyp_counts) {
        const auto it = best.find(gram);
        num += std::min(count, it == best.end() ? 0.0 : it->second);
        den += count;
    }
    return {num, den};
}

std::size_t closest_reference_length(std::size_t hyp_len, const std::vector<Tokens>& refs) {
    std::size_t best = refs.front().size();
    for (const Tokens& ref : refs) {
        const std::size_t len = ref.size();
        const auto dist = [&](std::size_t l) {
            return l > hyp_len ? l - hyp_len : hyp_len - l;
        };
        if (dist(len) < dist(best) || (dist(len) == dist(best) && len < best)) best = len;
    }
    return best;
}

double corpus_bleu(const Corpus& corpus, std::size_t max_order, bool smooth) {
    double hyp_total = 0.0, ref_total = 0.0;
    std::vector<double> num(max_order, 0.0), den(max_order, 0.0);
    for (std::size_t i = 0; i < corpus.hyps.size(); ++i) {
        hyp_total += static_cast<double>(corpus.hyps[i].size());
        ref_total += static_cast<double>(
            closest_reference_length(corpus.hyps[i].size(), corpus.refs[i]));
        for (std::size_t k = 1; k <= max_order; ++k) {
            const auto [n, d] = clipped_counts(corpus.hyps[i], corpus.refs[i], k);
            num[k - 1] += n;
            den[k - 1] += d;
        }
    }
    double log_sum = 0.0;
    for (std::size_t k = 0; k < max_order; ++k) {
        if (den[k] <= 0.0) return 0.0;
        const double p = smooth ? std::max(num[k], kSentenceEps) / den[k] : num[k] / den[k];
        if (p <= 0.0) return 0.0;
        log_sum += std::log(p) / static_cast<double>(max_order);
    }
    const double bp =
        hyp_total < ref_total ? std::exp(1.0 - ref_total / hyp_total) : 1.0;
    return bp * std::exp(log_sum);
}

double lcs_length(const Tokens& a, const Tokens& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[b.size()]);
}

double rouge_example(const Tokens& hyp, const std::vector<Tokens>& refs) {
    double best = 0.0;
    for (const Tokens& ref : refs) {
        if (hyp.empty() || ref.empty()) continue;
        const double lcs = lcs_length(hyp, ref);
        const double recall = lcs / static_cast<double>(ref.size());
        const double precision = lcs / static_cast<double>(hyp.size());
        const double denom = recall + kRougeBeta * kRougeBeta * precision;
        if (denom <= 0.0) continue;
        const double f =
            (1.0 + kRougeBeta * kRougeBeta) * recall * precision / denom;
        best = std::max(best, f);
    }
    return best;
}

// tf-idf vectors per order with document frequencies over reference sets;
// absent grams fall back to df = 1.
std::vector<double> cider_scores(const Corpus& corpus) {
    const double n_docs = static_cast<double>(corpus.refs.size());
    std::vector<Counts> df(kCiderOrders);
    for (const std::vector<Tokens>& refs : corpus.refs) {
        for (std::size_t k = 0; k < kCiderOrders; ++k) {
            std::unordered_set<std::string> seen;
            for (const Tokens& ref : refs) {
                for (const auto& [gram, count] : ngram_counts(ref, k + 1)) seen.insert(gram);
            }
            for (const std::string& gram : seen) df[k][gram] += 1.0;
        }
    }
    const auto idf = [&](std::size_t k, const std::string& gram) {
        const auto it = df[k].find(gram);
        const double d = it == df[k].end() ? 0.0 : it->second;
        return std::log(n_docs / std::max(1.0, d));
    };
    const auto weigh = [&](const Counts& counts, std::size_t k) {
        Counts vec;
        for (const auto& [gram, count] : counts) vec[gram] = count * idf(k, gram);
        return vec;
    };
    const auto norm = [](const Counts& vec) {
        double sq = 0.0;
        for (const auto& [gram, w] : vec) sq += w * w;
        return std::sqrt(sq);
    };

    std::vector<double> scores;
    scores.reserve(corpus.hyps.size());
    for (std::size_t i = 0; i < corpus.hyps.size(); ++i) {
        double order_sum = 0.0;
        for (std::size_t k = 0; k < kCiderOrders; ++k) {
            const Counts hyp_vec = weigh(ngram_counts(corpus.hyps[i], k + 1), k);
            const double hyp_norm = norm(hyp_vec);
            double ref_sum = 0.0;
            for (const Tokens& ref : corpus.refs[i]) {
                const Counts ref_vec = weigh(ngram_counts(ref, k + 1), k);
                const double ref_norm = norm(ref_vec);
                if (hyp_norm <= 0.0 || ref_norm <= 0.0) continue;
                double dot = 0.0;
                for (const auto& [gram, w] : hyp_vec) {
                    const auto it = ref_vec.find(gram);
                    if (it != ref_vec.end()) dot += w * it->second;
                }
                ref_sum += dot / (hyp_norm * ref_norm);
            }
            order_sum += ref_sum / static_cast<double>(corpus.refs[i].size());
        }
        scores.push_back(10.0 * order_sum / static_cast<double>(kCiderOrders));
    }
    return scores;
}

}  // namespace

double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::vector<std::string>>& reference_sets,
            std::size_t max_order) {
    if (max_order < 1) throw ConfigError("BLEU order must be at least 1");
    const Corpus corpus = tokenize_corpus(hypotheses, reference_sets, true);
    return corpus_bleu(corpus, max_order, false);
}

double rouge_l(const std::vector<std::string>& hypotheses,
               const std::vector<std::vector<std::string>>& reference_sets) {
    const Corpus corpus = tokenize_corpus(hypotheses, reference_sets, true);
    double sum = 0.0;
    for (std::size_t i = 0; i < corpus.hyps.size(); ++i) {
        sum += rouge_example(corpus.hyps[i], corpus.refs[i]);
    }
    return sum / static_cast<double>(corpus.hyps.size());
}

double cider(const std::vector<std::string>& hypotheses,
             const std::vector<std::vector<std::string>>& reference_sets) {
    const Corpus corpus = tokenize_corpus(hypotheses, reference_sets, true);
    const std::vector<double> scores = cider_scores(corpus);
    double sum = 0.0;
    for (double s : scores) sum += s;
    return sum / static_cast<double>(scores.size());
}

EvalReport evaluate(const std::vector<std::string>& hypotheses,
                    const std::vector<std::vector<std::string>>& reference_sets) {
    const Corpus corpus = tokenize_corpus(hypotheses, reference_sets, true);

    EvalReport report;
    report.bleu_1 = corpus_bleu(corpus, 1, false);
    report.bleu_2 = corpus_bleu(corpus, 2, false);
    report.bleu_3 = corpus_bleu(corpus, 3, false);
    report.bleu_4 = corpus_bleu(corpus, 4, false);

    const std::vector<double> cider_per_example = cider_scores(corpus);
    report.examples.resize(corpus.hyps.size());
    double rouge_sum = 0.0, cider_sum = 0.0;
    for (std::size_t i = 0; i < corpus.hyps.size(); ++i) {
        Corpus one;
        one.hyps = {corpus.hyps[i]};
        one.refs = {corpus.refs[i]};
        report.examples[i].bleu_4_smoothed = corpus_bleu(one, 4, true);
        report.examples[i].rouge_l = rouge_example(corpus.hyps[i], corpus.refs[i]);
        report.examples[i].cider = cider_per_example[i];
        rouge_sum += report.examples[i].rouge_l;
        cider_sum += report.examples[i].cider;
    }
    report.rouge_l = rouge_sum / static_cast<double>(corpus.hyps.size());
    report.cider = cider_sum / static_cast<double>(corpus.hyps.size());
    return report;
}

std::string format_report(const EvalReport& report) {
    std::ostringstream out;
    out << "BLEU-1\tBLEU-2\tBLEU-3\tBLEU-4\tROUGE-L\tCIDEr\n";
    out.setf(std::ios::fixed);
    out.precision(2);
    out << 100.0 * report.bleu_1 << '\t' << 100.0 * report.bleu_2 << '\t'
        << 100.0 * report.bleu_3 << '\t' << 100.0 * report.bleu_4 << '\t'
        << 100.0 * report.rouge_l << '\t';
    out.precision(4);
    out << report.cider << '\n';
    return out.str();
}

std::string report_json(const EvalReport& report) {
    nlohmann::json examples = nlohmann::json::array();
    for (const ExampleScores& e : report.examples) {
        examples.push_back({{"bleu_4_smoothed", e.bleu_4_smoothed},
                            {"rouge_l", e.rouge_l},
                            {"cider", e.cider}});
    }
    return nlohmann::json{{"bleu_1", report.bleu_1},
                          {"bleu_2", report.bleu_2},
                          {"bleu_3", report.bleu_3},
                          {"bleu_4", report.bleu_4},
                          {"rouge_l", report.rouge_l},
                          {"cider", report.cider},
                          {"examples", std::move(examples)}}
        .dump();
}

}  // namespace dialdesc
