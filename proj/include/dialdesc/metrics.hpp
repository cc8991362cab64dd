#pragma once

#include <string>
#include <vector>

#include "dialdesc/data.hpp"

namespace dialdesc {

// Corpus-level BLEU with modified n-gram precision, geometric mean over
// orders 1..max_order, and brevity penalty from the closest reference
// length (ties to the shorter). No smoothing; any zero precision gives 0.
double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::vector<std::string>>& reference_sets,
            std::size_t max_order);

// Mean over examples of the LCS F-measure, taking the best reference per
// example. Recall-weighted with beta = 1.2.
double rouge_l(const std::vector<std::string>& hypotheses,
               const std::vector<std::vector<std::string>>& reference_sets);

// Plain CIDEr: tf-idf n-gram cosine averaged over references and orders
// 1..4, scaled by 10. Document frequencies come from the evaluation
// reference sets themselves; no length penalty.
double cider(const std::vector<std::string>& hypotheses,
             const std::vector<std::vector<std::string>>& reference_sets);

struct ExampleScores {
    double bleu_4_smoothed = 0.0;  // informational sentence score, add-epsilon
    double rouge_l = 0.0;
    double cider = 0.0;
};

struct EvalReport {
    double bleu_1 = 0.0, bleu_2 = 0.0, bleu_3 = 0.0, bleu_4 = 0.0;
    double rouge_l = 0.0;
    double cider = 0.0;
    std::vector<ExampleScores> examples;
};

EvalReport evaluate(const std::vector<std::string>& hypotheses,
                    const std::vector<std::vector<std::string>>& reference_sets);

// Plain-text table, one header and one value row: BLEU-1..4 and ROUGE-L
// scaled by 100, CIDEr as is.
std::string format_report(const EvalReport& report);

// Machine-readable report with unscaled corpus scores and the breakdown.
std::string report_json(const EvalReport& report);

}  // namespace dialdesc
