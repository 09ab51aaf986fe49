#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drugrec/distill.hpp"
#include "json.hpp"

namespace drugrec {

struct F1Report {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;
    std::string positive_class_definition;
};

/// Binary F1 with `positive` (1 or 2) as the positive class. Throws
/// LengthMismatch, EmptyInput, or Error for labels outside {1, 2}.
F1Report f1_selection(std::span<const int> predictions, std::span<const int> references, int positive);

/// Mean of the per-class F1 for classes 1 and 2.
double macro_f1(std::span<const int> predictions, std::span<const int> references);

struct PRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Clipped n-gram overlap. Zero when either side has no n-grams.
PRF rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n);
/// Longest common subsequence based.
PRF rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

struct RougeReport {
    PRF rouge_1;
    PRF rouge_2;
    PRF rouge_l;
};

/// Tokenizes both texts with the index tokenizer first.
RougeReport rouge_text(std::string_view candidate, std::string_view reference);

struct SelectionEval {
    F1Report slot1;   // positive class = candidate slot 1
    F1Report slot2;
    double macro_f1 = 0.0;
    double agreement = 0.0; // 1 - mean indicator loss
};

struct EvalReport {
    std::size_t records = 0;
    SelectionEval vs_teacher;
    SelectionEval vs_sampler;
    RougeReport rouge; // mean of per-record scores, student vs teacher rationale
};

SelectionEval evaluate_selection(std::span<const int> predictions, std::span<const int> references);

/// Records and outputs are matched by id; both must cover the same ids
/// exactly once. Throws IdMismatch.
EvalReport evaluate_run(std::span<const LabeledRecord> labeled, std::span<const StudentPrediction> outputs);

/// Report JSON with a "conventions" block describing the metric choices.
nlohmann::json report_to_json(const EvalReport& report);

} // namespace drugrec
