#include "drugrec/eval.hpp"

#include <algorithm>
#include <map>

#include "drugrec/error.hpp"
#include "drugrec/search.hpp"

namespace drugrec {

using nlohmann::json;

namespace {

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

double ratio(std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }

void check_label(int v, const char* what) {
    if (v != 1 && v != 2) {
        throw Error(std::string(what) + " must be 1 or 2, got " + std::to_string(v));
    }
}

} // namespace

F1Report f1_selection(std::span<const int> predictions, std::span<const int> references, int positive) {
    if (predictions.size() != references.size()) {
        throw LengthMismatch("predictions (" + std::to_string(predictions.size()) + ") and references (" +
                             std::to_string(references.size()) + ") differ in length");
    }
    if (predictions.empty()) {
        throw EmptyInput("no predictions to score");
    }
    check_label(positive, "positive class");
    F1Report r;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        check_label(predictions[i], "prediction");
        check_label(references[i], "reference");
        const bool p = predictions[i] == positive;
        const bool t = references[i] == positive;
        r.tp += p && t;
        r.fp += p && !t;
        r.fn += !p && t;
        r.tn += !p && !t;
    }
    r.precision = ratio(r.tp, r.tp + r.fp);
    r.recall = ratio(r.tp, r.tp + r.fn);
    r.f1 = harmonic(r.precision, r.recall);
    r.positive_class_definition = "candidate slot " + std::to_string(positive);
    return r;
}

double macro_f1(std::span<const int> predictions, std::span<const int> references) {
    return (f1_selection(predictions, references, 1).f1 + f1_selection(predictions, references, 2).f1) / 2.0;
}

PRF rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n) {
    if (n == 0) {
        throw Error("rouge n must be at least 1");
    }
    if (candidate.size() < n || reference.size() < n) {
        return {};
    }
    auto grams = [n](std::span<const std::string> toks) {
        std::map<std::vector<std::string>, std::size_t> out;
        for (std::size_t i = 0; i + n <= toks.size(); ++i) {
            ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                           toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
        }
        return out;
    };
    const auto c = grams(candidate);
    const auto r = grams(reference);
    std::size_t overlap = 0;
    for (const auto& [g, count] : c) {
        const auto it = r.find(g);
        if (it != r.end()) {
            overlap += std::min(count, it->second);
        }
    }
    PRF out;
    out.precision = ratio(overlap, candidate.size() - n + 1);
    out.recall = ratio(overlap, reference.size() - n + 1);
    out.f1 = harmonic(out.precision, out.recall);
    return out;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

PRF rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
    const auto lcs = lcs_length(candidate, reference);
    PRF out;
    out.precision = ratio(lcs, candidate.size());
    out.recall = ratio(lcs, reference.size());
    out.f1 = harmonic(out.precision, out.recall);
    return out;
}

RougeReport rouge_text(std::string_view candidate, std::string_view reference) {
    const auto c = tokenize(candidate);
    const auto r = tokenize(reference);
    return {rouge_n(c, r, 1), rouge_n(c, r, 2), rouge_l(c, r)};
}

SelectionEval evaluate_selection(std::span<const int> predictions, std::span<const int> references) {
    SelectionEval e;
    e.slot1 = f1_selection(predictions, references, 1);
    e.slot2 = f1_selection(predictions, references, 2);
    e.macro_f1 = (e.slot1.f1 + e.slot2.f1) / 2.0;
    e.agreement = ratio(e.slot1.tp + e.slot1.tn, predictions.size());
    return e;
}

EvalReport evaluate_run(std::span<const LabeledRecord> labeled, std::span<const StudentPrediction> outputs) {
    std::map<std::string, const StudentPrediction*> by_id;
    for (const auto& o : outputs) {
        if (!by_id.emplace(o.id, &o).second) {
            throw IdMismatch("duplicate student output for record " + o.id);
        }
    }
    if (by_id.size() != labeled.size()) {
        throw IdMismatch(std::to_string(outputs.size()) + " student outputs for " + std::to_string(labeled.size()) +
                         " labeled records");
    }
    std::vector<int> predicted;
    std::vector<int> teacher;
    std::vector<int> sampler;
    RougeReport sum;
    auto add = [](PRF& acc, const PRF& x) {
        acc.precision += x.precision;
        acc.recall += x.recall;
        acc.f1 += x.f1;
    };
    for (const auto& l : labeled) {
        const auto it = by_id.find(l.record.id);
        if (it == by_id.end()) {
            throw IdMismatch("no student output for record " + l.record.id);
        }
        predicted.push_back(it->second->selected);
        teacher.push_back(l.teacher.selected);
        sampler.push_back(l.record.label);
        const auto r = rouge_text(it->second->rationale, l.teacher.rationale);
        add(sum.rouge_1, r.rouge_1);
        add(sum.rouge_2, r.rouge_2);
        add(sum.rouge_l, r.rouge_l);
    }
    if (labeled.empty()) {
        throw EmptyInput("no labeled records to evaluate");
    }
    EvalReport out;
    out.records = labeled.size();
    out.vs_teacher = evaluate_selection(predicted, teacher);
    out.vs_sampler = evaluate_selection(predicted, sampler);
    const double n = static_cast<double>(labeled.size());
    for (auto* p : {&sum.rouge_1, &sum.rouge_2, &sum.rouge_l}) {
        p->precision /= n;
        p->recall /= n;
        p->f1 /= n;
    }
    out.rouge = sum;
    return out;
}

namespace {

json prf_json(const PRF& p) { return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}}; }

json f1_json(const F1Report& r) {
    return {{"positive_class", r.positive_class_definition},
            {"precision", r.precision},
            {"recall", r.recall},
            {"f1", r.f1},
            {"tp", r.tp},
            {"fp", r.fp},
            {"fn", r.fn},
            {"tn", r.tn}};
}

json selection_json(const SelectionEval& e) {
    return {{"f1", e.slot1.f1},
            {"macro_f1", e.macro_f1},
            {"agreement", e.agreement},
            {"positive_slot_1", f1_json(e.slot1)},
            {"positive_slot_2", f1_json(e.slot2)}};
}

} // namespace

json report_to_json(const EvalReport& report) {
    json j;
    j["format"] = "drugrec-eval";
    j["version"] = 1;
    j["conventions"] = {
        {"selection_f1", "binary F1 with candidate slot 1 as the positive class; macro_f1 averages slots 1 and 2"},
        {"selection_references", "vs_teacher uses the teacher's choice, vs_sampler the sampler's relevant drug"},
        {"rouge", "headline value is F1; precision and recall also listed; no stemming or stopword removal"},
        {"rouge_aggregation", "arithmetic mean of per-record scores, student rationale vs teacher rationale"},
        {"tokenizer", "lowercased word runs of two or more bytes, same as the search index"}};
    j["records"] = report.records;
    j["selection"] = {{"vs_teacher", selection_json(report.vs_teacher)},
                      {"vs_sampler", selection_json(report.vs_sampler)}};
    j["rouge"] = {{"rouge_1", report.rouge.rouge_1.f1},
                  {"rouge_2", report.rouge.rouge_2.f1},
                  {"rouge_l", report.rouge.rouge_l.f1},
                  {"detail",
                   {{"rouge_1", prf_json(report.rouge.rouge_1)},
                    {"rouge_2", prf_json(report.rouge.rouge_2)},
                    {"rouge_l", prf_json(report.rouge.rouge_l)}}}};
    return j;
}

} // namespace drugrec
