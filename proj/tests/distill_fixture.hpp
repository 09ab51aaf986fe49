#pragma once

#include <string>
#include <vector>

#include "drugrec/dataset.hpp"
#include "drugrec/rng.hpp"

namespace drugrec::oracle {

// Relevant candidates get "good" vocabulary, the others "bad" vocabulary.
inline std::vector<TrainingRecord> separable_records(std::size_t n, std::uint64_t seed) {
    const std::vector<std::string> good{"reduced mortality in a randomized trial.", "improved remission rates.",
                                        "lowered symptom scores significantly."};
    const std::vector<std::string> bad{"showed no benefit over placebo.", "was discontinued for toxicity.",
                                       "had no measurable effect."};
    Rng rng(seed);
    std::vector<TrainingRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        TrainingRecord r;
        r.id = "rec-" + std::to_string(i);
        r.disease = "disease" + std::to_string(i % 7);
        const auto rel = "drug" + std::to_string(i) + "r";
        const auto irr = "drug" + std::to_string(i) + "x";
        r.label = rng.below(2) == 0 ? 1 : 2;
        std::vector<BackgroundChunk> gb{{"PMC" + std::to_string(i) + "#0", rel + " " + good[rng.below(3)]}};
        std::vector<BackgroundChunk> bb{{"NCT" + std::to_string(i) + "#0", irr + " " + bad[rng.below(3)]}};
        r.candidate_1 = r.label == 1 ? rel : irr;
        r.candidate_2 = r.label == 1 ? irr : rel;
        r.background_1 = r.label == 1 ? gb : bb;
        r.background_2 = r.label == 1 ? bb : gb;
        r.prompt = render_prompt(PromptTemplate::default_template(),
                                 {r.disease, r.candidate_1, r.candidate_2, r.background_1, r.background_2});
        r.template_version = "default-v1";
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace drugrec::oracle
