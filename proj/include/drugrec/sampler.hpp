#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "drugrec/embed.hpp"
#include "drugrec/kg.hpp"

namespace drugrec {

/// How the non-relevant candidate relates to the disease: no treatment edge
/// at all, or a weaker one.
enum class EffectLabel : std::uint8_t { negative, less_positive };

std::string_view to_string(EffectLabel label);
EffectLabel parse_effect_label(std::string_view s);

/// Treatment relation names used by the published DRKG dump plus a plain
/// "treats" for hand-written graphs.
std::vector<std::string> default_treatment_relations();

struct SamplerConfig {
    std::vector<std::string> treatment_relations = default_treatment_relations();
    std::size_t pool_top_m = 50;
    double edge_weight = 1.0;
    double emb_weight = 0.01;
    std::uint64_t seed = 42;

    void validate() const;
};

/// One disease with a relevant drug and an embedding-similar hard negative.
struct DiseaseDrugSet {
    EntityId disease;
    EntityId relevant;
    EntityId irrelevant;
    double rel_score;           // relevance(disease, relevant)
    double sim_score;           // similarity(irrelevant, relevant)
    std::size_t candidate_pool_size;
    EffectLabel effect_label;

    friend bool operator==(const DiseaseDrugSet&, const DiseaseDrugSet&) = default;
};

/// Compounds adjacent to `disease` (by id), then the top `pool_top_m`
/// compounds by similarity to it that are not already present (descending
/// similarity, ascending id on ties). Throws UnknownEntity and NotADisease.
std::vector<EntityId> candidate_pool(const KnowledgeGraph& g, const EmbeddingTable& t, EntityId disease,
                                     const SamplerConfig& cfg);

/// edge_weight * treatment-edge count + emb_weight * similarity.
double relevance(const KnowledgeGraph& g, const EmbeddingTable& t, EntityId disease, EntityId compound,
                 const SamplerConfig& cfg);

/// Relevant candidate is the pool argmax of relevance; the hard negative is
/// the argmax of similarity to it over the rest of the pool. Ties go to the
/// lower entity id. Throws EmptyPool / InsufficientCandidates.
DiseaseDrugSet sample_set(const KnowledgeGraph& g, const EmbeddingTable& t, EntityId disease,
                          const SamplerConfig& cfg);

struct SampleSkip {
    EntityId disease;
    std::string reason;
};

struct SampleBatch {
    std::vector<DiseaseDrugSet> sets;
    std::vector<SampleSkip> skipped;
};

/// Per-disease sample_set; failures are reported in `skipped`, never thrown.
SampleBatch sample_corpus_sets(const KnowledgeGraph& g, const EmbeddingTable& t,
                               const std::vector<EntityId>& diseases, const SamplerConfig& cfg);

} // namespace drugrec
