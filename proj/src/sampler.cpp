#include "drugrec/sampler.hpp"

#include <algorithm>
#include <unordered_set>

#include "drugrec/error.hpp"

namespace drugrec {

std::string_view to_string(EffectLabel label) {
    return label == EffectLabel::negative ? "negative" : "less_positive";
}

EffectLabel parse_effect_label(std::string_view s) {
    if (s == "negative") {
        return EffectLabel::negative;
    }
    if (s == "less_positive") {
        return EffectLabel::less_positive;
    }
    throw Error("unknown effect label " + std::string(s));
}

std::vector<std::string> default_treatment_relations() {
    return {"treats", "DRUGBANK::treats::Compound:Disease", "GNBR::T::Compound:Disease",
            "Hetionet::CtD::Compound:Disease"};
}

void SamplerConfig::validate() const {
    if (pool_top_m < 2) {
        throw Error("sampler.pool_top_m must be at least 2");
    }
    if (edge_weight < 0.0 || emb_weight < 0.0 || (edge_weight == 0.0 && emb_weight == 0.0)) {
        throw Error("sampler weights must be non-negative and not both zero");
    }
}

std::vector<EntityId> candidate_pool(const KnowledgeGraph& g, const EmbeddingTable& t, EntityId disease,
                                     const SamplerConfig& cfg) {
    if (g.kind(disease) != EntityKind::disease) {
        throw NotADisease(g.entity_name(disease) + " is not a disease");
    }
    std::vector<EntityId> pool;
    for (const auto& n : g.neighbors(disease)) {
        if (g.kind(n.entity) == EntityKind::compound && (pool.empty() || pool.back() != n.entity)) {
            pool.push_back(n.entity);
        }
    }
    if (cfg.pool_top_m == 0) {
        return pool;
    }
    const std::unordered_set<EntityId> connected(pool.begin(), pool.end());
    std::vector<std::pair<double, EntityId>> ranked;
    for (const auto c : g.entities_of_kind(EntityKind::compound)) {
        ranked.emplace_back(entity_similarity(t, disease, c), c);
    }
    const auto m = std::min(cfg.pool_top_m, ranked.size());
    const auto by_similarity = [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    };
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(m), ranked.end(),
                      by_similarity);
    for (std::size_t i = 0; i < m; ++i) {
        if (!connected.contains(ranked[i].second)) {
            pool.push_back(ranked[i].second);
        }
    }
    return pool;
}

double relevance(const KnowledgeGraph& g, const EmbeddingTable& t, EntityId disease, EntityId compound,
                 const SamplerConfig& cfg) {
    const auto filter = g.relation_filter(cfg.treatment_relations);
    const auto edges = static_cast<double>(g.edge_count(disease, compound, &filter));
    return cfg.edge_weight * edges + cfg.emb_weight * entity_similarity(t, disease, compound);
}

DiseaseDrugSet sample_set(const KnowledgeGraph& g, const EmbeddingTable& t, EntityId disease,
                          const SamplerConfig& cfg) {
    auto pool = candidate_pool(g, t, disease, cfg);
    if (pool.empty()) {
        throw EmptyPool();
    }
    if (pool.size() < 2) {
        throw InsufficientCandidates(pool.size());
    }
    // Scanning in ascending id order with strict comparisons leaves ties with
    // the lower id.
    std::sort(pool.begin(), pool.end());

    EntityId best = pool.front();
    double best_rel = relevance(g, t, disease, best, cfg);
    for (std::size_t i = 1; i < pool.size(); ++i) {
        const double r = relevance(g, t, disease, pool[i], cfg);
        if (r > best_rel) {
            best_rel = r;
            best = pool[i];
        }
    }

    bool have_negative = false;
    EntityId negative = 0;
    double best_sim = 0.0;
    for (const auto c : pool) {
        if (c == best) {
            continue;
        }
        const double s = entity_similarity(t, c, best);
        if (!have_negative || s > best_sim) {
            have_negative = true;
            best_sim = s;
            negative = c;
        }
    }

    const auto filter = g.relation_filter(cfg.treatment_relations);
    const auto label = g.edge_count(disease, negative, &filter) == 0 ? EffectLabel::negative
                                                                     : EffectLabel::less_positive;
    return {disease, best, negative, best_rel, best_sim, pool.size(), label};
}

SampleBatch sample_corpus_sets(const KnowledgeGraph& g, const EmbeddingTable& t,
                               const std::vector<EntityId>& diseases, const SamplerConfig& cfg) {
    SampleBatch batch;
    for (const auto d : diseases) {
        try {
            batch.sets.push_back(sample_set(g, t, d, cfg));
        } catch (const Error& e) {
            batch.skipped.push_back({d, e.what()});
        }
    }
    return batch;
}

} // namespace drugrec
