#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "drugrec/kg.hpp"

namespace drugrec {

/// (u . v) / (|u| |v|). Throws ZeroVector and DimensionMismatch.
double cosine(std::span<const double> u, std::span<const double> v);

double dot(std::span<const double> u, std::span<const double> v);
double l2_norm(std::span<const double> v);

/// One dense vector per entity id, with cached norms.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    /// `values` is row-major, `rows * dim` long. Throws on non-finite input.
    EmbeddingTable(std::size_t dim, std::vector<double> values);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return dim_ == 0 ? 0 : values_.size() / dim_; }

    std::span<const double> row(EntityId e) const;
    double norm(EntityId e) const;
    std::span<const double> values() const { return values_; }

    void save(const std::filesystem::path& path) const;
    static EmbeddingTable load(const std::filesystem::path& path);

    friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
        return a.dim_ == b.dim_ && a.values_ == b.values_;
    }

private:
    void check(EntityId e) const;

    std::size_t dim_ = 0;
    std::vector<double> values_;
    std::vector<double> norms_;
};

/// Cosine between two table rows using the cached norms. Throws UnknownEntity
/// and ZeroVector.
double entity_similarity(const EmbeddingTable& table, EntityId a, EntityId b);

struct EmbedTrainConfig {
    std::size_t dim = 64;
    std::size_t epochs = 200;
    double learning_rate = 0.1;
    double margin = 1.0;
    std::size_t negatives_per_positive = 4;
    std::uint64_t seed = 42;

    void validate() const;
};

/// Parameters of the translational scorer score(h, r, t) = -|h + r - t|.
struct TranslationalModel {
    std::size_t dim = 0;
    std::vector<double> entities;  // entity_count * dim
    std::vector<double> relations; // relation_count * dim

    std::span<double> entity(EntityId e) { return {entities.data() + e * dim, dim}; }
    std::span<const double> entity(EntityId e) const { return {entities.data() + e * dim, dim}; }
    std::span<double> relation(RelationId r) { return {relations.data() + r * dim, dim}; }
    std::span<const double> relation(RelationId r) const { return {relations.data() + r * dim, dim}; }
};

/// A positive edge paired with one corrupted-tail negative.
struct RankingSample {
    EntityId head;
    RelationId relation;
    EntityId tail;
    EntityId corrupted_tail;
};

/// |h + r - t|
double translation_distance(const TranslationalModel& m, EntityId h, RelationId r, EntityId t);

/// Sum over samples of max(0, margin - score(pos) + score(neg)). When `grad`
/// is non-null it is resized to match `model` and receives d loss / d params.
double ranking_loss(const TranslationalModel& model, std::span<const RankingSample> samples,
                    double margin, TranslationalModel* grad = nullptr);

/// Uniform init in [-0.5/dim, 0.5/dim] from the seeded generator.
TranslationalModel init_model(std::size_t entities, std::size_t relations, std::size_t dim,
                              std::uint64_t seed);

struct EmbedTrainResult {
    EmbeddingTable table;
    std::vector<double> epoch_losses; // mean ranking loss per epoch
};

/// SGD over shuffled edges with uniform corrupted-tail negatives. Throws
/// EmptyGraph.
EmbedTrainResult train_embeddings(const KnowledgeGraph& g, const EmbedTrainConfig& cfg);

} // namespace drugrec
