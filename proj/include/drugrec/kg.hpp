#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace drugrec {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

enum class EntityKind : std::uint8_t { compound, disease, other };

/// Kind from the namespace prefix before "::" ("Compound::DB00945").
EntityKind kind_from_name(std::string_view entity);
std::string_view to_string(EntityKind kind);

/// Human-readable name for an entity id: the part after the last "::" with
/// underscores turned into spaces.
std::string display_name(std::string_view entity);

struct Triple {
    std::string head;
    std::string relation;
    std::string tail;

    friend bool operator==(const Triple&, const Triple&) = default;
};

struct Edge {
    EntityId head;
    RelationId relation;
    EntityId tail;

    friend bool operator==(const Edge&, const Edge&) = default;
    friend auto operator<=>(const Edge&, const Edge&) = default;
};

struct Neighbor {
    RelationId relation;
    EntityId entity;

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Sorted, deduplicated set of relation ids. An absent filter means "any".
class RelationFilter {
public:
    RelationFilter() = default;
    explicit RelationFilter(std::vector<RelationId> ids);

    bool contains(RelationId id) const;
    std::span<const RelationId> ids() const { return ids_; }

private:
    std::vector<RelationId> ids_;
};

struct LoadOptions {
    bool dedupe = true;
    bool strict = false;
};

struct LoadReport {
    std::size_t lines = 0;
    std::size_t comments = 0;
    std::size_t malformed = 0;
    std::size_t duplicates = 0;
};

/// Immutable typed multigraph. Entity and relation ids are dense and assigned
/// in order of first appearance in the input.
class KnowledgeGraph {
public:
    KnowledgeGraph() = default;

    static KnowledgeGraph from_triples(std::span<const Triple> triples, bool dedupe = true,
                                       LoadReport* report = nullptr);

    std::size_t entity_count() const { return entities_.size(); }
    std::size_t relation_count() const { return relations_.size(); }
    std::size_t edge_count() const { return edges_.size(); }

    const std::string& entity_name(EntityId id) const;
    const std::string& relation_name(RelationId id) const;
    EntityKind kind(EntityId id) const;

    std::optional<EntityId> find_entity(std::string_view name) const;
    std::optional<RelationId> find_relation(std::string_view name) const;
    /// Throws UnknownEntity.
    EntityId entity(std::string_view name) const;

    /// Maps relation names to a filter; names absent from the graph are dropped.
    RelationFilter relation_filter(std::span<const std::string> names) const;

    std::span<const Edge> edges() const { return edges_; }
    std::vector<EntityId> entities_of_kind(EntityKind kind) const;

    /// All edges incident to `e` in either direction, ordered by neighbor id
    /// then relation id. A self-loop shows up twice. Throws UnknownEntity.
    std::vector<Neighbor> neighbors(EntityId e, const RelationFilter* filter = nullptr) const;

    /// Edges between a and b in either direction passing the filter.
    std::size_t edge_count(EntityId a, EntityId b, const RelationFilter* filter = nullptr) const;

    /// Line-oriented snapshot; see docs/formats.md.
    void save(const std::filesystem::path& path) const;
    static KnowledgeGraph load(const std::filesystem::path& path);

    friend bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b) {
        return a.entities_ == b.entities_ && a.relations_ == b.relations_ && a.edges_ == b.edges_;
    }

private:
    EntityId intern_entity(const std::string& name);
    RelationId intern_relation(const std::string& name);
    void add_edge(const Edge& e);
    void sort_adjacency();
    void check(EntityId e) const;

    std::vector<std::string> entities_;
    std::vector<EntityKind> kinds_;
    std::vector<std::string> relations_;
    std::unordered_map<std::string, EntityId> entity_index_;
    std::unordered_map<std::string, RelationId> relation_index_;
    std::vector<Edge> edges_;
    // Per entity, (neighbor, relation) for outgoing and incoming edges.
    std::vector<std::vector<Neighbor>> out_;
    std::vector<std::vector<Neighbor>> in_;
};

/// Parses a 3-column TSV triple file ('#' comments, blank lines ignored).
/// Throws MissingFile, and MalformedLine in strict mode.
KnowledgeGraph load_triples(const std::filesystem::path& path, const LoadOptions& options = {},
                            LoadReport* report = nullptr);

std::vector<Triple> parse_triples(std::string_view text, bool strict, LoadReport* report = nullptr);

} // namespace drugrec
