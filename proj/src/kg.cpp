#include "drugrec/kg.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "drugrec/error.hpp"
#include "drugrec/util.hpp"

namespace drugrec {

namespace {

constexpr std::string_view kSnapshotMagic = "drugrec-kg";
constexpr int kSnapshotVersion = 1;

} // namespace

EntityKind kind_from_name(std::string_view entity) {
    const auto pos = entity.find("::");
    if (pos == std::string_view::npos) {
        return EntityKind::other;
    }
    const auto prefix = entity.substr(0, pos);
    if (prefix == "Compound") {
        return EntityKind::compound;
    }
    if (prefix == "Disease") {
        return EntityKind::disease;
    }
    return EntityKind::other;
}

std::string_view to_string(EntityKind kind) {
    switch (kind) {
    case EntityKind::compound:
        return "compound";
    case EntityKind::disease:
        return "disease";
    case EntityKind::other:
        break;
    }
    return "other";
}

std::string display_name(std::string_view entity) {
    const auto pos = entity.rfind("::");
    std::string name(pos == std::string_view::npos ? entity : entity.substr(pos + 2));
    std::replace(name.begin(), name.end(), '_', ' ');
    return name;
}

RelationFilter::RelationFilter(std::vector<RelationId> ids) : ids_(std::move(ids)) {
    std::sort(ids_.begin(), ids_.end());
    ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
}

bool RelationFilter::contains(RelationId id) const {
    return std::binary_search(ids_.begin(), ids_.end(), id);
}

KnowledgeGraph KnowledgeGraph::from_triples(std::span<const Triple> triples, bool dedupe,
                                            LoadReport* report) {
    KnowledgeGraph g;
    std::set<Edge> seen;
    for (const auto& t : triples) {
        if (t.head.empty() || t.relation.empty() || t.tail.empty()) {
            throw Error("triple with empty field");
        }
        const Edge e{g.intern_entity(t.head), g.intern_relation(t.relation), g.intern_entity(t.tail)};
        if (dedupe && !seen.insert(e).second) {
            if (report != nullptr) {
                ++report->duplicates;
            }
            continue;
        }
        g.add_edge(e);
    }
    g.sort_adjacency();
    return g;
}

void KnowledgeGraph::sort_adjacency() {
    const auto order = [](const Neighbor& a, const Neighbor& b) {
        return a.entity != b.entity ? a.entity < b.entity : a.relation < b.relation;
    };
    for (auto& list : out_) {
        std::stable_sort(list.begin(), list.end(), order);
    }
    for (auto& list : in_) {
        std::stable_sort(list.begin(), list.end(), order);
    }
}

EntityId KnowledgeGraph::intern_entity(const std::string& name) {
    const auto [it, inserted] = entity_index_.try_emplace(name, static_cast<EntityId>(entities_.size()));
    if (inserted) {
        entities_.push_back(name);
        kinds_.push_back(kind_from_name(name));
        out_.emplace_back();
        in_.emplace_back();
    }
    return it->second;
}

RelationId KnowledgeGraph::intern_relation(const std::string& name) {
    const auto [it, inserted] =
        relation_index_.try_emplace(name, static_cast<RelationId>(relations_.size()));
    if (inserted) {
        relations_.push_back(name);
    }
    return it->second;
}

void KnowledgeGraph::add_edge(const Edge& e) {
    edges_.push_back(e);
    out_[e.head].push_back({e.relation, e.tail});
    in_[e.tail].push_back({e.relation, e.head});
}

void KnowledgeGraph::check(EntityId e) const {
    if (e >= entities_.size()) {
        throw UnknownEntity("unknown entity index " + std::to_string(e));
    }
}

const std::string& KnowledgeGraph::entity_name(EntityId id) const {
    check(id);
    return entities_[id];
}

const std::string& KnowledgeGraph::relation_name(RelationId id) const {
    if (id >= relations_.size()) {
        throw UnknownRelation("unknown relation index " + std::to_string(id));
    }
    return relations_[id];
}

EntityKind KnowledgeGraph::kind(EntityId id) const {
    check(id);
    return kinds_[id];
}

std::optional<EntityId> KnowledgeGraph::find_entity(std::string_view name) const {
    const auto it = entity_index_.find(std::string(name));
    if (it == entity_index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::optional<RelationId> KnowledgeGraph::find_relation(std::string_view name) const {
    const auto it = relation_index_.find(std::string(name));
    if (it == relation_index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

EntityId KnowledgeGraph::entity(std::string_view name) const {
    const auto id = find_entity(name);
    if (!id) {
        throw UnknownEntity("unknown entity " + std::string(name));
    }
    return *id;
}

RelationFilter KnowledgeGraph::relation_filter(std::span<const std::string> names) const {
    std::vector<RelationId> ids;
    for (const auto& n : names) {
        if (const auto id = find_relation(n)) {
            ids.push_back(*id);
        }
    }
    return RelationFilter(std::move(ids));
}

std::vector<EntityId> KnowledgeGraph::entities_of_kind(EntityKind kind) const {
    std::vector<EntityId> ids;
    for (EntityId i = 0; i < kinds_.size(); ++i) {
        if (kinds_[i] == kind) {
            ids.push_back(i);
        }
    }
    return ids;
}

std::vector<Neighbor> KnowledgeGraph::neighbors(EntityId e, const RelationFilter* filter) const {
    check(e);
    std::vector<Neighbor> result;
    const auto& out = out_[e];
    const auto& in = in_[e];
    result.reserve(out.size() + in.size());
    const auto keep = [filter](const Neighbor& n) { return filter == nullptr || filter->contains(n.relation); };
    std::copy_if(out.begin(), out.end(), std::back_inserter(result), keep);
    const auto mid = result.size();
    std::copy_if(in.begin(), in.end(), std::back_inserter(result), keep);
    std::inplace_merge(result.begin(), result.begin() + static_cast<std::ptrdiff_t>(mid), result.end(),
                       [](const Neighbor& a, const Neighbor& b) {
                           return a.entity != b.entity ? a.entity < b.entity : a.relation < b.relation;
                       });
    return result;
}

std::size_t KnowledgeGraph::edge_count(EntityId a, EntityId b, const RelationFilter* filter) const {
    check(a);
    check(b);
    const auto count_in = [&](const std::vector<Neighbor>& list) {
        const auto lo = std::lower_bound(list.begin(), list.end(), b,
                                         [](const Neighbor& n, EntityId v) { return n.entity < v; });
        std::size_t n = 0;
        for (auto it = lo; it != list.end() && it->entity == b; ++it) {
            if (filter == nullptr || filter->contains(it->relation)) {
                ++n;
            }
        }
        return n;
    };
    std::size_t n = count_in(out_[a]);
    // A self-loop is one edge even though it sits in both lists.
    if (a != b) {
        n += count_in(in_[a]);
    }
    return n;
}

void KnowledgeGraph::save(const std::filesystem::path& path) const {
    std::ostringstream out;
    out << kSnapshotMagic << '\t' << kSnapshotVersion << '\n';
    out << "entities\t" << entities_.size() << '\n';
    for (const auto& e : entities_) {
        out << e << '\n';
    }
    out << "relations\t" << relations_.size() << '\n';
    for (const auto& r : relations_) {
        out << r << '\n';
    }
    out << "edges\t" << edges_.size() << '\n';
    for (const auto& e : edges_) {
        out << e.head << '\t' << e.relation << '\t' << e.tail << '\n';
    }
    write_file(path, out.str());
}

KnowledgeGraph KnowledgeGraph::load(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    const auto fail = [&](const std::string& why) -> SnapshotError {
        return SnapshotError(path.string() + ": " + why);
    };
    const auto section = [&](std::string_view name) {
        if (!std::getline(in, line)) {
            throw fail("truncated before " + std::string(name));
        }
        const auto parts = split(line, '\t');
        if (parts.size() != 2 || parts[0] != name) {
            throw fail("expected section " + std::string(name));
        }
        return static_cast<std::size_t>(std::stoull(parts[1]));
    };
    if (!std::getline(in, line)) {
        throw fail("empty snapshot");
    }
    const auto header = split(line, '\t');
    if (header.size() != 2 || header[0] != kSnapshotMagic) {
        throw fail("not a graph snapshot");
    }
    if (std::stoi(header[1]) != kSnapshotVersion) {
        throw fail("unsupported snapshot version " + header[1]);
    }
    std::vector<std::string> entities(section("entities"));
    for (auto& e : entities) {
        if (!std::getline(in, e)) {
            throw fail("truncated entity list");
        }
    }
    std::vector<std::string> relations(section("relations"));
    for (auto& r : relations) {
        if (!std::getline(in, r)) {
            throw fail("truncated relation list");
        }
    }
    const auto n_edges = section("edges");
    std::vector<Triple> triples;
    triples.reserve(n_edges);
    for (std::size_t i = 0; i < n_edges; ++i) {
        if (!std::getline(in, line)) {
            throw fail("truncated edge list");
        }
        const auto parts = split(line, '\t');
        if (parts.size() != 3) {
            throw fail("bad edge line");
        }
        const auto h = std::stoull(parts[0]);
        const auto r = std::stoull(parts[1]);
        const auto t = std::stoull(parts[2]);
        if (h >= entities.size() || t >= entities.size() || r >= relations.size()) {
            throw fail("edge references unknown id");
        }
        triples.push_back({entities[h], relations[r], entities[t]});
    }
    KnowledgeGraph g;
    // Intern in stored order so ids survive the round trip even for entities
    // that no edge references.
    for (const auto& e : entities) {
        g.intern_entity(e);
    }
    for (const auto& r : relations) {
        g.intern_relation(r);
    }
    for (const auto& t : triples) {
        g.add_edge({g.entity_index_.at(t.head), g.relation_index_.at(t.relation), g.entity_index_.at(t.tail)});
    }
    g.sort_adjacency();
    return g;
}

std::vector<Triple> parse_triples(std::string_view text, bool strict, LoadReport* report) {
    LoadReport local;
    LoadReport& rep = report != nullptr ? *report : local;
    std::vector<Triple> triples;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        ++rep.lines;
        if (line.empty()) {
            continue;
        }
        if (line.front() == '#') {
            ++rep.comments;
            continue;
        }
        auto cols = split(line, '\t');
        const bool ok = cols.size() == 3 &&
                        std::none_of(cols.begin(), cols.end(), [](const std::string& c) { return trim(c).empty(); });
        if (!ok) {
            if (strict) {
                throw MalformedLine(line_no, cols.size() != 3
                                                 ? "expected 3 tab-separated columns, got " + std::to_string(cols.size())
                                                 : "empty column");
            }
            ++rep.malformed;
            continue;
        }
        triples.push_back({std::string(trim(cols[0])), std::string(trim(cols[1])), std::string(trim(cols[2]))});
    }
    return triples;
}

KnowledgeGraph load_triples(const std::filesystem::path& path, const LoadOptions& options,
                            LoadReport* report) {
    if (!std::filesystem::is_regular_file(path)) {
        throw MissingFile(path.string());
    }
    const auto triples = parse_triples(read_file(path), options.strict, report);
    return KnowledgeGraph::from_triples(triples, options.dedupe, report);
}

} // namespace drugrec
