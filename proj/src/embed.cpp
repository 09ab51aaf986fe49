#include "drugrec/embed.hpp"

#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "drugrec/error.hpp"
#include "drugrec/rng.hpp"
#include "drugrec/util.hpp"

namespace drugrec {

namespace {

constexpr std::string_view kTableMagic = "drugrec-emb";
constexpr int kTableVersion = 1;

// Loss and unit residuals for one sample. Residual units are zero when the
// distance is exactly zero (the subgradient there).
struct SampleTerms {
    double loss = 0.0;
    std::vector<double> pos_unit;
    std::vector<double> neg_unit;
};

SampleTerms sample_terms(const TranslationalModel& m, const RankingSample& s, double margin) {
    SampleTerms out;
    out.pos_unit.resize(m.dim);
    out.neg_unit.resize(m.dim);
    const auto h = m.entity(s.head);
    const auto r = m.relation(s.relation);
    const auto t = m.entity(s.tail);
    const auto tn = m.entity(s.corrupted_tail);
    double pos_sq = 0.0;
    double neg_sq = 0.0;
    for (std::size_t i = 0; i < m.dim; ++i) {
        out.pos_unit[i] = h[i] + r[i] - t[i];
        out.neg_unit[i] = h[i] + r[i] - tn[i];
        pos_sq += out.pos_unit[i] * out.pos_unit[i];
        neg_sq += out.neg_unit[i] * out.neg_unit[i];
    }
    const double d_pos = std::sqrt(pos_sq);
    const double d_neg = std::sqrt(neg_sq);
    out.loss = std::max(0.0, margin + d_pos - d_neg);
    for (std::size_t i = 0; i < m.dim; ++i) {
        out.pos_unit[i] = d_pos > 0.0 ? out.pos_unit[i] / d_pos : 0.0;
        out.neg_unit[i] = d_neg > 0.0 ? out.neg_unit[i] / d_neg : 0.0;
    }
    return out;
}

// target += coeff * d loss / d params for an active sample.
void apply_terms(TranslationalModel& target, const RankingSample& s, const SampleTerms& terms,
                 double coeff) {
    auto h = target.entity(s.head);
    auto r = target.relation(s.relation);
    for (std::size_t i = 0; i < target.dim; ++i) {
        const double g_hr = terms.pos_unit[i] - terms.neg_unit[i];
        h[i] += coeff * g_hr;
        r[i] += coeff * g_hr;
    }
    auto t = target.entity(s.tail);
    for (std::size_t i = 0; i < target.dim; ++i) {
        t[i] -= coeff * terms.pos_unit[i];
    }
    auto tn = target.entity(s.corrupted_tail);
    for (std::size_t i = 0; i < target.dim; ++i) {
        tn[i] += coeff * terms.neg_unit[i];
    }
}

} // namespace

double dot(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw DimensionMismatch(u.size(), v.size());
    }
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        s += u[i] * v[i];
    }
    return s;
}

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return std::sqrt(s);
}

double cosine(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size() || u.empty()) {
        throw DimensionMismatch(u.size(), v.size());
    }
    const double nu = l2_norm(u);
    const double nv = l2_norm(v);
    if (nu == 0.0 || nv == 0.0) {
        throw ZeroVector();
    }
    return dot(u, v) / (nu * nv);
}

EmbeddingTable::EmbeddingTable(std::size_t dim, std::vector<double> values)
    : dim_(dim), values_(std::move(values)) {
    if (dim_ == 0) {
        throw Error("embedding dim must be positive");
    }
    if (values_.size() % dim_ != 0) {
        throw Error("embedding values are not a whole number of rows");
    }
    for (double x : values_) {
        if (!std::isfinite(x)) {
            throw Error("non-finite embedding component");
        }
    }
    norms_.resize(size());
    for (std::size_t e = 0; e < norms_.size(); ++e) {
        norms_[e] = l2_norm(row(static_cast<EntityId>(e)));
    }
}

void EmbeddingTable::check(EntityId e) const {
    if (e >= size()) {
        throw UnknownEntity("no embedding for entity index " + std::to_string(e));
    }
}

std::span<const double> EmbeddingTable::row(EntityId e) const {
    check(e);
    return {values_.data() + static_cast<std::size_t>(e) * dim_, dim_};
}

double EmbeddingTable::norm(EntityId e) const {
    check(e);
    return norms_[e];
}

void EmbeddingTable::save(const std::filesystem::path& path) const {
    std::string out;
    out += std::string(kTableMagic) + '\t' + std::to_string(kTableVersion) + '\t' +
           std::to_string(size()) + '\t' + std::to_string(dim_) + '\n';
    for (std::size_t e = 0; e < size(); ++e) {
        out += std::to_string(e);
        for (double x : row(static_cast<EntityId>(e))) {
            out += '\t';
            out += format_double(x);
        }
        out += '\n';
    }
    write_file(path, out);
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    const auto fail = [&](const std::string& why) { return SnapshotError(path.string() + ": " + why); };
    if (!std::getline(in, line)) {
        throw fail("empty embedding file");
    }
    const auto header = split(line, '\t');
    if (header.size() != 4 || header[0] != kTableMagic) {
        throw fail("not an embedding file");
    }
    if (std::stoi(header[1]) != kTableVersion) {
        throw fail("unsupported version " + header[1]);
    }
    const auto rows = std::stoull(header[2]);
    const auto dim = std::stoull(header[3]);
    std::vector<double> values;
    values.reserve(rows * dim);
    for (std::size_t e = 0; e < rows; ++e) {
        if (!std::getline(in, line)) {
            throw fail("truncated at row " + std::to_string(e));
        }
        const auto cols = split(line, '\t');
        if (cols.size() != dim + 1 || cols[0] != std::to_string(e)) {
            throw fail("bad row " + std::to_string(e));
        }
        for (std::size_t i = 1; i < cols.size(); ++i) {
            double x = 0.0;
            const auto& c = cols[i];
            const auto res = std::from_chars(c.data(), c.data() + c.size(), x);
            if (res.ec != std::errc{} || res.ptr != c.data() + c.size()) {
                throw fail("bad number in row " + std::to_string(e));
            }
            values.push_back(x);
        }
    }
    return EmbeddingTable(dim, std::move(values));
}

double entity_similarity(const EmbeddingTable& table, EntityId a, EntityId b) {
    const double na = table.norm(a);
    const double nb = table.norm(b);
    if (na == 0.0 || nb == 0.0) {
        throw ZeroVector();
    }
    return dot(table.row(a), table.row(b)) / (na * nb);
}

void EmbedTrainConfig::validate() const {
    if (dim == 0) {
        throw Error("embed.dim must be positive");
    }
    if (!(learning_rate > 0.0)) {
        throw Error("embed.learning_rate must be positive");
    }
    if (negatives_per_positive < 1) {
        throw Error("embed.negatives_per_positive must be at least 1");
    }
    if (!(margin >= 0.0)) {
        throw Error("embed.margin must be non-negative");
    }
}

double translation_distance(const TranslationalModel& m, EntityId h, RelationId r, EntityId t) {
    const auto hv = m.entity(h);
    const auto rv = m.relation(r);
    const auto tv = m.entity(t);
    double s = 0.0;
    for (std::size_t i = 0; i < m.dim; ++i) {
        const double d = hv[i] + rv[i] - tv[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double ranking_loss(const TranslationalModel& model, std::span<const RankingSample> samples,
                    double margin, TranslationalModel* grad) {
    if (grad != nullptr) {
        grad->dim = model.dim;
        grad->entities.assign(model.entities.size(), 0.0);
        grad->relations.assign(model.relations.size(), 0.0);
    }
    double total = 0.0;
    for (const auto& s : samples) {
        const auto terms = sample_terms(model, s, margin);
        total += terms.loss;
        if (grad != nullptr && terms.loss > 0.0) {
            apply_terms(*grad, s, terms, 1.0);
        }
    }
    return total;
}

TranslationalModel init_model(std::size_t entities, std::size_t relations, std::size_t dim,
                              std::uint64_t seed) {
    Rng rng(seed);
    const double bound = 0.5 / static_cast<double>(dim);
    TranslationalModel m;
    m.dim = dim;
    m.entities.resize(entities * dim);
    m.relations.resize(relations * dim);
    for (double& x : m.entities) {
        x = rng.uniform(-bound, bound);
    }
    for (double& x : m.relations) {
        x = rng.uniform(-bound, bound);
    }
    return m;
}

EmbedTrainResult train_embeddings(const KnowledgeGraph& g, const EmbedTrainConfig& cfg) {
    cfg.validate();
    if (g.edge_count() == 0) {
        throw EmptyGraph();
    }
    auto model = init_model(g.entity_count(), g.relation_count(), cfg.dim, cfg.seed);
    // Separate stream so that changing the epoch count never perturbs init.
    Rng rng(mix_seed(cfg.seed, 1));
    const auto edges = g.edges();
    std::vector<std::size_t> order(edges.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto n_entities = g.entity_count();

    EmbedTrainResult result;
    result.epoch_losses.reserve(cfg.epochs);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto idx : order) {
            const auto& e = edges[idx];
            for (std::size_t k = 0; k < cfg.negatives_per_positive; ++k) {
                EntityId corrupt = e.tail;
                if (n_entities > 1) {
                    corrupt = static_cast<EntityId>(rng.below(n_entities - 1));
                    if (corrupt >= e.tail) {
                        ++corrupt;
                    }
                }
                const RankingSample s{e.head, e.relation, e.tail, corrupt};
                const auto terms = sample_terms(model, s, cfg.margin);
                sum += terms.loss;
                ++count;
                if (terms.loss > 0.0) {
                    apply_terms(model, s, terms, -cfg.learning_rate);
                }
            }
        }
        result.epoch_losses.push_back(sum / static_cast<double>(count));
    }
    result.table = EmbeddingTable(cfg.dim, std::move(model.entities));
    return result;
}

} // namespace drugrec
