#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "drugrec/http.hpp"
#include "drugrec/search.hpp"

namespace drugrec {

using Vector = std::vector<double>;

/// Text to fixed-length vector. Implementations must be safe to call from
/// several threads at once.
class TextEmbedder {
public:
    virtual ~TextEmbedder() = default;

    virtual std::size_t dim() const = 0;
    /// Identity used to key caches; changes whenever outputs would change.
    virtual std::string id() const = 0;
    virtual Vector embed(std::string_view text) const = 0;

    /// Default: one embed() per text.
    virtual std::vector<Vector> embed_batch(std::span<const std::string> texts) const;
};

/// Each token maps to a seeded pseudo-random unit vector; a text is the mean
/// of its token vectors. Texts without tokens share one fixed vector.
class HashEmbedder final : public TextEmbedder {
public:
    explicit HashEmbedder(std::size_t dim = 64, std::uint64_t seed = 0);

    std::size_t dim() const override { return dim_; }
    std::string id() const override;
    Vector embed(std::string_view text) const override;

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

/// Term-frequency vector with tokens hashed into `dim` buckets. A text
/// without tokens embeds to the zero vector.
class BowEmbedder final : public TextEmbedder {
public:
    explicit BowEmbedder(std::size_t dim = 4096);

    std::size_t dim() const override { return dim_; }
    std::string id() const override;
    Vector embed(std::string_view text) const override;

private:
    std::size_t dim_;
};

struct RemoteEmbedderConfig {
    std::string endpoint; // full URL
    std::string api_key;
    std::string model = "text-embedding";
    std::size_t dim = 0; // 0: accept whatever the provider returns first
    std::chrono::milliseconds timeout{60000};

    /// endpoint from EMBED_ENDPOINT, key from EMBED_API_KEY. Throws
    /// ConfigInvalid when the endpoint is unset.
    static RemoteEmbedderConfig from_env(std::string model, std::size_t dim = 0);
};

/// POST {"texts": [...], "model": id} -> {"vectors": [[...], ...]}.
class RemoteEmbedder final : public TextEmbedder {
public:
    explicit RemoteEmbedder(RemoteEmbedderConfig config);

    std::size_t dim() const override;
    std::string id() const override { return "remote:" + config_.model; }
    Vector embed(std::string_view text) const override;
    /// Throws EmbedderFailure on transport errors or a malformed reply.
    std::vector<Vector> embed_batch(std::span<const std::string> texts) const override;

private:
    RemoteEmbedderConfig config_;
    mutable std::mutex mutex_;
    mutable std::size_t dim_;
};

/// "hash", "bow" or "remote" (model name for the remote provider).
std::unique_ptr<TextEmbedder> make_embedder(std::string_view kind, std::size_t dim, std::uint64_t seed,
                                            const std::string& remote_model = "text-embedding");

/// Persistent text -> vector cache for one embedder identity, keyed by the
/// SHA-256 of the text. File: JSON Lines with a versioned header naming the
/// embedder. A corrupt or foreign file is ignored with a warning.
class EmbeddingCache {
public:
    EmbeddingCache(std::string embedder_id, std::size_t dim);
    /// Loads `path` if it exists.
    EmbeddingCache(std::string embedder_id, std::size_t dim, std::filesystem::path path);

    const Vector* find(std::string_view text) const;
    void put(std::string_view text, Vector v);
    std::size_t size() const { return entries_.size(); }

    /// Writes to the path given at construction, entries sorted by key.
    void save() const;
    void save(const std::filesystem::path& path) const;

    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    void load(const std::filesystem::path& path);

    std::string embedder_id_;
    std::size_t dim_;
    std::filesystem::path path_;
    std::unordered_map<std::string, Vector> entries_;
    std::vector<std::string> warnings_;
    mutable std::mutex mutex_;
};

struct CacheStats {
    std::size_t hits = 0;
    std::size_t misses = 0;
};

/// Vectors for `texts` in order, computing only cache misses (each distinct
/// text once). Misses are embedded in batches of up to `max_in_flight`
/// concurrent calls, each retried per `retry`.
std::vector<Vector> cache_embeddings(const TextEmbedder& embedder, std::span<const std::string> texts,
                                     EmbeddingCache& cache, const RetryPolicy& retry = {},
                                     std::size_t max_in_flight = 1, CacheStats* stats = nullptr);

/// "<disease> [SEP] <drug>" with whitespace normalized. Throws EmptyName.
std::string pair_text(std::string_view disease, std::string_view drug);

struct Candidate {
    ChunkRef ref;
    std::string key;
    std::string text;
    double bm25;
};

struct ScoredChunk {
    ChunkRef ref;
    std::string key;
    std::string text;
    double bm25;
    double cosine;

    friend bool operator==(const ScoredChunk&, const ScoredChunk&) = default;
};

struct BackgroundSet {
    std::string disease;
    std::string drug;
    std::vector<ScoredChunk> chunks; // descending cosine, ascending ref on ties
    double threshold_used = 0.0;
};

struct RerankConfig {
    double threshold = 0.7;
    std::size_t max_chunks = 8;
    RetryPolicy retry;
    std::size_t max_in_flight = 4;

    void validate() const;
};

/// Cosine; 0 when either vector is all zeros. Throws DimensionMismatch.
double safe_cosine(std::span<const double> a, std::span<const double> b);

/// Keeps candidates with cosine(pair, chunk) >= threshold, best max_chunks
/// first. Duplicate refs are scored once. Embedding failures surface as
/// EmbedderFailure naming the chunk. `cache` may be null.
BackgroundSet rerank(const TextEmbedder& embedder, std::string_view disease, std::string_view drug,
                     std::span<const Candidate> candidates, const RerankConfig& cfg,
                     EmbeddingCache* cache = nullptr);

/// Candidates for a pair query straight from the index.
std::vector<Candidate> candidates_for(const InvertedIndex& idx, std::string_view disease, std::string_view drug,
                                      std::size_t k = 80);

} // namespace drugrec
