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

#include "drugrec/corpus.hpp"

namespace drugrec {

/// Lowercase, split on non-word bytes, drop tokens shorter than 2 bytes.
std::vector<std::string> tokenize(std::string_view text);

/// tokenize(disease) ++ tokenize(compound).
std::vector<std::string> pair_query(std::string_view disease, std::string_view compound);

/// Position of a chunk in build order.
using ChunkRef = std::uint32_t;

struct Posting {
    ChunkRef ref;
    std::uint32_t tf;

    friend bool operator==(const Posting&, const Posting&) = default;
};

struct IndexedChunk {
    std::string key; // Chunk::key()
    std::string doc_id;
    std::string text;
    std::uint32_t length = 0; // token count

    friend bool operator==(const IndexedChunk&, const IndexedChunk&) = default;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;

    friend bool operator==(const Bm25Params&, const Bm25Params&) = default;
};

class InvertedIndex {
public:
    InvertedIndex() = default;

    std::size_t size() const { return chunks_.size(); }
    double avg_doc_len() const { return avg_doc_len_; }
    const Bm25Params& params() const { return params_; }

    /// Sorted by ref; empty for unknown terms.
    std::span<const Posting> postings(std::string_view term) const;
    std::size_t document_frequency(std::string_view term) const { return postings(term).size(); }
    std::size_t term_count() const { return postings_.size(); }
    std::vector<std::string> terms() const; // sorted

    /// Throws UnknownChunk.
    const IndexedChunk& chunk(ChunkRef ref) const;
    std::optional<ChunkRef> find(std::string_view key) const;

    /// Writes <dir>/index.jsonl.
    void save(const std::filesystem::path& dir) const;
    /// Throws MissingFile, SnapshotError.
    static InvertedIndex load(const std::filesystem::path& dir);

    friend bool operator==(const InvertedIndex& a, const InvertedIndex& b) {
        return a.params_ == b.params_ && a.chunks_ == b.chunks_ && a.postings_ == b.postings_;
    }

private:
    friend class IndexBuilder;

    void finish_stats();

    Bm25Params params_;
    std::vector<IndexedChunk> chunks_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::unordered_map<std::string, ChunkRef> by_key_;
    double avg_doc_len_ = 0.0;
};

/// Collects chunks one at a time; `finish` counts terms in `threads` shards
/// and merges them in shard order, so the result does not depend on the
/// thread count.
class IndexBuilder {
public:
    explicit IndexBuilder(Bm25Params params = {});

    /// Throws DuplicateChunkRef.
    void add(const Chunk& chunk);
    std::size_t size() const { return index_.chunks_.size(); }

    InvertedIndex finish(std::size_t threads = 1) &&;

private:
    InvertedIndex index_;
};

InvertedIndex build_index(std::span<const Chunk> chunks, Bm25Params params = {}, std::size_t threads = 1);

/// max(0, ln((N - df + 0.5) / (df + 0.5))).
double idf(const InvertedIndex& idx, std::string_view term);

/// Sum over distinct query terms. Throws UnknownChunk.
double bm25_score(const InvertedIndex& idx, std::span<const std::string> query, ChunkRef ref);

struct QueryResult {
    ChunkRef ref;
    double score;
    std::vector<std::string> matched_terms; // distinct, in query order

    friend bool operator==(const QueryResult&, const QueryResult&) = default;
};

/// Chunks with at least one query term, by descending score then ascending
/// ref, truncated to k. Throws Error when k is 0.
std::vector<QueryResult> retrieve_topk(const InvertedIndex& idx, std::span<const std::string> query,
                                       std::size_t k = 80);

/// Chunks every document of a store in store order.
InvertedIndex build_index_from_store(const std::filesystem::path& store_dir, std::size_t max_chunk_chars = 1200,
                                     Bm25Params params = {}, std::size_t threads = 1);

} // namespace drugrec
