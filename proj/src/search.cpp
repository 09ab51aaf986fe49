#include "drugrec/search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

#include "drugrec/error.hpp"
#include "drugrec/util.hpp"

namespace drugrec {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && !is_word_byte(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        const auto start = i;
        while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        if (i - start >= 2) {
            out.push_back(to_lower_ascii(text.substr(start, i - start)));
        }
    }
    return out;
}

std::vector<std::string> pair_query(std::string_view disease, std::string_view compound) {
    auto q = tokenize(disease);
    for (auto& t : tokenize(compound)) {
        q.push_back(std::move(t));
    }
    return q;
}

std::span<const Posting> InvertedIndex::postings(std::string_view term) const {
    const auto it = postings_.find(std::string(term));
    if (it == postings_.end()) {
        return {};
    }
    return it->second;
}

std::vector<std::string> InvertedIndex::terms() const {
    std::vector<std::string> out;
    out.reserve(postings_.size());
    for (const auto& [term, _] : postings_) {
        out.push_back(term);
    }
    std::sort(out.begin(), out.end());
    return out;
}

const IndexedChunk& InvertedIndex::chunk(ChunkRef ref) const {
    if (ref >= chunks_.size()) {
        throw UnknownChunk("unknown chunk ref " + std::to_string(ref));
    }
    return chunks_[ref];
}

std::optional<ChunkRef> InvertedIndex::find(std::string_view key) const {
    const auto it = by_key_.find(std::string(key));
    if (it == by_key_.end()) {
        return std::nullopt;
    }
    return it->second;
}

void InvertedIndex::finish_stats() {
    double total = 0.0;
    by_key_.clear();
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
        total += chunks_[i].length;
        by_key_.emplace(chunks_[i].key, static_cast<ChunkRef>(i));
    }
    avg_doc_len_ = chunks_.empty() ? 0.0 : total / static_cast<double>(chunks_.size());
}

IndexBuilder::IndexBuilder(Bm25Params params) {
    if (!(params.k1 >= 0.0) || !(params.b >= 0.0 && params.b <= 1.0)) {
        throw Error("bm25 parameters out of range: need k1 >= 0 and 0 <= b <= 1");
    }
    index_.params_ = params;
}

void IndexBuilder::add(const Chunk& chunk) {
    auto key = chunk.key();
    if (index_.by_key_.contains(key)) {
        throw DuplicateChunkRef("duplicate chunk " + key);
    }
    index_.by_key_.emplace(key, static_cast<ChunkRef>(index_.chunks_.size()));
    index_.chunks_.push_back({std::move(key), chunk.doc_id, chunk.text, 0});
}

namespace {

using ShardPostings = std::unordered_map<std::string, std::vector<Posting>>;

void count_shard(std::vector<IndexedChunk>& chunks, std::size_t begin, std::size_t end, ShardPostings& out) {
    for (std::size_t i = begin; i < end; ++i) {
        const auto tokens = tokenize(chunks[i].text);
        chunks[i].length = static_cast<std::uint32_t>(tokens.size());
        std::map<std::string_view, std::uint32_t> tf;
        for (const auto& t : tokens) {
            ++tf[t];
        }
        for (const auto& [term, n] : tf) {
            out[std::string(term)].push_back({static_cast<ChunkRef>(i), n});
        }
    }
}

} // namespace

InvertedIndex IndexBuilder::finish(std::size_t threads) && {
    auto& chunks = index_.chunks_;
    const auto n = chunks.size();
    threads = std::max<std::size_t>(1, std::min(threads, n));
    std::vector<ShardPostings> shards(threads);
    const auto bound = [&](std::size_t s) { return n * s / threads; };
    if (threads == 1) {
        count_shard(chunks, 0, n, shards[0]);
    } else {
        std::vector<std::jthread> workers;
        for (std::size_t s = 0; s < threads; ++s) {
            workers.emplace_back([&, s] { count_shard(chunks, bound(s), bound(s + 1), shards[s]); });
        }
    }
    // Shards cover ascending ref ranges, so appending in shard order keeps
    // every posting list sorted.
    auto& merged = index_.postings_;
    merged = std::move(shards[0]);
    for (std::size_t s = 1; s < threads; ++s) {
        for (auto& [term, list] : shards[s]) {
            auto& dst = merged[term];
            dst.insert(dst.end(), list.begin(), list.end());
        }
    }
    index_.finish_stats();
    return std::move(index_);
}

InvertedIndex build_index(std::span<const Chunk> chunks, Bm25Params params, std::size_t threads) {
    IndexBuilder builder(params);
    for (const auto& c : chunks) {
        builder.add(c);
    }
    return std::move(builder).finish(threads);
}

double idf(const InvertedIndex& idx, std::string_view term) {
    const auto n = static_cast<double>(idx.size());
    const auto df = static_cast<double>(idx.document_frequency(term));
    return std::max(0.0, std::log((n - df + 0.5) / (df + 0.5)));
}

namespace {

std::vector<std::string> distinct(std::span<const std::string> query) {
    std::vector<std::string> out;
    for (const auto& t : query) {
        if (std::find(out.begin(), out.end(), t) == out.end()) {
            out.push_back(t);
        }
    }
    return out;
}

double term_score(const InvertedIndex& idx, double term_idf, std::uint32_t tf, std::uint32_t len) {
    const auto& p = idx.params();
    const double f = tf;
    const double norm = 1.0 - p.b + p.b * static_cast<double>(len) / idx.avg_doc_len();
    return term_idf * f * (p.k1 + 1.0) / (f + p.k1 * norm);
}

} // namespace

double bm25_score(const InvertedIndex& idx, std::span<const std::string> query, ChunkRef ref) {
    const auto& c = idx.chunk(ref);
    double score = 0.0;
    for (const auto& term : distinct(query)) {
        const auto list = idx.postings(term);
        const auto it = std::lower_bound(list.begin(), list.end(), ref,
                                         [](const Posting& p, ChunkRef r) { return p.ref < r; });
        if (it != list.end() && it->ref == ref) {
            score += term_score(idx, idf(idx, term), it->tf, c.length);
        }
    }
    return score;
}

std::vector<QueryResult> retrieve_topk(const InvertedIndex& idx, std::span<const std::string> query, std::size_t k) {
    if (k == 0) {
        throw Error("k must be at least 1");
    }
    // Term-at-a-time accumulation; the addition order per chunk matches
    // bm25_score, so both give identical doubles.
    std::unordered_map<ChunkRef, QueryResult> acc;
    for (const auto& term : distinct(query)) {
        const double w = idf(idx, term);
        for (const auto& p : idx.postings(term)) {
            auto [it, fresh] = acc.try_emplace(p.ref, QueryResult{p.ref, 0.0, {}});
            it->second.score += term_score(idx, w, p.tf, idx.chunk(p.ref).length);
            it->second.matched_terms.push_back(term);
        }
    }
    std::vector<QueryResult> out;
    out.reserve(acc.size());
    for (auto& [_, r] : acc) {
        out.push_back(std::move(r));
    }
    const auto better = [](const QueryResult& a, const QueryResult& b) {
        return a.score != b.score ? a.score > b.score : a.ref < b.ref;
    };
    const auto m = std::min(k, out.size());
    std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(m), out.end(), better);
    out.resize(m);
    return out;
}

namespace {

constexpr const char* kIndexFile = "index.jsonl";
constexpr int kIndexVersion = 1;

} // namespace

void InvertedIndex::save(const fs::path& dir) const {
    fs::create_directories(dir);
    std::ofstream out(dir / kIndexFile, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + (dir / kIndexFile).string());
    }
    out << json{{"format", "drugrec-index"},
                {"version", kIndexVersion},
                {"k1", params_.k1},
                {"b", params_.b},
                {"chunks", chunks_.size()},
                {"terms", postings_.size()}}
               .dump()
        << '\n';
    for (const auto& c : chunks_) {
        out << json{{"key", c.key}, {"doc_id", c.doc_id}, {"length", c.length}, {"text", c.text}}.dump() << '\n';
    }
    for (const auto& term : terms()) {
        json list = json::array();
        for (const auto& p : postings_.at(term)) {
            list.push_back({p.ref, p.tf});
        }
        out << json{{"term", term}, {"postings", std::move(list)}}.dump() << '\n';
    }
}

InvertedIndex InvertedIndex::load(const fs::path& dir) {
    const auto path = dir / kIndexFile;
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MissingFile(path.string());
    }
    InvertedIndex idx;
    std::string line;
    std::size_t line_no = 0;
    const auto next = [&]() -> json {
        if (!std::getline(in, line)) {
            throw SnapshotError(path.string() + ": truncated after line " + std::to_string(line_no));
        }
        ++line_no;
        try {
            return json::parse(line);
        } catch (const json::exception& e) {
            throw SnapshotError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    };
    try {
        const auto header = next();
        if (header.value("format", "") != "drugrec-index" || header.value("version", 0) != kIndexVersion) {
            throw SnapshotError(path.string() + ": not a version " + std::to_string(kIndexVersion) + " index");
        }
        idx.params_ = {header.at("k1").get<double>(), header.at("b").get<double>()};
        const auto n_chunks = header.at("chunks").get<std::size_t>();
        const auto n_terms = header.at("terms").get<std::size_t>();
        for (std::size_t i = 0; i < n_chunks; ++i) {
            const auto j = next();
            idx.chunks_.push_back({j.at("key").get<std::string>(), j.at("doc_id").get<std::string>(),
                                   j.at("text").get<std::string>(), j.at("length").get<std::uint32_t>()});
        }
        for (std::size_t i = 0; i < n_terms; ++i) {
            const auto j = next();
            std::vector<Posting> list;
            for (const auto& p : j.at("postings")) {
                const Posting posting{p.at(0).get<ChunkRef>(), p.at(1).get<std::uint32_t>()};
                if (posting.ref >= n_chunks || posting.tf == 0 || (!list.empty() && list.back().ref >= posting.ref)) {
                    throw SnapshotError(path.string() + ":" + std::to_string(line_no) + ": bad posting");
                }
                list.push_back(posting);
            }
            idx.postings_.emplace(j.at("term").get<std::string>(), std::move(list));
        }
    } catch (const json::exception& e) {
        throw SnapshotError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    idx.finish_stats();
    if (idx.by_key_.size() != idx.chunks_.size()) {
        throw SnapshotError(path.string() + ": duplicate chunk keys");
    }
    return idx;
}

InvertedIndex build_index_from_store(const fs::path& store_dir, std::size_t max_chunk_chars, Bm25Params params,
                                     std::size_t threads) {
    IndexBuilder builder(params);
    for_each_document(store_dir, [&](const Document& doc) {
        for (const auto& c : chunk_document(doc, max_chunk_chars)) {
            builder.add(c);
        }
    });
    return std::move(builder).finish(threads);
}

} // namespace drugrec
