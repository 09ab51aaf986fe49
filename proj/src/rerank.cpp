#include "drugrec/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iostream>
#include <set>

#include "drugrec/embed.hpp"
#include "drugrec/rng.hpp"
#include "drugrec/util.hpp"

namespace drugrec {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<Vector> TextEmbedder::embed_batch(std::span<const std::string> texts) const {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        out.push_back(embed(t));
    }
    return out;
}

HashEmbedder::HashEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim == 0) {
        throw Error("embedding dim must be positive");
    }
}

std::string HashEmbedder::id() const {
    return "hash:" + std::to_string(dim_) + ":" + std::to_string(seed_);
}

Vector HashEmbedder::embed(std::string_view text) const {
    auto tokens = tokenize(text);
    if (tokens.empty()) {
        tokens.emplace_back();
    }
    Vector out(dim_, 0.0);
    Vector v(dim_);
    for (const auto& t : tokens) {
        Rng rng(mix_seed(fnv1a64(t), seed_));
        double norm = 0.0;
        while (norm == 0.0) {
            for (auto& x : v) {
                x = rng.uniform(-1.0, 1.0);
            }
            norm = l2_norm(v);
        }
        for (std::size_t i = 0; i < dim_; ++i) {
            out[i] += v[i] / norm;
        }
    }
    for (auto& x : out) {
        x /= static_cast<double>(tokens.size());
    }
    return out;
}

BowEmbedder::BowEmbedder(std::size_t dim) : dim_(dim) {
    if (dim == 0) {
        throw Error("embedding dim must be positive");
    }
}

std::string BowEmbedder::id() const { return "bow:" + std::to_string(dim_); }

Vector BowEmbedder::embed(std::string_view text) const {
    Vector out(dim_, 0.0);
    for (const auto& t : tokenize(text)) {
        out[fnv1a64(t) % dim_] += 1.0;
    }
    return out;
}

RemoteEmbedderConfig RemoteEmbedderConfig::from_env(std::string model, std::size_t dim) {
    const char* endpoint = std::getenv("EMBED_ENDPOINT");
    if (endpoint == nullptr || *endpoint == '\0') {
        throw ConfigInvalid("<env>", "EMBED_ENDPOINT", "must be set for the remote embedder");
    }
    const char* key = std::getenv("EMBED_API_KEY");
    RemoteEmbedderConfig cfg;
    cfg.endpoint = endpoint;
    cfg.api_key = key != nullptr ? key : "";
    cfg.model = std::move(model);
    cfg.dim = dim;
    return cfg;
}

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderConfig config) : config_(std::move(config)), dim_(config_.dim) {}

std::size_t RemoteEmbedder::dim() const {
    const std::lock_guard lock(mutex_);
    return dim_;
}

Vector RemoteEmbedder::embed(std::string_view text) const {
    const std::string one(text);
    return embed_batch(std::span(&one, 1)).front();
}

std::vector<Vector> RemoteEmbedder::embed_batch(std::span<const std::string> texts) const {
    const json request{{"texts", texts}, {"model", config_.model}};
    std::string reply;
    try {
        reply = http_post_json(config_.endpoint, request.dump(), config_.api_key, config_.timeout);
    } catch (const HttpError& e) {
        throw EmbedderFailure(e.what());
    }
    std::vector<Vector> out;
    try {
        const auto j = json::parse(reply);
        out = j.at("vectors").get<std::vector<Vector>>();
    } catch (const json::exception& e) {
        throw EmbedderFailure(std::string("malformed embedding reply: ") + e.what());
    }
    if (out.size() != texts.size()) {
        throw EmbedderFailure("embedding reply has " + std::to_string(out.size()) + " vectors for " +
                              std::to_string(texts.size()) + " texts");
    }
    const std::lock_guard lock(mutex_);
    for (const auto& v : out) {
        if (dim_ == 0) {
            dim_ = v.size();
        }
        if (v.size() != dim_ || dim_ == 0) {
            throw EmbedderFailure("embedding reply vector has length " + std::to_string(v.size()) + ", expected " +
                                  std::to_string(dim_));
        }
    }
    return out;
}

std::unique_ptr<TextEmbedder> make_embedder(std::string_view kind, std::size_t dim, std::uint64_t seed,
                                            const std::string& remote_model) {
    if (kind == "hash") {
        return std::make_unique<HashEmbedder>(dim, seed);
    }
    if (kind == "bow") {
        return std::make_unique<BowEmbedder>(dim);
    }
    if (kind == "remote") {
        return std::make_unique<RemoteEmbedder>(RemoteEmbedderConfig::from_env(remote_model, 0));
    }
    throw Error("unknown embedder " + std::string(kind) + " (expected hash, bow or remote)");
}

namespace {

constexpr const char* kCacheFormat = "drugrec-embcache";
constexpr int kCacheVersion = 1;

} // namespace

EmbeddingCache::EmbeddingCache(std::string embedder_id, std::size_t dim)
    : embedder_id_(std::move(embedder_id)), dim_(dim) {}

EmbeddingCache::EmbeddingCache(std::string embedder_id, std::size_t dim, fs::path path)
    : embedder_id_(std::move(embedder_id)), dim_(dim), path_(std::move(path)) {
    if (fs::exists(path_)) {
        try {
            load(path_);
        } catch (const CacheCorrupt& e) {
            entries_.clear();
            warnings_.emplace_back(e.what());
            std::cerr << "warning: " << e.what() << "; recomputing embeddings\n";
        }
    }
}

void EmbeddingCache::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::string line;
    std::size_t line_no = 0;
    try {
        if (!std::getline(in, line)) {
            throw CacheCorrupt("embedding cache " + path.string() + " is empty");
        }
        ++line_no;
        const auto header = json::parse(line);
        if (header.at("format").get<std::string>() != kCacheFormat ||
            header.at("version").get<int>() != kCacheVersion) {
            throw CacheCorrupt("embedding cache " + path.string() + " has an unknown format");
        }
        if (header.at("embedder").get<std::string>() != embedder_id_ || header.at("dim").get<std::size_t>() != dim_) {
            warnings_.push_back("embedding cache " + path.string() + " belongs to another embedder; ignoring it");
            return;
        }
        const auto expected = header.at("entries").get<std::size_t>();
        while (std::getline(in, line)) {
            ++line_no;
            const auto j = json::parse(line);
            auto v = j.at("v").get<Vector>();
            if (v.size() != dim_ || !std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) {
                throw CacheCorrupt("embedding cache " + path.string() + ":" + std::to_string(line_no) +
                                   ": bad vector");
            }
            entries_[j.at("key").get<std::string>()] = std::move(v);
        }
        if (entries_.size() != expected) {
            throw CacheCorrupt("embedding cache " + path.string() + " is truncated");
        }
    } catch (const json::exception& e) {
        throw CacheCorrupt("embedding cache " + path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
}

const Vector* EmbeddingCache::find(std::string_view text) const {
    const auto key = sha256_hex(text);
    const std::lock_guard lock(mutex_);
    const auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
}

void EmbeddingCache::put(std::string_view text, Vector v) {
    if (v.size() != dim_) {
        throw DimensionMismatch(v.size(), dim_);
    }
    auto key = sha256_hex(text);
    const std::lock_guard lock(mutex_);
    entries_[std::move(key)] = std::move(v);
}

void EmbeddingCache::save() const {
    if (path_.empty()) {
        throw Error("embedding cache has no path");
    }
    save(path_);
}

void EmbeddingCache::save(const fs::path& path) const {
    const std::lock_guard lock(mutex_);
    std::vector<const std::pair<const std::string, Vector>*> sorted;
    for (const auto& e : entries_) {
        sorted.push_back(&e);
    }
    std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) { return a->first < b->first; });
    std::string out = json{{"format", kCacheFormat},
                           {"version", kCacheVersion},
                           {"embedder", embedder_id_},
                           {"dim", dim_},
                           {"entries", entries_.size()}}
                          .dump() +
                      "\n";
    for (const auto* e : sorted) {
        out += json{{"key", e->first}, {"v", e->second}}.dump() + "\n";
    }
    const auto tmp = fs::path(path.string() + ".tmp");
    write_file(tmp, out);
    fs::rename(tmp, path);
}

namespace {

Vector checked_embed(const TextEmbedder& embedder, const std::string& text, const RetryPolicy& retry) {
    return with_retries(retry, [&] {
        auto v = embedder.embed(text);
        if (v.size() != embedder.dim()) {
            throw EmbedderFailure("embedder returned length " + std::to_string(v.size()) + ", expected " +
                                  std::to_string(embedder.dim()));
        }
        if (!std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) {
            throw EmbedderFailure("embedder returned a non-finite component");
        }
        return v;
    });
}

// `labels[i]` names texts[i] in error messages.
std::vector<Vector> embed_all(const TextEmbedder& embedder, std::span<const std::string> texts,
                              std::span<const std::string> labels, EmbeddingCache* cache, const RetryPolicy& retry,
                              std::size_t max_in_flight, CacheStats* stats) {
    std::vector<Vector> out(texts.size());
    std::vector<std::size_t> misses; // first index of each distinct uncached text
    std::unordered_map<std::string_view, std::size_t> first_seen;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (cache != nullptr) {
            if (const auto* v = cache->find(texts[i])) {
                out[i] = *v;
                if (stats != nullptr) {
                    ++stats->hits;
                }
                continue;
            }
        }
        if (first_seen.emplace(texts[i], i).second) {
            misses.push_back(i);
            if (stats != nullptr) {
                ++stats->misses;
            }
        } else if (stats != nullptr) {
            ++stats->hits;
        }
    }

    const auto run_one = [&](std::size_t i) {
        try {
            return checked_embed(embedder, texts[i], retry);
        } catch (const Error& e) {
            throw EmbedderFailure("embedding failed for " + labels[i] + ": " + e.what());
        }
    };
    max_in_flight = std::max<std::size_t>(1, max_in_flight);
    for (std::size_t w = 0; w < misses.size(); w += max_in_flight) {
        const auto end = std::min(misses.size(), w + max_in_flight);
        if (end - w == 1) {
            out[misses[w]] = run_one(misses[w]);
            continue;
        }
        std::vector<std::future<Vector>> wave;
        for (std::size_t m = w; m < end; ++m) {
            wave.push_back(std::async(std::launch::async, run_one, misses[m]));
        }
        // Collect in candidate order; the first failure in that order wins.
        std::exception_ptr failure;
        for (std::size_t m = w; m < end; ++m) {
            try {
                out[misses[m]] = wave[m - w].get();
            } catch (...) {
                if (!failure) {
                    failure = std::current_exception();
                }
            }
        }
        if (failure) {
            std::rethrow_exception(failure);
        }
    }
    for (const auto i : misses) {
        if (cache != nullptr) {
            cache->put(texts[i], out[i]);
        }
    }
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (out[i].empty()) {
            out[i] = out[first_seen.at(texts[i])];
        }
    }
    return out;
}

} // namespace

std::vector<Vector> cache_embeddings(const TextEmbedder& embedder, std::span<const std::string> texts,
                                     EmbeddingCache& cache, const RetryPolicy& retry, std::size_t max_in_flight,
                                     CacheStats* stats) {
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        labels.push_back("text #" + std::to_string(i));
    }
    return embed_all(embedder, texts, labels, &cache, retry, max_in_flight, stats);
}

std::string pair_text(std::string_view disease, std::string_view drug) {
    auto d = normalize_space(disease);
    auto c = normalize_space(drug);
    if (d.empty() || c.empty()) {
        throw EmptyName();
    }
    return d + " [SEP] " + c;
}

void RerankConfig::validate() const {
    if (!(threshold >= -1.0 && threshold <= 1.0)) {
        throw Error("rerank threshold must lie in [-1, 1]");
    }
    if (max_chunks < 1) {
        throw Error("rerank max_chunks must be at least 1");
    }
}

double safe_cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionMismatch(a.size(), b.size());
    }
    const double na = dot(a, a);
    const double nb = dot(b, b);
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    // sqrt(na * nb) rather than sqrt(na) * sqrt(nb): identical vectors then
    // score exactly 1.
    return std::clamp(dot(a, b) / std::sqrt(na * nb), -1.0, 1.0);
}

BackgroundSet rerank(const TextEmbedder& embedder, std::string_view disease, std::string_view drug,
                     std::span<const Candidate> candidates, const RerankConfig& cfg, EmbeddingCache* cache) {
    cfg.validate();
    BackgroundSet out{normalize_space(disease), normalize_space(drug), {}, cfg.threshold};
    const auto query = pair_text(disease, drug);

    // Candidate order must not matter: score distinct refs in ref order.
    std::vector<const Candidate*> unique;
    std::set<ChunkRef> seen;
    for (const auto& c : candidates) {
        if (seen.insert(c.ref).second) {
            unique.push_back(&c);
        }
    }
    std::sort(unique.begin(), unique.end(), [](const auto* a, const auto* b) { return a->ref < b->ref; });

    std::vector<std::string> texts{query};
    std::vector<std::string> labels{"pair \"" + query + "\""};
    for (const auto* c : unique) {
        texts.push_back(c->text);
        labels.push_back("chunk " + std::to_string(c->ref) + (c->key.empty() ? "" : " (" + c->key + ")"));
    }
    const auto vectors = embed_all(embedder, texts, labels, cache, cfg.retry, cfg.max_in_flight, nullptr);

    for (std::size_t i = 0; i < unique.size(); ++i) {
        const double cos = safe_cosine(vectors[0], vectors[i + 1]);
        if (cos >= cfg.threshold) {
            const auto& c = *unique[i];
            out.chunks.push_back({c.ref, c.key, c.text, c.bm25, cos});
        }
    }
    std::stable_sort(out.chunks.begin(), out.chunks.end(),
                     [](const ScoredChunk& a, const ScoredChunk& b) { return a.cosine > b.cosine; });
    if (out.chunks.size() > cfg.max_chunks) {
        out.chunks.resize(cfg.max_chunks);
    }
    return out;
}

std::vector<Candidate> candidates_for(const InvertedIndex& idx, std::string_view disease, std::string_view drug,
                                      std::size_t k) {
    std::vector<Candidate> out;
    for (const auto& r : retrieve_topk(idx, pair_query(disease, drug), k)) {
        const auto& c = idx.chunk(r.ref);
        out.push_back({r.ref, c.key, c.text, r.score});
    }
    return out;
}

} // namespace drugrec
