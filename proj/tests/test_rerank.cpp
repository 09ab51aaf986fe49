#include "doctest.h"

#include <atomic>
#include <cmath>
#include <map>
#include <thread>

#include "httplib.h"

#include "drugrec/error.hpp"
#include "drugrec/rerank.hpp"
#include "drugrec/rng.hpp"
#include "drugrec/util.hpp"
#include "test_support.hpp"

using namespace drugrec;
using drugrec::testing::TempDir;

namespace {

// Fixed text -> vector table; unknown texts map to `fallback`.
class StubEmbedder : public TextEmbedder {
public:
    StubEmbedder(std::map<std::string, Vector> table, Vector fallback, std::string name = "stub")
        : table_(std::move(table)), fallback_(std::move(fallback)), name_(std::move(name)) {}

    std::size_t dim() const override { return fallback_.size(); }
    std::string id() const override { return name_; }
    Vector embed(std::string_view text) const override {
        ++calls;
        const auto it = table_.find(std::string(text));
        return it == table_.end() ? fallback_ : it->second;
    }

    mutable std::atomic<int> calls{0};

private:
    std::map<std::string, Vector> table_;
    Vector fallback_;
    std::string name_;
};

// Fails the first `failures` calls.
class FlakyEmbedder : public TextEmbedder {
public:
    explicit FlakyEmbedder(int failures) : failures_(failures) {}
    std::size_t dim() const override { return 2; }
    std::string id() const override { return "flaky"; }
    Vector embed(std::string_view) const override {
        if (calls++ < failures_) {
            throw EmbedderFailure("provider hiccup");
        }
        return {1.0, 0.0};
    }
    mutable std::atomic<int> calls{0};

private:
    int failures_;
};

// Every text embeds to the same vector.
class IdentityEmbedder : public TextEmbedder {
public:
    std::size_t dim() const override { return 3; }
    std::string id() const override { return "identity"; }
    Vector embed(std::string_view) const override { return {0.3, -1.7, 2.9}; }
};

const std::string kPair = "asthma [SEP] albuterol";

Vector at_cosine(double c) { return {c, std::sqrt(1.0 - c * c)}; }

StubEmbedder three_way() {
    return StubEmbedder({{kPair, {1.0, 0.0}}, {"c0", at_cosine(0.3)}, {"c1", at_cosine(0.9)}, {"c2", at_cosine(0.6)}},
                        {0.0, 1.0});
}

std::vector<Candidate> three_candidates() {
    return {{0, "d#0", "c0", 3.0}, {1, "d#1", "c1", 2.0}, {2, "d#2", "c2", 1.0}};
}

RerankConfig cfg_with(double threshold, std::size_t max_chunks = 10) {
    RerankConfig cfg;
    cfg.threshold = threshold;
    cfg.max_chunks = max_chunks;
    cfg.retry.initial_backoff = std::chrono::milliseconds(0);
    return cfg;
}

std::vector<ChunkRef> refs(const BackgroundSet& s) {
    std::vector<ChunkRef> out;
    for (const auto& c : s.chunks) {
        out.push_back(c.ref);
    }
    return out;
}

std::vector<Candidate> random_candidates(Rng& rng, std::size_t n) {
    const std::vector<std::string> words{"asthma", "albuterol", "inhaler", "dose", "children", "trial",
                                         "wheeze", "placebo",   "airway",  "mg",   "the",      "of"};
    std::vector<Candidate> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::string text;
        const auto len = 1 + rng.below(12);
        for (std::size_t j = 0; j < len; ++j) {
            text += (j ? " " : "") + words[rng.below(words.size())];
        }
        out.push_back({static_cast<ChunkRef>(i), "c#" + std::to_string(i), text, rng.uniform(0.0, 10.0)});
    }
    return out;
}

} // namespace

TEST_CASE("pair text") {
    CHECK(pair_text("asthma", "albuterol") == "asthma [SEP] albuterol");
    CHECK(pair_text("  asthma ", "albuterol") == "asthma [SEP] albuterol");
    CHECK(pair_text("type 2\tdiabetes", "metformin") == "type 2 diabetes [SEP] metformin");
    CHECK_THROWS_AS(pair_text("", "x"), EmptyName);
    CHECK_THROWS_AS(pair_text("x", "   "), EmptyName);
}

TEST_CASE("stub cosines filter and order") {
    const auto stub = three_way();
    const auto set = rerank(stub, "asthma", "albuterol", three_candidates(), cfg_with(0.5));
    REQUIRE(set.chunks.size() == 2);
    CHECK(set.chunks[0].ref == 1);
    CHECK(set.chunks[0].cosine == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(set.chunks[1].ref == 2);
    CHECK(set.chunks[1].cosine == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(set.chunks[0].bm25 == 2.0);
    CHECK(set.threshold_used == 0.5);
    CHECK(set.disease == "asthma");

    CHECK(refs(rerank(stub, "asthma", "albuterol", three_candidates(), cfg_with(-1.0))) ==
          std::vector<ChunkRef>{1, 2, 0});
    CHECK(refs(rerank(stub, "asthma", "albuterol", three_candidates(), cfg_with(-1.0, 2))) ==
          std::vector<ChunkRef>{1, 2});
    CHECK(rerank(stub, "asthma", "albuterol", std::vector<Candidate>{}, cfg_with(0.5)).chunks.empty());
}

TEST_CASE("config validation") {
    const auto stub = three_way();
    CHECK_THROWS_AS(rerank(stub, "a", "b", three_candidates(), cfg_with(1.5)), Error);
    CHECK_THROWS_AS(rerank(stub, "a", "b", three_candidates(), cfg_with(0.5, 0)), Error);
    CHECK_THROWS_AS(rerank(stub, "", "b", three_candidates(), cfg_with(0.5)), EmptyName);
}

TEST_CASE("identical texts pass every threshold up to 1") {
    const IdentityEmbedder id;
    const auto cands = three_candidates();
    for (const double t : {-1.0, 0.0, 0.99, 1.0}) {
        CHECK(rerank(id, "asthma", "albuterol", cands, cfg_with(t)).chunks.size() == 3);
    }
    // Same holds for the hashing embedder when chunk text equals the pair text.
    const HashEmbedder hash(32, 9);
    const std::vector<Candidate> same{{0, "k", kPair, 1.0}, {1, "k2", "ASTHMA [sep]  Albuterol", 1.0}};
    CHECK(rerank(hash, "asthma", "albuterol", same, cfg_with(1.0)).chunks.size() == 2);
}

TEST_CASE("reranking ignores candidate order and duplicates") {
    const HashEmbedder hash(16, 1);
    Rng rng(31);
    for (int round = 0; round < 30; ++round) {
        auto cands = random_candidates(rng, 1 + rng.below(40));
        const auto base = rerank(hash, "asthma", "albuterol", cands, cfg_with(0.1, 5));
        rng.shuffle(std::span(cands));
        cands.push_back(cands.front());
        const auto shuffled = rerank(hash, "asthma", "albuterol", cands, cfg_with(0.1, 5));
        CHECK(shuffled.chunks == base.chunks);
        for (std::size_t i = 1; i < base.chunks.size(); ++i) {
            const auto& a = base.chunks[i - 1];
            const auto& b = base.chunks[i];
            CHECK((a.cosine > b.cosine || (a.cosine == b.cosine && a.ref < b.ref)));
        }
    }
}

TEST_CASE("raising the threshold keeps a subset") {
    const HashEmbedder hash(16, 2);
    const BowEmbedder bow(256);
    Rng rng(44);
    for (const TextEmbedder* e : {static_cast<const TextEmbedder*>(&hash), static_cast<const TextEmbedder*>(&bow)}) {
        for (int round = 0; round < 10; ++round) {
            const auto cands = random_candidates(rng, 40);
            std::vector<ChunkRef> prev;
            for (int i = 0; i <= 20; ++i) {
                const double t = -1.0 + 0.1 * i;
                auto cur = refs(rerank(*e, "asthma", "albuterol", cands, cfg_with(std::min(t, 1.0), 8)));
                if (i > 0) {
                    std::sort(cur.begin(), cur.end());
                    CHECK(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
                }
                std::sort(cur.begin(), cur.end());
                prev = cur;
            }
        }
    }
}

TEST_CASE("embedders are deterministic with the declared length") {
    const HashEmbedder hash(24, 5);
    const BowEmbedder bow(128);
    for (const auto& text : {"asthma [SEP] albuterol", "", "a", "COVID-19 therapy trial"}) {
        const auto h = hash.embed(text);
        CHECK(h.size() == 24);
        CHECK(h == hash.embed(text));
        CHECK(std::all_of(h.begin(), h.end(), [](double x) { return std::isfinite(x); }));
        CHECK(bow.embed(text).size() == 128);
    }
    CHECK(hash.embed("") != Vector(24, 0.0));
    CHECK(bow.embed("") == Vector(128, 0.0));
    CHECK(HashEmbedder(24, 6).embed("asthma") != hash.embed("asthma"));
    CHECK(hash.id() != HashEmbedder(24, 6).id());
    // Word overlap increases similarity for the bag-of-words embedder.
    CHECK(safe_cosine(bow.embed("asthma inhaler"), bow.embed("asthma")) >
          safe_cosine(bow.embed("asthma inhaler"), bow.embed("kidney")));
    CHECK(safe_cosine(bow.embed(""), bow.embed("x y")) == 0.0);
    CHECK_THROWS_AS(make_embedder("nope", 8, 0), Error);
}

TEST_CASE("retries then surfaces embedding failures") {
    const FlakyEmbedder twice(2);
    const std::vector<Candidate> one{{7, "d#7", "text", 1.0}};
    auto cfg = cfg_with(-1.0);
    cfg.max_in_flight = 1;
    // Pair text fails twice then succeeds on the last allowed attempt.
    CHECK(rerank(twice, "a", "b", one, cfg).chunks.size() == 1);
    CHECK(twice.calls == 4);

    const FlakyEmbedder broken(100);
    try {
        rerank(broken, "a", "b", std::vector<Candidate>{}, cfg);
        FAIL("expected EmbedderFailure");
    } catch (const EmbedderFailure& e) {
        CHECK(std::string(e.what()).find("pair") != std::string::npos);
    }
    CHECK(broken.calls == 3);

    // Failure on a chunk names the chunk.
    class ChunkFails : public TextEmbedder {
    public:
        std::size_t dim() const override { return 2; }
        std::string id() const override { return "cf"; }
        Vector embed(std::string_view t) const override {
            if (t == "bad") {
                throw EmbedderFailure("nope");
            }
            return {1.0, 1.0};
        }
    } chunk_fails;
    const std::vector<Candidate> mixed{{3, "d#3", "good", 1.0}, {9, "d#9", "bad", 1.0}};
    try {
        rerank(chunk_fails, "a", "b", mixed, cfg);
        FAIL("expected EmbedderFailure");
    } catch (const EmbedderFailure& e) {
        CHECK(std::string(e.what()).find("chunk 9") != std::string::npos);
    }
}

TEST_CASE("embedding cache") {
    TempDir dir;
    const auto path = dir / "cache.jsonl";
    const auto stub = three_way();
    const std::vector<std::string> texts{"c0", "c1", "c0", "c2"};
    {
        EmbeddingCache cache(stub.id(), stub.dim(), path);
        CacheStats stats;
        const auto first = cache_embeddings(stub, texts, cache, {}, 1, &stats);
        CHECK(stub.calls == 3);
        CHECK(stats.misses == 3);
        CHECK(stats.hits == 1);
        CHECK(first[0] == first[2]);
        const auto second = cache_embeddings(stub, texts, cache);
        CHECK(stub.calls == 3);
        CHECK(second == first);
        cache.save();
    }
    {
        EmbeddingCache reloaded(stub.id(), stub.dim(), path);
        CHECK(reloaded.size() == 3);
        CHECK(reloaded.warnings().empty());
        cache_embeddings(stub, texts, reloaded);
        CHECK(stub.calls == 3);
    }
    {
        // Another embedder identity ignores the file and recomputes.
        const StubEmbedder other({}, {0.0, 1.0}, "other");
        EmbeddingCache foreign(other.id(), other.dim(), path);
        CHECK(foreign.size() == 0);
        cache_embeddings(other, texts, foreign);
        CHECK(other.calls == 3);
    }
    {
        auto bytes = read_file(path);
        write_file(path, bytes.substr(0, bytes.size() - 20));
        EmbeddingCache corrupt(stub.id(), stub.dim(), path);
        CHECK(corrupt.size() == 0);
        CHECK(corrupt.warnings().size() == 1);
        const auto again = cache_embeddings(stub, texts, corrupt);
        CHECK(stub.calls == 6);
        CHECK(again[1] == at_cosine(0.9));
    }
}

TEST_CASE("rerank through a cache with concurrent calls") {
    const HashEmbedder hash(16, 3);
    Rng rng(6);
    const auto cands = random_candidates(rng, 30);
    EmbeddingCache cache(hash.id(), hash.dim());
    auto cfg = cfg_with(0.0, 8);
    cfg.max_in_flight = 4;
    const auto a = rerank(hash, "asthma", "albuterol", cands, cfg, &cache);
    cfg.max_in_flight = 1;
    const auto b = rerank(hash, "asthma", "albuterol", cands, cfg, nullptr);
    CHECK(a.chunks == b.chunks);
    CHECK(cache.size() >= 2);
}

TEST_CASE("remote embedder wire format") {
    httplib::Server server;
    std::atomic<int> requests{0};
    std::string seen_auth;
    std::string seen_model;
    server.Post("/v1/embed", [&](const httplib::Request& req, httplib::Response& res) {
        ++requests;
        seen_auth = req.get_header_value("Authorization");
        const auto j = nlohmann::json::parse(req.body);
        seen_model = j.at("model").get<std::string>();
        nlohmann::json vectors = nlohmann::json::array();
        for (const auto& t : j.at("texts")) {
            const auto s = t.get<std::string>();
            if (s == "fail") {
                res.status = 500;
                return;
            }
            vectors.push_back({static_cast<double>(s.size()), 1.0, 0.5});
        }
        res.set_content(nlohmann::json{{"vectors", vectors}}.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    RemoteEmbedderConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/embed";
    cfg.api_key = "secret";
    cfg.model = "m1";
    const RemoteEmbedder remote(cfg);
    CHECK(remote.id() == "remote:m1");
    const std::vector<std::string> texts{"ab", "abcd"};
    const auto vs = remote.embed_batch(texts);
    REQUIRE(vs.size() == 2);
    CHECK(vs[1] == Vector{4.0, 1.0, 0.5});
    CHECK(remote.dim() == 3);
    CHECK(seen_auth == "Bearer secret");
    CHECK(seen_model == "m1");

    const auto set = rerank(remote, "ab", "cd", std::vector<Candidate>{{0, "k", "xy", 1.0}}, cfg_with(-1.0));
    CHECK(set.chunks.size() == 1);

    const int before = requests;
    auto failing = cfg_with(-1.0);
    CHECK_THROWS_AS(rerank(remote, "ab", "cd", std::vector<Candidate>{{0, "k", "fail", 1.0}}, failing),
                    EmbedderFailure);
    CHECK(requests - before == 1 + 3); // pair once, failing chunk three times

    server.stop();
    worker.join();

    RemoteEmbedderConfig dead = cfg;
    dead.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/embed";
    dead.timeout = std::chrono::milliseconds(500);
    CHECK_THROWS_AS(RemoteEmbedder(dead).embed("x"), EmbedderFailure);
}
