#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drugrec/distill.hpp"
#include "drugrec/embed.hpp"
#include "drugrec/rerank.hpp"
#include "drugrec/sampler.hpp"
#include "drugrec/search.hpp"
#include "json.hpp"

namespace drugrec {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr int kConfigVersion = 1;

/// Every setting of a pipeline run. Relative input paths are resolved
/// against the directory of the config file.
struct PipelineConfig {
    int version = kConfigVersion;
    std::uint64_t seed = 42;

    struct Paths {
        std::filesystem::path kg;       // TSV triples
        std::filesystem::path pmc;      // directory of article XML; may be empty
        std::filesystem::path trials;   // directory of trial JSON; may be empty
        std::filesystem::path drugs;    // optional; default: drugs of the sampled sets
        std::filesystem::path tpl;      // optional prompt template
        std::filesystem::path work_dir; // artifacts
    } paths;
    std::filesystem::path base_dir; // directory of the config file

    bool kg_strict = false;
    EmbedTrainConfig embed;
    SamplerConfig sampler;
    std::vector<std::string> diseases; // empty: every disease in the graph

    Bm25Params bm25;
    std::size_t max_chunk_chars = 1200;
    std::size_t index_threads = 1;
    std::size_t retrieve_k = 80;

    std::string embedder = "hash"; // hash | bow | remote
    std::size_t embedder_dim = 64;
    std::string embedder_model = "text-embedding";
    RerankConfig rerank;

    std::string teacher = "reference"; // reference | stub | remote
    std::string stub_reply = "ANSWER: 1\nREASON: stub teacher reply";
    std::string teacher_model = "teacher";
    int teacher_max_tokens = 256;
    DistillConfig distill;

    /// SHA-256 over the canonical JSON of every setting except work_dir.
    std::string digest() const;
    nlohmann::json to_json(bool with_work_dir = true) const;

    /// Throws ConfigInvalid naming the first unknown key or bad value.
    static PipelineConfig from_json(const nlohmann::json& j, const std::string& origin = "<config>");
    /// Reads and validates the file, resolving relative paths. Throws
    /// ConfigInvalid (including for an unreadable file).
    static PipelineConfig load(const std::filesystem::path& path);
};

/// Stage names in dependency order.
const std::vector<std::string>& stage_names();
bool is_stage(std::string_view name);

/// Fixed artifact names inside the work directory.
namespace artifact {
inline constexpr std::string_view graph = "graph.kg";
inline constexpr std::string_view kg_report = "kg_report.json";
inline constexpr std::string_view embeddings = "embeddings.emb";
inline constexpr std::string_view embed_losses = "embed_losses.csv";
inline constexpr std::string_view sets = "sets.jsonl";
inline constexpr std::string_view sample_skipped = "sample_skipped.jsonl";
inline constexpr std::string_view drugs = "drugs.txt";
inline constexpr std::string_view store = "store";
inline constexpr std::string_view index = "index";
inline constexpr std::string_view candidates = "candidates.jsonl";
inline constexpr std::string_view backgrounds = "backgrounds.jsonl";
inline constexpr std::string_view embed_cache = "embed_cache.jsonl";
inline constexpr std::string_view dataset = "dataset.jsonl";
inline constexpr std::string_view dataset_manifest = "dataset_manifest.json";
inline constexpr std::string_view teacher_cache = "teacher_cache.jsonl";
inline constexpr std::string_view labeled = "labeled.jsonl";
inline constexpr std::string_view quarantine = "quarantine.jsonl";
inline constexpr std::string_view student = "student.bin";
inline constexpr std::string_view losses = "losses.csv";
inline constexpr std::string_view student_out = "student_out.jsonl";
inline constexpr std::string_view report = "report.json";
inline constexpr std::string_view manifest = "manifest.json";
} // namespace artifact

struct StageRecord {
    std::string stage;
    std::map<std::string, std::string> inputs;  // path -> sha256
    std::map<std::string, std::string> outputs; // path relative to work dir -> sha256
    double seconds = 0.0;
};

struct RunManifest {
    std::string tool_version{kToolVersion};
    std::string config_digest;
    std::uint64_t seed = 0;
    std::vector<StageRecord> stages; // dependency order, one per stage run

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
    static RunManifest load(const std::filesystem::path& path);
};

/// Runs one stage (or "all") and merges the stage records into
/// <work_dir>/manifest.json. Throws ConfigInvalid, MissingInput, or
/// StageFailed wrapping the stage's own error.
RunManifest run_stage(const PipelineConfig& cfg, std::string_view stage);

struct VerifyResult {
    std::vector<std::string> mismatched; // paths whose digest changed
    bool ok() const { return mismatched.empty(); }
};

/// Recomputes every recorded digest. Output paths are taken relative to the
/// manifest's directory. Throws MissingArtifact.
VerifyResult verify_run(const std::filesystem::path& manifest_path);

/// SHA-256 of a file, or of a directory as "<relative path>\0<file sha>\n"
/// lines over its regular files in sorted order.
std::string digest_path(const std::filesystem::path& path);

} // namespace drugrec
