#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "drugrec/rerank.hpp"
#include "drugrec/sampler.hpp"

namespace drugrec {

/// Sampler output with entity names resolved; one line of sets.jsonl.
struct NamedSet {
    std::string disease_id; // graph entity names
    std::string relevant_id;
    std::string irrelevant_id;
    std::string disease; // display names
    std::string relevant;
    std::string irrelevant;
    double rel_score = 0.0;
    double sim_score = 0.0;
    std::size_t candidate_pool_size = 0;
    EffectLabel effect_label = EffectLabel::negative;

    friend bool operator==(const NamedSet&, const NamedSet&) = default;
};

NamedSet name_set(const KnowledgeGraph& g, const DiseaseDrugSet& s);

void to_json(nlohmann::json& j, const NamedSet& s);
void from_json(const nlohmann::json& j, NamedSet& s);

struct BackgroundChunk {
    std::string source; // chunk key, "<doc id>#<seq>"
    std::string text;

    friend bool operator==(const BackgroundChunk&, const BackgroundChunk&) = default;
};

void to_json(nlohmann::json& j, const BackgroundChunk& c);
void from_json(const nlohmann::json& j, BackgroundChunk& c);

/// (disease display name, drug display name) -> chunks.
using BackgroundMap = std::map<std::pair<std::string, std::string>, std::vector<BackgroundChunk>>;

/// One line of backgrounds.jsonl.
nlohmann::json background_to_json(const BackgroundSet& set);
/// Throws UnreadableFile / MissingFile.
BackgroundMap load_backgrounds(const std::filesystem::path& path);

/// Answer grammar shared with the teacher reply parser.
extern const std::string_view kFormatInstructions;

/// Template with the six placeholders {disease}, {candidate_1},
/// {candidate_2}, {background_1}, {background_2}, {format_instructions}, each
/// exactly once. "{{" and "}}" stand for literal braces.
class PromptTemplate {
public:
    /// Throws MalformedTemplate (missing/repeated placeholder, stray brace)
    /// or UnboundPlaceholder (unknown placeholder name).
    PromptTemplate(std::string text, std::string version);

    /// Default template shipped with the tool.
    static PromptTemplate default_template();
    /// A first line "# version: <tag>" sets the version; otherwise the
    /// version is "sha256:<first 12 hex digits of the text>".
    static PromptTemplate load(const std::filesystem::path& path);

    const std::string& text() const { return text_; }
    const std::string& version() const { return version_; }

    struct Segment {
        bool placeholder;
        std::string value; // literal text or placeholder name
    };
    const std::vector<Segment>& segments() const { return segments_; }

private:
    std::string text_;
    std::string version_;
    std::vector<Segment> segments_;
};

struct PromptFields {
    std::string disease;
    std::string candidate_1;
    std::string candidate_2;
    std::vector<BackgroundChunk> background_1;
    std::vector<BackgroundChunk> background_2;
};

/// Block for one candidate's background: "[source] text" per chunk, one per
/// line, or a fixed marker when empty.
std::string format_background(std::span<const BackgroundChunk> chunks);

std::string render_prompt(const PromptTemplate& tpl, const PromptFields& fields);

struct TrainingRecord {
    std::string id;
    std::string disease;
    std::string candidate_1;
    std::string candidate_2;
    int label = 1; // which candidate is the sampler's relevant drug
    EffectLabel effect_label = EffectLabel::negative;
    std::vector<BackgroundChunk> background_1;
    std::vector<BackgroundChunk> background_2;
    std::string prompt;
    std::uint64_t shuffle_seed = 0;
    std::string template_version;

    const std::string& relevant() const { return label == 1 ? candidate_1 : candidate_2; }
    friend bool operator==(const TrainingRecord&, const TrainingRecord&) = default;
};

constexpr int kDatasetVersion = 1;

void to_json(nlohmann::json& j, const TrainingRecord& r);
void from_json(const nlohmann::json& j, TrainingRecord& r);

struct DatasetManifest {
    std::size_t records = 0;
    std::size_t label_1 = 0;
    std::size_t label_2 = 0;
    std::uint64_t shuffle_seed = 0;
    std::string template_version;
    std::string config_digest;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);

struct Dataset {
    std::vector<TrainingRecord> records;
    DatasetManifest manifest;
};

/// One record per set, in input order. Presentation order is a seeded
/// shuffle of an alternating swap pattern, so label 1 and label 2 differ in
/// count by at most one. Throws MissingBackgroundKey.
Dataset build_dataset(std::span<const NamedSet> sets, const BackgroundMap& backgrounds, const PromptTemplate& tpl,
                      std::uint64_t shuffle_seed, std::string config_digest = {});

/// Writes <path> (JSONL) and returns its bytes' SHA-256.
std::string write_dataset(const std::filesystem::path& path, std::span<const TrainingRecord> records);
/// Throws UnreadableFile on I/O or parse failure.
std::vector<TrainingRecord> read_dataset(const std::filesystem::path& path);

struct Violation {
    std::size_t line;
    std::string message;
};

struct ValidationReport {
    std::size_t records = 0;
    std::vector<Violation> violations;

    bool ok() const { return violations.empty(); }
};

/// Checks of a single record (everything except cross-record uniqueness).
std::vector<std::string> record_violations(const TrainingRecord& r);

/// Re-checks every record invariant; JSON errors are reported as violations
/// on their line. Throws UnreadableFile when the file cannot be opened.
ValidationReport validate_dataset(const std::filesystem::path& path);

} // namespace drugrec
