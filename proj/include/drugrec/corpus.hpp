#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>
#include <vector>

#include "json.hpp"

namespace drugrec {

enum class Source : std::uint8_t { pmc, clinical_trials };

std::string_view to_string(Source source);
Source parse_source(std::string_view s);

struct Document {
    std::string id;
    Source source = Source::pmc;
    std::string title;
    std::string body; // paragraphs joined by '\n'

    friend bool operator==(const Document&, const Document&) = default;
};

enum class RejectReason : std::uint8_t { empty_title, empty_abstract };

std::string_view to_string(RejectReason reason);

struct Rejection {
    std::string id;
    Source source = Source::pmc;
    RejectReason reason = RejectReason::empty_title;
};

using ParseResult = std::variant<Document, Rejection>;

/// Open-access article XML: title from front matter article-title, body is
/// abstract paragraphs then body paragraphs (figures and tables skipped).
/// `fallback_id` is used when the XML carries no article-id. Throws
/// XmlMalformed.
ParseResult parse_pmc(std::string_view xml, std::string_view fallback_id = {});

/// Flat trial record: {"nct_id"|"id", "brief_title", "brief_summary",
/// "detailed_description"}. Throws JsonMalformed.
ParseResult parse_trial(std::string_view json, std::string_view fallback_id = {});

/// Case-insensitive whole-word matcher over a drug name list. Word
/// characters are ASCII alphanumerics and any non-ASCII byte.
class DrugMatcher {
public:
    /// Throws EmptyDrugList when no non-blank name is given.
    explicit DrugMatcher(std::span<const std::string> names);

    bool matches(std::string_view text) const;
    bool matches(const Document& doc) const { return matches(doc.title) || matches(doc.body); }

private:
    std::unordered_set<std::string> single_words_;
    std::vector<std::string> phrases_;
};

/// Counts for the two cleaning rules. input = empty_removed +
/// no_mention_removed + retained; unparseable files and duplicate ids are
/// tallied separately and are not part of `input`.
struct CleaningReport {
    std::size_t input = 0;
    std::size_t empty_removed = 0;
    std::size_t no_mention_removed = 0;
    std::size_t retained = 0;
    std::size_t malformed = 0;
    std::size_t duplicates = 0;

    bool consistent() const { return input == empty_removed + no_mention_removed + retained; }
    CleaningReport& operator+=(const CleaningReport& other);
    friend bool operator==(const CleaningReport&, const CleaningReport&) = default;
};

void to_json(nlohmann::json& j, const CleaningReport& r);

bool has_empty_field(const Document& doc);

struct FilterResult {
    std::vector<Document> retained;
    CleaningReport report;
};

/// Applies both cleaning rules: parse rejections and documents with an empty
/// title or body count as empty_removed, then documents whose title and body
/// mention no drug count as no_mention_removed. Throws EmptyDrugList.
FilterResult filter_by_drug_mention(std::span<const ParseResult> docs, std::span<const std::string> drug_names);

struct Chunk {
    std::string doc_id;
    std::size_t seq = 0;
    std::string text;
    std::size_t start = 0; // [start, end) into the document body
    std::size_t end = 0;

    std::string key() const { return doc_id + "#" + std::to_string(seq); }
    friend bool operator==(const Chunk&, const Chunk&) = default;
};

/// Greedy packing of paragraphs, falling back to sentences and then words for
/// oversized paragraphs, so that no chunk exceeds `max_chunk_chars` bytes.
std::vector<Chunk> chunk_document(const Document& doc, std::size_t max_chunk_chars = 1200);

// On-disk store: <dir>/pmc.jsonl, <dir>/clinical_trials.jsonl and
// <dir>/cleaning_report.json.
void to_json(nlohmann::json& j, const Document& d);
void from_json(const nlohmann::json& j, Document& d);

/// Streams every document of a store, pmc first, in file order.
void for_each_document(const std::filesystem::path& store_dir, const std::function<void(const Document&)>& fn);

struct IngestOptions {
    std::filesystem::path pmc_dir;    // *.xml / *.nxml; may be empty
    std::filesystem::path trials_dir; // *.json; may be empty
    std::vector<std::string> drug_names;
    std::filesystem::path out_dir;
};

/// Parses both source directories in file-name order, cleans, and writes the
/// store. Never holds more than one document in memory.
CleaningReport ingest_corpus(const IngestOptions& options);

} // namespace drugrec
