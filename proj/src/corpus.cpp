#include "drugrec/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "drugrec/error.hpp"
#include "drugrec/util.hpp"

namespace drugrec {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using nlohmann::json;

std::string_view to_string(Source source) {
    return source == Source::pmc ? "pmc" : "clinical_trials";
}

Source parse_source(std::string_view s) {
    if (s == "pmc") {
        return Source::pmc;
    }
    if (s == "clinical_trials") {
        return Source::clinical_trials;
    }
    throw Error("unknown document source " + std::string(s));
}

std::string_view to_string(RejectReason reason) {
    return reason == RejectReason::empty_title ? "empty_title" : "empty_abstract";
}

namespace {

bool is_markup_key(const std::string& key) {
    return key == "<xmlattr>" || key == "<xmlcomment>";
}

bool is_skipped_element(const std::string& key) {
    return key == "fig" || key == "table-wrap" || key == "caption" || key == "fig-group" ||
           key == "table-wrap-group" || key == "supplementary-material";
}

void append_text(const pt::ptree& node, std::string& out) {
    for (const auto& [key, child] : node) {
        if (key == "<xmltext>") {
            out += child.data();
        } else if (!is_markup_key(key) && !is_skipped_element(key)) {
            append_text(child, out);
        }
    }
}

std::string text_of(const pt::ptree& node) {
    std::string raw;
    append_text(node, raw);
    return normalize_space(raw);
}

// Paragraph texts below `node`, document order. Does not descend into a <p>.
void collect_paragraphs(const pt::ptree& node, std::vector<std::string>& out) {
    for (const auto& [key, child] : node) {
        if (key == "p") {
            auto text = text_of(child);
            if (!text.empty()) {
                out.push_back(std::move(text));
            }
        } else if (!is_markup_key(key) && key != "<xmltext>" && !is_skipped_element(key)) {
            collect_paragraphs(child, out);
        }
    }
}

const pt::ptree* find_element(const pt::ptree& node, const std::string& name) {
    for (const auto& [key, child] : node) {
        if (key == name) {
            return &child;
        }
    }
    for (const auto& [key, child] : node) {
        if (!is_markup_key(key) && key != "<xmltext>") {
            if (const auto* found = find_element(child, name)) {
                return found;
            }
        }
    }
    return nullptr;
}

const pt::ptree* child_path(const pt::ptree& node, std::initializer_list<const char*> path) {
    const pt::ptree* cur = &node;
    for (const char* step : path) {
        const auto it = cur->find(step);
        if (it == cur->not_found()) {
            return nullptr;
        }
        cur = &it->second;
    }
    return cur;
}

std::string join_lines(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) {
        if (p.empty()) {
            continue;
        }
        if (!out.empty()) {
            out += '\n';
        }
        out += p;
    }
    return out;
}

} // namespace

ParseResult parse_pmc(std::string_view xml, std::string_view fallback_id) {
    pt::ptree tree;
    try {
        std::istringstream in{std::string(xml)};
        pt::read_xml(in, tree, pt::xml_parser::no_concat_text);
    } catch (const pt::xml_parser_error& e) {
        throw XmlMalformed(std::string("malformed article XML: ") + e.what());
    }
    const auto* article = find_element(tree, "article");
    if (article == nullptr) {
        throw XmlMalformed("no <article> element");
    }
    const auto* meta = child_path(*article, {"front", "article-meta"});

    std::string id;
    if (meta != nullptr) {
        for (const auto& [key, child] : *meta) {
            if (key != "article-id") {
                continue;
            }
            const auto type = child.get<std::string>("<xmlattr>.pub-id-type", "");
            auto value = text_of(child);
            if (type == "pmc" && !value.empty()) {
                id = std::move(value);
                break;
            }
            if (id.empty()) {
                id = std::move(value);
            }
        }
    }
    if (id.empty()) {
        id = std::string(fallback_id);
    }

    std::string title;
    if (meta != nullptr) {
        if (const auto* t = child_path(*meta, {"title-group", "article-title"})) {
            title = text_of(*t);
        }
    }
    if (title.empty()) {
        return Rejection{id, Source::pmc, RejectReason::empty_title};
    }

    std::vector<std::string> paragraphs;
    if (meta != nullptr) {
        for (const auto& [key, child] : *meta) {
            if (key == "abstract") {
                collect_paragraphs(child, paragraphs);
            }
        }
    }
    if (paragraphs.empty()) {
        return Rejection{id, Source::pmc, RejectReason::empty_abstract};
    }
    if (const auto* body = child_path(*article, {"body"})) {
        collect_paragraphs(*body, paragraphs);
    }
    return Document{id, Source::pmc, title, join_lines(paragraphs)};
}

ParseResult parse_trial(std::string_view text, std::string_view fallback_id) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw JsonMalformed(std::string("malformed trial JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw JsonMalformed("trial record is not a JSON object");
    }
    const auto field = [&](const char* key) -> std::string {
        const auto it = j.find(key);
        if (it == j.end() || it->is_null()) {
            return {};
        }
        if (!it->is_string()) {
            throw JsonMalformed(std::string("trial field ") + key + " is not a string");
        }
        return it->get<std::string>();
    };
    std::string id;
    for (const char* key : {"nct_id", "id", "nctId"}) {
        id = normalize_space(field(key));
        if (!id.empty()) {
            break;
        }
    }
    if (id.empty()) {
        id = std::string(fallback_id);
    }
    const auto title = normalize_space(field("brief_title"));
    if (title.empty()) {
        return Rejection{id, Source::clinical_trials, RejectReason::empty_title};
    }
    auto body = join_lines({normalize_space(field("brief_summary")), normalize_space(field("detailed_description"))});
    if (body.empty()) {
        return Rejection{id, Source::clinical_trials, RejectReason::empty_abstract};
    }
    return Document{id, Source::clinical_trials, title, std::move(body)};
}

DrugMatcher::DrugMatcher(std::span<const std::string> names) {
    for (const auto& raw : names) {
        auto name = to_lower_ascii(normalize_space(raw));
        if (name.empty()) {
            continue;
        }
        const bool single = std::all_of(name.begin(), name.end(),
                                        [](char c) { return is_word_byte(static_cast<unsigned char>(c)); });
        if (single) {
            single_words_.insert(std::move(name));
        } else {
            phrases_.push_back(std::move(name));
        }
    }
    if (single_words_.empty() && phrases_.empty()) {
        throw EmptyDrugList();
    }
    std::sort(phrases_.begin(), phrases_.end());
    phrases_.erase(std::unique(phrases_.begin(), phrases_.end()), phrases_.end());
}

bool DrugMatcher::matches(std::string_view text) const {
    const auto lower = to_lower_ascii(text);
    if (!single_words_.empty()) {
        std::size_t i = 0;
        while (i < lower.size()) {
            while (i < lower.size() && !is_word_byte(static_cast<unsigned char>(lower[i]))) {
                ++i;
            }
            const auto start = i;
            while (i < lower.size() && is_word_byte(static_cast<unsigned char>(lower[i]))) {
                ++i;
            }
            if (i > start && single_words_.contains(lower.substr(start, i - start))) {
                return true;
            }
        }
    }
    if (phrases_.empty()) {
        return false;
    }
    const auto flat = normalize_space(lower);
    for (const auto& phrase : phrases_) {
        for (auto pos = flat.find(phrase); pos != std::string::npos; pos = flat.find(phrase, pos + 1)) {
            const auto end = pos + phrase.size();
            const bool left_ok = pos == 0 || !is_word_byte(static_cast<unsigned char>(flat[pos - 1])) ||
                                 !is_word_byte(static_cast<unsigned char>(phrase.front()));
            const bool right_ok = end == flat.size() || !is_word_byte(static_cast<unsigned char>(flat[end])) ||
                                  !is_word_byte(static_cast<unsigned char>(phrase.back()));
            if (left_ok && right_ok) {
                return true;
            }
        }
    }
    return false;
}

CleaningReport& CleaningReport::operator+=(const CleaningReport& other) {
    input += other.input;
    empty_removed += other.empty_removed;
    no_mention_removed += other.no_mention_removed;
    retained += other.retained;
    malformed += other.malformed;
    duplicates += other.duplicates;
    return *this;
}

void to_json(json& j, const CleaningReport& r) {
    j = json{{"input", r.input},
             {"empty_removed", r.empty_removed},
             {"no_mention_removed", r.no_mention_removed},
             {"retained", r.retained},
             {"malformed", r.malformed},
             {"duplicates", r.duplicates}};
}

bool has_empty_field(const Document& doc) {
    return trim(doc.id).empty() || trim(doc.title).empty() || trim(doc.body).empty();
}

FilterResult filter_by_drug_mention(std::span<const ParseResult> docs, std::span<const std::string> drug_names) {
    const DrugMatcher matcher(drug_names);
    FilterResult out;
    for (const auto& r : docs) {
        ++out.report.input;
        const auto* doc = std::get_if<Document>(&r);
        if (doc == nullptr || has_empty_field(*doc)) {
            ++out.report.empty_removed;
        } else if (!matcher.matches(*doc)) {
            ++out.report.no_mention_removed;
        } else {
            ++out.report.retained;
            out.retained.push_back(*doc);
        }
    }
    return out;
}

namespace {

using Span = std::pair<std::size_t, std::size_t>;

bool is_space(char c) {
    return c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v';
}

// Non-whitespace runs of [s, e) split after sentence punctuation (or every
// whitespace run when `words` is set).
std::vector<Span> split_runs(std::string_view body, std::size_t s, std::size_t e, bool words) {
    std::vector<Span> out;
    std::size_t i = s;
    while (i < e) {
        while (i < e && is_space(body[i])) {
            ++i;
        }
        if (i == e) {
            break;
        }
        const auto start = i;
        std::size_t end = e;
        for (; i < e; ++i) {
            if (!is_space(body[i])) {
                continue;
            }
            const char prev = body[i - 1];
            if (words || prev == '.' || prev == '!' || prev == '?') {
                end = i;
                break;
            }
        }
        // Trailing whitespace at the very end is not part of the run.
        while (end > start && is_space(body[end - 1])) {
            --end;
        }
        out.emplace_back(start, end);
    }
    return out;
}

// Byte cut that never splits a UTF-8 sequence unless a single code point is
// larger than the limit.
std::vector<Span> hard_cut(std::string_view body, std::size_t s, std::size_t e, std::size_t max) {
    std::vector<Span> out;
    while (s < e) {
        auto cut = std::min(e, s + max);
        if (cut < e) {
            auto back = cut;
            while (back > s && (static_cast<unsigned char>(body[back]) & 0xC0) == 0x80) {
                --back;
            }
            if (back > s) {
                cut = back;
            }
        }
        out.emplace_back(s, cut);
        s = cut;
    }
    return out;
}

void units_of(std::string_view body, Span span, std::size_t max, int level, std::vector<Span>& out) {
    if (span.second - span.first <= max) {
        out.push_back(span);
        return;
    }
    if (level == 0) {
        for (const auto& sentence : split_runs(body, span.first, span.second, false)) {
            units_of(body, sentence, max, 1, out);
        }
    } else if (level == 1) {
        for (const auto& word : split_runs(body, span.first, span.second, true)) {
            units_of(body, word, max, 2, out);
        }
    } else {
        for (const auto& piece : hard_cut(body, span.first, span.second, max)) {
            out.push_back(piece);
        }
    }
}

} // namespace

std::vector<Chunk> chunk_document(const Document& doc, std::size_t max_chunk_chars) {
    if (max_chunk_chars == 0) {
        throw Error("max_chunk_chars must be positive");
    }
    const std::string_view body = doc.body;
    std::vector<Span> units;
    std::size_t p = 0;
    while (p < body.size()) {
        auto nl = body.find('\n', p);
        if (nl == std::string_view::npos) {
            nl = body.size();
        }
        auto s = p;
        auto e = nl;
        while (s < e && is_space(body[s])) {
            ++s;
        }
        while (e > s && is_space(body[e - 1])) {
            --e;
        }
        if (e > s) {
            units_of(body, {s, e}, max_chunk_chars, 0, units);
        }
        p = nl + 1;
    }

    std::vector<Chunk> chunks;
    std::size_t i = 0;
    while (i < units.size()) {
        const auto start = units[i].first;
        auto end = units[i].second;
        std::size_t j = i + 1;
        while (j < units.size() && units[j].second - start <= max_chunk_chars) {
            end = units[j].second;
            ++j;
        }
        chunks.push_back({doc.id, chunks.size(), std::string(body.substr(start, end - start)), start, end});
        i = j;
    }
    return chunks;
}

void to_json(json& j, const Document& d) {
    j = json{{"id", d.id}, {"source", to_string(d.source)}, {"title", d.title}, {"body", d.body}};
}

void from_json(const json& j, Document& d) {
    d.id = j.at("id").get<std::string>();
    d.source = parse_source(j.at("source").get<std::string>());
    d.title = j.at("title").get<std::string>();
    d.body = j.at("body").get<std::string>();
}

namespace {

constexpr const char* kStoreFiles[] = {"pmc.jsonl", "clinical_trials.jsonl"};

std::vector<fs::path> list_sorted(const fs::path& dir, std::initializer_list<std::string_view> exts) {
    std::vector<fs::path> files;
    if (dir.empty()) {
        return files;
    }
    if (!fs::is_directory(dir)) {
        throw MissingFile(dir.string());
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) {
            continue;
        }
        const auto ext = entry.path().extension().string();
        if (std::find(exts.begin(), exts.end(), ext) != exts.end()) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

} // namespace

void for_each_document(const fs::path& store_dir, const std::function<void(const Document&)>& fn) {
    for (const char* name : kStoreFiles) {
        const auto path = store_dir / name;
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw MissingFile(path.string());
        }
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) {
                continue;
            }
            try {
                fn(json::parse(line).get<Document>());
            } catch (const json::exception& e) {
                throw JsonMalformed(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
    }
}

CleaningReport ingest_corpus(const IngestOptions& options) {
    const DrugMatcher matcher(options.drug_names);
    fs::create_directories(options.out_dir);
    CleaningReport report;

    const auto run = [&](Source source, const fs::path& dir, std::initializer_list<std::string_view> exts,
                         const char* out_name) {
        std::ofstream out(options.out_dir / out_name, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write " + (options.out_dir / out_name).string());
        }
        std::set<std::string> seen;
        for (const auto& file : list_sorted(dir, exts)) {
            const auto bytes = read_file(file);
            const auto stem = file.stem().string();
            ParseResult parsed;
            try {
                parsed = source == Source::pmc ? parse_pmc(bytes, stem) : parse_trial(bytes, stem);
            } catch (const XmlMalformed& e) {
                std::cerr << "warning: skipping " << file.string() << ": " << e.what() << '\n';
                ++report.malformed;
                continue;
            } catch (const JsonMalformed& e) {
                std::cerr << "warning: skipping " << file.string() << ": " << e.what() << '\n';
                ++report.malformed;
                continue;
            }
            const auto& id = std::visit([](const auto& r) -> const std::string& { return r.id; }, parsed);
            if (!seen.insert(id).second) {
                ++report.duplicates;
                continue;
            }
            ++report.input;
            const auto* doc = std::get_if<Document>(&parsed);
            if (doc == nullptr || has_empty_field(*doc)) {
                ++report.empty_removed;
            } else if (!matcher.matches(*doc)) {
                ++report.no_mention_removed;
            } else {
                ++report.retained;
                out << json(*doc).dump() << '\n';
            }
        }
    };
    run(Source::pmc, options.pmc_dir, {".xml", ".nxml"}, kStoreFiles[0]);
    run(Source::clinical_trials, options.trials_dir, {".json"}, kStoreFiles[1]);

    write_file(options.out_dir / "cleaning_report.json", json(report).dump(2) + "\n");
    return report;
}

} // namespace drugrec
