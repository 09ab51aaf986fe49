#include "drugrec/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "drugrec/error.hpp"
#include "drugrec/rng.hpp"
#include "drugrec/util.hpp"

namespace drugrec {

namespace fs = std::filesystem;
using nlohmann::json;

NamedSet name_set(const KnowledgeGraph& g, const DiseaseDrugSet& s) {
    return {g.entity_name(s.disease),
            g.entity_name(s.relevant),
            g.entity_name(s.irrelevant),
            display_name(g.entity_name(s.disease)),
            display_name(g.entity_name(s.relevant)),
            display_name(g.entity_name(s.irrelevant)),
            s.rel_score,
            s.sim_score,
            s.candidate_pool_size,
            s.effect_label};
}

void to_json(json& j, const NamedSet& s) {
    j = json{{"disease_id", s.disease_id},
             {"relevant_id", s.relevant_id},
             {"irrelevant_id", s.irrelevant_id},
             {"disease", s.disease},
             {"relevant", s.relevant},
             {"irrelevant", s.irrelevant},
             {"rel_score", s.rel_score},
             {"sim_score", s.sim_score},
             {"candidate_pool_size", s.candidate_pool_size},
             {"effect_label", to_string(s.effect_label)}};
}

void from_json(const json& j, NamedSet& s) {
    j.at("disease_id").get_to(s.disease_id);
    j.at("relevant_id").get_to(s.relevant_id);
    j.at("irrelevant_id").get_to(s.irrelevant_id);
    j.at("disease").get_to(s.disease);
    j.at("relevant").get_to(s.relevant);
    j.at("irrelevant").get_to(s.irrelevant);
    j.at("rel_score").get_to(s.rel_score);
    j.at("sim_score").get_to(s.sim_score);
    j.at("candidate_pool_size").get_to(s.candidate_pool_size);
    s.effect_label = parse_effect_label(j.at("effect_label").get<std::string>());
}

void to_json(json& j, const BackgroundChunk& c) { j = json{{"source", c.source}, {"text", c.text}}; }

void from_json(const json& j, BackgroundChunk& c) {
    j.at("source").get_to(c.source);
    j.at("text").get_to(c.text);
}

json background_to_json(const BackgroundSet& set) {
    json chunks = json::array();
    for (const auto& c : set.chunks) {
        chunks.push_back(
            {{"ref", c.ref}, {"source", c.key}, {"text", c.text}, {"bm25", c.bm25}, {"cosine", c.cosine}});
    }
    return json{{"disease", set.disease}, {"drug", set.drug}, {"threshold", set.threshold_used}, {"chunks", chunks}};
}

BackgroundMap load_backgrounds(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MissingFile(path.string());
    }
    BackgroundMap out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            const auto j = json::parse(line);
            auto key = std::make_pair(j.at("disease").get<std::string>(), j.at("drug").get<std::string>());
            out[std::move(key)] = j.at("chunks").get<std::vector<BackgroundChunk>>();
        } catch (const json::exception& e) {
            throw UnreadableFile(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

const std::string_view kFormatInstructions =
    "Reply in exactly this format:\n"
    "ANSWER: <1 or 2>\n"
    "REASON: <one or two sentences citing the background>";

namespace {

const std::vector<std::string> kPlaceholders{"disease",      "candidate_1",  "candidate_2",
                                             "background_1", "background_2", "format_instructions"};

bool is_ident_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

const char* kDefaultTemplate = R"(You are a biomedical expert assisting with drug recommendation.

Disease: {disease}

Candidate 1: {candidate_1}
Evidence for candidate 1:
{background_1}

Candidate 2: {candidate_2}
Evidence for candidate 2:
{background_2}

Which candidate is the more suitable treatment for the disease? Base the choice on the evidence where possible.
{format_instructions}
)";

} // namespace

PromptTemplate::PromptTemplate(std::string text, std::string version)
    : text_(std::move(text)), version_(std::move(version)) {
    std::map<std::string, int> seen;
    std::string literal;
    const auto& t = text_;
    for (std::size_t i = 0; i < t.size();) {
        const char c = t[i];
        if (c == '{' && i + 1 < t.size() && t[i + 1] == '{') {
            literal += '{';
            i += 2;
        } else if (c == '}' && i + 1 < t.size() && t[i + 1] == '}') {
            literal += '}';
            i += 2;
        } else if (c == '}') {
            throw MalformedTemplate("unmatched '}' at offset " + std::to_string(i));
        } else if (c == '{') {
            auto j = i + 1;
            while (j < t.size() && is_ident_char(t[j])) {
                ++j;
            }
            if (j == i + 1 || j >= t.size() || t[j] != '}') {
                throw MalformedTemplate("unterminated or empty placeholder at offset " + std::to_string(i));
            }
            auto name = t.substr(i + 1, j - i - 1);
            if (std::find(kPlaceholders.begin(), kPlaceholders.end(), name) == kPlaceholders.end()) {
                throw UnboundPlaceholder("unknown placeholder {" + name + "}");
            }
            if (!literal.empty()) {
                segments_.push_back({false, std::move(literal)});
                literal.clear();
            }
            ++seen[name];
            segments_.push_back({true, std::move(name)});
            i = j + 1;
        } else {
            literal += c;
            ++i;
        }
    }
    if (!literal.empty()) {
        segments_.push_back({false, std::move(literal)});
    }
    for (const auto& p : kPlaceholders) {
        const auto n = seen[p];
        if (n != 1) {
            throw MalformedTemplate("placeholder {" + p + "} must appear exactly once, found " + std::to_string(n));
        }
    }
}

PromptTemplate PromptTemplate::default_template() { return {kDefaultTemplate, "default-v1"}; }

PromptTemplate PromptTemplate::load(const fs::path& path) {
    auto text = read_file(path);
    constexpr std::string_view marker = "# version:";
    if (text.rfind(marker, 0) == 0) {
        const auto nl = text.find('\n');
        auto version = std::string(trim(std::string_view(text).substr(marker.size(), nl - marker.size())));
        text = nl == std::string::npos ? std::string() : text.substr(nl + 1);
        if (version.empty()) {
            throw MalformedTemplate("empty version tag in " + path.string());
        }
        return {std::move(text), std::move(version)};
    }
    auto version = "sha256:" + sha256_hex(text).substr(0, 12);
    return {std::move(text), std::move(version)};
}

std::string format_background(std::span<const BackgroundChunk> chunks) {
    if (chunks.empty()) {
        return "(no background retrieved)";
    }
    std::string out;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        if (i > 0) {
            out += '\n';
        }
        out += "[" + chunks[i].source + "] " + chunks[i].text;
    }
    return out;
}

std::string render_prompt(const PromptTemplate& tpl, const PromptFields& f) {
    std::string out;
    for (const auto& seg : tpl.segments()) {
        if (!seg.placeholder) {
            out += seg.value;
        } else if (seg.value == "disease") {
            out += f.disease;
        } else if (seg.value == "candidate_1") {
            out += f.candidate_1;
        } else if (seg.value == "candidate_2") {
            out += f.candidate_2;
        } else if (seg.value == "background_1") {
            out += format_background(f.background_1);
        } else if (seg.value == "background_2") {
            out += format_background(f.background_2);
        } else if (seg.value == "format_instructions") {
            out += kFormatInstructions;
        } else {
            throw UnboundPlaceholder("unbound placeholder {" + seg.value + "}");
        }
    }
    return out;
}

void to_json(json& j, const TrainingRecord& r) {
    j = json{{"version", kDatasetVersion},
             {"id", r.id},
             {"disease", r.disease},
             {"candidate_1", r.candidate_1},
             {"candidate_2", r.candidate_2},
             {"label", r.label},
             {"effect_label", to_string(r.effect_label)},
             {"background_1", r.background_1},
             {"background_2", r.background_2},
             {"prompt", r.prompt},
             {"shuffle_seed", r.shuffle_seed},
             {"template_version", r.template_version}};
}

void from_json(const json& j, TrainingRecord& r) {
    if (j.at("version").get<int>() != kDatasetVersion) {
        throw Error("unsupported record version " + j.at("version").dump());
    }
    j.at("id").get_to(r.id);
    j.at("disease").get_to(r.disease);
    j.at("candidate_1").get_to(r.candidate_1);
    j.at("candidate_2").get_to(r.candidate_2);
    j.at("label").get_to(r.label);
    r.effect_label = parse_effect_label(j.at("effect_label").get<std::string>());
    j.at("background_1").get_to(r.background_1);
    j.at("background_2").get_to(r.background_2);
    j.at("prompt").get_to(r.prompt);
    j.at("shuffle_seed").get_to(r.shuffle_seed);
    j.at("template_version").get_to(r.template_version);
}

void to_json(json& j, const DatasetManifest& m) {
    j = json{{"records", m.records},
             {"label_1", m.label_1},
             {"label_2", m.label_2},
             {"shuffle_seed", m.shuffle_seed},
             {"template_version", m.template_version},
             {"config_digest", m.config_digest},
             {"dataset_version", kDatasetVersion}};
}

Dataset build_dataset(std::span<const NamedSet> sets, const BackgroundMap& backgrounds, const PromptTemplate& tpl,
                      std::uint64_t shuffle_seed, std::string config_digest) {
    const auto lookup = [&](const std::string& disease, const std::string& drug) -> const std::vector<BackgroundChunk>& {
        const auto it = backgrounds.find({disease, drug});
        if (it == backgrounds.end()) {
            throw MissingBackgroundKey("no background for (" + disease + ", " + drug + ")");
        }
        return it->second;
    };

    // Alternating pattern, then shuffled: positions are random while the two
    // labels stay balanced.
    std::vector<char> swap(sets.size());
    for (std::size_t i = 0; i < swap.size(); ++i) {
        swap[i] = static_cast<char>(i % 2);
    }
    Rng rng(shuffle_seed);
    rng.shuffle(std::span(swap));

    Dataset out;
    out.manifest.shuffle_seed = shuffle_seed;
    out.manifest.template_version = tpl.version();
    out.manifest.config_digest = std::move(config_digest);
    const auto width = std::to_string(sets.size()).size();
    for (std::size_t i = 0; i < sets.size(); ++i) {
        const auto& s = sets[i];
        const auto& bg_rel = lookup(s.disease, s.relevant);
        const auto& bg_irr = lookup(s.disease, s.irrelevant);
        TrainingRecord r;
        auto num = std::to_string(i);
        r.id = "rec-" + std::string(std::max<std::size_t>(width, 4) - num.size(), '0') + num;
        r.disease = s.disease;
        r.effect_label = s.effect_label;
        r.shuffle_seed = shuffle_seed;
        r.template_version = tpl.version();
        if (swap[i] != 0) {
            r.candidate_1 = s.irrelevant;
            r.candidate_2 = s.relevant;
            r.background_1 = bg_irr;
            r.background_2 = bg_rel;
            r.label = 2;
        } else {
            r.candidate_1 = s.relevant;
            r.candidate_2 = s.irrelevant;
            r.background_1 = bg_rel;
            r.background_2 = bg_irr;
            r.label = 1;
        }
        r.prompt = render_prompt(tpl, {r.disease, r.candidate_1, r.candidate_2, r.background_1, r.background_2});
        ++(r.label == 1 ? out.manifest.label_1 : out.manifest.label_2);
        out.records.push_back(std::move(r));
    }
    out.manifest.records = out.records.size();
    return out;
}

std::string write_dataset(const fs::path& path, std::span<const TrainingRecord> records) {
    std::string bytes;
    for (const auto& r : records) {
        bytes += json(r).dump() + "\n";
    }
    write_file(path, bytes);
    return sha256_hex(bytes);
}

std::vector<TrainingRecord> read_dataset(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw UnreadableFile("cannot open dataset " + path.string());
    }
    std::vector<TrainingRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            out.push_back(json::parse(line).get<TrainingRecord>());
        } catch (const std::exception& e) {
            throw UnreadableFile(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<std::string> record_violations(const TrainingRecord& r) {
    std::vector<std::string> out;
    if (r.id.empty()) {
        out.emplace_back("empty id");
    }
    if (r.label != 1 && r.label != 2) {
        out.push_back("label must be 1 or 2, got " + std::to_string(r.label));
    }
    if (r.disease.empty() || r.candidate_1.empty() || r.candidate_2.empty()) {
        out.emplace_back("empty disease or candidate name");
    }
    if (r.candidate_1 == r.candidate_2) {
        out.emplace_back("candidate_1 equals candidate_2");
    }
    for (const auto* name : {&r.disease, &r.candidate_1, &r.candidate_2}) {
        if (!name->empty() && r.prompt.find(*name) == std::string::npos) {
            out.push_back("prompt lacks \"" + *name + "\"");
        }
    }
    for (const auto* bg : {&r.background_1, &r.background_2}) {
        for (const auto& c : *bg) {
            if (r.prompt.find(c.text) == std::string::npos) {
                out.push_back("chunk not embedded in prompt: " + c.source);
            }
        }
    }
    return out;
}

ValidationReport validate_dataset(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw UnreadableFile("cannot open dataset " + path.string());
    }
    ValidationReport report;
    std::set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        ++report.records;
        TrainingRecord r;
        try {
            r = json::parse(line).get<TrainingRecord>();
        } catch (const std::exception& e) {
            report.violations.push_back({line_no, std::string("unparseable record: ") + e.what()});
            continue;
        }
        for (auto& msg : record_violations(r)) {
            report.violations.push_back({line_no, std::move(msg)});
        }
        if (!ids.insert(r.id).second) {
            report.violations.push_back({line_no, "duplicate id " + r.id});
        }
    }
    return report;
}

} // namespace drugrec
