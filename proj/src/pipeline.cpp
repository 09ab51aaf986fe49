#include "drugrec/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <set>

#include "drugrec/corpus.hpp"
#include "drugrec/dataset.hpp"
#include "drugrec/error.hpp"
#include "drugrec/eval.hpp"
#include "drugrec/kg.hpp"
#include "drugrec/util.hpp"

namespace drugrec {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

std::string json_type(const json& j) { return j.type_name(); }

// Walks one JSON object, remembering which keys were read so leftovers can
// be reported as unknown.
class Section {
public:
    Section(const json& j, std::string prefix, const std::string& origin)
        : j_(j), prefix_(std::move(prefix)), origin_(origin) {
        if (!j_.is_object()) {
            throw ConfigInvalid(origin_, prefix_.empty() ? "<root>" : prefix_, "expected an object");
        }
    }

    std::string key(std::string_view name) const {
        return prefix_.empty() ? std::string(name) : prefix_ + "." + std::string(name);
    }

    template <class T>
    void get(std::string_view name, T& out) {
        seen_.insert(std::string(name));
        const auto it = j_.find(std::string(name));
        if (it == j_.end()) {
            return;
        }
        if constexpr (std::is_same_v<T, bool>) {
            if (!it->is_boolean()) {
                throw ConfigInvalid(origin_, key(name), "expected a boolean, got " + json_type(*it));
            }
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!it->is_number_unsigned()) {
                throw ConfigInvalid(origin_, key(name), "expected a non-negative integer, got " + it->dump());
            }
        } else if constexpr (std::is_integral_v<T>) {
            if (!it->is_number_integer()) {
                throw ConfigInvalid(origin_, key(name), "expected an integer, got " + it->dump());
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!it->is_number()) {
                throw ConfigInvalid(origin_, key(name), "expected a number, got " + it->dump());
            }
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!it->is_string()) {
                throw ConfigInvalid(origin_, key(name), "expected a string, got " + json_type(*it));
            }
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            if (!it->is_array() || !std::all_of(it->begin(), it->end(), [](const json& x) { return x.is_string(); })) {
                throw ConfigInvalid(origin_, key(name), "expected an array of strings");
            }
        }
        out = it->get<T>();
    }

    void get_path(std::string_view name, fs::path& out) {
        std::string s;
        get(name, s);
        if (!s.empty()) {
            out = s;
        }
    }

    // Returns the nested object (or an empty one when absent).
    const json& child(std::string_view name) {
        seen_.insert(std::string(name));
        const auto it = j_.find(std::string(name));
        static const json empty = json::object();
        return it == j_.end() ? empty : *it;
    }

    void finish() const {
        for (const auto& [k, _] : j_.items()) {
            if (!seen_.contains(k)) {
                throw ConfigInvalid(origin_, key(k), "unknown key");
            }
        }
    }

private:
    const json& j_;
    std::string prefix_;
    const std::string& origin_;
    std::set<std::string> seen_;
};

template <class Fn>
void checked(const std::string& origin, const std::string& key, Fn&& fn) {
    try {
        fn();
    } catch (const ConfigInvalid&) {
        throw;
    } catch (const Error& e) {
        throw ConfigInvalid(origin, key, e.what());
    }
}

std::string path_string(const fs::path& p, const fs::path& base) {
    if (p.empty()) {
        return "";
    }
    if (!base.empty() && p.is_absolute()) {
        const auto rel = p.lexically_relative(base);
        if (!rel.empty()) {
            return rel.generic_string();
        }
    }
    return p.generic_string();
}

} // namespace

json PipelineConfig::to_json(bool with_work_dir) const {
    json paths_j{{"kg", path_string(paths.kg, base_dir)},
                 {"pmc", path_string(paths.pmc, base_dir)},
                 {"trials", path_string(paths.trials, base_dir)},
                 {"drugs", path_string(paths.drugs, base_dir)},
                 {"template", path_string(paths.tpl, base_dir)}};
    if (with_work_dir) {
        paths_j["work_dir"] = path_string(paths.work_dir, base_dir);
    }
    return json{
        {"version", version},
        {"seed", seed},
        {"paths", paths_j},
        {"kg", {{"strict", kg_strict}}},
        {"embed",
         {{"dim", embed.dim},
          {"epochs", embed.epochs},
          {"learning_rate", embed.learning_rate},
          {"margin", embed.margin},
          {"negatives_per_positive", embed.negatives_per_positive}}},
        {"sampler",
         {{"treatment_relations", sampler.treatment_relations},
          {"pool_top_m", sampler.pool_top_m},
          {"edge_weight", sampler.edge_weight},
          {"emb_weight", sampler.emb_weight},
          {"diseases", diseases}}},
        {"index", {{"k1", bm25.k1}, {"b", bm25.b}, {"max_chunk_chars", max_chunk_chars}, {"threads", index_threads}}},
        {"retrieve", {{"k", retrieve_k}}},
        {"rerank",
         {{"embedder", embedder},
          {"dim", embedder_dim},
          {"model", embedder_model},
          {"threshold", rerank.threshold},
          {"max_chunks", rerank.max_chunks},
          {"max_in_flight", rerank.max_in_flight},
          {"retries", rerank.retry.retries}}},
        {"teacher",
         {{"kind", teacher}, {"stub_reply", stub_reply}, {"model", teacher_model}, {"max_tokens", teacher_max_tokens}}},
        {"distill",
         {{"epochs", distill.epochs},
          {"learning_rate", distill.learning_rate},
          {"lambda", distill.lambda},
          {"feature_dim", distill.feature_dim}}},
    };
}

std::string PipelineConfig::digest() const { return sha256_hex(to_json(false).dump()); }

PipelineConfig PipelineConfig::from_json(const json& j, const std::string& origin) {
    PipelineConfig c;
    Section root(j, "", origin);
    root.get("version", c.version);
    if (c.version != kConfigVersion) {
        throw ConfigInvalid(origin, "version", "unsupported version " + std::to_string(c.version));
    }
    root.get("seed", c.seed);

    Section paths(root.child("paths"), "paths", origin);
    paths.get_path("kg", c.paths.kg);
    paths.get_path("pmc", c.paths.pmc);
    paths.get_path("trials", c.paths.trials);
    paths.get_path("drugs", c.paths.drugs);
    paths.get_path("template", c.paths.tpl);
    paths.get_path("work_dir", c.paths.work_dir);
    paths.finish();

    Section kg(root.child("kg"), "kg", origin);
    kg.get("strict", c.kg_strict);
    kg.finish();

    Section embed(root.child("embed"), "embed", origin);
    embed.get("dim", c.embed.dim);
    embed.get("epochs", c.embed.epochs);
    embed.get("learning_rate", c.embed.learning_rate);
    embed.get("margin", c.embed.margin);
    embed.get("negatives_per_positive", c.embed.negatives_per_positive);
    embed.finish();
    c.embed.seed = c.seed;
    checked(origin, "embed", [&] { c.embed.validate(); });

    Section sampler(root.child("sampler"), "sampler", origin);
    sampler.get("treatment_relations", c.sampler.treatment_relations);
    sampler.get("pool_top_m", c.sampler.pool_top_m);
    sampler.get("edge_weight", c.sampler.edge_weight);
    sampler.get("emb_weight", c.sampler.emb_weight);
    sampler.get("diseases", c.diseases);
    sampler.finish();
    c.sampler.seed = c.seed;
    checked(origin, "sampler", [&] { c.sampler.validate(); });

    Section index(root.child("index"), "index", origin);
    index.get("k1", c.bm25.k1);
    index.get("b", c.bm25.b);
    index.get("max_chunk_chars", c.max_chunk_chars);
    index.get("threads", c.index_threads);
    index.finish();
    if (!(c.bm25.k1 >= 0.0)) {
        throw ConfigInvalid(origin, "index.k1", "must be non-negative");
    }
    if (!(c.bm25.b >= 0.0 && c.bm25.b <= 1.0)) {
        throw ConfigInvalid(origin, "index.b", "must lie in [0, 1]");
    }
    if (c.max_chunk_chars == 0) {
        throw ConfigInvalid(origin, "index.max_chunk_chars", "must be positive");
    }
    if (c.index_threads == 0) {
        throw ConfigInvalid(origin, "index.threads", "must be positive");
    }

    Section retrieve(root.child("retrieve"), "retrieve", origin);
    retrieve.get("k", c.retrieve_k);
    retrieve.finish();
    if (c.retrieve_k == 0) {
        throw ConfigInvalid(origin, "retrieve.k", "must be positive");
    }

    Section rerank(root.child("rerank"), "rerank", origin);
    rerank.get("embedder", c.embedder);
    rerank.get("dim", c.embedder_dim);
    rerank.get("model", c.embedder_model);
    rerank.get("threshold", c.rerank.threshold);
    rerank.get("max_chunks", c.rerank.max_chunks);
    rerank.get("max_in_flight", c.rerank.max_in_flight);
    rerank.get("retries", c.rerank.retry.retries);
    rerank.finish();
    if (c.embedder != "hash" && c.embedder != "bow" && c.embedder != "remote") {
        throw ConfigInvalid(origin, "rerank.embedder", "must be hash, bow or remote, got \"" + c.embedder + "\"");
    }
    if (c.embedder_dim == 0) {
        throw ConfigInvalid(origin, "rerank.dim", "must be positive");
    }
    if (c.rerank.max_in_flight == 0) {
        throw ConfigInvalid(origin, "rerank.max_in_flight", "must be positive");
    }
    if (c.rerank.retry.retries < 0) {
        throw ConfigInvalid(origin, "rerank.retries", "must be non-negative");
    }
    checked(origin, "rerank", [&] { c.rerank.validate(); });

    Section teacher(root.child("teacher"), "teacher", origin);
    teacher.get("kind", c.teacher);
    teacher.get("stub_reply", c.stub_reply);
    teacher.get("model", c.teacher_model);
    teacher.get("max_tokens", c.teacher_max_tokens);
    teacher.finish();
    if (c.teacher != "reference" && c.teacher != "stub" && c.teacher != "remote") {
        throw ConfigInvalid(origin, "teacher.kind", "must be reference, stub or remote, got \"" + c.teacher + "\"");
    }
    if (c.teacher_max_tokens <= 0) {
        throw ConfigInvalid(origin, "teacher.max_tokens", "must be positive");
    }

    Section distill(root.child("distill"), "distill", origin);
    distill.get("epochs", c.distill.epochs);
    distill.get("learning_rate", c.distill.learning_rate);
    distill.get("lambda", c.distill.lambda);
    distill.get("feature_dim", c.distill.feature_dim);
    distill.finish();
    c.distill.seed = c.seed;
    checked(origin, "distill", [&] { c.distill.validate(); });

    root.finish();
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error& e) {
        throw ConfigInvalid(path.string(), "<file>", e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigInvalid(path.string(), "<file>", e.what());
    }
    auto c = from_json(j, path.string());
    c.base_dir = fs::absolute(path).parent_path().lexically_normal();
    for (auto* p : {&c.paths.kg, &c.paths.pmc, &c.paths.trials, &c.paths.drugs, &c.paths.tpl, &c.paths.work_dir}) {
        if (!p->empty() && p->is_relative()) {
            *p = (c.base_dir / *p).lexically_normal();
        }
    }
    if (c.paths.kg.empty()) {
        throw ConfigInvalid(path.string(), "paths.kg", "is required");
    }
    if (c.paths.pmc.empty() && c.paths.trials.empty()) {
        throw ConfigInvalid(path.string(), "paths.pmc", "at least one of paths.pmc and paths.trials is required");
    }
    if (c.paths.work_dir.empty()) {
        c.paths.work_dir = c.base_dir / "work";
    }
    return c;
}

// ---------------------------------------------------------------- manifest

std::string digest_path(const fs::path& path) {
    if (fs::is_regular_file(path)) {
        return sha256_file(path);
    }
    if (!fs::is_directory(path)) {
        throw MissingArtifact(path.string());
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path)) {
        if (e.is_regular_file()) {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::string listing;
    for (const auto& f : files) {
        listing += f.lexically_relative(path).generic_string();
        listing += '\0';
        listing += sha256_file(f);
        listing += '\n';
    }
    return sha256_hex(listing);
}

json RunManifest::to_json() const {
    json stages_j = json::array();
    for (const auto& s : stages) {
        stages_j.push_back({{"stage", s.stage}, {"inputs", s.inputs}, {"outputs", s.outputs}, {"seconds", s.seconds}});
    }
    return json{{"format", "drugrec-run"},
                {"version", 1},
                {"tool_version", tool_version},
                {"config_digest", config_digest},
                {"seed", seed},
                {"stages", stages_j}};
}

RunManifest RunManifest::from_json(const json& j) {
    try {
        if (j.at("format").get<std::string>() != "drugrec-run" || j.at("version").get<int>() != 1) {
            throw Error("not a run manifest");
        }
        RunManifest m;
        j.at("tool_version").get_to(m.tool_version);
        j.at("config_digest").get_to(m.config_digest);
        j.at("seed").get_to(m.seed);
        for (const auto& s : j.at("stages")) {
            StageRecord r;
            s.at("stage").get_to(r.stage);
            s.at("inputs").get_to(r.inputs);
            s.at("outputs").get_to(r.outputs);
            s.at("seconds").get_to(r.seconds);
            m.stages.push_back(std::move(r));
        }
        return m;
    } catch (const json::exception& e) {
        throw Error(std::string("malformed run manifest: ") + e.what());
    }
}

RunManifest RunManifest::load(const fs::path& path) {
    if (!fs::exists(path)) {
        throw MissingArtifact(path.string());
    }
    try {
        return from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

VerifyResult verify_run(const fs::path& manifest_path) {
    const auto m = RunManifest::load(manifest_path);
    const auto dir = manifest_path.parent_path();
    VerifyResult out;
    auto check = [&](const std::string& p, const std::string& sha) {
        const fs::path full = fs::path(p).is_absolute() ? fs::path(p) : dir / p;
        if (!fs::exists(full)) {
            throw MissingArtifact(full.string());
        }
        if (digest_path(full) != sha) {
            out.mismatched.push_back(p);
        }
    };
    for (const auto& s : m.stages) {
        for (const auto& [p, sha] : s.inputs) {
            check(p, sha);
        }
        for (const auto& [p, sha] : s.outputs) {
            check(p, sha);
        }
    }
    std::sort(out.mismatched.begin(), out.mismatched.end());
    out.mismatched.erase(std::unique(out.mismatched.begin(), out.mismatched.end()), out.mismatched.end());
    return out;
}

// ---------------------------------------------------------------- stages

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"build-kg",    "train-embed", "sample",   "ingest-corpus",
                                                "build-index", "retrieve",    "rerank",   "build-dataset",
                                                "distill",     "evaluate"};
    return names;
}

bool is_stage(std::string_view name) {
    const auto& n = stage_names();
    return name == "all" || std::find(n.begin(), n.end(), name) != n.end();
}

namespace {

class StageRun {
public:
    StageRun(const PipelineConfig& cfg, std::string stage) : cfg_(cfg), work_(cfg.paths.work_dir) {
        record_.stage = std::move(stage);
    }

    const PipelineConfig& cfg() const { return cfg_; }
    fs::path at(std::string_view name) const { return work_ / name; }

    // Input produced by an earlier stage.
    fs::path need(std::string_view name) {
        const auto p = at(name);
        if (!fs::exists(p)) {
            throw MissingInput(record_.stage, p.string());
        }
        record_.inputs[std::string(name)] = digest_path(p);
        return p;
    }

    // Input from outside the work directory.
    const fs::path& need_external(const fs::path& p) {
        if (!fs::exists(p)) {
            throw MissingInput(record_.stage, p.string());
        }
        record_.inputs[p.string()] = digest_path(p);
        return p;
    }

    void produced(std::string_view name) { record_.outputs[std::string(name)] = digest_path(at(name)); }

    StageRecord finish(double seconds) {
        record_.seconds = seconds;
        return std::move(record_);
    }

private:
    const PipelineConfig& cfg_;
    fs::path work_;
    StageRecord record_;
};

template <class T>
std::string to_jsonl(const std::vector<T>& items) {
    std::string out;
    for (const auto& x : items) {
        out += json(x).dump() + "\n";
    }
    return out;
}

std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw UnreadableFile(path.string() + ": cannot open");
    }
    std::vector<json> out;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            out.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw UnreadableFile(path.string() + ":" + std::to_string(no) + ": " + e.what());
        }
    }
    return out;
}

std::shared_ptr<const TextEmbedder> text_embedder(const PipelineConfig& c) {
    return make_embedder(c.embedder, c.embedder_dim, c.seed, c.embedder_model);
}

void stage_build_kg(StageRun& s) {
    const auto& c = s.cfg();
    LoadReport report;
    const auto g = load_triples(s.need_external(c.paths.kg), LoadOptions{true, c.kg_strict}, &report);
    g.save(s.at(artifact::graph));
    write_file(s.at(artifact::kg_report), json{{"lines", report.lines},
                                               {"comments", report.comments},
                                               {"malformed", report.malformed},
                                               {"duplicates", report.duplicates},
                                               {"entities", g.entity_count()},
                                               {"relations", g.relation_count()},
                                               {"edges", g.edge_count()}}
                                              .dump(2) +
                                              "\n");
    s.produced(artifact::graph);
    s.produced(artifact::kg_report);
}

void stage_train_embed(StageRun& s) {
    const auto g = KnowledgeGraph::load(s.need(artifact::graph));
    const auto result = train_embeddings(g, s.cfg().embed);
    result.table.save(s.at(artifact::embeddings));
    std::string csv = "epoch,mean_loss\n";
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
        csv += std::to_string(e + 1) + "," + format_double(result.epoch_losses[e]) + "\n";
    }
    write_file(s.at(artifact::embed_losses), csv);
    s.produced(artifact::embeddings);
    s.produced(artifact::embed_losses);
}

void stage_sample(StageRun& s) {
    const auto& c = s.cfg();
    const auto g = KnowledgeGraph::load(s.need(artifact::graph));
    const auto table = EmbeddingTable::load(s.need(artifact::embeddings));
    std::vector<EntityId> diseases;
    if (c.diseases.empty()) {
        diseases = g.entities_of_kind(EntityKind::disease);
    } else {
        for (const auto& name : c.diseases) {
            diseases.push_back(g.entity(name));
        }
    }
    const auto batch = sample_corpus_sets(g, table, diseases, c.sampler);
    std::vector<NamedSet> named;
    std::set<std::string> drugs;
    for (const auto& set : batch.sets) {
        named.push_back(name_set(g, set));
        drugs.insert(named.back().relevant);
        drugs.insert(named.back().irrelevant);
    }
    std::string skipped;
    for (const auto& k : batch.skipped) {
        skipped += json{{"disease", g.entity_name(k.disease)}, {"reason", k.reason}}.dump() + "\n";
    }
    std::string drug_lines;
    for (const auto& d : drugs) {
        drug_lines += d + "\n";
    }
    write_file(s.at(artifact::sets), to_jsonl(named));
    write_file(s.at(artifact::sample_skipped), skipped);
    write_file(s.at(artifact::drugs), drug_lines);
    s.produced(artifact::sets);
    s.produced(artifact::sample_skipped);
    s.produced(artifact::drugs);
}

void stage_ingest(StageRun& s) {
    const auto& c = s.cfg();
    IngestOptions opt;
    if (!c.paths.pmc.empty()) {
        opt.pmc_dir = s.need_external(c.paths.pmc);
    }
    if (!c.paths.trials.empty()) {
        opt.trials_dir = s.need_external(c.paths.trials);
    }
    const auto drugs_file = c.paths.drugs.empty() ? s.need(artifact::drugs) : s.need_external(c.paths.drugs);
    for (const auto& line : split(read_file(drugs_file), '\n')) {
        const auto name = trim(line);
        if (!name.empty() && name.front() != '#') {
            opt.drug_names.emplace_back(name);
        }
    }
    const auto store = s.at(artifact::store);
    fs::remove_all(store);
    opt.out_dir = store;
    const auto report = ingest_corpus(opt);
    std::cerr << "ingest-corpus: " << report.retained << " of " << report.input << " documents retained\n";
    s.produced(artifact::store);
}

void stage_build_index(StageRun& s) {
    const auto& c = s.cfg();
    const auto idx = build_index_from_store(s.need(artifact::store), c.max_chunk_chars, c.bm25, c.index_threads);
    const auto dir = s.at(artifact::index);
    fs::remove_all(dir);
    idx.save(dir);
    s.produced(artifact::index);
}

void stage_retrieve(StageRun& s) {
    const auto& c = s.cfg();
    const auto idx = InvertedIndex::load(s.need(artifact::index));
    std::set<std::pair<std::string, std::string>> done;
    std::string out;
    for (const auto& j : read_jsonl(s.need(artifact::sets))) {
        const auto set = j.get<NamedSet>();
        for (const auto& drug : {set.relevant, set.irrelevant}) {
            if (!done.emplace(set.disease, drug).second) {
                continue;
            }
            json cands = json::array();
            for (const auto& cand : candidates_for(idx, set.disease, drug, c.retrieve_k)) {
                cands.push_back({{"ref", cand.ref}, {"key", cand.key}, {"text", cand.text}, {"bm25", cand.bm25}});
            }
            out += json{{"disease", set.disease}, {"drug", drug}, {"candidates", cands}}.dump() + "\n";
        }
    }
    write_file(s.at(artifact::candidates), out);
    s.produced(artifact::candidates);
}

void stage_rerank(StageRun& s) {
    const auto& c = s.cfg();
    const auto embedder = text_embedder(c);
    EmbeddingCache cache(embedder->id(), c.embedder_dim, s.at(artifact::embed_cache));
    std::string out;
    for (const auto& j : read_jsonl(s.need(artifact::candidates))) {
        std::vector<Candidate> cands;
        for (const auto& x : j.at("candidates")) {
            cands.push_back({x.at("ref").get<ChunkRef>(), x.at("key").get<std::string>(),
                             x.at("text").get<std::string>(), x.at("bm25").get<double>()});
        }
        const auto bg = rerank(*embedder, j.at("disease").get<std::string>(), j.at("drug").get<std::string>(), cands,
                               c.rerank, &cache);
        out += background_to_json(bg).dump() + "\n";
    }
    cache.save();
    write_file(s.at(artifact::backgrounds), out);
    s.produced(artifact::backgrounds);
}

void stage_build_dataset(StageRun& s) {
    const auto& c = s.cfg();
    std::vector<NamedSet> sets;
    for (const auto& j : read_jsonl(s.need(artifact::sets))) {
        sets.push_back(j.get<NamedSet>());
    }
    const auto bg = load_backgrounds(s.need(artifact::backgrounds));
    const auto tpl = c.paths.tpl.empty() ? PromptTemplate::default_template()
                                         : PromptTemplate::load(s.need_external(c.paths.tpl));
    const auto ds = build_dataset(sets, bg, tpl, c.seed, c.digest());
    write_dataset(s.at(artifact::dataset), ds.records);
    write_file(s.at(artifact::dataset_manifest), json(ds.manifest).dump(2) + "\n");
    s.produced(artifact::dataset);
    s.produced(artifact::dataset_manifest);
}

std::unique_ptr<TeacherClient> make_teacher(const PipelineConfig& c, std::span<const TrainingRecord> records) {
    if (c.teacher == "reference") {
        return std::make_unique<ReferenceTeacher>(records);
    }
    if (c.teacher == "stub") {
        return std::make_unique<FixedTeacher>(c.stub_reply, "stub:" + sha256_hex(c.stub_reply).substr(0, 12));
    }
    return std::make_unique<RemoteTeacher>(RemoteTeacherConfig::from_env(c.teacher_model, c.teacher_max_tokens));
}

void stage_distill(StageRun& s) {
    const auto& c = s.cfg();
    const auto records = read_dataset(s.need(artifact::dataset));
    const auto teacher = make_teacher(c, records);
    ReplyCache cache(s.at(artifact::teacher_cache));
    RetryPolicy retry = c.rerank.retry;
    const auto labels = label_with_teacher(*teacher, records, &cache, retry);
    cache.save();
    std::string quarantine;
    for (const auto& q : labels.quarantined) {
        quarantine += json{{"id", q.id}, {"raw", q.raw}, {"reason", q.reason}}.dump() + "\n";
    }
    if (!labels.quarantined.empty()) {
        std::cerr << "distill: " << labels.quarantined.size() << " teacher replies quarantined\n";
    }
    write_file(s.at(artifact::labeled), to_jsonl(labels.labeled));
    write_file(s.at(artifact::quarantine), quarantine);

    ReferenceStudent student(c.distill.feature_dim, text_embedder(c));
    const auto result = train_reference_student(student, labels.labeled, c.distill);
    student.save(s.at(artifact::student));
    write_file(s.at(artifact::losses), losses_csv(result.curve));
    std::vector<StudentPrediction> preds;
    for (const auto& l : labels.labeled) {
        const auto out = student.predict(l.record);
        preds.push_back({l.record.id, out.selected(), out.probs, out.rationale});
    }
    write_file(s.at(artifact::student_out), to_jsonl(preds));
    for (const auto name : {artifact::labeled, artifact::quarantine, artifact::student, artifact::losses,
                            artifact::student_out}) {
        s.produced(name);
    }
}

void stage_evaluate(StageRun& s) {
    std::vector<LabeledRecord> labeled;
    for (const auto& j : read_jsonl(s.need(artifact::labeled))) {
        labeled.push_back(j.get<LabeledRecord>());
    }
    std::vector<StudentPrediction> preds;
    for (const auto& j : read_jsonl(s.need(artifact::student_out))) {
        preds.push_back(j.get<StudentPrediction>());
    }
    const auto report = evaluate_run(labeled, preds);
    write_file(s.at(artifact::report), report_to_json(report).dump(2) + "\n");
    s.produced(artifact::report);
}

void dispatch(StageRun& s, std::string_view stage) {
    if (stage == "build-kg") {
        stage_build_kg(s);
    } else if (stage == "train-embed") {
        stage_train_embed(s);
    } else if (stage == "sample") {
        stage_sample(s);
    } else if (stage == "ingest-corpus") {
        stage_ingest(s);
    } else if (stage == "build-index") {
        stage_build_index(s);
    } else if (stage == "retrieve") {
        stage_retrieve(s);
    } else if (stage == "rerank") {
        stage_rerank(s);
    } else if (stage == "build-dataset") {
        stage_build_dataset(s);
    } else if (stage == "distill") {
        stage_distill(s);
    } else if (stage == "evaluate") {
        stage_evaluate(s);
    } else {
        throw Error("unknown stage " + std::string(stage));
    }
}

RunManifest load_or_start(const fs::path& path, const PipelineConfig& cfg) {
    RunManifest m;
    if (fs::exists(path)) {
        try {
            m = RunManifest::load(path);
        } catch (const Error& e) {
            std::cerr << "warning: " << e.what() << "; starting a new manifest\n";
            m = {};
        }
    }
    if (m.config_digest != cfg.digest()) {
        m = {};
    }
    m.tool_version = std::string(kToolVersion);
    m.config_digest = cfg.digest();
    m.seed = cfg.seed;
    return m;
}

void merge(RunManifest& m, StageRecord rec) {
    std::erase_if(m.stages, [&](const StageRecord& r) { return r.stage == rec.stage; });
    m.stages.push_back(std::move(rec));
    const auto& order = stage_names();
    std::sort(m.stages.begin(), m.stages.end(), [&](const StageRecord& a, const StageRecord& b) {
        return std::find(order.begin(), order.end(), a.stage) < std::find(order.begin(), order.end(), b.stage);
    });
}

} // namespace

RunManifest run_stage(const PipelineConfig& cfg, std::string_view stage) {
    if (!is_stage(stage)) {
        throw ConfigInvalid("<command line>", "stage", "unknown stage \"" + std::string(stage) + "\"");
    }
    std::vector<std::string> todo;
    if (stage == "all") {
        todo = stage_names();
    } else {
        todo.emplace_back(stage);
    }
    fs::create_directories(cfg.paths.work_dir);
    const auto manifest_path = cfg.paths.work_dir / artifact::manifest;
    auto manifest = load_or_start(manifest_path, cfg);
    for (const auto& name : todo) {
        StageRun run(cfg, name);
        const auto start = std::chrono::steady_clock::now();
        try {
            dispatch(run, name);
        } catch (const ConfigInvalid&) {
            throw;
        } catch (const MissingInput&) {
            throw;
        } catch (const std::exception& e) {
            throw StageFailed(name, e.what());
        }
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
        merge(manifest, run.finish(elapsed.count()));
        write_file(manifest_path, manifest.to_json().dump(2) + "\n");
    }
    return manifest;
}

} // namespace drugrec
