// Command-line front end. Every pipeline stage reads one config file; the
// flags listed per subcommand override the matching config values.
//
// Exit codes: 0 ok, 1 validation error, 2 stage failure, 3 verify mismatch.

#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "drugrec/dataset.hpp"
#include "drugrec/error.hpp"
#include "drugrec/pipeline.hpp"
#include "drugrec/rerank.hpp"
#include "drugrec/search.hpp"

namespace fs = std::filesystem;
using namespace drugrec;

namespace {

enum Exit { ok = 0, validation = 1, stage_failure = 2, verify_mismatch = 3 };

struct Overrides {
    std::string config;
    std::string work;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> k;
    std::optional<double> threshold;
    std::optional<std::size_t> max_chunks;
    std::optional<std::string> embedder;
    std::optional<std::size_t> embed_dim;
    std::optional<std::size_t> embed_epochs;
    std::optional<std::string> teacher;
    std::optional<double> lambda;
    std::optional<std::size_t> distill_epochs;
    std::optional<std::string> tpl;
};

PipelineConfig resolve(const Overrides& o) {
    auto cfg = PipelineConfig::load(o.config);
    if (!o.work.empty()) {
        cfg.paths.work_dir = fs::absolute(o.work);
    }
    if (o.seed) {
        cfg.seed = *o.seed;
    }
    if (o.k) {
        cfg.retrieve_k = *o.k;
    }
    if (o.threshold) {
        cfg.rerank.threshold = *o.threshold;
    }
    if (o.max_chunks) {
        cfg.rerank.max_chunks = *o.max_chunks;
    }
    if (o.embedder) {
        cfg.embedder = *o.embedder;
    }
    if (o.embed_dim) {
        cfg.embed.dim = *o.embed_dim;
    }
    if (o.embed_epochs) {
        cfg.embed.epochs = *o.embed_epochs;
    }
    if (o.teacher) {
        cfg.teacher = *o.teacher;
    }
    if (o.lambda) {
        cfg.distill.lambda = *o.lambda;
    }
    if (o.distill_epochs) {
        cfg.distill.epochs = *o.distill_epochs;
    }
    if (o.tpl) {
        cfg.paths.tpl = fs::absolute(*o.tpl);
    }
    // Re-validate with the overrides applied; seeds are propagated here too.
    const auto base = cfg.base_dir;
    auto checked = PipelineConfig::from_json(cfg.to_json(), o.config + " (with command-line overrides)");
    checked.base_dir = base;
    checked.paths = cfg.paths;
    return checked;
}

void add_common(CLI::App* sub, Overrides& o) {
    sub->add_option("-c,--config", o.config, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("-w,--work", o.work, "work directory (overrides paths.work_dir)");
    sub->add_option("--seed", o.seed, "global seed");
}

void add_stage_flags(CLI::App* sub, std::string_view stage, Overrides& o) {
    if (stage == "train-embed" || stage == "all") {
        sub->add_option("--dim", o.embed_dim, "embedding dimension");
        sub->add_option("--epochs", o.embed_epochs, "embedding epochs");
    }
    if (stage == "retrieve" || stage == "all") {
        sub->add_option("--k", o.k, "BM25 candidates per pair");
    }
    if (stage == "rerank" || stage == "all" || stage == "distill") {
        sub->add_option("--embedder", o.embedder, "hash | bow | remote");
    }
    if (stage == "rerank" || stage == "all") {
        sub->add_option("--threshold", o.threshold, "cosine threshold in [-1, 1]");
        sub->add_option("--max-chunks", o.max_chunks, "chunks kept per pair");
    }
    if (stage == "build-dataset" || stage == "all") {
        sub->add_option("--template", o.tpl, "prompt template file");
    }
    if (stage == "distill" || stage == "all") {
        sub->add_option("--teacher", o.teacher, "reference | stub | remote");
        sub->add_option("--lambda", o.lambda, "rationale loss weight");
        sub->add_option("--distill-epochs", o.distill_epochs, "student epochs");
    }
}

int run_pipeline(const Overrides& o, const std::string& stage) {
    const auto cfg = resolve(o);
    const auto manifest = run_stage(cfg, stage);
    std::cout << "ok: " << stage << " -> " << (cfg.paths.work_dir / artifact::manifest).string() << " (config "
              << manifest.config_digest.substr(0, 12) << ")\n";
    return ok;
}

int cmd_verify(const std::string& path) {
    fs::path p = path;
    if (fs::is_directory(p)) {
        p /= artifact::manifest;
    }
    const auto result = verify_run(p);
    if (result.ok()) {
        std::cout << "verify: ok\n";
        return ok;
    }
    for (const auto& m : result.mismatched) {
        std::cout << "verify: digest mismatch: " << m << "\n";
    }
    return verify_mismatch;
}

int cmd_validate(const std::string& path) {
    const auto report = validate_dataset(path);
    for (const auto& v : report.violations) {
        std::cout << path << ":" << v.line << ": " << v.message << "\n";
    }
    std::cout << report.records << " records, " << report.violations.size() << " violations\n";
    return report.ok() ? ok : validation;
}

int cmd_query(const std::string& index_dir, const std::string& query, std::size_t k) {
    const auto idx = InvertedIndex::load(index_dir);
    for (const auto& r : retrieve_topk(idx, tokenize(query), k)) {
        const auto& c = idx.chunk(r.ref);
        std::cout << r.score << "\t" << c.key << "\t" << c.text.substr(0, 120) << "\n";
    }
    return ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Disease-drug dataset and distillation pipeline"};
    app.require_subcommand(1);

    Overrides o;
    std::string run_target;
    auto* run = app.add_subcommand("run", "run one stage or \"all\"");
    run->add_option("stage", run_target, "stage name or all")->required();
    add_common(run, o);
    add_stage_flags(run, "all", o);

    std::vector<std::pair<std::string, CLI::App*>> stage_cmds;
    for (const auto& name : stage_names()) {
        auto* sub = app.add_subcommand(name, "run the " + name + " stage");
        add_common(sub, o);
        add_stage_flags(sub, name, o);
        stage_cmds.emplace_back(name, sub);
    }

    std::string verify_path;
    auto* verify = app.add_subcommand("verify", "recompute the digests recorded in a run manifest");
    verify->add_option("manifest", verify_path, "manifest.json or its work directory")->required();

    std::string dataset_path;
    auto* validate = app.add_subcommand("validate-dataset", "check every record of a dataset file");
    validate->add_option("dataset", dataset_path, "dataset JSONL")->required();

    std::string index_dir;
    std::string query;
    std::size_t k = 10;
    auto* q = app.add_subcommand("query", "BM25 search over a built index");
    q->add_option("--index", index_dir, "index directory")->required();
    q->add_option("--query", query, "query text")->required();
    q->add_option("--k", k, "results");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : validation;
    }

    try {
        if (*run) {
            return run_pipeline(o, run_target);
        }
        for (const auto& [name, sub] : stage_cmds) {
            if (*sub) {
                return run_pipeline(o, name);
            }
        }
        if (*verify) {
            return cmd_verify(verify_path);
        }
        if (*validate) {
            return cmd_validate(dataset_path);
        }
        if (*q) {
            return cmd_query(index_dir, query, k);
        }
    } catch (const ConfigInvalid& e) {
        std::cerr << "error: " << e.what() << "\n";
        return validation;
    } catch (const MissingInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return validation;
    } catch (const MissingArtifact& e) {
        std::cerr << "error: " << e.what() << "\n";
        return verify_mismatch;
    } catch (const UnreadableFile& e) {
        std::cerr << "error: " << e.what() << "\n";
        return validation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return stage_failure;
    }
    return validation;
}
