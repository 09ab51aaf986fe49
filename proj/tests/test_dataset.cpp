#include "doctest.h"

#include <set>

#include "drugrec/dataset.hpp"
#include "drugrec/error.hpp"
#include "drugrec/rng.hpp"
#include "drugrec/util.hpp"
#include "test_support.hpp"

using namespace drugrec;
using drugrec::testing::TempDir;

namespace {

const std::string kToy = "Q {disease} {candidate_1} {candidate_2} {background_1} {background_2} {format_instructions}";

NamedSet make_set(const std::string& d, const std::string& rel, const std::string& irr,
                  EffectLabel label = EffectLabel::negative) {
    NamedSet s;
    s.disease_id = "Disease::" + d;
    s.relevant_id = "Compound::" + rel;
    s.irrelevant_id = "Compound::" + irr;
    s.disease = d;
    s.relevant = rel;
    s.irrelevant = irr;
    s.effect_label = label;
    return s;
}

// n sets over distinct names, with backgrounds for every candidate.
std::pair<std::vector<NamedSet>, BackgroundMap> fixture_sets(std::size_t n) {
    std::vector<NamedSet> sets;
    BackgroundMap bg;
    for (std::size_t i = 0; i < n; ++i) {
        const auto d = "disease " + std::to_string(i);
        const auto rel = "drug" + std::to_string(i) + "a";
        const auto irr = "drug" + std::to_string(i) + "b";
        sets.push_back(make_set(d, rel, irr, i % 3 == 0 ? EffectLabel::less_positive : EffectLabel::negative));
        bg[{d, rel}] = {{"PMC" + std::to_string(i) + "#0", rel + " lowered symptoms in " + d + "."}};
        if (i % 2 == 0) {
            bg[{d, irr}] = {{"NCT" + std::to_string(i) + "#0", "No effect of " + irr + "."},
                            {"NCT" + std::to_string(i) + "#1", "Adverse events {rare}."}};
        } else {
            bg[{d, irr}] = {};
        }
    }
    return {sets, bg};
}

} // namespace

TEST_CASE("toy template renders every field") {
    const PromptTemplate tpl(kToy, "toy");
    const std::vector<BackgroundChunk> bg{{"s", "x"}};
    const auto out = render_prompt(tpl, {"x", "x", "x", bg, bg});
    CHECK(out == "Q x x x [s] x [s] x " + std::string(kFormatInstructions));
    CHECK(out.find('{') == std::string::npos);
    CHECK(out.find('}') == std::string::npos);

    const auto empty = render_prompt(tpl, {"x", "y", "z", {}, {}});
    CHECK(empty.find("(no background retrieved)") != std::string::npos);
}

TEST_CASE("template validation") {
    CHECK_THROWS_AS(PromptTemplate("{disease} {candidate_1} {background_1} {background_2} {format_instructions}", "v"),
                    MalformedTemplate);
    CHECK_THROWS_AS(PromptTemplate(kToy + " {disease}", "v"), MalformedTemplate);
    CHECK_THROWS_AS(PromptTemplate(kToy + " {patient}", "v"), UnboundPlaceholder);
    CHECK_THROWS_AS(PromptTemplate(kToy + " {", "v"), MalformedTemplate);
    CHECK_THROWS_AS(PromptTemplate(kToy + " }", "v"), MalformedTemplate);
    CHECK_THROWS_AS(PromptTemplate(kToy + " { disease }", "v"), MalformedTemplate);

    const PromptTemplate escaped(kToy + " {{literal}}", "v");
    CHECK(render_prompt(escaped, {"a", "b", "c", {}, {}}).ends_with("{literal}"));

    const auto def = PromptTemplate::default_template();
    CHECK(def.version() == "default-v1");
}

TEST_CASE("template files carry a version") {
    TempDir dir;
    write_file(dir / "t1.txt", "# version: exp-3\n" + kToy);
    const auto t1 = PromptTemplate::load(dir / "t1.txt");
    CHECK(t1.version() == "exp-3");
    CHECK(t1.text() == kToy);
    write_file(dir / "t2.txt", kToy);
    CHECK(PromptTemplate::load(dir / "t2.txt").version() == "sha256:" + sha256_hex(kToy).substr(0, 12));
    write_file(dir / "t3.txt", "{disease}");
    CHECK_THROWS_AS(PromptTemplate::load(dir / "t3.txt"), MalformedTemplate);
}

TEST_CASE("prompts embed every background chunk verbatim") {
    const auto tpl = PromptTemplate::default_template();
    const std::vector<BackgroundChunk> b1{{"PMC1#0", "Albuterol relieved {acute} wheeze."}, {"PMC1#1", "second"}};
    const std::vector<BackgroundChunk> b2{{"NCT1#0", "Montelukast [SEP] maintenance."}};
    const auto p = render_prompt(tpl, {"asthma", "albuterol", "montelukast", b1, b2});
    for (const auto& c : b1) {
        CHECK(p.find(c.text) != std::string::npos);
    }
    CHECK(p.find(b2[0].text) != std::string::npos);
    CHECK(p.find("ANSWER: <1 or 2>") != std::string::npos);
}

TEST_CASE("dataset build is deterministic and labels follow the relevant drug") {
    const auto [sets, bg] = fixture_sets(2);
    const auto tpl = PromptTemplate::default_template();
    TempDir dir;
    const auto a = build_dataset(sets, bg, tpl, 17);
    const auto b = build_dataset(sets, bg, tpl, 17);
    CHECK(write_dataset(dir / "a.jsonl", a.records) == write_dataset(dir / "b.jsonl", b.records));
    CHECK(read_file(dir / "a.jsonl") == read_file(dir / "b.jsonl"));

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto ds = build_dataset(sets, bg, tpl, seed);
        for (std::size_t i = 0; i < ds.records.size(); ++i) {
            const auto& r = ds.records[i];
            CHECK(r.relevant() == sets[i].relevant);
            const auto& other = r.label == 1 ? r.candidate_2 : r.candidate_1;
            CHECK(other == sets[i].irrelevant);
            const auto& rel_bg = r.label == 1 ? r.background_1 : r.background_2;
            CHECK(rel_bg == bg.at({sets[i].disease, sets[i].relevant}));
            CHECK(r.effect_label == sets[i].effect_label);
        }
    }
}

TEST_CASE("four-set fixture passes the validator") {
    const auto [sets, bg] = fixture_sets(4);
    const auto ds = build_dataset(sets, bg, PromptTemplate::default_template(), 5, "cfgdigest");
    CHECK(ds.manifest.records == 4);
    CHECK(ds.manifest.label_1 + ds.manifest.label_2 == 4);
    CHECK(ds.manifest.config_digest == "cfgdigest");
    CHECK(ds.manifest.template_version == "default-v1");
    TempDir dir;
    write_dataset(dir / "d.jsonl", ds.records);
    const auto report = validate_dataset(dir / "d.jsonl");
    CHECK(report.records == 4);
    CHECK(report.ok());
    CHECK(read_dataset(dir / "d.jsonl") == ds.records);

    auto missing = bg;
    missing.erase({sets[2].disease, sets[2].irrelevant});
    CHECK_THROWS_AS(build_dataset(sets, missing, PromptTemplate::default_template(), 5), MissingBackgroundKey);
}

TEST_CASE("validator reports violations by line") {
    const auto [sets, bg] = fixture_sets(3);
    auto records = build_dataset(sets, bg, PromptTemplate::default_template(), 1).records;
    records[1].label = 3;
    records[2].prompt = "nothing useful";
    TempDir dir;
    write_dataset(dir / "d.jsonl", records);
    auto text = read_file(dir / "d.jsonl");
    write_file(dir / "d.jsonl", text + "{not json\n");
    const auto report = validate_dataset(dir / "d.jsonl");
    CHECK(report.records == 4);
    std::set<std::size_t> lines;
    bool chunk_msg = false;
    for (const auto& v : report.violations) {
        lines.insert(v.line);
        chunk_msg = chunk_msg || v.message.rfind("chunk not embedded in prompt", 0) == 0;
    }
    CHECK(lines == std::set<std::size_t>{2, 3, 4});
    CHECK(chunk_msg);
    CHECK(std::any_of(report.violations.begin(), report.violations.end(),
                      [](const Violation& v) { return v.line == 2 && v.message.find("label") != std::string::npos; }));

    CHECK_THROWS_AS(validate_dataset(dir / "absent.jsonl"), UnreadableFile);
}

TEST_CASE("label balance over 100 records") {
    const auto [sets, bg] = fixture_sets(100);
    std::set<std::vector<int>> patterns;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto ds = build_dataset(sets, bg, PromptTemplate::default_template(), seed);
        const double frac = static_cast<double>(ds.manifest.label_1) / 100.0;
        CHECK(frac >= 0.4);
        CHECK(frac <= 0.6);
        std::vector<int> labels;
        for (const auto& r : ds.records) {
            labels.push_back(r.label);
        }
        patterns.insert(labels);
    }
    // The arrangement itself is randomized by the seed.
    CHECK(patterns.size() == 50);
}

TEST_CASE("distinct inputs give distinct prompts") {
    const auto tpl = PromptTemplate::default_template();
    const std::vector<std::string> names{"asthma", "albuterol", "a", "b", "x y", "[s]", "type 2 diabetes", ""};
    Rng rng(12);
    std::map<std::string, std::string> seen; // prompt -> serialized input
    for (int i = 0; i < 2000; ++i) {
        PromptFields f;
        f.disease = names[rng.below(names.size())];
        f.candidate_1 = names[rng.below(names.size())];
        f.candidate_2 = names[rng.below(names.size())];
        for (auto* bg : {&f.background_1, &f.background_2}) {
            const auto n = rng.below(3);
            for (std::size_t k = 0; k < n; ++k) {
                bg->push_back({"S" + std::to_string(rng.below(3)), names[rng.below(names.size())]});
            }
        }
        nlohmann::json key{f.disease, f.candidate_1, f.candidate_2, f.background_1, f.background_2};
        const auto prompt = render_prompt(tpl, f);
        const auto [it, fresh] = seen.emplace(prompt, key.dump());
        CHECK(it->second == key.dump());
    }
}

TEST_CASE("named sets round trip through JSON") {
    const auto s = make_set("asthma", "albuterol", "montelukast", EffectLabel::less_positive);
    CHECK(nlohmann::json(s).get<NamedSet>() == s);
}
