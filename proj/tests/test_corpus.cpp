#include "doctest.h"

#include <algorithm>
#include <set>

#include "drugrec/corpus.hpp"
#include "drugrec/error.hpp"
#include "drugrec/rng.hpp"
#include "drugrec/util.hpp"
#include "test_support.hpp"

using namespace drugrec;
using drugrec::testing::fixture;
using drugrec::testing::TempDir;

namespace {

const std::string kMinimalXml = R"(<article><front><article-meta>
<title-group><article-title>T</article-title></title-group>
<abstract><p>A</p></abstract>
</article-meta></front></article>)";

std::vector<std::string> fixture_drugs() {
    std::vector<std::string> out;
    for (auto& line : split(read_file(fixture("corpus10/drugs.txt")), '\n')) {
        if (!trim(line).empty()) {
            out.push_back(line);
        }
    }
    return out;
}

std::vector<ParseResult> fixture_docs() {
    std::vector<ParseResult> docs;
    for (const auto* sub : {"pmc", "trials"}) {
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(fixture("corpus10") / sub)) {
            files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const auto bytes = read_file(f);
            docs.push_back(std::string(sub) == "pmc" ? parse_pmc(bytes, f.stem().string())
                                                     : parse_trial(bytes, f.stem().string()));
        }
    }
    return docs;
}

std::set<std::string> ids(const std::vector<Document>& docs) {
    std::set<std::string> out;
    for (const auto& d : docs) {
        out.insert(d.id);
    }
    return out;
}

// Position-by-position scan; independent of the tokenizer in DrugMatcher.
// Assumes `text` uses single spaces.
bool naive_mentions(const std::string& text, const std::vector<std::string>& names) {
    const auto lower = to_lower_ascii(text);
    for (const auto& raw : names) {
        const auto name = to_lower_ascii(raw);
        if (name.empty() || name.size() > lower.size()) {
            continue;
        }
        for (std::size_t i = 0; i + name.size() <= lower.size(); ++i) {
            if (lower.compare(i, name.size(), name) != 0) {
                continue;
            }
            // A boundary is only needed where the name itself starts or ends
            // with a word character.
            const auto word = [](char c) { return is_word_byte(static_cast<unsigned char>(c)); };
            const auto j = i + name.size();
            const bool left = !word(name.front()) || i == 0 || !word(lower[i - 1]);
            const bool right = !word(name.back()) || j == lower.size() || !word(lower[j]);
            if (left && right) {
                return true;
            }
        }
    }
    return false;
}

bool all_space(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\n' || c == '\t'; });
}

void check_chunks(const Document& doc, std::size_t max) {
    const auto chunks = chunk_document(doc, max);
    std::size_t prev_end = 0;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        const auto& c = chunks[i];
        REQUIRE(c.seq == i);
        CHECK(c.doc_id == doc.id);
        CHECK(c.start >= prev_end);
        CHECK(c.end > c.start);
        CHECK(c.text.size() <= max);
        CHECK(c.text == doc.body.substr(c.start, c.end - c.start));
        CHECK(all_space(std::string_view(doc.body).substr(prev_end, c.start - prev_end)));
        prev_end = c.end;
    }
    CHECK(all_space(std::string_view(doc.body).substr(prev_end)));
    CHECK(chunks == chunk_document(doc, max));
}

} // namespace

TEST_CASE("minimal article XML") {
    const auto r = parse_pmc(kMinimalXml, "fallback");
    const auto* doc = std::get_if<Document>(&r);
    REQUIRE(doc != nullptr);
    CHECK(doc->title == "T");
    CHECK(doc->body == "A");
    CHECK(doc->id == "fallback");
    CHECK(doc->source == Source::pmc);
}

TEST_CASE("article XML rejections and errors") {
    const auto empty_title = parse_pmc(R"(<article><front><article-meta>
<title-group><article-title/></title-group><abstract><p>A</p></abstract>
</article-meta></front></article>)");
    REQUIRE(std::holds_alternative<Rejection>(empty_title));
    CHECK(std::get<Rejection>(empty_title).reason == RejectReason::empty_title);

    const auto no_abstract = parse_pmc(R"(<article><front><article-meta>
<title-group><article-title>T</article-title></title-group><abstract><p>  </p></abstract>
</article-meta></front><body><p>text</p></body></article>)");
    REQUIRE(std::holds_alternative<Rejection>(no_abstract));
    CHECK(std::get<Rejection>(no_abstract).reason == RejectReason::empty_abstract);

    CHECK_THROWS_AS(parse_pmc(kMinimalXml.substr(0, kMinimalXml.size() / 2)), XmlMalformed);
    CHECK_THROWS_AS(parse_pmc("<notes><p>x</p></notes>"), XmlMalformed);
}

TEST_CASE("article body keeps paragraph order and drops figures") {
    const auto r = parse_pmc(read_file(fixture("corpus10/pmc/a01.xml")));
    const auto& doc = std::get<Document>(r);
    CHECK(doc.id == "PMC1001");
    CHECK(doc.title == "Low-dose Aspirin after stroke");
    CHECK(doc.body == "We studied aspirin therapy in 200 patients.\nPatients received 81 mg daily.");

    const auto d2 = std::get<Document>(parse_pmc(read_file(fixture("corpus10/pmc/a02.xml"))));
    CHECK(d2.body == "Metformin lowered HbA1c & weight.\nSecond abstract paragraph.");
}

TEST_CASE("trial records") {
    const auto r = parse_trial(R"({"nct_id": "NCT000", "brief_title": "Title", "brief_summary": "Summary"})");
    const auto& doc = std::get<Document>(r);
    CHECK(doc.id == "NCT000");
    CHECK(doc.source == Source::clinical_trials);
    CHECK(doc.title == "Title");
    CHECK(doc.body == "Summary");

    const auto both = std::get<Document>(
        parse_trial(R"({"id": "NCT9", "brief_title": "T", "brief_summary": "S", "detailed_description": "D"})"));
    CHECK(both.id == "NCT9");
    CHECK(both.body == "S\nD");

    const auto missing = parse_trial(R"({"nct_id": "NCT1", "brief_title": "T"})");
    REQUIRE(std::holds_alternative<Rejection>(missing));
    CHECK(std::get<Rejection>(missing).reason == RejectReason::empty_abstract);

    const auto untitled = parse_trial(R"({"nct_id": "NCT2", "brief_summary": "S"})");
    CHECK(std::get<Rejection>(untitled).reason == RejectReason::empty_title);

    CHECK_THROWS_AS(parse_trial("not json"), JsonMalformed);
    CHECK_THROWS_AS(parse_trial("[1, 2]"), JsonMalformed);
    CHECK_THROWS_AS(parse_trial(R"({"nct_id": "N", "brief_title": 3})"), JsonMalformed);
}

TEST_CASE("drug matching is whole-word and case-insensitive") {
    const std::vector<std::string> aspirin{"aspirin"};
    const DrugMatcher m(aspirin);
    CHECK_FALSE(m.matches("patients on aspirins were excluded"));
    CHECK(m.matches("Aspirin therapy"));
    CHECK(DrugMatcher(std::vector<std::string>{"Aspirin"}).matches("aspirin therapy"));
    CHECK(m.matches("(aspirin)"));
    CHECK_FALSE(m.matches("acetylaspirin"));

    const std::vector<std::string> phrase{"insulin glargine"};
    const DrugMatcher p(phrase);
    CHECK(p.matches("Insulin  Glargine\nweekly"));
    CHECK_FALSE(p.matches("insulin glargines"));
    CHECK_FALSE(p.matches("insulin"));

    CHECK_THROWS_AS(DrugMatcher(std::vector<std::string>{}), EmptyDrugList);
    CHECK_THROWS_AS(DrugMatcher(std::vector<std::string>{"  ", ""}), EmptyDrugList);
}

TEST_CASE("matcher agrees with a naive scan on random texts") {
    const std::vector<std::string> vocab{"aspirin", "Aspirin", "aspirins", "metformin", "insulin", "glargine",
                                         "5-fu",    "x",       "of",       "(",         ")",       ",",
                                         "co-q10",  "naïve",   "-"};
    Rng rng(77);
    for (int round = 0; round < 500; ++round) {
        std::vector<std::string> names;
        const auto n_names = 1 + rng.below(3);
        for (std::size_t i = 0; i < n_names; ++i) {
            names.push_back(vocab[rng.below(vocab.size())]);
            if (rng.coin()) {
                names.back() += " " + vocab[rng.below(vocab.size())];
            }
        }
        std::string text;
        const auto n_tokens = rng.below(12);
        for (std::size_t i = 0; i < n_tokens; ++i) {
            if (i > 0) {
                text += rng.below(4) == 0 ? "" : " ";
            }
            text += vocab[rng.below(vocab.size())];
        }
        bool any_name = std::any_of(names.begin(), names.end(), [](const auto& s) { return !trim(s).empty(); });
        REQUIRE(any_name);
        INFO("text=" << text);
        CHECK(DrugMatcher(names).matches(text) == naive_mentions(text, names));
    }
}

TEST_CASE("ten-document fixture cleaning counts") {
    const auto docs = fixture_docs();
    REQUIRE(docs.size() == 10);
    const auto drugs = fixture_drugs();
    const auto result = filter_by_drug_mention(docs, drugs);
    CHECK(result.report.input == 10);
    CHECK(result.report.empty_removed == 3);
    CHECK(result.report.no_mention_removed == 2);
    CHECK(result.report.retained == 5);
    CHECK(result.report.consistent());
    CHECK(ids(result.retained) == std::set<std::string>{"PMC1001", "PMC1002", "PMC1006", "NCT0001", "NCT0004"});

    CHECK_THROWS_AS(filter_by_drug_mention(docs, std::vector<std::string>{}), EmptyDrugList);
}

TEST_CASE("cleaning rules commute") {
    const auto docs = fixture_docs();
    const auto drugs = fixture_drugs();
    const DrugMatcher matcher(drugs);

    // Emptiness first, then mentions.
    std::vector<Document> a;
    for (const auto& r : docs) {
        if (const auto* d = std::get_if<Document>(&r); d != nullptr && !has_empty_field(*d) && matcher.matches(*d)) {
            a.push_back(*d);
        }
    }
    // Mentions first (rejections have no text and never mention), then emptiness.
    std::vector<Document> mentioned;
    for (const auto& r : docs) {
        if (const auto* d = std::get_if<Document>(&r); d != nullptr && matcher.matches(*d)) {
            mentioned.push_back(*d);
        }
    }
    std::vector<Document> b;
    for (const auto& d : mentioned) {
        if (!has_empty_field(d)) {
            b.push_back(d);
        }
    }
    CHECK(ids(a) == ids(b));
    CHECK(ids(a) == ids(filter_by_drug_mention(docs, drugs).retained));

    // Reversing the input order does not change the retained set.
    std::vector<ParseResult> reversed(docs.rbegin(), docs.rend());
    CHECK(ids(filter_by_drug_mention(reversed, drugs).retained) == ids(a));
}

TEST_CASE("report merge keeps counts consistent") {
    CleaningReport a{10, 3, 2, 5, 1, 0};
    const CleaningReport b{4, 1, 1, 2, 0, 2};
    a += b;
    CHECK(a == CleaningReport{14, 4, 3, 7, 1, 2});
    CHECK(a.consistent());
}

TEST_CASE("chunking examples") {
    const Document small{"d", Source::pmc, "t", "short body\nsecond line"};
    const auto one = chunk_document(small);
    REQUIRE(one.size() == 1);
    CHECK(one[0].start == 0);
    CHECK(one[0].end == small.body.size());
    CHECK(one[0].text == small.body);
    CHECK(one[0].key() == "d#0");

    const Document two{"d", Source::pmc, "t", std::string(800, 'a') + "\n" + std::string(800, 'b')};
    const auto chunks = chunk_document(two, 1200);
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0].start == 0);
    CHECK(chunks[0].end == 800);
    CHECK(chunks[1].start == 801);
    CHECK(chunks[1].end == 1601);
    CHECK(chunks[1].seq == 1);
}

TEST_CASE("oversized paragraphs split on sentences, then words") {
    std::string para;
    for (int i = 0; i < 10; ++i) {
        para += "Sentence number " + std::to_string(i) + " has some words in it. ";
    }
    const Document doc{"d", Source::pmc, "t", std::string(trim(para))};
    const auto chunks = chunk_document(doc, 100);
    REQUIRE(chunks.size() > 1);
    for (const auto& c : chunks) {
        CHECK(c.text.back() == '.');
    }
    check_chunks(doc, 100);

    const Document words{"w", Source::pmc, "t", "alpha beta gamma delta epsilon zeta eta theta"};
    for (const auto& c : chunk_document(words, 11)) {
        CHECK(c.text.size() <= 11);
    }
    check_chunks(words, 11);

    // A single long token in multibyte text is cut on code point boundaries.
    std::string greek;
    for (int i = 0; i < 20; ++i) {
        greek += "\xce\xb1"; // U+03B1
    }
    const Document g{"g", Source::pmc, "t", greek};
    for (const auto& c : chunk_document(g, 7)) {
        CHECK(c.text.size() % 2 == 0);
    }
    check_chunks(g, 7);
}

TEST_CASE("random bodies chunk into ordered, bounded, whitespace-separated spans") {
    const std::vector<std::string> pieces{"word", "a", "longerwordhere", ".", "!", "?", " ", " ", "  ", "\n", "é"};
    Rng rng(5);
    for (int round = 0; round < 300; ++round) {
        std::string body;
        const auto n = 1 + rng.below(200);
        for (std::size_t i = 0; i < n; ++i) {
            body += pieces[rng.below(pieces.size())];
        }
        const auto max = 1 + rng.below(60);
        INFO("round " << round << " max " << max);
        check_chunks(Document{"r", Source::pmc, "t", body}, max);
    }
}

TEST_CASE("ingest writes a store and report") {
    TempDir dir;
    IngestOptions opt;
    opt.pmc_dir = fixture("corpus10/pmc");
    opt.trials_dir = fixture("corpus10/trials");
    opt.drug_names = fixture_drugs();
    opt.out_dir = dir / "store";
    const auto report = ingest_corpus(opt);
    CHECK(report == CleaningReport{10, 3, 2, 5, 0, 0});

    std::vector<Document> stored;
    for_each_document(opt.out_dir, [&](const Document& d) { stored.push_back(d); });
    REQUIRE(stored.size() == 5);
    CHECK(stored.front().id == "PMC1001");
    CHECK(stored.back().id == "NCT0004");
    CHECK(std::filesystem::exists(opt.out_dir / "cleaning_report.json"));
    const auto first = read_file(opt.out_dir / "pmc.jsonl");

    // Malformed and duplicate files are counted outside `input`.
    const auto extra = dir / "pmc";
    std::filesystem::create_directories(extra);
    for (const auto& e : std::filesystem::directory_iterator(opt.pmc_dir)) {
        std::filesystem::copy_file(e.path(), extra / e.path().filename());
    }
    std::filesystem::copy_file(opt.pmc_dir / "a01.xml", extra / "z01.xml");
    write_file(extra / "z02.xml", "<article><front>");
    opt.pmc_dir = extra;
    const auto again = ingest_corpus(opt);
    CHECK(again == CleaningReport{10, 3, 2, 5, 1, 1});
    CHECK(read_file(opt.out_dir / "pmc.jsonl") == first);

    CHECK_THROWS_AS(for_each_document(dir / "nowhere", [](const Document&) {}), MissingFile);
}
