#include "sknn/corpus.hpp"

#include "helpers.hpp"
#include "sknn/taxonomy.hpp"
#include "sknn/vocab.hpp"

#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

using namespace sknn;
using namespace sknn::test;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::map<std::string, std::uint64_t> unigram_counts(std::span<const RawRecord> records,
                                                    std::uint16_t style) {
    std::map<std::string, std::uint64_t> counts;
    for (const auto& rec : records) {
        if (rec.locality.style_id != style) continue;
        for (const auto& tok : tokenize_text(rec.text)) ++counts[tok];
    }
    return counts;
}

} // namespace

TEST_CASE("taxonomy: reference counts and category mapping") {
    const auto t = reference_taxonomy();
    CHECK(t.style_count() == 9);
    CHECK(t.source_count() == 5);
    CHECK(t.named_category_count() == 2);

    const auto positive = t.category_index("positive").value();
    const auto negative = t.category_index("negative").value();
    for (const char* s : {"formal", "polite", "supportive"}) {
        CHECK(t.category_of_style(t.style_index(s).value()) == positive);
    }
    for (const char* s : {"informal", "impolite", "offensive", "toxic"}) {
        CHECK(t.category_of_style(t.style_index(s).value()) == negative);
    }
    CHECK(t.category_of_style(t.style_index("neutral").value()) == t.neutral_category());
    CHECK(t.category_of_style(t.style_index("wiki_neutral_text").value()) ==
          t.neutral_category());
}

TEST_CASE("taxonomy: serialize/parse round-trip preserves the fingerprint") {
    const auto t = reference_taxonomy();
    const auto again = StyleTaxonomy::parse(t.serialize());
    CHECK(again.serialize() == t.serialize());
    CHECK(again.fingerprint() == t.fingerprint());
    // comments and blank lines do not change identity
    const auto commented = StyleTaxonomy::parse("# hello\n\n" + t.serialize());
    CHECK(commented.fingerprint() == t.fingerprint());
}

TEST_CASE("taxonomy: rejects duplicates and unknown categories") {
    CHECK_THROWS_AS(StyleTaxonomy::parse("category a\nstyle x a\nstyle x a\nsource s\n"),
                    DataError);
    CHECK_THROWS_AS(StyleTaxonomy::parse("category a\nstyle x b\nsource s\n"), DataError);
    CHECK_THROWS_AS(StyleTaxonomy::parse("category a\nsource s\n"), DataError);
}

TEST_CASE("taxonomy: descriptor validity") {
    const auto t = two_style_taxonomy();
    const auto d = t.descriptor(0, 1);
    CHECK(t.valid(d));
    LocalityDescriptor broken = d;
    broken.category_id = static_cast<std::uint16_t>(d.category_id + 1);
    CHECK_FALSE(t.valid(broken));
}

TEST_CASE("tokenizer: lowercase, whitespace, punctuation peeling") {
    CHECK(tokenize_text("") == std::vector<std::string>{});
    CHECK(tokenize_text("   \t\n ") == std::vector<std::string>{});
    CHECK(tokenize_text("Hello, World!") ==
          std::vector<std::string>{"hello", ",", "world", "!"});
    CHECK(tokenize_text("don't stop") == std::vector<std::string>{"don't", "stop"});
    CHECK(tokenize_text("\"Quoted.\"") == std::vector<std::string>{"\"", "quoted", ".", "\""});
    CHECK(tokenize_text("...") == std::vector<std::string>{".", ".", "."});
    CHECK(tokenize_text("<url>") == std::vector<std::string>{"<", "url", ">"});
}

TEST_CASE("vocabulary: min count boundary and unknown mapping") {
    std::map<std::string, std::uint64_t> counts{{"a", 2}, {"b", 1}};
    const auto v = Vocabulary::from_counts(counts, 2);
    CHECK(v.contains("a"));
    CHECK_FALSE(v.contains("b"));
    CHECK(v.id("b") == Vocabulary::kUnk);
    CHECK(v.encode("a b") == std::vector<std::uint32_t>{v.id("a"), Vocabulary::kUnk});
}

TEST_CASE("vocabulary: deterministic id assignment, count then lexicographic") {
    std::map<std::string, std::uint64_t> counts{{"b", 2}, {"a", 2}, {"c", 5}};
    const auto v = Vocabulary::from_counts(counts, 1);
    CHECK(v.id("c") == Vocabulary::kSpecialCount);     // highest count first
    CHECK(v.id("a") == Vocabulary::kSpecialCount + 1); // tie broken lexicographically
    CHECK(v.id("b") == Vocabulary::kSpecialCount + 2);
    for (std::uint32_t i = 0; i < v.size(); ++i) CHECK(v.id(v.token(i)) == i);
}

TEST_CASE("vocabulary: rebuilding from the same corpus is bit-identical") {
    const auto taxonomy = two_style_taxonomy();
    const auto records = generate_synthetic_corpus(taxonomy, 500, 99);
    const auto v1 = build_vocabulary(records, 5);
    const auto v2 = build_vocabulary(records, 5);
    ByteWriter w1, w2;
    v1.serialize(w1);
    v2.serialize(w2);
    CHECK(w1.data() == w2.data());
    CHECK(v1.size() > Vocabulary::kSpecialCount);
}

TEST_CASE("vocabulary: raising min_count never grows the vocabulary") {
    const auto taxonomy = two_style_taxonomy();
    const auto records = generate_synthetic_corpus(taxonomy, 60, 5);
    std::uint32_t last = UINT32_MAX;
    for (std::uint32_t mc : {1u, 2u, 3u, 5u, 8u, 20u}) {
        const auto v = build_vocabulary(records, mc);
        CHECK(v.size() <= last);
        last = v.size();
    }
    CHECK_THROWS_AS(build_vocabulary(records, 0), ConfigError);
}

TEST_CASE("vocabulary: encode never exceeds the vocabulary, round-trips in-vocab text") {
    const auto taxonomy = two_style_taxonomy();
    const auto records = generate_synthetic_corpus(taxonomy, 40, 3);
    const auto v = build_vocabulary(records, 1);
    for (const auto& rec : records) {
        const auto ids = v.encode(rec.text);
        const auto words = tokenize_text(rec.text);
        REQUIRE(ids.size() == words.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            CHECK(ids[i] < v.size());
            if (rec.split == Split::train) {
                // train tokens all made min_count=1, so the round trip is exact
                CHECK(v.token(ids[i]) == words[i]);
            }
        }
    }
    CHECK(v.encode("").empty());
    const auto unknowns = v.encode("zzz qqq www");
    REQUIRE(unknowns.size() == 3);
    for (auto id : unknowns) CHECK(id == Vocabulary::kUnk);
}

TEST_CASE("ingest: resolves names, derives category, defaults split to train") {
    const auto taxonomy = reference_taxonomy();
    TempDir dir("ingest");
    // Appendix-style sample row: supportive text from the ruddit source.
    write_text(dir.file("c.jsonl"),
               R"({"text":"So so awesome. Really want to see more.","style":"supportive","source":"ruddit"})"
               "\n");
    const auto records = ingest_jsonl(dir.file("c.jsonl"), taxonomy);
    REQUIRE(records.size() == 1);
    CHECK(records[0].locality.style_id == taxonomy.style_index("supportive").value());
    CHECK(records[0].locality.source_id == taxonomy.source_index("ruddit").value());
    CHECK(records[0].locality.category_id == taxonomy.category_index("positive").value());
    CHECK(records[0].split == Split::train);
    CHECK_FALSE(records[0].split_explicit);
}

TEST_CASE("ingest: empty file, unknown names, malformed JSON") {
    const auto taxonomy = reference_taxonomy();
    TempDir dir("ingest_err");

    write_text(dir.file("empty.jsonl"), "");
    CHECK(ingest_jsonl(dir.file("empty.jsonl"), taxonomy).empty());

    write_text(dir.file("bad_style.jsonl"),
               R"({"text":"x","style":"angry","source":"ruddit"})" "\n");
    try {
        ingest_jsonl(dir.file("bad_style.jsonl"), taxonomy);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
        CHECK(std::string(e.what()).find("angry") != std::string::npos);
    }

    write_text(dir.file("bad_json.jsonl"),
               R"({"text":"ok","style":"formal","source":"gyafc"})" "\n" "{oops\n");
    try {
        ingest_jsonl(dir.file("bad_json.jsonl"), taxonomy);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }

    write_text(dir.file("bad_split.jsonl"),
               R"({"text":"x","style":"formal","source":"gyafc","split":"dev"})" "\n");
    CHECK_THROWS_AS(ingest_jsonl(dir.file("bad_split.jsonl"), taxonomy), DataError);
}

TEST_CASE("ingest: explicit split honored; auto-split covers the rest 80/10/10") {
    const auto taxonomy = reference_taxonomy();
    TempDir dir("split");
    std::string text;
    for (int i = 0; i < 400; ++i) {
        text += R"({"text":"w)" + std::to_string(i) +
                R"(","style":"formal","source":"gyafc")";
        if (i == 0) text += R"(,"split":"test")";
        text += "}\n";
    }
    write_text(dir.file("c.jsonl"), text);
    auto records = ingest_jsonl(dir.file("c.jsonl"), taxonomy);
    assign_default_splits(records);
    CHECK(records[0].split == Split::test); // explicit wins

    std::size_t train = 0, valid = 0, test = 0;
    for (const auto& r : records) {
        if (r.split == Split::train) ++train;
        if (r.split == Split::valid) ++valid;
        if (r.split == Split::test) ++test;
    }
    CHECK(train > 280);
    CHECK(valid > 10);
    CHECK(test > 10);

    auto again = ingest_jsonl(dir.file("c.jsonl"), taxonomy);
    assign_default_splits(again);
    for (std::size_t i = 0; i < records.size(); ++i) CHECK(records[i].split == again[i].split);
}

TEST_CASE("documents: every record gains a trailing EOS") {
    const auto taxonomy = two_style_taxonomy();
    const auto records = generate_synthetic_corpus(taxonomy, 5, 1);
    const auto vocab = build_vocabulary(records, 1);
    const auto docs = make_documents(records, vocab);
    REQUIRE(docs.size() == records.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        REQUIRE(!docs[i].tokens.empty());
        CHECK(docs[i].tokens.back() == Vocabulary::kEos);
        CHECK(docs[i].locality == records[i].locality);
        CHECK(docs[i].tokens.size() == tokenize_text(records[i].text).size() + 1);
    }
}

TEST_CASE("synthetic corpus: determinism and shape") {
    const auto taxonomy = two_style_taxonomy();
    const auto a = generate_synthetic_corpus(taxonomy, 10, 42);
    const auto b = generate_synthetic_corpus(taxonomy, 10, 42);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].text == b[i].text);
        CHECK(a[i].locality == b[i].locality);
        CHECK(a[i].split == b[i].split);
    }
    const auto c = generate_synthetic_corpus(taxonomy, 10, 43);
    CHECK(a[0].text != c[0].text);

    const auto single = generate_synthetic_corpus(taxonomy, 1, 7);
    REQUIRE(single.size() == 2);
    CHECK(single[0].locality.style_id != single[1].locality.style_id);
    CHECK_THROWS_AS(generate_synthetic_corpus(taxonomy, 0, 7), ConfigError);
}

TEST_CASE("synthetic corpus: sources rotate within each style") {
    const auto taxonomy = two_style_taxonomy();
    const auto records = generate_synthetic_corpus(taxonomy, 6, 11);
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(records[i].locality.source_id == (i % 6) % taxonomy.source_count());
    }
}

TEST_CASE("synthetic corpus: styles are statistically distinguishable (chi-squared)") {
    const auto taxonomy = two_style_taxonomy();
    const auto records = generate_synthetic_corpus(taxonomy, 100, 2024);

    const auto counts0 = unigram_counts(records, 0);
    const auto counts1 = unigram_counts(records, 1);
    std::set<std::string> tokens;
    for (const auto& [t, c] : counts0) tokens.insert(t);
    for (const auto& [t, c] : counts1) tokens.insert(t);

    double n0 = 0, n1 = 0;
    for (const auto& [t, c] : counts0) n0 += static_cast<double>(c);
    for (const auto& [t, c] : counts1) n1 += static_cast<double>(c);

    // two-sample homogeneity statistic over the union of tokens
    double chi2 = 0.0;
    std::size_t cells = 0;
    for (const auto& t : tokens) {
        const double c0 = counts0.count(t) ? static_cast<double>(counts0.at(t)) : 0.0;
        const double c1 = counts1.count(t) ? static_cast<double>(counts1.at(t)) : 0.0;
        const double total = c0 + c1;
        if (total < 5.0) continue; // standard small-expected-count guard
        const double e0 = total * n0 / (n0 + n1);
        const double e1 = total * n1 / (n0 + n1);
        chi2 += (c0 - e0) * (c0 - e0) / e0 + (c1 - e1) * (c1 - e1) / e1;
        ++cells;
    }
    REQUIRE(cells > 10);
    const double p = test::chi2_sf(chi2, static_cast<double>(cells - 1));
    CHECK(p < 0.01);

    // styles overlap: the shared pool appears on both sides
    std::size_t shared = 0;
    for (const auto& [t, c] : counts0) {
        if (counts1.count(t)) ++shared;
    }
    CHECK(shared > 10);
}

TEST_CASE("corpus bundle round-trips byte-identically") {
    const auto taxonomy = four_style_taxonomy();
    const auto records = generate_synthetic_corpus(taxonomy, 12, 5);
    const auto bundle = prepare_bundle(taxonomy, records, 2);

    const auto bytes = bundle.serialize();
    const auto back = CorpusBundle::deserialize(bytes);
    CHECK(back.serialize() == bytes);
    CHECK(back.taxonomy_fp() == taxonomy.fingerprint());
    CHECK(back.vocab.size() == bundle.vocab.size());
    CHECK(back.documents.size() == bundle.documents.size());

    TempDir dir("bundle");
    bundle.save(dir.file("c.skcp"));
    const auto loaded = CorpusBundle::load(dir.file("c.skcp"));
    CHECK(loaded.serialize() == bytes);
}

TEST_CASE("records_to_jsonl emits loadable lines") {
    const auto taxonomy = two_style_taxonomy();
    const auto records = generate_synthetic_corpus(taxonomy, 4, 9);
    TempDir dir("jsonl");
    atomic_write_file(dir.file("c.jsonl"), records_to_jsonl(records, taxonomy));
    const auto back = ingest_jsonl(dir.file("c.jsonl"), taxonomy);
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].text == records[i].text);
        CHECK(back[i].locality == records[i].locality);
        CHECK(back[i].split == records[i].split); // synthetic splits are explicit
    }
}
