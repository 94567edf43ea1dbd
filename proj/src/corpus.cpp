#include "sknn/corpus.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>
#include <map>
#include <random>

namespace sknn {

using nlohmann::json;

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "valid") return Split::valid;
    if (name == "test") return Split::test;
    throw DataError("unknown split name: " + std::string(name));
}

std::vector<RawRecord> ingest_jsonl(const std::filesystem::path& path,
                                    const StyleTaxonomy& taxonomy) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file: " + path.string());

    std::vector<RawRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

        auto fail = [&](const std::string& msg) {
            throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + msg);
        };

        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            fail(std::string("malformed JSON: ") + e.what());
        }
        if (!obj.is_object()) fail("expected a JSON object");
        for (const char* field : {"text", "style", "source"}) {
            if (!obj.contains(field) || !obj[field].is_string()) {
                fail(std::string("missing string field '") + field + "'");
            }
        }

        RawRecord rec;
        rec.text = obj["text"].get<std::string>();
        auto style = taxonomy.style_index(obj["style"].get<std::string>());
        if (!style) fail("unknown style '" + obj["style"].get<std::string>() + "'");
        auto source = taxonomy.source_index(obj["source"].get<std::string>());
        if (!source) fail("unknown source '" + obj["source"].get<std::string>() + "'");
        rec.locality = taxonomy.descriptor(*style, *source);

        if (obj.contains("split")) {
            if (!obj["split"].is_string()) fail("field 'split' must be a string");
            try {
                rec.split = parse_split(obj["split"].get<std::string>());
            } catch (const DataError& e) {
                fail(e.what());
            }
            rec.split_explicit = true;
        }
        records.push_back(std::move(rec));
    }
    if (in.bad()) throw DataError("read failed: " + path.string());
    return records;
}

namespace {

Split split_for_index(std::size_t index) {
    std::uint64_t h = splitmix64(static_cast<std::uint64_t>(index)) % 10;
    if (h < 8) return Split::train;
    return h == 8 ? Split::valid : Split::test;
}

} // namespace

void assign_default_splits(std::vector<RawRecord>& records) {
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!records[i].split_explicit) records[i].split = split_for_index(i);
    }
}

Vocabulary build_vocabulary(std::span<const RawRecord> records, std::uint32_t min_count) {
    if (min_count < 1) throw ConfigError("min_count must be >= 1");
    std::map<std::string, std::uint64_t> counts;
    bool any_train = false;
    for (const auto& rec : records) {
        if (rec.split != Split::train) continue;
        any_train = true;
        for (auto& tok : tokenize_text(rec.text)) ++counts[tok];
    }
    if (!any_train) throw DataError("no training records to build a vocabulary from");
    return Vocabulary::from_counts(counts, min_count);
}

std::vector<Document> make_documents(std::span<const RawRecord> records,
                                     const Vocabulary& vocab) {
    std::vector<Document> docs;
    docs.reserve(records.size());
    for (const auto& rec : records) {
        Document d;
        d.tokens = vocab.encode(rec.text);
        d.tokens.push_back(Vocabulary::kEos);
        d.locality = rec.locality;
        d.split = rec.split;
        docs.push_back(std::move(d));
    }
    return docs;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kSyllables[] = {
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "ka", "ke", "ki",
    "ko", "ku", "la", "le", "li", "lo", "lu", "ma", "me", "mi", "mo", "mu", "na",
    "ne", "ni", "no", "nu", "ra", "re", "ri", "ro", "ru", "sa", "se", "si", "so",
    "su", "ta", "te", "ti", "to", "tu", "va", "ve", "vi", "vo", "vu"};
constexpr std::size_t kSyllableCount = std::size(kSyllables);

std::string synth_word(std::size_t i) {
    std::string w = kSyllables[(i / kSyllableCount) % kSyllableCount];
    w += kSyllables[i % kSyllableCount];
    if (i >= kSyllableCount * kSyllableCount) {
        w += kSyllables[(i / (kSyllableCount * kSyllableCount)) % kSyllableCount];
    }
    return w;
}

constexpr std::size_t kCommonPool = 40;
constexpr std::size_t kCategoryPool = 30;
constexpr std::size_t kStylePool = 20;

} // namespace

std::vector<RawRecord> generate_synthetic_corpus(const StyleTaxonomy& taxonomy,
                                                 std::size_t docs_per_style,
                                                 std::uint64_t seed) {
    if (docs_per_style < 1) throw ConfigError("docs_per_style must be >= 1");

    const std::size_t n_styles = taxonomy.style_count();
    const std::size_t n_sources = taxonomy.source_count();
    const std::size_t n_categories = taxonomy.category_count();

    // Disjoint word pools; the mixture below controls the overlap.
    std::vector<std::string> common, category_words, style_words;
    for (std::size_t i = 0; i < kCommonPool; ++i) common.push_back(synth_word(i));
    for (std::size_t c = 0; c < n_categories; ++c) {
        for (std::size_t i = 0; i < kCategoryPool; ++i) {
            category_words.push_back(synth_word(kCommonPool + c * kCategoryPool + i));
        }
    }
    const std::size_t style_base = kCommonPool + n_categories * kCategoryPool;
    for (std::size_t s = 0; s < n_styles; ++s) {
        for (std::size_t i = 0; i < kStylePool; ++i) {
            style_words.push_back(synth_word(style_base + s * kStylePool + i));
        }
    }

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pool_pick(0, 99);
    std::uniform_int_distribution<std::size_t> len_dist(8, 16);
    std::uniform_int_distribution<std::size_t> common_pick(0, kCommonPool - 1);
    std::uniform_int_distribution<std::size_t> category_pick(0, kCategoryPool - 1);
    std::uniform_int_distribution<std::size_t> style_pick(0, kStylePool - 1);

    std::vector<RawRecord> records;
    records.reserve(n_styles * docs_per_style);
    for (std::size_t s = 0; s < n_styles; ++s) {
        const std::size_t cat = taxonomy.category_of_style(static_cast<std::uint16_t>(s));
        for (std::size_t d = 0; d < docs_per_style; ++d) {
            const std::size_t len = len_dist(rng);
            std::string text;
            for (std::size_t t = 0; t < len; ++t) {
                const int roll = pool_pick(rng); // 35% common, 35% category, 30% style
                const std::string* w;
                if (roll < 35) {
                    w = &common[common_pick(rng)];
                } else if (roll < 70) {
                    w = &category_words[cat * kCategoryPool + category_pick(rng)];
                } else {
                    w = &style_words[s * kStylePool + style_pick(rng)];
                }
                if (!text.empty()) text.push_back(' ');
                text += *w;
            }

            RawRecord rec;
            rec.text = std::move(text);
            rec.locality = taxonomy.descriptor(static_cast<std::uint16_t>(s),
                                               static_cast<std::uint16_t>(d % n_sources));
            rec.split = split_for_index(records.size());
            rec.split_explicit = true;
            records.push_back(std::move(rec));
        }
    }
    return records;
}

std::string records_to_jsonl(std::span<const RawRecord> records,
                             const StyleTaxonomy& taxonomy) {
    std::string out;
    for (const auto& rec : records) {
        json obj;
        obj["text"] = rec.text;
        obj["style"] = taxonomy.style_name(rec.locality.style_id);
        obj["source"] = taxonomy.source_name(rec.locality.source_id);
        if (rec.split_explicit) obj["split"] = split_name(rec.split);
        out += obj.dump();
        out.push_back('\n');
    }
    return out;
}

// ---------------------------------------------------------------------------
// CorpusBundle
// ---------------------------------------------------------------------------

namespace {
constexpr char kBundleMagic[4] = {'S', 'K', 'C', 'P'};
constexpr std::uint32_t kBundleVersion = 1;
} // namespace

std::vector<Document> CorpusBundle::split_documents(Split s) const {
    std::vector<Document> out;
    for (const auto& d : documents) {
        if (d.split == s) out.push_back(d);
    }
    return out;
}

std::string CorpusBundle::serialize() const {
    ByteWriter w;
    w.bytes(kBundleMagic, sizeof kBundleMagic);
    w.u32(kBundleVersion);
    w.str(taxonomy.serialize());
    vocab.serialize(w);
    w.u64(documents.size());
    for (const auto& d : documents) {
        w.u8(static_cast<std::uint8_t>(d.split));
        w.u16(d.locality.style_id);
        w.u16(d.locality.source_id);
        w.u16(d.locality.category_id);
        w.u64(d.tokens.size());
        for (auto t : d.tokens) w.u32(t);
    }
    return w.take();
}

CorpusBundle CorpusBundle::deserialize(std::string_view bytes) {
    ByteReader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kBundleMagic, 4) != 0) throw DataError("not a corpus bundle");
    if (r.u32() != kBundleVersion) throw DataError("unsupported corpus bundle version");

    CorpusBundle b;
    b.taxonomy = StyleTaxonomy::parse(r.str());
    b.vocab = Vocabulary::deserialize(r);
    std::uint64_t n = r.u64();
    b.documents.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        Document d;
        std::uint8_t split = r.u8();
        if (split > 2) throw DataError("corrupt split tag in corpus bundle");
        d.split = static_cast<Split>(split);
        d.locality.style_id = r.u16();
        d.locality.source_id = r.u16();
        d.locality.category_id = r.u16();
        std::uint64_t ntok = r.u64();
        if (ntok == 0) throw DataError("empty document in corpus bundle");
        d.tokens.reserve(ntok);
        for (std::uint64_t t = 0; t < ntok; ++t) {
            std::uint32_t id = r.u32();
            if (id >= b.vocab.size()) throw DataError("token id out of range in bundle");
            d.tokens.push_back(id);
        }
        b.documents.push_back(std::move(d));
    }
    if (!r.done()) throw DataError("trailing bytes in corpus bundle");
    return b;
}

void CorpusBundle::save(const std::filesystem::path& path) const {
    atomic_write_file(path, serialize());
}

CorpusBundle CorpusBundle::load(const std::filesystem::path& path) {
    return deserialize(read_file(path));
}

CorpusBundle prepare_bundle(const StyleTaxonomy& taxonomy,
                            std::span<const RawRecord> records, std::uint32_t min_count) {
    CorpusBundle b;
    b.taxonomy = taxonomy;
    b.vocab = build_vocabulary(records, min_count);
    b.documents = make_documents(records, b.vocab);
    return b;
}

} // namespace sknn
