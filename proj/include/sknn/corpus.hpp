#pragma once

#include "sknn/common.hpp"
#include "sknn/taxonomy.hpp"
#include "sknn/vocab.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sknn {

enum class Split : std::uint8_t { train = 0, valid = 1, test = 2 };

const char* split_name(Split s);
Split parse_split(std::string_view name); // throws DataError on unknown name

struct RawRecord {
    std::string text;
    LocalityDescriptor locality;
    Split split = Split::train;
    bool split_explicit = false; // true when the input line carried a split field
};

struct Document {
    std::vector<std::uint32_t> tokens; // always ends with Vocabulary::kEos
    LocalityDescriptor locality;
    Split split = Split::train;
};

// One JSON object per line: {"text", "style", "source", optional "split"}.
// Style/source names are resolved against the taxonomy; errors name the
// 1-based line number. Records missing `split` default to train.
std::vector<RawRecord> ingest_jsonl(const std::filesystem::path& path,
                                    const StyleTaxonomy& taxonomy);

// 80/10/10 train/valid/test by a hash of the record index, applied only to
// records whose split was not explicit in the input.
void assign_default_splits(std::vector<RawRecord>& records);

// Counts are taken over the train split only.
Vocabulary build_vocabulary(std::span<const RawRecord> records, std::uint32_t min_count);

std::vector<Document> make_documents(std::span<const RawRecord> records,
                                     const Vocabulary& vocab);

// Deterministic styled test corpus. Every style samples from a unigram
// mixture of a shared pool, a per-category pool, and a per-style pool, so
// styles are statistically distinguishable without being disjoint and styles
// of the same category stay closer to each other than across categories.
// Sources rotate per document within each style; splits are pre-assigned
// with the same 80/10/10 rule as assign_default_splits.
std::vector<RawRecord> generate_synthetic_corpus(const StyleTaxonomy& taxonomy,
                                                 std::size_t docs_per_style,
                                                 std::uint64_t seed);

std::string records_to_jsonl(std::span<const RawRecord> records,
                             const StyleTaxonomy& taxonomy);

// Prepared-corpus artifact: frozen taxonomy + vocabulary + tokenized
// documents. Produced by the ingest stage, consumed by everything downstream.
struct CorpusBundle {
    StyleTaxonomy taxonomy;
    Vocabulary vocab = Vocabulary::from_counts({}, 1);
    std::vector<Document> documents;

    Fingerprint taxonomy_fp() const { return taxonomy.fingerprint(); }
    std::vector<Document> split_documents(Split s) const;

    std::string serialize() const;
    static CorpusBundle deserialize(std::string_view bytes);
    void save(const std::filesystem::path& path) const;
    static CorpusBundle load(const std::filesystem::path& path);
};

CorpusBundle prepare_bundle(const StyleTaxonomy& taxonomy,
                            std::span<const RawRecord> records, std::uint32_t min_count);

} // namespace sknn
