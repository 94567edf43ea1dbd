#include "sknn/vocab.hpp"

#include <algorithm>
#include <cctype>

namespace sknn {

namespace {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }
inline char lower(char c) {
    return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

const char* kSpecialNames[Vocabulary::kSpecialCount] = {"<unk>", "<bos>", "<eos>"};

} // namespace

std::vector<std::string> tokenize_text(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        if (j == i) break;

        std::size_t lo = i, hi = j; // [lo, hi) is the core after peeling
        while (lo < hi && is_punct(text[lo])) ++lo;
        while (hi > lo && is_punct(text[hi - 1])) --hi;

        for (std::size_t p = i; p < lo; ++p) out.emplace_back(1, text[p]);
        if (hi > lo) {
            std::string core(text.substr(lo, hi - lo));
            std::transform(core.begin(), core.end(), core.begin(), lower);
            out.push_back(std::move(core));
        }
        for (std::size_t p = hi; p < j; ++p) out.emplace_back(1, text[p]);

        i = j;
    }
    return out;
}

Vocabulary Vocabulary::from_counts(const std::map<std::string, std::uint64_t>& counts,
                                   std::uint32_t min_count) {
    if (min_count < 1) throw ConfigError("min_count must be >= 1");

    struct Item {
        std::uint64_t count;
        const std::string* token;
    };
    std::vector<Item> kept;
    kept.reserve(counts.size());
    for (const auto& [token, count] : counts) {
        if (count >= min_count) kept.push_back({count, &token});
    }
    std::sort(kept.begin(), kept.end(), [](const Item& a, const Item& b) {
        if (a.count != b.count) return a.count > b.count;
        return *a.token < *b.token;
    });

    Vocabulary v;
    v.min_count_ = min_count;
    v.tokens_.reserve(kSpecialCount + kept.size());
    for (const char* s : kSpecialNames) v.tokens_.emplace_back(s);
    for (const auto& item : kept) v.tokens_.push_back(*item.token);
    v.index_.reserve(v.tokens_.size());
    for (std::uint32_t i = 0; i < v.tokens_.size(); ++i) v.index_[v.tokens_[i]] = i;
    return v;
}

std::uint32_t Vocabulary::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::uint32_t id) const {
    if (id >= tokens_.size()) throw ConfigError("token id out of range");
    return tokens_[id];
}

bool Vocabulary::contains(std::string_view token) const {
    return index_.find(std::string(token)) != index_.end();
}

std::vector<std::uint32_t> Vocabulary::encode(std::string_view text) const {
    auto words = tokenize_text(text);
    std::vector<std::uint32_t> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(id(w));
    return ids;
}

std::string Vocabulary::decode(std::span<const std::uint32_t> ids) const {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) s.push_back(' ');
        s += token(ids[i]);
    }
    return s;
}

void Vocabulary::serialize(ByteWriter& w) const {
    w.u32(min_count_);
    w.u32(size());
    for (const auto& t : tokens_) w.str(t);
}

Vocabulary Vocabulary::deserialize(ByteReader& r) {
    Vocabulary v;
    v.min_count_ = r.u32();
    std::uint32_t n = r.u32();
    if (n < kSpecialCount) throw DataError("vocabulary missing special tokens");
    v.tokens_.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) v.tokens_.push_back(r.str());
    for (std::uint32_t i = 0; i < kSpecialCount; ++i) {
        if (v.tokens_[i] != kSpecialNames[i]) {
            throw DataError("vocabulary special tokens corrupted");
        }
    }
    v.index_.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) v.index_[v.tokens_[i]] = i;
    return v;
}

} // namespace sknn
