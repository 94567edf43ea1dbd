#pragma once

#include "sknn/common.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sknn {

// Reference tokenizer: lowercase, split on whitespace, then peel ASCII
// punctuation off both ends of each chunk, one token per peeled character.
// Interior punctuation (don't, e.g.) stays inside the token.
std::vector<std::string> tokenize_text(std::string_view text);

class Vocabulary {
  public:
    static constexpr std::uint32_t kUnk = 0;
    static constexpr std::uint32_t kBos = 1;
    static constexpr std::uint32_t kEos = 2;
    static constexpr std::uint32_t kSpecialCount = 3;

    // Tokens with count < min_count are dropped. Ids are dense: specials
    // first, then descending count, ties broken lexicographically.
    static Vocabulary from_counts(const std::map<std::string, std::uint64_t>& counts,
                                  std::uint32_t min_count);

    std::uint32_t size() const { return static_cast<std::uint32_t>(tokens_.size()); }
    std::uint32_t min_count() const { return min_count_; }

    std::uint32_t id(std::string_view token) const; // kUnk when absent
    const std::string& token(std::uint32_t id) const;
    bool contains(std::string_view token) const;

    // tokenize_text + id lookup; total, out-of-vocabulary words become kUnk.
    std::vector<std::uint32_t> encode(std::string_view text) const;
    std::string decode(std::span<const std::uint32_t> ids) const; // space-joined

    void serialize(ByteWriter& w) const;
    static Vocabulary deserialize(ByteReader& r);

  private:
    Vocabulary() = default;

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::uint32_t> index_;
    std::uint32_t min_count_ = 1;
};

// Id-mapping under a frozen vocabulary (the spec-level tokenize operation).
inline std::vector<std::uint32_t> tokenize(std::string_view text, const Vocabulary& vocab) {
    return vocab.encode(text);
}

} // namespace sknn
