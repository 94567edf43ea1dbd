#pragma once

#include "sknn/common.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sknn {

// The (style, source, category) annotation attached to every datastore entry
// and every query. category_id is denormalized from style_id for query speed;
// valid() on the owning taxonomy checks the pair stays consistent.
struct LocalityDescriptor {
    std::uint16_t style_id = 0;
    std::uint16_t source_id = 0;
    std::uint16_t category_id = 0;

    bool operator==(const LocalityDescriptor&) const = default;
};

// Frozen style/source/category inventory. Styles map to one category each;
// styles declared with the `neutral` keyword fall into an extra internal
// category index (== category_count() - 1) that is never listed by name.
//
// Config format, one directive per line ('#' starts a comment):
//   category <name>
//   style <name> <category-name|neutral>
//   source <name>
// Line order fixes the indices.
class StyleTaxonomy {
  public:
    static StyleTaxonomy parse(std::string_view text);
    static StyleTaxonomy load(const std::filesystem::path& path);

    // Canonical text form; fingerprint() hashes exactly these bytes, so
    // comment or whitespace changes in a config file do not change identity.
    std::string serialize() const;
    void save(const std::filesystem::path& path) const;
    Fingerprint fingerprint() const;

    std::size_t style_count() const { return styles_.size(); }
    std::size_t source_count() const { return sources_.size(); }
    // Includes the internal unassigned slot, so descriptors are always in range.
    std::size_t category_count() const { return categories_.size() + 1; }
    std::size_t named_category_count() const { return categories_.size(); }
    std::uint16_t neutral_category() const {
        return static_cast<std::uint16_t>(categories_.size());
    }

    const std::string& style_name(std::uint16_t id) const;
    const std::string& source_name(std::uint16_t id) const;
    std::string category_name(std::uint16_t id) const; // "neutral" for the internal slot

    std::optional<std::uint16_t> style_index(std::string_view name) const;
    std::optional<std::uint16_t> source_index(std::string_view name) const;
    std::optional<std::uint16_t> category_index(std::string_view name) const;

    std::uint16_t category_of_style(std::uint16_t style_id) const;

    // Builds a full descriptor with the category derived from the style.
    LocalityDescriptor descriptor(std::uint16_t style_id, std::uint16_t source_id) const;

    bool valid(const LocalityDescriptor& d) const;

  private:
    std::vector<std::string> styles_;
    std::vector<std::string> sources_;
    std::vector<std::string> categories_;
    std::vector<std::uint16_t> style_category_; // parallel to styles_
};

} // namespace sknn
