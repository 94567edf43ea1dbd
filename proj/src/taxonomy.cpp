#include "sknn/taxonomy.hpp"

#include <algorithm>
#include <sstream>

namespace sknn {

namespace {

std::vector<std::string> split_ws(std::string_view line) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
        if (j > i) out.emplace_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

template <typename Vec>
bool contains(const Vec& v, std::string_view name) {
    return std::find(v.begin(), v.end(), name) != v.end();
}

} // namespace

StyleTaxonomy StyleTaxonomy::parse(std::string_view text) {
    StyleTaxonomy t;
    struct PendingStyle {
        std::string name;
        std::string category;
        std::size_t line;
    };
    std::vector<PendingStyle> pending;

    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;

        if (auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        auto fields = split_ws(line);
        if (fields.empty()) continue;
        const std::string& kind = fields[0];
        auto fail = [&](const std::string& msg) {
            throw DataError("taxonomy line " + std::to_string(line_no) + ": " + msg);
        };
        if (kind == "category") {
            if (fields.size() != 2) fail("expected: category <name>");
            if (contains(t.categories_, fields[1])) fail("duplicate category " + fields[1]);
            t.categories_.push_back(fields[1]);
        } else if (kind == "style") {
            if (fields.size() != 3) fail("expected: style <name> <category|neutral>");
            pending.push_back({fields[1], fields[2], line_no});
        } else if (kind == "source") {
            if (fields.size() != 2) fail("expected: source <name>");
            if (contains(t.sources_, fields[1])) fail("duplicate source " + fields[1]);
            t.sources_.push_back(fields[1]);
        } else {
            fail("unknown directive " + kind);
        }
    }

    for (const auto& p : pending) {
        auto fail = [&](const std::string& msg) {
            throw DataError("taxonomy line " + std::to_string(p.line) + ": " + msg);
        };
        if (contains(t.styles_, p.name)) fail("duplicate style " + p.name);
        std::uint16_t cat;
        if (p.category == "neutral" && !contains(t.categories_, std::string("neutral"))) {
            cat = t.neutral_category();
        } else {
            auto idx = t.category_index(p.category);
            if (!idx) fail("unknown category " + p.category);
            cat = *idx;
        }
        t.styles_.push_back(p.name);
        t.style_category_.push_back(cat);
    }

    if (t.styles_.empty()) throw DataError("taxonomy declares no styles");
    if (t.sources_.empty()) throw DataError("taxonomy declares no sources");
    if (t.style_count() > UINT16_MAX || t.source_count() > UINT16_MAX) {
        throw DataError("taxonomy too large for u16 indices");
    }
    return t;
}

StyleTaxonomy StyleTaxonomy::load(const std::filesystem::path& path) {
    return parse(read_file(path));
}

std::string StyleTaxonomy::serialize() const {
    std::ostringstream out;
    for (const auto& c : categories_) out << "category " << c << "\n";
    for (std::size_t i = 0; i < styles_.size(); ++i) {
        out << "style " << styles_[i] << " " << category_name(style_category_[i]) << "\n";
    }
    for (const auto& s : sources_) out << "source " << s << "\n";
    return out.str();
}

void StyleTaxonomy::save(const std::filesystem::path& path) const {
    atomic_write_file(path, serialize());
}

Fingerprint StyleTaxonomy::fingerprint() const { return sha256(serialize()); }

const std::string& StyleTaxonomy::style_name(std::uint16_t id) const {
    if (id >= styles_.size()) throw ConfigError("style id out of range");
    return styles_[id];
}

const std::string& StyleTaxonomy::source_name(std::uint16_t id) const {
    if (id >= sources_.size()) throw ConfigError("source id out of range");
    return sources_[id];
}

std::string StyleTaxonomy::category_name(std::uint16_t id) const {
    if (id < categories_.size()) return categories_[id];
    if (id == neutral_category()) return "neutral";
    throw ConfigError("category id out of range");
}

namespace {
template <typename Vec>
std::optional<std::uint16_t> index_of(const Vec& v, std::string_view name) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] == name) return static_cast<std::uint16_t>(i);
    }
    return std::nullopt;
}
} // namespace

std::optional<std::uint16_t> StyleTaxonomy::style_index(std::string_view name) const {
    return index_of(styles_, name);
}

std::optional<std::uint16_t> StyleTaxonomy::source_index(std::string_view name) const {
    return index_of(sources_, name);
}

std::optional<std::uint16_t> StyleTaxonomy::category_index(std::string_view name) const {
    auto idx = index_of(categories_, name);
    if (!idx && name == "neutral") return neutral_category();
    return idx;
}

std::uint16_t StyleTaxonomy::category_of_style(std::uint16_t style_id) const {
    if (style_id >= styles_.size()) throw ConfigError("style id out of range");
    return style_category_[style_id];
}

LocalityDescriptor StyleTaxonomy::descriptor(std::uint16_t style_id,
                                             std::uint16_t source_id) const {
    if (style_id >= styles_.size()) throw ConfigError("style id out of range");
    if (source_id >= sources_.size()) throw ConfigError("source id out of range");
    return {style_id, source_id, style_category_[style_id]};
}

bool StyleTaxonomy::valid(const LocalityDescriptor& d) const {
    return d.style_id < styles_.size() && d.source_id < sources_.size() &&
           d.category_id == style_category_[d.style_id];
}

} // namespace sknn
