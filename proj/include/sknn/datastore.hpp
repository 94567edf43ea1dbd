#pragma once

#include "sknn/common.hpp"
#include "sknn/corpus.hpp"
#include "sknn/lm.hpp"
#include "sknn/taxonomy.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace sknn {

// What the retrieval softmax consumes. Ranking is identical either way;
// knn_* always reports squared L2 and the consumer applies sqrt when the
// store (or an override) says DistanceKind::l2.
enum class DistanceKind : std::uint8_t { squared_l2 = 0, l2 = 1 };

const char* distance_name(DistanceKind k);
DistanceKind parse_distance(std::string_view name);

struct DatastoreHeader {
    std::uint32_t version = 1;
    std::uint32_t dim = 0;
    std::uint64_t count = 0;
    DistanceKind distance = DistanceKind::squared_l2; // query default for this store
    Fingerprint taxonomy_fp{};
};

struct Neighbor {
    std::uint64_t index = 0;   // entry index within the queried store
    double distance = 0.0;     // squared L2, f64 accumulation over f32 keys
    std::uint32_t value = 0;   // next-token id
    LocalityDescriptor locality;
};

// Immutable on-disk array of (key, value, locality) entries, memory-mapped.
// Layout (little-endian): "SKNN", u32 version, u32 dim, u64 count,
// u8 distance flag, 32-byte taxonomy fingerprint, then count*dim f32 keys,
// count u32 values, count*3 u16 locality indices.
class Datastore {
  public:
    // One entry per (context, next-token) position of every document given,
    // in document order then position order. Written atomically.
    static DatastoreHeader build(const LMParameters& params, std::span<const Document> docs,
                                 const Fingerprint& taxonomy_fp, DistanceKind distance,
                                 const std::filesystem::path& out_path);

    static Datastore open(const std::filesystem::path& path);

    const DatastoreHeader& header() const { return header_; }
    std::uint64_t size() const { return header_.count; }
    std::uint32_t dim() const { return header_.dim; }

    const float* key(std::uint64_t i) const;
    std::uint32_t value(std::uint64_t i) const;
    LocalityDescriptor locality(std::uint64_t i) const;
    std::uint16_t style_of(std::uint64_t i) const;

    const float* keys_base() const;

  private:
    Datastore() = default;

    MappedFile map_;
    DatastoreHeader header_;
    std::size_t keys_off_ = 0, values_off_ = 0, locality_off_ = 0;
};

// The k nearest entries under squared L2, ascending distance, ties broken by
// ascending entry index. `style` restricts the scan to entries of one style.
std::vector<Neighbor> knn_exact(const Datastore& store, std::span<const float> query,
                                std::size_t k,
                                std::optional<std::uint16_t> style = std::nullopt);

// Logical single-style datastore over a mixed store. kNN over the view is
// identical to kNN over a physically rebuilt store holding only that style
// (entry indices refer to the mixed store).
struct StyleView {
    const Datastore* store = nullptr;
    std::uint16_t style_id = 0;

    std::uint64_t size() const;
};

StyleView filter_by_style(const Datastore& store, std::uint16_t style_id);
std::vector<Neighbor> knn_exact(const StyleView& view, std::span<const float> query,
                                std::size_t k);

// Inverted-file index: k-means centroids over the keys plus per-cluster entry
// lists. Probing all clusters reproduces the exact search bit for bit.
struct IvfIndex {
    std::uint32_t dim = 0;
    std::uint64_t entry_count = 0; // of the store this was built from
    std::uint32_t n_probe_default = 1;
    std::vector<float> centroids; // n_clusters x dim
    std::vector<std::vector<std::uint64_t>> clusters;

    std::uint32_t n_clusters() const { return static_cast<std::uint32_t>(clusters.size()); }

    std::string serialize() const;
    static IvfIndex deserialize(std::string_view bytes);
    void save(const std::filesystem::path& path) const;
    static IvfIndex load(const std::filesystem::path& path, const Datastore& store);
};

// Seeded k-means (20 iterations, centroids initialized from distinct random
// entries). Requires 1 <= n_clusters <= store.size().
IvfIndex build_ivf(const Datastore& store, std::uint32_t n_clusters, std::uint64_t seed);

std::vector<Neighbor> knn_approx(const Datastore& store, const IvfIndex& index,
                                 std::span<const float> query, std::size_t k,
                                 std::uint32_t n_probe,
                                 std::optional<std::uint16_t> style = std::nullopt);

// f64 -> f32 narrowing used both when building keys and when casting queries,
// so stored and queried vectors round identically.
std::vector<float> to_f32(std::span<const double> v);

} // namespace sknn
