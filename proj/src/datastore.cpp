#include "sknn/datastore.hpp"

#include "sknn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <queue>
#include <random>

namespace sknn {

namespace {

constexpr char kStoreMagic[4] = {'S', 'K', 'N', 'N'};
constexpr std::uint32_t kStoreVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 8 + 1 + 32;

constexpr char kIvfMagic[4] = {'S', 'K', 'I', 'V'};
constexpr std::uint32_t kIvfVersion = 1;

// Candidate ordering: (distance, index) lexicographic. Using it both for the
// bounded heap and the final sort makes results independent of scan order.
struct Cand {
    double dist;
    std::uint64_t idx;

    bool operator<(const Cand& o) const {
        if (dist != o.dist) return dist < o.dist;
        return idx < o.idx;
    }
};

class TopK {
  public:
    explicit TopK(std::size_t k) : k_(k) {}

    void offer(double dist, std::uint64_t idx) {
        if (heap_.size() < k_) {
            heap_.push({dist, idx});
        } else if (Cand{dist, idx} < heap_.top()) {
            heap_.pop();
            heap_.push({dist, idx});
        }
    }

    std::vector<Cand> sorted_take() {
        std::vector<Cand> out;
        out.reserve(heap_.size());
        while (!heap_.empty()) {
            out.push_back(heap_.top());
            heap_.pop();
        }
        std::sort(out.begin(), out.end());
        return out;
    }

  private:
    std::size_t k_;
    std::priority_queue<Cand> heap_; // worst candidate on top
};

} // namespace

const char* distance_name(DistanceKind k) {
    return k == DistanceKind::squared_l2 ? "squared_l2" : "l2";
}

DistanceKind parse_distance(std::string_view name) {
    if (name == "squared_l2" || name == "sq") return DistanceKind::squared_l2;
    if (name == "l2") return DistanceKind::l2;
    throw ConfigError("unknown distance kind: " + std::string(name));
}

std::vector<float> to_f32(std::span<const double> v) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Build / open
// ---------------------------------------------------------------------------

DatastoreHeader Datastore::build(const LMParameters& params, std::span<const Document> docs,
                                 const Fingerprint& taxonomy_fp, DistanceKind distance,
                                 const std::filesystem::path& out_path) {
    const std::uint32_t d = params.config.hidden_dim;

    std::uint64_t count = 0;
    for (const auto& doc : docs) {
        if (doc.tokens.empty()) throw DataError("cannot index an empty document");
        count += doc.tokens.size();
    }

    DatastoreHeader header;
    header.version = kStoreVersion;
    header.dim = d;
    header.count = count;
    header.distance = distance;
    header.taxonomy_fp = taxonomy_fp;

    AtomicFileWriter out(out_path);
    {
        ByteWriter w;
        w.bytes(kStoreMagic, sizeof kStoreMagic);
        w.u32(header.version);
        w.u32(d);
        w.u64(count);
        w.u8(static_cast<std::uint8_t>(distance));
        w.bytes(taxonomy_fp.data(), taxonomy_fp.size());
        out.write(w.data());
    }

    // Keys are streamed; values and locality are tiny and buffered so the
    // encoder runs once per position.
    ByteWriter values, locality;
    std::vector<double> h(d);
    std::vector<float> key(d);
    ByteWriter key_bytes;
    for (const auto& doc : docs) {
        for (std::size_t pos = 0; pos < doc.tokens.size(); ++pos) {
            encode_into(params, std::span(doc.tokens.data(), pos), h);
            key_bytes = ByteWriter();
            for (std::uint32_t j = 0; j < d; ++j) key_bytes.f32(static_cast<float>(h[j]));
            out.write(key_bytes.data());

            values.u32(doc.tokens[pos]);
            locality.u16(doc.locality.style_id);
            locality.u16(doc.locality.source_id);
            locality.u16(doc.locality.category_id);
        }
    }
    out.write(values.data());
    out.write(locality.data());
    out.commit();
    return header;
}

Datastore Datastore::open(const std::filesystem::path& path) {
    Datastore ds;
    ds.map_ = MappedFile(path);
    if (ds.map_.size() < kHeaderBytes) throw DataError("datastore file too small: " + path.string());

    ByteReader r(ds.map_.view().substr(0, kHeaderBytes));
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kStoreMagic, 4) != 0) {
        throw DataError("not a datastore file: " + path.string());
    }
    ds.header_.version = r.u32();
    if (ds.header_.version != kStoreVersion) {
        throw DataError("unsupported datastore version: " + path.string());
    }
    ds.header_.dim = r.u32();
    ds.header_.count = r.u64();
    std::uint8_t flag = r.u8();
    if (flag > 1) throw DataError("corrupt distance flag: " + path.string());
    ds.header_.distance = static_cast<DistanceKind>(flag);
    r.bytes(ds.header_.taxonomy_fp.data(), ds.header_.taxonomy_fp.size());

    if (ds.header_.dim == 0) throw DataError("datastore key dimension is zero");
    const std::uint64_t n = ds.header_.count;
    const std::uint64_t d = ds.header_.dim;
    ds.keys_off_ = kHeaderBytes;
    ds.values_off_ = ds.keys_off_ + n * d * sizeof(float);
    ds.locality_off_ = ds.values_off_ + n * sizeof(std::uint32_t);
    const std::uint64_t expect = ds.locality_off_ + n * 3 * sizeof(std::uint16_t);
    if (ds.map_.size() != expect) {
        throw DataError("datastore size mismatch (corrupt file?): " + path.string());
    }
    return ds;
}

const float* Datastore::keys_base() const {
    return reinterpret_cast<const float*>(map_.data() + keys_off_);
}

const float* Datastore::key(std::uint64_t i) const {
    return keys_base() + i * header_.dim;
}

std::uint32_t Datastore::value(std::uint64_t i) const {
    std::uint32_t v;
    std::memcpy(&v, map_.data() + values_off_ + i * sizeof v, sizeof v);
    return v;
}

LocalityDescriptor Datastore::locality(std::uint64_t i) const {
    std::uint16_t raw[3];
    std::memcpy(raw, map_.data() + locality_off_ + i * sizeof raw, sizeof raw);
    return {raw[0], raw[1], raw[2]};
}

std::uint16_t Datastore::style_of(std::uint64_t i) const {
    std::uint16_t s;
    std::memcpy(&s, map_.data() + locality_off_ + i * 6, sizeof s);
    return s;
}

// ---------------------------------------------------------------------------
// Exact search
// ---------------------------------------------------------------------------

namespace {

void check_query(const Datastore& store, std::span<const float> query, std::size_t k) {
    if (k < 1) throw ConfigError("knn: k must be >= 1");
    if (query.size() != store.dim()) {
        throw ConfigError("knn: query dimension " + std::to_string(query.size()) +
                          " != key dimension " + std::to_string(store.dim()));
    }
}

std::vector<Neighbor> materialize(const Datastore& store, std::vector<Cand> cands) {
    std::vector<Neighbor> out;
    out.reserve(cands.size());
    for (const auto& c : cands) {
        out.push_back({c.idx, c.dist, store.value(c.idx), store.locality(c.idx)});
    }
    return out;
}

constexpr std::size_t kScanChunk = 4096;

} // namespace

std::vector<Neighbor> knn_exact(const Datastore& store, std::span<const float> query,
                                std::size_t k, std::optional<std::uint16_t> style) {
    check_query(store, query, k);
    TopK top(k);
    if (style.has_value()) {
        for (std::uint64_t i = 0; i < store.size(); ++i) {
            if (store.style_of(i) != *style) continue;
            top.offer(kernels::l2sq_f32(query.data(), store.key(i), store.dim()), i);
        }
    } else {
        double dist[kScanChunk];
        for (std::uint64_t base = 0; base < store.size(); base += kScanChunk) {
            const std::size_t n =
                static_cast<std::size_t>(std::min<std::uint64_t>(kScanChunk, store.size() - base));
            kernels::l2sq_batch_f32(query.data(), store.key(base), store.dim(), n, dist);
            for (std::size_t j = 0; j < n; ++j) top.offer(dist[j], base + j);
        }
    }
    return materialize(store, top.sorted_take());
}

std::uint64_t StyleView::size() const {
    std::uint64_t n = 0;
    for (std::uint64_t i = 0; i < store->size(); ++i) {
        if (store->style_of(i) == style_id) ++n;
    }
    return n;
}

StyleView filter_by_style(const Datastore& store, std::uint16_t style_id) {
    return StyleView{&store, style_id};
}

std::vector<Neighbor> knn_exact(const StyleView& view, std::span<const float> query,
                                std::size_t k) {
    return knn_exact(*view.store, query, k, view.style_id);
}

// ---------------------------------------------------------------------------
// IVF
// ---------------------------------------------------------------------------

IvfIndex build_ivf(const Datastore& store, std::uint32_t n_clusters, std::uint64_t seed) {
    if (n_clusters < 1) throw ConfigError("build_ivf: n_clusters must be >= 1");
    if (n_clusters > store.size()) {
        throw ConfigError("build_ivf: n_clusters exceeds entry count");
    }
    const std::uint32_t d = store.dim();
    const std::uint64_t n = store.size();

    // Initial centroids: n_clusters distinct entries via partial Fisher-Yates.
    std::mt19937_64 rng(seed);
    std::vector<std::uint64_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    for (std::uint32_t i = 0; i < n_clusters; ++i) {
        std::uniform_int_distribution<std::uint64_t> pick(i, n - 1);
        std::swap(ids[i], ids[pick(rng)]);
    }

    IvfIndex index;
    index.dim = d;
    index.entry_count = n;
    index.n_probe_default = std::max<std::uint32_t>(1, n_clusters / 4);
    index.centroids.resize(static_cast<std::size_t>(n_clusters) * d);
    for (std::uint32_t c = 0; c < n_clusters; ++c) {
        std::memcpy(index.centroids.data() + static_cast<std::size_t>(c) * d,
                    store.key(ids[c]), d * sizeof(float));
    }

    constexpr int kIterations = 20;
    std::vector<std::uint32_t> assignment(n, 0);
    std::vector<double> sums;
    std::vector<std::uint64_t> sizes;
    for (int iter = 0; iter < kIterations; ++iter) {
        for (std::uint64_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::uint32_t best_c = 0;
            for (std::uint32_t c = 0; c < n_clusters; ++c) {
                const double dist = kernels::l2sq_f32(
                    index.centroids.data() + static_cast<std::size_t>(c) * d, store.key(i), d);
                if (dist < best) {
                    best = dist;
                    best_c = c;
                }
            }
            assignment[i] = best_c;
        }
        sums.assign(static_cast<std::size_t>(n_clusters) * d, 0.0);
        sizes.assign(n_clusters, 0);
        for (std::uint64_t i = 0; i < n; ++i) {
            double* s = sums.data() + static_cast<std::size_t>(assignment[i]) * d;
            const float* key = store.key(i);
            for (std::uint32_t j = 0; j < d; ++j) {
                float kj;
                std::memcpy(&kj, key + j, sizeof kj);
                s[j] += static_cast<double>(kj);
            }
            ++sizes[assignment[i]];
        }
        for (std::uint32_t c = 0; c < n_clusters; ++c) {
            if (sizes[c] == 0) continue; // empty cluster keeps its centroid
            float* centroid = index.centroids.data() + static_cast<std::size_t>(c) * d;
            const double* s = sums.data() + static_cast<std::size_t>(c) * d;
            for (std::uint32_t j = 0; j < d; ++j) {
                centroid[j] = static_cast<float>(s[j] / static_cast<double>(sizes[c]));
            }
        }
    }

    index.clusters.assign(n_clusters, {});
    for (std::uint64_t i = 0; i < n; ++i) index.clusters[assignment[i]].push_back(i);
    return index;
}

std::vector<Neighbor> knn_approx(const Datastore& store, const IvfIndex& index,
                                 std::span<const float> query, std::size_t k,
                                 std::uint32_t n_probe, std::optional<std::uint16_t> style) {
    check_query(store, query, k);
    if (index.dim != store.dim() || index.entry_count != store.size()) {
        throw ConfigError("IVF index does not match this datastore");
    }
    if (n_probe < 1 || n_probe > index.n_clusters()) {
        throw ConfigError("knn_approx: n_probe out of range");
    }

    std::vector<Cand> by_centroid(index.n_clusters());
    for (std::uint32_t c = 0; c < index.n_clusters(); ++c) {
        by_centroid[c] = {kernels::l2sq_f32(query.data(),
                                            index.centroids.data() +
                                                static_cast<std::size_t>(c) * index.dim,
                                            index.dim),
                          c};
    }
    std::sort(by_centroid.begin(), by_centroid.end());

    TopK top(k);
    for (std::uint32_t p = 0; p < n_probe; ++p) {
        for (std::uint64_t i : index.clusters[by_centroid[p].idx]) {
            if (style.has_value() && store.style_of(i) != *style) continue;
            top.offer(kernels::l2sq_f32(query.data(), store.key(i), store.dim()), i);
        }
    }
    return materialize(store, top.sorted_take());
}

// ---------------------------------------------------------------------------
// IVF persistence
// ---------------------------------------------------------------------------

std::string IvfIndex::serialize() const {
    ByteWriter w;
    w.bytes(kIvfMagic, sizeof kIvfMagic);
    w.u32(kIvfVersion);
    w.u32(dim);
    w.u64(entry_count);
    w.u32(n_clusters());
    w.u32(n_probe_default);
    for (float v : centroids) w.f32(v);
    for (const auto& cluster : clusters) {
        w.u64(cluster.size());
        for (std::uint64_t i : cluster) w.u64(i);
    }
    return w.take();
}

IvfIndex IvfIndex::deserialize(std::string_view bytes) {
    ByteReader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kIvfMagic, 4) != 0) throw DataError("not an IVF index file");
    if (r.u32() != kIvfVersion) throw DataError("unsupported IVF index version");
    IvfIndex index;
    index.dim = r.u32();
    index.entry_count = r.u64();
    const std::uint32_t n_clusters = r.u32();
    index.n_probe_default = r.u32();
    index.centroids.resize(static_cast<std::size_t>(n_clusters) * index.dim);
    for (auto& v : index.centroids) v = r.f32();
    index.clusters.resize(n_clusters);
    std::uint64_t total = 0;
    for (auto& cluster : index.clusters) {
        std::uint64_t len = r.u64();
        cluster.resize(len);
        for (auto& i : cluster) {
            i = r.u64();
            if (i >= index.entry_count) throw DataError("IVF entry index out of range");
        }
        total += len;
    }
    if (total != index.entry_count) throw DataError("IVF cluster lists do not cover the store");
    if (!r.done()) throw DataError("trailing bytes in IVF index");
    return index;
}

void IvfIndex::save(const std::filesystem::path& path) const {
    atomic_write_file(path, serialize());
}

IvfIndex IvfIndex::load(const std::filesystem::path& path, const Datastore& store) {
    IvfIndex index = deserialize(read_file(path));
    if (index.dim != store.dim() || index.entry_count != store.size()) {
        throw ConfigError("IVF index does not match this datastore: " + path.string());
    }
    return index;
}

} // namespace sknn
