#include "sknn/datastore.hpp"

#include "helpers.hpp"
#include "sknn/corpus.hpp"
#include "sknn/lm.hpp"

#include <doctest.h>

#include <random>
#include <set>

using namespace sknn;
using namespace sknn::test;

namespace {

struct RandomStore {
    TempDir dir{"rand_store"};
    std::vector<std::vector<float>> keys;
    std::vector<std::uint32_t> values;
    std::vector<LocalityDescriptor> locality;
    std::filesystem::path path;

    RandomStore(std::size_t count, std::uint32_t dim, std::uint64_t seed,
                std::uint16_t n_styles = 4) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<float> coord(-1.0f, 1.0f);
        std::uniform_int_distribution<std::uint32_t> value(0, 99);
        std::uniform_int_distribution<std::uint16_t> style(0, n_styles - 1);
        for (std::size_t i = 0; i < count; ++i) {
            std::vector<float> key(dim);
            for (auto& v : key) v = coord(rng);
            keys.push_back(std::move(key));
            values.push_back(value(rng));
            locality.push_back({style(rng), 0, 0});
        }
        path = dir.file("store.sknn");
        write_raw_datastore(path, dim, keys, values, locality,
                            DistanceKind::squared_l2, Fingerprint{});
    }

    std::vector<float> random_query(std::mt19937_64& rng) const {
        std::uniform_real_distribution<float> coord(-1.0f, 1.0f);
        std::vector<float> q(keys[0].size());
        for (auto& v : q) v = coord(rng);
        return q;
    }
};

// Small trained fixture shared by the build/view tests.
struct PipelineFixture {
    StyleTaxonomy taxonomy = two_style_taxonomy();
    CorpusBundle bundle;
    LMParameters params;

    PipelineFixture() {
        const auto records = generate_synthetic_corpus(taxonomy, 30, 21);
        bundle = prepare_bundle(taxonomy, records, 1);
        LMConfig config;
        config.context_window = 6;
        config.embedding_dim = 12;
        config.hidden_dim = 16;
        config.vocab_size = bundle.vocab.size();
        config.epochs = 2;
        config.seed = 8;
        params = train_lm(config, bundle.documents);
    }
};

} // namespace

TEST_CASE("build: one entry per token, locality copied, metadata-independent keys") {
    PipelineFixture fx;
    TempDir dir("build");
    const auto docs = fx.bundle.split_documents(Split::train);
    std::uint64_t expected = 0;
    for (const auto& d : docs) expected += d.tokens.size();

    const auto header = Datastore::build(fx.params, docs, fx.taxonomy.fingerprint(),
                                         DistanceKind::squared_l2, dir.file("a.sknn"));
    CHECK(header.count == expected);
    CHECK(header.dim == fx.params.config.hidden_dim);

    const auto store = Datastore::open(dir.file("a.sknn"));
    CHECK(store.size() == expected);
    std::uint64_t idx = 0;
    for (const auto& d : docs) {
        for (std::size_t pos = 0; pos < d.tokens.size(); ++pos, ++idx) {
            CHECK(store.value(idx) == d.tokens[pos]);
            CHECK(store.locality(idx) == d.locality);
        }
    }

    // identical text under different styles -> identical keys, different locality
    Document d1, d2;
    d1.tokens = {5, 6, 7, Vocabulary::kEos};
    d2.tokens = d1.tokens;
    d1.locality = fx.taxonomy.descriptor(0, 0);
    d2.locality = fx.taxonomy.descriptor(1, 1);
    std::vector<Document> pair{d1, d2};
    Datastore::build(fx.params, pair, fx.taxonomy.fingerprint(), DistanceKind::squared_l2,
                     dir.file("b.sknn"));
    const auto tiny = Datastore::open(dir.file("b.sknn"));
    REQUIRE(tiny.size() == 8);
    for (std::size_t pos = 0; pos < 4; ++pos) {
        const float* ka = tiny.key(pos);
        const float* kb = tiny.key(pos + 4);
        for (std::uint32_t j = 0; j < tiny.dim(); ++j) CHECK(ka[j] == kb[j]);
        CHECK(tiny.locality(pos) == d1.locality);
        CHECK(tiny.locality(pos + 4) == d2.locality);
    }
}

TEST_CASE("build: rebuilding from the same inputs is byte-identical") {
    PipelineFixture fx;
    TempDir dir("rebuild");
    const auto docs = fx.bundle.split_documents(Split::train);
    Datastore::build(fx.params, docs, fx.taxonomy.fingerprint(), DistanceKind::squared_l2,
                     dir.file("a.sknn"));
    Datastore::build(fx.params, docs, fx.taxonomy.fingerprint(), DistanceKind::squared_l2,
                     dir.file("b.sknn"));
    CHECK(read_file(dir.file("a.sknn")) == read_file(dir.file("b.sknn")));
}

TEST_CASE("open: rejects corrupt files") {
    TempDir dir("corrupt");
    atomic_write_file(dir.file("short.sknn"), "SKNN");
    CHECK_THROWS_AS(Datastore::open(dir.file("short.sknn")), DataError);

    RandomStore fixture(10, 4, 1);
    auto bytes = read_file(fixture.path);
    atomic_write_file(dir.file("trunc.sknn"), bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(Datastore::open(dir.file("trunc.sknn")), DataError);
    atomic_write_file(dir.file("magic.sknn"), "XXXX" + bytes.substr(4));
    CHECK_THROWS_AS(Datastore::open(dir.file("magic.sknn")), DataError);
}

TEST_CASE("knn_exact: trivial hits and bounds") {
    RandomStore fixture(50, 8, 3);
    const auto store = Datastore::open(fixture.path);

    // query equal to a stored key -> that entry first at distance 0
    std::vector<float> q = fixture.keys[17];
    const auto hits = knn_exact(store, q, 5);
    REQUIRE(hits.size() == 5);
    CHECK(hits[0].index == 17);
    CHECK(hits[0].distance == 0.0);
    CHECK(hits[0].value == fixture.values[17]);

    // k >= count -> everything, sorted
    const auto all = knn_exact(store, q, 500);
    CHECK(all.size() == 50);
    for (std::size_t i = 1; i < all.size(); ++i) {
        CHECK(all[i].distance >= all[i - 1].distance);
    }

    CHECK_THROWS_AS(knn_exact(store, std::vector<float>{1.0f}, 3), ConfigError);
    CHECK_THROWS_AS(knn_exact(store, q, 0), ConfigError);
}

TEST_CASE("knn_exact: matches the naive full-sort oracle on random fixtures") {
    RandomStore fixture(1000, 16, 42);
    const auto store = Datastore::open(fixture.path);
    std::mt19937_64 rng(7);

    for (int trial = 0; trial < 100; ++trial) {
        const auto q = fixture.random_query(rng);
        const auto expect = knn_oracle(fixture.keys, q, 10);
        const auto got = knn_exact(store, q, 10);
        REQUIRE(got.size() == expect.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].index == expect[i].index);
            // the active backend may reassociate the f64 accumulation
            CHECK(rel_err(got[i].distance, expect[i].distance, 1e-300) < 1e-12);
        }
    }
}

TEST_CASE("knn_exact: duplicate keys tie-break by ascending entry index") {
    std::vector<std::vector<float>> keys(6, std::vector<float>{1.0f, 1.0f});
    std::vector<std::uint32_t> values{0, 1, 2, 3, 4, 5};
    std::vector<LocalityDescriptor> locs(6);
    TempDir dir("ties");
    write_raw_datastore(dir.file("t.sknn"), 2, keys, values, locs,
                        DistanceKind::squared_l2, Fingerprint{});
    const auto store = Datastore::open(dir.file("t.sknn"));
    const auto hits = knn_exact(store, std::vector<float>{1.0f, 1.0f}, 4);
    REQUIRE(hits.size() == 4);
    for (std::size_t i = 0; i < hits.size(); ++i) {
        CHECK(hits[i].index == i);
        CHECK(hits[i].distance == 0.0);
    }
}

TEST_CASE("style view: counts, equivalence with a physically rebuilt store, empty style") {
    PipelineFixture fx;
    TempDir dir("view");
    const auto docs = fx.bundle.split_documents(Split::train);
    Datastore::build(fx.params, docs, fx.taxonomy.fingerprint(), DistanceKind::squared_l2,
                     dir.file("mixed.sknn"));
    const auto mixed = Datastore::open(dir.file("mixed.sknn"));

    std::vector<Document> sunny_docs;
    for (const auto& d : docs) {
        if (d.locality.style_id == 0) sunny_docs.push_back(d);
    }
    Datastore::build(fx.params, sunny_docs, fx.taxonomy.fingerprint(),
                     DistanceKind::squared_l2, dir.file("sunny.sknn"));
    const auto pure = Datastore::open(dir.file("sunny.sknn"));

    const auto view = filter_by_style(mixed, 0);
    CHECK(view.size() == pure.size());

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> coord(-1.0f, 1.0f);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<float> q(mixed.dim());
        for (auto& v : q) v = coord(rng);
        const auto via_view = knn_exact(view, q, 8);
        const auto via_pure = knn_exact(pure, q, 8);
        REQUIRE(via_view.size() == via_pure.size());
        for (std::size_t i = 0; i < via_view.size(); ++i) {
            CHECK(via_view[i].distance == via_pure[i].distance);
            CHECK(via_view[i].value == via_pure[i].value);
            CHECK(via_view[i].locality == via_pure[i].locality);
        }
    }

    // style with no entries -> empty result
    const auto empty_view = filter_by_style(mixed, 1u + 1u);
    CHECK(empty_view.size() == 0);
    std::vector<float> q(mixed.dim(), 0.0f);
    CHECK(knn_exact(empty_view, q, 8).empty());
}

TEST_CASE("locality metadata never affects unfiltered retrieval") {
    RandomStore a(200, 8, 11, 1);
    RandomStore b(200, 8, 11, 5); // same seed -> same keys/values, different styles
    const auto sa = Datastore::open(a.path);
    const auto sb = Datastore::open(b.path);
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const auto q = a.random_query(rng);
        const auto ha = knn_exact(sa, q, 12);
        const auto hb = knn_exact(sb, q, 12);
        REQUIRE(ha.size() == hb.size());
        for (std::size_t i = 0; i < ha.size(); ++i) {
            CHECK(ha[i].index == hb[i].index);
            CHECK(ha[i].distance == hb[i].distance);
        }
    }
}

TEST_CASE("ivf: degenerate cluster counts") {
    RandomStore fixture(40, 6, 17);
    const auto store = Datastore::open(fixture.path);

    const auto one = build_ivf(store, 1, 3);
    CHECK(one.n_clusters() == 1);
    CHECK(one.clusters[0].size() == 40);

    // distinct keys, one cluster per entry -> singleton clusters
    const auto full = build_ivf(store, 40, 3);
    CHECK(full.n_clusters() == 40);
    for (const auto& cluster : full.clusters) CHECK(cluster.size() == 1);

    CHECK_THROWS_AS(build_ivf(store, 0, 3), ConfigError);
    CHECK_THROWS_AS(build_ivf(store, 41, 3), ConfigError);
}

TEST_CASE("ivf: cluster lists partition the store") {
    RandomStore fixture(300, 10, 19);
    const auto store = Datastore::open(fixture.path);
    const auto index = build_ivf(store, 16, 5);

    std::set<std::uint64_t> seen;
    std::uint64_t total = 0;
    for (const auto& cluster : index.clusters) {
        for (auto i : cluster) {
            CHECK(seen.insert(i).second); // no entry twice
            ++total;
        }
    }
    CHECK(total == store.size());
    for (float c : index.centroids) CHECK(std::isfinite(c));
}

TEST_CASE("ivf: probing all clusters reproduces exact search bit for bit") {
    RandomStore fixture(500, 12, 23);
    const auto store = Datastore::open(fixture.path);
    const auto index = build_ivf(store, 20, 7);
    std::mt19937_64 rng(29);

    for (int trial = 0; trial < 50; ++trial) {
        const auto q = fixture.random_query(rng);
        const auto exact = knn_exact(store, q, 16);
        const auto approx = knn_approx(store, index, q, 16, index.n_clusters());
        REQUIRE(exact.size() == approx.size());
        for (std::size_t i = 0; i < exact.size(); ++i) {
            CHECK(exact[i].index == approx[i].index);
            CHECK(exact[i].distance == approx[i].distance);
        }
    }

    CHECK_THROWS_AS(knn_approx(store, index, fixture.random_query(rng), 4, 0), ConfigError);
    CHECK_THROWS_AS(knn_approx(store, index, fixture.random_query(rng), 4, 21), ConfigError);
}

TEST_CASE("ivf: stored-key query hits distance zero when its cluster is probed") {
    RandomStore fixture(120, 8, 31);
    const auto store = Datastore::open(fixture.path);
    const auto index = build_ivf(store, 8, 9);
    const auto hits = knn_approx(store, index, fixture.keys[33], 1, index.n_clusters());
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].index == 33);
    CHECK(hits[0].distance == 0.0);
}

TEST_CASE("ivf: build is deterministic given the seed, file round-trips") {
    RandomStore fixture(150, 8, 37);
    const auto store = Datastore::open(fixture.path);
    const auto a = build_ivf(store, 12, 41);
    const auto b = build_ivf(store, 12, 41);
    CHECK(a.serialize() == b.serialize());
    const auto c = build_ivf(store, 12, 42);
    CHECK(a.serialize() != c.serialize());

    TempDir dir("ivf_io");
    a.save(dir.file("i.skiv"));
    const auto loaded = IvfIndex::load(dir.file("i.skiv"), store);
    CHECK(loaded.serialize() == a.serialize());
}

TEST_CASE("datastore file round-trip: write, read, write is bit-identical") {
    RandomStore fixture(64, 8, 43);
    const auto bytes = read_file(fixture.path);
    const auto store = Datastore::open(fixture.path);

    // re-serialize what the reader exposes
    ByteWriter w;
    w.bytes("SKNN", 4);
    w.u32(store.header().version);
    w.u32(store.dim());
    w.u64(store.size());
    w.u8(static_cast<std::uint8_t>(store.header().distance));
    w.bytes(store.header().taxonomy_fp.data(), store.header().taxonomy_fp.size());
    for (std::uint64_t i = 0; i < store.size(); ++i) {
        float v;
        for (std::uint32_t j = 0; j < store.dim(); ++j) {
            std::memcpy(&v, store.key(i) + j, sizeof v);
            w.f32(v);
        }
    }
    for (std::uint64_t i = 0; i < store.size(); ++i) w.u32(store.value(i));
    for (std::uint64_t i = 0; i < store.size(); ++i) {
        const auto loc = store.locality(i);
        w.u16(loc.style_id);
        w.u16(loc.source_id);
        w.u16(loc.category_id);
    }
    CHECK(w.data() == bytes);
}
