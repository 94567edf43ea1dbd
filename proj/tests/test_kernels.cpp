#include "sknn/kernels.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cstring>
#include <random>
#include <vector>

using namespace sknn;
namespace k = sknn::kernels;

namespace {

// Restores the dispatched backend when a test forces one.
struct BackendGuard {
    k::Backend previous = k::active_backend();
    ~BackendGuard() { k::force_backend(previous); }
};

std::vector<float> random_f32(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> dist(-2.0f, 2.0f);
    std::vector<float> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

std::vector<double> random_f64(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

} // namespace

TEST_CASE("scalar l2sq basics") {
    BackendGuard guard;
    k::force_backend(k::Backend::scalar);

    std::vector<float> a{1.0f, 2.0f, 3.0f};
    std::vector<float> b{1.0f, 0.0f, 7.0f};
    CHECK(k::l2sq_f32(a.data(), b.data(), 3) == doctest::Approx(4.0 + 16.0));
    CHECK(k::l2sq_f32(a.data(), a.data(), 3) == 0.0);
    CHECK(k::l2sq_f32(a.data(), b.data(), 0) == 0.0);
}

TEST_CASE("avx2 kernels agree with scalar within reassociation tolerance") {
    if (!k::backend_available(k::Backend::avx2)) return;
    BackendGuard guard;
    std::mt19937_64 rng(7);

    // Sizes crossing the 8-lane boundaries plus a long one.
    std::vector<std::size_t> sizes{1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 32, 33, 64, 67, 1000};
    for (std::size_t n : sizes) {
        const auto a = random_f32(n, rng);
        const auto b = random_f32(n, rng);
        k::force_backend(k::Backend::scalar);
        const double ref = k::l2sq_f32(a.data(), b.data(), n);
        k::force_backend(k::Backend::avx2);
        const double simd = k::l2sq_f32(a.data(), b.data(), n);
        CHECK(test::rel_err(ref, simd, 1e-300) < 1e-12);

        const auto x = random_f64(n, rng);
        const auto y = random_f64(n, rng);
        k::force_backend(k::Backend::scalar);
        const double dref = k::dot_f64(x.data(), y.data(), n);
        k::force_backend(k::Backend::avx2);
        const double dsimd = k::dot_f64(x.data(), y.data(), n);
        CHECK(test::rel_err(dref, dsimd) < 1e-12);

        auto y1 = y;
        auto y2 = y;
        k::force_backend(k::Backend::scalar);
        k::axpy_f64(0.37, x.data(), y1.data(), n);
        k::force_backend(k::Backend::avx2);
        k::axpy_f64(0.37, x.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(test::rel_err(y1[i], y2[i]) < 1e-12);
    }
}

TEST_CASE("batch distances match per-row calls bit for bit") {
    std::mt19937_64 rng(11);
    const std::size_t dim = 19, count = 57;
    const auto query = random_f32(dim, rng);
    const auto keys = random_f32(dim * count, rng);

    for (k::Backend backend : {k::Backend::scalar, k::Backend::avx2}) {
        if (!k::backend_available(backend)) continue;
        BackendGuard guard;
        k::force_backend(backend);
        std::vector<double> batch(count);
        k::l2sq_batch_f32(query.data(), keys.data(), dim, count, batch.data());
        for (std::size_t r = 0; r < count; ++r) {
            CHECK(batch[r] == k::l2sq_f32(query.data(), keys.data() + r * dim, dim));
        }
    }
}

TEST_CASE("kernels handle unaligned inputs") {
    std::mt19937_64 rng(13);
    const std::size_t n = 40;
    // Buffers offset by one byte, mimicking the datastore key block layout.
    std::vector<std::uint8_t> raw_a(n * sizeof(float) + 1), raw_b(n * sizeof(float) + 1);
    const auto a = random_f32(n, rng);
    const auto b = random_f32(n, rng);
    std::memcpy(raw_a.data() + 1, a.data(), n * sizeof(float));
    std::memcpy(raw_b.data() + 1, b.data(), n * sizeof(float));
    const float* pa = reinterpret_cast<const float*>(raw_a.data() + 1);
    const float* pb = reinterpret_cast<const float*>(raw_b.data() + 1);

    for (k::Backend backend : {k::Backend::scalar, k::Backend::avx2}) {
        if (!k::backend_available(backend)) continue;
        BackendGuard guard;
        k::force_backend(backend);
        const double aligned = k::l2sq_f32(a.data(), b.data(), n);
        const double unaligned = k::l2sq_f32(pa, pb, n);
        CHECK(aligned == unaligned);
    }
}

TEST_CASE("axpy with zero alpha is a no-op") {
    std::mt19937_64 rng(17);
    const auto x = random_f64(33, rng);
    for (k::Backend backend : {k::Backend::scalar, k::Backend::avx2}) {
        if (!k::backend_available(backend)) continue;
        BackendGuard guard;
        k::force_backend(backend);
        auto y = random_f64(33, rng);
        const auto before = y;
        k::axpy_f64(0.0, x.data(), y.data(), y.size());
        CHECK(y == before);
    }
}

TEST_CASE("l2sq is non-negative and ranking-stable across backends") {
    if (!k::backend_available(k::Backend::avx2)) return;
    BackendGuard guard;
    std::mt19937_64 rng(23);
    const std::size_t dim = 16, count = 200;
    const auto keys = random_f32(dim * count, rng);

    for (int trial = 0; trial < 20; ++trial) {
        const auto q = random_f32(dim, rng);
        std::vector<double> scalar_d(count), avx_d(count);
        k::force_backend(k::Backend::scalar);
        k::l2sq_batch_f32(q.data(), keys.data(), dim, count, scalar_d.data());
        k::force_backend(k::Backend::avx2);
        k::l2sq_batch_f32(q.data(), keys.data(), dim, count, avx_d.data());
        for (std::size_t i = 0; i < count; ++i) {
            CHECK(scalar_d[i] >= 0.0);
            CHECK(avx_d[i] >= 0.0);
            CHECK(test::rel_err(scalar_d[i], avx_d[i], 1e-300) < 1e-12);
        }
    }
}
