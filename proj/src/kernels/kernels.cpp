#include "sknn/kernels.hpp"

#include "sknn/common.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <string>

namespace sknn::kernels {

namespace {

// memcpy loads keep the scalar kernels well-defined on the unaligned
// datastore blocks; compilers lower them to plain moves.
inline float ldf(const float* p) {
    float v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline double ldd(const double* p) {
    double v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void std_(double* p, double v) { std::memcpy(p, &v, sizeof v); }

double l2sq_f32_scalar(const float* a, const float* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = static_cast<double>(ldf(a + i)) - static_cast<double>(ldf(b + i));
        acc += d * d;
    }
    return acc;
}

void l2sq_batch_f32_scalar(const float* query, const float* keys, std::size_t dim,
                           std::size_t count, double* out) {
    for (std::size_t r = 0; r < count; ++r) {
        out[r] = l2sq_f32_scalar(query, keys + r * dim, dim);
    }
}

double dot_f64_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += ldd(a + i) * ldd(b + i);
    return acc;
}

void axpy_f64_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) std_(y + i, ldd(y + i) + alpha * ldd(x + i));
}

std::atomic<const detail::Ops*> g_ops{nullptr};
std::atomic<Backend> g_backend{Backend::scalar};
std::once_flag g_init;

Backend pick_backend() {
    const char* env = std::getenv("SKNN_KERNEL");
    if (env != nullptr && *env != '\0') {
        std::string want(env);
        if (want == "scalar") return Backend::scalar;
        if (want == "avx2") {
            if (!detail::cpu_has_avx2())
                throw ConfigError("SKNN_KERNEL=avx2 but the CPU lacks AVX2/FMA");
            return Backend::avx2;
        }
        throw ConfigError("unknown SKNN_KERNEL value: " + want);
    }
    return detail::cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

void install(Backend b) {
    g_backend.store(b, std::memory_order_relaxed);
    g_ops.store(b == Backend::avx2 ? &detail::avx2_ops() : &detail::scalar_ops(),
                std::memory_order_release);
}

const detail::Ops& ops() {
    std::call_once(g_init, [] { install(pick_backend()); });
    return *g_ops.load(std::memory_order_acquire);
}

} // namespace

const detail::Ops& detail::scalar_ops() {
    static const Ops table{l2sq_f32_scalar, l2sq_batch_f32_scalar, dot_f64_scalar,
                           axpy_f64_scalar};
    return table;
}

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
    }
    return "?";
}

bool backend_available(Backend b) {
    return b == Backend::scalar || detail::cpu_has_avx2();
}

Backend active_backend() {
    ops();
    return g_backend.load(std::memory_order_relaxed);
}

void force_backend(Backend b) {
    if (!backend_available(b)) {
        throw ConfigError(std::string("kernel backend unavailable: ") + backend_name(b));
    }
    ops(); // make sure the once-flag has fired before overriding
    install(b);
}

double l2sq_f32(const float* a, const float* b, std::size_t n) {
    return ops().l2sq_f32(a, b, n);
}

void l2sq_batch_f32(const float* query, const float* keys, std::size_t dim,
                    std::size_t count, double* out) {
    ops().l2sq_batch_f32(query, keys, dim, count, out);
}

double dot_f64(const double* a, const double* b, std::size_t n) {
    return ops().dot_f64(a, b, n);
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
    ops().axpy_f64(alpha, x, y, n);
}

} // namespace sknn::kernels
