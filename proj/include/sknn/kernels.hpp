#pragma once

// Numeric inner loops behind the datastore scan and the language model's
// matrix-vector products. Scalar versions are the reference semantics; the
// AVX2 variants are picked at runtime when the CPU supports them and are
// equivalence-tested against the scalar kernels (tests/test_kernels.cpp).
//
// All kernels tolerate unaligned input pointers: the datastore file format
// places the key block at a fixed unaligned offset.

#include <cstddef>

namespace sknn::kernels {

enum class Backend { scalar, avx2 };

const char* backend_name(Backend b);
bool backend_available(Backend b);

// The backend actually in use. Resolved once: the SKNN_KERNEL environment
// variable (scalar|avx2) wins, otherwise the best available backend.
Backend active_backend();

// Overrides the dispatch, primarily for equivalence tests and benchmarks.
void force_backend(Backend b);

// Squared L2 distance between two f32 vectors, accumulated in f64.
double l2sq_f32(const float* a, const float* b, std::size_t n);

// Distances from `query` to `count` contiguous rows of `keys`, one f64 per row.
// Row i uses the same accumulation as l2sq_f32, so batch and single-row paths
// agree bit for bit.
void l2sq_batch_f32(const float* query, const float* keys, std::size_t dim,
                    std::size_t count, double* out);

double dot_f64(const double* a, const double* b, std::size_t n);

// y += alpha * x
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);

namespace detail {

struct Ops {
    double (*l2sq_f32)(const float*, const float*, std::size_t);
    void (*l2sq_batch_f32)(const float*, const float*, std::size_t, std::size_t, double*);
    double (*dot_f64)(const double*, const double*, std::size_t);
    void (*axpy_f64)(double, const double*, double*, std::size_t);
};

const Ops& scalar_ops();
const Ops& avx2_ops(); // defined in kernels_avx2.cpp, compiled with -mavx2 -mfma
bool cpu_has_avx2();

} // namespace detail

} // namespace sknn::kernels
