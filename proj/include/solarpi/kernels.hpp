#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "solarpi/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace solarpi::kern {

/// Batch-sized tensors are allocated and freed on every tape; keeping large
/// blocks on the heap free lists (instead of mmap/munmap round trips) takes
/// the page-fault churn out of the training loop.
inline bool tune_allocator() {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
#endif
    return true;
}

inline const bool allocator_tuned = tune_allocator();

/// Worker count for the matmul kernels. SOLARPI_THREADS overrides the
/// hardware default. Partitioning is by output row, so results are
/// bit-identical for any thread count.
inline int thread_count() {
    static const int n = [] {
        if (const char* env = std::getenv("SOLARPI_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1 && v <= 256) return v;
        }
#ifdef _OPENMP
        return std::max(1, omp_get_max_threads());
#else
        return 1;
#endif
    }();
    return n;
}

// C(MxN) = A(MxK) * B(KxN), accumulating into C when acc is set.
inline void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k,
                      int64_t n, bool acc) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (m * n * k > 262144)
#endif
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        if (!acc) std::fill(ci, ci + n, 0.0);
        const double* ai = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C(MxN) = A(MxK) * B(NxK)^T. B is transposed into scratch once (it is a
// weight matrix, small next to A) so the unit-stride kernel applies.
inline void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k,
                      int64_t n, bool acc) {
    std::vector<double> bt(static_cast<size_t>(k * n));
    for (int64_t j = 0; j < n; ++j)
        for (int64_t p = 0; p < k; ++p) bt[static_cast<size_t>(p * n + j)] = b[j * k + p];
    matmul_nn(a, bt.data(), c, m, k, n, acc);
}

// C(KxN) = A(MxK)^T * B(MxN). Rank-1 updates blocked over the reduction
// dimension so each C row is touched once per block instead of once per
// sample. Column-sliced across threads; every output element is produced by
// exactly one thread scanning rows in order, so the result does not depend
// on the thread count.
inline void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k,
                      int64_t n, bool acc) {
    if (!acc) std::fill(c, c + k * n, 0.0);
    constexpr int64_t kBlock = 48;
#ifdef _OPENMP
    const int nt = (m * n * k > 262144) ? thread_count() : 1;
#pragma omp parallel num_threads(nt)
    {
        const int tid = omp_get_thread_num();
        const int tcount = omp_get_num_threads();
        const int64_t j0 = n * tid / tcount;
        const int64_t j1 = n * (tid + 1) / tcount;
#else
    {
        const int64_t j0 = 0, j1 = n;
#endif
        for (int64_t i0 = 0; i0 < m; i0 += kBlock) {
            const int64_t i1 = std::min(m, i0 + kBlock);
            for (int64_t p = 0; p < k; ++p) {
                double* cp = c + p * n;
                for (int64_t i = i0; i < i1; ++i) {
                    const double av = a[i * k + p];
                    const double* bi = b + i * n;
                    for (int64_t j = j0; j < j1; ++j) cp[j] += av * bi[j];
                }
            }
        }
    }
}

inline void add_row_bias(double* x, const double* b, int64_t rows, int64_t cols) {
    for (int64_t i = 0; i < rows; ++i) {
        double* xi = x + i * cols;
        for (int64_t j = 0; j < cols; ++j) xi[j] += b[j];
    }
}

inline void col_sums(const double* x, double* out, int64_t rows, int64_t cols, bool acc) {
    if (!acc) std::fill(out, out + cols, 0.0);
    for (int64_t i = 0; i < rows; ++i) {
        const double* xi = x + i * cols;
        for (int64_t j = 0; j < cols; ++j) out[j] += xi[j];
    }
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// log(1 + e^x), overflow-safe.
inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

struct LstmCellOut {
    Tensor h;      // N x hidden
    Tensor c;      // N x hidden
    Tensor gates;  // N x 4*hidden, post-activation [i f g o], kept for backward
    Tensor tanh_c; // N x hidden
};

/// One gated recurrent step. Gate order in W/b columns is [input, forget,
/// candidate, output]; forget_bias is a fixed additive constant on the
/// forget pre-activation, not a trainable value.
inline LstmCellOut lstm_cell_forward(const Tensor& xh, const Tensor& c_prev, const Tensor& w,
                                     const Tensor& b, double forget_bias) {
    const int64_t n = xh.shape[0];
    const int64_t in_dim = xh.shape[1];
    const int64_t hidden = c_prev.shape[1];
    if (w.shape[0] != in_dim || w.shape[1] != 4 * hidden || b.size() != 4 * hidden)
        throw std::invalid_argument("lstm_cell: weight shape mismatch");

    LstmCellOut out;
    out.gates = Tensor({n, 4 * hidden});
    matmul_nn(xh.data(), w.data(), out.gates.data(), n, in_dim, 4 * hidden, false);
    add_row_bias(out.gates.data(), b.data(), n, 4 * hidden);

    out.h = Tensor({n, hidden});
    out.c = Tensor({n, hidden});
    out.tanh_c = Tensor({n, hidden});
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (n * hidden > 16384)
#endif
    for (int64_t r = 0; r < n; ++r) {
        double* g = out.gates.data() + r * 4 * hidden;
        const double* cp = c_prev.data() + r * hidden;
        double* cn = out.c.data() + r * hidden;
        double* hn = out.h.data() + r * hidden;
        double* tc = out.tanh_c.data() + r * hidden;
        for (int64_t j = 0; j < hidden; ++j) {
            const double gi = sigmoid(g[j]);
            const double gf = sigmoid(g[hidden + j] + forget_bias);
            const double gg = std::tanh(g[2 * hidden + j]);
            const double go = sigmoid(g[3 * hidden + j]);
            g[j] = gi;
            g[hidden + j] = gf;
            g[2 * hidden + j] = gg;
            g[3 * hidden + j] = go;
            cn[j] = gf * cp[j] + gi * gg;
            tc[j] = std::tanh(cn[j]);
            hn[j] = go * tc[j];
        }
    }
    return out;
}

struct BnStats {
    Tensor mean;    // C
    Tensor invstd;  // C
    Tensor var;     // C, biased
};

/// Per-column batch statistics of an N x C tensor.
inline BnStats bn_batch_stats(const Tensor& x, double eps) {
    const int64_t n = x.shape[0], c = x.shape[1];
    BnStats s{Tensor({c}), Tensor({c}), Tensor({c})};
    col_sums(x.data(), s.mean.data(), n, c, false);
    for (int64_t j = 0; j < c; ++j) s.mean[j] /= static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
        const double* xi = x.data() + i * c;
        for (int64_t j = 0; j < c; ++j) {
            const double d = xi[j] - s.mean[j];
            s.var[j] += d * d;
        }
    }
    for (int64_t j = 0; j < c; ++j) {
        s.var[j] = std::max(0.0, s.var[j] / static_cast<double>(n));
        s.invstd[j] = 1.0 / std::sqrt(s.var[j] + eps);
    }
    return s;
}

}  // namespace solarpi::kern
