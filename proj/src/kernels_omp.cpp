#include "vitssp/kernels.hpp"

#include <omp.h>

#include <atomic>
#include <cmath>

namespace vitssp::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::OpenMP};
}

Backend backend() { return g_backend.load(std::memory_order_relaxed); }
void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }
int thread_count() { return omp_get_max_threads(); }

namespace omp {

// Parallelism is always over independent output rows/slices and each row keeps
// the serial reference's reduction order (ascending k), so results are
// identical for any thread count.

template <class T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        T* cr = c + i * n;
        for (int64_t j = 0; j < n; ++j) cr[j] = 0;
        const T* ar = a + i * k;
        for (int64_t l = 0; l < k; ++l) {
            const T av = ar[l];
            const T* br = b + l * n;
            for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

template <class T>
void matmul_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const T* ar = a + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const T* br = b + j * k;
            T acc = 0;
            for (int64_t l = 0; l < k; ++l) acc += ar[l] * br[l];
            c[i * n + j] = acc;
        }
    }
}

template <class T>
void matmul_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        T* cr = c + i * n;
        for (int64_t j = 0; j < n; ++j) cr[j] = 0;
        for (int64_t l = 0; l < k; ++l) {
            const T av = a[l * m + i];
            const T* br = b + l * n;
            for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

template <class T>
void bmm(const T* a, const T* b, T* c, int64_t bs, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t s = 0; s < bs; ++s) {
        const T* as = a + s * m * k;
        const T* bsu = b + s * k * n;
        T* cs = c + s * m * n;
        for (int64_t i = 0; i < m; ++i) {
            T* cr = cs + i * n;
            for (int64_t j = 0; j < n; ++j) cr[j] = 0;
            for (int64_t l = 0; l < k; ++l) {
                const T av = as[i * k + l];
                const T* br = bsu + l * n;
                for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
            }
        }
    }
}

template <class T>
void bmm_nt(const T* a, const T* b, T* c, int64_t bs, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t s = 0; s < bs; ++s) {
        const T* as = a + s * m * k;
        const T* bsu = b + s * n * k;
        T* cs = c + s * m * n;
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                T acc = 0;
                for (int64_t l = 0; l < k; ++l) acc += as[i * k + l] * bsu[j * k + l];
                cs[i * n + j] = acc;
            }
        }
    }
}

template <class T>
void bmm_tn(const T* a, const T* b, T* c, int64_t bs, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t s = 0; s < bs; ++s) {
        const T* as = a + s * k * m;
        const T* bsu = b + s * k * n;
        T* cs = c + s * m * n;
        for (int64_t i = 0; i < m; ++i) {
            T* cr = cs + i * n;
            for (int64_t j = 0; j < n; ++j) cr[j] = 0;
            for (int64_t l = 0; l < k; ++l) {
                const T av = as[l * m + i];
                const T* br = bsu + l * n;
                for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
            }
        }
    }
}

template <class T>
void softmax_rows(const T* x, T* y, int64_t rows, int64_t d) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x + r * d;
        T* yr = y + r * d;
        T mx = xr[0];
        for (int64_t j = 1; j < d; ++j) mx = xr[j] > mx ? xr[j] : mx;
        T denom = 0;
        for (int64_t j = 0; j < d; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            denom += yr[j];
        }
        T inv = T(1) / denom;
        for (int64_t j = 0; j < d; ++j) yr[j] *= inv;
    }
}

template <class T>
void softmax_rows_grad(const T* y, const T* gy, T* gx, int64_t rows, int64_t d) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        const T* yr = y + r * d;
        const T* gr = gy + r * d;
        T dot = 0;
        for (int64_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
        for (int64_t j = 0; j < d; ++j) gx[r * d + j] = (gr[j] - dot) * yr[j];
    }
}

template <class T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat,
                     T* inv_std, int64_t rows, int64_t d, T eps) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x + r * d;
        T mean = 0;
        for (int64_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<T>(d);
        T var = 0;
        for (int64_t j = 0; j < d; ++j) {
            T dxj = xr[j] - mean;
            var += dxj * dxj;
        }
        var /= static_cast<T>(d);
        T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (int64_t j = 0; j < d; ++j) {
            T xh = (xr[j] - mean) * is;
            xhat[r * d + j] = xh;
            y[r * d + j] = xh * gain[j] + bias[j];
        }
    }
}

template <class T>
void layer_norm_rows_grad(const T* xhat, const T* inv_std, const T* gain, const T* gy,
                          T* gx, T* ggain, T* gbias, int64_t rows, int64_t d) {
    // gain/bias grads are shared across rows; accumulate them serially in row
    // order (identical to the reference) and parallelize only the gx rows.
    for (int64_t r = 0; r < rows; ++r) {
        const T* xh = xhat + r * d;
        const T* gr = gy + r * d;
        for (int64_t j = 0; j < d; ++j) {
            ggain[j] += gr[j] * xh[j];
            gbias[j] += gr[j];
        }
    }
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        const T* xh = xhat + r * d;
        const T* gr = gy + r * d;
        T sum_g = 0, sum_gx = 0;
        for (int64_t j = 0; j < d; ++j) {
            T gh = gr[j] * gain[j];
            sum_g += gh;
            sum_gx += gh * xh[j];
        }
        T inv_d = T(1) / static_cast<T>(d);
        for (int64_t j = 0; j < d; ++j) {
            T gh = gr[j] * gain[j];
            gx[r * d + j] = (gh - sum_g * inv_d - xh[j] * sum_gx * inv_d) * inv_std[r];
        }
    }
}

template <class T>
void l2norm_rows(const T* x, T* y, T* inv_norm, int64_t rows, int64_t d, T eps) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x + r * d;
        T ss = 0;
        for (int64_t j = 0; j < d; ++j) ss += xr[j] * xr[j];
        T in = T(1) / std::sqrt(ss + eps);
        inv_norm[r] = in;
        for (int64_t j = 0; j < d; ++j) y[r * d + j] = xr[j] * in;
    }
}

template <class T>
void l2norm_rows_grad(const T* y, const T* inv_norm, const T* gy, T* gx, int64_t rows,
                      int64_t d) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        const T* yr = y + r * d;
        const T* gr = gy + r * d;
        T dot = 0;
        for (int64_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
        for (int64_t j = 0; j < d; ++j)
            gx[r * d + j] = (gr[j] - yr[j] * dot) * inv_norm[r];
    }
}

template <class T>
void gelu(const T* x, T* y, int64_t n) {
    const T inv_sqrt2 = T(0.70710678118654752440084436210485);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i)
        y[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
}

template <class T>
void gelu_grad(const T* x, const T* gy, T* gx, int64_t n) {
    const T inv_sqrt2 = T(0.70710678118654752440084436210485);
    const T inv_sqrt2pi = T(0.39894228040143267793994605993438);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
        T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
        gx[i] = gy[i] * (cdf + x[i] * pdf);
    }
}

template <class T>
void relu(const T* x, T* y, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_grad(const T* x, const T* gy, T* gx, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) gx[i] = x[i] > T(0) ? gy[i] : T(0);
}

template <class T>
void patchify(const T* images, T* patches, int64_t n, int64_t c, int64_t h, int64_t w,
              int64_t p) {
    const int64_t gh = h / p, gw = w / p;
    const int64_t patch_len = c * p * p;
#pragma omp parallel for schedule(static)
    for (int64_t img = 0; img < n; ++img) {
        for (int64_t py = 0; py < gh; ++py) {
            for (int64_t px = 0; px < gw; ++px) {
                T* dst = patches + (img * gh * gw + py * gw + px) * patch_len;
                for (int64_t ch = 0; ch < c; ++ch) {
                    for (int64_t y = 0; y < p; ++y) {
                        for (int64_t x = 0; x < p; ++x) {
                            *dst++ = images[((img * c + ch) * h + py * p + y) * w +
                                            px * p + x];
                        }
                    }
                }
            }
        }
    }
}

#define VITSSP_INSTANTIATE(T)                                                          \
    template void matmul<T>(const T*, const T*, T*, int64_t, int64_t, int64_t);       \
    template void matmul_nt<T>(const T*, const T*, T*, int64_t, int64_t, int64_t);    \
    template void matmul_tn<T>(const T*, const T*, T*, int64_t, int64_t, int64_t);    \
    template void bmm<T>(const T*, const T*, T*, int64_t, int64_t, int64_t, int64_t); \
    template void bmm_nt<T>(const T*, const T*, T*, int64_t, int64_t, int64_t,        \
                            int64_t);                                                  \
    template void bmm_tn<T>(const T*, const T*, T*, int64_t, int64_t, int64_t,        \
                            int64_t);                                                  \
    template void softmax_rows<T>(const T*, T*, int64_t, int64_t);                     \
    template void softmax_rows_grad<T>(const T*, const T*, T*, int64_t, int64_t);      \
    template void layer_norm_rows<T>(const T*, const T*, const T*, T*, T*, T*,         \
                                     int64_t, int64_t, T);                             \
    template void layer_norm_rows_grad<T>(const T*, const T*, const T*, const T*, T*,  \
                                          T*, T*, int64_t, int64_t);                   \
    template void l2norm_rows<T>(const T*, T*, T*, int64_t, int64_t, T);               \
    template void l2norm_rows_grad<T>(const T*, const T*, const T*, T*, int64_t,       \
                                      int64_t);                                        \
    template void gelu<T>(const T*, T*, int64_t);                                      \
    template void gelu_grad<T>(const T*, const T*, T*, int64_t);                       \
    template void relu<T>(const T*, T*, int64_t);                                      \
    template void relu_grad<T>(const T*, const T*, T*, int64_t);                       \
    template void patchify<T>(const T*, T*, int64_t, int64_t, int64_t, int64_t,        \
                              int64_t);

VITSSP_INSTANTIATE(float)
VITSSP_INSTANTIATE(double)

#undef VITSSP_INSTANTIATE

}  // namespace omp
}  // namespace vitssp::kernels
