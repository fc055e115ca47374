#pragma once

#include <cstdint>

namespace vitssp::kernels {

// Every compute-heavy kernel exists twice: a plain serial reference
// (namespace serial) and an OpenMP version (namespace omp). Both are
// deterministic: each output element is produced by exactly one thread with a
// fixed reduction order, so results do not depend on the thread count. The
// unqualified wrappers dispatch on the process-wide backend.
enum class Backend { Serial, OpenMP };

Backend backend();
void set_backend(Backend b);
int thread_count();

namespace serial {

// c[m x n] = a[m x k] * b[k x n]
template <class T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);

// c[m x n] = a[m x k] * b[n x k]^T
template <class T>
void matmul_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);

// c[m x n] = a[k x m]^T * b[k x n]
template <class T>
void matmul_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);

// batched variants over `bs` independent [m x k] x [k x n] products
template <class T>
void bmm(const T* a, const T* b, T* c, int64_t bs, int64_t m, int64_t k, int64_t n);
template <class T>
void bmm_nt(const T* a, const T* b, T* c, int64_t bs, int64_t m, int64_t k, int64_t n);
template <class T>
void bmm_tn(const T* a, const T* b, T* c, int64_t bs, int64_t m, int64_t k, int64_t n);

// row-wise softmax with max subtraction; x and y are [rows x d]
template <class T>
void softmax_rows(const T* x, T* y, int64_t rows, int64_t d);
// gx = (gy - sum(gy*y)) * y, given forward output y
template <class T>
void softmax_rows_grad(const T* y, const T* gy, T* gx, int64_t rows, int64_t d);

// y = (x - mean) * inv_std * gain + bias per row; saves xhat and inv_std
template <class T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat,
                     T* inv_std, int64_t rows, int64_t d, T eps);
template <class T>
void layer_norm_rows_grad(const T* xhat, const T* inv_std, const T* gain, const T* gy,
                          T* gx, T* ggain, T* gbias, int64_t rows, int64_t d);

// y = x / sqrt(sum(x^2) + eps) per row; saves inv_norm
template <class T>
void l2norm_rows(const T* x, T* y, T* inv_norm, int64_t rows, int64_t d, T eps);
template <class T>
void l2norm_rows_grad(const T* y, const T* inv_norm, const T* gy, T* gx,
                      int64_t rows, int64_t d);

// exact gelu: 0.5 * x * (1 + erf(x / sqrt(2)))
template <class T>
void gelu(const T* x, T* y, int64_t n);
template <class T>
void gelu_grad(const T* x, const T* gy, T* gx, int64_t n);

template <class T>
void relu(const T* x, T* y, int64_t n);
template <class T>
void relu_grad(const T* x, const T* gy, T* gx, int64_t n);

// [n, C, H, W] -> [n, P, C*p*p] with row-major patch order and channel-major
// pixel flattening inside each patch
template <class T>
void patchify(const T* images, T* patches, int64_t n, int64_t c, int64_t h, int64_t w,
              int64_t p);

}  // namespace serial

namespace omp {

template <class T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);
template <class T>
void matmul_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);
template <class T>
void matmul_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);
template <class T>
void bmm(const T* a, const T* b, T* c, int64_t bs, int64_t m, int64_t k, int64_t n);
template <class T>
void bmm_nt(const T* a, const T* b, T* c, int64_t bs, int64_t m, int64_t k, int64_t n);
template <class T>
void bmm_tn(const T* a, const T* b, T* c, int64_t bs, int64_t m, int64_t k, int64_t n);
template <class T>
void softmax_rows(const T* x, T* y, int64_t rows, int64_t d);
template <class T>
void softmax_rows_grad(const T* y, const T* gy, T* gx, int64_t rows, int64_t d);
template <class T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat,
                     T* inv_std, int64_t rows, int64_t d, T eps);
template <class T>
void layer_norm_rows_grad(const T* xhat, const T* inv_std, const T* gain, const T* gy,
                          T* gx, T* ggain, T* gbias, int64_t rows, int64_t d);
template <class T>
void l2norm_rows(const T* x, T* y, T* inv_norm, int64_t rows, int64_t d, T eps);
template <class T>
void l2norm_rows_grad(const T* y, const T* inv_norm, const T* gy, T* gx,
                      int64_t rows, int64_t d);
template <class T>
void gelu(const T* x, T* y, int64_t n);
template <class T>
void gelu_grad(const T* x, const T* gy, T* gx, int64_t n);
template <class T>
void relu(const T* x, T* y, int64_t n);
template <class T>
void relu_grad(const T* x, const T* gy, T* gx, int64_t n);
template <class T>
void patchify(const T* images, T* patches, int64_t n, int64_t c, int64_t h, int64_t w,
              int64_t p);

}  // namespace omp

// ---- backend dispatchers ----

#define VITSSP_DISPATCH(fn, ...)                               \
    do {                                                       \
        if (backend() == Backend::Serial)                      \
            serial::fn(__VA_ARGS__);                           \
        else                                                   \
            omp::fn(__VA_ARGS__);                              \
    } while (0)

template <class T>
inline void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    VITSSP_DISPATCH(matmul, a, b, c, m, k, n);
}
template <class T>
inline void matmul_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    VITSSP_DISPATCH(matmul_nt, a, b, c, m, k, n);
}
template <class T>
inline void matmul_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    VITSSP_DISPATCH(matmul_tn, a, b, c, m, k, n);
}
template <class T>
inline void bmm(const T* a, const T* b, T* c, int64_t bs, int64_t m, int64_t k, int64_t n) {
    VITSSP_DISPATCH(bmm, a, b, c, bs, m, k, n);
}
template <class T>
inline void bmm_nt(const T* a, const T* b, T* c, int64_t bs, int64_t m, int64_t k, int64_t n) {
    VITSSP_DISPATCH(bmm_nt, a, b, c, bs, m, k, n);
}
template <class T>
inline void bmm_tn(const T* a, const T* b, T* c, int64_t bs, int64_t m, int64_t k, int64_t n) {
    VITSSP_DISPATCH(bmm_tn, a, b, c, bs, m, k, n);
}
template <class T>
inline void softmax_rows(const T* x, T* y, int64_t rows, int64_t d) {
    VITSSP_DISPATCH(softmax_rows, x, y, rows, d);
}
template <class T>
inline void softmax_rows_grad(const T* y, const T* gy, T* gx, int64_t rows, int64_t d) {
    VITSSP_DISPATCH(softmax_rows_grad, y, gy, gx, rows, d);
}
template <class T>
inline void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat,
                            T* inv_std, int64_t rows, int64_t d, T eps) {
    VITSSP_DISPATCH(layer_norm_rows, x, gain, bias, y, xhat, inv_std, rows, d, eps);
}
template <class T>
inline void layer_norm_rows_grad(const T* xhat, const T* inv_std, const T* gain,
                                 const T* gy, T* gx, T* ggain, T* gbias, int64_t rows,
                                 int64_t d) {
    VITSSP_DISPATCH(layer_norm_rows_grad, xhat, inv_std, gain, gy, gx, ggain, gbias, rows, d);
}
template <class T>
inline void l2norm_rows(const T* x, T* y, T* inv_norm, int64_t rows, int64_t d, T eps) {
    VITSSP_DISPATCH(l2norm_rows, x, y, inv_norm, rows, d, eps);
}
template <class T>
inline void l2norm_rows_grad(const T* y, const T* inv_norm, const T* gy, T* gx,
                             int64_t rows, int64_t d) {
    VITSSP_DISPATCH(l2norm_rows_grad, y, inv_norm, gy, gx, rows, d);
}
template <class T>
inline void gelu(const T* x, T* y, int64_t n) {
    VITSSP_DISPATCH(gelu, x, y, n);
}
template <class T>
inline void gelu_grad(const T* x, const T* gy, T* gx, int64_t n) {
    VITSSP_DISPATCH(gelu_grad, x, gy, gx, n);
}
template <class T>
inline void relu(const T* x, T* y, int64_t n) {
    VITSSP_DISPATCH(relu, x, y, n);
}
template <class T>
inline void relu_grad(const T* x, const T* gy, T* gx, int64_t n) {
    VITSSP_DISPATCH(relu_grad, x, gy, gx, n);
}
template <class T>
inline void patchify(const T* images, T* patches, int64_t n, int64_t c, int64_t h,
                     int64_t w, int64_t p) {
    VITSSP_DISPATCH(patchify, images, patches, n, c, h, w, p);
}

#undef VITSSP_DISPATCH

}  // namespace vitssp::kernels
