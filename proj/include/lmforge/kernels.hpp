#pragma once

#include <cstdint>

// Dense float32 kernels behind the tensor ops. The default implementations in
// lmforge::kernels parallelize with OpenMP; lmforge::kernels::ref holds the
// serial reference used by the parity tests and the benchmark. Both compute
// every output element with an identical serial reduction order, so their
// results are bit-identical for any thread count.
//
// Forward kernels overwrite their output. Backward kernels accumulate (+=)
// into pre-zeroed gradient buffers.

#define LMFORGE_KERNEL_DECLS                                                            \
    void matmul_nn(const float* a, const float* b, float* c, int64_t batch, int64_t m, \
                   int64_t k, int64_t n, bool accumulate);                              \
    void matmul_nt(const float* a, const float* b, float* c, int64_t batch, int64_t m, \
                   int64_t k, int64_t n, bool accumulate); /* b is [n x k] */           \
    void matmul_tn(const float* a, const float* b, float* c, int64_t batch, int64_t r, \
                   int64_t m, int64_t n, bool accumulate); /* a is [r x m], b [r x n] */\
    void softmax(const float* x, float* y, int64_t outer, int64_t n, int64_t inner);    \
    void softmax_backward(const float* y, const float* dy, float* dx, int64_t outer,   \
                          int64_t n, int64_t inner);                                    \
    void masked_softmax_lastdim(const float* x, const int32_t* key_mask, float* y,      \
                                int64_t batch, int64_t rows_per_batch, int64_t n);      \
    void layer_norm(const float* x, const float* gain, const float* bias, float eps,    \
                    float* y, float* mean, float* rstd, int64_t rows, int64_t d);       \
    void layer_norm_backward(const float* x, const float* gain, const float* mean,     \
                             const float* rstd, const float* dy, float* dx,             \
                             float* dgain, float* dbias, int64_t rows, int64_t d);      \
    void gelu(const float* x, float* y, int64_t n);                                     \
    void gelu_backward(const float* x, const float* dy, float* dx, int64_t n);          \
    void tanh_act(const float* x, float* y, int64_t n);                                 \
    void tanh_backward(const float* y, const float* dy, float* dx, int64_t n);          \
    void add(const float* a, const float* b, float* y, int64_t n);                      \
    void mul(const float* a, const float* b, float* y, int64_t n);                      \
    void scale(const float* x, float c, float* y, int64_t n);                           \
    void axpy(float alpha, const float* x, float* y, int64_t n);                        \
    void add_bias(const float* x, const float* bias, float* y, int64_t rows, int64_t d);\
    void col_sum_acc(const float* dy, float* db, int64_t rows, int64_t d);              \
    void embedding_gather(const float* table, const int32_t* ids, float* y,             \
                          int64_t count, int64_t d);                                    \
    void embedding_scatter_add(const float* dy, const int32_t* ids, float* dtable,      \
                               int64_t count, int64_t d);                               \
    void split_heads(const float* x, float* y, int64_t b, int64_t s, int64_t h,         \
                     int64_t dh, bool accumulate);                                      \
    void merge_heads(const float* x, float* y, int64_t b, int64_t s, int64_t h,         \
                     int64_t dh, bool accumulate);                                      \
    void softmax_xent_backward(const float* probs, const int32_t* labels, float scale,  \
                               float* dx, int64_t rows, int64_t n);                     \
    void selected_rows_diff_acc(const float* a, const float* b, const int32_t* selected,\
                                float scale, float* dx, int64_t rows, int64_t n);       \
    void adam_update(float* p, const float* g, float* m, float* v, int64_t n, float lr, \
                     float beta1, float beta2, float eps, float bias_corr1,             \
                     float bias_corr2);

namespace lmforge::kernels {
LMFORGE_KERNEL_DECLS
namespace ref {
LMFORGE_KERNEL_DECLS
}  // namespace ref
}  // namespace lmforge::kernels

#undef LMFORGE_KERNEL_DECLS
