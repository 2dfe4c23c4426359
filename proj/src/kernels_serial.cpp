#include <cmath>
#include <cstdint>

#include "lmforge/kernels.hpp"

// Serial reference implementations. Loop bodies mirror the OpenMP versions
// line for line (minus the pragmas); the parity tests assert bit-identical
// outputs between the two.

namespace lmforge::kernels::ref {

void matmul_nn(const float* a, const float* b, float* c, int64_t batch, int64_t m,
               int64_t k, int64_t n, bool accumulate) {
    for (int64_t bi = 0; bi < batch; ++bi) {
        for (int64_t i = 0; i < m; ++i) {
            const float* arow = a + (bi * m + i) * k;
            const float* bmat = b + bi * k * n;
            float* crow = c + (bi * m + i) * n;
            for (int64_t j = 0; j < n; ++j) {
                float acc = accumulate ? crow[j] : 0.0f;
                for (int64_t p = 0; p < k; ++p) acc += arow[p] * bmat[p * n + j];
                crow[j] = acc;
            }
        }
    }
}

void matmul_nt(const float* a, const float* b, float* c, int64_t batch, int64_t m,
               int64_t k, int64_t n, bool accumulate) {
    for (int64_t bi = 0; bi < batch; ++bi) {
        for (int64_t i = 0; i < m; ++i) {
            const float* arow = a + (bi * m + i) * k;
            const float* bmat = b + bi * n * k;
            float* crow = c + (bi * m + i) * n;
            for (int64_t j = 0; j < n; ++j) {
                const float* brow = bmat + j * k;
                float acc = accumulate ? crow[j] : 0.0f;
                for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] = acc;
            }
        }
    }
}

void matmul_tn(const float* a, const float* b, float* c, int64_t batch, int64_t r,
               int64_t m, int64_t n, bool accumulate) {
    for (int64_t bi = 0; bi < batch; ++bi) {
        for (int64_t i = 0; i < m; ++i) {
            const float* amat = a + bi * r * m;
            const float* bmat = b + bi * r * n;
            float* crow = c + (bi * m + i) * n;
            for (int64_t j = 0; j < n; ++j) {
                float acc = accumulate ? crow[j] : 0.0f;
                for (int64_t p = 0; p < r; ++p) acc += amat[p * m + i] * bmat[p * n + j];
                crow[j] = acc;
            }
        }
    }
}

void softmax(const float* x, float* y, int64_t outer, int64_t n, int64_t inner) {
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t j = 0; j < inner; ++j) {
            const float* xs = x + o * n * inner + j;
            float* ys = y + o * n * inner + j;
            float mx = xs[0];
            for (int64_t i = 1; i < n; ++i) mx = std::max(mx, xs[i * inner]);
            double denom = 0.0;
            for (int64_t i = 0; i < n; ++i)
                denom += std::exp(static_cast<double>(xs[i * inner] - mx));
            for (int64_t i = 0; i < n; ++i)
                ys[i * inner] = static_cast<float>(
                    std::exp(static_cast<double>(xs[i * inner] - mx)) / denom);
        }
    }
}

void softmax_backward(const float* y, const float* dy, float* dx, int64_t outer,
                      int64_t n, int64_t inner) {
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t j = 0; j < inner; ++j) {
            const float* ys = y + o * n * inner + j;
            const float* dys = dy + o * n * inner + j;
            float* dxs = dx + o * n * inner + j;
            double dot = 0.0;
            for (int64_t i = 0; i < n; ++i)
                dot += static_cast<double>(ys[i * inner]) * dys[i * inner];
            for (int64_t i = 0; i < n; ++i)
                dxs[i * inner] += ys[i * inner] *
                                  (dys[i * inner] - static_cast<float>(dot));
        }
    }
}

void masked_softmax_lastdim(const float* x, const int32_t* key_mask, float* y,
                            int64_t batch, int64_t rows_per_batch, int64_t n) {
    const int64_t rows = batch * rows_per_batch;
    for (int64_t r = 0; r < rows; ++r) {
        const int32_t* mask = key_mask + (r / rows_per_batch) * n;
        const float* xs = x + r * n;
        float* ys = y + r * n;
        float mx = 0.0f;
        bool any = false;
        for (int64_t i = 0; i < n; ++i) {
            if (!mask[i]) continue;
            mx = any ? std::max(mx, xs[i]) : xs[i];
            any = true;
        }
        if (!any) {
            for (int64_t i = 0; i < n; ++i) ys[i] = 0.0f;
            continue;
        }
        double denom = 0.0;
        for (int64_t i = 0; i < n; ++i)
            denom += mask[i] ? std::exp(static_cast<double>(xs[i] - mx)) : 0.0;
        for (int64_t i = 0; i < n; ++i)
            ys[i] = mask[i] ? static_cast<float>(
                                  std::exp(static_cast<double>(xs[i] - mx)) / denom)
                            : 0.0f;
    }
}

void layer_norm(const float* x, const float* gain, const float* bias, float eps,
                float* y, float* mean, float* rstd, int64_t rows, int64_t d) {
    for (int64_t r = 0; r < rows; ++r) {
        const float* xs = x + r * d;
        float* ys = y + r * d;
        double mu = 0.0;
        for (int64_t i = 0; i < d; ++i) mu += xs[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            const double t = xs[i] - mu;
            var += t * t;
        }
        var /= static_cast<double>(d);
        const float mu_f = static_cast<float>(mu);
        const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
        mean[r] = mu_f;
        rstd[r] = rs;
        for (int64_t i = 0; i < d; ++i)
            ys[i] = (xs[i] - mu_f) * rs * gain[i] + bias[i];
    }
}

void layer_norm_backward(const float* x, const float* gain, const float* mean,
                         const float* rstd, const float* dy, float* dx, float* dgain,
                         float* dbias, int64_t rows, int64_t d) {
    for (int64_t r = 0; r < rows; ++r) {
        const float* xs = x + r * d;
        const float* dys = dy + r * d;
        float* dxs = dx + r * d;
        const float mu = mean[r];
        const float rs = rstd[r];
        double sum_dxhat = 0.0;
        double sum_dxhat_xhat = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            const float xhat = (xs[i] - mu) * rs;
            const float dxhat = dys[i] * gain[i];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += static_cast<double>(dxhat) * xhat;
        }
        const float a = static_cast<float>(sum_dxhat / static_cast<double>(d));
        const float b = static_cast<float>(sum_dxhat_xhat / static_cast<double>(d));
        for (int64_t i = 0; i < d; ++i) {
            const float xhat = (xs[i] - mu) * rs;
            const float dxhat = dys[i] * gain[i];
            dxs[i] += rs * (dxhat - a - xhat * b);
        }
    }
    for (int64_t i = 0; i < d; ++i) {
        double dg = 0.0;
        double db = 0.0;
        for (int64_t r = 0; r < rows; ++r) {
            const float xhat = (x[r * d + i] - mean[r]) * rstd[r];
            dg += static_cast<double>(dy[r * d + i]) * xhat;
            db += dy[r * d + i];
        }
        dgain[i] += static_cast<float>(dg);
        dbias[i] += static_cast<float>(db);
    }
}

namespace {
constexpr float kGeluC0 = 0.79788456080286535588f;  // sqrt(2/pi)
constexpr float kGeluC1 = 0.044715f;
}  // namespace

void gelu(const float* x, float* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        const float v = x[i];
        const float u = kGeluC0 * (v + kGeluC1 * v * v * v);
        y[i] = 0.5f * v * (1.0f + std::tanh(u));
    }
}

void gelu_backward(const float* x, const float* dy, float* dx, int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        const float v = x[i];
        const float u = kGeluC0 * (v + kGeluC1 * v * v * v);
        const float t = std::tanh(u);
        const float du = kGeluC0 * (1.0f + 3.0f * kGeluC1 * v * v);
        dx[i] += dy[i] * (0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du);
    }
}

void tanh_act(const float* x, float* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

void tanh_backward(const float* y, const float* dy, float* dx, int64_t n) {
    for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * (1.0f - y[i] * y[i]);
}

void add(const float* a, const float* b, float* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void mul(const float* a, const float* b, float* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void scale(const float* x, float c, float* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] * c;
}

void axpy(float alpha, const float* x, float* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void add_bias(const float* x, const float* bias, float* y, int64_t rows, int64_t d) {
    for (int64_t r = 0; r < rows; ++r) {
        const float* xs = x + r * d;
        float* ys = y + r * d;
        for (int64_t i = 0; i < d; ++i) ys[i] = xs[i] + bias[i];
    }
}

void col_sum_acc(const float* dy, float* db, int64_t rows, int64_t d) {
    for (int64_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int64_t r = 0; r < rows; ++r) acc += dy[r * d + i];
        db[i] += static_cast<float>(acc);
    }
}

void embedding_gather(const float* table, const int32_t* ids, float* y, int64_t count,
                      int64_t d) {
    for (int64_t i = 0; i < count; ++i) {
        const float* row = table + static_cast<int64_t>(ids[i]) * d;
        float* ys = y + i * d;
        for (int64_t j = 0; j < d; ++j) ys[j] = row[j];
    }
}

void embedding_scatter_add(const float* dy, const int32_t* ids, float* dtable,
                           int64_t count, int64_t d) {
    for (int64_t j = 0; j < d; ++j) {
        for (int64_t i = 0; i < count; ++i)
            dtable[static_cast<int64_t>(ids[i]) * d + j] += dy[i * d + j];
    }
}

void split_heads(const float* x, float* y, int64_t b, int64_t s, int64_t h, int64_t dh,
                 bool accumulate) {
    const int64_t total = b * h * s;
    for (int64_t idx = 0; idx < total; ++idx) {
        const int64_t si = idx % s;
        const int64_t hi = (idx / s) % h;
        const int64_t bi = idx / (s * h);
        const float* src = x + (bi * s + si) * h * dh + hi * dh;
        float* dst = y + idx * dh;
        for (int64_t c = 0; c < dh; ++c)
            dst[c] = accumulate ? dst[c] + src[c] : src[c];
    }
}

void merge_heads(const float* x, float* y, int64_t b, int64_t s, int64_t h, int64_t dh,
                 bool accumulate) {
    const int64_t total = b * s;
    for (int64_t idx = 0; idx < total; ++idx) {
        const int64_t si = idx % s;
        const int64_t bi = idx / s;
        float* dst = y + idx * h * dh;
        for (int64_t hi = 0; hi < h; ++hi) {
            const float* src = x + ((bi * h + hi) * s + si) * dh;
            for (int64_t c = 0; c < dh; ++c) {
                float* out = dst + hi * dh + c;
                *out = accumulate ? *out + src[c] : src[c];
            }
        }
    }
}

void softmax_xent_backward(const float* probs, const int32_t* labels, float scale,
                           float* dx, int64_t rows, int64_t n) {
    for (int64_t r = 0; r < rows; ++r) {
        if (labels[r] < 0) continue;
        const float* p = probs + r * n;
        float* dxs = dx + r * n;
        for (int64_t i = 0; i < n; ++i) dxs[i] += scale * p[i];
        dxs[labels[r]] -= scale;
    }
}

void selected_rows_diff_acc(const float* a, const float* b, const int32_t* selected,
                            float scale, float* dx, int64_t rows, int64_t n) {
    for (int64_t r = 0; r < rows; ++r) {
        if (!selected[r]) continue;
        const float* as = a + r * n;
        const float* bs = b + r * n;
        float* dxs = dx + r * n;
        for (int64_t i = 0; i < n; ++i) dxs[i] += scale * (as[i] - bs[i]);
    }
}

void adam_update(float* p, const float* g, float* m, float* v, int64_t n, float lr,
                 float beta1, float beta2, float eps, float bias_corr1,
                 float bias_corr2) {
    for (int64_t i = 0; i < n; ++i) {
        const float gi = g[i];
        m[i] = beta1 * m[i] + (1.0f - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0f - beta2) * gi * gi;
        const float mhat = m[i] * bias_corr1;
        const float vhat = v[i] * bias_corr2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace lmforge::kernels::ref
