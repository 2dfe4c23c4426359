#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstring>
#include <vector>

#include "lmforge/kernels.hpp"
#include "lmforge/rng.hpp"

using lmforge::Rng;
namespace par = lmforge::kernels;
namespace ref = lmforge::kernels::ref;

namespace {

std::vector<float> random_vec(size_t n, Rng& rng, float mag = 1.0f) {
    std::vector<float> v(n);
    for (float& x : v) x = mag * (2.0f * rng.next_float() - 1.0f);
    return v;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("matmul variants match the serial reference bit for bit") {
    Rng rng(11);
    for (auto [batch, m, k, n] :
         std::vector<std::array<int64_t, 4>>{{1, 3, 4, 2}, {2, 5, 7, 3}, {6, 17, 9, 13}}) {
        auto a = random_vec(static_cast<size_t>(batch * m * k), rng);
        auto b_nn = random_vec(static_cast<size_t>(batch * k * n), rng);
        std::vector<float> c1(static_cast<size_t>(batch * m * n), 0.5f);
        std::vector<float> c2 = c1;
        par::matmul_nn(a.data(), b_nn.data(), c1.data(), batch, m, k, n, true);
        ref::matmul_nn(a.data(), b_nn.data(), c2.data(), batch, m, k, n, true);
        CHECK(same_bits(c1, c2));

        auto b_nt = random_vec(static_cast<size_t>(batch * n * k), rng);
        par::matmul_nt(a.data(), b_nt.data(), c1.data(), batch, m, k, n, false);
        ref::matmul_nt(a.data(), b_nt.data(), c2.data(), batch, m, k, n, false);
        CHECK(same_bits(c1, c2));

        auto a_tn = random_vec(static_cast<size_t>(batch * k * m), rng);
        par::matmul_tn(a_tn.data(), b_nn.data(), c1.data(), batch, k, m, n, false);
        ref::matmul_tn(a_tn.data(), b_nn.data(), c2.data(), batch, k, m, n, false);
        CHECK(same_bits(c1, c2));
    }
}

TEST_CASE("row kernels match the serial reference bit for bit") {
    Rng rng(12);
    const int64_t outer = 9, n = 23, inner = 4;
    auto x = random_vec(static_cast<size_t>(outer * n * inner), rng, 3.0f);
    std::vector<float> y1(x.size()), y2(x.size());
    par::softmax(x.data(), y1.data(), outer, n, inner);
    ref::softmax(x.data(), y2.data(), outer, n, inner);
    CHECK(same_bits(y1, y2));

    auto dy = random_vec(x.size(), rng);
    std::vector<float> dx1(x.size(), 0.0f), dx2(x.size(), 0.0f);
    par::softmax_backward(y1.data(), dy.data(), dx1.data(), outer, n, inner);
    ref::softmax_backward(y2.data(), dy.data(), dx2.data(), outer, n, inner);
    CHECK(same_bits(dx1, dx2));

    const int64_t rows = 31, d = 19;
    auto xr = random_vec(static_cast<size_t>(rows * d), rng, 2.0f);
    auto gain = random_vec(static_cast<size_t>(d), rng);
    auto bias = random_vec(static_cast<size_t>(d), rng);
    std::vector<float> out1(xr.size()), out2(xr.size());
    std::vector<float> mean1(rows), mean2(rows), rstd1(rows), rstd2(rows);
    par::layer_norm(xr.data(), gain.data(), bias.data(), 1e-5f, out1.data(),
                    mean1.data(), rstd1.data(), rows, d);
    ref::layer_norm(xr.data(), gain.data(), bias.data(), 1e-5f, out2.data(),
                    mean2.data(), rstd2.data(), rows, d);
    CHECK(same_bits(out1, out2));
    CHECK(same_bits(mean1, mean2));

    auto dyr = random_vec(xr.size(), rng);
    std::vector<float> dxa(xr.size(), 0.0f), dxb(xr.size(), 0.0f);
    std::vector<float> dg1(static_cast<size_t>(d), 0.0f), dg2(static_cast<size_t>(d), 0.0f);
    std::vector<float> db1(static_cast<size_t>(d), 0.0f), db2(static_cast<size_t>(d), 0.0f);
    par::layer_norm_backward(xr.data(), gain.data(), mean1.data(), rstd1.data(),
                             dyr.data(), dxa.data(), dg1.data(), db1.data(), rows, d);
    ref::layer_norm_backward(xr.data(), gain.data(), mean2.data(), rstd2.data(),
                             dyr.data(), dxb.data(), dg2.data(), db2.data(), rows, d);
    CHECK(same_bits(dxa, dxb));
    CHECK(same_bits(dg1, dg2));
    CHECK(same_bits(db1, db2));
}

TEST_CASE("masked softmax and elementwise kernels match the serial reference") {
    Rng rng(13);
    const int64_t batch = 3, rows_per_batch = 8, n = 11;
    auto x = random_vec(static_cast<size_t>(batch * rows_per_batch * n), rng, 4.0f);
    std::vector<int32_t> mask(static_cast<size_t>(batch * n));
    for (auto& m : mask) m = rng.bernoulli(0.7) ? 1 : 0;
    for (int64_t b = 0; b < batch; ++b) mask[static_cast<size_t>(b * n)] = 1;
    std::vector<float> y1(x.size()), y2(x.size());
    par::masked_softmax_lastdim(x.data(), mask.data(), y1.data(), batch, rows_per_batch, n);
    ref::masked_softmax_lastdim(x.data(), mask.data(), y2.data(), batch, rows_per_batch, n);
    CHECK(same_bits(y1, y2));

    auto a = random_vec(999, rng), b = random_vec(999, rng);
    std::vector<float> o1(999), o2(999);
    par::gelu(a.data(), o1.data(), 999);
    ref::gelu(a.data(), o2.data(), 999);
    CHECK(same_bits(o1, o2));
    par::tanh_act(a.data(), o1.data(), 999);
    ref::tanh_act(a.data(), o2.data(), 999);
    CHECK(same_bits(o1, o2));
    par::add(a.data(), b.data(), o1.data(), 999);
    ref::add(a.data(), b.data(), o2.data(), 999);
    CHECK(same_bits(o1, o2));
    par::mul(a.data(), b.data(), o1.data(), 999);
    ref::mul(a.data(), b.data(), o2.data(), 999);
    CHECK(same_bits(o1, o2));
    par::scale(a.data(), 1.7f, o1.data(), 999);
    ref::scale(a.data(), 1.7f, o2.data(), 999);
    CHECK(same_bits(o1, o2));
}

TEST_CASE("gather, scatter, permute and adam kernels match the serial reference") {
    Rng rng(14);
    const int64_t vocab = 37, d = 12, count = 50;
    auto table = random_vec(static_cast<size_t>(vocab * d), rng);
    std::vector<int32_t> ids(count);
    for (auto& id : ids) id = static_cast<int32_t>(rng.uniform_int(0, vocab));
    std::vector<float> g1(static_cast<size_t>(count * d)), g2(g1.size());
    par::embedding_gather(table.data(), ids.data(), g1.data(), count, d);
    ref::embedding_gather(table.data(), ids.data(), g2.data(), count, d);
    CHECK(same_bits(g1, g2));

    auto dy = random_vec(static_cast<size_t>(count * d), rng);
    std::vector<float> t1(table.size(), 0.0f), t2(table.size(), 0.0f);
    par::embedding_scatter_add(dy.data(), ids.data(), t1.data(), count, d);
    ref::embedding_scatter_add(dy.data(), ids.data(), t2.data(), count, d);
    CHECK(same_bits(t1, t2));

    const int64_t b = 2, s = 7, h = 3, dh = 5;
    auto xin = random_vec(static_cast<size_t>(b * s * h * dh), rng);
    std::vector<float> p1(xin.size()), p2(xin.size());
    par::split_heads(xin.data(), p1.data(), b, s, h, dh, false);
    ref::split_heads(xin.data(), p2.data(), b, s, h, dh, false);
    CHECK(same_bits(p1, p2));
    std::vector<float> m1(xin.size()), m2(xin.size());
    par::merge_heads(p1.data(), m1.data(), b, s, h, dh, false);
    ref::merge_heads(p2.data(), m2.data(), b, s, h, dh, false);
    CHECK(same_bits(m1, m2));
    CHECK(same_bits(m1, xin));  // split then merge is the identity

    auto p = random_vec(503, rng);
    auto grad = random_vec(503, rng);
    std::vector<float> pa = p, pb = p;
    std::vector<float> ma(503, 0.0f), mb(503, 0.0f), va(503, 0.0f), vb(503, 0.0f);
    par::adam_update(pa.data(), grad.data(), ma.data(), va.data(), 503, 0.1f, 0.9f,
                     0.999f, 1e-8f, 10.0f, 1000.0f);
    ref::adam_update(pb.data(), grad.data(), mb.data(), vb.data(), 503, 0.1f, 0.9f,
                     0.999f, 1e-8f, 10.0f, 1000.0f);
    CHECK(same_bits(pa, pb));
    CHECK(same_bits(ma, mb));
    CHECK(same_bits(va, vb));
}

TEST_CASE("parallel kernels are deterministic across repeated runs") {
    Rng rng(15);
    const int64_t batch = 4, m = 33, k = 29, n = 31;
    auto a = random_vec(static_cast<size_t>(batch * m * k), rng);
    auto b = random_vec(static_cast<size_t>(batch * k * n), rng);
    std::vector<float> c1(static_cast<size_t>(batch * m * n));
    std::vector<float> c2(c1.size());
    par::matmul_nn(a.data(), b.data(), c1.data(), batch, m, k, n, false);
    par::matmul_nn(a.data(), b.data(), c2.data(), batch, m, k, n, false);
    CHECK(same_bits(c1, c2));
}
