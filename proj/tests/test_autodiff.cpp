#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "lmforge/adam.hpp"
#include "lmforge/graph.hpp"
#include "lmforge/rng.hpp"
#include "test_util.hpp"

using lmforge::AdamConfig;
using lmforge::AdamState;
using lmforge::DimensionError;
using lmforge::Graph;
using lmforge::Rng;
using lmforge::Tensor;
using lmforge::UsageError;
using testutil::fd_coordinate;
using testutil::fd_directional;
using testutil::random_param;

namespace {

std::shared_ptr<Tensor> param(std::vector<int64_t> shape, std::vector<float> data) {
    auto t = std::make_shared<Tensor>(Tensor::from(std::move(shape), std::move(data)));
    t->requires_grad = true;
    return t;
}

}  // namespace

TEST_CASE("matmul computes known products") {
    Graph g;
    auto id2 = g.constant(Tensor::from({2, 2}, {1, 0, 0, 1}));
    auto m = g.constant(Tensor::from({2, 2}, {1, 2, 3, 4}));
    auto r = g.matmul(id2, m);
    CHECK(g.value(r).data == std::vector<float>{1, 2, 3, 4});

    auto a = g.constant(Tensor::from({1, 2}, {1, 2}));
    auto b = g.constant(Tensor::from({2, 1}, {3, 4}));
    CHECK(g.value(g.matmul(a, b)).data == std::vector<float>{11});

    CHECK_THROWS_AS((void)g.matmul(a, a), DimensionError);
}

TEST_CASE("matmul gradients agree with central finite differences") {
    Rng rng(21);
    auto a = random_param({3, 4}, rng);
    auto b = random_param({4, 2}, rng);
    auto build = [&](Graph& g) { return g.sum(g.matmul(g.leaf(a), g.leaf(b))); };

    Graph g;
    auto root = build(g);
    g.backward(root);
    for (auto& p : {a, b}) {
        const Tensor* grad = g.grad_for(p.get());
        REQUIRE(grad != nullptr);
        for (size_t i = 0; i < p->data.size(); ++i) {
            const double fd = fd_coordinate(*p, i, build, 1e-2);
            const double ad = grad->data[i];
            const double rel =
                std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-6});
            CHECK(rel < 1e-3);
        }
    }
}

TEST_CASE("softmax matches symmetry, stability and a high-precision oracle") {
    Graph g;
    auto x = g.constant(Tensor::from({2}, {0, 0}));
    auto y = g.value(g.softmax(x, 0));
    CHECK(y.data[0] == doctest::Approx(0.5).epsilon(1e-7));

    auto big = g.constant(Tensor::from({2}, {1000, 0}));
    auto yb = g.value(g.softmax(big, 0));
    CHECK(std::isfinite(yb.data[0]));
    CHECK(yb.data[0] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(yb.data[1] == doctest::Approx(0.0).epsilon(1e-7));

    auto v = g.constant(Tensor::from({3}, {1, 2, 3}));
    auto yv = g.value(g.softmax(v, 0));
    long double denom = 0.0L;
    for (int i = 1; i <= 3; ++i) denom += std::exp(static_cast<long double>(i));
    for (int i = 0; i < 3; ++i) {
        const long double expect = std::exp(static_cast<long double>(i + 1)) / denom;
        CHECK(std::abs(yv.data[static_cast<size_t>(i)] -
                       static_cast<double>(expect)) < 1e-6);
    }
}

TEST_CASE("softmax rows sum to one on any axis") {
    Rng rng(22);
    auto x = random_param({4, 5, 3}, rng, 6.0f);
    for (int axis : {0, 1, 2}) {
        Graph g;
        const Tensor& y = g.value(g.softmax(g.leaf(x), axis));
        // Sum along the reduced axis for every (outer, inner) pair.
        int64_t outer = 1, inner = 1;
        const auto& s = y.shape;
        for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
        for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
        const int64_t n = s[static_cast<size_t>(axis)];
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t j = 0; j < inner; ++j) {
                double total = 0.0;
                for (int64_t i = 0; i < n; ++i)
                    total += y.data[static_cast<size_t>((o * n + i) * inner + j)];
                CHECK(std::abs(total - 1.0) < 1e-5);
            }
    }
}

TEST_CASE("softmax gradient agrees with finite differences") {
    Rng rng(23);
    auto x = random_param({3, 4}, rng, 2.0f);
    auto w = random_param({3, 4}, rng);
    w->requires_grad = false;
    auto build = [&](Graph& g) {
        return g.sum(g.mul(g.softmax(g.leaf(x), 1), g.leaf(w)));
    };
    auto check = fd_directional(x, build, rng, 1e-3);
    CHECK(check.rel_err < 1e-3);
}

TEST_CASE("layer_norm maps constant rows to the bias and matches hand values") {
    Graph g;
    auto x = g.constant(Tensor::from({1, 3}, {5, 5, 5}));
    auto gain = g.constant(Tensor::from({3}, {1, 1, 1}));
    auto bias = g.constant(Tensor::from({3}, {0, 0, 0}));
    const Tensor& y = g.value(g.layer_norm(x, gain, bias, 1e-5f));
    for (float v : y.data) CHECK(std::abs(v) < 1e-3);

    auto x2 = g.constant(Tensor::from({1, 3}, {1, 2, 3}));
    const Tensor& y2 = g.value(g.layer_norm(x2, gain, bias, 0.0f));
    CHECK(y2.data[0] == doctest::Approx(-1.224744871).epsilon(1e-4));
    CHECK(y2.data[1] == doctest::Approx(0.0).epsilon(1e-4));
    CHECK(y2.data[2] == doctest::Approx(1.224744871).epsilon(1e-4));
}

TEST_CASE("layer_norm gradients agree with finite differences") {
    Rng rng(24);
    auto x = random_param({4, 6}, rng);
    auto gain = random_param({6}, rng);
    auto bias = random_param({6}, rng);
    auto w = random_param({4, 6}, rng);
    w->requires_grad = false;
    auto build = [&](Graph& g) {
        return g.sum(g.mul(
            g.layer_norm(g.leaf(x), g.leaf(gain), g.leaf(bias), 1e-5f), g.leaf(w)));
    };
    for (auto& p : {x, gain, bias}) {
        auto check = fd_directional(p, build, rng, 1e-3);
        CHECK(check.rel_err < 1e-3);
    }
}

TEST_CASE("gelu values and gradient") {
    Graph g;
    auto x = g.constant(Tensor::from({3}, {0.0f, 10.0f, 1.0f}));
    const Tensor& y = g.value(g.gelu(x));
    CHECK(y.data[0] == 0.0f);
    CHECK(std::abs(y.data[1] - 10.0f) < 1e-4);
    // tanh form evaluated in extended precision
    const long double c0 = std::sqrt(2.0L / 3.14159265358979323846264338L);
    const long double u = c0 * (1.0L + 0.044715L);
    const long double expect = 0.5L * (1.0L + std::tanh(u));
    CHECK(std::abs(y.data[2] - static_cast<double>(expect)) < 1e-4);

    Rng rng(25);
    auto xp = random_param({17}, rng, 2.0f);
    auto build = [&](Graph& g2) { return g2.sum(g2.gelu(g2.leaf(xp))); };
    auto check = fd_directional(xp, build, rng, 1e-3);
    CHECK(check.rel_err < 1e-3);
}

TEST_CASE("backward of sum gives ones and handles fan-out by accumulation") {
    auto x = param({3}, {1, 2, 3});
    Graph g;
    auto xv = g.leaf(x);
    auto root = g.sum(xv);
    g.backward(root);
    CHECK(g.grad_for(x.get())->data == std::vector<float>{1, 1, 1});

    Graph g2;
    auto xv2 = g2.leaf(x);
    auto root2 = g2.sum(g2.mul(xv2, xv2));
    g2.backward(root2);
    CHECK(g2.grad_for(x.get())->data == std::vector<float>{2, 4, 6});

    // x feeds two consumers; its gradient is the sum of both branches.
    Graph g3;
    auto xv3 = g3.leaf(x);
    auto root3 = g3.add(g3.sum(xv3), g3.sum(g3.mul(xv3, xv3)));
    g3.backward(root3);
    CHECK(g3.grad_for(x.get())->data == std::vector<float>{3, 5, 7});
}

TEST_CASE("backward rejects non-scalar roots and skips constants") {
    auto x = param({2, 2}, {1, 2, 3, 4});
    Graph g;
    auto xv = g.leaf(x);
    CHECK_THROWS_AS(g.backward(xv), UsageError);

    auto c = g.constant(Tensor::from({2, 2}, {1, 1, 1, 1}));
    auto root = g.sum(g.mul(xv, c));
    g.backward(root);
    CHECK(g.grad(c) == nullptr);
    CHECK(g.grad_for(x.get()) != nullptr);
}

TEST_CASE("forward ops are pure and bit-stable") {
    Rng rng(26);
    auto a = random_param({5, 7}, rng);
    auto b = random_param({7, 3}, rng);
    Graph g1, g2;
    const Tensor& y1 = g1.value(g1.gelu(g1.matmul(g1.leaf(a), g1.leaf(b))));
    const Tensor& y2 = g2.value(g2.gelu(g2.matmul(g2.leaf(a), g2.leaf(b))));
    CHECK(testutil::bitwise_equal(y1.data, y2.data));
}

TEST_CASE("masked softmax zeroes masked keys and keeps rows normalized") {
    Rng rng(27);
    auto scores = random_param({2, 3, 4}, rng, 3.0f);
    lmforge::TokenMatrix mask(2, 4, 1);
    mask.at(0, 3) = 0;
    mask.at(1, 1) = 0;
    mask.at(1, 2) = 0;
    Graph g;
    const Tensor& y = g.value(g.masked_softmax(g.leaf(scores), mask));
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t r = 0; r < 3; ++r) {
            double total = 0.0;
            for (int64_t j = 0; j < 4; ++j) {
                const float w = y.at({b, r, j});
                if (!mask.at(b, j)) CHECK(w < 1e-6f);
                total += w;
            }
            CHECK(std::abs(total - 1.0) < 1e-5);
        }
}

TEST_CASE("embedding gathers rows and scatters gradients with multiplicity") {
    auto table = param({4, 2}, {0, 1, 10, 11, 20, 21, 30, 31});
    Graph g;
    auto emb = g.embedding(g.leaf(table), {2, 0, 2}, {3});
    CHECK(g.value(emb).data == std::vector<float>{20, 21, 0, 1, 20, 21});
    g.backward(g.sum(emb));
    CHECK(g.grad_for(table.get())->data ==
          std::vector<float>{1, 1, 0, 0, 2, 2, 0, 0});
    CHECK_THROWS_AS((void)g.embedding(g.leaf(table), {4}, {1}), UsageError);
}

TEST_CASE("head split and merge round-trip with pass-through gradients") {
    Rng rng(28);
    auto x = random_param({2, 5, 6}, rng);
    Graph g;
    auto split = g.split_heads(g.leaf(x), 3);
    CHECK(g.value(split).shape == std::vector<int64_t>{2, 3, 5, 2});
    auto merged = g.merge_heads(split);
    CHECK(testutil::bitwise_equal(g.value(merged).data, x->data));
    g.backward(g.sum(merged));
    for (float v : g.grad_for(x.get())->data) CHECK(v == 1.0f);
}

TEST_CASE("take_position selects one sequence slot") {
    auto x = param({2, 3, 2}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
    Graph g;
    auto cls = g.take_position(g.leaf(x), 1);
    CHECK(g.value(cls).data == std::vector<float>{2, 3, 8, 9});
    g.backward(g.sum(cls));
    const auto& grad = g.grad_for(x.get())->data;
    CHECK(grad == std::vector<float>{0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0});
}

TEST_CASE("cross_entropy matches a high-precision oracle and checks usage") {
    Rng rng(29);
    auto logits = random_param({5, 7}, rng, 3.0f);
    std::vector<int32_t> labels = {2, -1, 0, 6, -1};

    Graph g;
    auto loss = g.cross_entropy(g.leaf(logits), labels);
    long double expect = 0.0L;
    int count = 0;
    for (size_t r = 0; r < 5; ++r) {
        if (labels[r] < 0) continue;
        long double denom = 0.0L;
        for (size_t i = 0; i < 7; ++i)
            denom += std::exp(static_cast<long double>(logits->data[r * 7 + i]));
        const long double p =
            std::exp(static_cast<long double>(
                logits->data[r * 7 + static_cast<size_t>(labels[r])])) /
            denom;
        expect -= std::log(p);
        ++count;
    }
    expect /= count;
    CHECK(std::abs(g.value(loss).data[0] - static_cast<double>(expect)) < 1e-5);

    auto build = [&](Graph& g2) {
        return g2.cross_entropy(g2.leaf(logits), labels);
    };
    auto check = fd_directional(logits, build, rng, 1e-2);
    CHECK(check.rel_err < 1e-3);

    std::vector<int32_t> none = {-1, -1, -1, -1, -1};
    CHECK_THROWS_AS((void)g.cross_entropy(g.leaf(logits), none), UsageError);
}

TEST_CASE("kl_to_teacher is zero at the teacher and differentiable") {
    Rng rng(30);
    auto student = random_param({4, 6}, rng, 2.0f);
    Tensor teacher = *student;
    std::vector<int32_t> selected = {1, 0, 1, 1};

    Graph g;
    auto kl = g.kl_to_teacher(g.leaf(student), teacher, selected, 2.0f);
    CHECK(std::abs(g.value(kl).data[0]) < 1e-6);

    Tensor other = *random_param({4, 6}, rng, 2.0f);
    auto build = [&](Graph& g2) {
        return g2.kl_to_teacher(g2.leaf(student), other, selected, 2.0f);
    };
    auto check = fd_directional(student, build, rng, 1e-2);
    CHECK(check.rel_err < 1e-3);
}

TEST_CASE("cosine_distance is zero on identical rows and differentiable") {
    Rng rng(31);
    auto student = random_param({3, 5}, rng);
    Tensor teacher = *student;
    std::vector<int32_t> selected = {1, 1, 0};
    Graph g;
    auto d = g.cosine_distance(g.leaf(student), teacher, selected);
    CHECK(std::abs(g.value(d).data[0]) < 1e-6);

    Tensor other = *random_param({3, 5}, rng);
    auto build = [&](Graph& g2) {
        return g2.cosine_distance(g2.leaf(student), other, selected);
    };
    auto check = fd_directional(student, build, rng, 1e-3);
    CHECK(check.rel_err < 1e-2);
}

TEST_CASE("adam: zero gradient keeps parameters, first step moves by ~lr") {
    auto p = param({3}, {1.0f, -2.0f, 0.5f});
    AdamConfig cfg;
    cfg.lr = 0.1f;
    AdamState opt({p}, cfg);
    Tensor zeros({3}, 0.0f);
    const std::vector<float> before = p->data;
    opt.step({&zeros});
    CHECK(p->data == before);

    // Fresh state: the bias-corrected first step equals lr * sign(g) up to eps.
    auto q = param({3}, {1.0f, -2.0f, 0.5f});
    AdamState opt2({q}, cfg);
    Tensor ones({3}, 1.0f);
    opt2.step({&ones});
    for (size_t i = 0; i < 3; ++i)
        CHECK(q->data[i] == doctest::Approx(before[i] - 0.1f).epsilon(1e-5));
}

TEST_CASE("adam is deterministic and validates shapes") {
    Rng rng(32);
    auto p1 = random_param({8}, rng);
    auto p2 = std::make_shared<Tensor>(*p1);
    AdamState o1({p1}, {});
    AdamState o2({p2}, {});
    Tensor g1 = *random_param({8}, rng);
    for (int i = 0; i < 5; ++i) {
        o1.step({&g1});
        o2.step({&g1});
    }
    CHECK(testutil::bitwise_equal(p1->data, p2->data));

    Tensor bad({3}, 0.0f);
    CHECK_THROWS_AS(o1.step({&bad}), DimensionError);
}
