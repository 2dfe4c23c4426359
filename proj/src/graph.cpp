#include "lmforge/graph.hpp"

#include <cmath>
#include <cstring>

#include "lmforge/kernels.hpp"

namespace lmforge {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

std::vector<int64_t> leading_dims(const std::vector<int64_t>& shape, size_t drop) {
    return std::vector<int64_t>(shape.begin(), shape.end() - drop);
}

int64_t product(const std::vector<int64_t>& dims) {
    int64_t p = 1;
    for (int64_t d : dims) p *= d;
    return p;
}

}  // namespace

Graph::Var Graph::emplace(std::shared_ptr<Tensor> value, bool requires_grad,
                          std::function<void(Graph&)> backward_fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward_fn = std::move(backward_fn);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Graph::Var Graph::leaf(const std::shared_ptr<Tensor>& t) {
    auto it = leaf_lookup_.find(t.get());
    if (it != leaf_lookup_.end()) return Var{it->second};
    Var v = emplace(t, t->requires_grad, nullptr);
    leaf_lookup_.emplace(t.get(), v.id);
    return v;
}

Graph::Var Graph::constant(Tensor t) {
    return emplace(std::make_shared<Tensor>(std::move(t)), false, nullptr);
}

const Tensor& Graph::value(Var v) const { return *node(v).value; }

const Tensor* Graph::grad(Var v) const { return node(v).grad.get(); }

const Tensor* Graph::grad_for(const Tensor* storage) const {
    auto it = leaf_lookup_.find(storage);
    if (it == leaf_lookup_.end()) return nullptr;
    return nodes_[static_cast<size_t>(it->second)].grad.get();
}

Tensor& Graph::ensure_grad(Var v) {
    Node& n = node(v);
    if (!n.grad) n.grad = std::make_unique<Tensor>(n.value->shape, 0.0f);
    return *n.grad;
}

void Graph::accumulate(Var v, const float* g, int64_t n) {
    Node& nd = node(v);
    if (!nd.requires_grad) return;
    Tensor& grad = ensure_grad(v);
    kernels::axpy(1.0f, g, grad.data.data(), n);
}

// --- matmul ---------------------------------------------------------------

Graph::Var Graph::matmul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.rank() >= 2 && tb.rank() >= 2, "matmul operands must have rank >= 2");
    require(leading_dims(ta.shape, 2) == leading_dims(tb.shape, 2),
            "matmul batch dimensions differ: " + shape_string(ta.shape) + " vs " +
                shape_string(tb.shape));
    const int64_t m = ta.shape[ta.shape.size() - 2];
    const int64_t k = ta.shape[ta.shape.size() - 1];
    const int64_t n = tb.shape[tb.shape.size() - 1];
    require(tb.shape[tb.shape.size() - 2] == k,
            "matmul inner dimensions differ: " + shape_string(ta.shape) + " vs " +
                shape_string(tb.shape));
    const int64_t batch = product(leading_dims(ta.shape, 2));

    std::vector<int64_t> out_shape = leading_dims(ta.shape, 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    auto out = std::make_shared<Tensor>(out_shape);
    kernels::matmul_nn(ta.data.data(), tb.data.data(), out->data.data(), batch, m, k, n,
                       false);

    const bool rg = node(a).requires_grad || node(b).requires_grad;
    Var result = emplace(out, rg, nullptr);
    node(result).backward_fn = [a, b, result, batch, m, k, n](Graph& g) {
        const float* dy = g.node(result).grad->data.data();
        if (g.node(a).requires_grad) {
            Tensor& da = g.ensure_grad(a);
            kernels::matmul_nt(dy, g.value(b).data.data(), da.data.data(), batch, m, n,
                               k, true);
        }
        if (g.node(b).requires_grad) {
            Tensor& db = g.ensure_grad(b);
            kernels::matmul_tn(g.value(a).data.data(), dy, db.data.data(), batch, m, k,
                               n, true);
        }
    };
    return result;
}

Graph::Var Graph::matmul_nt(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.rank() >= 2 && tb.rank() >= 2, "matmul operands must have rank >= 2");
    require(leading_dims(ta.shape, 2) == leading_dims(tb.shape, 2),
            "matmul batch dimensions differ: " + shape_string(ta.shape) + " vs " +
                shape_string(tb.shape));
    const int64_t m = ta.shape[ta.shape.size() - 2];
    const int64_t k = ta.shape[ta.shape.size() - 1];
    const int64_t n = tb.shape[tb.shape.size() - 2];
    require(tb.shape[tb.shape.size() - 1] == k,
            "matmul inner dimensions differ: " + shape_string(ta.shape) + " vs " +
                shape_string(tb.shape) + " (transposed)");
    const int64_t batch = product(leading_dims(ta.shape, 2));

    std::vector<int64_t> out_shape = leading_dims(ta.shape, 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    auto out = std::make_shared<Tensor>(out_shape);
    kernels::matmul_nt(ta.data.data(), tb.data.data(), out->data.data(), batch, m, k, n,
                       false);

    const bool rg = node(a).requires_grad || node(b).requires_grad;
    Var result = emplace(out, rg, nullptr);
    node(result).backward_fn = [a, b, result, batch, m, k, n](Graph& g) {
        const float* dy = g.node(result).grad->data.data();
        if (g.node(a).requires_grad) {
            Tensor& da = g.ensure_grad(a);
            kernels::matmul_nn(dy, g.value(b).data.data(), da.data.data(), batch, m, n,
                               k, true);
        }
        if (g.node(b).requires_grad) {
            Tensor& db = g.ensure_grad(b);
            kernels::matmul_tn(dy, g.value(a).data.data(), db.data.data(), batch, m, n,
                               k, true);
        }
    };
    return result;
}

// --- elementwise ------------------------------------------------------------

Graph::Var Graph::add(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.same_shape(tb), "add shapes differ: " + shape_string(ta.shape) + " vs " +
                                   shape_string(tb.shape));
    auto out = std::make_shared<Tensor>(ta.shape);
    kernels::add(ta.data.data(), tb.data.data(), out->data.data(), ta.numel());
    const bool rg = node(a).requires_grad || node(b).requires_grad;
    Var result = emplace(out, rg, nullptr);
    node(result).backward_fn = [a, b, result](Graph& g) {
        const Tensor& dy = *g.node(result).grad;
        g.accumulate(a, dy.data.data(), dy.numel());
        g.accumulate(b, dy.data.data(), dy.numel());
    };
    return result;
}

Graph::Var Graph::sub(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.same_shape(tb), "sub shapes differ");
    auto out = std::make_shared<Tensor>(ta.shape);
    for (int64_t i = 0; i < ta.numel(); ++i)
        out->data[static_cast<size_t>(i)] =
            ta.data[static_cast<size_t>(i)] - tb.data[static_cast<size_t>(i)];
    const bool rg = node(a).requires_grad || node(b).requires_grad;
    Var result = emplace(out, rg, nullptr);
    node(result).backward_fn = [a, b, result](Graph& g) {
        const Tensor& dy = *g.node(result).grad;
        g.accumulate(a, dy.data.data(), dy.numel());
        if (g.node(b).requires_grad) {
            Tensor& db = g.ensure_grad(b);
            kernels::axpy(-1.0f, dy.data.data(), db.data.data(), dy.numel());
        }
    };
    return result;
}

Graph::Var Graph::mul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.same_shape(tb), "mul shapes differ: " + shape_string(ta.shape) + " vs " +
                                   shape_string(tb.shape));
    auto out = std::make_shared<Tensor>(ta.shape);
    kernels::mul(ta.data.data(), tb.data.data(), out->data.data(), ta.numel());
    const bool rg = node(a).requires_grad || node(b).requires_grad;
    Var result = emplace(out, rg, nullptr);
    node(result).backward_fn = [a, b, result](Graph& g) {
        const Tensor& dy = *g.node(result).grad;
        const int64_t n = dy.numel();
        Tensor scratch(dy.shape);
        if (g.node(a).requires_grad) {
            kernels::mul(dy.data.data(), g.value(b).data.data(), scratch.data.data(), n);
            g.accumulate(a, scratch.data.data(), n);
        }
        if (g.node(b).requires_grad) {
            kernels::mul(dy.data.data(), g.value(a).data.data(), scratch.data.data(), n);
            g.accumulate(b, scratch.data.data(), n);
        }
    };
    return result;
}

Graph::Var Graph::scale(Var x, float c) {
    const Tensor& tx = value(x);
    auto out = std::make_shared<Tensor>(tx.shape);
    kernels::scale(tx.data.data(), c, out->data.data(), tx.numel());
    Var result = emplace(out, node(x).requires_grad, nullptr);
    node(result).backward_fn = [x, c, result](Graph& g) {
        const Tensor& dy = *g.node(result).grad;
        if (g.node(x).requires_grad) {
            Tensor& dx = g.ensure_grad(x);
            kernels::axpy(c, dy.data.data(), dx.data.data(), dy.numel());
        }
    };
    return result;
}

Graph::Var Graph::add_bias(Var x, Var bias) {
    const Tensor& tx = value(x);
    const Tensor& tb = value(bias);
    const int64_t d = tb.numel();
    require(tx.numel() % d == 0 && tx.numel() >= d,
            "bias shape " + shape_string(tb.shape) + " does not divide input " +
                shape_string(tx.shape));
    const int64_t rows = tx.numel() / d;
    auto out = std::make_shared<Tensor>(tx.shape);
    kernels::add_bias(tx.data.data(), tb.data.data(), out->data.data(), rows, d);
    const bool rg = node(x).requires_grad || node(bias).requires_grad;
    Var result = emplace(out, rg, nullptr);
    node(result).backward_fn = [x, bias, result, rows, d](Graph& g) {
        const Tensor& dy = *g.node(result).grad;
        g.accumulate(x, dy.data.data(), dy.numel());
        if (g.node(bias).requires_grad) {
            Tensor& db = g.ensure_grad(bias);
            kernels::col_sum_acc(dy.data.data(), db.data.data(), rows, d);
        }
    };
    return result;
}

Graph::Var Graph::gelu(Var x) {
    const Tensor& tx = value(x);
    auto out = std::make_shared<Tensor>(tx.shape);
    kernels::gelu(tx.data.data(), out->data.data(), tx.numel());
    Var result = emplace(out, node(x).requires_grad, nullptr);
    node(result).backward_fn = [x, result](Graph& g) {
        const Tensor& dy = *g.node(result).grad;
        if (g.node(x).requires_grad) {
            Tensor& dx = g.ensure_grad(x);
            kernels::gelu_backward(g.value(x).data.data(), dy.data.data(),
                                   dx.data.data(), dy.numel());
        }
    };
    return result;
}

Graph::Var Graph::tanh_op(Var x) {
    const Tensor& tx = value(x);
    auto out = std::make_shared<Tensor>(tx.shape);
    kernels::tanh_act(tx.data.data(), out->data.data(), tx.numel());
    Var result = emplace(out, node(x).requires_grad, nullptr);
    node(result).backward_fn = [x, result](Graph& g) {
        const Tensor& dy = *g.node(result).grad;
        if (g.node(x).requires_grad) {
            Tensor& dx = g.ensure_grad(x);
            kernels::tanh_backward(g.value(result).data.data(), dy.data.data(),
                                   dx.data.data(), dy.numel());
        }
    };
    return result;
}

Graph::Var Graph::layer_norm(Var x, Var gain, Var bias, float eps) {
    const Tensor& tx = value(x);
    const Tensor& tg = value(gain);
    const Tensor& tb = value(bias);
    const int64_t d = tx.shape.back();
    require(d >= 1 && tg.numel() == d && tb.numel() == d,
            "layer_norm gain/bias must match the trailing axis");
    const int64_t rows = tx.numel() / d;
    auto out = std::make_shared<Tensor>(tx.shape);
    auto mean = std::make_shared<Tensor>(std::vector<int64_t>{rows});
    auto rstd = std::make_shared<Tensor>(std::vector<int64_t>{rows});
    kernels::layer_norm(tx.data.data(), tg.data.data(), tb.data.data(), eps,
                        out->data.data(), mean->data.data(), rstd->data.data(), rows, d);
    const bool rg =
        node(x).requires_grad || node(gain).requires_grad || node(bias).requires_grad;
    Var result = emplace(out, rg, nullptr);
    node(result).backward_fn = [x, gain, bias, result, mean, rstd, rows, d](Graph& g) {
        const Tensor& dy = *g.node(result).grad;
        Tensor scratch_x, scratch_g, scratch_b;
        float* dx = nullptr;
        float* dg = nullptr;
        float* db = nullptr;
        if (g.node(x).requires_grad) {
            dx = g.ensure_grad(x).data.data();
        } else {
            scratch_x = Tensor(g.value(x).shape);
            dx = scratch_x.data.data();
        }
        if (g.node(gain).requires_grad) {
            dg = g.ensure_grad(gain).data.data();
        } else {
            scratch_g = Tensor({d});
            dg = scratch_g.data.data();
        }
        if (g.node(bias).requires_grad) {
            db = g.ensure_grad(bias).data.data();
        } else {
            scratch_b = Tensor({d});
            db = scratch_b.data.data();
        }
        kernels::layer_norm_backward(g.value(x).data.data(), g.value(gain).data.data(),
                                     mean->data.data(), rstd->data.data(),
                                     dy.data.data(), dx, dg, db, rows, d);
    };
    return result;
}

Graph::Var Graph::softmax(Var x, int axis) {
    const Tensor& tx = value(x);
    const int rank = tx.rank();
    if (axis < 0) axis += rank;
    require(axis >= 0 && axis < rank, "softmax axis out of range");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= tx.shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < rank; ++i) inner *= tx.shape[static_cast<size_t>(i)];
    const int64_t n = tx.shape[static_cast<size_t>(axis)];
    auto out = std::make_shared<Tensor>(tx.shape);
    kernels::softmax(tx.data.data(), out->data.data(), outer, n, inner);
    Var result = emplace(out, node(x).requires_grad, nullptr);
    node(result).backward_fn = [x, result, outer, n, inner](Graph& g) {
        const Tensor& dy = *g.node(result).grad;
        if (g.node(x).requires_grad) {
            Tensor& dx = g.ensure_grad(x);
            kernels::softmax_backward(g.value(result).data.data(), dy.data.data(),
                                      dx.data.data(), outer, n, inner);
        }
    };
    return result;
}

Graph::Var Graph::masked_softmax(Var scores, const TokenMatrix& key_mask) {
    const Tensor& tx = value(scores);
    require(tx.rank() >= 2, "masked_softmax expects rank >= 2 scores");
    const int64_t batch = tx.shape.front();
    const int64_t n = tx.shape.back();
    require(key_mask.rows == batch && key_mask.cols == n,
            "key mask must be [batch x keys]");
    const int64_t rows_per_batch = tx.numel() / (batch * n);
    auto out = std::make_shared<Tensor>(tx.shape);
    auto mask = std::make_shared<std::vector<int32_t>>(key_mask.data);
    kernels::masked_softmax_lastdim(tx.data.data(), mask->data(), out->data.data(),
                                    batch, rows_per_batch, n);
    Var result = emplace(out, node(scores).requires_grad, nullptr);
    node(result).backward_fn = [scores, result, batch, rows_per_batch, n](Graph& g) {
        const Tensor& dy = *g.node(result).grad;
        if (g.node(scores).requires_grad) {
            Tensor& dx = g.ensure_grad(scores);
            kernels::softmax_backward(g.value(result).data.data(), dy.data.data(),
                                      dx.data.data(), batch * rows_per_batch, n, 1);
        }
    };
    return result;
}

Graph::Var Graph::reshape(Var x, std::vector<int64_t> shape) {
    const Tensor& tx = value(x);
    require(numel_of(shape) == tx.numel(), "reshape must preserve element count");
    auto out = std::make_shared<Tensor>(Tensor::from(std::move(shape), tx.data));
    Var result = emplace(out, node(x).requires_grad, nullptr);
    node(result).backward_fn = [x, result](Graph& g) {
        const Tensor& dy = *g.node(result).grad;
        g.accumulate(x, dy.data.data(), dy.numel());
    };
    return result;
}

Graph::Var Graph::split_heads(Var x, int64_t num_heads) {
    const Tensor& tx = value(x);
    require(tx.rank() == 3, "split_heads expects [batch, seq, hidden]");
    const int64_t b = tx.shape[0], s = tx.shape[1], d = tx.shape[2];
    require(d % num_heads == 0, "hidden size not divisible by head count");
    const int64_t dh = d / num_heads;
    auto out = std::make_shared<Tensor>(std::vector<int64_t>{b, num_heads, s, dh});
    kernels::split_heads(tx.data.data(), out->data.data(), b, s, num_heads, dh, false);
    Var result = emplace(out, node(x).requires_grad, nullptr);
    node(result).backward_fn = [x, result, b, s, num_heads, dh](Graph& g) {
        const Tensor& dy = *g.node(result).grad;
        if (g.node(x).requires_grad) {
            Tensor& dx = g.ensure_grad(x);
            kernels::merge_heads(dy.data.data(), dx.data.data(), b, s, num_heads, dh,
                                 true);
        }
    };
    return result;
}

Graph::Var Graph::merge_heads(Var x) {
    const Tensor& tx = value(x);
    require(tx.rank() == 4, "merge_heads expects [batch, heads, seq, head_dim]");
    const int64_t b = tx.shape[0], h = tx.shape[1], s = tx.shape[2], dh = tx.shape[3];
    auto out = std::make_shared<Tensor>(std::vector<int64_t>{b, s, h * dh});
    kernels::merge_heads(tx.data.data(), out->data.data(), b, s, h, dh, false);
    Var result = emplace(out, node(x).requires_grad, nullptr);
    node(result).backward_fn = [x, result, b, s, h, dh](Graph& g) {
        const Tensor& dy = *g.node(result).grad;
        if (g.node(x).requires_grad) {
            Tensor& dx = g.ensure_grad(x);
            kernels::split_heads(dy.data.data(), dx.data.data(), b, s, h, dh, true);
        }
    };
    return result;
}

Graph::Var Graph::embedding(Var table, const std::vector<int32_t>& ids,
                            std::vector<int64_t> prefix_shape) {
    const Tensor& tt = value(table);
    require(tt.rank() == 2, "embedding table must be [vocab, dim]");
    const int64_t vocab = tt.shape[0];
    const int64_t d = tt.shape[1];
    require(numel_of(prefix_shape) == static_cast<int64_t>(ids.size()),
            "embedding id count does not match output shape");
    for (int32_t id : ids)
        if (id < 0 || id >= vocab)
            throw UsageError("embedding id " + std::to_string(id) +
                             " out of range for vocab " + std::to_string(vocab));
    auto shared_ids = std::make_shared<std::vector<int32_t>>(ids);
    std::vector<int64_t> out_shape = std::move(prefix_shape);
    out_shape.push_back(d);
    auto out = std::make_shared<Tensor>(out_shape);
    kernels::embedding_gather(tt.data.data(), shared_ids->data(), out->data.data(),
                              static_cast<int64_t>(ids.size()), d);
    Var result = emplace(out, node(table).requires_grad, nullptr);
    node(result).backward_fn = [table, result, shared_ids, d](Graph& g) {
        const Tensor& dy = *g.node(result).grad;
        if (g.node(table).requires_grad) {
            Tensor& dt = g.ensure_grad(table);
            kernels::embedding_scatter_add(dy.data.data(), shared_ids->data(),
                                           dt.data.data(),
                                           static_cast<int64_t>(shared_ids->size()), d);
        }
    };
    return result;
}

Graph::Var Graph::take_position(Var x, int64_t position) {
    const Tensor& tx = value(x);
    require(tx.rank() == 3, "take_position expects [batch, seq, hidden]");
    const int64_t b = tx.shape[0], s = tx.shape[1], d = tx.shape[2];
    require(position >= 0 && position < s, "position out of range");
    auto out = std::make_shared<Tensor>(std::vector<int64_t>{b, d});
    for (int64_t bi = 0; bi < b; ++bi)
        std::memcpy(out->data.data() + bi * d,
                    tx.data.data() + (bi * s + position) * d,
                    static_cast<size_t>(d) * sizeof(float));
    Var result = emplace(out, node(x).requires_grad, nullptr);
    node(result).backward_fn = [x, result, b, s, d, position](Graph& g) {
        const Tensor& dy = *g.node(result).grad;
        if (g.node(x).requires_grad) {
            Tensor& dx = g.ensure_grad(x);
            for (int64_t bi = 0; bi < b; ++bi) {
                float* dst = dx.data.data() + (bi * s + position) * d;
                const float* src = dy.data.data() + bi * d;
                for (int64_t i = 0; i < d; ++i) dst[i] += src[i];
            }
        }
    };
    return result;
}

Graph::Var Graph::sum(Var x) {
    const Tensor& tx = value(x);
    double acc = 0.0;
    for (float v : tx.data) acc += v;
    auto out = std::make_shared<Tensor>(Tensor::scalar(static_cast<float>(acc)));
    Var result = emplace(out, node(x).requires_grad, nullptr);
    node(result).backward_fn = [x, result](Graph& g) {
        const float dy = g.node(result).grad->data[0];
        if (g.node(x).requires_grad) {
            Tensor& dx = g.ensure_grad(x);
            for (float& v : dx.data) v += dy;
        }
    };
    return result;
}

Graph::Var Graph::mean(Var x) {
    const Tensor& tx = value(x);
    const int64_t n = tx.numel();
    double acc = 0.0;
    for (float v : tx.data) acc += v;
    auto out = std::make_shared<Tensor>(
        Tensor::scalar(static_cast<float>(acc / static_cast<double>(n))));
    Var result = emplace(out, node(x).requires_grad, nullptr);
    node(result).backward_fn = [x, result, n](Graph& g) {
        const float dy = g.node(result).grad->data[0] / static_cast<float>(n);
        if (g.node(x).requires_grad) {
            Tensor& dx = g.ensure_grad(x);
            for (float& v : dx.data) v += dy;
        }
    };
    return result;
}

Graph::Var Graph::cross_entropy(Var logits, const std::vector<int32_t>& labels) {
    const Tensor& tl = value(logits);
    require(tl.rank() == 2, "cross_entropy expects [rows, classes] logits");
    const int64_t rows = tl.shape[0];
    const int64_t n = tl.shape[1];
    require(rows == static_cast<int64_t>(labels.size()),
            "label count does not match logit rows");
    int64_t selected = 0;
    for (int32_t l : labels) {
        if (l >= 0) {
            if (l >= n) throw UsageError("label out of range");
            ++selected;
        }
    }
    if (selected == 0) throw UsageError("cross_entropy: no labeled rows");

    double total = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        if (labels[static_cast<size_t>(r)] < 0) continue;
        const float* xs = tl.data.data() + r * n;
        float mx = xs[0];
        for (int64_t i = 1; i < n; ++i) mx = std::max(mx, xs[i]);
        double lse = 0.0;
        for (int64_t i = 0; i < n; ++i)
            lse += std::exp(static_cast<double>(xs[i] - mx));
        total -= static_cast<double>(xs[labels[static_cast<size_t>(r)]] - mx) -
                 std::log(lse);
    }
    const float loss = static_cast<float>(total / static_cast<double>(selected));
    if (!std::isfinite(loss)) throw Error("cross_entropy produced a non-finite loss");

    auto probs = std::make_shared<Tensor>(tl.shape);
    kernels::softmax(tl.data.data(), probs->data.data(), rows, n, 1);
    auto shared_labels = std::make_shared<std::vector<int32_t>>(labels);

    Var result = emplace(std::make_shared<Tensor>(Tensor::scalar(loss)),
                         node(logits).requires_grad, nullptr);
    node(result).backward_fn = [logits, result, probs, shared_labels, rows, n,
                                selected](Graph& g) {
        const float dy = g.node(result).grad->data[0];
        if (g.node(logits).requires_grad) {
            Tensor& dx = g.ensure_grad(logits);
            kernels::softmax_xent_backward(probs->data.data(), shared_labels->data(),
                                           dy / static_cast<float>(selected),
                                           dx.data.data(), rows, n);
        }
    };
    return result;
}

Graph::Var Graph::kl_to_teacher(Var student_logits, const Tensor& teacher_logits,
                                const std::vector<int32_t>& selected_rows,
                                float temperature) {
    const Tensor& ts = value(student_logits);
    require(ts.rank() == 2, "kl_to_teacher expects [rows, classes] logits");
    require(ts.same_shape(teacher_logits),
            "student and teacher logit shapes differ: " + shape_string(ts.shape) +
                " vs " + shape_string(teacher_logits.shape));
    const int64_t rows = ts.shape[0];
    const int64_t n = ts.shape[1];
    require(rows == static_cast<int64_t>(selected_rows.size()),
            "selection mask does not match logit rows");
    if (temperature <= 0.0f) throw UsageError("temperature must be positive");
    int64_t count = 0;
    for (int32_t s : selected_rows) count += (s != 0);
    if (count == 0) throw UsageError("kl_to_teacher: no selected rows");

    auto p_student = std::make_shared<Tensor>(ts.shape);
    auto p_teacher = std::make_shared<Tensor>(ts.shape);
    {
        Tensor scaled_s(ts.shape);
        Tensor scaled_t(ts.shape);
        kernels::scale(ts.data.data(), 1.0f / temperature, scaled_s.data.data(),
                       ts.numel());
        kernels::scale(teacher_logits.data.data(), 1.0f / temperature,
                       scaled_t.data.data(), ts.numel());
        kernels::softmax(scaled_s.data.data(), p_student->data.data(), rows, n, 1);
        kernels::softmax(scaled_t.data.data(), p_teacher->data.data(), rows, n, 1);
    }
    double total = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        if (!selected_rows[static_cast<size_t>(r)]) continue;
        const float* pt = p_teacher->data.data() + r * n;
        const float* ps = p_student->data.data() + r * n;
        for (int64_t i = 0; i < n; ++i) {
            const double p = pt[i];
            if (p <= 0.0) continue;
            const double q = std::max(static_cast<double>(ps[i]), 1e-30);
            total += p * (std::log(p) - std::log(q));
        }
    }
    const float loss = static_cast<float>(total / static_cast<double>(count));
    if (!std::isfinite(loss)) throw Error("kl_to_teacher produced a non-finite loss");

    auto selection = std::make_shared<std::vector<int32_t>>(selected_rows);
    Var result = emplace(std::make_shared<Tensor>(Tensor::scalar(loss)),
                         node(student_logits).requires_grad, nullptr);
    node(result).backward_fn = [student_logits, result, p_student, p_teacher, selection,
                                rows, n, count, temperature](Graph& g) {
        const float dy = g.node(result).grad->data[0];
        if (g.node(student_logits).requires_grad) {
            Tensor& dx = g.ensure_grad(student_logits);
            const float scale = dy / (static_cast<float>(count) * temperature);
            kernels::selected_rows_diff_acc(p_student->data.data(),
                                            p_teacher->data.data(), selection->data(),
                                            scale, dx.data.data(), rows, n);
        }
    };
    return result;
}

Graph::Var Graph::cosine_distance(Var student, const Tensor& teacher,
                                  const std::vector<int32_t>& selected_rows) {
    const Tensor& ts = value(student);
    require(ts.rank() == 2, "cosine_distance expects [rows, dim]");
    require(ts.same_shape(teacher), "student and teacher hidden shapes differ");
    const int64_t rows = ts.shape[0];
    const int64_t d = ts.shape[1];
    require(rows == static_cast<int64_t>(selected_rows.size()),
            "selection mask does not match rows");
    int64_t count = 0;
    for (int32_t s : selected_rows) count += (s != 0);
    if (count == 0) throw UsageError("cosine_distance: no selected rows");

    double total = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        if (!selected_rows[static_cast<size_t>(r)]) continue;
        const float* a = ts.data.data() + r * d;
        const float* b = teacher.data.data() + r * d;
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            dot += static_cast<double>(a[i]) * b[i];
            na += static_cast<double>(a[i]) * a[i];
            nb += static_cast<double>(b[i]) * b[i];
        }
        const double denom = std::sqrt(na) * std::sqrt(nb);
        total += denom < 1e-30 ? 1.0 : 1.0 - dot / denom;
    }
    const float loss = static_cast<float>(total / static_cast<double>(count));

    auto teacher_copy = std::make_shared<Tensor>(teacher);
    auto selection = std::make_shared<std::vector<int32_t>>(selected_rows);
    Var result = emplace(std::make_shared<Tensor>(Tensor::scalar(loss)),
                         node(student).requires_grad, nullptr);
    node(result).backward_fn = [student, result, teacher_copy, selection, rows, d,
                                count](Graph& g) {
        const float dy = g.node(result).grad->data[0];
        if (!g.node(student).requires_grad) return;
        Tensor& dx = g.ensure_grad(student);
        const Tensor& ts = g.value(student);
        const double w = static_cast<double>(dy) / static_cast<double>(count);
        for (int64_t r = 0; r < rows; ++r) {
            if (!(*selection)[static_cast<size_t>(r)]) continue;
            const float* a = ts.data.data() + r * d;
            const float* b = teacher_copy->data.data() + r * d;
            double dot = 0.0, na2 = 0.0, nb2 = 0.0;
            for (int64_t i = 0; i < d; ++i) {
                dot += static_cast<double>(a[i]) * b[i];
                na2 += static_cast<double>(a[i]) * a[i];
                nb2 += static_cast<double>(b[i]) * b[i];
            }
            const double na = std::sqrt(na2), nb = std::sqrt(nb2);
            if (na * nb < 1e-30) continue;
            const double cosv = dot / (na * nb);
            float* dxr = dx.data.data() + r * d;
            for (int64_t i = 0; i < d; ++i) {
                const double dcos = b[i] / (na * nb) - cosv * a[i] / na2;
                dxr[i] += static_cast<float>(-w * dcos);
            }
        }
    };
    return result;
}

void Graph::backward(Var root) {
    if (!root.valid() || static_cast<size_t>(root.id) >= nodes_.size())
        throw UsageError("backward: invalid root");
    Node& r = node(root);
    if (r.value->numel() != 1)
        throw UsageError("backward root must be a scalar, got shape " +
                         shape_string(r.value->shape));
    ensure_grad(root).data[0] = 1.0f;
    for (int32_t id = root.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad && n.requires_grad && n.backward_fn) n.backward_fn(*this);
    }
}

}  // namespace lmforge
