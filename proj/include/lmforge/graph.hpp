#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "lmforge/tensor.hpp"

namespace lmforge {

// Reverse-mode autodiff tape. Operations execute eagerly and append a node
// per result; creation order is a topological order, so backward() is a
// single reverse sweep. Gradients accumulate by summation, which makes
// fan-out (one tensor consumed by several ops) and weight tying come out
// right without special cases.
class Graph {
public:
    struct Var {
        int32_t id = -1;
        bool valid() const { return id >= 0; }
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Leaf over caller-owned storage. Repeated calls with the same tensor
    // return the same node, so a shared (tied) tensor gets one gradient
    // buffer that collects every use.
    Var leaf(const std::shared_ptr<Tensor>& t);
    // Leaf over a value the graph owns; never receives a gradient.
    Var constant(Tensor t);

    const Tensor& value(Var v) const;
    // Gradient of the last backward() root w.r.t. v; null when v was not
    // reached or does not require one.
    const Tensor* grad(Var v) const;
    const Tensor* grad_for(const Tensor* storage) const;

    // --- differentiable operations -------------------------------------
    Var matmul(Var a, Var b);     // [...,m,k] x [...,k,n]
    Var matmul_nt(Var a, Var b);  // [...,m,k] x [...,n,k]^T
    Var add(Var a, Var b);        // same shape
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);  // elementwise
    Var scale(Var x, float c);
    Var add_bias(Var x, Var bias);  // bias over trailing axes
    Var gelu(Var x);
    Var tanh_op(Var x);
    Var layer_norm(Var x, Var gain, Var bias, float eps);
    Var softmax(Var x, int axis);
    // Softmax over the last axis of [batch, ..., n] scores with per-batch
    // key masks [batch, n]; masked keys get exactly zero weight.
    Var masked_softmax(Var scores, const TokenMatrix& key_mask);
    Var reshape(Var x, std::vector<int64_t> shape);
    Var split_heads(Var x, int64_t num_heads);  // [B,S,d] -> [B,H,S,d/H]
    Var merge_heads(Var x);                     // [B,H,S,dh] -> [B,S,H*dh]
    Var embedding(Var table, const std::vector<int32_t>& ids,
                  std::vector<int64_t> prefix_shape);
    Var take_position(Var x, int64_t position);  // [B,S,d] -> [B,d]
    Var sum(Var x);
    Var mean(Var x);
    // Mean cross-entropy over rows with label >= 0; label -1 means ignore.
    Var cross_entropy(Var logits, const std::vector<int32_t>& labels);
    // Mean over selected rows of KL(softmax(teacher/T) || softmax(student/T)).
    Var kl_to_teacher(Var student_logits, const Tensor& teacher_logits,
                      const std::vector<int32_t>& selected_rows, float temperature);
    // Mean over selected rows of (1 - cosine(student_row, teacher_row)).
    Var cosine_distance(Var student, const Tensor& teacher,
                        const std::vector<int32_t>& selected_rows);

    // Root must be scalar (numel == 1).
    void backward(Var root);

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        std::shared_ptr<Tensor> value;
        std::unique_ptr<Tensor> grad;
        bool requires_grad = false;
        std::function<void(Graph&)> backward_fn;
    };

    Var emplace(std::shared_ptr<Tensor> value, bool requires_grad,
                std::function<void(Graph&)> backward_fn);
    Node& node(Var v) { return nodes_[static_cast<size_t>(v.id)]; }
    const Node& node(Var v) const { return nodes_[static_cast<size_t>(v.id)]; }
    Tensor& ensure_grad(Var v);
    // Adds g (same numel as v's value) into v's gradient if v requires one.
    void accumulate(Var v, const float* g, int64_t n);

    std::vector<Node> nodes_;
    std::unordered_map<const Tensor*, int32_t> leaf_lookup_;
};

using Var = Graph::Var;

}  // namespace lmforge
