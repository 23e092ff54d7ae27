#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "moodgen/core/tensor.hpp"

namespace moodgen::nn {

// Reverse-mode autodiff over Tensor values. Graphs are built per step and
// discarded after backward(); parameters are leaf Vars that persist across
// steps. Everything is single-threaded and evaluation order is fixed, so
// training trajectories are bit-reproducible.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad() {
        if (!grad_alloc) {
            grad = Tensor(value.shape());
            grad_alloc = true;
        }
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    static Var leaf(Tensor value) { return Var(std::move(value), true); }
    static Var constant(Tensor value) { return Var(std::move(value), false); }

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad_alloc; }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    void zero_grad() {
        if (node_ && node_->grad_alloc) node_->grad.fill(0.0);
    }

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Runs reverse accumulation from a scalar root (size-1 tensor).
void backward(const Var& root);

// --- elementwise / scalar ---
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var relu(const Var& a);
Var silu(const Var& a);
Var tanh_op(const Var& a);
Var square(const Var& a);

// --- shape ---
Var reshape(const Var& a, std::vector<std::int64_t> shape);
Var concat_rows(const std::vector<Var>& parts);                // 2-D, along axis 0
Var concat_channels(const Var& a, const Var& b);               // [N,C*,H,W] along C
Var select_row(const Var& a, std::int64_t i);                  // [N,D] -> [D]
Var spatial_tokens(const Var& x, std::int64_t n);              // [N,C,H,W] -> [H*W,C]
Var stack_tokens_to_batch(const std::vector<Var>& tokens,      // each [H*W,C]
                          std::int64_t c, std::int64_t h, std::int64_t w);

// --- linear algebra ---
Var matmul(const Var& a, const Var& b);   // [M,K]x[K,N]
Var transpose2(const Var& a);             // [M,N] -> [N,M]
Var matvec(const Var& a, const Var& x);   // [M,K]x[K] -> [M]
Var dot(const Var& a, const Var& b);      // [K]·[K] -> [1]
Var linear(const Var& x, const Var& w, const Var& b);  // [N,Din] -> [N,Dout]
Var bias_rows(const Var& x, const Var& b);

// --- reductions ---
Var mean_all(const Var& a);
Var sum_all(const Var& a);
Var mean_rows(const Var& a);              // [N,D] -> [D]
Var mean_per_sample(const Var& a);        // [N,...] -> [N]
// (1/N) * sum_i v[i]*w[i] with fixed (non-differentiated) weights; -> [1].
Var weighted_mean(const Var& v, const Tensor& w);

// --- conv / spatial ---
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var avg_pool2(const Var& x);
Var upsample_nearest2(const Var& x);
Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps = 1e-5);
Var add_bias_channels_per_sample(const Var& x, const Var& b);  // [N,C,H,W] + [N,C]

// --- probabilistic ---
Var softmax_rows(const Var& x);
// Per-row cross-entropy with integer targets; returns [N] losses.
Var softmax_xent(const Var& logits, const std::vector<std::int64_t>& targets);
Var l2_normalize_rows(const Var& x, double eps = 1e-12);
Var l2_normalize_vec(const Var& x, double eps = 1e-12);
Var gather_rows(const Var& table, const std::vector<std::int64_t>& idx);

}  // namespace moodgen::nn
