#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "forgeloc/common.hpp"

namespace forgeloc {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // sized on first backward touch
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // scatters this->grad into parents

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
};

}  // namespace detail

// Reverse-mode autodiff array. Value-semantic handle to a shared graph node;
// ops build the graph only while gradients are globally enabled and some
// input requires them, so inference and sampling pay no tape overhead.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(const Shape& s) { return full(s, 0.0); }
    static Tensor full(const Shape& s, double v);
    static Tensor scalar(double v) { return full({1}, v); }
    // Leaf tensor; set requires_grad for trainable parameters.
    static Tensor from(const Shape& s, std::vector<double> data, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t size() const { return static_cast<int64_t>(node_->values.size()); }
    std::span<const double> values() const { return node_->values; }
    std::span<double> raw_values() { return node_->values; }  // parameter updates only
    bool requires_grad() const { return node_->requires_grad; }

    double item() const;

    std::span<const double> grad() const;
    void zero_grad();

    // Backpropagates from this scalar through the recorded graph.
    // Gradients accumulate into every reachable node's grad buffer.
    void backward();

    uint64_t checksum() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  private:
    std::shared_ptr<detail::Node> node_;
};

// Thread-local gradient mode, RAII-toggled (sampling loops run without grad).
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();

  private:
    bool prev_;
};

// Records a hash of every piecewise decision (ReLU sign, clamp region,
// argmax index) taken while active. A finite-difference oracle compares the
// hashes of its two probe evaluations: if they differ, the probe window
// crosses a kink and the central-difference estimate is invalid there.
// No cost unless a guard is live.
struct KinkTraceGuard {
    KinkTraceGuard();
    ~KinkTraceGuard();
    uint64_t hash() const;

  private:
    bool prev_;
    uint64_t prev_hash_;
};

namespace detail {
// Creates an op result node. `backprop` may be empty for non-differentiable ops.
Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               std::function<void(Node&)> backprop);
}  // namespace detail

// --- elementwise ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_t(const Tensor& a);
Tensor log_e(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

// --- reductions ---
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Maximum over all entries; the subgradient flows to the first maximal
// element in row-major order.
Tensor max_all(const Tensor& a);

// --- shape/channel ops on CHW tensors ---
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor select_channel(const Tensor& a, int c);
// features: CxHxW, mask: 1xHxW; multiplies every channel by the mask.
Tensor mul_bcast_channel(const Tensor& features, const Tensor& mask);

// Binary cross-entropy between prediction and constant target, averaged over
// entries. Predictions are clamped to [eps, 1-eps] before the logs.
Tensor bce_mean(const Tensor& pred, const Tensor& target, double eps = 1e-7);

}  // namespace forgeloc
