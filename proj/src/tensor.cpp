#include "forgeloc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace forgeloc {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace {
thread_local bool g_grad_enabled = true;
thread_local bool g_kink_trace = false;
thread_local uint64_t g_kink_hash = 0;

inline void trace_decision(uint64_t bit) {
    g_kink_hash = (g_kink_hash ^ bit) * 1099511628211ull + 0x9e37ull;
}
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

KinkTraceGuard::KinkTraceGuard() : prev_(g_kink_trace), prev_hash_(g_kink_hash) {
    g_kink_trace = true;
    g_kink_hash = 1469598103934665603ull;
}
KinkTraceGuard::~KinkTraceGuard() {
    g_kink_trace = prev_;
    g_kink_hash = prev_hash_;
}
uint64_t KinkTraceGuard::hash() const { return g_kink_hash; }

Tensor Tensor::full(const Shape& s, double v) {
    auto n = std::make_shared<detail::Node>();
    n->shape = s;
    n->values.assign(static_cast<size_t>(shape_numel(s)), v);
    return Tensor(std::move(n));
}

Tensor Tensor::from(const Shape& s, std::vector<double> data, bool requires_grad) {
    if (static_cast<int64_t>(data.size()) != shape_numel(s))
        throw ShapeError("tensor data size " + std::to_string(data.size()) + " does not match shape " + shape_str(s));
    auto n = std::make_shared<detail::Node>();
    n->shape = s;
    n->values = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->values[0];
}

std::span<const double> Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->grad.assign(node_->values.size(), 0.0);
}

void Tensor::backward() {
    if (size() != 1) throw ShapeError("backward() requires a scalar root");

    // Iterative post-order DFS for a reverse topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            detail::Node* p = n->parents[idx++].get();
            if (!seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (detail::Node* n : order) n->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop(**it);
    }
}

uint64_t Tensor::checksum() const {
    // FNV-1a over the raw value bytes.
    uint64_t h = 1469598103934665603ull;
    const auto* bytes = reinterpret_cast<const unsigned char*>(node_->values.data());
    for (size_t i = 0; i < node_->values.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
    }
    return h;
}

namespace detail {

Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    bool track = false;
    if (g_grad_enabled) {
        for (const Tensor& t : inputs)
            if (t.node()->requires_grad) track = true;
    }
    if (track) {
        n->requires_grad = true;
        n->parents.reserve(inputs.size());
        for (const Tensor& t : inputs) n->parents.push_back(t.node());
        n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
}

}  // namespace detail

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *n.parents[k];
            p.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        pa.ensure_grad();
        pb.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            pa.grad[i] += n.grad[i];
            pb.grad[i] -= n.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        pa.ensure_grad();
        pb.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            pa.grad[i] += n.grad[i] * pb.values[i];
            pb.grad[i] += n.grad[i] * pa.values[i];
        }
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    auto av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
    return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    });
}

Tensor mul_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    auto av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
    return detail::make_op(a.shape(), std::move(out), {a}, [s](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * s;
    });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    auto av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    if (g_kink_trace)
        for (size_t i = 0; i < out.size(); ++i) trace_decision(av[i] > 0.0);
    return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i)
            if (p.values[i] > 0.0) p.grad[i] += n.grad[i];
    });
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    auto av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-av[i]));
    return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            const double y = n.values[i];
            p.grad[i] += n.grad[i] * y * (1.0 - y);
        }
    });
}

Tensor tanh_t(const Tensor& a) {
    std::vector<double> out(a.size());
    auto av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
    return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            const double y = n.values[i];
            p.grad[i] += n.grad[i] * (1.0 - y * y);
        }
    });
}

Tensor log_e(const Tensor& a) {
    std::vector<double> out(a.size());
    auto av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i]);
    return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] / p.values[i];
    });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    std::vector<double> out(a.size());
    auto av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, av[i]));
    if (g_kink_trace)
        for (size_t i = 0; i < out.size(); ++i) trace_decision((av[i] < lo ? 1u : 0u) | (av[i] > hi ? 2u : 0u));
    return detail::make_op(a.shape(), std::move(out), {a}, [lo, hi](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i)
            if (p.values[i] >= lo && p.values[i] <= hi) p.grad[i] += n.grad[i];
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return detail::make_op({1}, {s}, {a}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    const double inv = 1.0 / static_cast<double>(a.size());
    return detail::make_op({1}, {s * inv}, {a}, [inv](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[0] * inv;
    });
}

Tensor max_all(const Tensor& a) {
    auto av = a.values();
    size_t arg = 0;
    for (size_t i = 1; i < av.size(); ++i)
        if (av[i] > av[arg]) arg = i;
    if (g_kink_trace) trace_decision(arg);
    return detail::make_op({1}, {av[arg]}, {a}, [arg](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        p.grad[arg] += n.grad[0];
    });
}

namespace {
void check_chw(const Tensor& a, const char* op) {
    if (a.shape().size() != 3) throw ShapeError(std::string(op) + ": expected CxHxW tensor, got " + shape_str(a.shape()));
}
}  // namespace

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    check_chw(a, "concat_channels");
    check_chw(b, "concat_channels");
    if (a.shape()[1] != b.shape()[1] || a.shape()[2] != b.shape()[2])
        throw ShapeError("concat_channels: spatial mismatch");
    const int ca = a.shape()[0], cb = b.shape()[0];
    const int hw = a.shape()[1] * a.shape()[2];
    std::vector<double> out;
    out.reserve(static_cast<size_t>((ca + cb) * hw));
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    const size_t na = a.size();
    return detail::make_op({ca + cb, a.shape()[1], a.shape()[2]}, std::move(out), {a, b},
                           [na](detail::Node& n) {
                               auto& pa = *n.parents[0];
                               auto& pb = *n.parents[1];
                               pa.ensure_grad();
                               pb.ensure_grad();
                               for (size_t i = 0; i < na; ++i) pa.grad[i] += n.grad[i];
                               for (size_t i = na; i < n.grad.size(); ++i) pb.grad[i - na] += n.grad[i];
                           });
}

Tensor select_channel(const Tensor& a, int c) {
    check_chw(a, "select_channel");
    if (c < 0 || c >= a.shape()[0]) throw ShapeError("select_channel: index out of range");
    const int hw = a.shape()[1] * a.shape()[2];
    const size_t off = static_cast<size_t>(c) * hw;
    std::vector<double> out(a.values().begin() + off, a.values().begin() + off + hw);
    return detail::make_op({1, a.shape()[1], a.shape()[2]}, std::move(out), {a}, [off](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[off + i] += n.grad[i];
    });
}

Tensor mul_bcast_channel(const Tensor& features, const Tensor& mask) {
    check_chw(features, "mul_bcast_channel");
    check_chw(mask, "mul_bcast_channel");
    if (mask.shape()[0] != 1 || mask.shape()[1] != features.shape()[1] || mask.shape()[2] != features.shape()[2])
        throw ShapeError("mul_bcast_channel: mask must be 1xHxW matching features");
    const int c = features.shape()[0];
    const int hw = features.shape()[1] * features.shape()[2];
    std::vector<double> out(features.size());
    auto fv = features.values();
    auto mv = mask.values();
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < hw; ++i) out[static_cast<size_t>(ch) * hw + i] = fv[static_cast<size_t>(ch) * hw + i] * mv[i];
    return detail::make_op(features.shape(), std::move(out), {features, mask}, [c, hw](detail::Node& n) {
        auto& pf = *n.parents[0];
        auto& pm = *n.parents[1];
        pf.ensure_grad();
        pm.ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            const size_t base = static_cast<size_t>(ch) * hw;
            for (int i = 0; i < hw; ++i) {
                pf.grad[base + i] += n.grad[base + i] * pm.values[i];
                pm.grad[i] += n.grad[base + i] * pf.values[base + i];
            }
        }
    });
}

Tensor bce_mean(const Tensor& pred, const Tensor& target, double eps) {
    check_same_shape(pred, target, "bce_mean");
    Tensor p = clamp(pred, eps, 1.0 - eps);
    Tensor one_minus_p = add_scalar(neg(p), 1.0);
    Tensor one_minus_t = add_scalar(neg(target), 1.0);
    Tensor ll = add(mul(target, log_e(p)), mul(one_minus_t, log_e(one_minus_p)));
    return neg(mean(ll));
}

}  // namespace forgeloc
