#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace rego {

class Tensor;

namespace autograd {

struct Node;

struct TensorImpl {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;       // empty until a gradient is accumulated
    std::shared_ptr<Node> node;     // producing op; absent for leaves and detached tensors

    std::size_t size() const { return data.size(); }
    bool wants_grad() const { return requires_grad || node != nullptr; }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
    void accumulate_grad(const double* g, std::size_t n);
};

// One recorded operation. `backward` reads the output's grad buffer and
// accumulates into the inputs' grad buffers; input lifetime is pinned by
// the shared_ptrs held here.
struct Node {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::weak_ptr<TensorImpl> output;
    std::function<void(TensorImpl& out)> backward;
    bool done = false;
};

struct BackwardStats {
    std::size_t nodes_visited = 0;
};

// Reverse-mode sweep from a scalar, graph-linked loss. Each reachable node
// runs exactly once, in reverse topological order. A second sweep over the
// same graph throws; gradients are zeroed explicitly between steps.
BackwardStats backward(const Tensor& loss);

bool grad_enabled();

// Disables graph construction while alive (evaluation paths).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Returns true if any input participates in a graph and grads are enabled.
bool needs_graph(std::initializer_list<const Tensor*> inputs);

// Attaches a node to `out`. Call only when needs_graph was true.
void link_node(Tensor& out, std::string op, std::vector<Tensor> inputs,
               std::function<void(TensorImpl& out)> backward);

}  // namespace autograd

// Dense row-major f64 tensor. Values are immutable once an op has produced
// them; mutation is only meaningful on freshly constructed tensors
// (parameter init, data loading).
class Tensor {
public:
    Tensor() : impl_(std::make_shared<autograd::TensorImpl>()) {}

    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor full(std::vector<std::size_t> shape, double v);

    const std::vector<std::size_t>& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->data.size(); }
    std::size_t extent(std::size_t axis) const { return impl_->shape.at(axis); }

    double* data() { return impl_->data.data(); }
    const double* data() const { return impl_->data.data(); }
    std::vector<double>& values() { return impl_->data; }
    const std::vector<double>& values() const { return impl_->data; }

    // Scalar payload of a one-element tensor.
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        impl_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    const std::vector<double>& grad_buffer() const { return impl_->grad; }
    std::vector<double>& grad_buffer() { return impl_->grad; }
    // Gradient values, zeros when no gradient ever reached this tensor.
    std::vector<double> grad_values() const;
    void zero_grad();

    bool has_node() const { return impl_->node != nullptr; }
    Tensor detach() const;

    bool defined() const { return !impl_->shape.empty() || !impl_->data.empty(); }

    const std::shared_ptr<autograd::TensorImpl>& impl() const { return impl_; }

private:
    std::shared_ptr<autograd::TensorImpl> impl_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

// Flat binary tensor file: little-endian u32 rank, u32 extents, f64 payload.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace rego
