#include "rego/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

#include "rego/kernels.hpp"

namespace rego {

namespace autograd {

void TensorImpl::accumulate_grad(const double* g, std::size_t n) {
    if (n != data.size()) throw std::logic_error("gradient size mismatch");
    ensure_grad();
    kernels::axpy()(1.0, g, grad.data(), n);
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool needs_graph(std::initializer_list<const Tensor*> inputs) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : inputs) {
        if (t->impl()->wants_grad()) return true;
    }
    return false;
}

void link_node(Tensor& out, std::string op, std::vector<Tensor> inputs,
               std::function<void(TensorImpl&)> backward) {
    auto node = std::make_shared<Node>();
    node->op = std::move(op);
    node->inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) node->inputs.push_back(t.impl());
    node->output = out.impl();
    node->backward = std::move(backward);
    out.impl()->node = std::move(node);
}

BackwardStats backward(const Tensor& loss) {
    auto& impl = *loss.impl();
    if (impl.size() != 1) {
        throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                    shape_str(impl.shape));
    }
    if (!impl.node) throw std::invalid_argument("backward requires a graph-linked loss");
    if (impl.node->done) {
        throw std::logic_error("repeated backward over the same graph; rebuild the forward pass");
    }

    // Iterative post-order DFS over nodes.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* node;
        std::size_t next_input;
    };
    std::vector<Frame> stack;
    stack.push_back({impl.node.get(), 0});
    seen.insert(impl.node.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_input < f.node->inputs.size()) {
            Node* child = f.node->inputs[f.next_input++]->node.get();
            if (child && !seen.count(child)) {
                seen.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    impl.ensure_grad();
    impl.grad[0] = 1.0;

    BackwardStats stats;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        auto out = node->output.lock();
        if (!out) throw std::logic_error("graph output expired during backward");
        out->ensure_grad();
        node->backward(*out);
        node->done = true;
        ++stats.nodes_visited;
    }
    return stats;
}

}  // namespace autograd

Tensor::Tensor(std::vector<std::size_t> shape) : impl_(std::make_shared<autograd::TensorImpl>()) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0) throw std::invalid_argument("zero extent in shape " + shape_str(shape));
        n *= e;
    }
    impl_->shape = std::move(shape);
    impl_->data.assign(n, 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : impl_(std::make_shared<autograd::TensorImpl>()) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    if (n != data.size() || shape.empty()) {
        throw std::invalid_argument("shape " + shape_str(shape) + " does not cover " +
                                    std::to_string(data.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.impl_->data) x = v;
    return t;
}

double Tensor::item() const {
    if (size() != 1) {
        throw std::invalid_argument("item() on non-scalar tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
}

std::vector<double> Tensor::grad_values() const {
    if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::detach() const {
    Tensor t;
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("truncated tensor file");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("truncated tensor file");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= std::uint64_t(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
    for (double v : t.values()) put_f64(os, v);
    if (!os) throw std::runtime_error("write failed for " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::uint32_t rank = get_u32(is);
    if (rank == 0 || rank > 8) throw std::runtime_error("bad tensor rank in " + path);
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& e : shape) {
        e = get_u32(is);
        n *= e;
    }
    std::vector<double> data(n);
    for (double& v : data) v = get_f64(is);
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace rego
