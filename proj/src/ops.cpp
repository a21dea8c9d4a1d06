#include "rego/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rego/kernels.hpp"

namespace rego::ops {

using autograd::link_node;
using autograd::needs_graph;
using autograd::TensorImpl;

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

// True when b's shape is a strict suffix of a's (leading-dim broadcast).
bool suffix_broadcast(const Tensor& a, const Tensor& b) {
    if (b.rank() >= a.rank()) return false;
    const auto& as = a.shape();
    const auto& bs = b.shape();
    return std::equal(bs.begin(), bs.end(), as.end() - bs.size());
}

std::size_t product(const std::vector<std::size_t>& v, std::size_t from, std::size_t to) {
    std::size_t p = 1;
    for (std::size_t i = from; i < to; ++i) p *= v[i];
    return p;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    std::size_t batch = 1, m = 0, k = 0, n = 0;
    bool broadcast_b = false;
    if (as.size() == 2 && bs.size() == 2) {
        m = as[0]; k = as[1]; n = bs[1];
        if (bs[0] != k)
            throw std::invalid_argument("matmul: inner extents disagree " + shape_str(as) +
                                        " vs " + shape_str(bs));
    } else if (as.size() == 3 && bs.size() == 3) {
        if (as[0] != bs[0] || as[2] != bs[1])
            throw std::invalid_argument("matmul: batch shapes disagree " + shape_str(as) + " vs " +
                                        shape_str(bs));
        batch = as[0]; m = as[1]; k = as[2]; n = bs[2];
    } else if (as.size() == 3 && bs.size() == 2) {
        if (as[2] != bs[0])
            throw std::invalid_argument("matmul: inner extents disagree " + shape_str(as) +
                                        " vs " + shape_str(bs));
        batch = as[0]; m = as[1]; k = as[2]; n = bs[1];
        broadcast_b = true;
    } else {
        throw std::invalid_argument("matmul: unsupported ranks " + shape_str(as) + " vs " +
                                    shape_str(bs));
    }

    std::vector<std::size_t> out_shape =
        (as.size() == 2) ? std::vector<std::size_t>{m, n} : std::vector<std::size_t>{batch, m, n};
    Tensor out(out_shape);
    auto nn = kernels::matmul_nn();
    for (std::size_t g = 0; g < batch; ++g) {
        const double* ap = a.data() + g * m * k;
        const double* bp = b.data() + (broadcast_b ? 0 : g * k * n);
        nn(ap, bp, out.data() + g * m * n, m, k, n);
    }

    if (needs_graph({&a, &b})) {
        TensorImpl* ai = a.impl().get();
        TensorImpl* bi = b.impl().get();
        link_node(out, "matmul", {a, b},
                  [ai, bi, batch, m, k, n, broadcast_b](TensorImpl& o) {
                      auto nt = kernels::matmul_nt();
                      auto tn = kernels::matmul_tn();
                      if (ai->wants_grad()) {
                          ai->ensure_grad();
                          for (std::size_t g = 0; g < batch; ++g)
                              nt(o.grad.data() + g * m * n,
                                 bi->data.data() + (broadcast_b ? 0 : g * k * n),
                                 ai->grad.data() + g * m * k, m, n, k);
                      }
                      if (bi->wants_grad()) {
                          bi->ensure_grad();
                          for (std::size_t g = 0; g < batch; ++g)
                              tn(ai->data.data() + g * m * k, o.grad.data() + g * m * n,
                                 bi->grad.data() + (broadcast_b ? 0 : g * k * n), k, m, n);
                      }
                  });
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (as.size() != 2 || bs.size() != 2 || as[1] != bs[1]) {
        throw std::invalid_argument("matmul_nt: need [m x k] and [n x k], got " + shape_str(as) +
                                    " vs " + shape_str(bs));
    }
    const std::size_t m = as[0], k = as[1], n = bs[0];
    Tensor out({m, n});
    kernels::matmul_nt()(a.data(), b.data(), out.data(), m, k, n);

    if (needs_graph({&a, &b})) {
        TensorImpl* ai = a.impl().get();
        TensorImpl* bi = b.impl().get();
        link_node(out, "matmul_nt", {a, b}, [ai, bi, m, k, n](TensorImpl& o) {
            if (ai->wants_grad()) {
                ai->ensure_grad();
                kernels::matmul_nn()(o.grad.data(), bi->data.data(), ai->grad.data(), m, n, k);
            }
            if (bi->wants_grad()) {
                bi->ensure_grad();
                kernels::matmul_tn()(o.grad.data(), ai->data.data(), bi->grad.data(), n, m, k);
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    const bool bc = suffix_broadcast(a, b);
    if (!bc) check_same_shape(a, b, "add");
    Tensor out(a.shape());
    const std::size_t bn = b.size();
    const std::size_t blocks = a.size() / bn;
    auto k_add = kernels::add();
    for (std::size_t g = 0; g < blocks; ++g)
        k_add(a.data() + g * bn, b.data(), out.data() + g * bn, bn);

    if (needs_graph({&a, &b})) {
        TensorImpl* ai = a.impl().get();
        TensorImpl* bi = b.impl().get();
        link_node(out, "add", {a, b}, [ai, bi, blocks, bn](TensorImpl& o) {
            if (ai->wants_grad()) ai->accumulate_grad(o.grad.data(), o.grad.size());
            if (bi->wants_grad()) {
                bi->ensure_grad();
                auto axpy = kernels::axpy();
                for (std::size_t g = 0; g < blocks; ++g)
                    axpy(1.0, o.grad.data() + g * bn, bi->grad.data(), bn);
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.shape());
    kernels::sub()(a.data(), b.data(), out.data(), out.size());
    if (needs_graph({&a, &b})) {
        TensorImpl* ai = a.impl().get();
        TensorImpl* bi = b.impl().get();
        link_node(out, "sub", {a, b}, [ai, bi](TensorImpl& o) {
            if (ai->wants_grad()) ai->accumulate_grad(o.grad.data(), o.grad.size());
            if (bi->wants_grad()) {
                bi->ensure_grad();
                kernels::axpy()(-1.0, o.grad.data(), bi->grad.data(), o.grad.size());
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.shape());
    kernels::mul()(a.data(), b.data(), out.data(), out.size());
    if (needs_graph({&a, &b})) {
        TensorImpl* ai = a.impl().get();
        TensorImpl* bi = b.impl().get();
        link_node(out, "mul", {a, b}, [ai, bi](TensorImpl& o) {
            auto macc = kernels::mul_acc();
            if (ai->wants_grad()) {
                ai->ensure_grad();
                macc(o.grad.data(), bi->data.data(), ai->grad.data(), o.grad.size());
            }
            if (bi->wants_grad()) {
                bi->ensure_grad();
                macc(o.grad.data(), ai->data.data(), bi->grad.data(), o.grad.size());
            }
        });
    }
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] / b.data()[i];
    if (needs_graph({&a, &b})) {
        TensorImpl* ai = a.impl().get();
        TensorImpl* bi = b.impl().get();
        TensorImpl* oi = out.impl().get();
        link_node(out, "div", {a, b}, [ai, bi, oi](TensorImpl& o) {
            const std::size_t n = o.grad.size();
            if (ai->wants_grad()) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) ai->grad[i] += o.grad[i] / bi->data[i];
            }
            if (bi->wants_grad()) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    bi->grad[i] -= o.grad[i] * oi->data[i] / bi->data[i];
            }
        });
    }
    return out;
}

namespace {

// Shared body of minimum/maximum: `pick_a(a, b)` says whose value flows.
template <typename Pick>
Tensor extremum(const Tensor& a, const Tensor& b, const char* name, Pick pick_a) {
    check_same_shape(a, b, name);
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()[i] = pick_a(a.data()[i], b.data()[i]) ? a.data()[i] : b.data()[i];
    if (needs_graph({&a, &b})) {
        TensorImpl* ai = a.impl().get();
        TensorImpl* bi = b.impl().get();
        link_node(out, name, {a, b}, [ai, bi, pick_a](TensorImpl& o) {
            const std::size_t n = o.grad.size();
            if (ai->wants_grad()) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    if (pick_a(ai->data[i], bi->data[i])) ai->grad[i] += o.grad[i];
            }
            if (bi->wants_grad()) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    if (!pick_a(ai->data[i], bi->data[i])) bi->grad[i] += o.grad[i];
            }
        });
    }
    return out;
}

}  // namespace

Tensor minimum(const Tensor& a, const Tensor& b) {
    return extremum(a, b, "minimum", [](double x, double y) { return x <= y; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    return extremum(a, b, "maximum", [](double x, double y) { return x >= y; });
}

Tensor clamp_min(const Tensor& x, double lo) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::max(x.data()[i], lo);
    if (needs_graph({&x})) {
        TensorImpl* xi = x.impl().get();
        link_node(out, "clamp_min", {x}, [xi, lo](TensorImpl& o) {
            if (!xi->wants_grad()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                if (xi->data[i] > lo) xi->grad[i] += o.grad[i];
        });
    }
    return out;
}

Tensor abs(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::fabs(x.data()[i]);
    if (needs_graph({&x})) {
        TensorImpl* xi = x.impl().get();
        link_node(out, "abs", {x}, [xi](TensorImpl& o) {
            if (!xi->wants_grad()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                const double v = xi->data[i];
                if (v > 0) xi->grad[i] += o.grad[i];
                else if (v < 0) xi->grad[i] -= o.grad[i];
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::max(x.data()[i], 0.0);
    if (needs_graph({&x})) {
        TensorImpl* xi = x.impl().get();
        link_node(out, "relu", {x}, [xi](TensorImpl& o) {
            if (!xi->wants_grad()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                if (xi->data[i] > 0) xi->grad[i] += o.grad[i];
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.data()[i];
        out.data()[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    if (needs_graph({&x})) {
        TensorImpl* xi = x.impl().get();
        TensorImpl* oi = out.impl().get();
        link_node(out, "sigmoid", {x}, [xi, oi](TensorImpl& o) {
            if (!xi->wants_grad()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                const double s = oi->data[i];
                xi->grad[i] += o.grad[i] * s * (1.0 - s);
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, double s) {
    Tensor out(x.shape());
    kernels::scale()(x.data(), s, out.data(), out.size());
    if (needs_graph({&x})) {
        TensorImpl* xi = x.impl().get();
        link_node(out, "scale", {x}, [xi, s](TensorImpl& o) {
            if (!xi->wants_grad()) return;
            xi->ensure_grad();
            kernels::axpy()(s, o.grad.data(), xi->grad.data(), o.grad.size());
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& x, double s) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = x.data()[i] + s;
    if (needs_graph({&x})) {
        TensorImpl* xi = x.impl().get();
        link_node(out, "add_scalar", {x}, [xi](TensorImpl& o) {
            if (xi->wants_grad()) xi->accumulate_grad(o.grad.data(), o.grad.size());
        });
    }
    return out;
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank())
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                    " out of bounds for shape " + shape_str(x.shape()));
    const auto& sh = x.shape();
    const std::size_t outer = product(sh, 0, axis);
    const std::size_t L = sh[axis];
    const std::size_t inner = product(sh, axis + 1, sh.size());

    Tensor out(x.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * L * inner + in;
            double mx = x.data()[base];
            for (std::size_t l = 1; l < L; ++l)
                mx = std::max(mx, x.data()[base + l * inner]);
            double denom = 0.0;
            for (std::size_t l = 0; l < L; ++l) {
                const double e = std::exp(x.data()[base + l * inner] - mx);
                out.data()[base + l * inner] = e;
                denom += e;
            }
            for (std::size_t l = 0; l < L; ++l) out.data()[base + l * inner] /= denom;
        }
    }

    if (needs_graph({&x})) {
        TensorImpl* xi = x.impl().get();
        TensorImpl* oi = out.impl().get();
        link_node(out, "softmax", {x}, [xi, oi, outer, L, inner](TensorImpl& o) {
            if (!xi->wants_grad()) return;
            xi->ensure_grad();
            for (std::size_t ou = 0; ou < outer; ++ou) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = ou * L * inner + in;
                    double dot = 0.0;
                    for (std::size_t l = 0; l < L; ++l) {
                        const std::size_t idx = base + l * inner;
                        dot += o.grad[idx] * oi->data[idx];
                    }
                    for (std::size_t l = 0; l < L; ++l) {
                        const std::size_t idx = base + l * inner;
                        xi->grad[idx] += oi->data[idx] * (o.grad[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() < 1) throw std::invalid_argument("layer_norm: rank-0 input");
    const std::size_t D = x.shape().back();
    if (gain.shape() != std::vector<std::size_t>{D} || bias.shape() != std::vector<std::size_t>{D}) {
        throw std::invalid_argument("layer_norm: gain/bias must be [" + std::to_string(D) +
                                    "], got " + shape_str(gain.shape()) + " and " +
                                    shape_str(bias.shape()));
    }
    const std::size_t rows = x.size() / D;
    Tensor out(x.shape());
    std::vector<double> inv_sigma(rows), xhat(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * D;
        double mu = 0.0;
        for (std::size_t j = 0; j < D; ++j) mu += xr[j];
        mu /= double(D);
        double var = 0.0;
        for (std::size_t j = 0; j < D; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= double(D);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[r] = is;
        double* orow = out.data() + r * D;
        for (std::size_t j = 0; j < D; ++j) {
            const double h = (xr[j] - mu) * is;
            xhat[r * D + j] = h;
            orow[j] = h * gain.data()[j] + bias.data()[j];
        }
    }

    if (needs_graph({&x, &gain, &bias})) {
        TensorImpl* xi = x.impl().get();
        TensorImpl* gi = gain.impl().get();
        TensorImpl* bi = bias.impl().get();
        link_node(out, "layer_norm", {x, gain, bias},
                  [xi, gi, bi, rows, D, inv_sigma = std::move(inv_sigma),
                   xhat = std::move(xhat)](TensorImpl& o) {
                      if (gi->wants_grad()) {
                          gi->ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < D; ++j)
                                  gi->grad[j] += o.grad[r * D + j] * xhat[r * D + j];
                      }
                      if (bi->wants_grad()) {
                          bi->ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < D; ++j) bi->grad[j] += o.grad[r * D + j];
                      }
                      if (xi->wants_grad()) {
                          xi->ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r) {
                              double mw = 0.0, mwx = 0.0;
                              for (std::size_t j = 0; j < D; ++j) {
                                  const double w = o.grad[r * D + j] * gi->data[j];
                                  mw += w;
                                  mwx += w * xhat[r * D + j];
                              }
                              mw /= double(D);
                              mwx /= double(D);
                              for (std::size_t j = 0; j < D; ++j) {
                                  const double w = o.grad[r * D + j] * gi->data[j];
                                  xi->grad[r * D + j] +=
                                      inv_sigma[r] * (w - mw - xhat[r * D + j] * mwx);
                              }
                          }
                      }
                  });
    }
    return out;
}

namespace {

// Gathers padded kh x kw patches into a [C*kh*kw x OH*OW] matrix.
void im2col(const double* x, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t OH, std::size_t OW,
            double* cols) {
    const std::size_t L = OH * OW;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                double* row = cols + ((c * kh + ki) * kw + kj) * L;
                for (std::size_t oy = 0; oy < OH; ++oy) {
                    const long iy = long(oy * stride + ki) - long(pad);
                    for (std::size_t ox = 0; ox < OW; ++ox) {
                        const long ix = long(ox * stride + kj) - long(pad);
                        row[oy * OW + ox] =
                            (iy >= 0 && iy < long(H) && ix >= 0 && ix < long(W))
                                ? x[(c * H + std::size_t(iy)) * W + std::size_t(ix)]
                                : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_acc(const double* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
                std::size_t kw, std::size_t stride, std::size_t pad, std::size_t OH,
                std::size_t OW, double* dx) {
    const std::size_t L = OH * OW;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                const double* row = cols + ((c * kh + ki) * kw + kj) * L;
                for (std::size_t oy = 0; oy < OH; ++oy) {
                    const long iy = long(oy * stride + ki) - long(pad);
                    if (iy < 0 || iy >= long(H)) continue;
                    for (std::size_t ox = 0; ox < OW; ++ox) {
                        const long ix = long(ox * stride + kj) - long(pad);
                        if (ix < 0 || ix >= long(W)) continue;
                        dx[(c * H + std::size_t(iy)) * W + std::size_t(ix)] += row[oy * OW + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
    const auto& xs = x.shape();
    const auto& ks = kernel.shape();
    if (xs.size() != 4 || ks.size() != 4)
        throw std::invalid_argument("conv2d: need x [B,C,H,W] and kernel [OC,C,kh,kw], got " +
                                    shape_str(xs) + " and " + shape_str(ks));
    if (xs[1] != ks[1])
        throw std::invalid_argument("conv2d: channel mismatch " + shape_str(xs) + " vs " +
                                    shape_str(ks));
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const std::size_t OC = ks[0], kh = ks[2], kw = ks[3];
    if (kh > H + 2 * padding || kw > W + 2 * padding)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    const std::size_t OH = (H + 2 * padding - kh) / stride + 1;
    const std::size_t OW = (W + 2 * padding - kw) / stride + 1;
    const bool has_bias = bias.defined();
    if (has_bias && bias.shape() != std::vector<std::size_t>{OC})
        throw std::invalid_argument("conv2d: bias must be [" + std::to_string(OC) + "]");

    const std::size_t R = C * kh * kw;
    const std::size_t L = OH * OW;
    Tensor out({B, OC, OH, OW});
    std::vector<double> cols(R * L);
    auto nn = kernels::matmul_nn();
    for (std::size_t b = 0; b < B; ++b) {
        im2col(x.data() + b * C * H * W, C, H, W, kh, kw, stride, padding, OH, OW, cols.data());
        double* ob = out.data() + b * OC * L;
        nn(kernel.data(), cols.data(), ob, OC, R, L);
        if (has_bias) {
            for (std::size_t oc = 0; oc < OC; ++oc)
                for (std::size_t l = 0; l < L; ++l) ob[oc * L + l] += bias.data()[oc];
        }
    }

    std::vector<Tensor> inputs = {x, kernel};
    if (has_bias) inputs.push_back(bias);
    if (needs_graph({&x, &kernel, &bias})) {
        TensorImpl* xi = x.impl().get();
        TensorImpl* ki = kernel.impl().get();
        TensorImpl* bi = has_bias ? bias.impl().get() : nullptr;
        link_node(out, "conv2d", std::move(inputs),
                  [xi, ki, bi, B, C, H, W, OC, kh, kw, stride, padding, OH, OW](TensorImpl& o) {
                      const std::size_t R = C * kh * kw;
                      const std::size_t L = OH * OW;
                      std::vector<double> cols(R * L), dcols(R * L);
                      auto nt = kernels::matmul_nt();
                      auto tn = kernels::matmul_tn();
                      for (std::size_t b = 0; b < B; ++b) {
                          const double* dy = o.grad.data() + b * OC * L;
                          if (ki->wants_grad() || xi->wants_grad()) {
                              im2col(xi->data.data() + b * C * H * W, C, H, W, kh, kw, stride,
                                     padding, OH, OW, cols.data());
                          }
                          if (ki->wants_grad()) {
                              ki->ensure_grad();
                              nt(dy, cols.data(), ki->grad.data(), OC, L, R);
                          }
                          if (xi->wants_grad()) {
                              xi->ensure_grad();
                              std::fill(dcols.begin(), dcols.end(), 0.0);
                              tn(ki->data.data(), dy, dcols.data(), R, OC, L);
                              col2im_acc(dcols.data(), C, H, W, kh, kw, stride, padding, OH, OW,
                                         xi->grad.data() + b * C * H * W);
                          }
                          if (bi && bi->wants_grad()) {
                              bi->ensure_grad();
                              for (std::size_t oc = 0; oc < OC; ++oc) {
                                  double s = 0.0;
                                  for (std::size_t l = 0; l < L; ++l) s += dy[oc * L + l];
                                  bi->grad[oc] += s;
                              }
                          }
                      }
                  });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no parts");
    const auto& s0 = parts[0].shape();
    if (axis >= s0.size())
        throw std::invalid_argument("concat: axis " + std::to_string(axis) +
                                    " out of bounds for shape " + shape_str(s0));
    std::size_t axis_total = 0;
    for (const Tensor& p : parts) {
        const auto& sp = p.shape();
        if (sp.size() != s0.size())
            throw std::invalid_argument("concat: rank mismatch " + shape_str(s0) + " vs " +
                                        shape_str(sp));
        for (std::size_t d = 0; d < s0.size(); ++d) {
            if (d != axis && sp[d] != s0[d])
                throw std::invalid_argument("concat: off-axis extent mismatch " + shape_str(s0) +
                                            " vs " + shape_str(sp));
        }
        axis_total += sp[axis];
    }
    std::vector<std::size_t> out_shape = s0;
    out_shape[axis] = axis_total;
    Tensor out(out_shape);

    const std::size_t outer = product(s0, 0, axis);
    const std::size_t inner = product(s0, axis + 1, s0.size());
    const std::size_t out_stride = axis_total * inner;
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t block = p.shape()[axis] * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy(p.data() + o * block, p.data() + (o + 1) * block,
                      out.data() + o * out_stride + offset);
        }
        offset += block;
    }

    bool graph = false;
    for (const Tensor& p : parts)
        if (p.impl()->wants_grad()) graph = true;
    if (graph && autograd::grad_enabled()) {
        std::vector<TensorImpl*> impls;
        std::vector<std::size_t> blocks;
        for (const Tensor& p : parts) {
            impls.push_back(p.impl().get());
            blocks.push_back(p.shape()[axis] * inner);
        }
        link_node(out, "concat", parts,
                  [impls, blocks, outer, out_stride](TensorImpl& o) {
                      std::size_t offset = 0;
                      for (std::size_t pi = 0; pi < impls.size(); ++pi) {
                          TensorImpl* in = impls[pi];
                          if (in->wants_grad()) {
                              in->ensure_grad();
                              for (std::size_t ou = 0; ou < outer; ++ou) {
                                  const double* src = o.grad.data() + ou * out_stride + offset;
                                  kernels::axpy()(1.0, src, in->grad.data() + ou * blocks[pi],
                                                  blocks[pi]);
                              }
                          }
                          offset += blocks[pi];
                      }
                  });
    }
    return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
    const auto& sh = x.shape();
    if (axis >= sh.size() || start + len > sh[axis] || len == 0)
        throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + len) + ") on axis " +
                                    std::to_string(axis) + " of shape " + shape_str(sh));
    std::vector<std::size_t> out_shape = sh;
    out_shape[axis] = len;
    Tensor out(out_shape);
    const std::size_t outer = product(sh, 0, axis);
    const std::size_t inner = product(sh, axis + 1, sh.size());
    const std::size_t in_stride = sh[axis] * inner;
    const std::size_t block = len * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy(x.data() + o * in_stride + start * inner,
                  x.data() + o * in_stride + start * inner + block, out.data() + o * block);
    }
    if (needs_graph({&x})) {
        TensorImpl* xi = x.impl().get();
        link_node(out, "slice", {x}, [xi, outer, inner, in_stride, start, block](TensorImpl& o) {
            if (!xi->wants_grad()) return;
            xi->ensure_grad();
            for (std::size_t ou = 0; ou < outer; ++ou) {
                kernels::axpy()(1.0, o.grad.data() + ou * block,
                                xi->grad.data() + ou * in_stride + start * inner, block);
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    if (n != x.size())
        throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " to " +
                                    shape_str(shape) + " changes element count");
    Tensor out(std::move(shape), x.values());
    if (needs_graph({&x})) {
        TensorImpl* xi = x.impl().get();
        link_node(out, "reshape", {x}, [xi](TensorImpl& o) {
            if (xi->wants_grad()) xi->accumulate_grad(o.grad.data(), o.grad.size());
        });
    }
    return out;
}

Tensor transpose(const Tensor& x) {
    if (x.rank() != 2)
        throw std::invalid_argument("transpose: need rank-2, got " + shape_str(x.shape()));
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = x.data()[i * n + j];
    if (needs_graph({&x})) {
        TensorImpl* xi = x.impl().get();
        link_node(out, "transpose", {x}, [xi, m, n](TensorImpl& o) {
            if (!xi->wants_grad()) return;
            xi->ensure_grad();
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t i = 0; i < m; ++i) xi->grad[i * n + j] += o.grad[j * m + i];
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out = Tensor::scalar(kernels::sum()(x.data(), x.size()));
    if (needs_graph({&x})) {
        TensorImpl* xi = x.impl().get();
        link_node(out, "sum", {x}, [xi](TensorImpl& o) {
            if (!xi->wants_grad()) return;
            xi->ensure_grad();
            const double g = o.grad[0];
            for (double& v : xi->grad) v += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& x) {
    const double inv = 1.0 / double(x.size());
    Tensor out = Tensor::scalar(kernels::sum()(x.data(), x.size()) * inv);
    if (needs_graph({&x})) {
        TensorImpl* xi = x.impl().get();
        link_node(out, "mean", {x}, [xi, inv](TensorImpl& o) {
            if (!xi->wants_grad()) return;
            xi->ensure_grad();
            const double g = o.grad[0] * inv;
            for (double& v : xi->grad) v += g;
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    if (x.rank() != 2) throw std::invalid_argument("gather_rows: need rank-2, got " + shape_str(x.shape()));
    const std::size_t N = x.shape()[0], D = x.shape()[1];
    for (std::size_t r : rows)
        if (r >= N) throw std::invalid_argument("gather_rows: row " + std::to_string(r) + " out of " + std::to_string(N));
    Tensor out({rows.size(), D});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(x.data() + rows[i] * D, x.data() + (rows[i] + 1) * D, out.data() + i * D);
    if (needs_graph({&x})) {
        TensorImpl* xi = x.impl().get();
        link_node(out, "gather_rows", {x}, [xi, rows, D](TensorImpl& o) {
            if (!xi->wants_grad()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < rows.size(); ++i)
                kernels::axpy()(1.0, o.grad.data() + i * D, xi->grad.data() + rows[i] * D, D);
        });
    }
    return out;
}

namespace {

// Row-wise softmax probabilities with the stable log-sum-exp, shared by the
// classification losses.
void row_softmax(const double* z, std::size_t K, double* p, double* lse) {
    double mx = z[0];
    for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, z[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
        p[j] = std::exp(z[j] - mx);
        denom += p[j];
    }
    for (std::size_t j = 0; j < K; ++j) p[j] /= denom;
    *lse = mx + std::log(denom);
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets,
                     const std::vector<double>& class_weights) {
    if (logits.rank() != 2)
        throw std::invalid_argument("cross_entropy: need rank-2 logits, got " +
                                    shape_str(logits.shape()));
    const std::size_t N = logits.shape()[0], K = logits.shape()[1];
    if (targets.size() != N)
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                    " targets for " + std::to_string(N) + " rows");
    if (class_weights.size() != K)
        throw std::invalid_argument("cross_entropy: class_weights size mismatch");
    for (std::size_t t : targets)
        if (t >= K) throw std::invalid_argument("cross_entropy: target class out of range");

    std::vector<double> probs(N * K);
    double total = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        double lse;
        row_softmax(logits.data() + i * K, K, probs.data() + i * K, &lse);
        const double w = class_weights[targets[i]];
        total += w * (lse - logits.data()[i * K + targets[i]]);
        wsum += w;
    }
    Tensor out = Tensor::scalar(total / wsum);

    if (needs_graph({&logits})) {
        TensorImpl* li = logits.impl().get();
        link_node(out, "cross_entropy", {logits},
                  [li, targets, class_weights, probs = std::move(probs), N, K,
                   wsum](TensorImpl& o) {
                      if (!li->wants_grad()) return;
                      li->ensure_grad();
                      const double g = o.grad[0] / wsum;
                      for (std::size_t i = 0; i < N; ++i) {
                          const double w = class_weights[targets[i]];
                          for (std::size_t j = 0; j < K; ++j) {
                              const double y = (j == targets[i]) ? 1.0 : 0.0;
                              li->grad[i * K + j] += g * w * (probs[i * K + j] - y);
                          }
                      }
                  });
    }
    return out;
}

Tensor focal_loss(const Tensor& logits, const std::vector<std::size_t>& targets, double gamma,
                  double alpha, std::size_t background_class) {
    if (logits.rank() != 2)
        throw std::invalid_argument("focal_loss: need rank-2 logits, got " +
                                    shape_str(logits.shape()));
    const std::size_t N = logits.shape()[0], K = logits.shape()[1];
    if (targets.size() != N) throw std::invalid_argument("focal_loss: targets size mismatch");
    for (std::size_t t : targets)
        if (t >= K) throw std::invalid_argument("focal_loss: target class out of range");

    std::vector<double> probs(N * K);
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        double lse;
        row_softmax(logits.data() + i * K, K, probs.data() + i * K, &lse);
        const double pt = probs[i * K + targets[i]];
        const double at = (targets[i] == background_class) ? (1.0 - alpha) : alpha;
        const double logpt = logits.data()[i * K + targets[i]] - lse;
        total += -at * std::pow(1.0 - pt, gamma) * logpt;
    }
    Tensor out = Tensor::scalar(total / double(N));

    if (needs_graph({&logits})) {
        TensorImpl* li = logits.impl().get();
        link_node(out, "focal_loss", {logits},
                  [li, targets, gamma, alpha, background_class, probs = std::move(probs), N,
                   K](TensorImpl& o) {
                      if (!li->wants_grad()) return;
                      li->ensure_grad();
                      const double g = o.grad[0] / double(N);
                      for (std::size_t i = 0; i < N; ++i) {
                          const std::size_t t = targets[i];
                          const double pt = probs[i * K + t];
                          const double at = (t == background_class) ? (1.0 - alpha) : alpha;
                          const double u = 1.0 - pt;
                          const double logpt = std::log(std::max(pt, 1e-300));
                          // d(term)/d(pt) of -at * u^gamma * log(pt)
                          const double dpt =
                              at * (gamma * std::pow(u, gamma - 1.0) * logpt -
                                    std::pow(u, gamma) / pt);
                          for (std::size_t j = 0; j < K; ++j) {
                              const double ind = (j == t) ? 1.0 : 0.0;
                              li->grad[i * K + j] +=
                                  g * dpt * pt * (ind - probs[i * K + j]);
                          }
                      }
                  });
    }
    return out;
}

}  // namespace rego::ops
