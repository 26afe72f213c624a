#pragma once

// Differentiable operations on Tensor. Shape algebra per op:
//
//   add/sub/mul(a, b)        a.shape == b.shape            -> a.shape
//   scale(a, s), add_scalar  any                            -> a.shape
//   add_bias(x, b)           x (N, C, ...), b (C)           -> x.shape
//   matmul(a, b)             a (M, K), b (K, P)             -> (M, P)
//   conv2d(x, w, b)          x (N, C, H, W), w (O, C, KH, KW), b (O) or undefined
//                                                           -> (N, O, OH, OW),
//                            OH = (H + 2 pad - KH) / stride + 1
//   max_pool2d/avg_pool2d    x (N, C, H, W), window k, stride k -> (N, C, H/k, W/k)
//   relu, tanh               any                            -> same
//   reshape/flatten          flatten: (N, ...) -> (N, prod(...))
//   softmax/log_softmax      (N, C), along C                -> (N, C)
//   sum, mean                any                            -> scalar ()
//   row_sum, row_norm        (N, D)                         -> (N)
//   pick(x, idx)             (N, C), idx[N] < C             -> (N), x[i, idx[i]]
//   class_margin(z, idx)     (N, C), C >= 2                 -> (N), z_y - max_{j != y} z_j

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vfd/tensor.hpp"

namespace vfd {

namespace detail {

inline void require(bool ok, const std::string& what)
{
    if (!ok)
        throw ContractViolation(what);
}

template <class T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b)
{
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                                        " vs " + to_string(b.shape()));
}

template <class T>
void require_rank(const char* op, const Tensor<T>& a, std::size_t rank)
{
    require(a.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                  ", got shape " + to_string(a.shape()));
}

template <class T>
bool wants_grad(const TensorNode<T>& n)
{
    return n.requires_grad;
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    detail::require_same_shape("add", a, b);
    std::vector<T> out(a.numel());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x[i] + y[i];
    return detail::record<T>(a.shape(), std::move(out), {a, b}, [](TensorNode<T>& n) {
        for (auto& in : n.inputs) {
            if (!detail::wants_grad(*in))
                continue;
            auto& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += n.grad[i];
        }
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b)
{
    detail::require_same_shape("sub", a, b);
    std::vector<T> out(a.numel());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x[i] - y[i];
    return detail::record<T>(a.shape(), std::move(out), {a, b}, [](TensorNode<T>& n) {
        if (detail::wants_grad(*n.inputs[0])) {
            auto& g = n.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += n.grad[i];
        }
        if (detail::wants_grad(*n.inputs[1])) {
            auto& g = n.inputs[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] -= n.grad[i];
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    detail::require_same_shape("mul", a, b);
    std::vector<T> out(a.numel());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x[i] * y[i];
    return detail::record<T>(a.shape(), std::move(out), {a, b}, [](TensorNode<T>& n) {
        auto& A = *n.inputs[0];
        auto& B = *n.inputs[1];
        // Read both values before writing: A and B may be the same node.
        if (detail::wants_grad(A)) {
            auto& g = A.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += n.grad[i] * B.value[i];
        }
        if (detail::wants_grad(B)) {
            auto& g = B.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += n.grad[i] * A.value[i];
        }
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s)
{
    std::vector<T> out(a.numel());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x[i] * s;
    return detail::record<T>(a.shape(), std::move(out), {a}, [s](TensorNode<T>& n) {
        auto& g = n.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[i] * s;
    });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s)
{
    std::vector<T> out(a.numel());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x[i] + s;
    return detail::record<T>(a.shape(), std::move(out), {a}, [](TensorNode<T>& n) {
        auto& g = n.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[i];
    });
}

template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b)
{
    detail::require(x.rank() >= 2 && b.rank() == 1 && b.dim(0) == x.dim(1),
                    "add_bias: bias " + to_string(b.shape()) + " does not match dim 1 of " +
                        to_string(x.shape()));
    const std::size_t batch = x.dim(0), channels = x.dim(1);
    const std::size_t inner = x.numel() / (batch * channels);
    std::vector<T> out(x.data().begin(), x.data().end());
    auto bias = b.data();
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < channels; ++c) {
            T* row = out.data() + (n * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i)
                row[i] += bias[c];
        }
    return detail::record<T>(x.shape(), std::move(out), {x, b},
                             [batch, channels, inner](TensorNode<T>& n) {
                                 if (detail::wants_grad(*n.inputs[0])) {
                                     auto& g = n.inputs[0]->grad_buffer();
                                     for (std::size_t i = 0; i < g.size(); ++i)
                                         g[i] += n.grad[i];
                                 }
                                 if (detail::wants_grad(*n.inputs[1])) {
                                     auto& g = n.inputs[1]->grad_buffer();
                                     for (std::size_t s = 0; s < batch; ++s)
                                         for (std::size_t c = 0; c < channels; ++c) {
                                             const T* row = n.grad.data() + (s * channels + c) * inner;
                                             T acc{0};
                                             for (std::size_t i = 0; i < inner; ++i)
                                                 acc += row[i];
                                             g[c] += acc;
                                         }
                                 }
                             });
}

namespace detail {

// c (m, p) += a (m, k) * b (k, p)
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t p)
{
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * p;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T aik = a[i * k + kk];
            if (aik == T{0})
                continue;
            const T* brow = b + kk * p;
            for (std::size_t j = 0; j < p; ++j)
                crow[j] += aik * brow[j];
        }
    }
}

// c (m, k) += a (m, p) * b(k, p)^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t p, std::size_t k)
{
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * p;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T* brow = b + kk * p;
            T acc{0};
            for (std::size_t j = 0; j < p; ++j)
                acc += arow[j] * brow[j];
            c[i * k + kk] += acc;
        }
    }
}

// c (k, p) += a(m, k)^T * b (m, p)
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t p)
{
    for (std::size_t i = 0; i < m; ++i) {
        const T* brow = b + i * p;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T aik = a[i * k + kk];
            if (aik == T{0})
                continue;
            T* crow = c + kk * p;
            for (std::size_t j = 0; j < p; ++j)
                crow[j] += aik * brow[j];
        }
    }
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b)
{
    detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                    "matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
    std::vector<T> out(m * p, T{0});
    detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, p);
    return detail::record<T>({m, p}, std::move(out), {a, b}, [m, k, p](TensorNode<T>& n) {
        auto& A = *n.inputs[0];
        auto& B = *n.inputs[1];
        if (detail::wants_grad(A))
            detail::gemm_nt(n.grad.data(), B.value.data(), A.grad_buffer().data(), m, p, k);
        if (detail::wants_grad(B))
            detail::gemm_tn(A.value.data(), n.grad.data(), B.grad_buffer().data(), m, k, p);
    });
}

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

namespace detail {

struct ConvGeometry {
    std::size_t batch, in_c, in_h, in_w, out_c, kh, kw, out_h, out_w, stride, pad;
    std::size_t patch() const { return in_c * kh * kw; }
    std::size_t positions() const { return out_h * out_w; }
};

// cols (C*KH*KW, OH*OW) for one image.
template <class T>
void im2col(const T* img, const ConvGeometry& g, T* cols)
{
    const std::size_t npos = g.positions();
    for (std::size_t c = 0; c < g.in_c; ++c)
        for (std::size_t ki = 0; ki < g.kh; ++ki)
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                T* row = cols + ((c * g.kh + ki) * g.kw + kj) * npos;
                for (std::size_t oi = 0; oi < g.out_h; ++oi) {
                    const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
                    for (std::size_t oj = 0; oj < g.out_w; ++oj) {
                        const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
                        const bool inside = ii >= 0 && jj >= 0 && ii < static_cast<long>(g.in_h) &&
                                            jj < static_cast<long>(g.in_w);
                        row[oi * g.out_w + oj] =
                            inside ? img[(c * g.in_h + static_cast<std::size_t>(ii)) * g.in_w +
                                         static_cast<std::size_t>(jj)]
                                   : T{0};
                    }
                }
            }
}

template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* img)
{
    const std::size_t npos = g.positions();
    for (std::size_t c = 0; c < g.in_c; ++c)
        for (std::size_t ki = 0; ki < g.kh; ++ki)
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * npos;
                for (std::size_t oi = 0; oi < g.out_h; ++oi) {
                    const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
                    if (ii < 0 || ii >= static_cast<long>(g.in_h))
                        continue;
                    for (std::size_t oj = 0; oj < g.out_w; ++oj) {
                        const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
                        if (jj < 0 || jj >= static_cast<long>(g.in_w))
                            continue;
                        img[(c * g.in_h + static_cast<std::size_t>(ii)) * g.in_w +
                            static_cast<std::size_t>(jj)] += row[oi * g.out_w + oj];
                    }
                }
            }
}

}  // namespace detail

/// 2-D cross-correlation. `bias` may be a default-constructed (undefined) tensor.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions opt = {})
{
    detail::require_rank("conv2d input", x, 4);
    detail::require_rank("conv2d weight", weight, 4);
    detail::require(weight.dim(1) == x.dim(1), "conv2d: weight " + to_string(weight.shape()) +
                                                   " expects " + std::to_string(weight.dim(1)) +
                                                   " input channels, input is " + to_string(x.shape()));
    detail::require(opt.stride >= 1, "conv2d: stride must be >= 1");
    detail::ConvGeometry g{};
    g.batch = x.dim(0);
    g.in_c = x.dim(1);
    g.in_h = x.dim(2);
    g.in_w = x.dim(3);
    g.out_c = weight.dim(0);
    g.kh = weight.dim(2);
    g.kw = weight.dim(3);
    g.stride = opt.stride;
    g.pad = opt.padding;
    detail::require(g.in_h + 2 * g.pad >= g.kh && g.in_w + 2 * g.pad >= g.kw,
                    "conv2d: kernel " + to_string(weight.shape()) + " larger than padded input " +
                        to_string(x.shape()));
    g.out_h = (g.in_h + 2 * g.pad - g.kh) / g.stride + 1;
    g.out_w = (g.in_w + 2 * g.pad - g.kw) / g.stride + 1;
    const bool has_bias = bias.defined();
    if (has_bias)
        detail::require(bias.rank() == 1 && bias.dim(0) == g.out_c,
                        "conv2d: bias " + to_string(bias.shape()) + " vs " + std::to_string(g.out_c) +
                            " output channels");

    const std::size_t patch = g.patch(), npos = g.positions();
    const std::size_t in_img = g.in_c * g.in_h * g.in_w, out_img = g.out_c * npos;
    const bool keep_cols = weight.requires_grad();
    std::vector<T> cols(keep_cols ? g.batch * patch * npos : patch * npos);
    std::vector<T> out(g.batch * out_img, T{0});
    const T* w = weight.data().data();
    for (std::size_t s = 0; s < g.batch; ++s) {
        T* c = cols.data() + (keep_cols ? s * patch * npos : 0);
        detail::im2col(x.data().data() + s * in_img, g, c);
        T* o = out.data() + s * out_img;
        if (has_bias)
            for (std::size_t oc = 0; oc < g.out_c; ++oc)
                std::fill(o + oc * npos, o + (oc + 1) * npos, bias.data()[oc]);
        detail::gemm_nn(w, c, o, g.out_c, patch, npos);
    }
    if (!keep_cols)
        cols.clear();

    Shape shape{g.batch, g.out_c, g.out_h, g.out_w};
    auto backward_fn = [g, has_bias, cols = std::move(cols)](TensorNode<T>& n) {
        const std::size_t patch = g.patch(), npos = g.positions();
        const std::size_t in_img = g.in_c * g.in_h * g.in_w, out_img = g.out_c * npos;
        auto& X = *n.inputs[0];
        auto& W = *n.inputs[1];
        if (detail::wants_grad(W)) {
            auto& gw = W.grad_buffer();
            for (std::size_t s = 0; s < g.batch; ++s)
                detail::gemm_nt(n.grad.data() + s * out_img, cols.data() + s * patch * npos, gw.data(),
                                g.out_c, npos, patch);
        }
        if (has_bias && detail::wants_grad(*n.inputs[2])) {
            auto& gb = n.inputs[2]->grad_buffer();
            for (std::size_t s = 0; s < g.batch; ++s)
                for (std::size_t oc = 0; oc < g.out_c; ++oc) {
                    const T* row = n.grad.data() + s * out_img + oc * npos;
                    T acc{0};
                    for (std::size_t i = 0; i < npos; ++i)
                        acc += row[i];
                    gb[oc] += acc;
                }
        }
        if (detail::wants_grad(X)) {
            auto& gx = X.grad_buffer();
            std::vector<T> dcols(patch * npos);
            for (std::size_t s = 0; s < g.batch; ++s) {
                std::fill(dcols.begin(), dcols.end(), T{0});
                detail::gemm_tn(W.value.data(), n.grad.data() + s * out_img, dcols.data(), g.out_c, patch,
                                npos);
                detail::col2im_add(dcols.data(), g, gx.data() + s * in_img);
            }
        }
    };
    if (has_bias)
        return detail::record<T>(std::move(shape), std::move(out), {x, weight, bias}, std::move(backward_fn));
    return detail::record<T>(std::move(shape), std::move(out), {x, weight}, std::move(backward_fn));
}

template <class T>
Tensor<T> relu(const Tensor<T>& a)
{
    std::vector<T> out(a.numel());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x[i] > T{0} ? x[i] : T{0};
    return detail::record<T>(a.shape(), std::move(out), {a}, [](TensorNode<T>& n) {
        auto& in = *n.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (in.value[i] > T{0})
                g[i] += n.grad[i];
    });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a)
{
    std::vector<T> out(a.numel());
    auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::tanh(x[i]);
    return detail::record<T>(a.shape(), std::move(out), {a}, [](TensorNode<T>& n) {
        auto& g = n.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[i] * (T{1} - n.value[i] * n.value[i]);
    });
}

template <class T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t k)
{
    detail::require_rank("max_pool2d", x, 4);
    detail::require(k >= 1 && x.dim(2) >= k && x.dim(3) >= k,
                    "max_pool2d: window " + std::to_string(k) + " too large for " + to_string(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OH = H / k, OW = W / k;
    std::vector<T> out(N * C * OH * OW);
    std::vector<std::size_t> arg(out.size());
    auto in = x.data();
    for (std::size_t nc = 0; nc < N * C; ++nc)
        for (std::size_t oi = 0; oi < OH; ++oi)
            for (std::size_t oj = 0; oj < OW; ++oj) {
                std::size_t best = nc * H * W + (oi * k) * W + oj * k;
                for (std::size_t di = 0; di < k; ++di)
                    for (std::size_t dj = 0; dj < k; ++dj) {
                        const std::size_t idx = nc * H * W + (oi * k + di) * W + oj * k + dj;
                        if (in[idx] > in[best])
                            best = idx;
                    }
                const std::size_t o = (nc * OH + oi) * OW + oj;
                out[o] = in[best];
                arg[o] = best;
            }
    return detail::record<T>({N, C, OH, OW}, std::move(out), {x}, [arg = std::move(arg)](TensorNode<T>& n) {
        auto& g = n.inputs[0]->grad_buffer();
        for (std::size_t o = 0; o < arg.size(); ++o)
            g[arg[o]] += n.grad[o];
    });
}

template <class T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t k)
{
    detail::require_rank("avg_pool2d", x, 4);
    detail::require(k >= 1 && x.dim(2) >= k && x.dim(3) >= k,
                    "avg_pool2d: window " + std::to_string(k) + " too large for " + to_string(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OH = H / k, OW = W / k;
    const T inv = T{1} / static_cast<T>(k * k);
    std::vector<T> out(N * C * OH * OW, T{0});
    auto in = x.data();
    for (std::size_t nc = 0; nc < N * C; ++nc)
        for (std::size_t oi = 0; oi < OH; ++oi)
            for (std::size_t oj = 0; oj < OW; ++oj) {
                T acc{0};
                for (std::size_t di = 0; di < k; ++di)
                    for (std::size_t dj = 0; dj < k; ++dj)
                        acc += in[nc * H * W + (oi * k + di) * W + oj * k + dj];
                out[(nc * OH + oi) * OW + oj] = acc * inv;
            }
    return detail::record<T>({N, C, OH, OW}, std::move(out), {x}, [N, C, H, W, OH, OW, k, inv](TensorNode<T>& n) {
        auto& g = n.inputs[0]->grad_buffer();
        for (std::size_t nc = 0; nc < N * C; ++nc)
            for (std::size_t oi = 0; oi < OH; ++oi)
                for (std::size_t oj = 0; oj < OW; ++oj) {
                    const T d = n.grad[(nc * OH + oi) * OW + oj] * inv;
                    for (std::size_t di = 0; di < k; ++di)
                        for (std::size_t dj = 0; dj < k; ++dj)
                            g[nc * H * W + (oi * k + di) * W + oj * k + dj] += d;
                }
    });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape)
{
    detail::require(numel_of(shape) == a.numel(),
                    "reshape: " + to_string(a.shape()) + " cannot become " + to_string(shape));
    std::vector<T> out(a.data().begin(), a.data().end());
    return detail::record<T>(std::move(shape), std::move(out), {a}, [](TensorNode<T>& n) {
        auto& g = n.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[i];
    });
}

template <class T>
Tensor<T> flatten(const Tensor<T>& a)
{
    detail::require(a.rank() >= 1, "flatten: needs a batch dimension");
    if (a.rank() == 2)
        return a;
    const std::size_t batch = a.dim(0);
    return reshape(a, {batch, batch ? a.numel() / batch : 0});
}

template <class T>
Tensor<T> softmax(const Tensor<T>& a)
{
    detail::require_rank("softmax", a, 2);
    const std::size_t N = a.dim(0), C = a.dim(1);
    std::vector<T> out(a.numel());
    auto x = a.data();
    for (std::size_t i = 0; i < N; ++i) {
        const T* row = x.data() + i * C;
        const T mx = *std::max_element(row, row + C);
        T z{0};
        for (std::size_t j = 0; j < C; ++j)
            z += (out[i * C + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < C; ++j)
            out[i * C + j] /= z;
    }
    return detail::record<T>(a.shape(), std::move(out), {a}, [N, C](TensorNode<T>& n) {
        auto& g = n.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < N; ++i) {
            T dot{0};
            for (std::size_t j = 0; j < C; ++j)
                dot += n.grad[i * C + j] * n.value[i * C + j];
            for (std::size_t j = 0; j < C; ++j)
                g[i * C + j] += n.value[i * C + j] * (n.grad[i * C + j] - dot);
        }
    });
}

/// Row-wise log-softmax with max subtraction.
template <class T>
Tensor<T> log_softmax(const Tensor<T>& a)
{
    detail::require_rank("log_softmax", a, 2);
    const std::size_t N = a.dim(0), C = a.dim(1);
    std::vector<T> out(a.numel());
    auto x = a.data();
    for (std::size_t i = 0; i < N; ++i) {
        const T* row = x.data() + i * C;
        const T mx = *std::max_element(row, row + C);
        T z{0};
        for (std::size_t j = 0; j < C; ++j)
            z += std::exp(row[j] - mx);
        const T lse = mx + std::log(z);
        for (std::size_t j = 0; j < C; ++j)
            out[i * C + j] = row[j] - lse;
    }
    return detail::record<T>(a.shape(), std::move(out), {a}, [N, C](TensorNode<T>& n) {
        auto& g = n.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < N; ++i) {
            T total{0};
            for (std::size_t j = 0; j < C; ++j)
                total += n.grad[i * C + j];
            for (std::size_t j = 0; j < C; ++j)
                g[i * C + j] += n.grad[i * C + j] - std::exp(n.value[i * C + j]) * total;
        }
    });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a)
{
    T acc{0};
    for (T v : a.data())
        acc += v;
    return detail::record<T>({}, {acc}, {a}, [](TensorNode<T>& n) {
        auto& g = n.inputs[0]->grad_buffer();
        for (auto& v : g)
            v += n.grad[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a)
{
    detail::require(a.numel() > 0, "mean: empty tensor");
    return scale(sum(a), T{1} / static_cast<T>(a.numel()));
}

template <class T>
Tensor<T> row_sum(const Tensor<T>& a)
{
    detail::require_rank("row_sum", a, 2);
    const std::size_t N = a.dim(0), D = a.dim(1);
    std::vector<T> out(N, T{0});
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < D; ++j)
            out[i] += a.data()[i * D + j];
    return detail::record<T>({N}, std::move(out), {a}, [N, D](TensorNode<T>& n) {
        auto& g = n.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < D; ++j)
                g[i * D + j] += n.grad[i];
    });
}

/// Per-row Euclidean norm. The gradient at a zero row is taken as zero.
template <class T>
Tensor<T> row_norm(const Tensor<T>& a)
{
    detail::require_rank("row_norm", a, 2);
    const std::size_t N = a.dim(0), D = a.dim(1);
    std::vector<T> out(N, T{0});
    for (std::size_t i = 0; i < N; ++i) {
        T acc{0};
        for (std::size_t j = 0; j < D; ++j)
            acc += a.data()[i * D + j] * a.data()[i * D + j];
        out[i] = std::sqrt(acc);
    }
    return detail::record<T>({N}, std::move(out), {a}, [N, D](TensorNode<T>& n) {
        auto& in = *n.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < N; ++i) {
            if (n.value[i] == T{0})
                continue;
            const T f = n.grad[i] / n.value[i];
            for (std::size_t j = 0; j < D; ++j)
                g[i * D + j] += f * in.value[i * D + j];
        }
    });
}

template <class T>
Tensor<T> pick(const Tensor<T>& a, std::span<const std::size_t> index)
{
    detail::require_rank("pick", a, 2);
    const std::size_t N = a.dim(0), C = a.dim(1);
    detail::require(index.size() == N, "pick: " + std::to_string(index.size()) + " indices for " +
                                           std::to_string(N) + " rows");
    std::vector<T> out(N);
    std::vector<std::size_t> idx(index.begin(), index.end());
    for (std::size_t i = 0; i < N; ++i) {
        detail::require(idx[i] < C, "pick: class index " + std::to_string(idx[i]) + " >= " +
                                        std::to_string(C) + " classes");
        out[i] = a.data()[i * C + idx[i]];
    }
    return detail::record<T>({N}, std::move(out), {a}, [C, idx = std::move(idx)](TensorNode<T>& n) {
        auto& g = n.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i)
            g[i * C + idx[i]] += n.grad[i];
    });
}

/// z_y - max_{j != y} z_j per row.
template <class T>
Tensor<T> class_margin(const Tensor<T>& z, std::span<const std::size_t> index)
{
    detail::require_rank("class_margin", z, 2);
    const std::size_t N = z.dim(0), C = z.dim(1);
    detail::require(C >= 2, "class_margin: needs at least two classes");
    detail::require(index.size() == N, "class_margin: label count mismatch");
    std::vector<T> out(N);
    std::vector<std::size_t> idx(index.begin(), index.end()), other(N);
    for (std::size_t i = 0; i < N; ++i) {
        detail::require(idx[i] < C, "class_margin: class index out of range");
        const T* row = z.data().data() + i * C;
        std::size_t best = idx[i] == 0 ? 1 : 0;
        for (std::size_t j = 0; j < C; ++j)
            if (j != idx[i] && row[j] > row[best])
                best = j;
        other[i] = best;
        out[i] = row[idx[i]] - row[best];
    }
    return detail::record<T>({N}, std::move(out), {z},
                             [C, idx = std::move(idx), other = std::move(other)](TensorNode<T>& n) {
                                 auto& g = n.inputs[0]->grad_buffer();
                                 for (std::size_t i = 0; i < idx.size(); ++i) {
                                     g[i * C + idx[i]] += n.grad[i];
                                     g[i * C + other[i]] -= n.grad[i];
                                 }
                             });
}

}  // namespace vfd
