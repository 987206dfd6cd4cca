#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "attnprune/tensor.hpp"

namespace attnprune {

// ---------------------------------------------------------------------------
// Elementwise and shape plumbing
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw shape_error("add: shapes disagree: " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    }
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    auto& o = out.value();
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
    if (detail::taping<T>({&a, &b})) {
        out.set_requires_grad(true);
        GradientTape<T>::current()->record([an = a.node_ptr(), bn = b.node_ptr(),
                                            on = out.node_ptr()] {
            if (an->requires_grad) {
                for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

/// out = c * a for a plain constant c (no gradient w.r.t. c).
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const auto& av = a.value();
    auto& o = out.value();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * av[i];
    if (detail::taping<T>({&a})) {
        out.set_requires_grad(true);
        GradientTape<T>::current()->record([an = a.node_ptr(), on = out.node_ptr(), c] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += c * on->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros({1});
    T acc = T(0);
    for (const T v : a.value()) acc += v;
    out.value()[0] = acc;
    if (detail::taping<T>({&a})) {
        out.set_requires_grad(true);
        GradientTape<T>::current()->record([an = a.node_ptr(), on = out.node_ptr()] {
            const T g = on->grad[0];
            for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel()) {
        throw shape_error("reshape: cannot view " + shape_str(a.shape()) + " as " +
                          shape_str(new_shape));
    }
    Tensor<T> out = Tensor<T>::from(std::move(new_shape), a.value());
    if (detail::taping<T>({&a})) {
        out.set_requires_grad(true);
        GradientTape<T>::current()->record([an = a.node_ptr(), on = out.node_ptr()] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& a) {
    return reshape(a, Shape{a.numel()});
}

/// Elementwise map with caller-supplied value and derivative functions.
/// The derivative is evaluated at the input value.
template <typename T, typename F, typename D>
Tensor<T> map_unary(const Tensor<T>& a, F f, D dfdx) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const auto& av = a.value();
    auto& o = out.value();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(av[i]);
    if (detail::taping<T>({&a})) {
        out.set_requires_grad(true);
        GradientTape<T>::current()->record([an = a.node_ptr(), on = out.node_ptr(), dfdx] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                an->grad[i] += dfdx(an->value[i]) * on->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return map_unary(
        a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x) { return x > T(0) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw shape_error("matmul: expected rank-2 operands, got " + shape_str(a.shape()) +
                          " and " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), n = a.dim(1), n2 = b.dim(0), p = b.dim(1);
    if (n != n2) {
        throw shape_error("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
    }
    Tensor<T> out = Tensor<T>::zeros({m, p});
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& o = out.value();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            const T aik = av[i * n + k];
            for (std::size_t j = 0; j < p; ++j) o[i * p + j] += aik * bv[k * p + j];
        }
    }
    if (detail::taping<T>({&a, &b})) {
        out.set_requires_grad(true);
        GradientTape<T>::current()->record([an = a.node_ptr(), bn = b.node_ptr(),
                                            on = out.node_ptr(), m, n, p] {
            // d/da = g . b^T, d/db = a^T . g
            if (an->requires_grad) {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < p; ++j) {
                        const T g = on->grad[i * p + j];
                        for (std::size_t k = 0; k < n; ++k) {
                            an->grad[i * n + k] += g * bn->value[k * p + j];
                        }
                    }
                }
            }
            if (bn->requires_grad) {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t k = 0; k < n; ++k) {
                        const T av_ik = an->value[i * n + k];
                        for (std::size_t j = 0; j < p; ++j) {
                            bn->grad[k * p + j] += av_ik * on->grad[i * p + j];
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.rank() != 2) {
        throw shape_error("transpose: expected rank-2 input, got " + shape_str(a.shape()));
    }
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor<T> out = Tensor<T>::zeros({c, r});
    const auto& av = a.value();
    auto& o = out.value();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) o[j * r + i] = av[i * c + j];
    }
    if (detail::taping<T>({&a})) {
        out.set_requires_grad(true);
        GradientTape<T>::current()->record([an = a.node_ptr(), on = out.node_ptr(), r, c] {
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += on->grad[j * r + i];
            }
        });
    }
    return out;
}

/// Adds a length-P bias to every row of an NxP matrix.
template <typename T>
Tensor<T> add_bias_rows(const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
        throw shape_error("add_bias_rows: incompatible shapes " + shape_str(x.shape()) +
                          " and " + shape_str(bias.shape()));
    }
    const std::size_t n = x.dim(0), p = x.dim(1);
    Tensor<T> out = Tensor<T>::zeros({n, p});
    const auto& xv = x.value();
    const auto& bv = bias.value();
    auto& o = out.value();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) o[i * p + j] = xv[i * p + j] + bv[j];
    }
    if (detail::taping<T>({&x, &bias})) {
        out.set_requires_grad(true);
        GradientTape<T>::current()->record([xn = x.node_ptr(), bn = bias.node_ptr(),
                                            on = out.node_ptr(), n, p] {
            if (xn->requires_grad) {
                for (std::size_t i = 0; i < n * p; ++i) xn->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < p; ++j) bn->grad[j] += on->grad[i * p + j];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    return add_bias_rows(matmul(x, w), bias);
}

/// Row-wise mean of a rank-2 tensor: out[i] = mean(m[i, :]).
template <typename T>
Tensor<T> reduce_mean_rows(const Tensor<T>& m) {
    if (m.rank() != 2) {
        throw shape_error("reduce_mean_rows: expected rank-2 input, got " +
                          shape_str(m.shape()));
    }
    const std::size_t r = m.dim(0), c = m.dim(1);
    if (c == 0) {
        throw shape_error("reduce_mean_rows: rows of length zero in " + shape_str(m.shape()));
    }
    Tensor<T> out = Tensor<T>::zeros({r});
    const auto& mv = m.value();
    auto& o = out.value();
    for (std::size_t i = 0; i < r; ++i) {
        T acc = T(0);
        for (std::size_t j = 0; j < c; ++j) acc += mv[i * c + j];
        o[i] = acc / static_cast<T>(c);
    }
    if (detail::taping<T>({&m})) {
        out.set_requires_grad(true);
        GradientTape<T>::current()->record([mn = m.node_ptr(), on = out.node_ptr(), r, c] {
            const T inv = T(1) / static_cast<T>(c);
            for (std::size_t i = 0; i < r; ++i) {
                const T g = on->grad[i] * inv;
                for (std::size_t j = 0; j < c; ++j) mn->grad[i * c + j] += g;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> l1_norm(const Tensor<T>& v) {
    Tensor<T> out = Tensor<T>::zeros({1});
    T acc = T(0);
    for (const T x : v.value()) acc += std::abs(x);
    out.value()[0] = acc;
    if (detail::taping<T>({&v})) {
        out.set_requires_grad(true);
        GradientTape<T>::current()->record([vn = v.node_ptr(), on = out.node_ptr()] {
            const T g = on->grad[0];
            for (std::size_t i = 0; i < vn->grad.size(); ++i) {
                const T x = vn->value[i];
                // subgradient 0 at x == 0
                vn->grad[i] += g * (x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)));
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution and friends
// ---------------------------------------------------------------------------

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                   std::size_t padding) {
    return (in + 2 * padding - kernel) / stride + 1;
}

/// Direct 2-D convolution (cross-correlation). Input is either [C,H,W] or
/// batched [N,C,H,W]; filters are [F,C,K,K]. Zero padding, no bias. F == 0 and
/// C == 0 are legal: the output simply has zero channels / is all zero.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& filters, std::size_t stride = 1,
                 std::size_t padding = 0) {
    if (filters.rank() != 4) {
        throw shape_error("conv2d: filters must be rank-4 [FxCxKxK], got " +
                          shape_str(filters.shape()));
    }
    if (input.rank() != 3 && input.rank() != 4) {
        throw shape_error("conv2d: input must be [CxHxW] or [NxCxHxW], got " +
                          shape_str(input.shape()));
    }
    if (stride < 1) throw domain_error("conv2d: stride must be >= 1");
    const bool batched = input.rank() == 4;
    const std::size_t n = batched ? input.dim(0) : 1;
    const std::size_t c = input.dim(batched ? 1 : 0);
    const std::size_t h = input.dim(batched ? 2 : 1);
    const std::size_t w = input.dim(batched ? 3 : 2);
    const std::size_t f = filters.dim(0), fc = filters.dim(1), kh = filters.dim(2),
                      kw = filters.dim(3);
    if (fc != c) {
        throw shape_error("conv2d: input channels disagree: input " + shape_str(input.shape()) +
                          " vs filters " + shape_str(filters.shape()));
    }
    if (kh != kw) {
        throw shape_error("conv2d: only square kernels supported, got " +
                          shape_str(filters.shape()));
    }
    if (kh > h + 2 * padding || kw > w + 2 * padding) {
        throw shape_error("conv2d: kernel " + shape_str(filters.shape()) +
                          " larger than padded input " + shape_str(input.shape()) +
                          " with padding " + std::to_string(padding));
    }
    const std::size_t oh = conv_out_extent(h, kh, stride, padding);
    const std::size_t ow = conv_out_extent(w, kw, stride, padding);

    Shape out_shape = batched ? Shape{n, f, oh, ow} : Shape{f, oh, ow};
    Tensor<T> out = Tensor<T>::zeros(std::move(out_shape));
    const auto& xv = input.value();
    const auto& wv = filters.value();
    auto& o = out.value();

    const std::size_t in_plane = h * w;
    const std::size_t out_plane = oh * ow;
    for (std::size_t bi = 0; bi < n; ++bi) {
        const T* xb = xv.data() + bi * c * in_plane;
        T* ob = o.data() + bi * f * out_plane;
        for (std::size_t fi = 0; fi < f; ++fi) {
            const T* wf = wv.data() + fi * c * kh * kw;
            T* of = ob + fi * out_plane;
            for (std::size_t ci = 0; ci < c; ++ci) {
                const T* xc = xb + ci * in_plane;
                const T* wc = wf + ci * kh * kw;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const T wval = wc[ky * kw + kx];
                        if (wval == T(0)) continue;
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            const std::ptrdiff_t iy =
                                static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                static_cast<std::ptrdiff_t>(padding);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t ox = 0; ox < ow; ++ox) {
                                const std::ptrdiff_t ix =
                                    static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                    static_cast<std::ptrdiff_t>(padding);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                of[oy * ow + ox] += wval * xc[iy * w + ix];
                            }
                        }
                    }
                }
            }
        }
    }

    if (detail::taping<T>({&input, &filters})) {
        out.set_requires_grad(true);
        GradientTape<T>::current()->record([xn = input.node_ptr(), wn = filters.node_ptr(),
                                            on = out.node_ptr(), n, c, h, w, f, kh, kw, oh, ow,
                                            stride, padding] {
            const std::size_t in_plane = h * w;
            const std::size_t out_plane = oh * ow;
            const bool need_x = xn->requires_grad;
            const bool need_w = wn->requires_grad;
            for (std::size_t bi = 0; bi < n; ++bi) {
                const T* xb = xn->value.data() + bi * c * in_plane;
                T* gxb = need_x ? xn->grad.data() + bi * c * in_plane : nullptr;
                const T* gob = on->grad.data() + bi * f * out_plane;
                for (std::size_t fi = 0; fi < f; ++fi) {
                    const T* gof = gob + fi * out_plane;
                    for (std::size_t ci = 0; ci < c; ++ci) {
                        const std::size_t widx0 = (fi * c + ci) * kh * kw;
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const T wval = wn->value[widx0 + ky * kw + kx];
                                T gw = T(0);
                                for (std::size_t oy = 0; oy < oh; ++oy) {
                                    const std::ptrdiff_t iy =
                                        static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                        static_cast<std::ptrdiff_t>(padding);
                                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                    for (std::size_t ox = 0; ox < ow; ++ox) {
                                        const std::ptrdiff_t ix =
                                            static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                            static_cast<std::ptrdiff_t>(padding);
                                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) {
                                            continue;
                                        }
                                        const T g = gof[oy * ow + ox];
                                        const std::size_t xi =
                                            ci * in_plane + static_cast<std::size_t>(iy) * w +
                                            static_cast<std::size_t>(ix);
                                        if (need_w) gw += g * xb[xi];
                                        if (need_x) gxb[xi] += g * wval;
                                    }
                                }
                                if (need_w) wn->grad[widx0 + ky * kw + kx] += gw;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

/// Multiplies channel f of a feature map by scores[f]. Maps are [F,H,W] or
/// batched [N,F,H,W]; gradients flow to both operands.
template <typename T>
Tensor<T> pointwise_mul_broadcast(const Tensor<T>& scores, const Tensor<T>& maps) {
    if (scores.rank() != 1) {
        throw shape_error("pointwise_mul_broadcast: scores must be rank-1, got " +
                          shape_str(scores.shape()));
    }
    if (maps.rank() != 3 && maps.rank() != 4) {
        throw shape_error("pointwise_mul_broadcast: maps must be [FxHxW] or [NxFxHxW], got " +
                          shape_str(maps.shape()));
    }
    const bool batched = maps.rank() == 4;
    const std::size_t n = batched ? maps.dim(0) : 1;
    const std::size_t f = maps.dim(batched ? 1 : 0);
    const std::size_t plane = maps.dim(batched ? 2 : 1) * maps.dim(batched ? 3 : 2);
    if (scores.dim(0) != f) {
        throw shape_error("pointwise_mul_broadcast: score length " + shape_str(scores.shape()) +
                          " does not match channel count of " + shape_str(maps.shape()));
    }
    Tensor<T> out = Tensor<T>::zeros(maps.shape());
    const auto& sv = scores.value();
    const auto& mv = maps.value();
    auto& o = out.value();
    for (std::size_t bi = 0; bi < n; ++bi) {
        for (std::size_t fi = 0; fi < f; ++fi) {
            const T s = sv[fi];
            const std::size_t base = (bi * f + fi) * plane;
            for (std::size_t i = 0; i < plane; ++i) o[base + i] = s * mv[base + i];
        }
    }
    if (detail::taping<T>({&scores, &maps})) {
        out.set_requires_grad(true);
        GradientTape<T>::current()->record([sn = scores.node_ptr(), mn = maps.node_ptr(),
                                            on = out.node_ptr(), n, f, plane] {
            for (std::size_t bi = 0; bi < n; ++bi) {
                for (std::size_t fi = 0; fi < f; ++fi) {
                    const std::size_t base = (bi * f + fi) * plane;
                    if (sn->requires_grad) {
                        T gs = T(0);
                        for (std::size_t i = 0; i < plane; ++i) {
                            gs += on->grad[base + i] * mn->value[base + i];
                        }
                        sn->grad[fi] += gs;
                    }
                    if (mn->requires_grad) {
                        const T s = sn->value[fi];
                        for (std::size_t i = 0; i < plane; ++i) {
                            mn->grad[base + i] += s * on->grad[base + i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

/// Per-channel normalization with constant statistics: for channel c,
/// out = (x - mean[c]) * invstd[c] * gamma[c] + beta[c]. The statistics are
/// plain constants so gradients never couple batch elements; they flow to
/// x, gamma and beta only.
template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       const std::vector<T>& mean, const std::vector<T>& invstd) {
    if (x.rank() != 3 && x.rank() != 4) {
        throw shape_error("channel_norm: input must be [CxHxW] or [NxCxHxW], got " +
                          shape_str(x.shape()));
    }
    const bool batched = x.rank() == 4;
    const std::size_t n = batched ? x.dim(0) : 1;
    const std::size_t c = x.dim(batched ? 1 : 0);
    const std::size_t plane = x.dim(batched ? 2 : 1) * x.dim(batched ? 3 : 2);
    if (gamma.numel() != c || beta.numel() != c || mean.size() != c || invstd.size() != c) {
        throw shape_error("channel_norm: expected " + std::to_string(c) +
                          " per-channel parameters, got gamma " + shape_str(gamma.shape()) +
                          ", beta " + shape_str(beta.shape()));
    }
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const auto& xv = x.value();
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    auto& o = out.value();
    for (std::size_t bi = 0; bi < n; ++bi) {
        for (std::size_t ci = 0; ci < c; ++ci) {
            const T m = mean[ci], is = invstd[ci], g = gv[ci], b = bv[ci];
            const std::size_t base = (bi * c + ci) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                o[base + i] = (xv[base + i] - m) * is * g + b;
            }
        }
    }
    if (detail::taping<T>({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        GradientTape<T>::current()->record([xn = x.node_ptr(), gn = gamma.node_ptr(),
                                            bn = beta.node_ptr(), on = out.node_ptr(), mean,
                                            invstd, n, c, plane] {
            for (std::size_t bi = 0; bi < n; ++bi) {
                for (std::size_t ci = 0; ci < c; ++ci) {
                    const T m = mean[ci], is = invstd[ci], g = gn->value[ci];
                    const std::size_t base = (bi * c + ci) * plane;
                    T ggamma = T(0), gbeta = T(0);
                    for (std::size_t i = 0; i < plane; ++i) {
                        const T go = on->grad[base + i];
                        if (xn->requires_grad) xn->grad[base + i] += go * is * g;
                        ggamma += go * (xn->value[base + i] - m) * is;
                        gbeta += go;
                    }
                    if (gn->requires_grad) gn->grad[ci] += ggamma;
                    if (bn->requires_grad) bn->grad[ci] += gbeta;
                }
            }
        });
    }
    return out;
}

/// [N,C,H,W] -> [N,C] (or [C,H,W] -> [C]) by averaging each channel plane.
template <typename T>
Tensor<T> global_average_pool(const Tensor<T>& x) {
    if (x.rank() != 3 && x.rank() != 4) {
        throw shape_error("global_average_pool: input must be [CxHxW] or [NxCxHxW], got " +
                          shape_str(x.shape()));
    }
    const bool batched = x.rank() == 4;
    const std::size_t n = batched ? x.dim(0) : 1;
    const std::size_t c = x.dim(batched ? 1 : 0);
    const std::size_t plane = x.dim(batched ? 2 : 1) * x.dim(batched ? 3 : 2);
    Tensor<T> out = Tensor<T>::zeros(batched ? Shape{n, c} : Shape{c});
    const auto& xv = x.value();
    auto& o = out.value();
    const T inv = plane > 0 ? T(1) / static_cast<T>(plane) : T(0);
    for (std::size_t bi = 0; bi < n; ++bi) {
        for (std::size_t ci = 0; ci < c; ++ci) {
            const std::size_t base = (bi * c + ci) * plane;
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += xv[base + i];
            o[bi * c + ci] = acc * inv;
        }
    }
    if (detail::taping<T>({&x})) {
        out.set_requires_grad(true);
        GradientTape<T>::current()->record([xn = x.node_ptr(), on = out.node_ptr(), n, c, plane,
                                            inv] {
            for (std::size_t bi = 0; bi < n; ++bi) {
                for (std::size_t ci = 0; ci < c; ++ci) {
                    const T g = on->grad[bi * c + ci] * inv;
                    const std::size_t base = (bi * c + ci) * plane;
                    for (std::size_t i = 0; i < plane; ++i) xn->grad[base + i] += g;
                }
            }
        });
    }
    return out;
}

/// Mean cross-entropy of logits [N,K] against integer labels, with a stable
/// log-sum-exp. Labels outside [0, K) raise an index error.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) {
        throw shape_error("cross_entropy: logits must be [NxK], got " +
                          shape_str(logits.shape()));
    }
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n) {
        throw shape_error("cross_entropy: " + std::to_string(n) + " logit rows vs " +
                          std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
            throw domain_error("cross_entropy: label " + std::to_string(labels[i]) +
                               " at row " + std::to_string(i) + " outside [0, " +
                               std::to_string(k) + ")");
        }
    }
    const auto& zv = logits.value();
    std::vector<T> probs(n * k);
    T loss = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        T zmax = zv[i * k];
        for (std::size_t j = 1; j < k; ++j) zmax = std::max(zmax, zv[i * k + j]);
        T denom = T(0);
        for (std::size_t j = 0; j < k; ++j) {
            probs[i * k + j] = std::exp(zv[i * k + j] - zmax);
            denom += probs[i * k + j];
        }
        for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= denom;
        loss -= std::log(probs[i * k + static_cast<std::size_t>(labels[i])]);
    }
    loss /= static_cast<T>(n);
    Tensor<T> out = Tensor<T>::scalar(loss);
    if (detail::taping<T>({&logits})) {
        out.set_requires_grad(true);
        GradientTape<T>::current()->record([zn = logits.node_ptr(), on = out.node_ptr(),
                                            probs = std::move(probs), labels, n, k] {
            const T g = on->grad[0] / static_cast<T>(n);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < k; ++j) {
                    const T onehot =
                        (static_cast<std::size_t>(labels[i]) == j) ? T(1) : T(0);
                    zn->grad[i * k + j] += g * (probs[i * k + j] - onehot);
                }
            }
        });
    }
    return out;
}

/// Fraction of argmax-correct rows; plain measurement, not differentiable.
template <typename T>
double accuracy(const Tensor<T>& logits, const std::vector<int>& labels) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n) {
        throw shape_error("accuracy: " + std::to_string(n) + " logit rows vs " +
                          std::to_string(labels.size()) + " labels");
    }
    std::size_t correct = 0;
    const auto& zv = logits.value();
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (zv[i * k + j] > zv[i * k + best]) best = j;
        }
        if (best == static_cast<std::size_t>(labels[i])) ++correct;
    }
    return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace attnprune
