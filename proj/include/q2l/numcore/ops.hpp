#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "q2l/numcore/gemm.hpp"
#include "q2l/numcore/tensor.hpp"

namespace q2l {

namespace detail {

template <class T>
bool tracks(std::initializer_list<const Tensor<T>*> inputs) {
    if (!grad_mode_enabled()) return false;
    for (const auto* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <class T>
Tensor<T> finish(const char* op, Tensor<T> out, bool track, typename Tape<T>::BackwardFn fn) {
    if (check_finite_enabled()) {
        for (T v : out.data())
            if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + ": non-finite value in output");
    }
    if (track) {
        auto& s = *out.storage();
        s.requires_grad = true;
        s.leaf = false;
        Tape<T>::current().record(out.storage(), std::move(fn));
    }
    return out;
}

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
    if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_rank(const char* op, const Shape& s, std::size_t r) {
    if (s.size() != r)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(s));
}

struct AxisSplit {
    std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const char* op, const Shape& s, std::size_t axis) {
    if (axis >= s.size())
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " + shape_str(s));
    AxisSplit r{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

// Elementwise unary op: fwd(x) -> y, local derivative dydx(x, y).
template <class T, class Fwd, class Deriv>
Tensor<T> unary(const char* op, const Tensor<T>& x, Fwd fwd, Deriv dydx) {
    std::vector<T> out(x.numel());
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
    const bool track = tracks<T>({&x});
    Tensor<T> y(x.shape(), std::move(out));
    auto xs = x.storage();
    return finish<T>(op, y, track, [xs, dydx](Storage<T>& o) {
        if (!xs->requires_grad) return;
        auto& g = xs->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * dydx(xs->data[i], o.data[i]);
    });
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: dimension mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n, T(0));
    gemm::nn_accumulate(m, k, n, a.data().data(), b.data().data(), out.data());
    const bool track = detail::tracks<T>({&a, &b});
    auto as = a.storage();
    auto bs = b.storage();
    return detail::finish<T>("matmul", Tensor<T>({m, n}, std::move(out)), track,
                             [as, bs, m, k, n](detail::Storage<T>& o) {
                                 if (as->requires_grad) {
                                     const auto bt = gemm::transposed(k, n, bs->data.data());
                                     gemm::nn_accumulate(m, n, k, o.grad.data(), bt.data(),
                                                         as->grad_buffer().data());
                                 }
                                 if (bs->requires_grad) {
                                     const auto at = gemm::transposed(m, k, as->data.data());
                                     gemm::nn_accumulate(k, m, n, at.data(), o.grad.data(),
                                                         bs->grad_buffer().data());
                                 }
                             });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::require_rank("transpose", a.shape(), 2);
    const std::size_t r = a.dim(0), c = a.dim(1);
    const bool track = detail::tracks<T>({&a});
    auto as = a.storage();
    return detail::finish<T>("transpose", Tensor<T>({c, r}, gemm::transposed(r, c, a.data().data())), track,
                             [as, r, c](detail::Storage<T>& o) {
                                 if (!as->requires_grad) return;
                                 auto& g = as->grad_buffer();
                                 for (std::size_t i = 0; i < r; ++i)
                                     for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
                             });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("add", a.shape(), b.shape());
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    const bool track = detail::tracks<T>({&a, &b});
    auto as = a.storage();
    auto bs = b.storage();
    return detail::finish<T>("add", Tensor<T>(a.shape(), std::move(out)), track, [as, bs](detail::Storage<T>& o) {
        for (auto* s : {as.get(), bs.get()}) {
            if (!s->requires_grad) continue;
            auto& g = s->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("sub", a.shape(), b.shape());
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    const bool track = detail::tracks<T>({&a, &b});
    auto as = a.storage();
    auto bs = b.storage();
    return detail::finish<T>("sub", Tensor<T>(a.shape(), std::move(out)), track, [as, bs](detail::Storage<T>& o) {
        if (as->requires_grad) {
            auto& g = as->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (bs->requires_grad) {
            auto& g = bs->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
        }
    });
}

/// Elementwise (Hadamard) product.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("mul", a.shape(), b.shape());
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    const bool track = detail::tracks<T>({&a, &b});
    auto as = a.storage();
    auto bs = b.storage();
    return detail::finish<T>("mul", Tensor<T>(a.shape(), std::move(out)), track, [as, bs](detail::Storage<T>& o) {
        if (as->requires_grad) {
            auto& g = as->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bs->data[i];
        }
        if (bs->requires_grad) {
            auto& g = bs->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * as->data[i];
        }
    });
}

/// a[..., n] + bias[n], broadcasting the bias over all leading positions.
template <class T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias) {
    if (bias.rank() != 1 || bias.dim(0) != a.shape().back())
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match last extent of " +
                         shape_str(a.shape()));
    const std::size_t n = bias.dim(0), rows = a.numel() / n;
    std::vector<T> out(a.numel());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = a.data()[r * n + j] + bias.data()[j];
    const bool track = detail::tracks<T>({&a, &bias});
    auto as = a.storage();
    auto bs = bias.storage();
    return detail::finish<T>("add_bias", Tensor<T>(a.shape(), std::move(out)), track,
                             [as, bs, n, rows](detail::Storage<T>& o) {
                                 if (as->requires_grad) {
                                     auto& g = as->grad_buffer();
                                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                                 }
                                 if (bs->requires_grad) {
                                     auto& g = bs->grad_buffer();
                                     for (std::size_t r = 0; r < rows; ++r)
                                         for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[r * n + j];
                                 }
                             });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    return detail::unary<T>("scale", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return detail::unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

/// 1 - a
template <class T>
Tensor<T> one_minus(const Tensor<T>& a) {
    return detail::unary<T>("one_minus", a, [](T x) { return T(1) - x; }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary<T>(
        "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::unary<T>(
        "sigmoid", a,
        [](T x) {
            if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
    return detail::unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

/// a^e elementwise for a >= 0. Exponent zero yields ones with zero gradient.
template <class T>
Tensor<T> pow_scalar(const Tensor<T>& a, T e) {
    return detail::unary<T>(
        "pow_scalar", a, [e](T x) { return e == T(0) ? T(1) : std::pow(x, e); },
        [e](T x, T) { return e == T(0) ? T(0) : (e == T(1) ? T(1) : e * std::pow(x, e - T(1))); });
}

/// Clamp to [lo, hi]; gradient is zero where the clamp is active.
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
    return detail::unary<T>(
        "clamp", a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    for (T v : a.data()) acc += v;
    const bool track = detail::tracks<T>({&a});
    auto as = a.storage();
    return detail::finish<T>("sum", Tensor<T>::scalar(acc), track, [as](detail::Storage<T>& o) {
        if (!as->requires_grad) return;
        auto& g = as->grad_buffer();
        for (auto& v : g) v += o.grad[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Sum along one axis, dropping it (a rank-1 input yields shape [1]).
template <class T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis) {
    const auto sp = detail::split_axis("sum_axis", a.shape(), axis);
    Shape out_shape;
    for (std::size_t i = 0; i < a.rank(); ++i)
        if (i != axis) out_shape.push_back(a.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);
    std::vector<T> out(sp.outer * sp.inner, T(0));
    const auto ad = a.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t e = 0; e < sp.extent; ++e)
            for (std::size_t i = 0; i < sp.inner; ++i)
                out[o * sp.inner + i] += ad[(o * sp.extent + e) * sp.inner + i];
    const bool track = detail::tracks<T>({&a});
    auto as = a.storage();
    return detail::finish<T>("sum_axis", Tensor<T>(out_shape, std::move(out)), track,
                             [as, sp](detail::Storage<T>& o) {
                                 if (!as->requires_grad) return;
                                 auto& g = as->grad_buffer();
                                 for (std::size_t ou = 0; ou < sp.outer; ++ou)
                                     for (std::size_t e = 0; e < sp.extent; ++e)
                                         for (std::size_t i = 0; i < sp.inner; ++i)
                                             g[(ou * sp.extent + e) * sp.inner + i] += o.grad[ou * sp.inner + i];
                             });
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis) {
    const auto extent = detail::split_axis("mean_axis", a.shape(), axis).extent;
    return scale(sum_axis(a, axis), T(1) / static_cast<T>(extent));
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    const bool track = detail::tracks<T>({&a});
    auto as = a.storage();
    std::vector<T> copy(a.data().begin(), a.data().end());
    return detail::finish<T>("reshape", Tensor<T>(std::move(shape), std::move(copy)), track,
                             [as](detail::Storage<T>& o) {
                                 if (!as->requires_grad) return;
                                 auto& g = as->grad_buffer();
                                 for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                             });
}

/// Half-open slice [begin, end) along one axis.
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto sp = detail::split_axis("slice", a.shape(), axis);
    if (begin >= end || end > sp.extent)
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for extent " + std::to_string(sp.extent));
    Shape out_shape = a.shape();
    out_shape[axis] = end - begin;
    const std::size_t len = end - begin;
    std::vector<T> out(sp.outer * len * sp.inner);
    const auto ad = a.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t e = 0; e < len; ++e)
            for (std::size_t i = 0; i < sp.inner; ++i)
                out[(o * len + e) * sp.inner + i] = ad[(o * sp.extent + begin + e) * sp.inner + i];
    const bool track = detail::tracks<T>({&a});
    auto as = a.storage();
    return detail::finish<T>("slice", Tensor<T>(out_shape, std::move(out)), track,
                             [as, sp, begin, len](detail::Storage<T>& o) {
                                 if (!as->requires_grad) return;
                                 auto& g = as->grad_buffer();
                                 for (std::size_t ou = 0; ou < sp.outer; ++ou)
                                     for (std::size_t e = 0; e < len; ++e)
                                         for (std::size_t i = 0; i < sp.inner; ++i)
                                             g[(ou * sp.extent + begin + e) * sp.inner + i] +=
                                                 o.grad[(ou * len + e) * sp.inner + i];
                             });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& ref = parts.front().shape();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch " + shape_str(p.shape()));
        for (std::size_t i = 0; i < ref.size(); ++i)
            if (i != axis && p.dim(i) != ref[i])
                throw ShapeError("concat: shape mismatch " + shape_str(ref) + " vs " + shape_str(p.shape()));
        total += detail::split_axis("concat", p.shape(), axis).extent;
    }
    const auto sp0 = detail::split_axis("concat", ref, axis);
    Shape out_shape = ref;
    out_shape[axis] = total;
    std::vector<T> out(sp0.outer * total * sp0.inner);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t ext = p.dim(axis);
        const auto pd = p.data();
        for (std::size_t o = 0; o < sp0.outer; ++o)
            for (std::size_t e = 0; e < ext; ++e)
                for (std::size_t i = 0; i < sp0.inner; ++i)
                    out[(o * total + off + e) * sp0.inner + i] = pd[(o * ext + e) * sp0.inner + i];
        offsets.push_back(off);
        off += ext;
    }
    bool track = false;
    std::vector<typename Tensor<T>::StoragePtr> stores;
    for (const auto& p : parts) {
        track = track || detail::tracks<T>({&p});
        stores.push_back(p.storage());
    }
    return detail::finish<T>("concat", Tensor<T>(out_shape, std::move(out)), track,
                             [stores, offsets, sp0, total, axis](detail::Storage<T>& o) {
                                 for (std::size_t k = 0; k < stores.size(); ++k) {
                                     auto& s = *stores[k];
                                     if (!s.requires_grad) continue;
                                     auto& g = s.grad_buffer();
                                     const std::size_t ext = s.shape[axis];
                                     for (std::size_t ou = 0; ou < sp0.outer; ++ou)
                                         for (std::size_t e = 0; e < ext; ++e)
                                             for (std::size_t i = 0; i < sp0.inner; ++i)
                                                 g[(ou * ext + e) * sp0.inner + i] +=
                                                     o.grad[(ou * total + offsets[k] + e) * sp0.inner + i];
                                 }
                             });
}

/// Numerically stable softmax along `axis` (max-subtracted).
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    const auto sp = detail::split_axis("softmax", x.shape(), axis);
    std::vector<T> out(x.numel());
    const auto xd = x.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.extent * sp.inner + i;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t e = 0; e < sp.extent; ++e) mx = std::max(mx, xd[base + e * sp.inner]);
            T z = T(0);
            for (std::size_t e = 0; e < sp.extent; ++e) {
                const T v = std::exp(xd[base + e * sp.inner] - mx);
                out[base + e * sp.inner] = v;
                z += v;
            }
            for (std::size_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] /= z;
        }
    const bool track = detail::tracks<T>({&x});
    auto xs = x.storage();
    return detail::finish<T>("softmax", Tensor<T>(x.shape(), std::move(out)), track,
                             [xs, sp](detail::Storage<T>& o) {
                                 if (!xs->requires_grad) return;
                                 auto& g = xs->grad_buffer();
                                 for (std::size_t ou = 0; ou < sp.outer; ++ou)
                                     for (std::size_t i = 0; i < sp.inner; ++i) {
                                         const std::size_t base = ou * sp.extent * sp.inner + i;
                                         T dot = T(0);
                                         for (std::size_t e = 0; e < sp.extent; ++e)
                                             dot += o.grad[base + e * sp.inner] * o.data[base + e * sp.inner];
                                         for (std::size_t e = 0; e < sp.extent; ++e) {
                                             const std::size_t k = base + e * sp.inner;
                                             g[k] += o.data[k] * (o.grad[k] - dot);
                                         }
                                     }
                             });
}

/// Normalizes each row over the last axis to zero mean and unit (biased)
/// variance, then applies gain and bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
    const std::size_t n = x.shape().back();
    if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != n || bias.dim(0) != n)
        throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                         " do not match last extent of " + shape_str(x.shape()));
    const std::size_t rows = x.numel() / n;
    std::vector<T> out(x.numel()), xhat(x.numel()), rstd(rows);
    const auto xd = x.data();
    const auto gd = gain.data();
    const auto bd = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xd.data() + r * n;
        T mu = T(0);
        for (std::size_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<T>(n);
        T var = T(0);
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(n);
        const T rs = T(1) / std::sqrt(var + eps);
        rstd[r] = rs;
        for (std::size_t j = 0; j < n; ++j) {
            const T h = (row[j] - mu) * rs;
            xhat[r * n + j] = h;
            out[r * n + j] = h * gd[j] + bd[j];
        }
    }
    const bool track = detail::tracks<T>({&x, &gain, &bias});
    auto xs = x.storage();
    auto gs = gain.storage();
    auto bs = bias.storage();
    return detail::finish<T>(
        "layer_norm", Tensor<T>(x.shape(), std::move(out)), track,
        [xs, gs, bs, xhat = std::move(xhat), rstd = std::move(rstd), n, rows](detail::Storage<T>& o) {
            if (xs->requires_grad) {
                auto& g = xs->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                    T m1 = T(0), m2 = T(0);
                    for (std::size_t j = 0; j < n; ++j) {
                        const T dh = o.grad[r * n + j] * gs->data[j];
                        m1 += dh;
                        m2 += dh * xhat[r * n + j];
                    }
                    m1 /= static_cast<T>(n);
                    m2 /= static_cast<T>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const T dh = o.grad[r * n + j] * gs->data[j];
                        g[r * n + j] += rstd[r] * (dh - m1 - xhat[r * n + j] * m2);
                    }
                }
            }
            if (gs->requires_grad) {
                auto& g = gs->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[r * n + j] * xhat[r * n + j];
            }
            if (bs->requires_grad) {
                auto& g = bs->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[r * n + j];
            }
        });
}

namespace detail {

// Shared gather/scatter plumbing for index-remapping ops. index[i] is the
// source element of output i, or npos for a zero (padding) entry.
inline constexpr std::size_t npos = static_cast<std::size_t>(-1);

template <class T>
Tensor<T> gather(const char* op, const Tensor<T>& a, Shape out_shape, std::vector<std::size_t> index) {
    std::vector<T> out(index.size());
    const auto ad = a.data();
    for (std::size_t i = 0; i < index.size(); ++i) out[i] = index[i] == npos ? T(0) : ad[index[i]];
    const bool track = tracks<T>({&a});
    auto as = a.storage();
    return finish<T>(op, Tensor<T>(std::move(out_shape), std::move(out)), track,
                     [as, index = std::move(index)](Storage<T>& o) {
                         if (!as->requires_grad) return;
                         auto& g = as->grad_buffer();
                         for (std::size_t i = 0; i < index.size(); ++i)
                             if (index[i] != npos) g[index[i]] += o.grad[i];
                     });
}

}  // namespace detail

/// Non-overlapping P x P patches of an H0 x W0 x C image, flattened row-major
/// into a (H0/P * W0/P) x (P*P*C) matrix. Patch rows follow grid raster order;
/// within a patch, entries are ordered (row, column, channel).
template <class T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch) {
    detail::require_rank("patchify", image.shape(), 3);
    const std::size_t h0 = image.dim(0), w0 = image.dim(1), c = image.dim(2);
    if (patch == 0 || h0 % patch != 0 || w0 % patch != 0)
        throw ShapeError("patchify: image " + shape_str(image.shape()) + " not divisible by patch size " +
                         std::to_string(patch));
    const std::size_t gh = h0 / patch, gw = w0 / patch, width = patch * patch * c;
    std::vector<std::size_t> index(gh * gw * width);
    for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx)
            for (std::size_t py = 0; py < patch; ++py)
                for (std::size_t px = 0; px < patch; ++px)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const std::size_t row = gy * gw + gx;
                        const std::size_t col = (py * patch + px) * c + ch;
                        index[row * width + col] = ((gy * patch + py) * w0 + gx * patch + px) * c + ch;
                    }
    return detail::gather<T>("patchify", image, {gh * gw, width}, std::move(index));
}

/// 3x3 neighbourhoods with zero padding: H x W x C -> (H*W) x (9*C), columns
/// ordered (dy, dx, channel).
template <class T>
Tensor<T> im2col3x3(const Tensor<T>& x) {
    detail::require_rank("im2col3x3", x.shape(), 3);
    const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2), width = 9 * c;
    std::vector<std::size_t> index(h * w * width, detail::npos);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
                    const auto sx = static_cast<std::ptrdiff_t>(xx) + dx;
                    if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(h) ||
                        sx >= static_cast<std::ptrdiff_t>(w))
                        continue;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const std::size_t col = (static_cast<std::size_t>((dy + 1) * 3 + (dx + 1))) * c + ch;
                        index[(y * w + xx) * width + col] =
                            (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * c + ch;
                    }
                }
    return detail::gather<T>("im2col3x3", x, {h * w, width}, std::move(index));
}

/// Same-padded 3x3 convolution, channels-last. weight is (9*C_in) x C_out with
/// rows ordered like im2col3x3 columns.
template <class T>
Tensor<T> conv3x3(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    detail::require_rank("conv3x3", x.shape(), 3);
    if (weight.rank() != 2 || weight.dim(0) != 9 * x.dim(2))
        throw ShapeError("conv3x3: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
    const auto y = add_bias(matmul(im2col3x3(x), weight), bias);
    return reshape(y, {x.dim(0), x.dim(1), weight.dim(1)});
}

}  // namespace q2l
