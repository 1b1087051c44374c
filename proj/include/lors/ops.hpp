#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <unordered_set>

#include "lors/tensor.hpp"

namespace lors {

namespace detail {

inline Tensor make_result(Shape shape, std::vector<Tensor> parents) {
    auto n = std::make_shared<TensorNode>();
    n->data.assign(shape_numel(shape), 0.0);
    n->shape = std::move(shape);
    for (const Tensor& p : parents) {
        if (p.requires_grad()) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) {
        n->parents.reserve(parents.size());
        for (const Tensor& p : parents) n->parents.push_back(p.node());
    }
    return Tensor(std::move(n));
}

// C[m×n] (+)= A[m×k] · B[k×n]
inline void mm_nn(double* c, const double* a, const double* b, int m, int k, int n,
                  bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double av = arow[l];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
inline void mm_nt(double* c, const double* a, const double* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] += acc;
        }
    }
}

// C[k×n] += A[m×k]ᵀ · B[m×n]
inline void mm_tn(double* c, const double* a, const double* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        const double* brow = b + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double av = arow[l];
            if (av == 0.0) continue;
            double* crow = c + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops. Operand shapes must match, with two broadcast forms: a
// one-element rhs broadcasts everywhere, and a rhs whose shape is a trailing
// suffix of lhs broadcasts across the leading axes (bias-add pattern).
// ---------------------------------------------------------------------------

namespace detail {

enum class EwKind { kAdd, kSub };

inline Tensor add_like(const Tensor& a, const Tensor& b, EwKind kind) {
    const double sign = (kind == EwKind::kSub) ? -1.0 : 1.0;
    const bool scalar_b = b.numel() == 1;
    const bool suffix_b = !scalar_b && b.shape() != a.shape() && is_suffix(b.shape(), a.shape());
    if (a.shape() != b.shape() && !scalar_b && !suffix_b) {
        throw ShapeError("elementwise operands " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    Tensor out = make_result(a.shape(), {a, b});
    const std::size_t n = a.numel();
    const std::size_t bn = b.numel();
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.data();
    if (scalar_b) {
        const double bv = sign * bd[0];
        for (std::size_t i = 0; i < n; ++i) od[i] = ad[i] + bv;
    } else {
        for (std::size_t i = 0; i < n; ++i) od[i] = ad[i] + sign * bd[i % bn];
    }
    if (out.requires_grad()) {
        auto an = a.node();
        auto bn_ = b.node();
        out.node()->backprop = [an, bn_, sign](TensorNode& self) {
            const std::size_t n = self.data.size();
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) an->grad[i] += self.grad[i];
            }
            if (bn_->requires_grad) {
                bn_->ensure_grad();
                const std::size_t bn2 = bn_->data.size();
                for (std::size_t i = 0; i < n; ++i) bn_->grad[i % bn2] += sign * self.grad[i];
            }
        };
    }
    return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::add_like(a, b, detail::EwKind::kAdd);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::add_like(a, b, detail::EwKind::kSub);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    const bool scalar_a = a.numel() == 1 && b.numel() != 1;
    const Tensor& big = scalar_a ? b : a;
    const Tensor& small = scalar_a ? a : b;
    const bool scalar_small = small.numel() == 1;
    if (!scalar_small && a.shape() != b.shape()) {
        throw ShapeError("elementwise operands " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    Tensor out = detail::make_result(big.shape(), {a, b});
    const std::size_t n = big.numel();
    const auto& xd = big.data();
    const auto& yd = small.data();
    auto& od = out.data();
    if (scalar_small) {
        const double yv = yd[0];
        for (std::size_t i = 0; i < n; ++i) od[i] = xd[i] * yv;
    } else {
        for (std::size_t i = 0; i < n; ++i) od[i] = xd[i] * yd[i];
    }
    if (out.requires_grad()) {
        auto an = a.node();
        auto bn = b.node();
        out.node()->backprop = [an, bn](TensorNode& self) {
            const std::size_t n = self.data.size();
            auto accumulate = [&](const NodePtr& target, const NodePtr& other) {
                if (!target->requires_grad) return;
                target->ensure_grad();
                if (target->data.size() == n) {
                    if (other->data.size() == 1) {
                        const double ov = other->data[0];
                        for (std::size_t i = 0; i < n; ++i) target->grad[i] += self.grad[i] * ov;
                    } else {
                        for (std::size_t i = 0; i < n; ++i)
                            target->grad[i] += self.grad[i] * other->data[i];
                    }
                } else {  // scalar target: reduce
                    double acc = 0.0;
                    for (std::size_t i = 0; i < n; ++i) acc += self.grad[i] * other->data[i];
                    target->grad[0] += acc;
                }
            };
            accumulate(an, bn);
            accumulate(bn, an);
        };
    }
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out = detail::make_result(a.shape(), {a});
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
    if (out.requires_grad()) {
        auto an = a.node();
        out.node()->backprop = [an, c](TensorNode& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.data.size(); ++i) an->grad[i] += c * self.grad[i];
        };
    }
    return out;
}

/// relu(x) = max(x, 0); the subgradient at 0 is taken as 0.
inline Tensor relu(const Tensor& a) {
    Tensor out = detail::make_result(a.shape(), {a});
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    if (out.requires_grad()) {
        auto an = a.node();
        out.node()->backprop = [an](TensorNode& self) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.data.size(); ++i) {
                if (an->data[i] > 0.0) an->grad[i] += self.grad[i];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix product with an optional leading batch extent on either operand:
// (m,k)@(k,n), (B,m,k)@(k,n), (m,k)@(B,k,n), (B,m,k)@(B,k,n).
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if ((sa.size() != 2 && sa.size() != 3) || (sb.size() != 2 && sb.size() != 3)) {
        throw ShapeError("matmul expects rank-2/3 operands, got " + shape_str(sa) + " @ " +
                         shape_str(sb));
    }
    const int m = sa[sa.size() - 2], ka = sa[sa.size() - 1];
    const int kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
    const int batch_a = sa.size() == 3 ? sa[0] : 0;
    const int batch_b = sb.size() == 3 ? sb[0] : 0;
    if (ka != kb || (batch_a && batch_b && batch_a != batch_b)) {
        throw ShapeError("matmul shapes " + shape_str(sa) + " @ " + shape_str(sb));
    }
    const int batch = std::max({batch_a, batch_b, 1});
    Shape out_shape = (batch_a || batch_b) ? Shape{batch, m, n} : Shape{m, n};
    Tensor out = detail::make_result(std::move(out_shape), {a, b});

    const std::size_t a_step = batch_a ? static_cast<std::size_t>(m) * ka : 0;
    const std::size_t b_step = batch_b ? static_cast<std::size_t>(ka) * n : 0;
    const std::size_t c_step = static_cast<std::size_t>(m) * n;
    for (int t = 0; t < batch; ++t) {
        detail::mm_nn(out.data().data() + t * c_step, a.data().data() + t * a_step,
                      b.data().data() + t * b_step, m, ka, n, /*accumulate=*/false);
    }
    if (out.requires_grad()) {
        auto an = a.node();
        auto bn = b.node();
        out.node()->backprop = [an, bn, m, ka, n, batch, a_step, b_step, c_step](TensorNode& self) {
            for (int t = 0; t < batch; ++t) {
                const double* g = self.grad.data() + t * c_step;
                if (an->requires_grad) {
                    an->ensure_grad();
                    detail::mm_nt(an->grad.data() + t * a_step, g,
                                  bn->data.data() + t * b_step, m, n, ka);
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    detail::mm_tn(bn->grad.data() + t * b_step, an->data.data() + t * a_step, g,
                                  m, ka, n);
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization over the last axis, population variance.
// ---------------------------------------------------------------------------

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    if (x.rank() < 1 || x.extent(-1) == 0) {
        throw ShapeError("layer_norm input " + shape_str(x.shape()) + " has empty last axis");
    }
    const int width = x.extent(-1);
    if (gamma.shape() != Shape{width} || beta.shape() != Shape{width}) {
        throw ShapeError("layer_norm gamma " + shape_str(gamma.shape()) + " / beta " +
                         shape_str(beta.shape()) + " do not match last axis of " +
                         shape_str(x.shape()));
    }
    if (!(eps > 0.0)) throw ContractError("layer_norm eps must be positive");

    Tensor out = detail::make_result(x.shape(), {x, gamma, beta});
    const std::size_t rows = x.numel() / width;
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    const auto& xd = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xd.data() + r * width;
        double mean = 0.0;
        for (int c = 0; c < width; ++c) mean += row[c];
        mean /= width;
        double var = 0.0;
        for (int c = 0; c < width; ++c) {
            const double d = row[c] - mean;
            var += d * d;
        }
        var /= width;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        double* xh = xhat.data() + r * width;
        double* orow = out.data().data() + r * width;
        for (int c = 0; c < width; ++c) {
            xh[c] = (row[c] - mean) * inv;
            orow[c] = xh[c] * gamma.data()[c] + beta.data()[c];
        }
    }
    if (out.requires_grad()) {
        auto xn = x.node();
        auto gn = gamma.node();
        auto bn = beta.node();
        out.node()->backprop = [xn, gn, bn, width, rows, xhat = std::move(xhat),
                                inv_std = std::move(inv_std)](TensorNode& self) {
            if (xn->requires_grad) xn->ensure_grad();
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            std::vector<double> dxhat(width);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = self.grad.data() + r * width;
                const double* xh = xhat.data() + r * width;
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (int c = 0; c < width; ++c) {
                    dxhat[c] = g[c] * gn->data[c];
                    mean_dxhat += dxhat[c];
                    mean_dxhat_xhat += dxhat[c] * xh[c];
                    if (gn->requires_grad) gn->grad[c] += g[c] * xh[c];
                    if (bn->requires_grad) bn->grad[c] += g[c];
                }
                mean_dxhat /= width;
                mean_dxhat_xhat /= width;
                if (xn->requires_grad) {
                    double* dx = xn->grad.data() + r * width;
                    const double inv = inv_std[r];
                    for (int c = 0; c < width; ++c) {
                        dx[c] += inv * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
                    }
                }
            }
        };
    }
    return out;
}

/// Numerically stable softmax over the last axis.
inline Tensor softmax(const Tensor& x) {
    const int width = x.extent(-1);
    Tensor out = detail::make_result(x.shape(), {x});
    const std::size_t rows = x.numel() / width;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * width;
        double* orow = out.data().data() + r * width;
        double mx = row[0];
        for (int c = 1; c < width; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < width; ++c) {
            orow[c] = std::exp(row[c] - mx);
            sum += orow[c];
        }
        for (int c = 0; c < width; ++c) orow[c] /= sum;
    }
    if (out.requires_grad()) {
        auto xn = x.node();
        out.node()->backprop = [xn, width, rows](TensorNode& self) {
            xn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* s = self.data.data() + r * width;
                const double* g = self.grad.data() + r * width;
                double dot = 0.0;
                for (int c = 0; c < width; ++c) dot += g[c] * s[c];
                double* dx = xn->grad.data() + r * width;
                for (int c = 0; c < width; ++c) dx[c] += s[c] * (g[c] - dot);
            }
        };
    }
    return out;
}

/// Mean softmax cross-entropy of logits[batch×classes] against integer labels.
inline Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) {
        throw ShapeError("cross_entropy_logits expects rank-2 logits, got " +
                         shape_str(logits.shape()));
    }
    const int batch = logits.extent(0);
    const int classes = logits.extent(1);
    if (static_cast<int>(labels.size()) != batch) {
        throw ShapeError("cross_entropy_logits: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_str(logits.shape()));
    }
    Tensor out = detail::make_result({1}, {logits});
    std::vector<double> probs(logits.numel());
    double loss = 0.0;
    for (int b = 0; b < batch; ++b) {
        if (labels[b] < 0 || labels[b] >= classes) {
            throw IndexError("label " + std::to_string(labels[b]) + " out of range for " +
                             std::to_string(classes) + " classes");
        }
        const double* row = logits.data().data() + static_cast<std::size_t>(b) * classes;
        double* prow = probs.data() + static_cast<std::size_t>(b) * classes;
        double mx = row[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < classes; ++c) {
            prow[c] = std::exp(row[c] - mx);
            sum += prow[c];
        }
        for (int c = 0; c < classes; ++c) prow[c] /= sum;
        loss += std::log(sum) + mx - row[labels[b]];
    }
    out.data()[0] = loss / batch;
    if (out.requires_grad()) {
        auto ln = logits.node();
        out.node()->backprop = [ln, labels, batch, classes,
                                probs = std::move(probs)](TensorNode& self) {
            ln->ensure_grad();
            const double g = self.grad[0] / batch;
            for (int b = 0; b < batch; ++b) {
                double* dl = ln->grad.data() + static_cast<std::size_t>(b) * classes;
                const double* prow = probs.data() + static_cast<std::size_t>(b) * classes;
                for (int c = 0; c < classes; ++c) {
                    dl[c] += g * (prow[c] - (c == labels[b] ? 1.0 : 0.0));
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor reduce_axis(const Tensor& x, int axis, bool mean) {
    const int r = x.rank();
    if (axis < 0 || axis >= r) {
        throw IndexError("reduction axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(x.shape()));
    }
    const Shape& s = x.shape();
    Shape out_shape;
    for (int i = 0; i < r; ++i) {
        if (i != axis) out_shape.push_back(s[i]);
    }
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < r; ++i) inner *= s[i];
    const int len = s[axis];
    Tensor out = make_result(std::move(out_shape), {x});
    const double norm = mean ? 1.0 / len : 1.0;
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            double acc = 0.0;
            for (int l = 0; l < len; ++l) acc += x.data()[(o * len + l) * inner + i];
            out.data()[o * inner + i] = acc * norm;
        }
    }
    if (out.requires_grad()) {
        auto xn = x.node();
        out.node()->backprop = [xn, outer, inner, len, norm](TensorNode& self) {
            xn->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) {
                    const double g = self.grad[o * inner + i] * norm;
                    for (int l = 0; l < len; ++l) xn->grad[(o * len + l) * inner + i] += g;
                }
            }
        };
    }
    return out;
}

}  // namespace detail

inline Tensor sum_axis(const Tensor& x, int axis) { return detail::reduce_axis(x, axis, false); }
inline Tensor mean_axis(const Tensor& x, int axis) { return detail::reduce_axis(x, axis, true); }

inline Tensor sum_all(const Tensor& x) {
    Tensor out = detail::make_result({1}, {x});
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    out.data()[0] = acc;
    if (out.requires_grad()) {
        auto xn = x.node();
        out.node()->backprop = [xn](TensorNode& self) {
            xn->ensure_grad();
            const double g = self.grad[0];
            for (double& gv : xn->grad) gv += g;
        };
    }
    return out;
}

/// Mean squared error between same-shaped tensors, as a scalar.
inline Tensor mse(const Tensor& a, const Tensor& b) {
    Tensor d = sub(a, b);
    return scale(sum_all(mul(d, d)), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------
// Shape manipulation. All ops are value-semantic: outputs own their data.
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel()) {
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                         " changes element count");
    }
    Tensor out = detail::make_result(std::move(new_shape), {x});
    out.data() = x.data();
    if (out.requires_grad()) {
        auto xn = x.node();
        out.node()->backprop = [xn](TensorNode& self) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
        };
    }
    return out;
}

inline Tensor flatten(const Tensor& x) {
    return reshape(x, {static_cast<int>(x.numel())});
}

inline Tensor permute(const Tensor& x, const std::vector<int>& axes) {
    const int r = x.rank();
    if (static_cast<int>(axes.size()) != r) {
        throw ShapeError("permute axes " + std::to_string(axes.size()) + " vs rank " +
                         std::to_string(r));
    }
    std::vector<bool> seen(r, false);
    for (int a : axes) {
        if (a < 0 || a >= r || seen[a]) throw ShapeError("permute axes are not a permutation");
        seen[a] = true;
    }
    const Shape& s = x.shape();
    Shape out_shape(r);
    for (int i = 0; i < r; ++i) out_shape[i] = s[axes[i]];

    std::vector<std::size_t> in_strides(r, 1), out_strides(r, 1);
    for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * s[i + 1];
    for (int i = r - 2; i >= 0; --i) out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
    // stride in the input for each output axis
    std::vector<std::size_t> gather(r);
    for (int i = 0; i < r; ++i) gather[i] = in_strides[axes[i]];

    Tensor out = detail::make_result(out_shape, {x});
    const std::size_t n = x.numel();
    std::vector<int> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
        out.data()[flat] = x.data()[src];
        for (int d = r - 1; d >= 0; --d) {
            if (++idx[d] < out_shape[d]) {
                src += gather[d];
                break;
            }
            idx[d] = 0;
            src -= gather[d] * (out_shape[d] - 1);
        }
    }
    if (out.requires_grad()) {
        auto xn = x.node();
        out.node()->backprop = [xn, out_shape, gather, r, n](TensorNode& self) {
            xn->ensure_grad();
            std::vector<int> idx(r, 0);
            std::size_t src = 0;
            for (std::size_t flat = 0; flat < n; ++flat) {
                xn->grad[src] += self.grad[flat];
                for (int d = r - 1; d >= 0; --d) {
                    if (++idx[d] < out_shape[d]) {
                        src += gather[d];
                        break;
                    }
                    idx[d] = 0;
                    src -= gather[d] * (out_shape[d] - 1);
                }
            }
        };
    }
    return out;
}

/// Swap the last two axes (plain 2-D transpose for matrices; batched for
/// higher ranks).
inline Tensor transpose2d(const Tensor& x) {
    const int r = x.rank();
    if (r < 2) {
        throw ShapeError("transpose2d needs rank >= 2, got " + shape_str(x.shape()));
    }
    std::vector<int> axes(r);
    for (int i = 0; i < r; ++i) axes[i] = i;
    std::swap(axes[r - 2], axes[r - 1]);
    return permute(x, axes);
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const int r = parts[0].rank();
    if (axis < 0 || axis >= r) {
        throw IndexError("concat axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(parts[0].shape()));
    }
    Shape out_shape = parts[0].shape();
    for (std::size_t p = 1; p < parts.size(); ++p) {
        const Shape& s = parts[p].shape();
        if (static_cast<int>(s.size()) != r) {
            throw ShapeError("concat rank mismatch: " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(s));
        }
        for (int i = 0; i < r; ++i) {
            if (i != axis && s[i] != out_shape[i]) {
                throw ShapeError("concat extents " + shape_str(parts[0].shape()) + " vs " +
                                 shape_str(s) + " differ off axis " + std::to_string(axis));
            }
        }
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[i];
    for (int i = axis + 1; i < r; ++i) inner *= out_shape[i];

    Tensor out = detail::make_result(out_shape, parts);
    std::size_t offset = 0;  // in units of (axis block × inner)
    std::vector<std::size_t> part_offsets(parts.size());
    const std::size_t out_row = static_cast<std::size_t>(out_shape[axis]) * inner;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        part_offsets[p] = offset;
        const std::size_t block = static_cast<std::size_t>(parts[p].shape()[axis]) * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(parts[p].data().data() + o * block, block,
                        out.data().data() + o * out_row + offset);
        }
        offset += block;
    }
    if (out.requires_grad()) {
        std::vector<NodePtr> nodes;
        std::vector<std::size_t> blocks;
        for (const Tensor& p : parts) {
            nodes.push_back(p.node());
            blocks.push_back(static_cast<std::size_t>(p.shape()[axis]) * inner);
        }
        out.node()->backprop = [nodes, blocks, part_offsets, outer, out_row](TensorNode& self) {
            for (std::size_t p = 0; p < nodes.size(); ++p) {
                if (!nodes[p]->requires_grad) continue;
                nodes[p]->ensure_grad();
                for (std::size_t o = 0; o < outer; ++o) {
                    const double* g = self.grad.data() + o * out_row + part_offsets[p];
                    double* dst = nodes[p]->grad.data() + o * blocks[p];
                    for (std::size_t i = 0; i < blocks[p]; ++i) dst[i] += g[i];
                }
            }
        };
    }
    return out;
}

/// Contiguous slice [start, start+len) along an axis.
inline Tensor narrow(const Tensor& x, int axis, int start, int len) {
    const int r = x.rank();
    if (axis < 0 || axis >= r) {
        throw IndexError("narrow axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(x.shape()));
    }
    const Shape& s = x.shape();
    if (start < 0 || len < 0 || start + len > s[axis]) {
        throw IndexError("narrow [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") exceeds extent " +
                         std::to_string(s[axis]));
    }
    Shape out_shape = s;
    out_shape[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < r; ++i) inner *= s[i];
    const std::size_t in_row = static_cast<std::size_t>(s[axis]) * inner;
    const std::size_t out_row = static_cast<std::size_t>(len) * inner;
    const std::size_t skip = static_cast<std::size_t>(start) * inner;

    Tensor out = detail::make_result(out_shape, {x});
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(x.data().data() + o * in_row + skip, out_row,
                    out.data().data() + o * out_row);
    }
    if (out.requires_grad()) {
        auto xn = x.node();
        out.node()->backprop = [xn, outer, in_row, out_row, skip](TensorNode& self) {
            xn->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
                const double* g = self.grad.data() + o * out_row;
                double* dst = xn->grad.data() + o * in_row + skip;
                for (std::size_t i = 0; i < out_row; ++i) dst[i] += g[i];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reverse pass.
// ---------------------------------------------------------------------------

/// Execution record of the ops reachable from a root, in topological order
/// (every node's inputs precede it).
struct Graph {
    std::vector<TensorNode*> order;

    static Graph record(const Tensor& root) {
        Graph g;
        std::unordered_set<TensorNode*> visited;
        struct Frame {
            TensorNode* node;
            std::size_t next_parent;
        };
        std::vector<Frame> stack;
        TensorNode* r = root.node().get();
        if (!r->requires_grad) return g;
        visited.insert(r);
        stack.push_back({r, 0});
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_parent < f.node->parents.size()) {
                TensorNode* p = f.node->parents[f.next_parent++].get();
                if (p->requires_grad && visited.insert(p).second) {
                    stack.push_back({p, 0});
                }
            } else {
                g.order.push_back(f.node);
                stack.pop_back();
            }
        }
        return g;
    }
};

/// Populates grad on every requires_grad tensor reachable from a scalar loss.
/// Gradients accumulate additively; callers zero parameter grads between
/// backward passes.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " +
                            shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;
    Graph g = Graph::record(loss);
    for (TensorNode* n : g.order) n->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop(**it);
    }
}

}  // namespace lors
