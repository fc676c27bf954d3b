#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsa/common.hpp"
#include "dsa/error.hpp"
#include "dsa/tensor.hpp"

namespace dsa {

namespace detail {

template <typename S>
MatMap<S> value_mat(TensorNode<S>& n) {
    return MatMap<S>(n.value.data(), n.shape[0], n.shape[1]);
}

template <typename S>
MatMap<S> grad_mat(TensorNode<S>& n) {
    return MatMap<S>(n.grad.data(), n.shape[0], n.shape[1]);
}

template <typename S>
VecMap<S> value_vec(TensorNode<S>& n) {
    return VecMap<S>(n.value.data(), n.shape[0]);
}

template <typename S>
VecMap<S> grad_vec(TensorNode<S>& n) {
    return VecMap<S>(n.grad.data(), n.shape[0]);
}

template <typename S>
MatMap<S> value_slice(TensorNode<S>& n, Index j) {
    return MatMap<S>(n.value.data() + j * n.shape[1] * n.shape[2], n.shape[1], n.shape[2]);
}

template <typename S>
MatMap<S> grad_slice(TensorNode<S>& n, Index j) {
    return MatMap<S>(n.grad.data() + j * n.shape[1] * n.shape[2], n.shape[1], n.shape[2]);
}

// Wires the output into the graph when any input is tracked and a tape is
// recording; otherwise the op is a pure value computation.
template <typename S, typename Fn>
void attach(Tensor<S>& out, Tape<S>* tape, std::vector<Tensor<S>> inputs, Fn&& backward_fn) {
    if (!tape) return;
    bool tracked = false;
    for (const auto& in : inputs) tracked = tracked || in.requires_grad();
    if (!tracked) return;
    auto node = out.node();
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::forward<Fn>(backward_fn);
    tape->record(node);
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape()) throw ShapeError(std::string(op) + ": operand shapes differ");
}

// Strided view of kernel tap t inside a [q x p x k] weight tensor.
template <typename S>
using TapMap = Eigen::Map<MatRM<S>, Eigen::Unaligned, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
template <typename S>
using ConstTapMap = Eigen::Map<const MatRM<S>, Eigen::Unaligned, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;

template <typename S>
ConstTapMap<S> kernel_tap(const S* data, Index q, Index p, Index k, Index t) {
    return ConstTapMap<S>(data + t, q, p, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(p * k, k));
}

template <typename S>
TapMap<S> kernel_tap(S* data, Index q, Index p, Index k, Index t) {
    return TapMap<S>(data + t, q, p, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(p * k, k));
}

// Strided view of column j in a row-major [n x m] matrix.
template <typename S>
using ColMap = Eigen::Map<Vec<S>, Eigen::Unaligned, Eigen::InnerStride<Eigen::Dynamic>>;
template <typename S>
using ConstColMap = Eigen::Map<const Vec<S>, Eigen::Unaligned, Eigen::InnerStride<Eigen::Dynamic>>;

template <typename S>
ConstColMap<S> rm_col(const S* data, Index n, Index m, Index j) {
    return ConstColMap<S>(data + j, n, Eigen::InnerStride<Eigen::Dynamic>(m));
}

template <typename S>
ColMap<S> rm_col(S* data, Index n, Index m, Index j) {
    return ColMap<S>(data + j, n, Eigen::InnerStride<Eigen::Dynamic>(m));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
    detail::check_same_shape(a, b, "add");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const Index n = a.numel();
    for (Index i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    detail::attach(out, tape, {a, b}, [](TensorNode<S>& self) {
        for (int p = 0; p < 2; ++p) {
            auto& par = *self.parents[static_cast<std::size_t>(p)];
            if (!par.requires_grad) continue;
            for (std::size_t i = 0; i < self.grad.size(); ++i) par.grad[i] += self.grad[i];
        }
    });
    return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
    detail::check_same_shape(a, b, "sub");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const Index n = a.numel();
    for (Index i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    detail::attach(out, tape, {a, b}, [](TensorNode<S>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (pa.requires_grad) pa.grad[i] += self.grad[i];
            if (pb.requires_grad) pb.grad[i] -= self.grad[i];
        }
    });
    return out;
}

template <typename S>
Tensor<S> hadamard(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
    detail::check_same_shape(a, b, "hadamard");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const Index n = a.numel();
    for (Index i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    detail::attach(out, tape, {a, b}, [](TensorNode<S>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.value[i];
            if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.value[i];
        }
    });
    return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor, Tape<S>* tape = nullptr) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const Index n = a.numel();
    for (Index i = 0; i < n; ++i) out.data()[i] = factor * a.data()[i];
    detail::attach(out, tape, {a}, [factor](TensorNode<S>& self) {
        auto& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += factor * self.grad[i];
    });
    return out;
}

template <typename S>
Tensor<S> abs_op(const Tensor<S>& a, Tape<S>* tape = nullptr) {
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    const Index n = a.numel();
    for (Index i = 0; i < n; ++i) out.data()[i] = std::abs(a.data()[i]);
    detail::attach(out, tape, {a}, [](TensorNode<S>& self) {
        auto& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const S x = pa.value[i];
            const S sgn = x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0));
            pa.grad[i] += sgn * self.grad[i];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Linear maps
// ---------------------------------------------------------------------------

// out[:,i] = W x[:,i] + b
template <typename S>
Tensor<S> affine(const Tensor<S>& x, const Tensor<S>& W, const Tensor<S>& b, Tape<S>* tape = nullptr) {
    if (x.rank() != 2 || W.rank() != 2 || b.rank() != 1) throw ShapeError("affine: expects x[pxn], W[qxp], b[q]");
    const Index p = x.rows(), n = x.cols(), q = W.rows();
    if (W.cols() != p) throw ShapeError("affine: W columns must match x rows");
    if (b.size() != q) throw ShapeError("affine: bias length must match W rows");
    Tensor<S> out = Tensor<S>::zeros({q, n});
    out.mat().noalias() = W.mat() * x.mat();
    out.mat().colwise() += b.vec();
    detail::attach(out, tape, {x, W, b}, [](TensorNode<S>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        auto dy = detail::grad_mat(self);
        if (px.requires_grad)
            detail::grad_mat(px).noalias() += detail::value_mat(pw).transpose() * dy;
        if (pw.requires_grad)
            detail::grad_mat(pw).noalias() += dy * detail::value_mat(px).transpose();
        if (pb.requires_grad) detail::grad_vec(pb) += dy.rowwise().sum();
    });
    return out;
}

// Same-length 1D convolution over positions with zero padding outside the
// sequence. K is [q x p x k] with odd k.
template <typename S>
Tensor<S> conv1d_same(const Tensor<S>& x, const Tensor<S>& K, const Tensor<S>& b, Tape<S>* tape = nullptr) {
    if (x.rank() != 2 || K.rank() != 3 || b.rank() != 1)
        throw ShapeError("conv1d_same: expects x[pxn], K[qxpxk], b[q]");
    const Index p = x.rows(), n = x.cols();
    const Index q = K.dim(0), k = K.dim(2);
    if (k % 2 == 0) throw ConfigError("conv1d_same: kernel size must be odd");
    if (K.dim(1) != p) throw ShapeError("conv1d_same: kernel input channels must match x rows");
    if (b.size() != q) throw ShapeError("conv1d_same: bias length must match kernel output channels");
    if (n < 1) throw EmptySequenceError("conv1d_same: input has no positions");

    const Index half = k / 2;
    Tensor<S> out = Tensor<S>::zeros({q, n});
    auto y = out.mat();
    y.colwise() += b.vec();
    for (Index t = 0; t < k; ++t) {
        const Index offset = t - half;
        const Index i0 = std::max<Index>(0, -offset);
        const Index i1 = std::min<Index>(n, n - offset);
        if (i1 <= i0) continue;
        const Index len = i1 - i0;
        auto tap = detail::kernel_tap(K.data(), q, p, k, t);
        y.middleCols(i0, len).noalias() += tap * x.mat().middleCols(i0 + offset, len);
    }
    detail::attach(out, tape, {x, K, b}, [p, q, k, n, half](TensorNode<S>& self) {
        auto& px = *self.parents[0];
        auto& pk = *self.parents[1];
        auto& pb = *self.parents[2];
        auto dy = detail::grad_mat(self);
        auto xv = detail::value_mat(px);
        for (Index t = 0; t < k; ++t) {
            const Index offset = t - half;
            const Index i0 = std::max<Index>(0, -offset);
            const Index i1 = std::min<Index>(n, n - offset);
            if (i1 <= i0) continue;
            const Index len = i1 - i0;
            if (px.requires_grad) {
                auto tap = detail::kernel_tap(static_cast<const S*>(pk.value.data()), q, p, k, t);
                detail::grad_mat(px).middleCols(i0 + offset, len).noalias() +=
                    tap.transpose() * dy.middleCols(i0, len);
            }
            if (pk.requires_grad) {
                auto dtap = detail::kernel_tap(pk.grad.data(), q, p, k, t);
                dtap.noalias() += dy.middleCols(i0, len) * xv.middleCols(i0 + offset, len).transpose();
            }
        }
        if (pb.requires_grad) detail::grad_vec(pb) += dy.rowwise().sum();
    });
    return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& x, S slope, Tape<S>* tape = nullptr) {
    if (!(slope > S(0) && slope < S(1))) throw ConfigError("leaky_relu: slope must lie in (0,1)");
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const Index n = x.numel();
    for (Index i = 0; i < n; ++i) {
        const S v = x.data()[i];
        out.data()[i] = v > S(0) ? v : slope * v;
    }
    detail::attach(out, tape, {x}, [slope](TensorNode<S>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            px.grad[i] += self.grad[i] * (px.value[i] > S(0) ? S(1) : slope);
    });
    return out;
}

template <typename S>
Tensor<S> tanh_op(const Tensor<S>& x, Tape<S>* tape = nullptr) {
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    const Index n = x.numel();
    // std::tanh saturates to exactly +-1; keep outputs in the open interval.
    const S hi = std::nextafter(S(1), S(0));
    for (Index i = 0; i < n; ++i) {
        S v = std::tanh(x.data()[i]);
        if (v >= S(1)) v = hi;
        if (v <= S(-1)) v = -hi;
        out.data()[i] = v;
    }
    detail::attach(out, tape, {x}, [](TensorNode<S>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const S z = self.value[i];
            px.grad[i] += self.grad[i] * (S(1) - z * z);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Masked softmax over sequence positions
// ---------------------------------------------------------------------------

// q is [n x m] (positions x heads). Masked positions receive weight exactly
// zero, equivalent to substituting -inf logits before normalization.
template <typename S>
Tensor<S> softmax_over_positions(const Tensor<S>& q, const BoolVec& mask, Tape<S>* tape = nullptr) {
    if (q.rank() != 2) throw ShapeError("softmax_over_positions: expects [n x m] logits");
    const Index n = q.rows(), m = q.cols();
    if (mask.size() != n) throw ShapeError("softmax_over_positions: mask length must match positions");
    if (count_valid(mask) == 0) throw EmptySequenceError("softmax_over_positions: all positions are masked");

    Tensor<S> out = Tensor<S>::zeros({n, m});
    auto qv = q.mat();
    auto a = out.mat();
    for (Index j = 0; j < m; ++j) {
        S mx = -std::numeric_limits<S>::infinity();
        for (Index i = 0; i < n; ++i)
            if (mask[i]) mx = std::max(mx, qv(i, j));
        S denom = S(0);
        for (Index i = 0; i < n; ++i) {
            const S e = mask[i] ? std::exp(qv(i, j) - mx) : S(0);
            a(i, j) = e;
            denom += e;
        }
        for (Index i = 0; i < n; ++i) a(i, j) /= denom;
    }
    BoolVec saved_mask = mask;
    detail::attach(out, tape, {q}, [saved_mask](TensorNode<S>& self) {
        auto& pq = *self.parents[0];
        if (!pq.requires_grad) return;
        auto a = detail::value_mat(self);
        auto dy = detail::grad_mat(self);
        auto dq = detail::grad_mat(pq);
        const Index n = a.rows(), m = a.cols();
        for (Index j = 0; j < m; ++j) {
            S dot = S(0);
            for (Index i = 0; i < n; ++i)
                if (saved_mask[i]) dot += a(i, j) * dy(i, j);
            for (Index i = 0; i < n; ++i)
                if (saved_mask[i]) dq(i, j) += a(i, j) * (dy(i, j) - dot);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Dropout (inverted: survivors rescaled, evaluation is the identity)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> dropout(const Tensor<S>& x, S rate, Mode mode, Rng* rng, Tape<S>* tape = nullptr) {
    if (!(rate >= S(0) && rate < S(1))) throw ConfigError("dropout: rate must lie in [0,1)");
    if (mode == Mode::kEval || rate == S(0)) return x;
    if (!rng) throw ContractError("dropout: training mode requires a generator");

    const S keep = S(1) - rate;
    const S inv_keep = S(1) / keep;
    auto keep_mask = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(x.numel()));
    std::bernoulli_distribution survive(static_cast<double>(keep));
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    for (Index i = 0; i < x.numel(); ++i) {
        const bool on = survive(*rng);
        (*keep_mask)[static_cast<std::size_t>(i)] = on ? 1 : 0;
        out.data()[i] = on ? x.data()[i] * inv_keep : S(0);
    }
    detail::attach(out, tape, {x}, [keep_mask, inv_keep](TensorNode<S>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if ((*keep_mask)[i]) px.grad[i] += self.grad[i] * inv_keep;
    });
    return out;
}

template <typename S>
Tensor<S> dropout_train(const Tensor<S>& x, S rate, Rng& rng, Tape<S>* tape = nullptr) {
    return dropout(x, rate, Mode::kTrain, &rng, tape);
}

// ---------------------------------------------------------------------------
// Column L2 normalization
// ---------------------------------------------------------------------------

// Columns with norm below eps pass through unchanged (zero-padded positions).
template <typename S>
Tensor<S> l2_normalize_columns(const Tensor<S>& x, S eps, Tape<S>* tape = nullptr) {
    if (x.rank() != 2) throw ShapeError("l2_normalize_columns: expects a matrix");
    const Index n = x.cols();
    auto norms = std::make_shared<std::vector<S>>(static_cast<std::size_t>(n));
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    for (Index i = 0; i < n; ++i) {
        const S norm = x.mat().col(i).norm();
        (*norms)[static_cast<std::size_t>(i)] = norm;
        if (norm < eps)
            out.mat().col(i) = x.mat().col(i);
        else
            out.mat().col(i) = x.mat().col(i) / norm;
    }
    detail::attach(out, tape, {x}, [norms, eps](TensorNode<S>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        auto y = detail::value_mat(self);
        auto dy = detail::grad_mat(self);
        auto dx = detail::grad_mat(px);
        for (Index i = 0; i < y.cols(); ++i) {
            const S norm = (*norms)[static_cast<std::size_t>(i)];
            if (norm < eps) {
                dx.col(i) += dy.col(i);
            } else {
                const S along = y.col(i).dot(dy.col(i));
                dx.col(i) += (dy.col(i) - y.col(i) * along) / norm;
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Batch normalization over features
// ---------------------------------------------------------------------------

template <typename S>
struct BatchNormState {
    Vec<S> running_mean;
    Vec<S> running_var;

    BatchNormState() = default;
    explicit BatchNormState(Index features)
        : running_mean(Vec<S>::Zero(features)), running_var(Vec<S>::Ones(features)) {}
};

// x is [features x batch]. Train mode standardizes by batch statistics and
// updates the running estimates; eval mode uses the running estimates.
template <typename S>
Tensor<S> batch_norm_1d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                        BatchNormState<S>& state, Mode mode, S momentum, S eps, Tape<S>* tape = nullptr) {
    if (x.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1)
        throw ShapeError("batch_norm_1d: expects x[fxB], gamma[f], beta[f]");
    const Index f = x.rows(), batch = x.cols();
    if (gamma.size() != f || beta.size() != f) throw ShapeError("batch_norm_1d: scale/shift length must match features");
    if (state.running_mean.size() != f || state.running_var.size() != f)
        throw ShapeError("batch_norm_1d: running statistics length must match features");

    Tensor<S> out = Tensor<S>::zeros({f, batch});
    if (mode == Mode::kTrain) {
        if (batch < 2) throw BatchSizeError("batch_norm_1d: training mode requires batch size >= 2");
        Vec<S> mu = x.mat().rowwise().mean();
        MatRM<S> centered = x.mat().colwise() - mu;
        Vec<S> var = centered.array().square().rowwise().mean();
        auto inv_std = std::make_shared<Vec<S>>((var.array() + eps).rsqrt().matrix());
        auto xhat = std::make_shared<MatRM<S>>(centered.array().colwise() * inv_std->array());
        out.mat() = (xhat->array().colwise() * gamma.vec().array()).colwise() + beta.vec().array();

        state.running_mean = (S(1) - momentum) * state.running_mean + momentum * mu;
        const S unbias = static_cast<S>(batch) / static_cast<S>(batch - 1);
        state.running_var = (S(1) - momentum) * state.running_var + momentum * (var * unbias);

        detail::attach(out, tape, {x, gamma, beta}, [xhat, inv_std](TensorNode<S>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            auto dy = detail::grad_mat(self);
            const Index batch_n = dy.cols();
            if (pg.requires_grad)
                detail::grad_vec(pg) += (dy.array() * xhat->array()).rowwise().sum().matrix();
            if (pb.requires_grad) detail::grad_vec(pb) += dy.rowwise().sum();
            if (px.requires_grad) {
                auto gv = detail::value_vec(pg);
                MatRM<S> dxhat = dy.array().colwise() * gv.array();
                Vec<S> mean_dxhat = dxhat.rowwise().mean();
                Vec<S> mean_dxhat_xhat = (dxhat.array() * xhat->array()).rowwise().mean().matrix();
                auto dx = detail::grad_mat(px);
                for (Index b = 0; b < batch_n; ++b)
                    dx.col(b) += (inv_std->array() *
                                  (dxhat.col(b).array() - mean_dxhat.array() -
                                   xhat->col(b).array() * mean_dxhat_xhat.array()))
                                     .matrix();
            }
        });
    } else {
        auto rinv = std::make_shared<Vec<S>>((state.running_var.array() + eps).rsqrt().matrix());
        auto xhat = std::make_shared<MatRM<S>>((x.mat().colwise() - state.running_mean).array().colwise() *
                                               rinv->array());
        out.mat() = (xhat->array().colwise() * gamma.vec().array()).colwise() + beta.vec().array();
        detail::attach(out, tape, {x, gamma, beta}, [xhat, rinv](TensorNode<S>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            auto dy = detail::grad_mat(self);
            if (pg.requires_grad)
                detail::grad_vec(pg) += (dy.array() * xhat->array()).rowwise().sum().matrix();
            if (pb.requires_grad) detail::grad_vec(pb) += dy.rowwise().sum();
            if (px.requires_grad) {
                auto gv = detail::value_vec(pg);
                detail::grad_mat(px) += (dy.array().colwise() * (gv.array() * rinv->array())).matrix();
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<Index> shape, Tape<S>* tape = nullptr) {
    Tensor<S> out = Tensor<S>::from(std::move(shape), x.values());
    if (out.numel() != x.numel()) throw ShapeError("reshape: element count must be preserved");
    detail::attach(out, tape, {x}, [](TensorNode<S>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
    });
    return out;
}

// Vertical concatenation of vectors, or of matrices with equal column counts.
template <typename S>
Tensor<S> concat_rows(std::span<const Tensor<S>> parts, Tape<S>* tape = nullptr) {
    if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
    const int rank = parts.front().rank();
    if (rank != 1 && rank != 2) throw ShapeError("concat_rows: expects vectors or matrices");
    const Index cols = rank == 2 ? parts.front().cols() : 1;
    Index total = 0;
    for (const auto& part : parts) {
        if (part.rank() != rank) throw ShapeError("concat_rows: mixed ranks");
        if (rank == 2 && part.cols() != cols) throw ShapeError("concat_rows: column counts differ");
        total += part.dim(0);
    }
    Tensor<S> out = rank == 2 ? Tensor<S>::zeros({total, cols}) : Tensor<S>::zeros({total});
    Index row = 0;
    for (const auto& part : parts) {
        std::copy(part.data(), part.data() + part.numel(), out.data() + row * cols);
        row += part.dim(0);
    }
    std::vector<Tensor<S>> inputs(parts.begin(), parts.end());
    detail::attach(out, tape, inputs, [cols](TensorNode<S>& self) {
        Index row = 0;
        for (auto& parent : self.parents) {
            const Index rows_p = parent->shape[0];
            const Index count = rows_p * cols;
            if (parent->requires_grad) {
                const S* src = self.grad.data() + row * cols;
                for (Index i = 0; i < count; ++i) parent->grad[static_cast<std::size_t>(i)] += src[i];
            }
            row += rows_p;
        }
    });
    return out;
}

template <typename S>
Tensor<S> concat_rows(std::initializer_list<Tensor<S>> parts, Tape<S>* tape = nullptr) {
    std::vector<Tensor<S>> v(parts);
    return concat_rows(std::span<const Tensor<S>>(v), tape);
}

// Stacks vectors of length d as the columns of a [d x B] matrix.
template <typename S>
Tensor<S> hstack_columns(std::span<const Tensor<S>> columns, Tape<S>* tape = nullptr) {
    if (columns.empty()) throw ShapeError("hstack_columns: nothing to stack");
    const Index d = columns.front().size();
    const Index batch = static_cast<Index>(columns.size());
    Tensor<S> out = Tensor<S>::zeros({d, batch});
    for (Index b = 0; b < batch; ++b) {
        if (columns[static_cast<std::size_t>(b)].size() != d)
            throw ShapeError("hstack_columns: vector lengths differ");
        out.mat().col(b) = columns[static_cast<std::size_t>(b)].vec();
    }
    std::vector<Tensor<S>> inputs(columns.begin(), columns.end());
    detail::attach(out, tape, inputs, [](TensorNode<S>& self) {
        auto dy = detail::grad_mat(self);
        for (Index b = 0; b < dy.cols(); ++b) {
            auto& parent = *self.parents[static_cast<std::size_t>(b)];
            if (parent.requires_grad) detail::grad_vec(parent) += dy.col(b);
        }
    });
    return out;
}

// Stacks m matrices [d x n] into a [m x d x n] tensor.
template <typename S>
Tensor<S> stack_heads(std::span<const Tensor<S>> heads, Tape<S>* tape = nullptr) {
    if (heads.empty()) throw ShapeError("stack_heads: nothing to stack");
    const Index d = heads.front().rows(), n = heads.front().cols();
    const Index m = static_cast<Index>(heads.size());
    Tensor<S> out = Tensor<S>::zeros({m, d, n});
    for (Index j = 0; j < m; ++j) {
        const auto& h = heads[static_cast<std::size_t>(j)];
        if (h.rows() != d || h.cols() != n) throw ShapeError("stack_heads: head shapes differ");
        std::copy(h.data(), h.data() + h.numel(), out.data() + j * d * n);
    }
    std::vector<Tensor<S>> inputs(heads.begin(), heads.end());
    detail::attach(out, tape, inputs, [](TensorNode<S>& self) {
        const Index m = self.shape[0];
        for (Index j = 0; j < m; ++j) {
            auto& parent = *self.parents[static_cast<std::size_t>(j)];
            if (parent.requires_grad) detail::grad_mat(parent) += detail::grad_slice(self, j);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Per-head contractions used by the routing loop
// ---------------------------------------------------------------------------

// s[j,:] = sum_i attn[i,j] * xhat[j,:,i];   xhat [m x d x n], attn [n x m].
template <typename S>
Tensor<S> head_weighted_sum(const Tensor<S>& xhat, const Tensor<S>& attn, Tape<S>* tape = nullptr) {
    if (xhat.rank() != 3 || attn.rank() != 2) throw ShapeError("head_weighted_sum: expects xhat[mxdxn], attn[nxm]");
    const Index m = xhat.dim(0), d = xhat.dim(1), n = xhat.dim(2);
    if (attn.rows() != n || attn.cols() != m) throw ShapeError("head_weighted_sum: attention shape must be [n x m]");
    Tensor<S> out = Tensor<S>::zeros({m, d});
    for (Index j = 0; j < m; ++j) {
        auto aj = detail::rm_col(attn.data(), n, m, j);
        out.mat().row(j) = (xhat.slice(j) * aj).transpose();
    }
    detail::attach(out, tape, {xhat, attn}, [m, d, n](TensorNode<S>& self) {
        auto& pxhat = *self.parents[0];
        auto& pattn = *self.parents[1];
        auto ds = detail::grad_mat(self);
        for (Index j = 0; j < m; ++j) {
            auto dsj = ds.row(j).transpose();
            if (pattn.requires_grad) {
                auto daj = detail::rm_col(pattn.grad.data(), n, m, j);
                daj += detail::value_slice(pxhat, j).transpose() * dsj;
            }
            if (pxhat.requires_grad) {
                auto aj = detail::rm_col(static_cast<const S*>(pattn.value.data()), n, m, j);
                detail::grad_slice(pxhat, j).noalias() += dsj * aj.transpose();
            }
        }
        (void)d;
    });
    return out;
}

// q[i,j] = xhat[j,:,i] . z[j,:];   xhat [m x d x n], z [m x d] -> [n x m].
template <typename S>
Tensor<S> head_scores(const Tensor<S>& xhat, const Tensor<S>& z, Tape<S>* tape = nullptr) {
    if (xhat.rank() != 3 || z.rank() != 2) throw ShapeError("head_scores: expects xhat[mxdxn], z[mxd]");
    const Index m = xhat.dim(0), d = xhat.dim(1), n = xhat.dim(2);
    if (z.rows() != m || z.cols() != d) throw ShapeError("head_scores: z shape must be [m x d]");
    Tensor<S> out = Tensor<S>::zeros({n, m});
    for (Index j = 0; j < m; ++j) {
        auto qj = detail::rm_col(out.data(), n, m, j);
        qj = xhat.slice(j).transpose() * z.mat().row(j).transpose();
    }
    detail::attach(out, tape, {xhat, z}, [m, d, n](TensorNode<S>& self) {
        auto& pxhat = *self.parents[0];
        auto& pz = *self.parents[1];
        for (Index j = 0; j < m; ++j) {
            auto dqj = detail::rm_col(static_cast<const S*>(self.grad.data()), n, m, j);
            if (pz.requires_grad)
                detail::grad_mat(pz).row(j) += (detail::value_slice(pxhat, j) * dqj).transpose();
            if (pxhat.requires_grad) {
                auto zj = detail::value_mat(pz).row(j).transpose();
                detail::grad_slice(pxhat, j).noalias() += zj * dqj.transpose();
            }
        }
        (void)d;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and loss
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x, Tape<S>* tape = nullptr) {
    S acc = S(0);
    for (Index i = 0; i < x.numel(); ++i) acc += x.data()[i];
    Tensor<S> out = Tensor<S>::scalar(acc);
    detail::attach(out, tape, {x}, [](TensorNode<S>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        const S g = self.grad[0];
        for (auto& v : px.grad) v += g;
    });
    return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x, Tape<S>* tape = nullptr) {
    const S inv = S(1) / static_cast<S>(x.numel());
    S acc = S(0);
    for (Index i = 0; i < x.numel(); ++i) acc += x.data()[i];
    Tensor<S> out = Tensor<S>::scalar(acc * inv);
    detail::attach(out, tape, {x}, [inv](TensorNode<S>& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        const S g = self.grad[0] * inv;
        for (auto& v : px.grad) v += g;
    });
    return out;
}

// Mean over the batch of -log softmax(logits)[label]; logits are [C x B].
template <typename S>
Tensor<S> cross_entropy_loss(const Tensor<S>& logits, const std::vector<int>& labels, Tape<S>* tape = nullptr) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy_loss: expects [C x B] logits");
    const Index c = logits.rows(), batch = logits.cols();
    if (static_cast<Index>(labels.size()) != batch)
        throw ShapeError("cross_entropy_loss: one label per batch column required");
    for (int label : labels)
        if (label < 0 || label >= c) throw ContractError("cross_entropy_loss: label out of range");

    auto lv = logits.mat();
    S acc = S(0);
    for (Index b = 0; b < batch; ++b) {
        const S mx = lv.col(b).maxCoeff();
        S denom = S(0);
        for (Index i = 0; i < c; ++i) denom += std::exp(lv(i, b) - mx);
        acc += mx + std::log(denom) - lv(labels[static_cast<std::size_t>(b)], b);
    }
    Tensor<S> out = Tensor<S>::scalar(acc / static_cast<S>(batch));
    std::vector<int> saved_labels = labels;
    detail::attach(out, tape, {logits}, [saved_labels](TensorNode<S>& self) {
        auto& pl = *self.parents[0];
        if (!pl.requires_grad) return;
        auto lv = detail::value_mat(pl);
        auto dl = detail::grad_mat(pl);
        const Index batch = lv.cols();
        const S g = self.grad[0] / static_cast<S>(batch);
        for (Index b = 0; b < batch; ++b) {
            const S mx = lv.col(b).maxCoeff();
            Vec<S> p = (lv.col(b).array() - mx).exp();
            p /= p.sum();
            dl.col(b) += p * g;
            dl(saved_labels[static_cast<std::size_t>(b)], b) -= g;
        }
    });
    return out;
}

}  // namespace dsa
