#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dsa/common.hpp"
#include "dsa/error.hpp"

namespace dsa {

namespace detail {

inline Index shape_numel(const std::vector<Index>& shape) {
    Index n = 1;
    for (Index d : shape) {
        if (d <= 0) throw ShapeError("tensor extents must be positive");
        n *= d;
    }
    return n;
}

}  // namespace detail

template <typename S>
struct TensorNode {
    std::vector<Index> shape;
    std::vector<S> value;
    std::vector<S> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    bool reached = false;  // scratch flag used by backward()

    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;  // accumulates into parents' grads

    Index numel() const { return static_cast<Index>(value.size()); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }

    void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
};

// Value type over shared node storage: copies alias the same buffer. Forward
// ops allocate fresh nodes, so graph values are never mutated in place; only
// leaf parameters are updated (between steps, by the optimizer).
template <typename S>
class Tensor {
public:
    using Scalar = S;

    Tensor() = default;

    static Tensor zeros(std::vector<Index> shape, bool requires_grad = false) {
        return from_data(std::move(shape), {}, requires_grad, true);
    }

    static Tensor full(std::vector<Index> shape, S fill, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.node_->value.begin(), t.node_->value.end(), fill);
        return t;
    }

    static Tensor from(std::vector<Index> shape, std::vector<S> data, bool requires_grad = false) {
        return from_data(std::move(shape), std::move(data), requires_grad, false);
    }

    static Tensor scalar(S v) { return from({1}, {v}); }

    static Tensor vector(std::vector<S> data, bool requires_grad = false) {
        const Index n = static_cast<Index>(data.size());
        return from({n}, std::move(data), requires_grad);
    }

    static Tensor from_matrix(const MatRM<S>& m, bool requires_grad = false) {
        Tensor t = zeros({m.rows(), m.cols()}, requires_grad);
        MatMap<S>(t.data(), m.rows(), m.cols()) = m;
        return t;
    }

    bool defined() const { return node_ != nullptr; }

    const std::vector<Index>& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    Index dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    Index numel() const { return node_->numel(); }

    Index rows() const {
        require_rank(2, "rows()");
        return node_->shape[0];
    }
    Index cols() const {
        require_rank(2, "cols()");
        return node_->shape[1];
    }
    Index size() const {
        require_rank(1, "size()");
        return node_->shape[0];
    }

    S* data() { return node_->value.data(); }
    const S* data() const { return node_->value.data(); }
    std::vector<S>& values() { return node_->value; }
    const std::vector<S>& values() const { return node_->value; }

    S item() const {
        if (numel() != 1) throw ContractError("item(): tensor is not scalar");
        return node_->value[0];
    }

    // Rank-2 view.
    MatMap<S> mat() {
        require_rank(2, "mat()");
        return MatMap<S>(data(), node_->shape[0], node_->shape[1]);
    }
    ConstMatMap<S> mat() const {
        require_rank(2, "mat()");
        return ConstMatMap<S>(data(), node_->shape[0], node_->shape[1]);
    }

    // Rank-1 view.
    VecMap<S> vec() {
        require_rank(1, "vec()");
        return VecMap<S>(data(), node_->shape[0]);
    }
    ConstVecMap<S> vec() const {
        require_rank(1, "vec()");
        return ConstVecMap<S>(data(), node_->shape[0]);
    }

    // Contiguous [d1 x d2] slice j of a rank-3 [d0 x d1 x d2] tensor.
    MatMap<S> slice(Index j) {
        require_rank(3, "slice()");
        check_slice(j);
        return MatMap<S>(data() + j * node_->shape[1] * node_->shape[2], node_->shape[1], node_->shape[2]);
    }
    ConstMatMap<S> slice(Index j) const {
        require_rank(3, "slice()");
        check_slice(j);
        return ConstMatMap<S>(data() + j * node_->shape[1] * node_->shape[2], node_->shape[1], node_->shape[2]);
    }

    bool requires_grad() const { return node_->requires_grad; }

    bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
    void ensure_grad() { node_->ensure_grad(); }
    void zero_grad() { node_->zero_grad(); }
    S* grad_data() { return node_->grad.data(); }
    const S* grad_data() const { return node_->grad.data(); }
    std::vector<S>& grad() { return node_->grad; }
    const std::vector<S>& grad() const { return node_->grad; }

    MatMap<S> grad_mat() {
        require_rank(2, "grad_mat()");
        node_->ensure_grad();
        return MatMap<S>(node_->grad.data(), node_->shape[0], node_->shape[1]);
    }
    VecMap<S> grad_vec() {
        require_rank(1, "grad_vec()");
        node_->ensure_grad();
        return VecMap<S>(node_->grad.data(), node_->shape[0]);
    }
    MatMap<S> grad_slice(Index j) {
        require_rank(3, "grad_slice()");
        check_slice(j);
        node_->ensure_grad();
        return MatMap<S>(node_->grad.data() + j * node_->shape[1] * node_->shape[2], node_->shape[1],
                         node_->shape[2]);
    }

    std::shared_ptr<TensorNode<S>> node() const { return node_; }

    static Tensor wrap(std::shared_ptr<TensorNode<S>> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    static Tensor from_data(std::vector<Index> shape, std::vector<S> data, bool requires_grad, bool zero_fill) {
        const Index n = detail::shape_numel(shape);
        auto node = std::make_shared<TensorNode<S>>();
        node->shape = std::move(shape);
        if (zero_fill) {
            node->value.assign(static_cast<std::size_t>(n), S(0));
        } else {
            if (static_cast<Index>(data.size()) != n)
                throw ShapeError("tensor data length does not match shape product");
            node->value = std::move(data);
        }
        node->requires_grad = requires_grad;
        if (requires_grad) node->ensure_grad();
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

    void require_rank(int r, const char* what) const {
        if (!node_) throw ContractError(std::string(what) + ": tensor is empty");
        if (rank() != r)
            throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + ", got rank " +
                             std::to_string(rank()));
    }

    void check_slice(Index j) const {
        if (j < 0 || j >= node_->shape[0]) throw ShapeError("slice(): index out of range");
    }

    std::shared_ptr<TensorNode<S>> node_;
};

// Records forward applications in creation order. Reverse replay is a valid
// topological order because ops only consume tensors that already exist.
template <typename S>
class Tape {
public:
    void record(std::shared_ptr<TensorNode<S>> node) { nodes_.push_back(std::move(node)); }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    const std::vector<std::shared_ptr<TensorNode<S>>>& nodes() const { return nodes_; }

private:
    std::vector<std::shared_ptr<TensorNode<S>>> nodes_;
};

// Bundles the pieces a forward pass threads through every layer: train/eval
// switch, optional recording tape, and the generator driving dropout.
template <typename S>
struct Context {
    Mode mode = Mode::kEval;
    Tape<S>* tape = nullptr;
    Rng* rng = nullptr;

    static Context eval() { return {}; }
    static Context train(Tape<S>& tape, Rng& rng) { return {Mode::kTrain, &tape, &rng}; }
};

// Seeds d(loss)/d(loss) = 1 and replays the tape once in reverse, visiting
// only nodes the loss actually depends on.
template <typename S>
inline void backward(const Tensor<S>& loss, Tape<S>& tape) {
    if (!loss.defined() || loss.numel() != 1) throw ContractError("backward: loss must be a defined scalar tensor");
    auto root = loss.node();
    root->ensure_grad();
    root->grad[0] += S(1);
    root->reached = true;

    const auto& nodes = tape.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        TensorNode<S>& node = **it;
        if (!node.reached) continue;
        node.reached = false;
        if (!node.backward_fn) continue;
        for (auto& parent : node.parents) {
            if (parent->requires_grad) {
                parent->ensure_grad();
                parent->reached = true;
            }
        }
        node.backward_fn(node);
    }
    root->reached = false;
}

}  // namespace dsa
