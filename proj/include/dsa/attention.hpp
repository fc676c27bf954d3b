#pragma once

#include <utility>
#include <vector>

#include "dsa/common.hpp"
#include "dsa/error.hpp"
#include "dsa/ops.hpp"
#include "dsa/optim.hpp"
#include "dsa/tensor.hpp"

namespace dsa {

struct DsaConfig {
    int heads = 1;       // m
    int head_dim = 600;  // d_o
    int iterations = 2;  // r

    void validate() const {
        if (heads < 1) throw ConfigError("attention: head count must be at least 1");
        if (head_dim < 1) throw ConfigError("attention: head dim must be at least 1");
        if (iterations < 1) throw ConfigError("attention: at least one routing iteration required");
    }
};

// Per-head projection; one matrix shared by all positions of a head.
template <typename S>
struct HeadParams {
    Tensor<S> weight;  // [d_o x d_c]
    Tensor<S> bias;    // [d_o]
};

template <typename S>
struct DsaParams {
    std::vector<HeadParams<S>> heads;
};

template <typename S>
DsaParams<S> init_dsa_params(const DsaConfig& cfg, Index input_dim, Rng& rng) {
    DsaParams<S> params;
    for (int j = 0; j < cfg.heads; ++j) {
        HeadParams<S> head;
        head.weight = he_init_scaled<S>({cfg.head_dim, input_dim}, input_dim, 1.0, rng);
        head.bias = Tensor<S>::zeros({cfg.head_dim}, true);
        params.heads.push_back(std::move(head));
    }
    return params;
}

// Values recorded per routing iteration when tracing is requested: the
// logits that produced this iteration's weights, the weights themselves, and
// the iteration's dynamic vector per head.
template <typename S>
struct AttentionTrace {
    struct Iteration {
        MatRM<S> logits;   // [n x m]
        MatRM<S> weights;  // [n x m]
        MatRM<S> z;        // [m x d_o]
    };
    std::vector<Iteration> iterations;
    BoolVec mask;
};

// xhat[j,:,i] = LeakyReLU(W_j xc[:,i] + b_j) stacked as [m x d_o x n].
template <typename S>
Tensor<S> project_heads(const Tensor<S>& xc, const DsaParams<S>& params, double slope, Context<S> ctx) {
    if (params.heads.empty()) throw ShapeError("project_heads: no heads");
    std::vector<Tensor<S>> projected;
    projected.reserve(params.heads.size());
    for (const auto& head : params.heads)
        projected.push_back(
            leaky_relu(affine(xc, head.weight, head.bias, ctx.tape), static_cast<S>(slope), ctx.tape));
    return stack_heads(std::span<const Tensor<S>>(projected), ctx.tape);
}

// Iterative routing: scores start at zero, each pass normalizes them over
// valid positions, pools the projections, squashes with tanh, and adds the
// agreement between projections and the pooled vector back onto the scores.
// Differentiable through every iteration. Returns the final z, [m x d_o].
template <typename S>
Tensor<S> dsa_routing(const Tensor<S>& xhat, const BoolVec& mask, int iterations, Context<S> ctx,
                      AttentionTrace<S>* trace = nullptr) {
    if (xhat.rank() != 3) throw ShapeError("dsa_routing: expects [m x d_o x n] projections");
    if (iterations < 1) throw ContractError("dsa_routing: at least one iteration required");
    const Index m = xhat.dim(0), n = xhat.dim(2);
    if (mask.size() != n) throw ShapeError("dsa_routing: mask length must match positions");
    if (count_valid(mask) == 0) throw EmptySequenceError("dsa_routing: all positions are masked");

    if (trace) {
        trace->iterations.clear();
        trace->mask = mask;
    }
    Tensor<S> logits = Tensor<S>::zeros({n, m});
    Tensor<S> z;
    for (int it = 0; it < iterations; ++it) {
        Tensor<S> weights = softmax_over_positions(logits, mask, ctx.tape);
        Tensor<S> pooled = head_weighted_sum(xhat, weights, ctx.tape);
        z = tanh_op(pooled, ctx.tape);
        if (trace) {
            typename AttentionTrace<S>::Iteration step;
            step.logits = logits.mat();
            step.weights = weights.mat();
            step.z = z.mat();
            trace->iterations.push_back(std::move(step));
        }
        if (it + 1 < iterations) logits = add(logits, head_scores(xhat, z, ctx.tape), ctx.tape);
    }
    return z;
}

// Flattens [m x d_o] into the sentence embedding [m*d_o], heads in ascending
// order.
template <typename S>
Tensor<S> concat_heads(const Tensor<S>& z, Context<S> ctx) {
    if (z.rank() != 2) throw ShapeError("concat_heads: expects [m x d_o]");
    return reshape(z, {z.numel()}, ctx.tape);
}

// The vector that acted as the attention scorer for the final iteration:
// z_j recorded at iteration r-1.
template <typename S>
Vec<S> extract_dynamic_weight_vector(const AttentionTrace<S>& trace, int head) {
    if (trace.iterations.size() < 2)
        throw ContractError("extract_dynamic_weight_vector: requires at least two recorded iterations");
    const auto& step = trace.iterations[trace.iterations.size() - 2];
    if (head < 0 || head >= step.z.rows())
        throw ShapeError("extract_dynamic_weight_vector: head index out of range");
    return step.z.row(head).transpose();
}

// ---------------------------------------------------------------------------
// Static self-attention baseline
// ---------------------------------------------------------------------------

// weights = softmax(v . tanh(W X)) with a learned constant scorer v; the
// sentence vector is the weighted sum of the input columns.
template <typename S>
struct StaticAttnParams {
    Tensor<S> weight;  // [d_v x d_w]
    Tensor<S> v;       // [d_v]
};

template <typename S>
StaticAttnParams<S> init_static_attn_params(Index attn_dim, Index input_dim, Rng& rng) {
    StaticAttnParams<S> params;
    params.weight = he_init_scaled<S>({attn_dim, input_dim}, input_dim, 1.0, rng);
    params.v = he_init_scaled<S>({attn_dim}, attn_dim, 1.0, rng);
    return params;
}

template <typename S>
struct StaticAttnResult {
    Tensor<S> sentence;  // [d_w]
    Tensor<S> weights;   // [n x 1]
};

template <typename S>
StaticAttnResult<S> static_self_attention(const Tensor<S>& x, const StaticAttnParams<S>& params,
                                          const BoolVec& mask, Context<S> ctx) {
    if (x.rank() != 2) throw ShapeError("static_self_attention: expects [d_w x n]");
    const Index n = x.cols();
    if (mask.size() != n) throw ShapeError("static_self_attention: mask length must match positions");
    if (count_valid(mask) == 0) throw EmptySequenceError("static_self_attention: all positions are masked");

    Tensor<S> hidden = tanh_op(affine(x, params.weight, Tensor<S>::zeros({params.weight.rows()}), ctx.tape),
                               ctx.tape);
    Tensor<S> scores = affine(hidden, reshape(params.v, {1, params.v.size()}, ctx.tape),
                              Tensor<S>::zeros({1}), ctx.tape);      // [1 x n]
    Tensor<S> logits = reshape(scores, {n, 1}, ctx.tape);            // row-major [1 x n] == [n x 1]
    Tensor<S> weights = softmax_over_positions(logits, mask, ctx.tape);
    std::vector<Tensor<S>> single = {x};
    Tensor<S> stacked = stack_heads(std::span<const Tensor<S>>(single), ctx.tape);  // [1 x d_w x n]
    Tensor<S> pooled = head_weighted_sum(stacked, weights, ctx.tape);               // [1 x d_w]
    return {reshape(pooled, {x.rows()}, ctx.tape), weights};
}

}  // namespace dsa
