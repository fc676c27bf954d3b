#pragma once

#include <string>
#include <vector>

#include "dsa/common.hpp"
#include "dsa/error.hpp"
#include "dsa/ops.hpp"
#include "dsa/optim.hpp"
#include "dsa/tensor.hpp"

namespace dsa {

// Word encoder: two convolutional blocks with dense connections (kernel
// sizes k1 and k2), a kernel-1 compression layer over their concatenated
// outputs plus the raw embeddings, and column L2 normalization.
struct EncoderConfig {
    int d0 = 300;          // word embedding dim
    int d1 = 150;          // first layer output dim
    int dl = 75;           // output dim of layers 2..L
    int layers = 4;        // L, layers per block
    int k1 = 3;
    int k2 = 5;
    int dc = 300;          // compressed word dim
    double dropout = 0.2;  // rate inside every composite layer
    double leaky_slope = 0.01;
    double norm_eps = 1e-12;

    // Row count of one dense block's concatenated output.
    Index block_dim() const { return d1 + (layers - 1) * static_cast<Index>(dl); }
    // Input row count of the compression layer.
    Index compress_in_dim() const { return 2 * block_dim() + d0; }

    void validate() const {
        if (layers < 2) throw ConfigError("encoder: at least two layers per block required");
        if (k1 == k2) throw ConfigError("encoder: the two blocks must use different kernel sizes");
        if (k1 % 2 == 0 || k2 % 2 == 0) throw ConfigError("encoder: kernel sizes must be odd");
        if (d0 < 1 || d1 < 1 || dl < 1 || dc < 1) throw ConfigError("encoder: dimensions must be positive");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder: dropout rate must lie in [0,1)");
    }
};

template <typename S>
struct ConvLayer {
    Tensor<S> weight;  // [out x in x k]
    Tensor<S> bias;    // [out]

    Index out_dim() const { return weight.dim(0); }
    Index in_dim() const { return weight.dim(1); }
    Index kernel() const { return weight.dim(2); }
};

template <typename S>
struct DenseBlock {
    std::vector<ConvLayer<S>> layers;  // layers[0] has kernel 1
};

template <typename S>
struct EncoderParams {
    DenseBlock<S> block1;
    DenseBlock<S> block2;
    ConvLayer<S> compress;
};

namespace detail {

// Layer l > 1 consumes the concatenation of all previous outputs.
inline Index dense_layer_in_dim(const EncoderConfig& cfg, int layer) {
    return layer == 1 ? cfg.d0 : cfg.d1 + static_cast<Index>(layer - 2) * cfg.dl;
}

template <typename S>
DenseBlock<S> init_dense_block(const EncoderConfig& cfg, int kernel, Rng& rng) {
    const double init_rate = cfg.dropout > 0.0 ? cfg.dropout : 1.0;
    DenseBlock<S> block;
    for (int l = 1; l <= cfg.layers; ++l) {
        const Index in = dense_layer_in_dim(cfg, l);
        const Index out = l == 1 ? cfg.d1 : cfg.dl;
        const Index k = l == 1 ? 1 : kernel;  // h^1 always has kernel size 1
        ConvLayer<S> layer;
        layer.weight = he_init_scaled<S>({out, in, k}, in * k, init_rate, rng);
        layer.bias = Tensor<S>::zeros({out}, true);
        block.layers.push_back(std::move(layer));
    }
    return block;
}

}  // namespace detail

template <typename S>
EncoderParams<S> init_encoder_params(const EncoderConfig& cfg, Rng& rng) {
    const double init_rate = cfg.dropout > 0.0 ? cfg.dropout : 1.0;
    EncoderParams<S> params;
    params.block1 = detail::init_dense_block<S>(cfg, cfg.k1, rng);
    params.block2 = detail::init_dense_block<S>(cfg, cfg.k2, rng);
    params.compress.weight = he_init_scaled<S>({cfg.dc, cfg.compress_in_dim(), 1},
                                               cfg.compress_in_dim(), init_rate, rng);
    params.compress.bias = Tensor<S>::zeros({cfg.dc}, true);
    return params;
}

// Structural check of the dense wiring against the configuration.
template <typename S>
void validate_encoder_params(const EncoderParams<S>& params, const EncoderConfig& cfg) {
    auto check_block = [&](const DenseBlock<S>& block, int kernel, const char* name) {
        if (static_cast<int>(block.layers.size()) != cfg.layers)
            throw ShapeError(std::string("encoder: ") + name + " layer count mismatch");
        for (int l = 1; l <= cfg.layers; ++l) {
            const auto& layer = block.layers[static_cast<std::size_t>(l - 1)];
            const Index want_in = detail::dense_layer_in_dim(cfg, l);
            const Index want_out = l == 1 ? cfg.d1 : cfg.dl;
            const Index want_k = l == 1 ? 1 : kernel;
            if (layer.in_dim() != want_in || layer.out_dim() != want_out || layer.kernel() != want_k)
                throw ShapeError(std::string("encoder: ") + name + " layer " + std::to_string(l) +
                                 " has wrong shape");
        }
    };
    check_block(params.block1, cfg.k1, "block1");
    check_block(params.block2, cfg.k2, "block2");
    if (params.compress.in_dim() != cfg.compress_in_dim() || params.compress.out_dim() != cfg.dc ||
        params.compress.kernel() != 1)
        throw ShapeError("encoder: compression layer has wrong shape");
}

// conv -> dropout -> leaky relu, in that order.
template <typename S>
Tensor<S> composite_layer(const Tensor<S>& x, const ConvLayer<S>& layer, double dropout_rate, double slope,
                          Context<S> ctx) {
    Tensor<S> y = conv1d_same(x, layer.weight, layer.bias, ctx.tape);
    y = dropout(y, static_cast<S>(dropout_rate), ctx.mode, ctx.rng, ctx.tape);
    return leaky_relu(y, static_cast<S>(slope), ctx.tape);
}

// X^1 = h^1(X^0); X^l = h^l(concat[X^{l-1},...,X^1]); returns
// concat[X^L,...,X^1]. Concatenation order is newest output first.
template <typename S>
Tensor<S> dense_block(const Tensor<S>& x0, const DenseBlock<S>& block, double dropout_rate, double slope,
                      Context<S> ctx) {
    if (block.layers.empty()) throw ShapeError("dense_block: no layers");
    std::vector<Tensor<S>> outputs;  // outputs[i] = X^{i+1}
    outputs.push_back(composite_layer(x0, block.layers[0], dropout_rate, slope, ctx));
    for (std::size_t l = 1; l < block.layers.size(); ++l) {
        std::vector<Tensor<S>> stacked(outputs.rbegin(), outputs.rend());
        Tensor<S> input = stacked.size() == 1
                              ? stacked.front()
                              : concat_rows(std::span<const Tensor<S>>(stacked), ctx.tape);
        outputs.push_back(composite_layer(input, block.layers[l], dropout_rate, slope, ctx));
    }
    std::vector<Tensor<S>> final_order(outputs.rbegin(), outputs.rend());
    return final_order.size() == 1 ? final_order.front()
                                   : concat_rows(std::span<const Tensor<S>>(final_order), ctx.tape);
}

// Full word encoding: compress(concat[block1(X0), block2(X0), X0]) followed
// by column L2 normalization, so every output column has unit norm.
template <typename S>
Tensor<S> encode_words(const Tensor<S>& x0, const EncoderParams<S>& params, const EncoderConfig& cfg,
                       Context<S> ctx) {
    if (x0.rank() != 2) throw ShapeError("encode_words: expects a [d0 x n] matrix");
    if (x0.cols() < 1) throw EmptySequenceError("encode_words: empty sequence");
    if (x0.rows() != cfg.d0) throw ShapeError("encode_words: embedding dim does not match configuration");
    Tensor<S> phi1 = dense_block(x0, params.block1, cfg.dropout, cfg.leaky_slope, ctx);
    Tensor<S> phi2 = dense_block(x0, params.block2, cfg.dropout, cfg.leaky_slope, ctx);
    Tensor<S> merged = concat_rows({phi1, phi2, x0}, ctx.tape);
    Tensor<S> compressed = composite_layer(merged, params.compress, cfg.dropout, cfg.leaky_slope, ctx);
    return l2_normalize_columns(compressed, static_cast<S>(cfg.norm_eps), ctx.tape);
}

}  // namespace dsa
