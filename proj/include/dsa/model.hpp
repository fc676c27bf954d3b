#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsa/attention.hpp"
#include "dsa/common.hpp"
#include "dsa/data.hpp"
#include "dsa/encoder.hpp"
#include "dsa/error.hpp"
#include "dsa/ops.hpp"
#include "dsa/optim.hpp"
#include "dsa/tensor.hpp"

namespace dsa {

enum class AttentionKind { kDsa, kStatic };
enum class TaskKind { kPair, kSingle };

struct ClassifierConfig {
    int hidden_units = 300;
    int hidden_layers = 2;
    double dropout = 0.3;
    int classes = 3;
};

struct ModelConfig {
    TaskKind task = TaskKind::kPair;
    AttentionKind attention = AttentionKind::kDsa;
    EncoderConfig encoder;
    DsaConfig dsa;
    int static_attn_dim = 300;      // d_v of the baseline scorer
    ClassifierConfig classifier;
    double embedding_dropout = 0.0;

    // Sentence embedding width: m*d_o for routing attention, d_c for the
    // static baseline (a weighted sum of compressed word vectors).
    Index embedding_dim() const {
        return attention == AttentionKind::kDsa ? static_cast<Index>(dsa.heads) * dsa.head_dim
                                                : static_cast<Index>(encoder.dc);
    }

    // Classifier input: matching features for pairs, the embedding itself
    // for single sentences.
    Index feature_dim() const {
        return task == TaskKind::kPair ? 4 * embedding_dim() : embedding_dim();
    }

    void validate() const {
        encoder.validate();
        if (attention == AttentionKind::kDsa) dsa.validate();
        else if (static_attn_dim < 1) throw ConfigError("model: static attention dim must be positive");
        if (classifier.classes < 2) throw ConfigError("model: at least two classes required");
        if (classifier.hidden_layers < 0) throw ConfigError("model: negative hidden layer count");
        if (classifier.hidden_layers > 0 && classifier.hidden_units < 1)
            throw ConfigError("model: hidden layers need positive width");
        if (classifier.dropout < 0.0 || classifier.dropout >= 1.0)
            throw ConfigError("model: classifier dropout must lie in [0,1)");
        if (embedding_dropout < 0.0 || embedding_dropout >= 1.0)
            throw ConfigError("model: embedding dropout must lie in [0,1)");
    }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename S>
struct MlpLayer {
    Tensor<S> gamma, beta;       // batch norm scale/shift over the layer input
    BatchNormState<S> norm;
    Tensor<S> weight, bias;      // affine into the hidden width
};

template <typename S>
struct MlpParams {
    std::vector<MlpLayer<S>> hidden;
    Tensor<S> out_weight, out_bias;  // final affine to class logits
};

template <typename S>
struct ModelParams {
    EncoderParams<S> encoder;
    DsaParams<S> dsa;                 // populated for AttentionKind::kDsa
    StaticAttnParams<S> static_attn;  // populated for AttentionKind::kStatic
    MlpParams<S> classifier;
};

template <typename S>
MlpParams<S> init_mlp_params(const ModelConfig& cfg, Rng& rng) {
    const auto& cls = cfg.classifier;
    const double init_rate = cls.dropout > 0.0 ? cls.dropout : 1.0;
    MlpParams<S> params;
    Index in = cfg.feature_dim();
    for (int l = 0; l < cls.hidden_layers; ++l) {
        MlpLayer<S> layer;
        layer.gamma = Tensor<S>::full({in}, S(1), true);
        layer.beta = Tensor<S>::zeros({in}, true);
        layer.norm = BatchNormState<S>(in);
        layer.weight = he_init_scaled<S>({cls.hidden_units, in}, in, init_rate, rng);
        layer.bias = Tensor<S>::zeros({cls.hidden_units}, true);
        params.hidden.push_back(std::move(layer));
        in = cls.hidden_units;
    }
    params.out_weight = he_init_scaled<S>({cls.classes, in}, in, 1.0, rng);
    params.out_bias = Tensor<S>::zeros({cls.classes}, true);
    return params;
}

template <typename S>
ModelParams<S> init_model_params(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParams<S> params;
    params.encoder = init_encoder_params<S>(cfg.encoder, rng);
    if (cfg.attention == AttentionKind::kDsa)
        params.dsa = init_dsa_params<S>(cfg.dsa, cfg.encoder.dc, rng);
    else
        params.static_attn = init_static_attn_params<S>(cfg.static_attn_dim, cfg.encoder.dc, rng);
    params.classifier = init_mlp_params<S>(cfg, rng);
    return params;
}

// Trainable tensors in canonical (checkpoint) order.
template <typename S>
std::vector<std::pair<std::string, Tensor<S>>> named_params(ModelParams<S>& params, const ModelConfig& cfg) {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    auto add_block = [&](DenseBlock<S>& block, const std::string& prefix) {
        for (std::size_t l = 0; l < block.layers.size(); ++l) {
            const std::string base = prefix + ".layer" + std::to_string(l + 1) + ".conv.";
            out.emplace_back(base + "weight", block.layers[l].weight);
            out.emplace_back(base + "bias", block.layers[l].bias);
        }
    };
    add_block(params.encoder.block1, "encoder.block1");
    add_block(params.encoder.block2, "encoder.block2");
    out.emplace_back("encoder.compress.conv.weight", params.encoder.compress.weight);
    out.emplace_back("encoder.compress.conv.bias", params.encoder.compress.bias);
    if (cfg.attention == AttentionKind::kDsa) {
        for (std::size_t j = 0; j < params.dsa.heads.size(); ++j) {
            const std::string base = "attention.head" + std::to_string(j + 1) + ".";
            out.emplace_back(base + "weight", params.dsa.heads[j].weight);
            out.emplace_back(base + "bias", params.dsa.heads[j].bias);
        }
    } else {
        out.emplace_back("attention.static.weight", params.static_attn.weight);
        out.emplace_back("attention.static.v", params.static_attn.v);
    }
    for (std::size_t l = 0; l < params.classifier.hidden.size(); ++l) {
        const std::string base = "classifier.hidden" + std::to_string(l + 1) + ".";
        out.emplace_back(base + "norm.gamma", params.classifier.hidden[l].gamma);
        out.emplace_back(base + "norm.beta", params.classifier.hidden[l].beta);
        out.emplace_back(base + "affine.weight", params.classifier.hidden[l].weight);
        out.emplace_back(base + "affine.bias", params.classifier.hidden[l].bias);
    }
    out.emplace_back("classifier.output.weight", params.classifier.out_weight);
    out.emplace_back("classifier.output.bias", params.classifier.out_bias);
    return out;
}

// Non-trainable state serialized alongside the parameters.
template <typename S>
std::vector<std::pair<std::string, Vec<S>*>> named_buffers(ModelParams<S>& params) {
    std::vector<std::pair<std::string, Vec<S>*>> out;
    for (std::size_t l = 0; l < params.classifier.hidden.size(); ++l) {
        const std::string base = "classifier.hidden" + std::to_string(l + 1) + ".norm.";
        out.emplace_back(base + "running_mean", &params.classifier.hidden[l].norm.running_mean);
        out.emplace_back(base + "running_var", &params.classifier.hidden[l].norm.running_var);
    }
    return out;
}

template <typename S>
std::vector<Tensor<S>> trainable_params(ModelParams<S>& params, const ModelConfig& cfg) {
    std::vector<Tensor<S>> out;
    for (auto& [name, tensor] : named_params(params, cfg)) out.push_back(tensor);
    return out;
}

// ---------------------------------------------------------------------------
// Forward pieces
// ---------------------------------------------------------------------------

// concat[sh, sp, |sh - sp|, sh . sp]
template <typename S>
Tensor<S> heuristic_match_features(const Tensor<S>& sh, const Tensor<S>& sp, Tape<S>* tape = nullptr) {
    if (sh.rank() != 1 || sp.rank() != 1 || sh.size() != sp.size())
        throw ShapeError("heuristic_match_features: sentence vectors must have equal length");
    Tensor<S> diff = abs_op(sub(sh, sp, tape), tape);
    Tensor<S> prod = hadamard(sh, sp, tape);
    return concat_rows({sh, sp, diff, prod}, tape);
}

// Per hidden layer: batch norm -> dropout -> affine -> leaky relu; then a
// final affine to logits. Features are [D x B]; batch norm in train mode
// needs B >= 2.
template <typename S>
Tensor<S> mlp_classify(const Tensor<S>& features, MlpParams<S>& params, const ModelConfig& cfg,
                       Context<S> ctx) {
    if (features.rank() != 2) throw ShapeError("mlp_classify: expects [D x B] features");
    if (features.rows() != cfg.feature_dim())
        throw ShapeError("mlp_classify: feature dim does not match configuration");
    Tensor<S> h = features;
    for (auto& layer : params.hidden) {
        h = batch_norm_1d(h, layer.gamma, layer.beta, layer.norm, ctx.mode, S(0.1), S(1e-5), ctx.tape);
        h = dropout(h, static_cast<S>(cfg.classifier.dropout), ctx.mode, ctx.rng, ctx.tape);
        h = affine(h, layer.weight, layer.bias, ctx.tape);
        h = leaky_relu(h, static_cast<S>(cfg.encoder.leaky_slope), ctx.tape);
    }
    return affine(h, params.out_weight, params.out_bias, ctx.tape);
}

// Embedding matrix -> compressed words -> attention -> sentence vector.
template <typename S>
Tensor<S> sentence_embedding(const Tensor<S>& x0, const BoolVec& mask, ModelParams<S>& params,
                             const ModelConfig& cfg, Context<S> ctx, AttentionTrace<S>* trace = nullptr) {
    Tensor<S> dropped = dropout(x0, static_cast<S>(cfg.embedding_dropout), ctx.mode, ctx.rng, ctx.tape);
    Tensor<S> xc = encode_words(dropped, params.encoder, cfg.encoder, ctx);
    if (cfg.attention == AttentionKind::kDsa) {
        Tensor<S> xhat = project_heads(xc, params.dsa, cfg.encoder.leaky_slope, ctx);
        Tensor<S> z = dsa_routing(xhat, mask, cfg.dsa.iterations, ctx, trace);
        return concat_heads(z, ctx);
    }
    auto res = static_self_attention(xc, params.static_attn, mask, ctx);
    return res.sentence;
}

// Single-sentence path from token ids.
template <typename S>
Tensor<S> encode_sentence(std::span<const Index> token_ids, const EmbeddingTable<S>& table,
                          ModelParams<S>& params, const ModelConfig& cfg, Context<S> ctx,
                          AttentionTrace<S>* trace = nullptr) {
    if (token_ids.empty()) throw EmptySequenceError("encode_sentence: empty token sequence");
    Tensor<S> x0 = table.lookup(token_ids);
    return sentence_embedding(x0, all_valid(static_cast<Index>(token_ids.size())), params, cfg, ctx, trace);
}

// Class logits [C x B] for a whole padded batch.
template <typename S>
Tensor<S> batch_logits(const Batch<S>& batch, ModelParams<S>& params, const ModelConfig& cfg, Context<S> ctx) {
    const Index batch_n = batch.size();
    if (batch_n == 0) throw EmptySequenceError("batch_logits: empty batch");
    if (cfg.task == TaskKind::kPair && !batch.second)
        throw ShapeError("batch_logits: pair task needs two sequence blocks");
    std::vector<Tensor<S>> features;
    features.reserve(static_cast<std::size_t>(batch_n));
    for (Index b = 0; b < batch_n; ++b) {
        if (cfg.task == TaskKind::kPair) {
            Tensor<S> sp = sentence_embedding(batch.first.embeddings_of(b), batch.first.mask_of(b), params,
                                              cfg, ctx);
            Tensor<S> sh = sentence_embedding(batch.second->embeddings_of(b), batch.second->mask_of(b),
                                              params, cfg, ctx);
            features.push_back(heuristic_match_features(sh, sp, ctx.tape));
        } else {
            features.push_back(
                sentence_embedding(batch.first.embeddings_of(b), batch.first.mask_of(b), params, cfg, ctx));
        }
    }
    Tensor<S> stacked = hstack_columns(std::span<const Tensor<S>>(features), ctx.tape);
    return mlp_classify(stacked, params.classifier, cfg, ctx);
}

template <typename S>
std::vector<int> predict_labels(const Tensor<S>& logits) {
    std::vector<int> out;
    for (Index b = 0; b < logits.cols(); ++b) {
        Index best = 0;
        logits.mat().col(b).maxCoeff(&best);
        out.push_back(static_cast<int>(best));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameter accounting (word embeddings excluded)
// ---------------------------------------------------------------------------

struct ParamBreakdown {
    std::vector<std::pair<std::string, long long>> items;
    long long encoder_subtotal = 0;  // blocks + compression + attention
    long long classifier_subtotal = 0;
    long long total = 0;
};

inline ParamBreakdown param_breakdown(const ModelConfig& cfg) {
    const auto& enc = cfg.encoder;
    auto conv_params = [](long long out, long long in, long long k) { return out * in * k + out; };

    ParamBreakdown bd;
    auto block_total = [&](int kernel) {
        long long sum = conv_params(enc.d1, enc.d0, 1);
        for (int l = 2; l <= enc.layers; ++l)
            sum += conv_params(enc.dl, enc.d1 + static_cast<long long>(l - 2) * enc.dl, kernel);
        return sum;
    };
    const long long b1 = block_total(enc.k1);
    const long long b2 = block_total(enc.k2);
    const long long comp = conv_params(enc.dc, enc.compress_in_dim(), 1);
    bd.items.emplace_back("encoder.block1", b1);
    bd.items.emplace_back("encoder.block2", b2);
    bd.items.emplace_back("encoder.compress", comp);

    long long attn = 0;
    if (cfg.attention == AttentionKind::kDsa) {
        attn = static_cast<long long>(cfg.dsa.heads) *
               (static_cast<long long>(cfg.dsa.head_dim) * enc.dc + cfg.dsa.head_dim);
        bd.items.emplace_back("attention.heads", attn);
    } else {
        attn = static_cast<long long>(cfg.static_attn_dim) * enc.dc + cfg.static_attn_dim;
        bd.items.emplace_back("attention.static", attn);
    }
    bd.encoder_subtotal = b1 + b2 + comp + attn;

    long long in = cfg.feature_dim();
    for (int l = 0; l < cfg.classifier.hidden_layers; ++l) {
        const long long norm = 2 * in;  // gamma + beta
        const long long aff = static_cast<long long>(cfg.classifier.hidden_units) * in +
                              cfg.classifier.hidden_units;
        bd.items.emplace_back("classifier.hidden" + std::to_string(l + 1), norm + aff);
        bd.classifier_subtotal += norm + aff;
        in = cfg.classifier.hidden_units;
    }
    const long long out_aff = static_cast<long long>(cfg.classifier.classes) * in + cfg.classifier.classes;
    bd.items.emplace_back("classifier.output", out_aff);
    bd.classifier_subtotal += out_aff;

    bd.total = bd.encoder_subtotal + bd.classifier_subtotal;
    return bd;
}

inline long long param_count(const ModelConfig& cfg) { return param_breakdown(cfg).total; }

}  // namespace dsa
