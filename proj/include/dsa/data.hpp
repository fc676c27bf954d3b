#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsa/common.hpp"
#include "dsa/error.hpp"
#include "dsa/tensor.hpp"

namespace dsa {

// ---------------------------------------------------------------------------
// Tokenization and dataset records
// ---------------------------------------------------------------------------

// Lowercased whitespace tokenization.
std::vector<std::string> tokenize(const std::string& text);

struct PairExample {
    std::vector<std::string> premise;
    std::vector<std::string> hypothesis;
    int label = 0;  // 0 entailment, 1 contradiction, 2 neutral
};

struct SentenceExample {
    std::vector<std::string> tokens;
    int label = 0;
};

struct ParsedPairs {
    std::vector<PairExample> examples;
    long skipped = 0;  // lines with the no-consensus "-" label
};

// TSV "label<TAB>premise<TAB>hypothesis"; labels entailment/contradiction/
// neutral map to 0/1/2, "-" lines are skipped and counted.
ParsedPairs parse_pair_dataset(const std::string& path);

// TSV "label<TAB>sentence" with integer labels in [0, classes).
std::vector<SentenceExample> parse_sentence_dataset(const std::string& path, int classes);

enum class DatasetKind { kPair, kSingle, kUnknown };

// Inspects the first data line to tell the two TSV layouts apart.
DatasetKind sniff_dataset_kind(const std::string& path);

// ---------------------------------------------------------------------------
// Pretrained vectors and vocabulary
// ---------------------------------------------------------------------------

template <typename S>
struct EmbeddingTable {
    std::vector<std::string> tokens;      // index -> token
    std::map<std::string, Index> vocab;   // token -> index
    MatRM<S> vectors;                     // [d0 x V], one column per token
    bool frozen = true;

    Index dim() const { return vectors.rows(); }
    Index size() const { return static_cast<Index>(tokens.size()); }

    std::optional<Index> id_of(const std::string& token) const {
        auto it = vocab.find(token);
        if (it == vocab.end()) return std::nullopt;
        return it->second;
    }

    Index add_token(const std::string& token, const Vec<S>& column) {
        if (vocab.count(token)) throw ContractError("embedding table: token already present: " + token);
        if (vectors.cols() == 0 && vectors.rows() == 0)
            vectors.resize(column.size(), 0);
        if (column.size() != vectors.rows())
            throw ShapeError("embedding table: vector length mismatch for token " + token);
        const Index id = size();
        vectors.conservativeResize(Eigen::NoChange, id + 1);
        vectors.col(id) = column;
        tokens.push_back(token);
        vocab.emplace(token, id);
        return id;
    }

    // Embedding lookup as a constant graph leaf (the table is frozen).
    Tensor<S> lookup(std::span<const Index> ids) const {
        if (ids.empty()) throw EmptySequenceError("embedding lookup: empty token sequence");
        Tensor<S> out = Tensor<S>::zeros({dim(), static_cast<Index>(ids.size())});
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= size()) throw ContractError("embedding lookup: id out of range");
            out.mat().col(static_cast<Index>(i)) = vectors.col(ids[i]);
        }
        return out;
    }

    std::vector<Index> to_ids(const std::vector<std::string>& words) const {
        std::vector<Index> ids;
        ids.reserve(words.size());
        for (const auto& w : words) {
            auto id = id_of(w);
            if (!id) throw FormatError("unknown token without OOV handling: '" + w + "'");
            ids.push_back(*id);
        }
        return ids;
    }
};

template <typename S>
struct LoadedVectors {
    EmbeddingTable<S> table;
    std::vector<std::string> missing;  // wanted tokens absent from the file, sorted
};

namespace detail {

struct RawVectorFile {
    std::vector<std::pair<std::string, std::vector<double>>> rows;  // wanted tokens found, file order
    Index dim = 0;
};

RawVectorFile read_vector_file(const std::string& path, const std::set<std::string>& wanted);

}  // namespace detail

// Loads rows for the wanted tokens found in a "token v1 ... vd" text file;
// tokens are indexed in sorted order. Absent tokens are reported, not added.
template <typename S>
LoadedVectors<S> load_pretrained_vectors(const std::string& path, const std::set<std::string>& wanted) {
    detail::RawVectorFile raw = detail::read_vector_file(path, wanted);
    std::map<std::string, const std::vector<double>*> found;
    for (const auto& [token, values] : raw.rows) found.emplace(token, &values);

    LoadedVectors<S> out;
    out.table.vectors.resize(raw.dim, 0);
    for (const auto& [token, values] : found) {
        Vec<S> col(raw.dim);
        for (Index i = 0; i < raw.dim; ++i) col(i) = static_cast<S>((*values)[static_cast<std::size_t>(i)]);
        out.table.add_token(token, col);
    }
    for (const auto& token : wanted)
        if (!found.count(token)) out.missing.push_back(token);
    return out;
}

// Adds uniform rows in [-bound, bound]^d for the missing tokens.
template <typename S>
void init_oov(EmbeddingTable<S>& table, const std::vector<std::string>& missing, double bound, Rng& rng) {
    if (!(bound > 0.0)) throw ConfigError("init_oov: bound must be positive");
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (const auto& token : missing) {
        Vec<S> col(table.dim());
        for (Index i = 0; i < table.dim(); ++i) col(i) = static_cast<S>(dist(rng));
        table.add_token(token, col);
    }
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct PairIds {
    std::vector<Index> premise;
    std::vector<Index> hypothesis;
    int label = 0;
};

struct SentenceIds {
    std::vector<Index> tokens;
    int label = 0;
};

template <typename S>
PairIds pair_to_ids(const PairExample& ex, const EmbeddingTable<S>& table) {
    return {table.to_ids(ex.premise), table.to_ids(ex.hypothesis), ex.label};
}

template <typename S>
SentenceIds sentence_to_ids(const SentenceExample& ex, const EmbeddingTable<S>& table) {
    return {table.to_ids(ex.tokens), ex.label};
}

using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// One padded side of a batch: embeddings [B x d0 x n_max] with zero columns
// beyond each sequence's length, and a validity mask.
template <typename S>
struct SequenceBatch {
    Tensor<S> x0;
    BoolGrid mask;
    std::vector<Index> lengths;

    Index size() const { return x0.dim(0); }
    Index max_len() const { return x0.dim(2); }

    Tensor<S> embeddings_of(Index b) const {
        Tensor<S> out = Tensor<S>::zeros({x0.dim(1), x0.dim(2)});
        std::copy(x0.data() + b * out.numel(), x0.data() + (b + 1) * out.numel(), out.data());
        return out;
    }

    BoolVec mask_of(Index b) const { return mask.row(b).transpose(); }
};

template <typename S>
struct Batch {
    SequenceBatch<S> first;                   // premise, or the single sentence
    std::optional<SequenceBatch<S>> second;   // hypothesis, pair task only
    std::vector<int> labels;

    Index size() const { return static_cast<Index>(labels.size()); }
};

namespace detail {

template <typename S>
SequenceBatch<S> build_sequence_batch(const std::vector<const std::vector<Index>*>& seqs,
                                      const EmbeddingTable<S>& table) {
    const Index batch = static_cast<Index>(seqs.size());
    Index n_max = 1;
    for (const auto* seq : seqs) n_max = std::max(n_max, static_cast<Index>(seq->size()));
    SequenceBatch<S> out;
    out.x0 = Tensor<S>::zeros({batch, table.dim(), n_max});
    out.mask = BoolGrid::Constant(batch, n_max, false);
    for (Index b = 0; b < batch; ++b) {
        const auto& seq = *seqs[static_cast<std::size_t>(b)];
        if (seq.empty()) throw EmptySequenceError("batch: empty token sequence");
        out.lengths.push_back(static_cast<Index>(seq.size()));
        MatMap<S> slab(out.x0.data() + b * table.dim() * n_max, table.dim(), n_max);
        for (std::size_t i = 0; i < seq.size(); ++i) {
            slab.col(static_cast<Index>(i)) = table.vectors.col(seq[i]);
            out.mask(b, static_cast<Index>(i)) = true;
        }
    }
    return out;
}

inline std::vector<std::size_t> shuffled_order(std::size_t count, Rng& rng) {
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

}  // namespace detail

// Shuffles with the caller's generator, chunks into batches of at most
// `batch_size`, pads with zero vectors, and emits the final partial batch.
template <typename S>
std::vector<Batch<S>> make_pair_batches(const std::vector<PairIds>& examples, const EmbeddingTable<S>& table,
                                        Index batch_size, Rng& rng) {
    if (batch_size < 1) throw ConfigError("make_batches: batch size must be at least 1");
    const auto order = detail::shuffled_order(examples.size(), rng);
    std::vector<Batch<S>> batches;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<const std::vector<Index>*> premises, hypotheses;
        Batch<S> batch;
        for (std::size_t i = start; i < stop; ++i) {
            const auto& ex = examples[order[i]];
            premises.push_back(&ex.premise);
            hypotheses.push_back(&ex.hypothesis);
            batch.labels.push_back(ex.label);
        }
        batch.first = detail::build_sequence_batch(premises, table);
        batch.second = detail::build_sequence_batch(hypotheses, table);
        batches.push_back(std::move(batch));
    }
    return batches;
}

template <typename S>
std::vector<Batch<S>> make_sentence_batches(const std::vector<SentenceIds>& examples,
                                            const EmbeddingTable<S>& table, Index batch_size, Rng& rng) {
    if (batch_size < 1) throw ConfigError("make_batches: batch size must be at least 1");
    const auto order = detail::shuffled_order(examples.size(), rng);
    std::vector<Batch<S>> batches;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<const std::vector<Index>*> seqs;
        Batch<S> batch;
        for (std::size_t i = start; i < stop; ++i) {
            const auto& ex = examples[order[i]];
            seqs.push_back(&ex.tokens);
            batch.labels.push_back(ex.label);
        }
        batch.first = detail::build_sequence_batch(seqs, table);
        batches.push_back(std::move(batch));
    }
    return batches;
}

// ---------------------------------------------------------------------------
// Synthetic fixtures (seeded label-by-keyword pair task)
// ---------------------------------------------------------------------------

struct ToyPairSpec {
    int examples = 64;
    int vocab_size = 50;
    int dim = 8;             // embedding dim of the companion vectors file
    unsigned long long seed = 1234;
};

// Deterministic pair dataset whose label is decided by which keyword token
// appears in the hypothesis. The companion vocabulary is "tok00".."tokNN".
std::vector<PairExample> generate_toy_pairs(const ToyPairSpec& spec);

std::vector<std::string> toy_vocabulary(int vocab_size);

// Writes the dataset in the pair TSV layout.
void write_pair_tsv(const std::string& path, const std::vector<PairExample>& examples);

// Writes a random vectors file covering the toy vocabulary.
void write_toy_vectors(const std::string& path, int vocab_size, int dim, unsigned long long seed);

}  // namespace dsa
