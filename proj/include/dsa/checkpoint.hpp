#pragma once

#include <set>
#include <string>
#include <vector>

#include "dsa/config.hpp"
#include "dsa/data.hpp"
#include "dsa/error.hpp"
#include "dsa/model.hpp"

namespace dsa {

// Single-file archive, versioned "dsa-ckpt-v1": the run configuration, the
// vocabulary, and named tensors (parameters, batch-norm running statistics,
// and the frozen embedding matrix) as little-endian IEEE-754 doubles.
struct CheckpointEntry {
    std::string name;
    std::vector<Index> shape;
    std::vector<double> values;
};

struct CheckpointArchive {
    std::string config_text;
    std::vector<std::string> vocab;
    std::vector<CheckpointEntry> entries;

    const CheckpointEntry& find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e;
        throw FormatError("checkpoint: missing entry '" + name + "'");
    }
};

// Atomic: written to a temporary sibling and renamed into place.
void write_checkpoint(const std::string& path, const CheckpointArchive& archive);
CheckpointArchive read_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Model <-> archive glue
// ---------------------------------------------------------------------------

template <typename S>
CheckpointArchive build_archive(const RunConfig& cfg, EmbeddingTable<S>& table, ModelParams<S>& params) {
    CheckpointArchive archive;
    archive.config_text = serialize_run_config(cfg);
    archive.vocab = table.tokens;

    CheckpointEntry emb;
    emb.name = "embedding.weight";
    emb.shape = {table.dim(), table.size()};
    emb.values.reserve(static_cast<std::size_t>(table.vectors.size()));
    for (Index r = 0; r < table.dim(); ++r)
        for (Index c = 0; c < table.size(); ++c) emb.values.push_back(static_cast<double>(table.vectors(r, c)));
    archive.entries.push_back(std::move(emb));

    for (auto& [name, tensor] : named_params(params, cfg.model)) {
        CheckpointEntry e;
        e.name = name;
        e.shape = tensor.shape();
        e.values.assign(tensor.data(), tensor.data() + tensor.numel());
        archive.entries.push_back(std::move(e));
    }
    for (auto& [name, buffer] : named_buffers(params)) {
        CheckpointEntry e;
        e.name = name;
        e.shape = {buffer->size()};
        e.values.reserve(static_cast<std::size_t>(buffer->size()));
        for (Index i = 0; i < buffer->size(); ++i) e.values.push_back(static_cast<double>((*buffer)(i)));
        archive.entries.push_back(std::move(e));
    }
    return archive;
}

template <typename S>
struct RestoredModel {
    RunConfig config;
    EmbeddingTable<S> table;
    ModelParams<S> params;
};

template <typename S>
RestoredModel<S> restore_model(const CheckpointArchive& archive) {
    RestoredModel<S> out;
    out.config = parse_run_config(archive.config_text);
    out.config.model.validate();

    const auto& emb = archive.find("embedding.weight");
    if (emb.shape.size() != 2 || emb.shape[1] != static_cast<Index>(archive.vocab.size()))
        throw FormatError("checkpoint: embedding shape does not match vocabulary");
    out.table.vectors.resize(emb.shape[0], 0);
    for (std::size_t t = 0; t < archive.vocab.size(); ++t) {
        Vec<S> col(emb.shape[0]);
        for (Index r = 0; r < emb.shape[0]; ++r)
            col(r) = static_cast<S>(emb.values[static_cast<std::size_t>(r) * archive.vocab.size() + t]);
        out.table.add_token(archive.vocab[t], col);
    }

    // Build parameter storage of the right shapes, then fill by name.
    Rng scratch(0);
    out.params = init_model_params<S>(out.config.model, scratch);
    std::set<std::string> consumed = {"embedding.weight"};
    for (auto& [name, tensor] : named_params(out.params, out.config.model)) {
        const auto& e = archive.find(name);
        if (e.shape != tensor.shape()) throw FormatError("checkpoint: entry '" + name + "' has wrong shape");
        for (Index i = 0; i < tensor.numel(); ++i)
            tensor.data()[i] = static_cast<S>(e.values[static_cast<std::size_t>(i)]);
        consumed.insert(name);
    }
    for (auto& [name, buffer] : named_buffers(out.params)) {
        const auto& e = archive.find(name);
        if (e.shape.size() != 1 || e.shape[0] != buffer->size())
            throw FormatError("checkpoint: entry '" + name + "' has wrong shape");
        for (Index i = 0; i < buffer->size(); ++i)
            (*buffer)(i) = static_cast<S>(e.values[static_cast<std::size_t>(i)]);
        consumed.insert(name);
    }
    for (const auto& e : archive.entries)
        if (!consumed.count(e.name)) throw FormatError("checkpoint: unexpected entry '" + e.name + "'");
    return out;
}

}  // namespace dsa
