#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsa/attention.hpp"
#include "dsa/common.hpp"
#include "dsa/data.hpp"
#include "dsa/error.hpp"
#include "dsa/model.hpp"

namespace dsa {

// ---------------------------------------------------------------------------
// PCA over dynamic weight vectors
// ---------------------------------------------------------------------------

struct PcaResult {
    Eigen::VectorXd mean;         // [d]
    Eigen::MatrixXd directions;   // [2 x d], orthonormal rows
    Eigen::Vector2d explained;    // descending, non-negative
    Eigen::MatrixXd projected;    // [N x 2]
};

// Covariance eigendecomposition with a deterministic sign convention: each
// direction's largest-magnitude coordinate is positive.
inline PcaResult pca_2d(const Eigen::MatrixXd& points) {
    const Eigen::Index n = points.rows(), d = points.cols();
    if (n < 3) throw ContractError("pca_2d: need at least 3 points");
    if (d < 1) throw ShapeError("pca_2d: empty feature dimension");

    PcaResult out;
    out.mean = points.colwise().mean();
    Eigen::MatrixXd centered = points.rowwise() - out.mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw NumericError("pca_2d: eigendecomposition failed");

    out.directions.resize(2, d);
    for (int comp = 0; comp < 2; ++comp) {
        const Eigen::Index idx = d - 1 - comp;  // eigenvalues are ascending
        double lambda = 0.0;
        Eigen::VectorXd dir;
        if (idx >= 0) {
            lambda = solver.eigenvalues()(idx);
            dir = solver.eigenvectors().col(idx);
        } else {
            dir = Eigen::VectorXd::Zero(d);  // d == 1: second direction is degenerate
        }
        Eigen::Index peak = 0;
        dir.cwiseAbs().maxCoeff(&peak);
        if (dir(peak) < 0) dir = -dir;
        out.directions.row(comp) = dir.transpose();
        out.explained(comp) = std::max(0.0, lambda);
    }
    out.projected = centered * out.directions.transpose();
    return out;
}

// ---------------------------------------------------------------------------
// Dynamic-vector collection
// ---------------------------------------------------------------------------

// Runs the encoder with trace retention and keeps z_head at iteration r-1
// per sentence. Rows of the result are sentences.
template <typename S>
Eigen::MatrixXd collect_dynamic_vectors(const std::vector<std::vector<Index>>& sentences,
                                        const EmbeddingTable<S>& table, ModelParams<S>& params,
                                        const ModelConfig& cfg, int head) {
    if (cfg.attention != AttentionKind::kDsa)
        throw ContractError("collect_dynamic_vectors: model has no routing attention");
    if (cfg.dsa.iterations < 2)
        throw ContractError("collect_dynamic_vectors: needs at least two routing iterations");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(sentences.size()), cfg.dsa.head_dim);
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        AttentionTrace<S> trace;
        encode_sentence<S>(sentences[i], table, params, cfg, Context<S>::eval(), &trace);
        const Vec<S> z = extract_dynamic_weight_vector(trace, head);
        for (Index c = 0; c < z.size(); ++c) out(static_cast<Eigen::Index>(i), c) = static_cast<double>(z(c));
    }
    return out;
}

// ---------------------------------------------------------------------------
// File emitters
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

// Writes "x,y" rows (LF endings, no header), a "<stem>_variance.txt"
// sidecar with the two explained variances, and a "<stem>.svg" scatter.
inline void export_pca_scatter(const PcaResult& result, const std::string& csv_path) {
    {
        std::ofstream out(csv_path, std::ios::binary);
        if (!out) throw IoError("cannot write scatter file: " + csv_path);
        for (Eigen::Index i = 0; i < result.projected.rows(); ++i)
            out << detail::fmt_g17(result.projected(i, 0)) << "," << detail::fmt_g17(result.projected(i, 1))
                << "\n";
    }
    const std::string stem = csv_path.size() > 4 && csv_path.substr(csv_path.size() - 4) == ".csv"
                                 ? csv_path.substr(0, csv_path.size() - 4)
                                 : csv_path;
    {
        std::ofstream out(stem + "_variance.txt", std::ios::binary);
        if (!out) throw IoError("cannot write variance sidecar for: " + csv_path);
        out << "explained_variance_1\t" << detail::fmt_g17(result.explained(0)) << "\n";
        out << "explained_variance_2\t" << detail::fmt_g17(result.explained(1)) << "\n";
    }
    {
        std::ofstream out(stem + ".svg", std::ios::binary);
        if (!out) throw IoError("cannot write svg for: " + csv_path);
        const double span = std::max(1e-12, result.projected.cwiseAbs().maxCoeff());
        const int size = 480;
        const double scale = (size / 2 - 20) / span;
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
            << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
        out << "<line x1=\"0\" y1=\"" << size / 2 << "\" x2=\"" << size << "\" y2=\"" << size / 2
            << "\" stroke=\"#ccc\"/>\n";
        out << "<line x1=\"" << size / 2 << "\" y1=\"0\" x2=\"" << size / 2 << "\" y2=\"" << size
            << "\" stroke=\"#ccc\"/>\n";
        for (Eigen::Index i = 0; i < result.projected.rows(); ++i) {
            const double x = size / 2 + result.projected(i, 0) * scale;
            const double y = size / 2 - result.projected(i, 1) * scale;
            out << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"2\" fill=\"#1f77b4\"/>\n";
        }
        out << "</svg>\n";
    }
}

inline std::vector<std::array<double, 2>> read_scatter_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scatter file: " + path);
    std::vector<std::array<double, 2>> points;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected 'x,y'");
        points.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
    }
    return points;
}

// ---------------------------------------------------------------------------
// Attention maps
// ---------------------------------------------------------------------------

// JSON document: tokens, per-iteration logits and weights (rows = heads,
// columns = positions), and the final z norm per head.
template <typename S>
void export_attention_map(const std::vector<std::string>& tokens, const AttentionTrace<S>& trace,
                          const std::string& path) {
    if (trace.iterations.empty()) throw ContractError("export_attention_map: empty trace");
    const Index n = trace.iterations.front().weights.rows();
    const Index m = trace.iterations.front().weights.cols();
    if (static_cast<Index>(tokens.size()) != n)
        throw ShapeError("export_attention_map: token count must match trace positions");

    nlohmann::json doc;
    doc["tokens"] = tokens;
    doc["heads"] = m;
    doc["iterations"] = nlohmann::json::array();
    for (std::size_t it = 0; it < trace.iterations.size(); ++it) {
        const auto& step = trace.iterations[it];
        nlohmann::json entry;
        entry["iteration"] = it + 1;
        nlohmann::json weights = nlohmann::json::array();
        nlohmann::json logits = nlohmann::json::array();
        for (Index j = 0; j < m; ++j) {
            nlohmann::json wrow = nlohmann::json::array();
            nlohmann::json qrow = nlohmann::json::array();
            for (Index i = 0; i < n; ++i) {
                wrow.push_back(static_cast<double>(step.weights(i, j)));
                qrow.push_back(static_cast<double>(step.logits(i, j)));
            }
            weights.push_back(std::move(wrow));
            logits.push_back(std::move(qrow));
        }
        entry["weights"] = std::move(weights);
        entry["logits"] = std::move(logits);
        doc["iterations"].push_back(std::move(entry));
    }
    nlohmann::json norms = nlohmann::json::array();
    const auto& final_z = trace.iterations.back().z;
    for (Index j = 0; j < m; ++j) norms.push_back(final_z.row(j).norm());
    doc["z_norms"] = std::move(norms);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write attention map: " + path);
    out << doc.dump(2) << "\n";
}

inline nlohmann::json read_attention_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open attention map: " + path);
    nlohmann::json doc;
    in >> doc;
    return doc;
}

}  // namespace dsa
