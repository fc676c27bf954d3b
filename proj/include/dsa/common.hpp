#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

namespace dsa {

using Index = Eigen::Index;

// Dense storage is row-major throughout so that trailing dimensions of a
// rank-3 tensor slice into contiguous matrices.
template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
using MatMap = Eigen::Map<MatRM<S>>;

template <typename S>
using ConstMatMap = Eigen::Map<const MatRM<S>>;

template <typename S>
using VecMap = Eigen::Map<Vec<S>>;

template <typename S>
using ConstVecMap = Eigen::Map<const Vec<S>>;

using BoolVec = Eigen::Array<bool, Eigen::Dynamic, 1>;

using Rng = std::mt19937_64;

enum class Mode { kTrain, kEval };

inline Index count_valid(const BoolVec& mask) {
    Index n = 0;
    for (Index i = 0; i < mask.size(); ++i) n += mask[i] ? 1 : 0;
    return n;
}

inline BoolVec all_valid(Index n) { return BoolVec::Constant(n, true); }

}  // namespace dsa
