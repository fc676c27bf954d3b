#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dsa/error.hpp"
#include "dsa/ops.hpp"
#include "dsa/tensor.hpp"

namespace dsa {

struct GradCheckOptions {
    double step = 1e-5;
    // Coordinates sampled per parameter tensor; <= 0 checks every coordinate.
    int coords_per_param = -1;
    unsigned long long seed = 7;
};

// Central-difference check of reverse-mode gradients. `forward` must rebuild
// the loss from the current parameter values on every call and be
// deterministic (seed any dropout inside it).
template <typename S, typename Forward>
double grad_check(Forward&& forward, std::vector<Tensor<S>> params, const GradCheckOptions& opts = {}) {
    Tape<S> tape;
    Tensor<S> loss = forward(&tape);
    if (!std::isfinite(static_cast<double>(loss.item())))
        throw NumericError("grad_check: objective is not finite at the evaluation point");
    for (auto& p : params) {
        p.ensure_grad();
        p.zero_grad();
    }
    backward(loss, tape);

    Rng rng(opts.seed);
    double max_err = 0.0;
    for (auto& p : params) {
        std::vector<Index> coords;
        if (opts.coords_per_param > 0 && p.numel() > opts.coords_per_param) {
            std::uniform_int_distribution<Index> pick(0, p.numel() - 1);
            for (int i = 0; i < opts.coords_per_param; ++i) coords.push_back(pick(rng));
        } else {
            coords.resize(static_cast<std::size_t>(p.numel()));
            for (Index i = 0; i < p.numel(); ++i) coords[static_cast<std::size_t>(i)] = i;
        }
        for (Index c : coords) {
            const S saved = p.data()[c];
            const S h = static_cast<S>(opts.step);
            p.data()[c] = saved + h;
            const double up = static_cast<double>(forward(nullptr).item());
            p.data()[c] = saved - h;
            const double down = static_cast<double>(forward(nullptr).item());
            p.data()[c] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("grad_check: objective is not finite at a perturbed point");
            const double numeric = (up - down) / (2.0 * static_cast<double>(h));
            const double analytic = static_cast<double>(p.grad()[static_cast<std::size_t>(c)]);
            const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
            max_err = std::max(max_err, std::abs(analytic - numeric) / denom);
        }
    }
    return max_err;
}

}  // namespace dsa
