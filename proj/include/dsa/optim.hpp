#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dsa/common.hpp"
#include "dsa/error.hpp"
#include "dsa/tensor.hpp"

namespace dsa {

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

// He-normal init (std = sqrt(2/fan_in)) scaled by sqrt of the layer's dropout
// rate. Layers without dropout pass dropout_rate = 1.
template <typename S>
Tensor<S> he_init_scaled(std::vector<Index> shape, Index fan_in, double dropout_rate, Rng& rng) {
    if (fan_in < 1) throw ConfigError("he_init_scaled: fan_in must be at least 1");
    if (!(dropout_rate > 0.0 && dropout_rate <= 1.0))
        throw ConfigError("he_init_scaled: dropout_rate must lie in (0,1]");
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in)) * std::sqrt(dropout_rate);
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor<S> t = Tensor<S>::zeros(std::move(shape), true);
    for (Index i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<S>(dist(rng));
    return t;
}

// ---------------------------------------------------------------------------
// Learning-rate halving on training-loss plateaus
// ---------------------------------------------------------------------------

struct ScheduleState {
    double best_loss = std::numeric_limits<double>::infinity();
    int stall_count = 0;       // consecutive epochs without improvement
    double patience = 0.001;   // improvement must beat best by this margin
    int trigger = 5;           // stalls before the rate is halved
    double lr_multiplier = 1.0;
};

// Improvement means loss < best - patience (strict). `trigger` consecutive
// non-improvements halve the multiplier and reset the counter.
inline double lr_halving_update(ScheduleState& sched, double epoch_train_loss) {
    if (!std::isfinite(epoch_train_loss)) throw NumericError("lr_halving_update: loss is not finite");
    if (epoch_train_loss < sched.best_loss - sched.patience) {
        sched.best_loss = epoch_train_loss;
        sched.stall_count = 0;
    } else {
        ++sched.stall_count;
        if (sched.stall_count >= sched.trigger) {
            sched.lr_multiplier *= 0.5;
            sched.stall_count = 0;
        }
    }
    return sched.lr_multiplier;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void check_grads_finite(const std::vector<Tensor<S>>& params, const char* who) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& g = params[i].grad();
        if (g.size() != static_cast<std::size_t>(params[i].numel()))
            throw ContractError(std::string(who) + ": parameter " + std::to_string(i) + " has no gradient");
        for (S v : g)
            if (!std::isfinite(static_cast<double>(v)))
                throw NumericError(std::string(who) + ": non-finite gradient in parameter " +
                                   std::to_string(i) + "; step aborted");
    }
}

}  // namespace detail

template <typename S>
struct AdamOptions {
    S lr = S(0.001);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
    S l2 = S(0);  // added to gradients as l2 * theta
};

// Bias-corrected Adam. The step is checked for finite gradients up front and
// applied atomically: a bad gradient leaves parameters and state untouched.
template <typename S>
class Adam {
public:
    Adam(std::vector<Tensor<S>> params, AdamOptions<S> opts = {})
        : params_(std::move(params)), opts_(opts) {
        for (const auto& p : params_) {
            first_.push_back(Vec<S>::Zero(p.numel()));
            second_.push_back(Vec<S>::Zero(p.numel()));
        }
    }

    void step(double lr_multiplier = 1.0) {
        detail::check_grads_finite(params_, "adam_step");
        ++steps_;
        const S bc1 = S(1) - std::pow(opts_.beta1, static_cast<S>(steps_));
        const S bc2 = S(1) - std::pow(opts_.beta2, static_cast<S>(steps_));
        const S rate = opts_.lr * static_cast<S>(lr_multiplier);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            VecMap<S> theta(p.data(), p.numel());
            ConstVecMap<S> grad(p.grad_data(), p.numel());
            Vec<S> g = grad;
            if (opts_.l2 != S(0)) g += opts_.l2 * theta;
            first_[i] = opts_.beta1 * first_[i] + (S(1) - opts_.beta1) * g;
            second_[i] = opts_.beta2 * second_[i] + (S(1) - opts_.beta2) * g.cwiseProduct(g);
            const Vec<S> mhat = first_[i] / bc1;
            const Vec<S> vhat = second_[i] / bc2;
            theta -= rate * (mhat.array() / (vhat.array().sqrt() + opts_.eps)).matrix();
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            p.ensure_grad();
            p.zero_grad();
        }
    }

    const std::vector<Tensor<S>>& params() const { return params_; }

private:
    std::vector<Tensor<S>> params_;
    AdamOptions<S> opts_;
    std::vector<Vec<S>> first_, second_;
    long steps_ = 0;
};

template <typename S>
struct AdadeltaOptions {
    S lr = S(1);
    S rho = S(0.9);
    S eps = S(1e-6);
    S l2 = S(0);
};

template <typename S>
class Adadelta {
public:
    Adadelta(std::vector<Tensor<S>> params, AdadeltaOptions<S> opts = {})
        : params_(std::move(params)), opts_(opts) {
        for (const auto& p : params_) {
            acc_grad_.push_back(Vec<S>::Zero(p.numel()));
            acc_update_.push_back(Vec<S>::Zero(p.numel()));
        }
    }

    void step(double lr_multiplier = 1.0) {
        detail::check_grads_finite(params_, "adadelta_step");
        const S rate = opts_.lr * static_cast<S>(lr_multiplier);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            VecMap<S> theta(p.data(), p.numel());
            ConstVecMap<S> grad(p.grad_data(), p.numel());
            Vec<S> g = grad;
            if (opts_.l2 != S(0)) g += opts_.l2 * theta;
            acc_grad_[i] = opts_.rho * acc_grad_[i] + (S(1) - opts_.rho) * g.cwiseProduct(g);
            const Vec<S> delta = ((acc_update_[i].array() + opts_.eps).sqrt() /
                                  (acc_grad_[i].array() + opts_.eps).sqrt()) *
                                 g.array() * S(-1);
            acc_update_[i] = opts_.rho * acc_update_[i] + (S(1) - opts_.rho) * delta.cwiseProduct(delta);
            theta += rate * delta;
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            p.ensure_grad();
            p.zero_grad();
        }
    }

    const std::vector<Tensor<S>>& params() const { return params_; }

private:
    std::vector<Tensor<S>> params_;
    AdadeltaOptions<S> opts_;
    std::vector<Vec<S>> acc_grad_, acc_update_;
};

}  // namespace dsa
