#include "relpos/optim.hpp"

#include <cmath>

#include "relpos/errors.hpp"

namespace relpos {

OptimizerKind parse_optimizer_kind(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

const char* optimizer_kind_name(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

Optimizer::Optimizer(OptimizerConfig config, std::vector<Parameter*> params)
    : config_(config), params_(std::move(params)) {
    if (!(config_.lr > 0.0)) throw ConfigError("learning rate must be positive");
    for (auto* p : params_) {
        m_.push_back(Tensor::zeros(p->value.shape()));
        v_.push_back(Tensor::zeros(p->value.shape()));
    }
}

void Optimizer::zero_grad() { zero_grads(params_); }

void Optimizer::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter& p = *params_[k];
        if (!p.trainable) continue;
        auto& m = m_[k];
        auto& v = v_[k];
        const std::size_t n = p.value.numel();
        if (config_.kind == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < n; ++i) {
                m[i] = config_.momentum * m[i] + p.grad[i];
                p.value[i] -= config_.lr * m[i];
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                const double g = p.grad[i];
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p.value[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
            }
        }
        p.value.round_to_dtype();
    }
}

}  // namespace relpos
