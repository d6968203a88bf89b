#pragma once

#include <string>
#include <vector>

#include "relpos/autograd.hpp"

namespace relpos {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-4;
    double momentum = 0.9;  // sgd only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

OptimizerKind parse_optimizer_kind(const std::string& name);
const char* optimizer_kind_name(OptimizerKind kind);

/// SGD with momentum or Adam over a fixed parameter list. Frozen parameters
/// are skipped.
class Optimizer {
public:
    Optimizer(OptimizerConfig config, std::vector<Parameter*> params);

    void step();
    void zero_grad();
    long steps() const { return t_; }
    const OptimizerConfig& config() const { return config_; }

private:
    OptimizerConfig config_;
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    long t_ = 0;
};

}  // namespace relpos
