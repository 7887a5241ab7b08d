#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "adaptparse/tensor.hpp"

namespace adaptparse {

struct SgdConfig {
    double lr = 1e-2;
    double momentum = 0.0;
    double weight_decay = 0.0;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Single-tensor update rules. SGD: v <- mu*v + (g + wd*p); p <- p - lr*v.
// Adam: bias-corrected first/second moments, p <- p - lr * m_hat / (sqrt(v_hat) + eps).
// step_count is the 1-based count for this step. A non-finite gradient
// rejects the step, naming the offending parameter.
void sgd_step(Tensor& param, const Tensor& grad, Tensor& momentum, const SgdConfig& cfg,
              const std::string& param_name);
void adam_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::int64_t step_count,
               const AdamConfig& cfg, const std::string& param_name);

class SgdOptimizer {
public:
    SgdOptimizer(std::vector<std::pair<std::string, Tensor*>> params, SgdConfig cfg);

    void zero_grad();
    void step();  // skips parameters that received no gradient

    /// Momentum buffers, named "mom/<param name>"; mutable for restore.
    std::vector<std::pair<std::string, Tensor*>> state_tensors();

private:
    std::vector<std::pair<std::string, Tensor*>> params_;
    std::vector<Tensor> momentum_;
    SgdConfig cfg_;
};

class AdamOptimizer {
public:
    AdamOptimizer(std::vector<std::pair<std::string, Tensor*>> params, AdamConfig cfg);

    void zero_grad();
    void step();

    /// Moment buffers "m/<name>", "v/<name>" plus the f64 scalar "step".
    std::vector<std::pair<std::string, Tensor*>> state_tensors();

private:
    std::vector<std::pair<std::string, Tensor*>> params_;
    std::vector<Tensor> m_, v_;
    Tensor step_count_;  // f64 scalar so it rides the checkpoint format
    AdamConfig cfg_;
};

}  // namespace adaptparse
