#include "adaptparse/optim.hpp"

#include <cmath>

namespace adaptparse {

namespace {

void check_finite(const Tensor& grad, const std::string& name) {
    for (std::int64_t i = 0; i < grad.numel(); ++i) {
        if (!std::isfinite(grad.get(i))) {
            throw NumericalError("non-finite gradient in parameter '" + name + "'");
        }
    }
}

void check_shapes(const Tensor& param, const Tensor& buf, const std::string& name) {
    if (param.dims() != buf.dims()) {
        throw ShapeError("optimizer state for '" + name + "' has dims " + dims_to_string(buf.dims()) +
                         ", parameter has " + dims_to_string(param.dims()));
    }
}

}  // namespace

void sgd_step(Tensor& param, const Tensor& grad, Tensor& momentum, const SgdConfig& cfg,
              const std::string& param_name) {
    check_shapes(param, grad, param_name);
    check_shapes(param, momentum, param_name);
    check_finite(grad, param_name);
    for (std::int64_t i = 0; i < param.numel(); ++i) {
        const double g = grad.get(i) + cfg.weight_decay * param.get(i);
        const double v = cfg.momentum * momentum.get(i) + g;
        momentum.set(i, v);
        param.set(i, param.get(i) - cfg.lr * v);
    }
}

void adam_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::int64_t step_count,
               const AdamConfig& cfg, const std::string& param_name) {
    check_shapes(param, grad, param_name);
    check_shapes(param, m, param_name);
    check_shapes(param, v, param_name);
    check_finite(grad, param_name);
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
    for (std::int64_t i = 0; i < param.numel(); ++i) {
        const double g = grad.get(i);
        const double mi = cfg.beta1 * m.get(i) + (1.0 - cfg.beta1) * g;
        const double vi = cfg.beta2 * v.get(i) + (1.0 - cfg.beta2) * g * g;
        m.set(i, mi);
        v.set(i, vi);
        const double m_hat = mi / bc1;
        const double v_hat = vi / bc2;
        param.set(i, param.get(i) - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
}

SgdOptimizer::SgdOptimizer(std::vector<std::pair<std::string, Tensor*>> params, SgdConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    momentum_.reserve(params_.size());
    for (auto& [name, p] : params_) momentum_.emplace_back(Tensor::zeros(p->dims(), p->dtype()));
}

void SgdOptimizer::zero_grad() {
    for (auto& [name, p] : params_) p->zero_grad();
}

void SgdOptimizer::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor* p = params_[i].second;
        if (!p->grad_ptr()) continue;
        sgd_step(*p, *p->grad_ptr(), momentum_[i], cfg_, params_[i].first);
    }
}

std::vector<std::pair<std::string, Tensor*>> SgdOptimizer::state_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        out.emplace_back("mom/" + params_[i].first, &momentum_[i]);
    }
    return out;
}

AdamOptimizer::AdamOptimizer(std::vector<std::pair<std::string, Tensor*>> params, AdamConfig cfg)
    : params_(std::move(params)), step_count_(Tensor::scalar(0.0, DType::F64)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& [name, p] : params_) {
        m_.emplace_back(Tensor::zeros(p->dims(), p->dtype()));
        v_.emplace_back(Tensor::zeros(p->dims(), p->dtype()));
    }
}

void AdamOptimizer::zero_grad() {
    for (auto& [name, p] : params_) p->zero_grad();
}

void AdamOptimizer::step() {
    const auto t = static_cast<std::int64_t>(step_count_.get(0)) + 1;
    step_count_.set(0, static_cast<double>(t));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor* p = params_[i].second;
        if (!p->grad_ptr()) continue;
        adam_step(*p, *p->grad_ptr(), m_[i], v_[i], t, cfg_, params_[i].first);
    }
}

std::vector<std::pair<std::string, Tensor*>> AdamOptimizer::state_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        out.emplace_back("m/" + params_[i].first, &m_[i]);
        out.emplace_back("v/" + params_[i].first, &v_[i]);
    }
    out.emplace_back("step", &step_count_);
    return out;
}

}  // namespace adaptparse
