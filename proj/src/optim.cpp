#include "td/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace td::optim {

double cosine_lr(double base_lr, double min_lr, int step, int total_steps) {
    if (total_steps < 1) throw std::invalid_argument("cosine_lr: total_steps must be >= 1");
    if (step < 0 || step >= total_steps) throw std::invalid_argument("cosine_lr: step out of range");
    if (total_steps == 1) return base_lr;
    const double frac = static_cast<double>(step) / (total_steps - 1);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

void AdamW::step(const std::string& name, Tensor& param, const Tensor& grad, double lr) {
    require_same_shape(param, grad, ("AdamW::step " + name).c_str());
    Slot& s = slots_[name];
    if (s.t == 0) {
        s.m = Tensor::zeros(param.shape);
        s.v = Tensor::zeros(param.shape);
    }
    require_same_shape(param, s.m, ("AdamW::step state " + name).c_str());
    ++s.t;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.data[i];
        s.m.data[i] = cfg_.beta1 * s.m.data[i] + (1.0 - cfg_.beta1) * g;
        s.v.data[i] = cfg_.beta2 * s.v.data[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = s.m.data[i] / bc1;
        const double vhat = s.v.data[i] / bc2;
        param.data[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                               cfg_.weight_decay * param.data[i]);
    }
}

}  // namespace td::optim
