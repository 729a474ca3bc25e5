#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "td/tensor.hpp"

namespace td::optim {

// Cosine annealing from base_lr down to min_lr over total_steps; step 0
// returns base_lr, the last step returns min_lr.
double cosine_lr(double base_lr, double min_lr, int step, int total_steps);

// AdamW: Adam moments with bias correction, weight decay applied directly to
// the parameters (decoupled from the gradient).
struct AdamWConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    // One update for the named parameter; lr overrides the configured rate so
    // a schedule can drive it.
    void step(const std::string& name, Tensor& param, const Tensor& grad, double lr);
    void step(const std::string& name, Tensor& param, const Tensor& grad) {
        step(name, param, grad, cfg_.lr);
    }

    const AdamWConfig& config() const { return cfg_; }

private:
    struct Slot {
        Tensor m, v;
        long t = 0;
    };
    AdamWConfig cfg_;
    std::unordered_map<std::string, Slot> slots_;
};

}  // namespace td::optim
