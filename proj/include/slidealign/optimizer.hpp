#pragma once

#include <cstdint>
#include <vector>

#include "slidealign/param.hpp"

namespace sa {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard Adam with bias correction. Moment buffers follow the parameter
// list order, which is fixed for a given model.
class Adam {
public:
    explicit Adam(std::vector<Parameter*> params, AdamConfig cfg = {});

    // One update from the gradients currently held in the parameters.
    void step(double lr);

    int64_t steps() const { return step_; }

private:
    std::vector<Parameter*> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    int64_t step_ = 0;
};

// Triangular wave: base_lr at step 0, max_lr at half a cycle, back to base_lr
// at a full cycle.
struct CyclicLr {
    double base_lr = 0.0;
    double max_lr = 0.0;
    int64_t cycle_len_steps = 1;

    double at(int64_t step) const;
};

}  // namespace sa
