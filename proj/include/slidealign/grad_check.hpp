#pragma once

#include <algorithm>
#include <functional>
#include <span>

#include "slidealign/tape.hpp"

namespace sa {

// Scalar-graph builder: records a forward pass on the given tape and returns
// the loss node. Must be re-runnable, reading parameter values at call time.
using GraphBuilder = std::function<NodeId(Tape&)>;

// Central-difference gradient check over every element of every parameter.
// Returns the maximum relative error between analytic and numeric gradients,
// where rel = |a - n| / max(|a|, |n|, 1e-5); if both gradients are exactly
// zero the error is zero. The 1e-5 floor is the credible resolution of the
// central-difference oracle itself (|f| * machine-eps / h reaches ~1e-10 on
// deep graphs, so gradients below the floor are compared absolutely).
// h must lie in (0, 1e-3].
inline double grad_check(const GraphBuilder& build, std::span<Parameter* const> params,
                         double h = 1e-5) {
    require(h > 0.0 && h <= 1e-3, ErrKind::contract, "grad_check step h must be in (0, 1e-3]");

    auto eval = [&]() -> double {
        Tape tape;
        const NodeId loss = build(tape);
        const double v = tape.value(loss).item();
        require(std::isfinite(v), ErrKind::numeric, "grad_check forward produced a non-finite loss");
        return v;
    };

    for (Parameter* p : params) p->zero_grad();
    {
        Tape tape;
        const NodeId loss = build(tape);
        tape.backward(loss);
    }

    double max_rel = 0.0;
    for (Parameter* p : params) {
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + h;
            const double fp = eval();
            p->value[i] = saved - h;
            const double fm = eval();
            p->value[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = p->grad[i];
            const double mag = std::max(std::abs(analytic), std::abs(numeric));
            if (mag == 0.0) continue;
            max_rel = std::max(max_rel, std::abs(analytic - numeric) / std::max(mag, 1e-5));
        }
    }
    return max_rel;
}

}  // namespace sa
