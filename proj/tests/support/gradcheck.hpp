#pragma once

#include "centrifuge/autograd.hpp"
#include "centrifuge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Fourth-order central difference of eval() with respect to p.value[i].
template <typename Eval>
double central_difference(centrifuge::Parameter& p, std::size_t i, double h, Eval&& eval) {
    const double orig = p.value[i];
    auto at = [&](double x) {
        p.value[i] = x;
        return eval();
    };
    const double d1 = at(orig + h) - at(orig - h);
    const double d2 = at(orig + 2 * h) - at(orig - 2 * h);
    p.value[i] = orig;
    return (8.0 * d1 - d2) / (12.0 * h);
}

struct GradCheckResult {
    double max_rel = 0.0;
    double max_abs = 0.0;
    std::size_t checked = 0;
};

// `loss` builds a scalar on the tape from the bound parameters. Every
// `stride`-th element of every parameter is compared.
using LossFn = std::function<centrifuge::Var(centrifuge::Tape&, const std::vector<centrifuge::Var>&)>;

inline GradCheckResult gradcheck(std::vector<centrifuge::Parameter*> params, const LossFn& loss, double h = 1e-4,
                                 std::size_t stride = 1) {
    using namespace centrifuge;
    for (auto* p : params) p->zero_grad();
    {
        Tape tape;
        std::vector<Var> vars;
        for (auto* p : params) vars.push_back(tape.param(*p));
        tape.backward(loss(tape, vars));
    }
    auto eval = [&] {
        Tape tape;
        std::vector<Var> vars;
        for (auto* p : params) vars.push_back(tape.param(static_cast<const Parameter&>(*p)));
        return tape.value(loss(tape, vars))[0];
    };
    GradCheckResult r;
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->value.size(); i += stride) {
            const double orig = p->value[i];
            const double numeric = central_difference(*p, i, h, eval);
            r.max_rel = std::max(r.max_rel, relative_error(p->grad[i], numeric));
            r.max_abs = std::max(r.max_abs, std::abs(p->grad[i] - numeric));
            ++r.checked;
        }
    }
    return r;
}

} // namespace testutil
