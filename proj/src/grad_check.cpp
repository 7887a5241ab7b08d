#include "adaptparse/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "adaptparse/rng.hpp"

namespace adaptparse {

namespace {

struct Eval {
    double value;
    std::uint64_t kinks;
};

Eval evaluate(const std::function<Tape::Value(Tape&)>& build) {
    Tape tape(DType::F64);
    const Tape::Value loss = build(tape);
    return {tape.value_of(loss).get(0), tape.kink_signature()};
}

}  // namespace

GradCheckReport grad_check(const std::function<Tape::Value(Tape&)>& build,
                           std::span<Tensor* const> params, const GradCheckOptions& opts) {
    for (Tensor* p : params) {
        if (p->dtype() != DType::F64) {
            throw NumericalError("grad_check runs in 64-bit mode; parameter has dtype " +
                                 std::string(dtype_name(p->dtype())));
        }
        p->zero_grad();
    }

    {
        Tape tape(DType::F64);
        const Tape::Value loss = build(tape);
        tape.backward(loss);
    }
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (Tensor* p : params) {
        analytic.push_back(p->grad_ptr() ? *p->grad_ptr() : Tensor::zeros(p->dims(), DType::F64));
    }

    GradCheckReport report;
    Rng rng(derive_seed(opts.seed, "grad_check"));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& theta = *params[pi];
        auto coords = rng.permutation(theta.numel());
        const std::int64_t target =
            std::min<std::int64_t>(theta.numel(), static_cast<std::int64_t>(opts.coords_per_tensor));
        std::int64_t checked_here = 0;
        for (std::size_t ci = 0; ci < coords.size() && checked_here < target; ++ci) {
            const std::int64_t c = coords[ci];
            const double orig = theta.get(c);
            theta.set(c, orig + opts.epsilon);
            const Eval plus = evaluate(build);
            theta.set(c, orig - opts.epsilon);
            const Eval minus = evaluate(build);
            theta.set(c, orig);
            if (plus.kinks != minus.kinks) {
                ++report.skipped;
                continue;
            }
            ++checked_here;
            ++report.checked;
            const double numeric = (plus.value - minus.value) / (2.0 * opts.epsilon);
            const double a = analytic[pi].get(c);
            const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            report.max_rel_error = std::max(report.max_rel_error, rel);
            if (rel > opts.tolerance) {
                std::ostringstream os;
                os << "param " << pi << " coord " << c << ": analytic=" << a << " numeric=" << numeric
                   << " rel=" << rel;
                report.failures.push_back(os.str());
            }
        }
    }
    report.pass = report.checked > 0 && report.failures.empty();
    return report;
}

}  // namespace adaptparse
