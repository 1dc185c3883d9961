#include "advdet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace advdet {

namespace {

double evaluate(const NetworkSpec& spec, const ParameterSet& params, const Tensor& input,
                const LossBuilder& loss, Mode mode) {
  Tape tape;
  const NodeId x = tape.input(input);
  const auto trace = forward(tape, spec, params, x, {mode, false, std::nullopt});
  return tape.value(loss(tape, trace.output))[0];
}

void accumulate(FiniteDiffReport& report, double analytic, double f_plus, double f_minus,
                double f_zero, double h) {
  const double forward_diff = (f_plus - f_zero) / h;
  const double backward_diff = (f_zero - f_minus) / h;
  const double scale = std::max(std::abs(forward_diff), std::abs(backward_diff));
  if (std::abs(forward_diff - backward_diff) > 1e-3 + 1e-2 * scale) {
    ++report.skipped;
    return;
  }
  const double numeric = (f_plus - f_minus) / (2.0 * h);
  const double err =
      std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
  report.max_relative_error = std::max(report.max_relative_error, err);
  ++report.checked;
}

}  // namespace

FiniteDiffReport finite_diff_check(const NetworkSpec& spec, const ParameterSet& params,
                                   const Tensor& input, const LossBuilder& loss,
                                   const FiniteDiffOptions& options) {
  Tape tape;
  const NodeId x = tape.input(input);
  const auto trace = forward(tape, spec, params, x, {options.mode, true, std::nullopt});
  const NodeId l = loss(tape, trace.output);
  const auto grads = tape.backward(l);
  const double f0 = tape.value(l)[0];
  const double h = options.step;

  FiniteDiffReport report;
  if (options.check_input) {
    const Tensor zero(input.shape(), 0.0);
    const Tensor& g = grads.has(x) ? grads.of(x) : zero;
    Tensor probe = input;
    for (std::size_t i = 0; i < probe.size(); ++i) {
      const double orig = probe[i];
      probe[i] = orig + h;
      const double fp = evaluate(spec, params, probe, loss, options.mode);
      probe[i] = orig - h;
      const double fm = evaluate(spec, params, probe, loss, options.mode);
      probe[i] = orig;
      accumulate(report, g[i], fp, fm, f0, h);
    }
  }
  if (options.check_params) {
    ParameterSet probe = params;
    for (auto id : tape.parameter_nodes()) {
      const std::string& key = tape.parameter_key(id);
      const Tensor zero(tape.value(id).shape(), 0.0);
      const Tensor& g = grads.has(id) ? grads.of(id) : zero;
      Tensor& p = probe.get(key);
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = p[i];
        p[i] = orig + h;
        const double fp = evaluate(spec, probe, input, loss, options.mode);
        p[i] = orig - h;
        const double fm = evaluate(spec, probe, input, loss, options.mode);
        p[i] = orig;
        accumulate(report, g[i], fp, fm, f0, h);
      }
    }
  }
  return report;
}

}  // namespace advdet
