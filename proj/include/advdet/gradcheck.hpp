#pragma once

#include <functional>

#include "advdet/network.hpp"

namespace advdet {

// Builds a scalar loss on top of the network output node.
using LossBuilder = std::function<NodeId(Tape&, NodeId output)>;

struct FiniteDiffOptions {
  double step = 1e-5;
  bool check_input = true;
  bool check_params = true;
  Mode mode = Mode::kEval;
};

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose one-sided differences disagree, i.e. that sit on a
  // kink (max-pool tie, relu at zero) where no unique derivative exists.
  std::size_t skipped = 0;
};

/// Compares reverse-mode gradients with central differences over every input
/// and trainable-parameter coordinate. Per-coordinate error is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
FiniteDiffReport finite_diff_check(const NetworkSpec& spec, const ParameterSet& params,
                                   const Tensor& input, const LossBuilder& loss,
                                   const FiniteDiffOptions& options = {});

}  // namespace advdet
