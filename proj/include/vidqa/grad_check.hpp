#pragma once

#include <functional>
#include <vector>

#include "vidqa/tensor.hpp"

namespace vidqa {

// Central-difference gradient verification. fn must be a pure function of the
// inputs (rebuild the graph on every call, no dropout). Inputs must be leaf
// tensors with requires_grad set; their payloads are perturbed in place and
// restored. Returns the worst relative error
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// over every coordinate of every input. epsilon must lie in [1e-7, 1e-3].
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                  const std::vector<Tensor>& inputs, double epsilon = 1e-5);

}  // namespace vidqa
