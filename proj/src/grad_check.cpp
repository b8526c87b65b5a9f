#include "vidqa/grad_check.hpp"

#include <cmath>
#include <stdexcept>

#include "vidqa/errors.hpp"

namespace vidqa {

namespace {

double eval_scalar(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                   const std::vector<Tensor>& inputs) {
  Tensor out = fn(inputs);
  if (out.size() != 1)
    throw ShapeError("grad_check: fn must return a scalar, got " +
                     shape_str(out.shape()));
  double v = out.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: fn returned a non-finite value");
  return v;
}

}  // namespace

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                  const std::vector<Tensor>& inputs, double epsilon) {
  if (epsilon < 1e-7 || epsilon > 1e-3)
    throw std::invalid_argument("grad_check: epsilon must be in [1e-7, 1e-3], got " +
                                std::to_string(epsilon));
  for (const Tensor& t : inputs)
    if (!t.defined() || !t.requires_grad())
      throw std::invalid_argument("grad_check: every input must require gradients");

  for (const Tensor& t : inputs) t.zero_grad();
  Tensor loss = fn(inputs);
  if (loss.size() != 1)
    throw ShapeError("grad_check: fn must return a scalar, got " +
                     shape_str(loss.shape()));
  if (!std::isfinite(loss.item()))
    throw NumericError("grad_check: fn returned a non-finite value");
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const Tensor& t : inputs) analytic.push_back(t.grad());

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor t = inputs[k];
    std::vector<double>& x = t.raw_value();
    for (std::size_t i = 0; i < x.size(); ++i) {
      double saved = x[i];
      x[i] = saved + epsilon;
      double up = eval_scalar(fn, inputs);
      x[i] = saved - epsilon;
      double down = eval_scalar(fn, inputs);
      x[i] = saved;
      double numeric = (up - down) / (2.0 * epsilon);
      double a = analytic[k][i];
      double err = std::abs(a - numeric) /
                   std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace vidqa
