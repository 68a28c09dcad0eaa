#pragma once

#include <functional>
#include <string>
#include <vector>

#include "jhgrf/parameters.hpp"
#include "jhgrf/tensor.hpp"

namespace jhgrf {

// Max over entries of |analytic - central difference| / max(1, |central difference|).
// `f` must be deterministic and return a scalar. eps must lie in [1e-7, 1e-3].
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Same measure over every scalar of every parameter in `params`. `loss` reads
// the parameters through their handles; each call must be deterministic.
GradCheckReport grad_check_parameters(const std::function<Tensor()>& loss,
                                      const std::vector<ParameterSet::Entry>& params,
                                      double eps);

}  // namespace jhgrf
