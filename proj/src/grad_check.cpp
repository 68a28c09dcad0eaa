#include "jhgrf/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace jhgrf {

namespace {

void check_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw std::invalid_argument("grad_check eps must lie in [1e-7, 1e-3]");
  }
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor leaf = Tensor::parameter(x.shape(), x.to_vector());
  ParameterSet::Entry entry{"x", leaf};
  const auto loss = [&] { return f(leaf); };
  return grad_check_parameters(loss, {entry}, eps).max_rel_error;
}

GradCheckReport grad_check_parameters(const std::function<Tensor()>& loss,
                                      const std::vector<ParameterSet::Entry>& params,
                                      double eps) {
  check_eps(eps);
  for (const auto& p : params) p.tensor.impl()->grad.clear();
  {
    Tape tape;
    Tensor value;
    {
      auto rec = tape.record();
      value = loss();
    }
    backward(value, tape);
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    const std::vector<double> analytic =
        t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                    : std::vector<double>(t.size(), 0.0);
    auto values = t.mutable_values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      values[k] = saved + eps;
      const double up = loss().item();
      values[k] = saved - eps;
      const double down = loss().item();
      values[k] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic[k], numeric);
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_parameter = p.name;
        report.worst_index = k;
      }
    }
  }
  return report;
}

}  // namespace jhgrf
