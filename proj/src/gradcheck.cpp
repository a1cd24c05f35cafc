#include "egdp/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "egdp/error.hpp"

namespace egdp {

namespace {

double eval_loss(const LossBuilder& build) {
  ad::Tape tape(false);
  const ad::Var out = build(tape);
  const Tensor& v = out.value();
  if (v.size() != 1) throw ShapeError("check_gradients: loss must be scalar, got " + v.shape_str());
  return v[0];
}

}  // namespace

GradCheckReport check_gradients(ParamStore& params, const LossBuilder& build, const GradCheckOptions& opts,
                                const std::string& prefix) {
  params.zero_grad();
  {
    ad::Tape tape;
    tape.backward(build(tape));
  }

  GradCheckReport rep;
  for (auto& p : params) {
    if (!prefix.empty() && p.name.rfind(prefix, 0) != 0) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + opts.step;
      const double up = eval_loss(build);
      p.value[i] = orig - opts.step;
      const double down = eval_loss(build);
      p.value[i] = orig;

      const double numeric = (up - down) / (2.0 * opts.step);
      const double analytic = p.grad[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), opts.floor});
      const double rel = std::abs(numeric - analytic) / denom;
      const double score = std::isnan(rel) ? INFINITY : rel;
      if (rep.coordinates++ == 0 || score > rep.max_rel_error) {
        rep.max_rel_error = score;
        rep.worst_param = p.name;
        rep.worst_index = i;
        rep.worst_analytic = analytic;
        rep.worst_numeric = numeric;
      }
    }
  }
  params.zero_grad();
  rep.passed = rep.coordinates > 0 && rep.max_rel_error <= opts.tolerance;
  return rep;
}

}  // namespace egdp
