#include "egdp/layers.hpp"

#include <cmath>

#include "egdp/error.hpp"

namespace egdp {

ad::Var Graph::param(std::size_t index) {
  if (index >= params_.size()) throw ConfigError("Graph: parameter index out of range");
  if (bound_.size() < params_.size()) bound_.resize(params_.size(), kUnbound);
  if (bound_[index] == kUnbound) bound_[index] = tape_.param(params_.at(index)).id;
  return ad::Var{&tape_, bound_[index]};
}

Dense Dense::create(ParamStore& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                    Init init) {
  Tensor w(in, out, 0.0);
  if (init == Init::kUniformFanIn) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  }
  Dense d;
  d.weight = params.add(name + "/w", std::move(w));
  d.bias = params.add(name + "/b", Tensor(1, out, 0.0));
  d.in = in;
  d.out = out;
  return d;
}

ad::Var Dense::operator()(Graph& g, ad::Var x) const {
  if (x.cols() != in) {
    throw ShapeError("dense '" + g.params().at(weight).name + "': expected " + std::to_string(in) +
                     " input columns, got " + std::to_string(x.cols()));
  }
  return ad::dense(x, g.param(weight), g.param(bias));
}

Mlp2 Mlp2::create(ParamStore& params, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                  Rng& rng) {
  Mlp2 m;
  m.first = Dense::create(params, name + "/0", in, hidden, rng);
  m.second = Dense::create(params, name + "/1", hidden, out, rng);
  return m;
}

ad::Var Mlp2::operator()(Graph& g, ad::Var x) const { return second(g, ad::gelu(first(g, x))); }

void zero_params(ParamStore& params, const std::string& prefix) {
  for (auto& p : params) {
    if (p.name.rfind(prefix, 0) == 0) p.value.fill(0.0);
  }
}

}  // namespace egdp
