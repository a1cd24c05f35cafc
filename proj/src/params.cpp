#include "egdp/params.hpp"

#include <cmath>

#include "egdp/error.hpp"

namespace egdp {

std::size_t ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw ConfigError("ParamStore: duplicate parameter name '" + name + "'");
  Tensor grad(init.shape(), 0.0);
  params_.push_back(Parameter{name, std::move(init), std::move(grad)});
  index_[name] = params_.size() - 1;
  return params_.size() - 1;
}

Parameter& ParamStore::at(const std::string& name) { return params_.at(index_of(name)); }

const Parameter& ParamStore::at(const std::string& name) const { return params_.at(index_of(name)); }

std::size_t ParamStore::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

void Adam::step(ParamStore& params) {
  for (const auto& p : params) {
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
      if (!std::isfinite(p.grad[i])) {
        throw NumericError("Adam: non-finite gradient in '" + p.name + "' at element " + std::to_string(i) +
                           " (step " + std::to_string(t_ + 1) + ")");
      }
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : params) {
    auto& m = m_[p.name];
    auto& v = v_[p.name];
    if (m.size() != p.value.size()) m = Tensor(p.value.shape(), 0.0);
    if (v.size() != p.value.size()) v = Tensor(p.value.shape(), 0.0);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    p.grad.fill(0.0);
  }
}

void Adam::restore(std::size_t step_count, std::map<std::string, Tensor> m, std::map<std::string, Tensor> v) {
  t_ = step_count;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace egdp
