#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "egdp/tensor.hpp"

namespace egdp {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Named parameters in insertion order. Names are namespaced by prefix:
// "theta/" denoiser, "phi/" VAE, "psi/" inverse dynamics.
class ParamStore {
 public:
  std::size_t add(const std::string& name, Tensor init);

  Parameter& at(std::size_t index) { return params_.at(index); }
  const Parameter& at(std::size_t index) const { return params_.at(index); }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t total_elements() const;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one update to every parameter and zeroes the gradients. A
  // non-finite gradient aborts before any parameter is touched.
  void step(ParamStore& params);

  const AdamConfig& config() const noexcept { return cfg_; }
  std::size_t step_count() const noexcept { return t_; }

  // Moment buffers, keyed by parameter name, for checkpointing.
  const std::map<std::string, Tensor>& first_moments() const noexcept { return m_; }
  const std::map<std::string, Tensor>& second_moments() const noexcept { return v_; }
  void restore(std::size_t step_count, std::map<std::string, Tensor> m, std::map<std::string, Tensor> v);

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

}  // namespace egdp
