#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "egdp/autodiff.hpp"
#include "egdp/params.hpp"
#include "egdp/rng.hpp"

namespace egdp {

// Binds ParamStore entries onto one tape, each at most once.
class Graph {
 public:
  Graph(ad::Tape& tape, ParamStore& params) : tape_(tape), params_(params), bound_(params.size(), kUnbound) {}

  ad::Tape& tape() noexcept { return tape_; }
  ParamStore& params() noexcept { return params_; }
  ad::Var param(std::size_t index);
  ad::Var param(const std::string& name) { return param(params_.index_of(name)); }
  ad::Var constant(Tensor t) { return tape_.constant(std::move(t)); }

 private:
  static constexpr std::size_t kUnbound = static_cast<std::size_t>(-1);
  ad::Tape& tape_;
  ParamStore& params_;
  std::vector<std::size_t> bound_;
};

enum class Init { kUniformFanIn, kZero };

// Weight in x out, initialized U(-1/sqrt(in), 1/sqrt(in)); bias zero.
struct Dense {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;

  static Dense create(ParamStore& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                      Init init = Init::kUniformFanIn);
  ad::Var operator()(Graph& g, ad::Var x) const;
};

// dense -> GELU -> dense
struct Mlp2 {
  Dense first;
  Dense second;

  static Mlp2 create(ParamStore& params, const std::string& name, std::size_t in, std::size_t hidden,
                     std::size_t out, Rng& rng);
  ad::Var operator()(Graph& g, ad::Var x) const;
};

// Fills every parameter whose name starts with `prefix` with zeros.
void zero_params(ParamStore& params, const std::string& prefix);

}  // namespace egdp
