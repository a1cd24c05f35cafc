#pragma once

#include <cstddef>
#include <cstdint>

#include "egdp/auction.hpp"
#include "egdp/dataset.hpp"
#include "egdp/rng.hpp"
#include "egdp/tensor.hpp"

namespace egdp::testing {

// Normalized random dataset of the requested width. Only the fields the
// training graph reads are filled.
inline data::Dataset random_dataset(std::size_t T, std::size_t D, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  data::Dataset d;
  d.horizon = T;
  d.state_dim = D;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor full(T + 1, D);
    for (std::size_t j = 0; j < full.size(); ++j) full[j] = rng.uniform(-1.0, 1.0);
    Tensor states(T, D);
    std::copy(full.ptr() + D, full.ptr() + full.size(), states.ptr());
    Tensor expert(T, D);
    for (std::size_t j = 0; j < expert.size(); ++j) expert[j] = rng.uniform(-0.9, 0.9);
    auction::EpisodeRecord ep;
    for (std::size_t t = 0; t < T; ++t) ep.steps.push_back({t, {}, rng.normal() * 0.1, 0.0, 0.0, 0});
    d.episodes.push_back(ep);
    d.expert_of.push_back(i);
    d.full_states.push_back(full);
    d.states.push_back(states);
    d.expert_states.push_back(expert);
    d.f_return.push_back(rng.uniform());
    d.f_constraint.push_back(rng.uniform());
  }
  return d;
}

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace egdp::testing
