#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "egdp/gradcheck.hpp"

namespace egdp {

struct GradSuiteConfig {
  std::size_t horizon = 8;
  std::size_t state_dim = 4;
  std::size_t model_dim = 16;
  std::size_t heads = 2;
  std::size_t latent_dim = 4;
  std::size_t batch = 2;
  std::uint64_t seed = 7;
  GradCheckOptions options;
};

struct ComponentCheck {
  std::string component;
  GradCheckReport report;
  double seconds = 0.0;
};

// Central-difference checks of the EGCD block (with and without cross
// attention), the VAE, inverse dynamics and the full training loss, at desk
// sizes with every parameter nudged off its initialization.
std::vector<ComponentCheck> run_gradient_suite(const GradSuiteConfig& cfg = {});

}  // namespace egdp
