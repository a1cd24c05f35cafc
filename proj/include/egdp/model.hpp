#pragma once

#include <cstddef>
#include <cstdint>

#include "egdp/egcd.hpp"
#include "egdp/inverse_dynamics.hpp"
#include "egdp/params.hpp"
#include "egdp/vae.hpp"

namespace egdp {

struct ModelConfig {
  std::size_t horizon = 48;
  std::size_t state_dim = 8;
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t depth = 1;
  std::size_t latent_dim = 16;
  std::size_t inv_history = 4;
  std::size_t inv_hidden = 64;
  bool use_cross_attention = true;

  egcd::EgcdConfig egcd() const;
  vae::VaeConfig vae() const;
  invdyn::InvDynConfig inv() const;
  void validate() const;
};

// Theta (denoiser), phi (VAE) and psi (inverse dynamics) in one store.
struct EgdpModel {
  ModelConfig cfg;
  ParamStore params;
  vae::Vae vae;
  egcd::Egcd net;
  invdyn::InverseDynamics inv;

  static EgdpModel create(const ModelConfig& cfg, std::uint64_t seed);
};

}  // namespace egdp
