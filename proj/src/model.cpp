#include "egdp/model.hpp"

#include "egdp/error.hpp"

namespace egdp {

egcd::EgcdConfig ModelConfig::egcd() const {
  egcd::EgcdConfig c;
  c.horizon = horizon;
  c.state_dim = state_dim;
  c.model_dim = model_dim;
  c.heads = heads;
  c.ffn_mult = ffn_mult;
  c.depth = depth;
  c.use_cross_attention = use_cross_attention;
  return c;
}

vae::VaeConfig ModelConfig::vae() const { return {horizon, state_dim, latent_dim}; }

invdyn::InvDynConfig ModelConfig::inv() const { return {inv_history, inv_hidden, state_dim}; }

void ModelConfig::validate() const {
  egcd().validate();
  inv().validate();
  if (latent_dim == 0) throw ConfigError("train.latent_dim: must be >= 1");
  if (inv_history + 1 > horizon) throw ConfigError("train.inv_history: window does not fit the horizon");
}

EgdpModel EgdpModel::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  EgdpModel m;
  m.cfg = cfg;
  Rng rng(seed);
  m.net = egcd::Egcd::create(m.params, cfg.egcd(), rng, "theta");
  m.vae = vae::Vae::create(m.params, cfg.vae(), rng, "phi");
  m.inv = invdyn::InverseDynamics::create(m.params, cfg.inv(), rng, "psi");
  return m;
}

}  // namespace egdp
