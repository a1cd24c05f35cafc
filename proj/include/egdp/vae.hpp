#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "egdp/layers.hpp"

namespace egdp::vae {

struct VaeConfig {
  std::size_t horizon = 48;    // T
  std::size_t state_dim = 8;   // D_s
  std::size_t latent_dim = 16; // d_z

  std::size_t input_dim() const noexcept { return horizon * state_dim; }
};

// One-layer encoder (T*D_s -> 2*d_z, split into mu and log sigma^2) and
// one-layer decoder tanh(affine) (d_z -> T*D_s). Inputs are flattened
// expert trajectories, one per row.
struct Vae {
  VaeConfig cfg;
  Dense encoder;
  Dense decoder;

  static Vae create(ParamStore& params, const VaeConfig& cfg, Rng& rng, const std::string& prefix = "phi");

  struct Posterior {
    ad::Var mu;
    ad::Var logvar;
  };
  Posterior encode(Graph& g, ad::Var x) const;
  ad::Var decode(Graph& g, ad::Var z) const;
  // mu + exp(logvar / 2) * eps with eps fixed by the caller.
  static ad::Var reparameterize(Graph& g, const Posterior& post, const Tensor& eps);
};

// Tensor-level convenience wrappers (no gradient recording).
struct Encoding {
  Tensor mu;
  Tensor sigma;
};
Encoding encode(const Vae& vae, ParamStore& params, const Tensor& x);
Tensor decode(const Vae& vae, ParamStore& params, const Tensor& z);

struct BlendConfig {
  double delta = 0.4;  // teacher-forcing probability
};

// One Bernoulli(delta) draw: true selects teacher forcing.
bool draw_teacher_forcing(double delta, Rng& rng);

// Result of the expert branch for a batch.
struct ExpertBranch {
  ad::Var blended;        // B x T*D_s, the implicit condition block
  ad::Var loss;           // L_exp = reconstruction MSE + KL
  ad::Var reconstruction; // MSE term
  ad::Var kl;             // KL term
  std::vector<std::uint8_t> teacher_forced;  // per row
};

// Encodes the batch, decodes one posterior sample per row, computes L_exp on
// that sample and blends per row (teacher forcing with probability delta,
// otherwise the decoded sample). `eps` is B x d_z standard normal noise.
// With detach_decoded the decoded rows enter the blend as constants, so the
// VAE only sees gradients from L_exp.
ExpertBranch expert_branch(Graph& g, const Vae& vae, const Tensor& x_expert, const Tensor& eps,
                           const BlendConfig& cfg, Rng& rng, bool detach_decoded = false);

// Standalone blend of a single flattened trajectory (1 x T*D_s).
Tensor blend(const Vae& vae, ParamStore& params, const Tensor& x_expert, double delta, Rng& rng,
             bool* teacher_forced = nullptr);

// Negative ELBO for a batch with fixed noise.
double vae_loss(const Vae& vae, ParamStore& params, const Tensor& x_expert, const Tensor& eps);

struct FitStep {
  double reconstruction = 0.0;
  double kl = 0.0;
};

// Adam on L_exp alone over the rows of x (N x T*D_s), full batch, fresh
// posterior noise each step. Returns the per-step terms.
std::vector<FitStep> fit_vae(const Vae& vae, ParamStore& params, const Tensor& x, std::size_t steps, double lr,
                             std::uint64_t seed);

// MSE between x and decode(mu(x)).
double reconstruction_mse(const Vae& vae, ParamStore& params, const Tensor& x);

}  // namespace egdp::vae
