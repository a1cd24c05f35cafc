#include "egdp/vae.hpp"

#include <cmath>

#include "egdp/error.hpp"

namespace egdp::vae {

Vae Vae::create(ParamStore& params, const VaeConfig& cfg, Rng& rng, const std::string& prefix) {
  if (cfg.horizon == 0 || cfg.state_dim == 0 || cfg.latent_dim == 0) throw ConfigError("vae: dimensions must be >= 1");
  Vae v;
  v.cfg = cfg;
  v.encoder = Dense::create(params, prefix + "/encoder", cfg.input_dim(), 2 * cfg.latent_dim, rng);
  v.decoder = Dense::create(params, prefix + "/decoder", cfg.latent_dim, cfg.input_dim(), rng);
  return v;
}

Vae::Posterior Vae::encode(Graph& g, ad::Var x) const {
  if (x.cols() != cfg.input_dim()) {
    throw ShapeError("vae encode: expected " + std::to_string(cfg.input_dim()) + " columns, got " +
                     std::to_string(x.cols()));
  }
  const ad::Var h = encoder(g, x);
  return {ad::slice_cols(h, 0, cfg.latent_dim), ad::slice_cols(h, cfg.latent_dim, cfg.latent_dim)};
}

ad::Var Vae::decode(Graph& g, ad::Var z) const {
  if (z.cols() != cfg.latent_dim) {
    throw ShapeError("vae decode: expected latent width " + std::to_string(cfg.latent_dim) + ", got " +
                     std::to_string(z.cols()));
  }
  return ad::tanh(decoder(g, z));
}

ad::Var Vae::reparameterize(Graph& g, const Posterior& post, const Tensor& eps) {
  const ad::Var sigma = ad::exp(ad::scale(post.logvar, 0.5));
  return ad::add(post.mu, ad::mul(sigma, g.constant(eps)));
}

Encoding encode(const Vae& vae, ParamStore& params, const Tensor& x) {
  ad::Tape tape(false);
  Graph g(tape, params);
  const std::size_t width = vae.cfg.input_dim();
  // Either one trajectory as T x D_s or a batch of flattened rows.
  const bool single = x.rows() == vae.cfg.horizon && x.cols() == vae.cfg.state_dim;
  if (!single && x.cols() != width) {
    throw ShapeError("vae encode: expected " + std::to_string(vae.cfg.horizon) + "x" +
                     std::to_string(vae.cfg.state_dim) + " or Bx" + std::to_string(width) + ", got " + x.shape_str());
  }
  Tensor in = x;
  in.reshape({x.size() / width, width});
  const auto post = vae.encode(g, g.constant(std::move(in)));
  Encoding e{post.mu.value(), post.logvar.value()};
  for (std::size_t i = 0; i < e.sigma.size(); ++i) e.sigma[i] = std::exp(0.5 * e.sigma[i]);
  return e;
}

Tensor decode(const Vae& vae, ParamStore& params, const Tensor& z) {
  ad::Tape tape(false);
  Graph g(tape, params);
  return vae.decode(g, g.constant(z)).value();
}

bool draw_teacher_forcing(double delta, Rng& rng) {
  if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("blend.delta: must lie in [0, 1]");
  return rng.uniform() < delta;
}

ExpertBranch expert_branch(Graph& g, const Vae& vae, const Tensor& x_expert, const Tensor& eps,
                           const BlendConfig& cfg, Rng& rng, bool detach_decoded) {
  const std::size_t batch = x_expert.rows();
  if (eps.rows() != batch || eps.cols() != vae.cfg.latent_dim) {
    throw ShapeError("expert_branch: noise " + eps.shape_str() + " does not match batch " + std::to_string(batch));
  }
  const ad::Var x = g.constant(x_expert);
  const auto post = vae.encode(g, x);
  const ad::Var z = Vae::reparameterize(g, post, eps);
  const ad::Var decoded = vae.decode(g, z);

  ExpertBranch out;
  out.reconstruction = ad::mse(decoded, x);
  out.kl = ad::kl_standard_normal(post.mu, post.logvar);
  out.loss = ad::add(out.reconstruction, out.kl);

  out.teacher_forced.resize(batch);
  for (std::size_t i = 0; i < batch; ++i) out.teacher_forced[i] = draw_teacher_forcing(cfg.delta, rng) ? 1 : 0;
  const ad::Var df = detach_decoded ? g.constant(decoded.value()) : decoded;
  out.blended = ad::select_rows(df, x, out.teacher_forced);
  return out;
}

Tensor blend(const Vae& vae, ParamStore& params, const Tensor& x_expert, double delta, Rng& rng,
             bool* teacher_forced) {
  const bool tf = draw_teacher_forcing(delta, rng);
  if (teacher_forced) *teacher_forced = tf;
  if (tf) return x_expert;
  const Encoding e = encode(vae, params, x_expert);
  Tensor z(e.mu.rows(), e.mu.cols());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = e.mu[i] + e.sigma[i] * rng.normal();
  Tensor out = decode(vae, params, z);
  out.reshape(x_expert.shape());
  return out;
}

double vae_loss(const Vae& vae, ParamStore& params, const Tensor& x_expert, const Tensor& eps) {
  ad::Tape tape(false);
  Graph g(tape, params);
  const ad::Var x = g.constant(x_expert);
  const auto post = vae.encode(g, x);
  const ad::Var decoded = vae.decode(g, Vae::reparameterize(g, post, eps));
  const double loss = ad::add(ad::mse(decoded, x), ad::kl_standard_normal(post.mu, post.logvar)).value()[0];
  if (!std::isfinite(loss)) throw NumericError("vae_loss: non-finite loss");
  return loss;
}

std::vector<FitStep> fit_vae(const Vae& vae, ParamStore& params, const Tensor& x, std::size_t steps, double lr,
                             std::uint64_t seed) {
  Rng rng(seed);
  Adam adam(AdamConfig{lr, 0.9, 0.999, 1e-8});
  std::vector<FitStep> out;
  out.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    Tensor eps(x.rows(), vae.cfg.latent_dim);
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
    ad::Tape tape;
    Graph g(tape, params);
    const ExpertBranch b = expert_branch(g, vae, x, eps, {1.0}, rng);
    out.push_back({b.reconstruction.value()[0], b.kl.value()[0]});
    if (!std::isfinite(b.loss.value()[0])) throw NumericError("fit_vae: non-finite loss at step " + std::to_string(s + 1));
    tape.backward(b.loss);
    adam.step(params);
  }
  return out;
}

double reconstruction_mse(const Vae& vae, ParamStore& params, const Tensor& x) {
  const Encoding e = encode(vae, params, x);
  const Tensor y = decode(vae, params, e.mu);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - x[i]) * (y[i] - x[i]);
  return s / static_cast<double>(y.size());
}

}  // namespace egdp::vae
