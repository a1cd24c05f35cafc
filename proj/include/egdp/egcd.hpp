#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "egdp/layers.hpp"

namespace egdp::egcd {

inline constexpr std::size_t kExplicitDim = 2;  // (f(R), f'(C))

struct EgcdConfig {
  std::size_t horizon = 48;   // T
  std::size_t state_dim = 8;  // D_s
  std::size_t model_dim = 64; // d
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t depth = 1;
  std::size_t step_embed_dim = 16;
  std::size_t position_embed_dim = 16;  // trajectory step index of each row
  bool use_cross_attention = true;

  // Expert tokens carry the state plus a known-history indicator.
  std::size_t expert_token_dim() const noexcept { return state_dim + 1; }
  void validate() const;
};

// Sinusoidal embedding of an integer index (diffusion step k or trajectory
// row), `dim` even.
std::vector<double> step_embedding(std::size_t k, std::size_t dim);

// Everything the denoiser sees for a batch of B trajectories. Row blocks of
// T rows belong to one batch item.
struct DenoiserInput {
  ad::Var x_k;                            // B*T x D_s noisy trajectories
  std::vector<std::size_t> k;             // diffusion step per item, in [1, K]
  ad::Var expert;                         // B*T x D_s implicit condition block
  Tensor explicit_cond;                   // B x 2
  std::vector<std::uint8_t> dropped;      // per item: use the learned null condition
  Tensor history;                         // B*T x D_s; rows below history_len are known states
  std::vector<std::size_t> history_len;   // per item, t
};

// Optional introspection of one forward pass.
struct ForwardTrace {
  Tensor query;              // Q of the first block
  Tensor attention_weights;  // (B*heads*T) x tokens, first block
  Tensor h0;                 // first block attention output
};

struct Egcd {
  EgcdConfig cfg;
  Mlp2 query_mlp;          // O' = MLP(x_k ++ emb(k) ++ pos ++ C^g)
  Dense expert_proj;       // (D_s + 1 + pos) -> d
  Dense explicit_proj;     // 2 -> d
  struct Block {
    std::size_t wq = 0, wk = 0, wv = 0;
    Mlp2 ffn;
  };
  std::vector<Block> blocks;
  Mlp2 out_mlp;            // d -> d -> D_s
  std::size_t null_expert = 0;    // T x (D_s + 1)
  std::size_t null_explicit = 0;  // 1 x 2

  static Egcd create(ParamStore& params, const EgcdConfig& cfg, Rng& rng, const std::string& prefix = "theta");

  // Predicts x_0 for every item: B*T x D_s.
  ad::Var forward(Graph& g, const DenoiserInput& in, ForwardTrace* trace = nullptr) const;

  // Inference helper for a single trajectory (T x D_s tensors).
  Tensor predict(ParamStore& params, const Tensor& x_k, std::size_t k, const Tensor& expert,
                 const Tensor& explicit_cond, bool dropped, const Tensor& history, std::size_t history_len) const;
};

}  // namespace egdp::egcd
