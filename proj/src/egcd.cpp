#include "egdp/egcd.hpp"

#include <cmath>

#include "egdp/error.hpp"

namespace egdp::egcd {

void EgcdConfig::validate() const {
  if (horizon == 0) throw ConfigError("egcd.horizon: must be >= 1");
  if (state_dim == 0) throw ConfigError("egcd.state_dim: must be >= 1");
  if (model_dim == 0 || heads == 0 || model_dim % heads != 0) {
    throw ConfigError("egcd.model_dim: must be a positive multiple of egcd.heads");
  }
  if (ffn_mult == 0) throw ConfigError("egcd.ffn_mult: must be >= 1");
  if (depth == 0) throw ConfigError("egcd.depth: must be >= 1");
  if (step_embed_dim == 0 || step_embed_dim % 2 != 0) throw ConfigError("egcd.step_embed_dim: must be even and >= 2");
  if (position_embed_dim == 0 || position_embed_dim % 2 != 0) {
    throw ConfigError("egcd.position_embed_dim: must be even and >= 2");
  }
}

std::vector<double> step_embedding(std::size_t k, std::size_t dim) {
  std::vector<double> e(dim);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    e[2 * i] = std::sin(static_cast<double>(k) * freq);
    e[2 * i + 1] = std::cos(static_cast<double>(k) * freq);
  }
  return e;
}

Egcd Egcd::create(ParamStore& params, const EgcdConfig& cfg, Rng& rng, const std::string& prefix) {
  cfg.validate();
  Egcd n;
  n.cfg = cfg;
  const std::size_t d = cfg.model_dim;
  const std::size_t P = cfg.position_embed_dim;
  n.query_mlp =
      Mlp2::create(params, prefix + "/query", cfg.state_dim + cfg.step_embed_dim + P + kExplicitDim, d, d, rng);
  n.expert_proj = Dense::create(params, prefix + "/expert_proj", cfg.expert_token_dim() + P, d, rng);
  n.explicit_proj = Dense::create(params, prefix + "/explicit_proj", kExplicitDim, d, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  const auto square = [&](const std::string& name) {
    Tensor w(d, d);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
    return params.add(name, std::move(w));
  };
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::string p = prefix + "/block" + std::to_string(l);
    Block b;
    b.wq = square(p + "/wq");
    b.wk = square(p + "/wk");
    b.wv = square(p + "/wv");
    b.ffn = Mlp2::create(params, p + "/ffn", d, cfg.ffn_mult * d, d, rng);
    n.blocks.push_back(b);
  }
  n.out_mlp = Mlp2::create(params, prefix + "/out", d, d, cfg.state_dim, rng);
  n.null_expert = params.add(prefix + "/null_expert", Tensor(cfg.horizon, cfg.expert_token_dim(), 0.0));
  n.null_explicit = params.add(prefix + "/null_explicit", Tensor(1, kExplicitDim, 0.0));
  return n;
}

ad::Var Egcd::forward(Graph& g, const DenoiserInput& in, ForwardTrace* trace) const {
  using namespace ad;
  const std::size_t T = cfg.horizon, D = cfg.state_dim, d = cfg.model_dim;
  const std::size_t B = in.k.size();
  if (B == 0) throw ShapeError("egcd: empty batch");
  const auto expect = [&](const Tensor& t, std::size_t r, std::size_t c, const char* what) {
    if (t.rows() != r || t.cols() != c) {
      throw ShapeError(std::string("egcd: ") + what + " is " + t.shape_str() + ", expected " + std::to_string(r) +
                       "x" + std::to_string(c));
    }
  };
  expect(in.x_k.value(), B * T, D, "x_k");
  expect(in.expert.value(), B * T, D, "expert block");
  expect(in.explicit_cond, B, kExplicitDim, "explicit condition");
  expect(in.history, B * T, D, "history");
  if (in.dropped.size() != B || in.history_len.size() != B) throw ShapeError("egcd: per-item vectors must have B entries");

  std::vector<std::uint8_t> drop_rows(B * T), hist_rows(B * T);
  for (std::size_t b = 0; b < B; ++b) {
    if (in.history_len[b] > T) throw ShapeError("egcd: history longer than the horizon");
    for (std::size_t r = 0; r < T; ++r) {
      drop_rows[b * T + r] = in.dropped[b];
      hist_rows[b * T + r] = r < in.history_len[b] ? 1 : 0;
    }
  }

  // Implicit block: expert rows (or the null block), then known history.
  const Var zero_col = g.constant(Tensor(B * T, 1, 0.0));
  const Var expert_parts[] = {in.expert, zero_col};
  Var tokens_in = concat_cols(expert_parts);
  tokens_in = select_rows(tokens_in, tile_rows(g.param(null_expert), B), drop_rows);
  Tensor hist_tokens(B * T, D + 1);
  for (std::size_t i = 0; i < B * T; ++i) {
    for (std::size_t j = 0; j < D; ++j) hist_tokens(i, j) = in.history(i, j);
    hist_tokens(i, D) = 1.0;
  }
  tokens_in = select_rows(tokens_in, g.constant(std::move(hist_tokens)), hist_rows);

  // Row r of every item carries the embedding of trajectory step r.
  const std::size_t P = cfg.position_embed_dim;
  Tensor pos(B * T, P);
  for (std::size_t r = 0; r < T; ++r) {
    const auto e = step_embedding(r, P);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < P; ++j) pos(b * T + r, j) = e[j];
  }
  const Var pos_var = g.constant(std::move(pos));
  const Var token_parts[] = {tokens_in, pos_var};
  tokens_in = concat_cols(token_parts);

  const Var explicit_eff = select_rows(g.constant(in.explicit_cond), tile_rows(g.param(null_explicit), B), in.dropped);

  // Query: O = x_k ++ emb(k) ++ pos ++ C^g per row.
  Tensor emb(B * T, cfg.step_embed_dim);
  for (std::size_t b = 0; b < B; ++b) {
    const auto e = step_embedding(in.k[b], cfg.step_embed_dim);
    for (std::size_t r = 0; r < T; ++r)
      for (std::size_t j = 0; j < e.size(); ++j) emb(b * T + r, j) = e[j];
  }
  const Var o_parts[] = {in.x_k, g.constant(std::move(emb)), pos_var, repeat_rows(explicit_eff, T)};
  Var o = query_mlp(g, concat_cols(o_parts));

  const Var expert_tok = expert_proj(g, tokens_in);      // B*T x d
  const Var explicit_tok = explicit_proj(g, explicit_eff);  // B x d
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Var out;
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const Block& blk = blocks[l];
    const Var q = layer_norm(o);
    // Per item: T expert tokens then the explicit token, or for the
    // self-attention ablation the T queries plus one bias token.
    std::vector<Var> seq;
    seq.reserve(2 * B);
    Var bias_tok;
    if (!cfg.use_cross_attention) bias_tok = add(explicit_tok, segment_mean_rows(expert_tok, T));
    for (std::size_t b = 0; b < B; ++b) {
      seq.push_back(slice_rows(cfg.use_cross_attention ? expert_tok : q, b * T, T));
      seq.push_back(slice_rows(cfg.use_cross_attention ? explicit_tok : bias_tok, b, 1));
    }
    const Var kv = concat_rows(seq);
    Tensor* weights = (trace && l == 0) ? &trace->attention_weights : nullptr;
    const Var h0 = attention(matmul(q, g.param(blk.wq)), matmul(kv, g.param(blk.wk)), matmul(kv, g.param(blk.wv)),
                             B, cfg.heads, scale, weights);
    if (trace && l == 0) {
      trace->query = q.value();
      trace->h0 = h0.value();
    }
    const Var h1 = blk.ffn(g, layer_norm(add(h0, o)));
    out = add(h1, h0);
    o = out;
  }
  return out_mlp(g, out);
}

Tensor Egcd::predict(ParamStore& params, const Tensor& x_k, std::size_t k, const Tensor& expert,
                     const Tensor& explicit_cond, bool dropped, const Tensor& history, std::size_t history_len) const {
  ad::Tape tape(false);
  Graph g(tape, params);
  DenoiserInput in;
  in.x_k = g.constant(x_k);
  in.k = {k};
  in.expert = g.constant(expert);
  in.explicit_cond = explicit_cond;
  in.explicit_cond.reshape({1, kExplicitDim});
  in.dropped = {static_cast<std::uint8_t>(dropped ? 1 : 0)};
  in.history = history;
  in.history_len = {history_len};
  return forward(g, in).value();
}

}  // namespace egdp::egcd
