#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "brainloop/alignment/config.hpp"
#include "brainloop/autodiff/ops.hpp"
#include "brainloop/random.hpp"

namespace brainloop::align {

struct Attention {
  ad::Tensor wq, wk, wv, wo;
};

/// Alternating self/cross attention stack shared by both sets.
struct Refiner {
  RefinerSpec spec;
  std::vector<Attention> self_attention;
  std::vector<Attention> cross_attention;
};

struct AttentionVars {
  ad::Var wq, wk, wv, wo;
};

struct RefinerVars {
  RefinerSpec spec;
  std::vector<AttentionVars> self_attention;
  std::vector<AttentionVars> cross_attention;
};

inline Attention make_attention(Index dim, const RefinerSpec& spec, Rng& rng) {
  const Index inner = static_cast<Index>(spec.heads) * spec.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  // Zero output projection: the block starts as the identity.
  return Attention{ad::Tensor(rng.normal_matrix(dim, inner, scale)), ad::Tensor(rng.normal_matrix(dim, inner, scale)),
                   ad::Tensor(rng.normal_matrix(dim, inner, scale)), ad::Tensor(inner, dim)};
}

inline Refiner make_refiner(Index dim, const RefinerSpec& spec, Rng& rng) {
  Refiner r{spec, {}, {}};
  for (int l = 0; l < spec.layers; ++l) {
    r.self_attention.push_back(make_attention(dim, spec, rng));
    r.cross_attention.push_back(make_attention(dim, spec, rng));
  }
  return r;
}

inline RefinerVars bind(ad::Tape& tape, const Refiner& r) {
  RefinerVars vars{r.spec, {}, {}};
  auto bind_one = [&tape](const Attention& a) {
    return AttentionVars{tape.leaf(a.wq), tape.leaf(a.wk), tape.leaf(a.wv), tape.leaf(a.wo)};
  };
  for (const auto& a : r.self_attention) vars.self_attention.push_back(bind_one(a));
  for (const auto& a : r.cross_attention) vars.cross_attention.push_back(bind_one(a));
  return vars;
}

/// Attention weights softmax(Q K^T / sqrt(d)) of one head.
inline ad::Var attention_weights(ad::Var q, ad::Var k) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return ad::softmax_rows(ad::mul_scalar(ad::matmul(q, ad::transpose(k)), scale));
}

/// Multi-head message from `source` to `query` rows.
inline ad::Var attend(const AttentionVars& a, const RefinerSpec& spec, ad::Var query, ad::Var source) {
  ad::Var q = ad::matmul(query, a.wq);
  ad::Var k = ad::matmul(source, a.wk);
  ad::Var v = ad::matmul(source, a.wv);
  std::vector<ad::Var> heads;
  for (int h = 0; h < spec.heads; ++h) {
    const Index at = static_cast<Index>(h) * spec.head_dim;
    ad::Var w = attention_weights(ad::slice_cols(q, at, spec.head_dim), ad::slice_cols(k, at, spec.head_dim));
    heads.push_back(ad::matmul(w, ad::slice_cols(v, at, spec.head_dim)));
  }
  return ad::matmul(heads.size() == 1 ? heads.front() : ad::concat_cols(heads), a.wo);
}

/// Per layer: residual self-attention within each set, then residual
/// cross-attention between the sets; outputs are re-normalized.
inline std::pair<ad::Var, ad::Var> refine(const RefinerVars& r, ad::Var x, ad::Var y) {
  require(x.cols() == y.cols(), ErrorKind::shape_mismatch, "refine: latent dimensions differ");
  if (r.self_attention.empty()) return {x, y};
  for (std::size_t l = 0; l < r.self_attention.size(); ++l) {
    const AttentionVars& s = r.self_attention[l];
    ad::Var xs = ad::add(x, attend(s, r.spec, x, x));
    ad::Var ys = ad::add(y, attend(s, r.spec, y, y));
    const AttentionVars& c = r.cross_attention[l];
    x = ad::add(xs, attend(c, r.spec, xs, ys));
    y = ad::add(ys, attend(c, r.spec, ys, xs));
  }
  return {ad::row_normalize(x), ad::row_normalize(y)};
}

}  // namespace brainloop::align
