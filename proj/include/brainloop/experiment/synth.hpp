#pragma once

#include <Eigen/QR>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "brainloop/embedding_set.hpp"
#include "brainloop/experiment/embd_io.hpp"
#include "brainloop/random.hpp"

namespace brainloop::synth {

struct SynthOptions {
  std::string kind = "isomorphic_clusters";
  int n_categories = 26;
  int per_category = 30;
  int dim_x = 64;
  int dim_y = 48;
  double noise = 0.3;             ///< per-instance latent noise
  std::uint64_t seed = 0;
  int heldout_categories = -1;    ///< -1: a quarter of the categories
  int latent_dim = 8;
  int n_superclasses = 2;
  double spread = 0.4;            ///< category offset from its superclass prototype
  double superclass_gain = 0.15;  ///< x-side gain on the superclass subspace
  double anisotropy = 2.0;        ///< x-side extra gain on 3 random nuisance directions
  double ambient_noise = 0.1;     ///< x-side noise added after the distortion
  bool identical_distortions = false;
};

struct SynthData {
  EmbeddingSet x;
  EmbeddingSet y;
  EmbeddingSet heldout_x;
  EmbeddingSet heldout_y;
};

/// Category ids are "super<s>/cat<k>"; the superclass is the part before '/'.
inline std::string category_name(int superclass, int category) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "super%d/cat%02d", superclass, category);
  return buf;
}

inline std::string superclass_of(const std::string& category) {
  const auto slash = category.find('/');
  return slash == std::string::npos ? category : category.substr(0, slash);
}

inline Matrix unit_normal_rows(Rng& rng, Index rows, Index cols) { return unit_rows(rng.normal_matrix(rows, cols)); }

/// Orthonormal basis (columns) of span(a) via Householder QR.
inline Matrix orthonormal_basis(const Matrix& a) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return Eigen::MatrixXd(qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols()));
}

/// Category prototypes around superclass prototypes on the unit sphere of a
/// shared latent space, seen through two fixed linear maps with independent
/// per-instance noise. The image side (x) squashes the superclass subspace,
/// stretches a few nuisance directions and adds ambient noise, so its raw
/// geometry hides the structure the signal side (y) shows plainly.
inline SynthData isomorphic_clusters(const SynthOptions& o) {
  require(o.kind == "isomorphic_clusters", ErrorKind::invalid_argument, "synth: unknown kind '" + o.kind + "'");
  require(o.n_categories >= 4, ErrorKind::invalid_argument, "synth: n_categories must be at least 4");
  require(o.per_category >= 2 && o.dim_x >= 1 && o.dim_y >= 1 && o.latent_dim >= 1, ErrorKind::invalid_argument,
          "synth: per_category must be >= 2 and dimensions positive");
  require(o.dim_x >= o.latent_dim, ErrorKind::invalid_argument, "synth: dim_x must be at least latent_dim");
  require(o.n_superclasses >= 1 && o.n_superclasses <= o.n_categories, ErrorKind::invalid_argument,
          "synth: n_superclasses out of range");
  require(o.noise >= 0.0 && o.ambient_noise >= 0.0, ErrorKind::invalid_argument, "synth: noise must be non-negative");
  require(!o.identical_distortions || o.dim_x == o.dim_y, ErrorKind::invalid_argument,
          "synth: identical_distortions needs dim_x == dim_y");
  const int heldout = o.heldout_categories < 0 ? o.n_categories / 4 : o.heldout_categories;
  require(heldout >= 1 && heldout <= o.n_categories - 2, ErrorKind::invalid_argument,
          "synth: heldout_categories out of range");

  Rng rng(o.seed);
  const Index l = o.latent_dim;
  const Matrix sup = unit_normal_rows(rng, o.n_superclasses, l);
  Matrix cats(o.n_categories, l);
  const Matrix offsets = unit_normal_rows(rng, o.n_categories, l);
  for (int k = 0; k < o.n_categories; ++k) {
    cats.row(k) = sup.row(k % o.n_superclasses) + o.spread * offsets.row(k);
  }
  cats = unit_rows(cats);

  const Matrix ay = rng.normal_matrix(o.dim_y, l, 1.0 / std::sqrt(static_cast<double>(o.dim_y)));
  const Matrix q = orthonormal_basis(rng.normal_matrix(o.dim_x, l));
  Matrix m = Matrix::Identity(l, l);
  Matrix sup_basis(l, 0);
  if (o.n_superclasses >= 2) {
    Matrix diffs(l, o.n_superclasses - 1);
    for (int s = 1; s < o.n_superclasses; ++s) diffs.col(s - 1) = (sup.row(0) - sup.row(s)).transpose();
    sup_basis = orthonormal_basis(diffs);
    m -= (1.0 - o.superclass_gain) * sup_basis * sup_basis.transpose();
  }
  const Matrix extra = unit_normal_rows(rng, 3, l);
  for (Index e = 0; e < extra.rows(); ++e) {
    Vector dir = extra.row(e).transpose();
    if (sup_basis.cols() > 0) dir -= sup_basis * (sup_basis.transpose() * dir);
    if (dir.norm() == 0.0) continue;
    dir.normalize();
    m += o.anisotropy * dir * dir.transpose();
  }
  const Matrix ax = o.identical_distortions ? ay : Matrix(q * m);

  auto make = [&](const Matrix& map, bool ambient, const std::string& prefix, bool heldout_part) {
    EmbeddingSet set;
    const int first = heldout_part ? o.n_categories - heldout : 0;
    const int last = heldout_part ? o.n_categories : o.n_categories - heldout;
    set.matrix.resize(static_cast<Index>(last - first) * o.per_category, map.rows());
    Index row = 0;
    for (int k = first; k < last; ++k) {
      for (int i = 0; i < o.per_category; ++i) {
        Vector z = cats.row(k).transpose();
        for (Index d = 0; d < l; ++d) z(d) += o.noise * rng.normal() / std::sqrt(static_cast<double>(l));
        Vector v = map * z;
        if (ambient) {
          for (Index d = 0; d < v.size(); ++d) v(d) += o.ambient_noise * rng.normal() / std::sqrt(static_cast<double>(v.size()));
        }
        set.matrix.row(row++) = v.transpose();
        const std::string cat = category_name(k % o.n_superclasses, k);
        set.instance_ids.push_back(prefix + "/" + cat + "/" + std::to_string(i));
        set.category_ids.push_back(cat);
      }
    }
    set.meta = "synth:isomorphic_clusters seed=" + std::to_string(o.seed) + " domain=" + prefix;
    io::round_to_float(set);
    set.validate();
    return set;
  };
  SynthData out;
  out.x = make(ax, !o.identical_distortions, "x", false);
  out.y = make(ay, false, "y", false);
  out.heldout_x = make(ax, !o.identical_distortions, "x", true);
  out.heldout_y = make(ay, false, "y", true);
  return out;
}

}  // namespace brainloop::synth
