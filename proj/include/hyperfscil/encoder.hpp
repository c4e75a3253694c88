#pragma once

// Prompted-feature stand-in: frozen backbone features plus small rank-r
// residual adapters.  encode(f) = normalize(f + B * tanh(A * f)), with B
// zero-initialised so that prompted == normalised-frozen at step 0.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "hyperfscil/geometry.hpp"

namespace hyperfscil {

using Mat = Eigen::MatrixXd;

struct AdapterBlock {
  Mat A;  // rank x d ("down")
  Mat B;  // d x rank ("up"), zero at init
  bool trainable = true;

  int dim() const { return static_cast<int>(A.cols()); }
  int rank() const { return static_cast<int>(A.rows()); }
  std::int64_t scalar_count() const { return 2 * static_cast<std::int64_t>(rank()) * dim(); }
};

enum class Phase { kBase, kIncremental };

struct AdapterParams {
  AdapterBlock vision;
  AdapterBlock text;
};

inline AdapterParams init_params(int d_img, int d_txt, int rank, std::uint64_t seed) {
  if (d_img < 1 || d_txt < 1 || rank < 1)
    throw std::invalid_argument("init_params: dims and rank must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  AdapterParams p;
  auto fill = [&](AdapterBlock& blk, int d) {
    blk.A = Mat(rank, d);
    for (int i = 0; i < rank; ++i)
      for (int j = 0; j < d; ++j) blk.A(i, j) = normal(rng);
    blk.B = Mat::Zero(d, rank);
    blk.trainable = true;
  };
  fill(p.vision, d_img);
  fill(p.text, d_txt);
  return p;
}

inline Vec adapter_forward(const Vec& f, const AdapterBlock& blk) {
  if (f.size() != blk.dim())
    throw std::invalid_argument("adapter: feature dimension mismatch");
  const Vec u = f + blk.B * (blk.A * f).array().tanh().matrix();
  const double n = u.norm();
  if (!(n > 0.0)) throw std::domain_error("adapter: cannot normalize zero output");
  return u / n;
}

// Prompted image feature: unit-norm residual-adapted vector.
inline Vec encode_image(const Vec& f, const AdapterParams& p) {
  return adapter_forward(f, p.vision);
}

// Prompted text feature: templates are averaged first, then adapted.
inline Vec encode_text(const std::vector<Vec>& templates, const AdapterParams& p) {
  if (templates.empty()) throw std::invalid_argument("encode_text: empty template set");
  Vec mean = templates[0];
  for (std::size_t i = 1; i < templates.size(); ++i) {
    if (templates[i].size() != mean.size())
      throw std::invalid_argument("encode_text: template dimension mismatch");
    mean += templates[i];
  }
  mean /= static_cast<double>(templates.size());
  return adapter_forward(mean, p.text);
}

inline void set_phase(AdapterParams& p, Phase phase) {
  p.vision.trainable = (phase == Phase::kBase);
  p.text.trainable = true;
}

inline std::int64_t trainable_count(const AdapterParams& p) {
  std::int64_t n = 0;
  if (p.vision.trainable) n += p.vision.scalar_count();
  if (p.text.trainable) n += p.text.scalar_count();
  return n;
}

}  // namespace hyperfscil
