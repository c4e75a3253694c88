#pragma once

// SGD with momentum plus a warmup -> cosine-annealing schedule.
// Parameters live in flat Euclidean space; no manifold-aware updates.

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "hyperfscil/encoder.hpp"
#include "hyperfscil/objective.hpp"

namespace hyperfscil {

inline double cosine_warmup_lr(int step, int warmup, int total, double base_lr) {
  if (step < 0 || step >= total || warmup < 0 || warmup >= total)
    throw std::invalid_argument("cosine_warmup_lr: invalid step/warmup/total");
  if (step < warmup) return base_lr * static_cast<double>(step + 1) / warmup;
  const double t = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// 10% of session steps, clamped to [5, total-1] (lower bound waived for tiny runs).
inline int default_warmup(int total_steps) {
  if (total_steps < 1) throw std::invalid_argument("default_warmup: total_steps < 1");
  return std::min(total_steps - 1, std::max(5, total_steps / 10));
}

struct OptimizerState {
  Mat vA_v, vB_v;  // momentum buffers; sized only for trainable blocks
  Mat vA_t, vB_t;
  int step = 0;
  double base_lr = 0.0;
  int warmup_steps = 0;
  int total_steps = 0;
  double momentum = 0.9;
};

inline OptimizerState make_optimizer(const AdapterParams& params, double base_lr,
                                     int total_steps, double momentum = 0.9) {
  if (!(base_lr > 0.0) || total_steps < 1)
    throw std::invalid_argument("make_optimizer: need base_lr > 0 and total_steps >= 1");
  OptimizerState st;
  st.base_lr = base_lr;
  st.total_steps = total_steps;
  st.warmup_steps = default_warmup(total_steps);
  st.momentum = momentum;
  if (params.vision.trainable) {
    st.vA_v = Mat::Zero(params.vision.A.rows(), params.vision.A.cols());
    st.vB_v = Mat::Zero(params.vision.B.rows(), params.vision.B.cols());
  }
  if (params.text.trainable) {
    st.vA_t = Mat::Zero(params.text.A.rows(), params.text.A.cols());
    st.vB_t = Mat::Zero(params.text.B.rows(), params.text.B.cols());
  }
  return st;
}

// v <- mu v + g; theta <- theta - lr v, for every trainable block.
inline void sgd_momentum_step(AdapterParams& params, const GradResult& grads,
                              OptimizerState& st) {
  const double lr = cosine_warmup_lr(st.step, st.warmup_steps, st.total_steps, st.base_lr);
  auto apply = [&](Mat& theta, const Mat& g, Mat& v) {
    if (g.rows() != theta.rows() || g.cols() != theta.cols())
      throw std::invalid_argument("sgd_momentum_step: gradient shape mismatch");
    v = st.momentum * v + g;
    theta -= lr * v;
  };
  if (params.vision.trainable) {
    apply(params.vision.A, grads.dA_v, st.vA_v);
    apply(params.vision.B, grads.dB_v, st.vB_v);
  }
  if (params.text.trainable) {
    apply(params.text.A, grads.dA_t, st.vA_t);
    apply(params.text.B, grads.dB_t, st.vB_t);
  }
  ++st.step;
}

}  // namespace hyperfscil
