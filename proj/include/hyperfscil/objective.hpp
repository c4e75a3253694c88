#pragma once

// Probabilities, losses and exact gradients for the prompted-feature model.
//
// Two entry levels:
//  * value path  — similarity / class_probabilities* / ce_* / reg_loss operate
//    on already-encoded unit features held in a ClassBank;
//  * gradient path — loss_gradients consumes raw frozen inputs (LossProblem)
//    and backpropagates through adapter -> L2 normalize -> projection ->
//    distance -> temperature softmax by hand.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "hyperfscil/encoder.hpp"
#include "hyperfscil/errors.hpp"
#include "hyperfscil/geometry.hpp"

namespace hyperfscil {

enum class SimMode { kHyperbolic, kCosine };

struct LossConfig {
  double tau = 0.05;
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  SimMode sim_mode = SimMode::kHyperbolic;
  double curvature = 0.5;  // used only in hyperbolic mode

  void validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("LossConfig: tau must be > 0");
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
      throw std::invalid_argument("LossConfig: trade-off weights must be >= 0");
    if (sim_mode == SimMode::kHyperbolic && !(curvature > 0.0))
      throw std::invalid_argument("LossConfig: hyperbolic mode requires curvature > 0");
  }
  bool hyperbolic() const { return sim_mode == SimMode::kHyperbolic; }
  Curvature curv() const { return Curvature(curvature); }
};

// Text-side features visible to the classifier at some session.
// current_text entries are live (recomputed from trainable params each step);
// past_text and past_prototypes are frozen copies that never receive gradient.
struct ClassBank {
  std::map<int, Vec> current_text;
  std::map<int, Vec> past_text;
  std::map<int, Vec> past_prototypes;

  void validate() const {
    for (const auto& [id, v] : past_text) {
      (void)v;
      if (current_text.count(id))
        throw std::invalid_argument("ClassBank: class id in both past and current: " +
                                    std::to_string(id));
    }
  }
};

struct ProbVector {
  std::vector<int> class_ids;  // ascending
  Eigen::VectorXd probs;

  double prob_of(int class_id) const {
    const auto it = std::lower_bound(class_ids.begin(), class_ids.end(), class_id);
    if (it == class_ids.end() || *it != class_id)
      throw std::invalid_argument("ProbVector: unknown class id " + std::to_string(class_id));
    return probs[static_cast<int>(it - class_ids.begin())];
  }
};

inline double similarity(const Vec& z, const Vec& h, const LossConfig& cfg) {
  if (cfg.hyperbolic()) {
    const Curvature c = cfg.curv();
    return -hyperbolic_distance(exp_map_zero(z, c), exp_map_zero(h, c), c);
  }
  const double nz = z.norm(), nh = h.norm();
  if (!(nz > 0.0) || !(nh > 0.0))
    throw std::domain_error("similarity: zero-norm input in cosine mode");
  return z.dot(h) / (nz * nh);
}

namespace detail {

// Softmax over sims/tau with max subtraction; also returns the stable
// log-denominator so CE values never see underflowed probabilities.
struct Softmax {
  Eigen::VectorXd probs;
  double log_denom;  // logsumexp(s/tau)
};

inline Softmax stable_softmax(const Eigen::VectorXd& sims, double tau) {
  const double m = sims.maxCoeff() / tau;
  Eigen::VectorXd e = ((sims / tau).array() - m).exp();
  const double denom = e.sum();
  return {e / denom, m + std::log(denom)};
}

// Sorted (id, feature pointer) view over bank text features.
struct TextView {
  std::vector<int> ids;
  std::vector<const Vec*> feats;
  std::vector<bool> live;  // false for frozen snapshot entries
};

inline TextView union_view(const ClassBank& bank) {
  bank.validate();
  TextView v;
  auto p = bank.past_text.begin();
  auto c = bank.current_text.begin();
  while (p != bank.past_text.end() || c != bank.current_text.end()) {
    const bool take_past = c == bank.current_text.end() ||
                           (p != bank.past_text.end() && p->first < c->first);
    if (take_past) {
      v.ids.push_back(p->first);
      v.feats.push_back(&p->second);
      v.live.push_back(false);
      ++p;
    } else {
      v.ids.push_back(c->first);
      v.feats.push_back(&c->second);
      v.live.push_back(true);
      ++c;
    }
  }
  return v;
}

inline TextView current_view(const ClassBank& bank) {
  TextView v;
  for (const auto& [id, feat] : bank.current_text) {
    v.ids.push_back(id);
    v.feats.push_back(&feat);
    v.live.push_back(true);
  }
  return v;
}

inline ProbVector probabilities(const Vec& z, const TextView& view, const LossConfig& cfg) {
  if (view.ids.empty()) throw std::invalid_argument("probabilities: empty class set");
  Eigen::VectorXd sims(static_cast<int>(view.ids.size()));
  for (std::size_t k = 0; k < view.feats.size(); ++k)
    sims[static_cast<int>(k)] = similarity(z, *view.feats[k], cfg);
  return {view.ids, stable_softmax(sims, cfg.tau).probs};
}

inline double ce_over_view(const std::vector<Vec>& zs, const std::vector<int>& ys,
                           const TextView& view, const LossConfig& cfg) {
  if (zs.size() != ys.size()) throw std::invalid_argument("ce: batch size mismatch");
  if (zs.empty()) throw std::invalid_argument("ce: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    const auto it = std::lower_bound(view.ids.begin(), view.ids.end(), ys[i]);
    if (it == view.ids.end() || *it != ys[i])
      throw std::invalid_argument("ce: label outside class bank: " + std::to_string(ys[i]));
    Eigen::VectorXd sims(static_cast<int>(view.ids.size()));
    for (std::size_t k = 0; k < view.feats.size(); ++k)
      sims[static_cast<int>(k)] = similarity(zs[i], *view.feats[k], cfg);
    const Softmax sm = stable_softmax(sims, cfg.tau);
    const int yi = static_cast<int>(it - view.ids.begin());
    total += sm.log_denom - sims[yi] / cfg.tau;
  }
  return total / static_cast<double>(zs.size());
}

}  // namespace detail

// Probability of z belonging to each current-session class (base-session form).
inline ProbVector class_probabilities(const Vec& z, const ClassBank& bank,
                                      const LossConfig& cfg) {
  return detail::probabilities(z, detail::current_view(bank), cfg);
}

// Probability over all seen classes: frozen snapshots for past sessions plus
// live features for the current one share a single softmax denominator.
inline ProbVector class_probabilities_ssp(const Vec& z, const ClassBank& bank,
                                          const LossConfig& cfg) {
  return detail::probabilities(z, detail::union_view(bank), cfg);
}

inline double ce_base_loss(const std::vector<Vec>& zs, const std::vector<int>& ys,
                           const ClassBank& bank, const LossConfig& cfg) {
  return detail::ce_over_view(zs, ys, detail::current_view(bank), cfg);
}

inline double ce_current_loss(const std::vector<Vec>& zs, const std::vector<int>& ys,
                              const ClassBank& bank, const LossConfig& cfg) {
  for (int y : ys)
    if (!bank.current_text.count(y))
      throw std::invalid_argument("ce_current_loss: label not in current session: " +
                                  std::to_string(y));
  return detail::ce_over_view(zs, ys, detail::union_view(bank), cfg);
}

// Rehearsal term: prototypes replay through the full (past + current) softmax.
// An empty buffer contributes 0 (only possible before the base session ends).
inline double ce_past_loss(const ClassBank& bank, const LossConfig& cfg) {
  if (bank.past_prototypes.empty()) return 0.0;
  std::vector<Vec> zs;
  std::vector<int> ys;
  for (const auto& [id, proto] : bank.past_prototypes) {
    zs.push_back(proto);
    ys.push_back(id);
  }
  return detail::ce_over_view(zs, ys, detail::union_view(bank), cfg);
}

// L1 deviation from the (normalized) frozen feature.
inline double reg_loss(const Vec& prompted, const Vec& frozen) {
  check_same_dim(prompted, frozen);
  return (prompted - frozen).cwiseAbs().sum();
}

// Normalized frozen references the regularizers pull toward.
struct FrozenRefs {
  std::vector<Vec> image_targets;    // aligned with the batch
  std::map<int, Vec> text_targets;   // per current-session class
};

inline double total_base_loss(const std::vector<Vec>& zs, const std::vector<int>& ys,
                              const ClassBank& bank, const FrozenRefs& refs,
                              const LossConfig& cfg) {
  if (refs.image_targets.size() != zs.size())
    throw std::invalid_argument("total_base_loss: frozen refs misaligned with batch");
  double reg_img = 0.0;
  for (std::size_t i = 0; i < zs.size(); ++i) reg_img += reg_loss(zs[i], refs.image_targets[i]);
  reg_img /= static_cast<double>(zs.size());
  double reg_txt = 0.0;
  for (const auto& [id, target] : refs.text_targets)
    reg_txt += reg_loss(bank.current_text.at(id), target);
  if (!refs.text_targets.empty()) reg_txt /= static_cast<double>(refs.text_targets.size());
  return ce_base_loss(zs, ys, bank, cfg) + cfg.alpha * reg_img + cfg.beta * reg_txt;
}

inline double total_incremental_loss(const std::vector<Vec>& zs, const std::vector<int>& ys,
                                     const ClassBank& bank, const FrozenRefs& refs,
                                     const LossConfig& cfg) {
  if (refs.image_targets.size() != zs.size())
    throw std::invalid_argument("total_incremental_loss: frozen refs misaligned with batch");
  double reg_img = 0.0;
  for (std::size_t i = 0; i < zs.size(); ++i) reg_img += reg_loss(zs[i], refs.image_targets[i]);
  reg_img /= static_cast<double>(zs.size());
  double reg_txt = 0.0;
  for (const auto& [id, target] : refs.text_targets)
    reg_txt += reg_loss(bank.current_text.at(id), target);
  if (!refs.text_targets.empty()) reg_txt /= static_cast<double>(refs.text_targets.size());
  return ce_current_loss(zs, ys, bank, cfg) + cfg.gamma * ce_past_loss(bank, cfg) +
         cfg.alpha * reg_img + cfg.beta * reg_txt;
}

// ---------------------------------------------------------------------------
// Gradient path
// ---------------------------------------------------------------------------

// Raw inputs for one optimization step.  live_templates hold the mean frozen
// text template per class whose text feature is trainable this step; frozen
// snapshots / prototypes are constants.  reg/current ids name C^t.
struct LossProblem {
  std::vector<Vec> image_feats;       // raw frozen image features, one per sample
  std::vector<int> labels;
  std::map<int, Vec> live_templates;  // class id -> mean of its M templates
  std::map<int, Vec> frozen_text;     // class id -> stored unit snapshot
  std::map<int, Vec> prototypes;      // class id -> stored prototype (rehearsal)
  std::vector<int> current_ids;       // session classes (reg + label domain)

  void validate() const {
    if (image_feats.size() != labels.size())
      throw std::invalid_argument("LossProblem: batch size mismatch");
    for (const auto& [id, v] : frozen_text) {
      (void)v;
      if (live_templates.count(id))
        throw std::invalid_argument("LossProblem: class id both live and frozen");
    }
    for (int id : current_ids)
      if (!live_templates.count(id))
        throw std::invalid_argument("LossProblem: current id lacks a live template");
    for (int y : labels) {
      bool ok = false;
      for (int id : current_ids) ok = ok || id == y;
      if (!ok) throw std::invalid_argument("LossProblem: label outside current session");
    }
  }
};

struct GradResult {
  double loss = 0.0;       // full objective
  double ce_current = 0.0;  // base-session CE in the base phase
  double ce_past = 0.0;
  double reg_img = 0.0;
  double reg_txt = 0.0;
  Mat dA_v, dB_v;  // empty (0x0) when the vision block is frozen
  Mat dA_t, dB_t;
};

namespace detail {

// Forward pass through one adapter block with everything the backward needs.
struct Chain {
  Vec f;      // raw input
  Vec t;      // tanh(A f)
  Vec u;      // f + B t
  double n;   // |u|
  Vec z;      // u / n          (unit feature)
  Vec e;      // projected embedding: exp_0(z) in hyperbolic mode, else z
};

inline Chain run_chain(const Vec& f, const AdapterBlock& blk, const LossConfig& cfg) {
  Chain ch;
  ch.f = f;
  ch.t = (blk.A * f).array().tanh().matrix();
  ch.u = f + blk.B * ch.t;
  ch.n = ch.u.norm();
  if (!(ch.n > 0.0)) throw std::domain_error("loss_gradients: zero-norm prompted feature");
  ch.z = ch.u / ch.n;
  ch.e = cfg.hyperbolic() ? exp_map_zero(ch.z, cfg.curv()) : ch.z;
  return ch;
}

// Similarity of two already-projected embeddings (no second exp map).
inline double sim_projected(const Vec& ea, const Vec& eb, const LossConfig& cfg) {
  if (cfg.hyperbolic()) return -hyperbolic_distance(ea, eb, cfg.curv());
  return ea.dot(eb) / (ea.norm() * eb.norm());
}

// d/dv of exp_0(v) applied to a cotangent: J = s(r) I + (s'(r)/r) v v^T with
// s(r) = tanh(a r)/(a r).  Series for small a r keeps the ratio finite.
inline Vec exp_map_backward(const Vec& v, const Vec& de, double c) {
  const double a = std::sqrt(c);
  const double r = v.norm();
  const double ar = a * r;
  double s, ratio;  // s(r) and s'(r)/r
  if (ar < 1e-4) {
    s = 1.0 - ar * ar / 3.0;
    ratio = a * a * (-2.0 / 3.0 + 8.0 * ar * ar / 15.0);
  } else {
    const double th = std::tanh(ar);
    s = th / ar;
    const double sech2 = 1.0 - th * th;
    ratio = sech2 / (r * r) - th / (a * r * r * r);
  }
  return s * de + ratio * v.dot(de) * v;
}

// Normalize backward: z = u/n, dL/du = (dz - z (z . dz)) / n.
inline Vec normalize_backward(const Chain& ch, const Vec& dz) {
  return (dz - ch.z * ch.z.dot(dz)) / ch.n;
}

// Similarity gradient with respect to both projected embeddings.
// Cosine mode returns the raw partials of a^T b / (|a||b|); the radial parts
// are removed downstream by the normalize backward.
inline void sim_backward(const Vec& ea, const Vec& eb, const LossConfig& cfg, double upstream,
                         Vec* da, Vec* db) {
  if (cfg.hyperbolic()) {
    const auto g = hyperbolic_distance_grad(ea, eb, cfg.curv());
    if (da) *da -= upstream * g.wrt_x;  // sim = -distance
    if (db) *db -= upstream * g.wrt_y;
  } else {
    const double na = ea.norm(), nb = eb.norm();
    const double s = ea.dot(eb) / (na * nb);
    if (da) *da += upstream * (eb / (na * nb) - s * ea / (na * na));
    if (db) *db += upstream * (ea / (na * nb) - s * eb / (nb * nb));
  }
}

inline Vec l1_subgradient(const Vec& x) {
  Vec g = Vec::Zero(x.size());
  for (int i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
  return g;
}

}  // namespace detail

// Exact gradients of the full objective with respect to trainable adapter
// scalars.  The base phase is the special case of empty frozen/prototype maps.
inline GradResult loss_gradients(const LossProblem& prob, const AdapterParams& params,
                                 const LossConfig& cfg) {
  prob.validate();
  cfg.validate();
  GradResult out;

  // --- forward: text side -------------------------------------------------
  std::vector<int> live_ids;
  std::vector<detail::Chain> live_chain;
  for (const auto& [id, tmpl] : prob.live_templates) {
    live_ids.push_back(id);
    live_chain.push_back(detail::run_chain(tmpl, params.text, cfg));
  }
  std::vector<int> frozen_ids;
  std::vector<Vec> frozen_emb;
  for (const auto& [id, snap] : prob.frozen_text) {
    frozen_ids.push_back(id);
    frozen_emb.push_back(cfg.hyperbolic() ? exp_map_zero(snap, cfg.curv()) : snap);
  }

  // Union index, ascending class id (maps are already sorted).
  struct Slot {
    int id;
    bool live;
    int idx;  // into live_chain or frozen_emb
  };
  std::vector<Slot> slots;
  {
    std::size_t li = 0, fi = 0;
    while (li < live_ids.size() || fi < frozen_ids.size()) {
      const bool take_frozen =
          li == live_ids.size() || (fi < frozen_ids.size() && frozen_ids[fi] < live_ids[li]);
      if (take_frozen) {
        slots.push_back({frozen_ids[fi], false, static_cast<int>(fi)});
        ++fi;
      } else {
        slots.push_back({live_ids[li], true, static_cast<int>(li)});
        ++li;
      }
    }
  }
  if (slots.empty()) throw std::invalid_argument("loss_gradients: no classes");
  auto slot_of = [&](int class_id) {
    for (std::size_t k = 0; k < slots.size(); ++k)
      if (slots[k].id == class_id) return static_cast<int>(k);
    throw std::invalid_argument("loss_gradients: unknown class id");
  };
  auto emb_of = [&](const Slot& s) -> const Vec& {
    return s.live ? live_chain[s.idx].e : frozen_emb[s.idx];
  };

  // --- forward: image side ------------------------------------------------
  const bool train_vision = params.vision.trainable;
  std::vector<detail::Chain> img_chain;
  img_chain.reserve(prob.image_feats.size());
  for (const Vec& f : prob.image_feats)
    img_chain.push_back(detail::run_chain(f, params.vision, cfg));

  // Cotangent accumulators.
  std::vector<Vec> d_live_e(live_chain.size());
  std::vector<Vec> d_live_h(live_chain.size());  // reg enters pre-projection
  for (std::size_t k = 0; k < live_chain.size(); ++k) {
    d_live_e[k] = Vec::Zero(live_chain[k].z.size());
    d_live_h[k] = Vec::Zero(live_chain[k].z.size());
  }
  std::vector<Vec> d_img_e(img_chain.size());
  std::vector<Vec> d_img_z(img_chain.size());
  for (std::size_t i = 0; i < img_chain.size(); ++i) {
    d_img_e[i] = Vec::Zero(img_chain[i].z.size());
    d_img_z[i] = Vec::Zero(img_chain[i].z.size());
  }

  const int n_slots = static_cast<int>(slots.size());

  // --- CE over the batch (Eq. 3/4 when no frozen classes, Eq. 7/9 otherwise)
  if (!prob.image_feats.empty()) {
    const double inv_n = 1.0 / static_cast<double>(prob.image_feats.size());
    for (std::size_t i = 0; i < img_chain.size(); ++i) {
      Eigen::VectorXd sims(n_slots);
      for (int k = 0; k < n_slots; ++k)
        sims[k] = detail::sim_projected(img_chain[i].e, emb_of(slots[k]), cfg);
      const detail::Softmax sm = detail::stable_softmax(sims, cfg.tau);
      const int yslot = slot_of(prob.labels[i]);
      out.ce_current += (sm.log_denom - sims[yslot] / cfg.tau) * inv_n;
      for (int k = 0; k < n_slots; ++k) {
        const double ds = inv_n * (sm.probs[k] - (k == yslot ? 1.0 : 0.0)) / cfg.tau;
        if (ds == 0.0) continue;
        Vec* d_txt = slots[k].live ? &d_live_e[slots[k].idx] : nullptr;
        Vec* d_img = train_vision ? &d_img_e[i] : nullptr;
        if (d_txt || d_img)
          detail::sim_backward(img_chain[i].e, emb_of(slots[k]), cfg, ds, d_img, d_txt);
      }
    }
  }

  // --- rehearsal CE over stored prototypes (Eq. 8), weighted by gamma ------
  if (!prob.prototypes.empty() && cfg.gamma > 0.0) {
    const double inv_p = 1.0 / static_cast<double>(prob.prototypes.size());
    for (const auto& [pid, proto] : prob.prototypes) {
      const Vec pe = cfg.hyperbolic() ? exp_map_zero(proto, cfg.curv()) : proto;
      Eigen::VectorXd sims(n_slots);
      for (int k = 0; k < n_slots; ++k) sims[k] = detail::sim_projected(pe, emb_of(slots[k]), cfg);
      const detail::Softmax sm = detail::stable_softmax(sims, cfg.tau);
      const int yslot = slot_of(pid);
      out.ce_past += (sm.log_denom - sims[yslot] / cfg.tau) * inv_p;
      for (int k = 0; k < n_slots; ++k) {
        if (!slots[k].live) continue;  // prototype side and frozen text are constants
        const double ds =
            cfg.gamma * inv_p * (sm.probs[k] - (k == yslot ? 1.0 : 0.0)) / cfg.tau;
        if (ds == 0.0) continue;
        detail::sim_backward(pe, emb_of(slots[k]), cfg, ds, nullptr, &d_live_e[slots[k].idx]);
      }
    }
  } else if (!prob.prototypes.empty()) {
    // Still report the rehearsal loss value when gamma == 0.
    const double inv_p = 1.0 / static_cast<double>(prob.prototypes.size());
    for (const auto& [pid, proto] : prob.prototypes) {
      const Vec pe = cfg.hyperbolic() ? exp_map_zero(proto, cfg.curv()) : proto;
      Eigen::VectorXd sims(n_slots);
      for (int k = 0; k < n_slots; ++k) sims[k] = detail::sim_projected(pe, emb_of(slots[k]), cfg);
      const detail::Softmax sm = detail::stable_softmax(sims, cfg.tau);
      out.ce_past += (sm.log_denom - sims[slot_of(pid)] / cfg.tau) * inv_p;
    }
  }

  // --- L1 regularizers against normalized frozen features (Eq. 5) ----------
  if (!prob.image_feats.empty()) {
    const double inv_n = 1.0 / static_cast<double>(prob.image_feats.size());
    for (std::size_t i = 0; i < img_chain.size(); ++i) {
      const Vec target = img_chain[i].f / img_chain[i].f.norm();
      const Vec diff = img_chain[i].z - target;
      out.reg_img += diff.cwiseAbs().sum() * inv_n;
      if (train_vision && cfg.alpha > 0.0)
        d_img_z[i] += cfg.alpha * inv_n * detail::l1_subgradient(diff);
    }
  }
  if (!prob.current_ids.empty()) {
    const double inv_c = 1.0 / static_cast<double>(prob.current_ids.size());
    for (int cid : prob.current_ids) {
      int li = -1;
      for (std::size_t k = 0; k < live_ids.size(); ++k)
        if (live_ids[k] == cid) li = static_cast<int>(k);
      const detail::Chain& ch = live_chain[li];
      const Vec target = ch.f / ch.f.norm();
      const Vec diff = ch.z - target;
      out.reg_txt += diff.cwiseAbs().sum() * inv_c;
      if (cfg.beta > 0.0) d_live_h[li] += cfg.beta * inv_c * detail::l1_subgradient(diff);
    }
  }

  out.loss = out.ce_current + cfg.gamma * out.ce_past + cfg.alpha * out.reg_img +
             cfg.beta * out.reg_txt;
  if (!std::isfinite(out.loss)) throw NumericError("loss_gradients: non-finite loss");

  // --- backward: text adapter ----------------------------------------------
  out.dA_t = Mat::Zero(params.text.A.rows(), params.text.A.cols());
  out.dB_t = Mat::Zero(params.text.B.rows(), params.text.B.cols());
  for (std::size_t k = 0; k < live_chain.size(); ++k) {
    const detail::Chain& ch = live_chain[k];
    Vec dz = d_live_h[k];
    if (cfg.hyperbolic())
      dz += detail::exp_map_backward(ch.z, d_live_e[k], cfg.curvature);
    else
      dz += d_live_e[k];
    if (dz.isZero(0.0)) continue;
    const Vec du = detail::normalize_backward(ch, dz);
    out.dB_t += du * ch.t.transpose();
    const Vec dt = params.text.B.transpose() * du;
    const Vec dpre = dt.cwiseProduct((1.0 - ch.t.array().square()).matrix());
    out.dA_t += dpre * ch.f.transpose();
  }

  // --- backward: vision adapter ---------------------------------------------
  if (train_vision) {
    out.dA_v = Mat::Zero(params.vision.A.rows(), params.vision.A.cols());
    out.dB_v = Mat::Zero(params.vision.B.rows(), params.vision.B.cols());
    for (std::size_t i = 0; i < img_chain.size(); ++i) {
      const detail::Chain& ch = img_chain[i];
      Vec dz = d_img_z[i];
      if (cfg.hyperbolic())
        dz += detail::exp_map_backward(ch.z, d_img_e[i], cfg.curvature);
      else
        dz += d_img_e[i];
      if (dz.isZero(0.0)) continue;
      const Vec du = detail::normalize_backward(ch, dz);
      out.dB_v += du * ch.t.transpose();
      const Vec dt = params.vision.B.transpose() * du;
      const Vec dpre = dt.cwiseProduct((1.0 - ch.t.array().square()).matrix());
      out.dA_v += dpre * ch.f.transpose();
    }
  }

  return out;
}

}  // namespace hyperfscil
