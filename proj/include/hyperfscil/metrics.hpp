#pragma once

// Classification over stored text features, per-session accuracy, the Avg/PD
// aggregates, the frozen-feature zero-shot baseline, and prototype-vs-text
// distance heatmaps.

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperfscil/data.hpp"
#include "hyperfscil/objective.hpp"

namespace hyperfscil {

// Argmax similarity over all known classes; exact ties go to the lowest id.
inline std::uint32_t classify(const Vec& z, const std::map<std::uint32_t, Vec>& text_feats,
                              const LossConfig& cfg) {
  if (text_feats.empty()) throw std::invalid_argument("classify: no known classes");
  std::uint32_t best_id = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& [id, h] : text_feats) {
    const double s = similarity(z, h, cfg);
    if (s > best) {  // strict: first (lowest) id wins ties
      best = s;
      best_id = id;
    }
  }
  return best_id;
}

inline double session_accuracy(const std::vector<std::uint32_t>& predictions,
                               const std::vector<std::uint32_t>& labels) {
  if (predictions.empty() || predictions.size() != labels.size())
    throw std::invalid_argument("session_accuracy: empty or mismatched inputs");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == labels[i]) ++correct;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(predictions.size());
}

struct Aggregate {
  double avg = 0.0;
  double pd = 0.0;
};

inline Aggregate aggregate(const std::vector<double>& accuracies) {
  if (accuracies.empty()) throw std::invalid_argument("aggregate: empty sequence");
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  return {sum / static_cast<double>(accuracies.size()), accuracies.front() - accuracies.back()};
}

// Cosine nearest class over *frozen* features (no adapters, no projection),
// evaluated on all test samples of sessions 0..t.
inline double zero_shot_accuracy(const EmbeddingDataset& ds, int up_to_session) {
  if (up_to_session < 0 || up_to_session >= static_cast<int>(ds.sessions.size()))
    throw std::invalid_argument("zero_shot_accuracy: session out of range");
  std::map<std::uint32_t, Vec> candidates;
  std::map<std::uint32_t, bool> in_scope;
  for (int t = 0; t <= up_to_session; ++t)
    for (std::uint32_t id : ds.sessions[t]) {
      const TextRecord& rec = ds.text.at(id);
      Vec mean = Vec::Zero(ds.d_txt);
      for (const auto& tmpl : rec.templates) mean += tmpl.cast<double>();
      mean /= static_cast<double>(rec.templates.size());
      candidates[id] = mean;
      in_scope[id] = true;
    }
  LossConfig cfg;
  cfg.sim_mode = SimMode::kCosine;
  std::vector<std::uint32_t> preds, labels;
  for (const auto& rec : ds.images) {
    if (rec.split != Split::kTest || !in_scope.count(rec.class_id)) continue;
    preds.push_back(classify(rec.vec.cast<double>(), candidates, cfg));
    labels.push_back(rec.class_id);
  }
  return session_accuracy(preds, labels);
}

struct Heatmap {
  std::vector<std::uint32_t> class_ids;  // row/column order
  Mat distances;                          // (i, j) = d(prototype_i, text_j)
};

inline Heatmap prototype_text_heatmap(const std::map<std::uint32_t, Vec>& prototypes,
                                      const std::map<std::uint32_t, Vec>& text_feats,
                                      const LossConfig& cfg) {
  if (prototypes.empty()) throw std::invalid_argument("heatmap: empty prototype buffer");
  Heatmap hm;
  for (const auto& [id, p] : prototypes) {
    (void)p;
    if (!text_feats.count(id))
      throw std::invalid_argument("heatmap: prototype class lacks a text feature");
    hm.class_ids.push_back(id);
  }
  const int n = static_cast<int>(hm.class_ids.size());
  hm.distances = Mat(n, n);
  for (int i = 0; i < n; ++i) {
    const Vec& p = prototypes.at(hm.class_ids[i]);
    const Vec pe = cfg.hyperbolic() ? exp_map_zero(p, cfg.curv()) : p;
    for (int j = 0; j < n; ++j) {
      const Vec& h = text_feats.at(hm.class_ids[j]);
      if (cfg.hyperbolic()) {
        const Vec he = exp_map_zero(h, cfg.curv());
        hm.distances(i, j) = hyperbolic_distance(pe, he, cfg.curv());
      } else {
        hm.distances(i, j) = cosine_distance(p, h);
      }
    }
  }
  return hm;
}

struct RunReport {
  std::vector<double> session_accuracy;   // A_t per session, percent
  double avg = 0.0;
  double pd = 0.0;
  std::vector<std::int64_t> trainable_params;  // per session
  std::vector<double> lr_final;                // last applied lr per session
  bool ssp = true;
  bool hyp = true;
  std::string sim_mode;  // "hyperbolic" | "cosine" (resolved, c = 0 forces cosine)
  double curvature = 0.0;
  std::uint64_t seed = 0;
  std::vector<Heatmap> heatmaps;  // one per session, over classes seen so far
};

}  // namespace hyperfscil
