#pragma once

// Few-shot class-incremental session runner: base-session training, frozen
// incremental sessions with snapshot/prototype buffers, and full-stream
// evaluation.  One RNG drives all batch shuffles so that ablation flags do
// not perturb data ordering.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "hyperfscil/data.hpp"
#include "hyperfscil/encoder.hpp"
#include "hyperfscil/errors.hpp"
#include "hyperfscil/metrics.hpp"
#include "hyperfscil/objective.hpp"
#include "hyperfscil/optimizer.hpp"

namespace hyperfscil {

struct ScheduleConfig {
  int epochs = 1;
  double lr = 0.002;
  int batch = 4;

  void validate() const {
    if (epochs < 1 || !(lr > 0.0) || batch < 1)
      throw ConfigError("schedule: epochs/lr/batch must be positive");
  }
};

struct ProtocolConfig {
  int rank = 4;
  double tau = 0.05;
  double alpha = 10.0;
  double beta = 25.0;
  double gamma = 30.0;
  double curvature = 0.5;
  bool ssp = true;  // keep frozen per-session text snapshots in the softmax
  bool hyp = true;  // hyperbolic similarity (cosine when false or curvature == 0)
  ScheduleConfig base;
  ScheduleConfig incremental;
  double momentum = 0.9;

  void validate() const {
    if (rank < 1) throw ConfigError("protocol: rank must be >= 1");
    if (!(tau > 0.0)) throw ConfigError("protocol: tau must be > 0");
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
      throw ConfigError("protocol: trade-off weights must be >= 0");
    if (curvature < 0.0 || !std::isfinite(curvature))
      throw ConfigError("protocol: curvature must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("protocol: momentum in [0, 1)");
    base.validate();
    incremental.validate();
  }

  // Zero curvature degenerates to the cosine path regardless of the hyp flag.
  LossConfig loss_config() const {
    LossConfig c;
    c.tau = tau;
    c.alpha = alpha;
    c.beta = beta;
    c.gamma = gamma;
    c.sim_mode = (hyp && curvature > 0.0) ? SimMode::kHyperbolic : SimMode::kCosine;
    c.curvature = curvature;
    return c;
  }
};

// Exactly two frozen vectors per seen class; entries are never overwritten.
struct MemoryBuffer {
  std::map<std::uint32_t, Vec> ssp_text;
  std::map<std::uint32_t, Vec> prototypes;

  void insert_ssp(std::uint32_t id, Vec v) {
    if (!ssp_text.emplace(id, std::move(v)).second)
      throw std::invalid_argument("buffer: duplicate SSP snapshot for class " +
                                  std::to_string(id));
  }
  void insert_prototype(std::uint32_t id, Vec v) {
    if (!prototypes.emplace(id, std::move(v)).second)
      throw std::invalid_argument("buffer: duplicate prototype for class " + std::to_string(id));
  }
  std::size_t total_stored() const { return ssp_text.size() + prototypes.size(); }
};

// Mean of prompted features per class; no re-normalization.
inline std::map<std::uint32_t, Vec> compute_prototypes(const std::vector<Vec>& features,
                                                       const std::vector<std::uint32_t>& ids) {
  if (features.size() != ids.size())
    throw std::invalid_argument("compute_prototypes: size mismatch");
  std::map<std::uint32_t, std::pair<Vec, int>> acc;
  for (std::size_t i = 0; i < features.size(); ++i) {
    auto it = acc.find(ids[i]);
    if (it == acc.end())
      acc.emplace(ids[i], std::make_pair(features[i], 1));
    else {
      it->second.first += features[i];
      it->second.second += 1;
    }
  }
  std::map<std::uint32_t, Vec> out;
  for (auto& [id, sum_count] : acc)
    out.emplace(id, sum_count.first / static_cast<double>(sum_count.second));
  return out;
}

// Copies the current prompted text features into the buffer, one per class.
inline void snapshot_ssp(const std::vector<std::uint32_t>& class_ids,
                         const EmbeddingDataset& ds, const AdapterParams& params,
                         MemoryBuffer& buffer) {
  for (std::uint32_t id : class_ids) {
    const TextRecord& rec = ds.text.at(id);
    std::vector<Vec> templates;
    templates.reserve(rec.templates.size());
    for (const auto& t : rec.templates) templates.push_back(t.cast<double>());
    buffer.insert_ssp(id, encode_text(templates, params));
  }
}

namespace detail {

struct SessionData {
  std::vector<std::uint32_t> class_ids;
  std::vector<Vec> train_feats;
  std::vector<std::uint32_t> train_labels;
  std::map<int, Vec> mean_templates;  // keyed for LossProblem
};

inline SessionData session_data(const EmbeddingDataset& ds, int t) {
  SessionData sd;
  sd.class_ids = ds.sessions.at(t);
  std::map<std::uint32_t, bool> member;
  for (std::uint32_t id : sd.class_ids) member[id] = true;
  for (const auto& rec : ds.images) {
    if (rec.split != Split::kTrain || !member.count(rec.class_id)) continue;
    sd.train_feats.push_back(rec.vec.cast<double>());
    sd.train_labels.push_back(rec.class_id);
  }
  for (std::uint32_t id : sd.class_ids) {
    const TextRecord& rec = ds.text.at(id);
    Vec mean = Vec::Zero(ds.d_txt);
    for (const auto& tmpl : rec.templates) mean += tmpl.cast<double>();
    mean /= static_cast<double>(rec.templates.size());
    sd.mean_templates.emplace(static_cast<int>(id), std::move(mean));
  }
  return sd;
}

inline Vec mean_template(const EmbeddingDataset& ds, std::uint32_t id) {
  const TextRecord& rec = ds.text.at(id);
  Vec mean = Vec::Zero(ds.d_txt);
  for (const auto& tmpl : rec.templates) mean += tmpl.cast<double>();
  return mean / static_cast<double>(rec.templates.size());
}

}  // namespace detail

struct StreamState {
  AdapterParams params;
  MemoryBuffer buffer;
  std::mt19937_64 rng;
  int sessions_done = 0;  // number of completed sessions
};

struct SessionOutcome {
  double accuracy = 0.0;
  std::int64_t trainable = 0;
  double lr_final = 0.0;
  Heatmap heatmap;
};

namespace detail {

// Text features used for evaluation: frozen snapshots when SSP is on,
// otherwise every seen class re-encoded through the current adapter.
inline std::map<std::uint32_t, Vec> eval_text_features(const EmbeddingDataset& ds,
                                                       const ProtocolConfig& cfg,
                                                       const StreamState& state, int t) {
  std::map<std::uint32_t, Vec> feats;
  if (cfg.ssp) return state.buffer.ssp_text;
  for (int s = 0; s <= t; ++s)
    for (std::uint32_t id : ds.sessions.at(s)) {
      const TextRecord& rec = ds.text.at(id);
      std::vector<Vec> templates;
      for (const auto& tmpl : rec.templates) templates.push_back(tmpl.cast<double>());
      feats.emplace(id, encode_text(templates, state.params));
    }
  return feats;
}

inline double evaluate_stream(const EmbeddingDataset& ds, const ProtocolConfig& cfg,
                              const StreamState& state, int t) {
  std::map<std::uint32_t, bool> in_scope;
  for (int s = 0; s <= t; ++s)
    for (std::uint32_t id : ds.sessions.at(s)) in_scope[id] = true;
  const auto text_feats = eval_text_features(ds, cfg, state, t);
  const LossConfig loss = cfg.loss_config();
  std::vector<std::uint32_t> preds, labels;
  for (const auto& rec : ds.images) {
    if (rec.split != Split::kTest || !in_scope.count(rec.class_id)) continue;
    preds.push_back(classify(encode_image(rec.vec.cast<double>(), state.params), text_feats,
                             loss));
    labels.push_back(rec.class_id);
  }
  return session_accuracy(preds, labels);
}

inline SessionOutcome train_session(const EmbeddingDataset& ds, const ProtocolConfig& cfg,
                                    StreamState& state, int t) {
  const SessionData sd = session_data(ds, t);
  if (sd.train_feats.empty()) throw DataError("session " + std::to_string(t) + ": no samples");
  const ScheduleConfig& sched = t == 0 ? cfg.base : cfg.incremental;
  const LossConfig loss = cfg.loss_config();

  set_phase(state.params, t == 0 ? Phase::kBase : Phase::kIncremental);

  LossProblem problem;
  problem.live_templates = sd.mean_templates;
  if (t > 0) {
    if (cfg.ssp) {
      for (const auto& [id, snap] : state.buffer.ssp_text)
        problem.frozen_text.emplace(static_cast<int>(id), snap);
    } else {
      for (int s = 0; s < t; ++s)
        for (std::uint32_t id : ds.sessions.at(s))
          problem.live_templates.emplace(static_cast<int>(id), mean_template(ds, id));
    }
    for (const auto& [id, proto] : state.buffer.prototypes)
      problem.prototypes.emplace(static_cast<int>(id), proto);
  }
  for (std::uint32_t id : sd.class_ids) problem.current_ids.push_back(static_cast<int>(id));

  const int n = static_cast<int>(sd.train_feats.size());
  const int steps_per_epoch = (n + sched.batch - 1) / sched.batch;
  const int total_steps = sched.epochs * steps_per_epoch;
  OptimizerState opt = make_optimizer(state.params, sched.lr, total_steps, cfg.momentum);

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int epoch = 0; epoch < sched.epochs; ++epoch) {
    fisher_yates(order, state.rng);
    for (int start = 0; start < n; start += sched.batch) {
      const int end = std::min(n, start + sched.batch);
      problem.image_feats.clear();
      problem.labels.clear();
      for (int i = start; i < end; ++i) {
        problem.image_feats.push_back(sd.train_feats[order[i]]);
        problem.labels.push_back(static_cast<int>(sd.train_labels[order[i]]));
      }
      const GradResult g = loss_gradients(problem, state.params, loss);
      sgd_momentum_step(state.params, g, opt);
    }
  }

  // Freeze-time bookkeeping: snapshots and prototypes for this session's
  // classes, then evaluation over everything seen so far.
  snapshot_ssp(sd.class_ids, ds, state.params, state.buffer);
  std::vector<Vec> prompted;
  prompted.reserve(sd.train_feats.size());
  for (const Vec& f : sd.train_feats) prompted.push_back(encode_image(f, state.params));
  for (auto& [id, proto] : compute_prototypes(prompted, sd.train_labels))
    state.buffer.insert_prototype(id, std::move(proto));

  SessionOutcome out;
  out.trainable = trainable_count(state.params);
  out.lr_final =
      cosine_warmup_lr(opt.step - 1, opt.warmup_steps, opt.total_steps, opt.base_lr);
  out.accuracy = evaluate_stream(ds, cfg, state, t);
  out.heatmap =
      prototype_text_heatmap(state.buffer.prototypes, eval_text_features(ds, cfg, state, t),
                             loss);
  state.sessions_done = t + 1;
  return out;
}

}  // namespace detail

inline SessionOutcome run_base_session(const EmbeddingDataset& ds, const ProtocolConfig& cfg,
                                       std::uint64_t seed, StreamState& state) {
  cfg.validate();
  ds.validate();
  if (ds.d_img != ds.d_txt)
    throw DataError("run: image/text features must share one dimension");
  if (ds.sessions.empty()) throw DataError("run: dataset has no session assignment");
  if (!validate_disjoint(ds).empty()) throw DataError("run: session class sets overlap");
  state.params =
      init_params(static_cast<int>(ds.d_img), static_cast<int>(ds.d_txt), cfg.rank, seed);
  state.buffer = MemoryBuffer{};
  state.rng.seed(seed);
  state.sessions_done = 0;
  return detail::train_session(ds, cfg, state, 0);
}

inline SessionOutcome run_incremental_session(int t, const EmbeddingDataset& ds,
                                              const ProtocolConfig& cfg, StreamState& state) {
  if (t < 1 || t >= static_cast<int>(ds.sessions.size()))
    throw std::invalid_argument("run_incremental_session: bad session index");
  if (state.sessions_done != t)
    throw std::invalid_argument("run_incremental_session: sessions must run in order");
  for (std::uint32_t id : ds.sessions.at(t))
    if (state.buffer.ssp_text.count(id))
      throw std::invalid_argument("run_incremental_session: class overlaps buffer");
  return detail::train_session(ds, cfg, state, t);
}

inline RunReport run_full_stream(const EmbeddingDataset& ds, const ProtocolConfig& cfg,
                                 std::uint64_t seed) {
  StreamState state;
  RunReport report;
  report.ssp = cfg.ssp;
  report.hyp = cfg.hyp;
  report.sim_mode =
      cfg.loss_config().sim_mode == SimMode::kHyperbolic ? "hyperbolic" : "cosine";
  report.curvature = cfg.curvature;
  report.seed = seed;

  auto record = [&](const SessionOutcome& oc) {
    report.session_accuracy.push_back(oc.accuracy);
    report.trainable_params.push_back(oc.trainable);
    report.lr_final.push_back(oc.lr_final);
    report.heatmaps.push_back(oc.heatmap);
  };
  record(run_base_session(ds, cfg, seed, state));
  for (int t = 1; t < static_cast<int>(ds.sessions.size()); ++t)
    record(run_incremental_session(t, ds, cfg, state));

  const Aggregate agg = aggregate(report.session_accuracy);
  report.avg = agg.avg;
  report.pd = agg.pd;
  return report;
}

}  // namespace hyperfscil
