#pragma once

// Result serialization: report.json round-trip plus the CSV emitters.  All
// numbers go through shortest round-trip formatting (std::to_chars / the JSON
// library's own dtoa), so outputs are locale-independent and byte-stable.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyperfscil/errors.hpp"
#include "hyperfscil/metrics.hpp"

namespace hyperfscil {

namespace detail {

inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json json_of_report(const RunReport& r) {
  nlohmann::json j;
  j["session_accuracy"] = r.session_accuracy;
  j["avg"] = r.avg;
  j["pd"] = r.pd;
  j["trainable_params"] = r.trainable_params;
  j["lr_final"] = r.lr_final;
  j["ssp"] = r.ssp;
  j["hyp"] = r.hyp;
  j["sim_mode"] = r.sim_mode;
  j["curvature"] = r.curvature;
  j["seed"] = r.seed;
  nlohmann::json maps = nlohmann::json::array();
  for (const Heatmap& hm : r.heatmaps) {
    nlohmann::json m;
    m["class_ids"] = hm.class_ids;
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < hm.distances.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index k = 0; k < hm.distances.cols(); ++k) row.push_back(hm.distances(i, k));
      rows.push_back(std::move(row));
    }
    m["distances"] = std::move(rows);
    maps.push_back(std::move(m));
  }
  j["heatmaps"] = std::move(maps);
  return j;
}

inline RunReport report_of_json(const nlohmann::json& j) {
  auto fail = [](const std::string& why) -> RunReport {
    throw DataError("report: " + why);
  };
  if (!j.is_object()) return fail("top level must be an object");
  static const char* kKeys[] = {"session_accuracy", "avg", "pd", "trainable_params",
                                "lr_final", "ssp", "hyp", "sim_mode",
                                "curvature", "seed", "heatmaps"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : kKeys)
      if (it.key() == k) ok = true;
    if (!ok) return fail("unknown key '" + it.key() + "'");
  }
  for (const char* k : kKeys)
    if (!j.contains(k)) return fail(std::string("missing key '") + k + "'");

  RunReport r;
  try {
    r.session_accuracy = j.at("session_accuracy").get<std::vector<double>>();
    r.avg = j.at("avg").get<double>();
    r.pd = j.at("pd").get<double>();
    r.trainable_params = j.at("trainable_params").get<std::vector<std::int64_t>>();
    r.lr_final = j.at("lr_final").get<std::vector<double>>();
    r.ssp = j.at("ssp").get<bool>();
    r.hyp = j.at("hyp").get<bool>();
    r.sim_mode = j.at("sim_mode").get<std::string>();
    r.curvature = j.at("curvature").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& m : j.at("heatmaps")) {
      Heatmap hm;
      hm.class_ids = m.at("class_ids").get<std::vector<std::uint32_t>>();
      const auto& rows = m.at("distances");
      const auto n = hm.class_ids.size();
      if (rows.size() != n) return fail("heatmap distances must be square over class_ids");
      hm.distances.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        const auto& row = rows.at(i);
        if (row.size() != n) return fail("heatmap distances must be square over class_ids");
        for (std::size_t k = 0; k < n; ++k)
          hm.distances(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
              row.at(k).get<double>();
      }
      r.heatmaps.push_back(std::move(hm));
    }
  } catch (const nlohmann::json::exception& e) {
    return fail(std::string("malformed field: ") + e.what());
  }
  if (r.session_accuracy.empty()) return fail("session_accuracy must be non-empty");
  if (r.trainable_params.size() != r.session_accuracy.size() ||
      r.lr_final.size() != r.session_accuracy.size())
    return fail("per-session arrays must have equal length");
  if (r.sim_mode != "hyperbolic" && r.sim_mode != "cosine")
    return fail("sim_mode must be 'hyperbolic' or 'cosine'");
  return r;
}

inline void write_report_json(const std::filesystem::path& path, const RunReport& r) {
  write_text_file(path, json_of_report(r).dump(2) + "\n");
}

inline RunReport load_report_json(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("report: invalid JSON in " + path.string() + ": " + e.what());
  }
  return report_of_json(j);
}

inline void write_metrics_csv(const std::filesystem::path& path, const RunReport& r) {
  std::string out = "session,accuracy,trainable_params,lr_final\n";
  for (std::size_t t = 0; t < r.session_accuracy.size(); ++t) {
    out += std::to_string(t);
    out += ',';
    out += detail::format_number(r.session_accuracy[t]);
    out += ',';
    out += std::to_string(r.trainable_params[t]);
    out += ',';
    out += detail::format_number(r.lr_final[t]);
    out += '\n';
  }
  write_text_file(path, out);
}

inline void write_heatmap_csv(const std::filesystem::path& path, const Heatmap& hm) {
  std::string out = "class_id";
  for (auto id : hm.class_ids) {
    out += ',';
    out += std::to_string(id);
  }
  out += '\n';
  for (std::size_t i = 0; i < hm.class_ids.size(); ++i) {
    out += std::to_string(hm.class_ids[i]);
    for (std::size_t k = 0; k < hm.class_ids.size(); ++k) {
      out += ',';
      out += detail::format_number(
          hm.distances(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
    }
    out += '\n';
  }
  write_text_file(path, out);
}

struct AblationRow {
  std::string name;  // Base | w/o SSP | w/o Hyp | Ours
  double final_accuracy = 0.0;
  double avg = 0.0;
  double pd = 0.0;
};

inline void write_ablation_csv(const std::filesystem::path& path,
                               const std::vector<AblationRow>& rows) {
  std::string out = "config,final_accuracy,avg,pd\n";
  for (const AblationRow& row : rows) {
    out += row.name;
    out += ',';
    out += detail::format_number(row.final_accuracy);
    out += ',';
    out += detail::format_number(row.avg);
    out += ',';
    out += detail::format_number(row.pd);
    out += '\n';
  }
  write_text_file(path, out);
}

}  // namespace hyperfscil
