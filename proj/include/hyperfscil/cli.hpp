#pragma once

// Command-line surface: gen-data | run | ablate | report | heatmap.
// Exit codes: 0 ok, 2 config/usage, 3 data/IO, 4 numerical failure.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hyperfscil/config.hpp"
#include "hyperfscil/data.hpp"
#include "hyperfscil/errors.hpp"
#include "hyperfscil/protocol.hpp"
#include "hyperfscil/report_io.hpp"

namespace hyperfscil {

namespace cli_detail {

inline std::uint64_t env_or_zero_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("HYPERFSCIL_SEED")) {
    const std::string s(env);
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("HYPERFSCIL_SEED: not an unsigned integer: '" + s + "'");
  }
  return 0;
}

inline void make_out_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output dir " + dir.string() + ": " + ec.message());
}

// Mirrors RunConfig's surface; every option records whether it was given so
// that flags override config-file values without clobbering preset defaults.
struct FlagSet {
  std::string config_path;
  std::string dataset, preset, out;
  bool ssp = true, hyp = true;
  double c = 0, tau = 0, alpha = 0, beta = 0, gamma = 0;
  int rank = 0;
  int base_epochs = 0, incr_epochs = 0, base_batch = 0, incr_batch = 0;
  double base_lr = 0, incr_lr = 0;
  std::uint64_t seed = 0;

  CLI::Option* o_config = nullptr;
  CLI::Option* o_dataset = nullptr;
  CLI::Option* o_preset = nullptr;
  CLI::Option* o_out = nullptr;
  CLI::Option* o_ssp = nullptr;
  CLI::Option* o_hyp = nullptr;
  CLI::Option* o_c = nullptr;
  CLI::Option* o_tau = nullptr;
  CLI::Option* o_alpha = nullptr;
  CLI::Option* o_beta = nullptr;
  CLI::Option* o_gamma = nullptr;
  CLI::Option* o_rank = nullptr;
  CLI::Option* o_be = nullptr;
  CLI::Option* o_bl = nullptr;
  CLI::Option* o_bb = nullptr;
  CLI::Option* o_ie = nullptr;
  CLI::Option* o_il = nullptr;
  CLI::Option* o_ib = nullptr;
  CLI::Option* o_seed = nullptr;

  void attach(CLI::App* cmd, bool with_ablation_flags) {
    o_config = cmd->add_option("--config", config_path, "JSON config file");
    o_dataset = cmd->add_option("--dataset", dataset, "FSEB bundle directory");
    o_preset = cmd->add_option("--preset", preset, "named preset");
    o_out = cmd->add_option("--out", out, "output directory")->required();
    if (with_ablation_flags) {
      o_ssp = cmd->add_flag("--ssp,!--no-ssp", ssp, "session-specific prompt snapshots");
      o_hyp = cmd->add_flag("--hyp,!--no-hyp", hyp, "hyperbolic similarity");
    }
    o_c = cmd->add_option("--c", c, "curvature (0 = cosine)");
    o_tau = cmd->add_option("--tau", tau, "softmax temperature");
    o_alpha = cmd->add_option("--alpha", alpha, "image regularizer weight");
    o_beta = cmd->add_option("--beta", beta, "text regularizer weight");
    o_gamma = cmd->add_option("--gamma", gamma, "rehearsal weight");
    o_rank = cmd->add_option("--rank", rank, "adapter rank");
    o_be = cmd->add_option("--base-epochs", base_epochs, "base-session epochs");
    o_bl = cmd->add_option("--base-lr", base_lr, "base-session learning rate");
    o_bb = cmd->add_option("--base-batch", base_batch, "base-session batch size");
    o_ie = cmd->add_option("--incr-epochs", incr_epochs, "incremental epochs");
    o_il = cmd->add_option("--incr-lr", incr_lr, "incremental learning rate");
    o_ib = cmd->add_option("--incr-batch", incr_batch, "incremental batch size");
    o_seed = cmd->add_option("--seed", seed, "run seed");
  }

  ConfigPatch patch() const {
    ConfigPatch p;
    auto took = [](CLI::Option* o) { return o != nullptr && o->count() > 0; };
    if (took(o_dataset)) p.dataset = dataset;
    if (took(o_preset)) p.preset = preset;
    if (took(o_ssp)) p.ssp = ssp;
    if (took(o_hyp)) p.hyp = hyp;
    if (took(o_c)) p.c = c;
    if (took(o_tau)) p.tau = tau;
    if (took(o_alpha)) p.alpha = alpha;
    if (took(o_beta)) p.beta = beta;
    if (took(o_gamma)) p.gamma = gamma;
    if (took(o_rank)) p.rank = rank;
    if (took(o_be)) p.base.epochs = base_epochs;
    if (took(o_bl)) p.base.lr = base_lr;
    if (took(o_bb)) p.base.batch = base_batch;
    if (took(o_ie)) p.incremental.epochs = incr_epochs;
    if (took(o_il)) p.incremental.lr = incr_lr;
    if (took(o_ib)) p.incremental.batch = incr_batch;
    if (took(o_seed)) p.seed = seed;
    return p;
  }

  RunConfig resolve() const {
    ConfigPatch file;
    if (o_config != nullptr && o_config->count() > 0) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(read_text_file(config_path));
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: invalid JSON in " + config_path + ": " + e.what());
      }
      file = parse_config_json(j);
    }
    RunConfig cfg = resolve_config(file, patch(), std::getenv("HYPERFSCIL_SEED"));
    cfg.out = out;  // delivery address, not configuration: never echoed
    return cfg;
  }
};

inline EmbeddingDataset dataset_for(const RunConfig& cfg) {
  if (!cfg.dataset.empty()) return load_bundle(cfg.dataset);
  if (is_synthetic_preset(cfg.preset)) {
    auto [gen, split] = synthetic_spec(cfg.preset);
    gen.seed = cfg.seed;
    EmbeddingDataset ds = gen_synthetic(gen);
    make_splits(ds, split, cfg.seed);
    return ds;
  }
  if (cfg.preset.empty()) throw ConfigError("run needs --dataset or a synthetic --preset");
  throw ConfigError("preset '" + cfg.preset + "' needs --dataset (no synthetic generator)");
}

inline void write_run_outputs(const RunConfig& cfg, const RunReport& rep) {
  const std::filesystem::path out = cfg.out;
  make_out_dir(out);
  write_report_json(out / "report.json", rep);
  write_metrics_csv(out / "metrics.csv", rep);
  for (std::size_t t = 0; t < rep.heatmaps.size(); ++t)
    write_heatmap_csv(out / ("heatmap_s" + std::to_string(t) + ".csv"), rep.heatmaps[t]);
  write_text_file(out / "config_echo.json", config_echo(cfg).dump(2) + "\n");
}

inline int cmd_gen_data(const std::string& preset, const std::optional<std::uint64_t>& seed,
                        const std::string& out) {
  auto [gen, split] = synthetic_spec(preset);
  gen.seed = env_or_zero_seed(seed);
  EmbeddingDataset ds = gen_synthetic(gen);
  make_splits(ds, split, gen.seed);
  make_out_dir(out);
  write_bundle(ds, out);
  std::printf("wrote %s: %u classes, d_img=%u, d_txt=%u, M=%u, sessions=%zu, k_shot=%u, seed=%llu\n",
              out.c_str(), ds.num_classes(), ds.d_img, ds.d_txt, ds.M, ds.sessions.size(),
              ds.k_shot, static_cast<unsigned long long>(ds.seed));
  return 0;
}

inline int cmd_run(const FlagSet& flags) {
  const RunConfig cfg = flags.resolve();
  if (cfg.out.empty()) throw ConfigError("run: --out is required");
  const EmbeddingDataset ds = dataset_for(cfg);
  const RunReport rep = run_full_stream(ds, cfg.protocol(), cfg.seed);
  write_run_outputs(cfg, rep);
  std::printf("%zu sessions, final=%s avg=%s pd=%s sim=%s\n", rep.session_accuracy.size(),
              detail::format_number(rep.session_accuracy.back()).c_str(),
              detail::format_number(rep.avg).c_str(), detail::format_number(rep.pd).c_str(),
              rep.sim_mode.c_str());
  return 0;
}

inline int cmd_ablate(const FlagSet& flags) {
  const RunConfig cfg = flags.resolve();
  if (cfg.out.empty()) throw ConfigError("ablate: --out is required");
  const EmbeddingDataset ds = dataset_for(cfg);
  struct Variant {
    const char* name;
    bool ssp, hyp;
  };
  const Variant variants[4] = {
      {"Base", false, false}, {"w/o SSP", false, true}, {"w/o Hyp", true, false},
      {"Ours", true, true}};
  std::vector<AblationRow> rows;
  for (const Variant& v : variants) {
    ProtocolConfig pc = cfg.protocol();
    pc.ssp = v.ssp;
    pc.hyp = v.hyp;
    const RunReport rep = run_full_stream(ds, pc, cfg.seed);
    rows.push_back({v.name, rep.session_accuracy.back(), rep.avg, rep.pd});
    std::printf("%-8s final=%s avg=%s pd=%s\n", v.name,
                detail::format_number(rep.session_accuracy.back()).c_str(),
                detail::format_number(rep.avg).c_str(),
                detail::format_number(rep.pd).c_str());
  }
  make_out_dir(cfg.out);
  write_ablation_csv(std::filesystem::path(cfg.out) / "ablation.csv", rows);
  write_text_file(std::filesystem::path(cfg.out) / "config_echo.json",
                  config_echo(cfg).dump(2) + "\n");
  return 0;
}

inline std::vector<double> parse_accuracy_row(const std::string& row) {
  std::vector<double> vals;
  std::size_t pos = 0;
  while (pos <= row.size()) {
    std::size_t comma = row.find(',', pos);
    if (comma == std::string::npos) comma = row.size();
    const std::string tok = row.substr(pos, comma - pos);
    try {
      std::size_t used = 0;
      vals.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("report: bad accuracy value '" + tok + "' in --row");
    }
    pos = comma + 1;
  }
  if (vals.empty()) throw ConfigError("report: --row must list at least one accuracy");
  return vals;
}

inline int cmd_report(const std::vector<std::string>& files,
                      const std::vector<std::string>& rows) {
  if (files.empty() && rows.empty())
    throw ConfigError("report: give report.json paths and/or --row accuracy lists");
  std::vector<double> avgs, pds, finals;
  auto emit = [&](const std::string& label, const std::vector<double>& acc) {
    const Aggregate ag = aggregate(acc);
    avgs.push_back(ag.avg);
    pds.push_back(ag.pd);
    finals.push_back(acc.back());
    std::printf("%s: sessions=%zu avg=%s pd=%s final=%s\n", label.c_str(), acc.size(),
                detail::format_number(ag.avg).c_str(), detail::format_number(ag.pd).c_str(),
                detail::format_number(acc.back()).c_str());
  };
  for (const std::string& f : files) {
    const RunReport rep = load_report_json(f);
    const Aggregate ag = aggregate(rep.session_accuracy);
    if (std::abs(ag.avg - rep.avg) > 1e-9 || std::abs(ag.pd - rep.pd) > 1e-9)
      throw DataError("report: stored avg/pd in " + f + " disagree with session accuracies");
    emit(f, rep.session_accuracy);
  }
  for (std::size_t i = 0; i < rows.size(); ++i)
    emit("row" + std::to_string(i), parse_accuracy_row(rows[i]));
  if (avgs.size() > 1) {
    auto stats = [](const std::vector<double>& xs) {
      double m = 0;
      for (double x : xs) m += x;
      m /= static_cast<double>(xs.size());
      double var = 0;
      for (double x : xs) var += (x - m) * (x - m);
      var /= static_cast<double>(xs.size());
      return std::pair<double, double>(m, std::sqrt(var));
    };
    const auto [ma, sa] = stats(avgs);
    const auto [mp, sp] = stats(pds);
    const auto [mf, sf] = stats(finals);
    std::printf("mean: avg=%s +- %s pd=%s +- %s final=%s +- %s\n",
                detail::format_number(ma).c_str(), detail::format_number(sa).c_str(),
                detail::format_number(mp).c_str(), detail::format_number(sp).c_str(),
                detail::format_number(mf).c_str(), detail::format_number(sf).c_str());
  }
  return 0;
}

inline int cmd_heatmap(const std::string& report_path, int session, const std::string& out) {
  const RunReport rep = load_report_json(report_path);
  if (session >= 0 && static_cast<std::size_t>(session) >= rep.heatmaps.size())
    throw ConfigError("heatmap: session " + std::to_string(session) + " out of range (have " +
                      std::to_string(rep.heatmaps.size()) + ")");
  if (!out.empty()) make_out_dir(out);
  for (std::size_t t = 0; t < rep.heatmaps.size(); ++t) {
    if (session >= 0 && static_cast<std::size_t>(session) != t) continue;
    const Heatmap& hm = rep.heatmaps[t];
    const auto n = static_cast<Eigen::Index>(hm.class_ids.size());
    double diag = 0, off = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < n; ++k) (i == k ? diag : off) += hm.distances(i, k);
    diag /= static_cast<double>(n);
    off /= static_cast<double>(n) * static_cast<double>(n - 1);
    std::printf("s%zu: classes=%zu diag_mean=%s offdiag_mean=%s\n", t, hm.class_ids.size(),
                detail::format_number(diag).c_str(), detail::format_number(off).c_str());
    if (!out.empty())
      write_heatmap_csv(std::filesystem::path(out) / ("heatmap_s" + std::to_string(t) + ".csv"),
                        hm);
  }
  return 0;
}

}  // namespace cli_detail

inline int cli_main(int argc, char** argv) {
  CLI::App app{"hyperbolic image-text few-shot class-incremental learning harness"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic FSEB bundle");
  std::string gen_preset = "synthetic-fine";
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--preset", gen_preset, "synthetic-fine | synthetic-coarse");
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "bundle directory")->required();

  // run / ablate
  auto* run = app.add_subcommand("run", "train and evaluate a full session stream");
  cli_detail::FlagSet run_flags;
  run_flags.attach(run, /*with_ablation_flags=*/true);

  auto* ablate = app.add_subcommand("ablate", "run the 4-config ablation table");
  cli_detail::FlagSet ablate_flags;
  ablate_flags.attach(ablate, /*with_ablation_flags=*/false);

  // report
  auto* report = app.add_subcommand("report", "aggregate report.json files / accuracy rows");
  std::vector<std::string> report_files, report_rows;
  report->add_option("files", report_files, "report.json paths");
  // one value per occurrence, or a trailing file path would be eaten as a row
  // (vector targets default to expected(-1), which also sets allow_extra_args)
  report->add_option("--row", report_rows, "comma-separated per-session accuracies")
      ->type_size(1)
      ->allow_extra_args(false);

  // heatmap
  auto* heatmap = app.add_subcommand("heatmap", "re-emit prototype-text heatmaps from a report");
  std::string hm_report, hm_out;
  int hm_session = -1;
  heatmap->add_option("--report", hm_report, "report.json path")->required();
  heatmap->add_option("--session", hm_session, "session index (default: all)");
  heatmap->add_option("--out", hm_out, "directory for heatmap CSVs");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) {
      std::optional<std::uint64_t> seed;
      if (gen_seed_opt->count() > 0) seed = gen_seed;
      return cli_detail::cmd_gen_data(gen_preset, seed, gen_out);
    }
    if (run->parsed()) return cli_detail::cmd_run(run_flags);
    if (ablate->parsed()) return cli_detail::cmd_ablate(ablate_flags);
    if (report->parsed()) return cli_detail::cmd_report(report_files, report_rows);
    if (heatmap->parsed()) return cli_detail::cmd_heatmap(hm_report, hm_session, hm_out);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  }
}

}  // namespace hyperfscil
