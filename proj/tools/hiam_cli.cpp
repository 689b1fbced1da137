// hiam: simulate | preprocess | train | evaluate | ablate | report
//
// Every subcommand reads the experiment config and works inside --out DIR;
// later stages pick up the files written by earlier ones. Wall-clock data
// goes only to DIR/meta/<subcommand>.json.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "hiam/config.hpp"
#include "hiam/error.hpp"
#include "hiam/pipeline.hpp"

namespace fs = std::filesystem;
using namespace hiam;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::Io, "cannot write " + path.string());
  f << text;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Io, "cannot read " + path.string() + "; run the earlier stage first");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

void write_meta(const fs::path& out, const std::string& command, const ExperimentConfig& cfg) {
  fs::create_directories(out / "meta");
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  const nlohmann::json meta = {{"command", command}, {"finished_at", stamp}, {"seed", cfg.seed}};
  write_text(out / "meta" / (command + ".json"), meta.dump(2) + "\n");
}

struct Stored {
  CompressionMaps maps;
  Dataset dataset;
  NormStats stats;
};

Stored load_store(const fs::path& out) {
  Stored s;
  s.maps = read_maps_csv(out / "store");
  s.dataset = read_dataset(out / "store");
  s.stats = NormStats::from_json(read_json(out / "norm_stats.json"));
  return s;
}

void cmd_simulate(const ExperimentConfig& cfg, const fs::path& out) {
  const TransactionLog log = generate_log(cfg.sim);
  write_log_csv(log, out / "log.csv");
  save_graph(cfg.graph, out / "graph.txt");
  spdlog::info("simulated {} transactions over {} days", log.size(), cfg.sim.days);
}

void cmd_preprocess(const ExperimentConfig& cfg, const fs::path& out) {
  const TransactionLog log = read_log_csv(out / "log.csv");
  const PreparedData data = prepare(log, cfg);
  fs::create_directories(out / "store");
  write_maps_csv(data.maps, out / "store");
  write_dataset(data.dataset, out / "store");
  write_text(out / "norm_stats.json", data.stats.to_json().dump(2) + "\n");
  spdlog::info("samples: train {} val {} test {}", data.dataset.train.size(),
               data.dataset.val.size(), data.dataset.test.size());
}

void cmd_train(const ExperimentConfig& cfg, const fs::path& out) {
  const Stored s = load_store(out);
  HiamModel model(cfg.model, cfg.graph);
  const TrainResult r = train(model, s.dataset.train, s.dataset.val, s.stats, cfg.train);
  save_checkpoint(out / "checkpoint.bin", checkpoint_manifest(cfg.model, s.stats, r.best_epoch),
                  r.best_params);
  write_history_csv(r.history, out / "history.csv");
  write_loss_curve_svg(r.history, out / "loss.svg");
  spdlog::info("best epoch {} validation MAPE {:.4f}", r.best_epoch, r.best_val_mape);
}

void cmd_evaluate(const ExperimentConfig& cfg, const fs::path& out) {
  const Stored s = load_store(out);
  const Checkpoint ck = load_checkpoint(out / "checkpoint.bin");
  const HiamModel model = model_from_checkpoint(ck, cfg.graph);
  const NormStats stats = stats_from_checkpoint(ck);
  const HaBaseline ha(s.dataset.train_truth, cfg.dataset.intervals_per_day);
  const EvaluationReport report = evaluate(model, stats, s.dataset.test, ha, s.maps);
  write_report_json(report, out / "report.json");
  write_report_csv(report, out / "report.csv");
  write_mape_bars_svg(report, out / "mape.svg");
}

void cmd_ablate(const ExperimentConfig& cfg, const fs::path& out) {
  const Stored s = load_store(out);
  const PreparedData data{s.maps, s.dataset, s.stats};
  std::vector<AblationRow> rows;
  for (const auto mode :
       {InteractionMode::None, InteractionMode::SingleStation, InteractionMode::Dit}) {
    for (const auto& variant : input_variants()) {
      rows.push_back(run_variant(cfg, data, variant, mode).row);
    }
  }
  write_ablation_csv(rows, out / "ablation.csv");
  write_text(out / "ablation.md", render_ablation_markdown(rows));
}

std::string pct(const nlohmann::json& v) {
  if (v.is_null()) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", v.get<double>() * 100.0);
  return buf;
}

void cmd_report(const ExperimentConfig&, const fs::path& out) {
  const nlohmann::json r = read_json(out / "report.json");
  std::ostringstream md;
  md << "# Test-split network MAPE\n\n"
     << "Samples: " << r.at("samples").get<std::size_t>() << "\n\n"
     << "| horizon | OD model | OD HA | DO model | DO HA |\n|---|---|---|---|---|\n";
  const auto& mh = r.at("model").at("horizons");
  const auto& hh = r.at("ha").at("horizons");
  for (std::size_t h = 0; h < mh.size(); ++h) {
    md << "| " << mh[h].at("horizon").get<int>() << " | " << pct(mh[h].at("od_mape")) << " | "
       << pct(hh[h].at("od_mape")) << " | " << pct(mh[h].at("do_mape")) << " | "
       << pct(hh[h].at("do_mape")) << " |\n";
  }
  md << "| mean | " << pct(r.at("model").at("mean_od_mape")) << " | "
     << pct(r.at("ha").at("mean_od_mape")) << " | " << pct(r.at("model").at("mean_do_mape"))
     << " | " << pct(r.at("ha").at("mean_do_mape")) << " |\n\n"
     << "## Top K-1 vs merged remainder (model)\n\n"
     << "| horizon | OD top | OD rest | DO top | DO rest |\n|---|---|---|---|---|\n";
  for (const auto& h : mh) {
    md << "| " << h.at("horizon").get<int>() << " | " << pct(h.at("od_topk_mape")) << " | "
       << pct(h.at("od_remainder_mape")) << " | " << pct(h.at("do_topk_mape")) << " | "
       << pct(h.at("do_remainder_mape")) << " |\n";
  }
  if (fs::exists(out / "ablation.md")) {
    std::ifstream f(out / "ablation.md");
    md << "\n## Ablation\n\n" << f.rdbuf();
  }
  write_text(out / "report.md", md.str());
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("hiam");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("HIAM_LOG_LEVEL")) {
    spdlog::set_level(spdlog::level::from_str(level));
  }
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Online metro OD/DO forecasting pipeline"};
  app.require_subcommand(1);
  Options opt;
  using Handler = void (*)(const ExperimentConfig&, const fs::path&);
  const std::vector<std::tuple<const char*, const char*, Handler>> commands = {
      {"simulate", "Generate a synthetic transaction log", cmd_simulate},
      {"preprocess", "Build compression maps, samples and normalization statistics",
       cmd_preprocess},
      {"train", "Train and keep the best-validation checkpoint", cmd_train},
      {"evaluate", "Score the checkpoint and the HA baseline on the test split", cmd_evaluate},
      {"ablate", "Train and score every input variant and interaction mode", cmd_ablate},
      {"report", "Render markdown comparison tables", cmd_report},
  };
  std::vector<std::pair<CLI::App*, Handler>> subs;
  for (const auto& [name, help, handler] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "Experiment config (JSON)")->required();
    sub->add_option("--seed", opt.seed, "Override the config seed");
    sub->add_option("--out", opt.out, "Working directory")->capture_default_str();
    subs.emplace_back(sub, handler);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const ExperimentConfig cfg = load_config(opt.config, opt.seed);
    const fs::path out(opt.out);
    fs::create_directories(out);
    for (const auto& [sub, handler] : subs) {
      if (sub->parsed()) {
        handler(cfg, out);
        write_meta(out, sub->get_name(), cfg);
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: kind=" << to_string(e.kind()) << " msg=\"" << escape(e.what()) << "\"\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: kind=internal msg=\"" << escape(e.what()) << "\"\n";
    return 1;
  }
  return 0;
}
