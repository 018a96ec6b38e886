#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "contravirt/errors.hpp"
#include "contravirt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace contravirt;

namespace {

struct Common {
  std::string config;
  std::string output;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("-o,--output", c.output, "Output directory (overrides output_dir)");
  cmd->add_option("--seed", c.seed, "Training seed (overrides train.seed)");
}

config::RunConfig load(const Common& c) {
  auto cfg = config::load_run_config(c.config);
  if (!c.output.empty()) cfg.output_dir = c.output;
  if (c.seed) cfg.train.seed = *c.seed;
  return cfg;
}

fs::path start_run(const config::RunConfig& cfg) {
  cfg.validate();
  const fs::path dir = config::resolve_output_dir(cfg);
  fs::create_directories(dir);
  pipeline::write_text(dir / "config.json", config::to_json(cfg));
  return dir;
}

std::unique_ptr<pipeline::Prepared> prepare_verbose(const config::RunConfig& cfg) {
  auto p = pipeline::prepare(cfg);
  for (const auto& n : p->notes) std::cerr << "note: " << n << '\n';
  return p;
}

void report_written(const fs::path& dir, const std::string& method, const metrics::EvalReport& r) {
  std::cout << method << " -> " << dir.string() << '\n';
  for (auto v : {metrics::Variable::Direction, metrics::Variable::Speed, metrics::Variable::Gust}) {
    if (const auto* c = r.find(method, v)) {
      std::printf("  %-3s MAE %.4f  RMSE %.4f  (n=%zu)\n", metrics::to_string(v).c_str(), c->mae, c->rmse, c->n);
    }
  }
}

int run_synth(const Common& c) {
  auto cfg = load(c);
  if (!cfg.data.synthetic) throw ConfigError("synth needs a data.synthetic section");
  const fs::path dir = start_run(cfg);
  const auto syn = data::generate_synthetic(*cfg.data.synthetic);
  pipeline::write_text(dir / "stations.csv", data::station_csv_text(syn.observed.to_series()));
  std::string withheld;
  for (const auto& id : syn.withheld_ids) withheld += (withheld.empty() ? "" : ",") + id;
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(syn.hash));
  std::cout << "stations " << syn.observed.station_count() << ", steps " << syn.observed.steps() << ", hash " << hash
            << "\nsuggested withheld: " << withheld << '\n';
  return 0;
}

int run_build_graph(const Common& c) {
  const auto cfg = load(c);
  const fs::path dir = start_run(cfg);
  const auto p = prepare_verbose(cfg);
  const auto kinds = p->nodes.kinds();
  const auto& s = cfg.use_diffusion ? p->diffusion : p->plain;
  const auto influence = diffusion::influence_stats(s, kinds);
  pipeline::write_text(dir / "nodes.csv", geo::node_set_csv(p->nodes));
  pipeline::write_text(dir / "edges.csv", diffusion::edge_list_csv(s, kinds));
  pipeline::write_text(dir / "influence.csv", diffusion::influence_csv(influence));
  double mean_rf = 0.0;
  for (const auto& r : influence) mean_rf += r.real_fraction;
  if (!influence.empty()) mean_rf /= static_cast<double>(influence.size());
  std::printf("nodes %zu (real %zu, virtual %zu), max row entries %zu, mean real_fraction %.4f\n", p->nodes.size(),
              p->nodes.real().size(), p->nodes.virtual_nodes().size(), s.max_row_entries(), mean_rf);
  return 0;
}

int run_train(const Common& c, const std::string& strategy, bool no_moco, bool no_diffusion,
              std::optional<std::size_t> epochs, bool evaluate, bool quiet) {
  auto cfg = load(c);
  if (!strategy.empty()) cfg.contrastive.strategy = objectives::parse_strategy(strategy);
  if (no_moco) {
    if (cfg.contrastive.strategy == objectives::Strategy::None) {
      throw ConfigError("--no-moco has no effect without a contrastive strategy");
    }
    cfg.contrastive.use_moco = false;
  }
  if (no_diffusion) cfg.use_diffusion = false;
  if (epochs) cfg.train.max_epochs = *epochs;
  const fs::path dir = start_run(cfg);
  const auto p = prepare_verbose(cfg);
  std::cerr << "training windows " << p->train_starts.size() << ", validation windows " << p->val_starts.size()
            << '\n';
  auto out = pipeline::train(*p, quiet ? nullptr : &std::cerr);
  const std::string slug = pipeline::method_slug(out.method);
  model::save_checkpoint(dir / ("checkpoint_" + slug + ".json"), out.checkpoint);
  pipeline::write_text(dir / ("diagnostics_" + slug + ".csv"), trainer::diagnostics_csv(out.result.log));
  pipeline::write_text(dir / "norm_stats.json", pipeline::norm_stats_json(p->stats));
  std::cout << out.method << ": best epoch " << out.result.best_epoch << " of " << out.result.log.size()
            << (out.result.stopped_early ? " (early stop)" : "") << ", checkpoint_" << slug << ".json\n";
  if (evaluate) {
    const auto samples = pipeline::evaluate_checkpoint(*p, out.checkpoint);
    report_written(dir, out.method, pipeline::write_evaluation(dir, out.method, samples));
  }
  return 0;
}

int run_evaluate(const Common& c, const std::string& checkpoint, const std::string& baseline) {
  if (checkpoint.empty() == baseline.empty()) throw ConfigError("give exactly one of --checkpoint or --baseline");
  const auto cfg = load(c);
  const fs::path dir = start_run(cfg);
  const auto p = prepare_verbose(cfg);
  std::string method;
  std::vector<metrics::Sample> samples;
  if (!checkpoint.empty()) {
    auto ck = model::load_checkpoint(checkpoint);
    method = ck.method;
    samples = pipeline::evaluate_checkpoint(*p, ck);
  } else {
    const auto kind = pipeline::parse_baseline(baseline);
    method = pipeline::to_string(kind);
    if (kind == pipeline::BaselineKind::AR || kind == pipeline::BaselineKind::LR) {
      const auto fitted = pipeline::fit_baseline(
          *p, kind == pipeline::BaselineKind::AR ? baselines::LinearKind::AR : baselines::LinearKind::LR);
      pipeline::write_text(dir / ("baseline_" + pipeline::method_slug(method) + ".json"),
                           pipeline::linear_baseline_json(fitted));
      samples = pipeline::evaluate_baseline(*p, kind, &fitted);
    } else {
      samples = pipeline::evaluate_baseline(*p, kind);
    }
  }
  if (samples.empty()) throw DataError("no evaluation samples: no withheld station has observations");
  report_written(dir, method, pipeline::write_evaluation(dir, method, samples));
  return 0;
}

int run_report(const std::string& dir) {
  const auto t = pipeline::report_directory(dir);
  const fs::path d(dir);
  pipeline::write_text(d / "comparison.csv", t.comparison_csv);
  pipeline::write_text(d / "comparison.json", t.json);
  pipeline::write_text(d / "leads.csv", t.leads_csv);
  pipeline::write_text(d / "stations.csv", t.stations_csv);
  std::cout << t.comparison_csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  contravirt::pipeline::retain_heap();
  CLI::App app{"ContraVirt: wind nowcasting at unobserved locations with virtual nodes"};
  app.require_subcommand(1);

  Common common;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic station dataset as CSV");
  add_common(synth, common);

  auto* graph = app.add_subcommand("build-graph", "Write node set, diffusion edges and influence statistics");
  add_common(graph, common);

  std::string strategy;
  bool no_moco = false, no_diffusion = false, eval_after = false, quiet = false;
  std::optional<std::size_t> epochs;
  auto* train = app.add_subcommand("train", "Train one configuration");
  add_common(train, common);
  train->add_option("--strategy", strategy, "Contrastive strategy")
      ->check(CLI::IsMember({"augmented", "multistep", "none"}));
  train->add_flag("--no-moco", no_moco, "In-batch negatives instead of the momentum queue");
  train->add_flag("--no-diffusion", no_diffusion, "Propagate over the row-normalised kNN graph");
  train->add_option("--epochs", epochs, "Maximum epochs (overrides train.max_epochs)");
  train->add_flag("--evaluate", eval_after, "Evaluate the trained model right away");
  train->add_flag("-q,--quiet", quiet, "No per-epoch progress");

  std::string checkpoint, baseline;
  auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint or a baseline at the withheld stations");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->check(CLI::ExistingFile);
  eval->add_option("--baseline", baseline, "ar, lr, knn or idw");

  std::string alias_kind;
  auto* base = app.add_subcommand("baseline", "Same as evaluate --baseline");
  add_common(base, common);
  base->add_option("kind", alias_kind, "ar, lr, knn or idw")->required();

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Consolidate every evaluation in a run directory");
  report->add_option("dir", report_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return run_synth(common);
    if (*graph) return run_build_graph(common);
    if (*train) return run_train(common, strategy, no_moco, no_diffusion, epochs, eval_after, quiet);
    if (*eval) return run_evaluate(common, checkpoint, baseline);
    if (*base) return run_evaluate(common, "", alias_kind);
    if (*report) return run_report(report_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
