#include "contravirt/pipeline.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "contravirt/errors.hpp"
#include "contravirt/format.hpp"

namespace contravirt::pipeline {

using nlohmann::json;

namespace {

constexpr metrics::Variable kVars[3] = {metrics::Variable::Direction, metrics::Variable::Speed,
                                        metrics::Variable::Gust};

const std::vector<std::string>& table_order() {
  static const std::vector<std::string> order = {
      "ContraVirt (Augmented MoCo)", "ContraVirt (Multi-step MoCo)", "Augmented", "Multi-step", "w/o Contrastive",
      "w/o Contrastive & Diffusion", "AR", "LR", "KNN", "IDW"};
  return order;
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.values().begin(), m.values().end())}};
}

void push_samples(std::vector<metrics::Sample>& out, const std::string& method, const std::string& station,
                  const data::Dataset& truth, std::size_t truth_row, std::size_t step, std::size_t lead,
                  const baselines::Wind& w) {
  if (step >= truth.steps()) return;
  const double pv[3] = {w.dd, w.ff, w.gff};
  const std::size_t vars[3] = {data::kDd, data::kFf, data::kGff};
  for (int k = 0; k < 3; ++k) {
    const double tv = truth.value(truth_row, step, vars[k]);
    if (std::isnan(tv) || !std::isfinite(pv[k])) continue;
    out.push_back({method, kVars[k], lead, station, truth.time_at(step), pv[k], tv});
  }
}

}  // namespace

trainer::TrainingData Prepared::training_data(bool use_diffusion) const {
  trainer::TrainingData d;
  d.frames = &frames;
  d.meta = meta;
  d.s = std::make_shared<const ad::SharedCsr>((use_diffusion ? diffusion : plain).to_csr());
  d.stats = stats;
  d.spec = spec;
  d.train_starts = train_starts;
  d.val_starts = val_starts;
  d.pairing = pairing;
  return d;
}

void retain_heap() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

std::unique_ptr<Prepared> prepare(const config::RunConfig& cfg) {
  cfg.validate();
  auto p = std::make_unique<Prepared>();
  p->cfg = cfg;

  std::vector<std::string> suggested;
  if (cfg.data.synthetic) {
    auto syn = data::generate_synthetic(*cfg.data.synthetic);
    p->full = std::move(syn.observed);
    suggested = std::move(syn.withheld_ids);
  } else if (cfg.data.csv) {
    data::ParseLog log;
    const auto series = data::parse_station_csv(*cfg.data.csv, &log);
    for (auto& m : log.messages) p->notes.push_back(std::move(m));
    for (const auto& id : log.excluded_stations) p->notes.push_back("excluded station " + id + " (no wind data)");
    if (series.empty()) throw DataError("no usable stations in " + cfg.data.csv->string());
    p->full = data::Dataset::from_series(series);
  } else {
    throw ConfigError("data: either csv or synthetic must be given");
  }
  p->data_hash = data::dataset_hash(p->full);

  std::vector<std::string> ids;
  for (const auto& s : p->full.stations()) ids.push_back(s.id);
  if (!cfg.split.withheld_ids.empty()) {
    p->split = data::split_stations(ids, cfg.split.withheld_ids);
  } else if (cfg.split.withheld_count) {
    p->split = data::split_stations(ids, *cfg.split.withheld_count, cfg.split.seed);
  } else {
    p->split = data::split_stations(ids, suggested);
  }
  const auto withheld = p->split.withheld_set();
  if (p->split.train_ids.empty()) throw DataError("no training stations left after the split");
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (!withheld.count(ids[i])) p->train_rows.push_back(i);

  p->observed = p->full.without_observations(withheld);
  p->filled = p->observed;
  features::forward_fill(p->filled, cfg.windows.max_fill_gap);

  p->nodes = geo::build_node_set(p->full.stations(), cfg.grid, withheld);
  const std::size_t n = p->nodes.size();
  const std::size_t k = std::min(cfg.graph.k, n > 0 ? n - 1 : 0);
  p->adjacency = k > 0 ? geo::knn_adjacency(p->nodes, k) : Matrix(n, n);
  const auto kinds = p->nodes.kinds();
  p->diffusion = diffusion::build(p->adjacency, kinds, cfg.diffusion);
  p->plain = diffusion::from_dense(diffusion::transition(p->adjacency), true);

  const std::size_t steps = p->full.steps();
  p->period_split = static_cast<std::size_t>(std::floor((1.0 - cfg.windows.validation_fraction) * steps));
  p->stats = features::NormStats::compute(p->observed, p->train_rows, p->period_split);
  for (const auto& w : p->stats.warnings) p->notes.push_back(w);
  p->frames = features::build_frames(p->observed, p->nodes, p->stats, cfg.windows.max_fill_gap);
  p->meta = features::NodeMeta::from(p->nodes);

  p->spec = {cfg.windows.t_in, cfg.windows.t_out, cfg.windows.train_stride};
  std::string warn;
  p->train_starts = features::make_windows(0, p->period_split, p->spec, p->frames.input_ok, p->frames.target_ok, &warn);
  if (!warn.empty()) p->notes.push_back("training windows: " + warn);
  warn.clear();
  p->val_starts = features::make_windows(p->period_split, steps, p->spec, p->frames.input_ok, p->frames.target_ok, &warn);
  if (!warn.empty()) p->notes.push_back("validation windows: " + warn);
  const features::WindowSpec eval_spec{cfg.windows.t_in, cfg.windows.t_out, cfg.windows.eval_stride};
  p->eval_starts = features::make_windows(0, steps, eval_spec, p->frames.input_ok);

  for (const auto& node : p->nodes.nodes()) {
    if (node.origin != geo::NodeOrigin::TestReplacement) continue;
    p->targets.push_back({node.id, *p->full.find(node.station_id), node.station_id});
  }

  std::vector<geo::GeoPoint> real_locs;
  for (std::size_t id : p->nodes.real()) real_locs.push_back(p->nodes[id].location);
  if (!real_locs.empty()) {
    for (std::size_t id : p->nodes.virtual_nodes())
      p->pairing.push_back(geo::nearest(p->nodes[id].location, real_locs, 1).front());
  }
  return p;
}

std::string method_name(objectives::Strategy s, bool use_moco, bool use_diffusion) {
  using objectives::Strategy;
  if (s == Strategy::None) return use_diffusion ? "w/o Contrastive" : "w/o Contrastive & Diffusion";
  std::string base = s == Strategy::Augmented ? "Augmented" : "Multi-step";
  std::string name = use_moco ? "ContraVirt (" + base + " MoCo)" : base;
  if (!use_diffusion) name += " w/o Diffusion";
  return name;
}

std::string method_slug(const std::string& method) {
  std::string out;
  bool dash = false;
  for (unsigned char c : method) {
    if (std::isalnum(c)) {
      if (dash && !out.empty()) out += '-';
      out += static_cast<char>(std::tolower(c));
      dash = false;
    } else {
      dash = true;
    }
  }
  return out;
}

TrainOutcome train(const Prepared& p, std::ostream* progress) {
  const auto& cfg = p.cfg;
  model::ModelDims dims;
  dims.nodes = p.meta.nodes;
  dims.n_virtual = p.meta.n_virtual;
  dims.type_dim = cfg.model.type_dim;
  dims.embed_dim = cfg.model.embed_dim;
  dims.t_in = cfg.windows.t_in;
  dims.t_out = cfg.windows.t_out;

  TrainOutcome out;
  out.method = method_name(cfg.contrastive.strategy, cfg.contrastive.use_moco, cfg.use_diffusion);
  auto& c = out.checkpoint;
  c.model = model::Model::init(dims, cfg.train.seed);
  const auto data = p.training_data(cfg.use_diffusion);
  out.result = trainer::train(c.model, data, cfg.train, cfg.contrastive, cfg.lambda, progress);
  c.stats = p.stats;
  c.diffusion = cfg.diffusion;
  c.use_diffusion = cfg.use_diffusion;
  c.method = out.method;
  c.layout.type_dim = cfg.model.type_dim;
  c.seed = cfg.train.seed;
  for (std::size_t id : p.nodes.real()) c.station_order.push_back(p.nodes[id].station_id);
  return out;
}

std::vector<metrics::Sample> evaluate_checkpoint(const Prepared& p, model::Checkpoint& c) {
  const auto& d = c.model.dims;
  if (d.nodes != p.meta.nodes || d.n_virtual != p.meta.n_virtual) {
    throw DataError("checkpoint node layout does not match the configured grid and split");
  }
  if (d.t_in != p.spec.t_in || d.t_out != p.spec.t_out) throw DataError("checkpoint window lengths differ");
  std::vector<std::string> order;
  for (std::size_t id : p.nodes.real()) order.push_back(p.nodes[id].station_id);
  if (order != c.station_order) throw DataError("checkpoint station order does not match the data");
  if (!(c.stats == p.stats)) throw DataError("checkpoint normalisation statistics do not match the data");
  auto data = p.training_data(c.use_diffusion);
  return trainer::evaluate(c.model, data, p.eval_starts, p.targets, p.full, c.method);
}

BaselineKind parse_baseline(const std::string& s) {
  std::string u;
  for (unsigned char ch : s) u += static_cast<char>(std::toupper(ch));
  if (u == "AR") return BaselineKind::AR;
  if (u == "LR") return BaselineKind::LR;
  if (u == "KNN") return BaselineKind::KNN;
  if (u == "IDW") return BaselineKind::IDW;
  throw ConfigError("unknown baseline '" + s + "' (expected ar, lr, knn or idw)");
}

std::string to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::AR: return "AR";
    case BaselineKind::LR: return "LR";
    case BaselineKind::KNN: return "KNN";
    case BaselineKind::IDW: return "IDW";
  }
  return "?";
}

baselines::LinearBaseline fit_baseline(const Prepared& p, baselines::LinearKind kind) {
  const std::size_t stride = p.cfg.baselines.fit_stride;
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < p.train_starts.size(); i += stride) starts.push_back(p.train_starts[i]);
  return baselines::fit_linear(kind, p.filled, p.observed, p.train_rows, starts, p.spec.t_in, p.spec.t_out,
                               p.cfg.baselines.ridge_lambda, p.cfg.baselines.k);
}

std::string linear_baseline_json(const baselines::LinearBaseline& m) {
  json j;
  j["format"] = "contravirt-linear-baseline";
  j["kind"] = baselines::to_string(m.kind);
  j["t_in"] = m.t_in;
  j["t_out"] = m.t_out;
  j["neighbours"] = m.neighbours;
  j["training_rows"] = m.training_rows;
  json models = json::object();
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& r = m.models[i];
    models[metrics::to_string(kVars[i])] = {{"lambda", r.lambda},  {"x_mean", r.x_mean}, {"x_std", r.x_std},
                                            {"y_mean", r.y_mean},  {"beta", matrix_json(r.beta)}};
  }
  j["models"] = models;
  return j.dump(1);
}

std::vector<metrics::Sample> evaluate_baseline(const Prepared& p, BaselineKind kind,
                                               const baselines::LinearBaseline* fitted) {
  const std::string method = to_string(kind);
  const std::size_t k = p.cfg.baselines.k;
  const std::size_t t_in = p.spec.t_in, t_out = p.spec.t_out;
  std::vector<metrics::Sample> out;

  if (kind == BaselineKind::AR || kind == BaselineKind::LR) {
    baselines::LinearBaseline own;
    if (!fitted) {
      own = fit_baseline(p, kind == BaselineKind::AR ? baselines::LinearKind::AR : baselines::LinearKind::LR);
      fitted = &own;
    }
    for (const auto& t : p.targets) {
      const auto nb = baselines::nearest_stations(p.filled, p.full.stations()[t.station].location, p.train_rows, k,
                                                  t.station);
      for (std::size_t s : p.eval_starts) {
        const auto preds = baselines::predict_linear(*fitted, p.filled, nb, s);
        for (std::size_t l = 0; l < t_out; ++l)
          push_samples(out, method, t.station_id, p.full, t.station, s + t_in + l, l + 1, preds[l]);
      }
    }
    return out;
  }

  for (std::size_t s : p.eval_starts) {
    const std::size_t anchor = s + t_in - 1;
    std::vector<geo::GeoPoint> locs;
    std::vector<baselines::Wind> obs;
    for (std::size_t r : p.train_rows) {
      const double dd = p.filled.value(r, anchor, data::kDd);
      const double ff = p.filled.value(r, anchor, data::kFf);
      const double gff = p.filled.value(r, anchor, data::kGff);
      if (std::isnan(dd) || std::isnan(ff) || std::isnan(gff)) continue;
      locs.push_back(p.full.stations()[r].location);
      obs.push_back({dd, ff, gff});
    }
    if (obs.size() < k) continue;
    for (const auto& t : p.targets) {
      const auto& loc = p.full.stations()[t.station].location;
      const auto w = kind == BaselineKind::IDW ? baselines::idw_predict(loc, locs, obs, k)
                                               : baselines::knn_predict(loc, locs, obs, k);
      for (std::size_t l = 0; l < t_out; ++l)
        push_samples(out, method, t.station_id, p.full, t.station, s + t_in + l, l + 1, w);
    }
  }
  return out;
}

std::string norm_stats_json(const features::NormStats& s) {
  json j;
  j["format"] = "contravirt-norm-stats";
  json vars = json::object();
  for (std::size_t v = 0; v < data::kNumVariables; ++v)
    vars[std::string(data::kVariableCodes[v])] = {{"mean", s.mean[v]}, {"std", s.std[v]}};
  vars["lag_sin_dd"] = {{"mean", s.dir_mean[0]}, {"std", s.dir_std[0]}};
  vars["lag_cos_dd"] = {{"mean", s.dir_mean[1]}, {"std", s.dir_std[1]}};
  j["variables"] = vars;
  return j.dump(1);
}

metrics::EvalReport write_evaluation(const std::filesystem::path& dir, const std::string& method,
                                     const std::vector<metrics::Sample>& samples) {
  std::filesystem::create_directories(dir);
  const auto report = metrics::full_report(samples);
  const std::string slug = method_slug(method);
  write_text(dir / ("eval_" + slug + ".json"), report.to_json());
  write_text(dir / ("eval_" + slug + ".csv"), report.to_csv());
  write_text(dir / ("predictions_" + slug + ".csv"), metrics::samples_csv(samples));
  return report;
}

ReportTables build_report(const std::vector<metrics::EvalReport>& reports) {
  metrics::EvalReport all;
  for (const auto& r : reports) all.merge(r);

  std::set<std::string> present;
  for (const auto& [key, _] : all.cells) present.insert(key.method);
  std::vector<std::string> methods;
  for (const auto& m : table_order())
    if (present.erase(m)) methods.push_back(m);
  methods.insert(methods.end(), present.begin(), present.end());

  ReportTables t;
  t.methods = methods.size();
  std::ostringstream cmp, leads, stations;
  cmp << "method,dd_mae,dd_rmse,ff_mae,ff_rmse,gff_mae,gff_rmse,n\n";
  leads << "method,variable,lead,mae,rmse,n\n";
  stations << "method,variable,station,mae,rmse,n\n";
  json jm = json::array();
  for (const auto& m : methods) {
    cmp << csv_field(m);
    json row = {{"method", m}};
    std::size_t n = 0;
    for (auto v : kVars) {
      const auto* c = all.find(m, v);
      const std::string var = metrics::to_string(v);
      if (c) {
        cmp << ',' << fixed4(c->mae) << ',' << fixed4(c->rmse);
        row[var] = {{"mae", c->mae}, {"rmse", c->rmse}, {"n", c->n}};
        n = std::max(n, c->n);
      } else {
        cmp << ",,";
        row[var] = nullptr;
      }
    }
    cmp << ',' << n << '\n';
    jm.push_back(row);
    for (const auto& [key, c] : all.cells) {
      if (key.method != m || key.season != metrics::kAll) continue;
      if (key.lead != metrics::kAll && key.station == metrics::kAll)
        leads << csv_field(m) << ',' << key.variable << ',' << key.lead << ',' << fixed4(c.mae) << ','
              << fixed4(c.rmse) << ',' << c.n << '\n';
      if (key.lead == metrics::kAll && key.station != metrics::kAll)
        stations << csv_field(m) << ',' << key.variable << ',' << key.station << ',' << fixed4(c.mae) << ','
                 << fixed4(c.rmse) << ',' << c.n << '\n';
    }
  }
  t.comparison_csv = cmp.str();
  t.leads_csv = leads.str();
  t.stations_csv = stations.str();
  t.json = json{{"format", "contravirt-comparison"}, {"methods", jm}}.dump(1) + "\n";
  return t;
}

ReportTables report_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.starts_with("eval_") && name.ends_with(".json")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no eval_*.json reports in " + dir.string());
  std::vector<metrics::EvalReport> reports;
  for (const auto& f : files) reports.push_back(metrics::EvalReport::from_json(read_text(f)));
  return build_report(reports);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace contravirt::pipeline
