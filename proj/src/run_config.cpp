#include "contravirt/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "contravirt/errors.hpp"

namespace contravirt::config {

using json = nlohmann::json;

namespace {

// Reads keys of one JSON object and rejects anything it was not asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Reader sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    auto it = j_.find(key);
    return Reader(it == j_.end() ? empty : *it, path_ + "." + key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.contains(it.key())) throw ConfigError("unknown key " + path_ + "." + it.key());
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_grid(Reader r, geo::GridSpec& g) {
  r.get("lat_min", g.lat_min);
  r.get("lat_max", g.lat_max);
  r.get("lon_min", g.lon_min);
  r.get("lon_max", g.lon_max);
  r.get("rows", g.rows);
  r.get("cols", g.cols);
  r.finish();
}

json grid_json(const geo::GridSpec& g) {
  return {{"lat_min", g.lat_min}, {"lat_max", g.lat_max}, {"lon_min", g.lon_min},
          {"lon_max", g.lon_max}, {"rows", g.rows},       {"cols", g.cols}};
}

void read_synthetic(Reader r, data::SyntheticConfig& s) {
  read_grid(r.sub("grid"), s.grid);
  r.get("n_real", s.n_real);
  r.get("n_withheld", s.n_withheld);
  r.get("steps", s.steps);
  r.get("start", s.start);
  r.get("mean_speed", s.mean_speed);
  r.get("speed_log_sd", s.speed_log_sd);
  r.get("speed_persistence", s.speed_persistence);
  r.get("diurnal_speed_amplitude", s.diurnal_speed_amplitude);
  r.get("coastal_speed_gradient", s.coastal_speed_gradient);
  r.get("mean_direction", s.mean_direction);
  r.get("direction_drift_amplitude", s.direction_drift_amplitude);
  r.get("direction_drift_period_steps", s.direction_drift_period_steps);
  r.get("direction_perturbation", s.direction_perturbation);
  r.get("direction_persistence", s.direction_persistence);
  r.get("gust_factor", s.gust_factor);
  r.get("correlation_length_km", s.correlation_length_km);
  r.get("noise_scale", s.noise_scale);
  r.get("latent_sources", s.latent_sources);
  r.get("seed", s.seed);
  r.finish();
}

json synthetic_json(const data::SyntheticConfig& s) {
  return {{"grid", grid_json(s.grid)},
          {"n_real", s.n_real},
          {"n_withheld", s.n_withheld},
          {"steps", s.steps},
          {"start", s.start},
          {"mean_speed", s.mean_speed},
          {"speed_log_sd", s.speed_log_sd},
          {"speed_persistence", s.speed_persistence},
          {"diurnal_speed_amplitude", s.diurnal_speed_amplitude},
          {"coastal_speed_gradient", s.coastal_speed_gradient},
          {"mean_direction", s.mean_direction},
          {"direction_drift_amplitude", s.direction_drift_amplitude},
          {"direction_drift_period_steps", s.direction_drift_period_steps},
          {"direction_perturbation", s.direction_perturbation},
          {"direction_persistence", s.direction_persistence},
          {"gust_factor", s.gust_factor},
          {"correlation_length_km", s.correlation_length_km},
          {"noise_scale", s.noise_scale},
          {"latent_sources", s.latent_sources},
          {"seed", s.seed}};
}

}  // namespace

void RunConfig::validate() const {
  if (data.csv && data.synthetic) throw ConfigError("data: give either csv or synthetic, not both");
  if (!data.csv && !data.synthetic) throw ConfigError("data: one of csv or synthetic is required");
  if (data.synthetic) data.synthetic->validate();
  grid.validate();
  if (graph.k < 1) throw ConfigError("graph.k must be >= 1");
  diffusion.validate();
  if (windows.t_in < 1 || windows.t_out < 1 || windows.train_stride < 1 || windows.eval_stride < 1) {
    throw ConfigError("window sizes and strides must be >= 1");
  }
  if (!(windows.validation_fraction >= 0.0 && windows.validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in [0, 1)");
  }
  if (model.embed_dim < 1 || model.type_dim < 1) throw ConfigError("model dimensions must be >= 1");
  contrastive.validate();
  if (contrastive.offset > windows.t_out) throw ConfigError("contrastive.offset must not exceed t_out");
  if (!(lambda.warmup_epochs > 0.0)) throw ConfigError("lambda.warmup_epochs must be positive");
  train.validate();
  if (baselines.k < 1 || baselines.fit_stride < 1) throw ConfigError("baseline k and fit_stride must be >= 1");
  if (!(baselines.ridge_lambda > 0.0)) throw ConfigError("ridge_lambda must be positive");
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Reader root(j, "config");
  {
    Reader d = root.sub("data");
    if (d.has("csv")) {
      std::string p;
      d.get("csv", p);
      c.data.csv = p;
    }
    if (d.has("synthetic")) {
      data::SyntheticConfig s;
      read_synthetic(d.sub("synthetic"), s);
      c.data.synthetic = s;
    } else {
      d.sub("synthetic");
    }
    d.finish();
  }
  {
    Reader s = root.sub("split");
    s.get("withheld_ids", c.split.withheld_ids);
    std::size_t count = 0;
    const bool has_count = s.has("withheld_count");
    s.get("withheld_count", count);
    if (has_count) c.split.withheld_count = count;
    s.get("seed", c.split.seed);
    s.finish();
  }
  read_grid(root.sub("grid"), c.grid);
  {
    Reader g = root.sub("graph");
    g.get("k", c.graph.k);
    g.finish();
  }
  {
    Reader d = root.sub("diffusion");
    d.get("enabled", c.use_diffusion);
    d.get("alpha_ppr", c.diffusion.alpha_ppr);
    d.get("gamma", c.diffusion.gamma);
    d.get("delta", c.diffusion.delta);
    d.get("top_k", c.diffusion.top_k);
    d.get("renormalize", c.diffusion.renormalize);
    d.finish();
  }
  {
    Reader w = root.sub("windows");
    w.get("t_in", c.windows.t_in);
    w.get("t_out", c.windows.t_out);
    w.get("train_stride", c.windows.train_stride);
    w.get("eval_stride", c.windows.eval_stride);
    w.get("max_fill_gap", c.windows.max_fill_gap);
    w.get("validation_fraction", c.windows.validation_fraction);
    w.finish();
  }
  {
    Reader m = root.sub("model");
    m.get("embed_dim", c.model.embed_dim);
    m.get("type_dim", c.model.type_dim);
    m.finish();
  }
  {
    Reader k = root.sub("contrastive");
    std::string strategy = objectives::to_string(c.contrastive.strategy);
    k.get("strategy", strategy);
    c.contrastive.strategy = objectives::parse_strategy(strategy);
    k.get("tau", c.contrastive.tau);
    k.get("mask_ratio", c.contrastive.mask_ratio);
    k.get("offset", c.contrastive.offset);
    k.get("use_moco", c.contrastive.use_moco);
    k.get("queue_capacity", c.contrastive.queue_capacity);
    k.get("momentum", c.contrastive.momentum);
    k.get("literal_denominator", c.contrastive.literal_denominator);
    k.finish();
  }
  {
    Reader l = root.sub("lambda");
    l.get("warmup_epochs", c.lambda.warmup_epochs);
    l.get("kappa", c.lambda.kappa);
    l.get("theta", c.lambda.theta);
    l.finish();
  }
  {
    Reader t = root.sub("train");
    t.get("lr", c.train.lr);
    t.get("weight_decay", c.train.weight_decay);
    t.get("beta1", c.train.beta1);
    t.get("beta2", c.train.beta2);
    t.get("eps", c.train.eps);
    t.get("batch_size", c.train.batch_size);
    t.get("max_epochs", c.train.max_epochs);
    t.get("early_stop_patience", c.train.early_stop_patience);
    t.get("plateau_patience", c.train.plateau_patience);
    t.get("plateau_factor", c.train.plateau_factor);
    t.get("divergence_epochs", c.train.divergence_epochs);
    t.get("seed", c.train.seed);
    t.finish();
  }
  {
    Reader b = root.sub("baselines");
    b.get("k", c.baselines.k);
    b.get("ridge_lambda", c.baselines.ridge_lambda);
    b.get("fit_stride", c.baselines.fit_stride);
    b.finish();
  }
  {
    std::string out = c.output_dir.string();
    root.get("output_dir", out);
    c.output_dir = out;
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string to_json(const RunConfig& c) {
  json data = json::object();
  if (c.data.csv) data["csv"] = c.data.csv->string();
  if (c.data.synthetic) data["synthetic"] = synthetic_json(*c.data.synthetic);
  json split{{"withheld_ids", c.split.withheld_ids}, {"seed", c.split.seed}};
  if (c.split.withheld_count) split["withheld_count"] = *c.split.withheld_count;
  json j{
      {"data", data},
      {"split", split},
      {"grid", grid_json(c.grid)},
      {"graph", {{"k", c.graph.k}}},
      {"diffusion",
       {{"enabled", c.use_diffusion},
        {"alpha_ppr", c.diffusion.alpha_ppr},
        {"gamma", c.diffusion.gamma},
        {"delta", c.diffusion.delta},
        {"top_k", c.diffusion.top_k},
        {"renormalize", c.diffusion.renormalize}}},
      {"windows",
       {{"t_in", c.windows.t_in},
        {"t_out", c.windows.t_out},
        {"train_stride", c.windows.train_stride},
        {"eval_stride", c.windows.eval_stride},
        {"max_fill_gap", c.windows.max_fill_gap},
        {"validation_fraction", c.windows.validation_fraction}}},
      {"model", {{"embed_dim", c.model.embed_dim}, {"type_dim", c.model.type_dim}}},
      {"contrastive",
       {{"strategy", objectives::to_string(c.contrastive.strategy)},
        {"tau", c.contrastive.tau},
        {"mask_ratio", c.contrastive.mask_ratio},
        {"offset", c.contrastive.offset},
        {"use_moco", c.contrastive.use_moco},
        {"queue_capacity", c.contrastive.queue_capacity},
        {"momentum", c.contrastive.momentum},
        {"literal_denominator", c.contrastive.literal_denominator}}},
      {"lambda", {{"warmup_epochs", c.lambda.warmup_epochs}, {"kappa", c.lambda.kappa}, {"theta", c.lambda.theta}}},
      {"train",
       {{"lr", c.train.lr},
        {"weight_decay", c.train.weight_decay},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"eps", c.train.eps},
        {"batch_size", c.train.batch_size},
        {"max_epochs", c.train.max_epochs},
        {"early_stop_patience", c.train.early_stop_patience},
        {"plateau_patience", c.train.plateau_patience},
        {"plateau_factor", c.train.plateau_factor},
        {"divergence_epochs", c.train.divergence_epochs},
        {"seed", c.train.seed}}},
      {"baselines",
       {{"k", c.baselines.k}, {"ridge_lambda", c.baselines.ridge_lambda}, {"fit_stride", c.baselines.fit_stride}}},
      {"output_dir", c.output_dir.string()}};
  return j.dump(2) + "\n";
}

std::filesystem::path resolve_output_dir(const RunConfig& c) {
  if (c.output_dir.is_absolute()) return c.output_dir;
  if (const char* root = std::getenv("CONTRAVIRT_OUTPUT_ROOT"); root != nullptr && *root != '\0') {
    return std::filesystem::path(root) / c.output_dir;
  }
  return c.output_dir;
}

}  // namespace contravirt::config
