#include "contravirt/encoder.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "contravirt/datakit.hpp"
#include "contravirt/errors.hpp"
#include "contravirt/kernels.hpp"

namespace contravirt::model {

using features::FeatureLayout;
using json = nlohmann::json;

std::vector<Parameter*> Encoder::parameters() {
  return {&shared.w, &shared.b, &lag_table, &type_table, &deep1.w, &deep1.b, &deep2.w, &deep2.b};
}

std::vector<const Parameter*> Encoder::parameters() const {
  return {&shared.w, &shared.b, &lag_table, &type_table, &deep1.w, &deep1.b, &deep2.w, &deep2.b};
}

namespace {

Matrix xavier(std::size_t rows, std::size_t cols, std::uint64_t seed, std::uint64_t stream) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = (2.0 * data::hash_uniform(seed, stream, i) - 1.0) * limit;
  return m;
}

GcnLayer make_layer(const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed,
                    std::uint64_t stream) {
  return {Parameter(name + ".w", xavier(in, out, seed, stream)), Parameter(name + ".b", Matrix(1, out))};
}

}  // namespace

Model Model::init(const ModelDims& dims, std::uint64_t seed) {
  if (dims.nodes == 0 || dims.embed_dim == 0 || dims.t_in == 0 || dims.t_out == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  Model m;
  m.dims = dims;
  const std::size_t d = dims.embed_dim;
  m.query.shared = make_layer("shared", dims.input_width(), d, seed, 101);
  m.query.lag_table = Parameter("lag_table", Matrix(dims.n_virtual, FeatureLayout::kLag));
  m.query.type_table = Parameter("type_table", xavier(2, dims.type_dim, seed, 102));
  m.query.deep1 = make_layer("deep1", d, d, seed, 103);
  m.query.deep2 = make_layer("deep2", d, d, seed, 104);
  m.head = {Parameter("head.w", xavier(d, dims.head_width(), seed, 105)), Parameter("head.b", Matrix(1, dims.head_width()))};
  m.key = m.query;
  for (Parameter* p : m.key.parameters()) p->name = "key." + p->name;
  return m;
}

std::vector<Parameter*> Model::trainable() {
  auto out = query.parameters();
  out.push_back(&head.w);
  out.push_back(&head.b);
  return out;
}

std::vector<const Parameter*> Model::all_parameters() const {
  auto out = std::as_const(query).parameters();
  out.push_back(&head.w);
  out.push_back(&head.b);
  for (const Parameter* p : key.parameters()) out.push_back(p);
  return out;
}

Var bind(Tape& tape, Parameter& p, Binding b) { return b == Binding::Tracked ? tape.parameter(p) : tape.frozen(p); }

Var gcn_forward(const std::shared_ptr<const ad::SharedCsr>& s, Var h, Var w, Var b) {
  return ad::relu(ad::add_row(ad::spmm_blocks(s, ad::matmul(h, w)), b));
}

Var encode(Tape& tape, Encoder& enc, Binding binding, const std::shared_ptr<const ad::SharedCsr>& s,
           const features::NodeMeta& meta, const ModelDims& dims, const EncoderInput& in) {
  constexpr std::size_t C = FeatureLayout::kConstWidth;
  if (in.x == nullptr) throw ContractError("encode: missing input");
  const Matrix& x = *in.x;
  const std::size_t n = meta.nodes;
  const std::size_t rows = in.windows * dims.t_in * n;
  if (x.rows() != rows || x.cols() != C) {
    throw DimensionError("encode: input " + x.shape_string() + ", expected " + std::to_string(rows) + "x" +
                         std::to_string(C));
  }
  if (s->forward.rows != n || s->forward.cols != n) throw DimensionError("encode: diffusion matrix size mismatch");
  if (in.mask != nullptr && !in.mask->same_shape(x)) throw DimensionError("encode: mask shape mismatch");

  Var w = bind(tape, enc.shared.w, binding);
  Var b = bind(tape, enc.shared.b, binding);
  Var lag_tbl = bind(tape, enc.lag_table, binding);
  Var type_tbl = bind(tape, enc.type_table, binding);

  // S (X W + E) + b with E the per-node lag/type terms. S is linear and X is
  // constant, so the constant part is propagated at input width and E, which
  // does not change across the steps of a window, is handled once per window.
  Matrix xin = x;
  if (in.mask != nullptr)
    for (std::size_t i = 0; i < xin.size(); ++i) xin[i] *= (*in.mask)[i];
  Matrix sx(rows, C);
  kernels::spmm_blocks(s->forward, xin, sx);
  Var z = ad::matmul(tape.constant(std::move(sx)), ad::slice_rows(w, 0, C));

  const std::size_t wn = in.windows * n;
  std::vector<long> type_idx(wn);
  for (std::size_t r = 0; r < wn; ++r) type_idx[r] = meta.type_index[r % n];
  Var type_proj = ad::matmul(type_tbl, ad::slice_rows(w, C, dims.type_dim));
  Var e = ad::gather_rows(type_proj, type_idx);
  if (meta.n_virtual > 0) {
    std::vector<long> lag_idx(wn);
    for (std::size_t r = 0; r < wn; ++r) lag_idx[r] = meta.lag_index[r % n];
    Var lag = ad::gather_rows(lag_tbl, lag_idx);
    if (in.mask != nullptr) {
      const Matrix& m = *in.mask;
      Matrix lag_mask(wn, FeatureLayout::kLag);
      for (std::size_t win = 0; win < in.windows; ++win)
        for (std::size_t node = 0; node < n; ++node)
          for (std::size_t c = 0; c < FeatureLayout::kLag; ++c) {
            const double v = m(win * dims.t_in * n + node, FeatureLayout::kLagOffset + c);
            for (std::size_t t = 1; t < dims.t_in; ++t) {
              if (m((win * dims.t_in + t) * n + node, FeatureLayout::kLagOffset + c) != v) {
                throw ContractError("encode: lag mask must be constant within a window");
              }
            }
            lag_mask(win * n + node, c) = v;
          }
      lag = ad::mul(lag, tape.constant(std::move(lag_mask)));
    }
    e = ad::add(e, ad::matmul(lag, ad::slice_rows(w, FeatureLayout::kLagOffset, FeatureLayout::kLag)));
  }
  Var se = ad::add_row(ad::spmm_blocks(s, e), b);
  Var per_step = ad::relu(ad::add_broadcast_steps(z, se, dims.t_in, n));
  return ad::block_mean(per_step, dims.t_in, n);
}

Var predict(Tape& tape, Encoder& enc, RegressionHead& head, Binding binding,
            const std::shared_ptr<const ad::SharedCsr>& s, Var h) {
  Var h1 = gcn_forward(s, h, bind(tape, enc.deep1.w, binding), bind(tape, enc.deep1.b, binding));
  Var h2 = gcn_forward(s, h1, bind(tape, enc.deep2.w, binding), bind(tape, enc.deep2.b, binding));
  return ad::add_row(ad::matmul(h2, bind(tape, head.w, binding)), bind(tape, head.b, binding));
}

void momentum_update(const Encoder& query, Encoder& key, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("momentum must lie in [0, 1]");
  auto qs = query.parameters();
  auto ks = key.parameters();
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const Matrix& q = qs[i]->value;
    Matrix& k = ks[i]->value;
    if (!q.same_shape(k)) throw ContractError("momentum_update: shape mismatch for " + qs[i]->name);
    for (std::size_t j = 0; j < k.size(); ++j) k[j] = m * k[j] + (1.0 - m) * q[j];
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json matrix_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.values().begin(), m.values().end())}};
}

Matrix matrix_from(const json& j) {
  auto rows = j.at("rows").get<std::size_t>();
  auto cols = j.at("cols").get<std::size_t>();
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols) throw DataError("checkpoint matrix has wrong element count");
  return Matrix(rows, cols, std::move(data));
}

}  // namespace

std::string checkpoint_json(const Checkpoint& c) {
  json j;
  j["format"] = "contravirt-checkpoint";
  j["version"] = Checkpoint::kVersion;
  j["seed"] = c.seed;
  const auto& d = c.model.dims;
  j["dims"] = {{"nodes", d.nodes},         {"n_virtual", d.n_virtual}, {"const_width", d.const_width},
               {"type_dim", d.type_dim},   {"embed_dim", d.embed_dim}, {"t_in", d.t_in},
               {"t_out", d.t_out}};
  json params = json::object();
  for (const Parameter* p : c.model.all_parameters()) params[p->name] = matrix_json(p->value);
  j["parameters"] = params;
  json stats = json::object();
  for (std::size_t v = 0; v < data::kNumVariables; ++v)
    stats[std::string(data::kVariableCodes[v])] = {{"mean", c.stats.mean[v]}, {"std", c.stats.std[v]}};
  stats["lag_sin_dd"] = {{"mean", c.stats.dir_mean[0]}, {"std", c.stats.dir_std[0]}};
  stats["lag_cos_dd"] = {{"mean", c.stats.dir_mean[1]}, {"std", c.stats.dir_std[1]}};
  j["norm_stats"] = stats;
  j["diffusion"] = {{"alpha_ppr", c.diffusion.alpha_ppr},
                    {"gamma", c.diffusion.gamma},
                    {"delta", c.diffusion.delta},
                    {"top_k", c.diffusion.top_k},
                    {"renormalize", c.diffusion.renormalize},
                    {"enabled", c.use_diffusion}};
  j["method"] = c.method;
  j["layout"] = {{"type_dim", c.layout.type_dim}, {"channels", FeatureLayout::channel_names()}};
  j["station_order"] = c.station_order;
  return j.dump(1);
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "contravirt-checkpoint") throw DataError("not a checkpoint file");
    const int version = j.at("version").get<int>();
    if (version != Checkpoint::kVersion) {
      throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint c;
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& jd = j.at("dims");
    ModelDims d;
    d.nodes = jd.at("nodes").get<std::size_t>();
    d.n_virtual = jd.at("n_virtual").get<std::size_t>();
    d.const_width = jd.at("const_width").get<std::size_t>();
    d.type_dim = jd.at("type_dim").get<std::size_t>();
    d.embed_dim = jd.at("embed_dim").get<std::size_t>();
    d.t_in = jd.at("t_in").get<std::size_t>();
    d.t_out = jd.at("t_out").get<std::size_t>();
    if (d.const_width != FeatureLayout::kConstWidth) throw DataError("checkpoint feature width does not match");
    c.model = Model::init(d, 0);
    const auto& jp = j.at("parameters");
    for (const Parameter* cp : std::as_const(c.model).all_parameters()) {
      auto* p = const_cast<Parameter*>(cp);
      Matrix m = matrix_from(jp.at(p->name));
      if (!m.same_shape(p->value)) throw DataError("checkpoint parameter " + p->name + " has the wrong shape");
      p->value = std::move(m);
      p->grad = Matrix(p->value.rows(), p->value.cols());
    }
    const auto& js = j.at("norm_stats");
    for (std::size_t v = 0; v < data::kNumVariables; ++v) {
      const auto& e = js.at(std::string(data::kVariableCodes[v]));
      c.stats.mean[v] = e.at("mean").get<double>();
      c.stats.std[v] = e.at("std").get<double>();
    }
    for (int i = 0; i < 2; ++i) {
      const auto& e = js.at(i == 0 ? "lag_sin_dd" : "lag_cos_dd");
      c.stats.dir_mean[i] = e.at("mean").get<double>();
      c.stats.dir_std[i] = e.at("std").get<double>();
    }
    const auto& jf = j.at("diffusion");
    c.diffusion.alpha_ppr = jf.at("alpha_ppr").get<double>();
    c.diffusion.gamma = jf.at("gamma").get<double>();
    c.diffusion.delta = jf.at("delta").get<double>();
    c.diffusion.top_k = jf.at("top_k").get<std::size_t>();
    c.diffusion.renormalize = jf.at("renormalize").get<bool>();
    c.use_diffusion = jf.at("enabled").get<bool>();
    c.method = j.at("method").get<std::string>();
    c.layout.type_dim = j.at("layout").at("type_dim").get<std::size_t>();
    c.station_order = j.at("station_order").get<std::vector<std::string>>();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << checkpoint_json(c);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str());
}

}  // namespace contravirt::model
