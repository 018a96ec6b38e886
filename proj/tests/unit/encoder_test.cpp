#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>
#include <random>

#include "contravirt/encoder.hpp"
#include "contravirt/errors.hpp"
#include "toy.hpp"

using namespace contravirt;
using namespace contravirt::model;
using features::FeatureLayout;

namespace {

constexpr std::size_t C = FeatureLayout::kConstWidth;

// Four nodes, the last two virtual.
features::NodeMeta small_meta() {
  features::NodeMeta m;
  m.nodes = 4;
  m.n_real = 2;
  m.n_virtual = 2;
  m.real_nodes = {0, 1};
  m.virtual_nodes = {2, 3};
  m.lag_index = {-1, -1, 0, 1};
  m.type_index = {0, 0, 1, 1};
  return m;
}

ModelDims small_dims() {
  ModelDims d;
  d.nodes = 4;
  d.n_virtual = 2;
  d.type_dim = 3;
  d.embed_dim = 6;
  d.t_in = 3;
  d.t_out = 2;
  return d;
}

Matrix row_stochastic(std::size_t n, std::mt19937_64& rng) {
  Matrix s = toy::random_matrix(n, n, rng, 0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (double v : s.row(i)) sum += v;
    for (double& v : s.row(i)) v /= sum;
  }
  return s;
}

// Features with zero lag channels on virtual nodes, as the frames carry them.
Matrix random_inputs(std::size_t windows, const ModelDims& d, const features::NodeMeta& meta, std::mt19937_64& rng) {
  Matrix x = toy::random_matrix(windows * d.t_in * d.nodes, C, rng);
  for (std::size_t r = 0; r < x.rows(); ++r)
    if (meta.lag_index[r % d.nodes] >= 0)
      for (std::size_t c = 0; c < FeatureLayout::kLag; ++c) x(r, FeatureLayout::kLagOffset + c) = 0.0;
  return x;
}

// mean_t relu(S [X_t (.) M_t with virtual lags | type] W + b), written densely.
Matrix dense_encode(const Encoder& e, const Matrix& s, const features::NodeMeta& meta, const ModelDims& d,
                    const Matrix& x, const Matrix* mask, std::size_t windows) {
  const std::size_t n = d.nodes, width = d.input_width();
  Matrix out(windows * n, d.embed_dim);
  for (std::size_t w = 0; w < windows; ++w)
    for (std::size_t t = 0; t < d.t_in; ++t) {
      Matrix in(n, width);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = (w * d.t_in + t) * n + i;
        for (std::size_t c = 0; c < C; ++c) {
          double v = x(r, c);
          const bool lag = c >= FeatureLayout::kLagOffset && c < FeatureLayout::kLagOffset + FeatureLayout::kLag;
          if (lag && meta.lag_index[i] >= 0) v = e.lag_table.value(meta.lag_index[i], c - FeatureLayout::kLagOffset);
          if (mask != nullptr) v *= (*mask)(r, c);
          in(i, c) = v;
        }
        for (std::size_t c = 0; c < d.type_dim; ++c) in(i, C + c) = e.type_table.value(meta.type_index[i], c);
      }
      const Matrix z = s * (in * e.shared.w.value);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d.embed_dim; ++j)
          out(w * n + i, j) += std::max(0.0, z(i, j) + e.shared.b.value(0, j)) / static_cast<double>(d.t_in);
    }
  return out;
}

void randomize(Encoder& e, std::mt19937_64& rng) {
  for (Parameter* p : e.parameters()) p->value = toy::random_matrix(p->value.rows(), p->value.cols(), rng, -0.5, 0.5);
}

}  // namespace

TEST_CASE("gcn layer against a dense oracle") {
  std::mt19937_64 rng(1);
  const Matrix h = toy::random_matrix(8, 3, rng);  // two blocks of four nodes
  const Matrix w = toy::random_matrix(3, 5, rng);
  const Matrix b = toy::random_matrix(1, 5, rng);
  for (bool identity : {true, false}) {
    const Matrix sd = identity ? Matrix::identity(4) : row_stochastic(4, rng);
    auto s = std::make_shared<const ad::SharedCsr>(CsrMatrix::from_dense(sd));
    Tape t;
    const Matrix out = gcn_forward(s, t.constant(h), t.constant(w), t.constant(b)).value();
    for (std::size_t blk = 0; blk < 2; ++blk) {
      Matrix hb(4, 3);
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) hb(i, j) = h(blk * 4 + i, j);
      const Matrix ref = sd * (hb * w);
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j)
          CHECK(out(blk * 4 + i, j) == doctest::Approx(std::max(0.0, ref(i, j) + b(0, j))).epsilon(1e-13));
    }
  }
}

TEST_CASE("encoder matches a dense per-step oracle") {
  std::mt19937_64 rng(2);
  const auto meta = small_meta();
  const auto d = small_dims();
  Model m = Model::init(d, 3);
  randomize(m.query, rng);
  const Matrix sd = row_stochastic(4, rng);
  auto s = std::make_shared<const ad::SharedCsr>(CsrMatrix::from_dense(sd));
  const Matrix x = random_inputs(2, d, meta, rng);

  Matrix mask(x.rows(), C, 1.0);
  std::bernoulli_distribution keep(0.7);
  for (std::size_t w = 0; w < 2; ++w)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < FeatureLayout::kMaskable; ++c) {
        const double v = keep(rng) ? 1.0 : 0.0;
        for (std::size_t t = 0; t < d.t_in; ++t) mask((w * d.t_in + t) * 4 + i, c) = v;
      }

  const Matrix* masks[] = {nullptr, &mask};
  for (const Matrix* mk : masks) {
    Tape t;
    const Matrix h = encode(t, m.query, Binding::Frozen, s, meta, d, {&x, mk, 2}).value();
    CHECK(max_abs_diff(h, dense_encode(m.query, sd, meta, d, x, mk, 2)) < 1e-12);
  }

  // A lag mask that changes within a window is rejected.
  Matrix bad = mask;
  bad(2, FeatureLayout::kLagOffset) = 1.0 - bad(2, FeatureLayout::kLagOffset);
  Tape t;
  CHECK_THROWS_AS(encode(t, m.query, Binding::Frozen, s, meta, d, {&x, &bad, 2}), ContractError);
  const Matrix wrong(3, C);
  CHECK_THROWS_AS(encode(t, m.query, Binding::Frozen, s, meta, d, {&wrong, nullptr, 2}), DimensionError);
}

TEST_CASE("identical steps: the temporal mean is the single-step output") {
  std::mt19937_64 rng(4);
  const auto meta = small_meta();
  auto d = small_dims();
  Model m = Model::init(d, 5);
  randomize(m.query, rng);
  auto s = std::make_shared<const ad::SharedCsr>(CsrMatrix::from_dense(row_stochastic(4, rng)));
  Matrix one = random_inputs(1, d, meta, rng);
  for (std::size_t t = 1; t < d.t_in; ++t)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < C; ++c) one(t * 4 + i, c) = one(i, c);
  Tape t;
  const Matrix h3 = encode(t, m.query, Binding::Frozen, s, meta, d, {&one, nullptr, 1}).value();
  ModelDims d1 = d;
  d1.t_in = 1;
  const Matrix first(4, C, std::vector<double>(one.data(), one.data() + 4 * C));
  const Matrix h1 = encode(t, m.query, Binding::Frozen, s, meta, d1, {&first, nullptr, 1}).value();
  CHECK(max_abs_diff(h3, h1) < 1e-14);
}

TEST_CASE("permuting nodes permutes the embeddings") {
  std::mt19937_64 rng(6);
  const auto meta = small_meta();
  const auto d = small_dims();
  Model m = Model::init(d, 7);
  randomize(m.query, rng);
  const Matrix sd = row_stochastic(4, rng);
  const Matrix x = random_inputs(1, d, meta, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};  // new node i is old node perm[i]

  Matrix sp(4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) sp(i, j) = sd(perm[i], perm[j]);
  Matrix xp(x.rows(), C);
  for (std::size_t t = 0; t < d.t_in; ++t)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < C; ++c) xp(t * 4 + i, c) = x(t * 4 + perm[i], c);
  features::NodeMeta mp = meta;
  mp.real_nodes.clear();
  mp.virtual_nodes.clear();
  for (std::size_t i = 0; i < 4; ++i) {
    mp.lag_index[i] = meta.lag_index[perm[i]];
    mp.type_index[i] = meta.type_index[perm[i]];
    (mp.type_index[i] == 0 ? mp.real_nodes : mp.virtual_nodes).push_back(i);
  }
  if (mp.lag_index[mp.virtual_nodes[0]] != 0) std::swap(mp.virtual_nodes[0], mp.virtual_nodes[1]);

  Tape t;
  auto s = std::make_shared<const ad::SharedCsr>(CsrMatrix::from_dense(sd));
  auto s2 = std::make_shared<const ad::SharedCsr>(CsrMatrix::from_dense(sp));
  const Matrix h = encode(t, m.query, Binding::Frozen, s, meta, d, {&x, nullptr, 1}).value();
  const Matrix hp = encode(t, m.query, Binding::Frozen, s2, mp, d, {&xp, nullptr, 1}).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < d.embed_dim; ++j) CHECK(hp(i, j) == doctest::Approx(h(perm[i], j)).epsilon(1e-13));
}

TEST_CASE("a zero head predicts its bias") {
  std::mt19937_64 rng(8);
  const auto d = small_dims();
  Model m = Model::init(d, 9);
  m.head.w.value = Matrix(d.embed_dim, d.head_width());
  m.head.b.value = toy::random_matrix(1, d.head_width(), rng);
  auto s = std::make_shared<const ad::SharedCsr>(CsrMatrix::from_dense(row_stochastic(4, rng)));
  Tape t;
  const Matrix out = predict(t, m.query, m.head, Binding::Frozen, s, t.constant(toy::random_matrix(8, d.embed_dim, rng)))
                         .value();
  REQUIRE(out.cols() == d.head_width());
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) CHECK(out(i, j) == m.head.b.value(0, j));
}

TEST_CASE("momentum update") {
  std::mt19937_64 rng(10);
  Model m = Model::init(small_dims(), 11);
  CHECK(max_abs_diff(m.key.shared.w.value, m.query.shared.w.value) == 0.0);
  randomize(m.query, rng);

  Encoder key = m.key;
  momentum_update(m.query, key, 1.0);
  CHECK(key.shared.w.value == m.key.shared.w.value);
  momentum_update(m.query, key, 0.0);
  CHECK(key.shared.w.value == m.query.shared.w.value);

  for (double mom : {0.9, 0.999}) {
    Encoder k = m.key;
    const double gap0 = max_abs_diff(k.deep1.w.value, m.query.deep1.w.value);
    for (int n = 1; n <= 50; ++n) {
      momentum_update(m.query, k, mom);
      const double gap = max_abs_diff(k.deep1.w.value, m.query.deep1.w.value);
      CHECK(gap == doctest::Approx(gap0 * std::pow(mom, n)).epsilon(1e-9));
    }
  }
  CHECK_THROWS_AS(momentum_update(m.query, key, 1.5), ConfigError);
}

TEST_CASE("lag table and type table receive gradients") {
  std::mt19937_64 rng(12);
  const auto meta = small_meta();
  const auto d = small_dims();
  Model m = Model::init(d, 13);
  randomize(m.query, rng);
  auto s = std::make_shared<const ad::SharedCsr>(CsrMatrix::from_dense(row_stochastic(4, rng)));
  const Matrix x = random_inputs(2, d, meta, rng);
  std::vector<Parameter*> params{&m.query.lag_table, &m.query.type_table, &m.query.shared.w};
  const double err = ad::check_gradients(
      [&](Tape& t) {
        Var h = encode(t, m.query, Binding::Tracked, s, meta, d, {&x, nullptr, 2});
        return ad::sum(ad::mul(h, h));
      },
      params, 1e-6, 1e-7);
  CHECK(err < 1e-6);
  double norm = 0.0;
  for (double g : m.query.lag_table.grad.values()) norm += std::abs(g);
  CHECK(norm > 0.0);
}

TEST_CASE("checkpoint JSON round trip") {
  std::mt19937_64 rng(14);
  Checkpoint c;
  c.model = Model::init(small_dims(), 15);
  randomize(c.model.query, rng);
  randomize(c.model.key, rng);
  c.stats.mean[1] = 5.25;
  c.stats.std[1] = 1.0 / 3.0;
  c.stats.dir_mean = {0.1, -0.2};
  c.use_diffusion = false;
  c.method = "ContraVirt (Augmented MoCo)";
  c.seed = 99;
  c.station_order = {"a", "b"};
  const Checkpoint back = checkpoint_from_json(checkpoint_json(c));
  CHECK(back.model.dims == c.model.dims);
  const auto pa = c.model.all_parameters();
  const auto pb = back.model.all_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
  CHECK(back.stats == c.stats);
  CHECK(back.use_diffusion == false);
  CHECK(back.method == c.method);
  CHECK(back.seed == 99);
  CHECK(back.station_order == c.station_order);
  CHECK(checkpoint_json(back) == checkpoint_json(c));
  CHECK_THROWS_AS(checkpoint_from_json("{\"version\": 1}"), DataError);
}
