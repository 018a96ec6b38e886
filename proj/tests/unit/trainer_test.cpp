#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "contravirt/errors.hpp"
#include "contravirt/pipeline.hpp"
#include "contravirt/trainer.hpp"
#include "toy.hpp"

using namespace contravirt;
using namespace contravirt::trainer;
using objectives::Strategy;

namespace {

const pipeline::Prepared& toy_prepared() {
  static const auto p = pipeline::prepare(toy::six_node_config());
  return *p;
}

bool all_zero(const Matrix& m) {
  for (double v : m.values())
    if (v != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("AdamW steps") {
  SUBCASE("first step moves by lr after decoupled decay") {
    ad::Parameter p("p", Matrix{{1.0, -2.0}});
    p.grad = Matrix{{2.0, -0.5}};
    AdamState st;
    ad::Parameter* ps[] = {&p};
    REQUIRE(adamw_step(ps, st, 0.1, 0.5));
    CHECK(p.value(0, 0) == doctest::Approx(1.0 * 0.95 - 0.1).epsilon(1e-8));
    CHECK(p.value(0, 1) == doctest::Approx(-2.0 * 0.95 + 0.1).epsilon(1e-8));
    CHECK(st.step == 1);
  }
  SUBCASE("non-finite gradients leave everything untouched") {
    ad::Parameter p("p", Matrix{{1.0}});
    p.grad = Matrix{{std::nan("")}};
    AdamState st;
    ad::Parameter* ps[] = {&p};
    CHECK_FALSE(adamw_step(ps, st, 0.1, 0.0));
    CHECK(p.value(0, 0) == 1.0);
    CHECK(st.step == 0);
  }
  SUBCASE("a quadratic converges") {
    std::mt19937_64 rng(1);
    const Matrix target = toy::random_matrix(3, 2, rng);
    ad::Parameter p("p", Matrix(3, 2));
    AdamState st;
    ad::Parameter* ps[] = {&p};
    for (int i = 0; i < 4000; ++i) {
      p.grad = 2.0 * (p.value - target);
      adamw_step(ps, st, 1e-2 / (1.0 + i / 200.0), 0.0);
    }
    CHECK(max_abs_diff(p.value, target) < 1e-6);
  }
}

TEST_CASE("training step gradients match central differences") {
  const auto& p = toy_prepared();
  REQUIRE(p.meta.nodes == 6);
  REQUIRE(p.meta.n_virtual == 2);
  const auto data = p.training_data(true);
  const std::vector<std::size_t> batch(p.train_starts.begin(), p.train_starts.begin() + 2);
  std::mt19937_64 rng(2);

  for (Strategy strategy : {Strategy::Augmented, Strategy::MultiStep}) {
    for (bool moco : {true, false}) {
      CAPTURE(objectives::to_string(strategy));
      CAPTURE(moco);
      model::Model m = model::Model::init(toy::dims_for(p), 3);
      for (ad::Parameter* q : m.trainable()) q->value = toy::random_matrix(q->value.rows(), q->value.cols(), rng, -0.5, 0.5);
      m.query.lag_table.value = toy::random_matrix(2, 4, rng);
      model::momentum_update(m.query, m.key, 0.5);
      objectives::ContrastiveConfig cc;
      cc.strategy = strategy;
      cc.use_moco = moco;
      cc.offset = 2;
      objectives::MoCoQueue queue(16);
      queue.push(toy::random_matrix(16, 5, rng));

      const auto params = m.trainable();
      const double err = ad::check_gradients(
          [&](ad::Tape& t) { return step_loss(t, m, data, batch, cc, queue, 0.5, 9, 4).total; }, params, 1e-4, 1e-7);
      CHECK(err < 1e-4);

      for (ad::Parameter* k : m.key.parameters()) k->zero_grad();
      ad::Tape t;
      const StepLoss sl = step_loss(t, m, data, batch, cc, queue, 0.5, 9, 4);
      CHECK(sl.has_contrast());
      t.backward(sl.total);
      for (ad::Parameter* k : m.key.parameters()) CHECK((k->grad.empty() || all_zero(k->grad)));
      if (moco) CHECK(sl.keys.rows() > 0);
    }
  }
}

TEST_CASE("feature mask") {
  const Matrix a = feature_mask(2, 3, 4, 0.3, 5, 7);
  CHECK(a == feature_mask(2, 3, 4, 0.3, 5, 7));
  CHECK_FALSE(a == feature_mask(2, 3, 4, 0.3, 5, 8));
  REQUIRE(a.rows() == 2 * 3 * 4);
  std::size_t masked = 0, total = 0;
  for (std::size_t w = 0; w < 2; ++w)
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t c = 0; c < features::FeatureLayout::kConstWidth; ++c) {
        const double v = a((w * 3) * 4 + n, c);
        for (std::size_t t = 1; t < 3; ++t) CHECK(a((w * 3 + t) * 4 + n, c) == v);
        if (c >= features::FeatureLayout::kMaskable) {
          CHECK(v == 1.0);
        } else {
          masked += v == 0.0;
          ++total;
        }
      }
  CHECK(masked > 0);
  CHECK(masked < total);
}

TEST_CASE("toy training is deterministic and starts with lambda 0") {
  auto cfg = toy::six_node_config();
  cfg.train.max_epochs = 3;
  const auto p = pipeline::prepare(cfg);
  const auto a = pipeline::train(*p);
  const auto b = pipeline::train(*p);
  CHECK(diagnostics_csv(a.result.log) == diagnostics_csv(b.result.log));
  CHECK(model::checkpoint_json(a.checkpoint) == model::checkpoint_json(b.checkpoint));
  REQUIRE(!a.result.log.empty());
  CHECK(a.result.log[0].lambda == 0.0);
  for (const auto& e : a.result.log) {
    CHECK(e.lambda >= 0.0);
    CHECK(e.lambda <= 1.0);
  }
}

TEST_CASE("the model can overfit a handful of windows") {
  auto cfg = toy::six_node_config();
  cfg.contrastive.strategy = Strategy::None;
  cfg.train.max_epochs = 200;
  cfg.train.early_stop_patience = 1000;
  cfg.train.plateau_patience = 1000;
  cfg.train.lr = 1e-2;
  const auto p = pipeline::prepare(cfg);
  auto data = p->training_data(true);
  data.train_starts.resize(5);
  data.val_starts.clear();
  model::Model m = model::Model::init(toy::dims_for(*p), 4);
  const auto r = train(m, data, cfg.train, cfg.contrastive);
  REQUIRE(r.log.size() == 200);
  CHECK(r.log.back().train_sup_loss * 10.0 <= r.log.front().train_sup_loss);
}

TEST_CASE("evaluation pairs predictions with the raw observations") {
  const auto& p = toy_prepared();
  model::Model m = model::Model::init(toy::dims_for(p), 5);
  const auto data = p.training_data(true);
  const auto samples = evaluate(m, data, p.eval_starts, p.targets, p.full, "M");
  REQUIRE(!samples.empty());
  CHECK(samples.size() == p.eval_starts.size() * p.targets.size() * p.cfg.windows.t_out * 3);
  for (const auto& s : samples) {
    CHECK(std::isfinite(s.pred));
    CHECK(s.lead >= 1);
    CHECK(s.lead <= p.cfg.windows.t_out);
    const auto st = *p.full.find(s.station);
    const auto step = static_cast<std::size_t>((s.time - p.full.start()) / data::kStepSeconds);
    const std::size_t var = s.variable == metrics::Variable::Direction ? data::kDd
                            : s.variable == metrics::Variable::Speed   ? data::kFf
                                                                       : data::kGff;
    CHECK(s.truth == p.full.value(st, step, var));
  }
}

TEST_CASE("input assembly") {
  const auto& p = toy_prepared();
  const std::vector<std::size_t> starts{p.train_starts[0], p.train_starts[3]};
  const Matrix x = assemble_inputs(p.frames, starts, 4);
  CHECK(x.rows() == 2 * 4 * 6);
  CHECK(x(4 * 6 + 6 + 2, 7) == p.frames.features(starts[1] + 1, 2)[7]);
  const Matrix y = assemble_targets(p.frames, p.meta, starts, 4, 2);
  CHECK(y.rows() == 2 * 4);
  CHECK(y.cols() == 8);
  CHECK(y(5, 6) == p.frames.targets(starts[1] + 4 + 1, p.meta.real_nodes[1])[2]);
}
