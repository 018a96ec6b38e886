#include "contravirt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "contravirt/datakit.hpp"
#include "contravirt/errors.hpp"
#include "contravirt/format.hpp"

namespace contravirt::trainer {

using features::FeatureLayout;
using model::Binding;
using objectives::Strategy;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kStreamShuffle = 0x73687566;
constexpr std::uint64_t kStreamMask = 0x6d61736b;
}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
    throw ConfigError("AdamW betas must lie in [0, 1) and eps must be positive");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (early_stop_patience < 1 || plateau_patience < 1) throw ConfigError("patience values must be >= 1");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("plateau_factor must lie in (0, 1)");
  if (divergence_epochs < 1) throw ConfigError("divergence_epochs must be >= 1");
}

bool adamw_step(std::span<ad::Parameter* const> params, AdamState& state, double lr, double weight_decay,
                double beta1, double beta2, double eps) {
  for (const ad::Parameter* p : params)
    if (!p->grad.same_shape(p->value) || !p->grad.all_finite()) return false;
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const ad::Parameter* p : params) {
      state.m.emplace_back(p->value.rows(), p->value.cols());
      state.v.emplace_back(p->value.rows(), p->value.cols());
    }
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = *params[i];
    if (!state.m[i].same_shape(p.value)) throw ContractError("AdamW state does not match parameter " + p.name);
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      p.value[k] -= lr * weight_decay * p.value[k];
      double& m = state.m[i][k];
      double& v = state.v[i][k];
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v + (1.0 - beta2) * g * g;
      p.value[k] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
    }
  }
  return true;
}

std::string diagnostics_csv(std::span<const EpochDiagnostics> log) {
  std::ostringstream out;
  out << "epoch,train_sup_loss,train_contrast_loss,lambda,mae_dd,mae_ff,mae_gff,mae_mean,lr,pos_dist,neg_dist,val_loss,"
         "skipped_steps,skipped_future\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << format_double(e.train_sup_loss) << ',' << format_double(e.train_contrast_loss) << ','
        << format_double(e.lambda) << ',' << format_double(e.mae_dd) << ',' << format_double(e.mae_ff) << ','
        << format_double(e.mae_gff) << ',' << format_double(e.mae_mean) << ',' << format_double(e.lr) << ','
        << format_double(e.pos_dist) << ',' << format_double(e.neg_dist) << ',' << format_double(e.val_loss) << ','
        << e.skipped_steps << ',' << e.skipped_future << '\n';
  }
  return out.str();
}

Matrix assemble_inputs(const features::FeatureFrames& frames, std::span<const std::size_t> starts, std::size_t t_in) {
  constexpr std::size_t C = FeatureLayout::kConstWidth;
  const std::size_t n = frames.nodes;
  Matrix x(starts.size() * t_in * n, C);
  for (std::size_t w = 0; w < starts.size(); ++w) {
    if (starts[w] + t_in > frames.steps) throw ContractError("window inputs extend past the frames");
    // Steps are contiguous in the frame buffer, so one copy per window.
    std::copy_n(frames.features(starts[w], 0), t_in * n * C, x.data() + w * t_in * n * C);
  }
  return x;
}

Matrix assemble_targets(const features::FeatureFrames& frames, const features::NodeMeta& meta,
                        std::span<const std::size_t> starts, std::size_t t_in, std::size_t t_out) {
  Matrix y(starts.size() * meta.n_real, t_out * 4);
  for (std::size_t w = 0; w < starts.size(); ++w) {
    if (starts[w] + t_in + t_out > frames.steps) throw ContractError("window targets extend past the frames");
    for (std::size_t r = 0; r < meta.n_real; ++r)
      for (std::size_t l = 0; l < t_out; ++l)
        std::copy_n(frames.targets(starts[w] + t_in + l, meta.real_nodes[r]), 4,
                    y.row(w * meta.n_real + r).data() + l * 4);
  }
  return y;
}

Matrix feature_mask(std::size_t windows, std::size_t t_in, std::size_t nodes, double ratio, std::uint64_t seed,
                    std::uint64_t counter) {
  constexpr std::size_t C = FeatureLayout::kConstWidth;
  constexpr std::size_t M = FeatureLayout::kMaskable;
  Matrix mask(windows * t_in * nodes, C, 1.0);
  std::vector<double> draw(M);
  for (std::size_t w = 0; w < windows; ++w)
    for (std::size_t n = 0; n < nodes; ++n) {
      for (std::size_t c = 0; c < M; ++c)
        draw[c] = data::hash_uniform(seed, kStreamMask, counter, (w * nodes + n) * M + c) < ratio ? 0.0 : 1.0;
      for (std::size_t t = 0; t < t_in; ++t) std::copy(draw.begin(), draw.end(), mask.row((w * t_in + t) * nodes + n).begin());
    }
  return mask;
}

namespace {

struct MaeAcc {
  double sum[3] = {0.0, 0.0, 0.0};
  std::size_t n = 0;

  void add(const Matrix& pred, const Matrix& y, const features::NormStats& stats) {
    for (std::size_t r = 0; r < pred.rows(); ++r)
      for (std::size_t l = 0; l + 4 <= pred.cols(); l += 4) {
        const auto p = features::decode_targets(pred.row(r).subspan(l, 4), stats);
        const auto t = features::decode_targets(y.row(r).subspan(l, 4), stats);
        sum[0] += metrics::angular_error(p.dd, t.dd);
        sum[1] += std::abs(p.ff - t.ff);
        sum[2] += std::abs(p.gff - t.gff);
        ++n;
      }
  }
  double mean(std::size_t i) const { return n > 0 ? sum[i] / static_cast<double>(n) : kNaN; }
};

std::vector<long> node_rows(std::size_t windows, std::size_t nodes, std::span<const std::size_t> which) {
  std::vector<long> idx;
  idx.reserve(windows * which.size());
  for (std::size_t w = 0; w < windows; ++w)
    for (std::size_t k : which) idx.push_back(static_cast<long>(w * nodes + k));
  return idx;
}

model::ModelDims dims_of(const model::Model& m) { return m.dims; }

struct Accum {
  double sum = 0.0;
  double weight = 0.0;
  void add(double v, double w) {
    sum += v * w;
    weight += w;
  }
  double mean() const { return weight > 0.0 ? sum / weight : kNaN; }
};

}  // namespace

double validation_loss(model::Model& m, const TrainingData& data, std::span<const std::size_t> starts,
                       std::size_t batch_size) {
  if (starts.empty()) return kNaN;
  const auto& meta = data.meta;
  const auto dims = dims_of(m);
  double total = 0.0;
  for (std::size_t b0 = 0; b0 < starts.size(); b0 += batch_size) {
    const auto batch = starts.subspan(b0, std::min(batch_size, starts.size() - b0));
    const Matrix x = assemble_inputs(*data.frames, batch, data.spec.t_in);
    const Matrix y = assemble_targets(*data.frames, meta, batch, data.spec.t_in, data.spec.t_out);
    ad::Tape tape;
    ad::Var h = model::encode(tape, m.query, Binding::Frozen, data.s, meta, dims, {&x, nullptr, batch.size()});
    ad::Var pred = model::predict(tape, m.query, m.head, Binding::Frozen, data.s, h);
    ad::Var pr = ad::gather_rows(pred, node_rows(batch.size(), meta.nodes, meta.real_nodes));
    total += objectives::supervised_mse(pr, y).value()(0, 0) * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(starts.size());
}

StepLoss step_loss(ad::Tape& tape, model::Model& m, const TrainingData& data, std::span<const std::size_t> batch,
                   const objectives::ContrastiveConfig& contrast, const objectives::MoCoQueue& queue, double lambda,
                   std::uint64_t seed, std::uint64_t step) {
  const auto& meta = data.meta;
  const auto dims = dims_of(m);
  const std::size_t N = meta.nodes, t_in = data.spec.t_in, B = batch.size();
  const Strategy strategy = contrast.strategy;
  const bool moco = contrast.use_moco && strategy != Strategy::None;
  auto future_ok = [&](std::size_t start) {
    const std::size_t s0 = start + contrast.offset;
    if (s0 + t_in > data.frames->steps) return false;
    for (std::size_t t = s0; t < s0 + t_in; ++t)
      if (!data.frames->input_ok[t]) return false;
    return true;
  };

  StepLoss out;
  auto add_distances = [&out](const objectives::PairDistances& pd) {
    out.pos_sum += pd.positive * static_cast<double>(pd.positive_pairs);
    out.pos_pairs += static_cast<double>(pd.positive_pairs);
    out.neg_sum += pd.negative * static_cast<double>(pd.negative_pairs);
    out.neg_pairs += static_cast<double>(pd.negative_pairs);
  };
  const Matrix x = assemble_inputs(*data.frames, batch, t_in);
  const Matrix y = assemble_targets(*data.frames, meta, batch, t_in, data.spec.t_out);
  ad::Var h = model::encode(tape, m.query, Binding::Tracked, data.s, meta, dims, {&x, nullptr, B});
  ad::Var pred = model::predict(tape, m.query, m.head, Binding::Tracked, data.s, h);
  ad::Var pred_real = ad::gather_rows(pred, node_rows(B, N, meta.real_nodes));
  ad::Var sup = objectives::supervised_mse(pred_real, y);
  out.sup = sup;
  out.pred_real = pred_real;
  out.targets = y;

  ad::Var con;
  bool have_con = false;
  Matrix mask, xf;
  if (strategy == Strategy::Augmented) {
    mask = feature_mask(B, t_in, N, contrast.mask_ratio, seed, step);
    const Matrix qmat = moco ? queue.matrix() : Matrix();
    if (moco) {
      if (!(contrast.literal_denominator && queue.empty())) {
        ad::Var hk = model::encode(tape, m.key, Binding::Frozen, data.s, meta, dims, {&x, &mask, B});
        con = objectives::augmented_loss(h, hk, qmat, contrast.tau, contrast.literal_denominator);
        have_con = true;
        const auto pd = objectives::pair_distances(h.value(), hk.value(), qmat);
        add_distances(pd);
        out.keys = hk.value();
      }
    } else {
      ad::Var hk = model::encode(tape, m.query, Binding::Tracked, data.s, meta, dims, {&x, &mask, B});
      std::vector<std::size_t> positives(B * N);
      for (std::size_t i = 0; i < positives.size(); ++i) positives[i] = i;
      con = objectives::in_batch_loss(h, hk, N, N, positives, contrast.tau, contrast.literal_denominator);
      have_con = true;
      for (std::size_t w = 0; w < B; ++w) {
        Matrix q(N, dims.embed_dim), k(N, dims.embed_dim);
        std::copy_n(h.value().row(w * N).data(), N * dims.embed_dim, q.data());
        std::copy_n(hk.value().row(w * N).data(), N * dims.embed_dim, k.data());
        std::vector<long> excl(N);
        for (std::size_t i = 0; i < N; ++i) excl[i] = static_cast<long>(i);
        const auto pd = objectives::pair_distances(q, k, k, &excl);
        add_distances(pd);
      }
    }
  } else if (strategy == Strategy::MultiStep) {
    std::vector<std::size_t> fut_pos, fut_starts;
    for (std::size_t w = 0; w < B; ++w)
      if (future_ok(batch[w])) {
        fut_pos.push_back(w);
        fut_starts.push_back(batch[w] + contrast.offset);
      }
    out.skipped_future = B - fut_pos.size();
    const std::size_t F = fut_pos.size();
    const std::size_t Nv = meta.n_virtual, Nr = meta.n_real;
    if (F > 0 && !(moco && contrast.literal_denominator && queue.empty())) {
      xf = assemble_inputs(*data.frames, fut_starts, t_in);
      std::vector<long> vrows;
      for (std::size_t w : fut_pos)
        for (std::size_t v : meta.virtual_nodes) vrows.push_back(static_cast<long>(w * N + v));
      ad::Var hv = ad::gather_rows(h, vrows);
      ad::Var hf = moco ? model::encode(tape, m.key, Binding::Frozen, data.s, meta, dims, {&xf, nullptr, F})
                        : model::encode(tape, m.query, Binding::Tracked, data.s, meta, dims, {&xf, nullptr, F});
      ad::Var hr = ad::gather_rows(hf, node_rows(F, N, meta.real_nodes));
      std::vector<std::size_t> pairing(F * Nv);
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t v = 0; v < Nv; ++v) pairing[f * Nv + v] = f * Nr + data.pairing[v];
      if (moco) {
        const Matrix qmat = queue.matrix();
        con = objectives::multistep_loss(hv, hr, pairing, qmat, contrast.tau, contrast.literal_denominator);
        Matrix kpos(F * Nv, dims.embed_dim);
        for (std::size_t i = 0; i < pairing.size(); ++i)
          std::copy_n(hr.value().row(pairing[i]).data(), dims.embed_dim, kpos.row(i).data());
        const auto pd = objectives::pair_distances(hv.value(), kpos, qmat);
        add_distances(pd);
        out.keys = hr.value();
      } else {
        con = objectives::in_batch_loss(hv, hr, Nv, Nr, pairing, contrast.tau, contrast.literal_denominator);
        for (std::size_t f = 0; f < F; ++f) {
          Matrix q(Nv, dims.embed_dim), kpos(Nv, dims.embed_dim), negs(Nr, dims.embed_dim);
          std::copy_n(hv.value().row(f * Nv).data(), Nv * dims.embed_dim, q.data());
          std::copy_n(hr.value().row(f * Nr).data(), Nr * dims.embed_dim, negs.data());
          std::vector<long> excl(Nv);
          for (std::size_t v = 0; v < Nv; ++v) {
            std::copy_n(negs.row(data.pairing[v]).data(), dims.embed_dim, kpos.row(v).data());
            excl[v] = static_cast<long>(data.pairing[v]);
          }
          const auto pd = objectives::pair_distances(q, kpos, negs, &excl);
          add_distances(pd);
        }
      }
      have_con = true;
    }
  }

  if (have_con) out.contrast = con;
  out.total = have_con ? objectives::total_loss(sup, con, lambda) : sup;
  return out;
}

TrainResult train(model::Model& m, const TrainingData& data, const TrainConfig& cfg,
                  const objectives::ContrastiveConfig& contrast, const objectives::LambdaSchedule& schedule,
                  std::ostream* progress) {
  cfg.validate();
  contrast.validate();
  if (data.frames == nullptr || !data.s) throw ContractError("training data is incomplete");
  if (data.train_starts.empty()) throw DataError("no training windows");
  const auto& meta = data.meta;
  const auto dims = dims_of(m);
  if (dims.nodes != meta.nodes || dims.n_virtual != meta.n_virtual || dims.t_in != data.spec.t_in ||
      dims.t_out != data.spec.t_out) {
    throw ContractError("model dimensions do not match the training data");
  }
  if (meta.n_real == 0) throw DataError("training needs at least one real node");
  const Strategy strategy = contrast.strategy;
  const bool moco = contrast.use_moco && strategy != Strategy::None;
  if (strategy == Strategy::MultiStep && (meta.n_virtual == 0 || data.pairing.size() != meta.n_virtual)) {
    throw ConfigError("the multi-step strategy needs virtual nodes with a nearest-real pairing");
  }

  auto params = m.trainable();
  AdamState adam;
  objectives::MoCoQueue queue(contrast.queue_capacity, dims.embed_dim);
  TrainResult result;
  double lr = cfg.lr;
  double prev_mae = kNaN;
  double best_monitored = std::numeric_limits<double>::infinity();
  double best_plateau = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0, since_plateau = 0, bad_epochs = 0;
  model::Model best = m;
  std::uint64_t global_step = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lambda = epoch == 0 ? 0.0 : objectives::lambda_value(epoch, prev_mae, schedule);
    std::vector<std::pair<double, std::size_t>> keyed;
    for (std::size_t s : data.train_starts) keyed.emplace_back(data::hash_uniform(cfg.seed, kStreamShuffle + epoch, s), s);
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::size_t> order;
    for (const auto& k : keyed) order.push_back(k.second);

    EpochDiagnostics diag;
    diag.epoch = epoch;
    diag.lambda = lambda;
    diag.lr = lr;
    Accum sup_acc, con_acc, total_acc, pos_acc, neg_acc;
    MaeAcc mae_acc;
    bool any_nonfinite = false;

    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::span<const std::size_t> batch(order.data() + b0, std::min(cfg.batch_size, order.size() - b0));
      const std::size_t B = batch.size();
      ad::Tape tape;
      StepLoss loss = step_loss(tape, m, data, batch, contrast, queue, lambda, cfg.seed, global_step);
      diag.skipped_future += loss.skipped_future;
      const double sup_v = loss.sup.value()(0, 0);
      const double total_v = loss.total.value()(0, 0);
      const double con_v = loss.has_contrast() ? loss.contrast.value()(0, 0) : kNaN;
      ++global_step;
      if (!std::isfinite(total_v)) {
        any_nonfinite = true;
        ++diag.skipped_steps;
        continue;
      }
      for (ad::Parameter* p : params) p->zero_grad();
      tape.backward(loss.total);
      if (!adamw_step(params, adam, lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps)) {
        ++diag.skipped_steps;
        if (progress != nullptr) *progress << "warning: non-finite gradient, step skipped\n";
        continue;
      }
      if (moco) {
        model::momentum_update(m.query, m.key, contrast.momentum);
        if (!loss.keys.empty()) queue.push(loss.keys);
      }
      sup_acc.add(sup_v, static_cast<double>(B));
      total_acc.add(total_v, static_cast<double>(B));
      if (loss.has_contrast()) con_acc.add(con_v, static_cast<double>(B));
      if (loss.pos_pairs > 0.0) pos_acc.add(loss.pos_sum / loss.pos_pairs, loss.pos_pairs);
      if (loss.neg_pairs > 0.0) neg_acc.add(loss.neg_sum / loss.neg_pairs, loss.neg_pairs);
      mae_acc.add(loss.pred_real.value(), loss.targets, data.stats);
    }

    diag.train_sup_loss = sup_acc.mean();
    diag.train_contrast_loss = con_acc.mean();
    diag.mae_dd = mae_acc.mean(0);
    diag.mae_ff = mae_acc.mean(1);
    diag.mae_gff = mae_acc.mean(2);
    diag.mae_mean = (diag.mae_dd + diag.mae_ff + diag.mae_gff) / 3.0;
    diag.pos_dist = pos_acc.mean();
    diag.neg_dist = neg_acc.mean();
    diag.val_loss = validation_loss(m, data, data.val_starts, std::max<std::size_t>(cfg.batch_size, 64));
    result.log.push_back(diag);
    if (progress != nullptr) {
      *progress << "epoch " << epoch << " sup=" << format_double(diag.train_sup_loss)
                << " contrast=" << format_double(diag.train_contrast_loss) << " lambda=" << format_double(lambda)
                << " lr=" << format_double(lr) << " val=" << format_double(diag.val_loss)
                << " mae=" << format_double(diag.mae_mean) << '\n';
    }

    const bool finite_epoch = std::isfinite(diag.train_sup_loss) && !(any_nonfinite && sup_acc.weight == 0.0);
    if (!finite_epoch) {
      if (++bad_epochs >= cfg.divergence_epochs) {
        throw NumericalError("training diverged: non-finite loss for " + std::to_string(bad_epochs) +
                             " consecutive epochs (last epoch " + std::to_string(epoch) + ")");
      }
      continue;
    }
    bad_epochs = 0;
    prev_mae = diag.mae_mean;

    const double monitored = data.val_starts.empty() ? diag.train_sup_loss : diag.val_loss;
    if (monitored < best_monitored) {
      best_monitored = monitored;
      result.best_epoch = epoch;
      best = m;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      result.stopped_early = true;
      break;
    }
    if (diag.train_sup_loss < best_plateau) {
      best_plateau = diag.train_sup_loss;
      since_plateau = 0;
    } else if (++since_plateau >= cfg.plateau_patience) {
      lr *= cfg.plateau_factor;
      since_plateau = 0;
    }
  }
  if (std::isfinite(best_monitored)) m = best;
  result.best_monitored = best_monitored;
  return result;
}

std::vector<metrics::Sample> evaluate(model::Model& m, const TrainingData& data, std::span<const std::size_t> starts,
                                      std::span<const EvalTarget> targets, const data::Dataset& truth,
                                      const std::string& method, std::size_t batch_size) {
  const auto& meta = data.meta;
  const auto dims = dims_of(m);
  if (dims.nodes != meta.nodes) throw ContractError("model and node layout disagree");
  for (const auto& t : targets) {
    if (t.node >= meta.nodes) throw ContractError("evaluation node out of range");
    if (t.station >= truth.station_count() || truth.stations()[t.station].id != t.station_id) {
      throw ContractError("evaluation station '" + t.station_id + "' does not match the truth dataset");
    }
  }
  std::vector<metrics::Sample> out;
  const std::size_t t_in = data.spec.t_in, t_out = data.spec.t_out;
  for (std::size_t b0 = 0; b0 < starts.size(); b0 += batch_size) {
    const auto batch = starts.subspan(b0, std::min(batch_size, starts.size() - b0));
    const Matrix x = assemble_inputs(*data.frames, batch, t_in);
    ad::Tape tape;
    ad::Var h = model::encode(tape, m.query, Binding::Frozen, data.s, meta, dims, {&x, nullptr, batch.size()});
    const Matrix pred = model::predict(tape, m.query, m.head, Binding::Frozen, data.s, h).value();
    for (std::size_t w = 0; w < batch.size(); ++w)
      for (const auto& t : targets)
        for (std::size_t l = 0; l < t_out; ++l) {
          const std::size_t step = batch[w] + t_in + l;
          if (step >= truth.steps()) continue;
          const auto d = features::decode_targets(pred.row(w * meta.nodes + t.node).subspan(l * 4, 4), data.stats);
          const double tv[3] = {truth.value(t.station, step, data::kDd), truth.value(t.station, step, data::kFf),
                                truth.value(t.station, step, data::kGff)};
          const double pv[3] = {d.dd, d.ff, d.gff};
          const metrics::Variable vars[3] = {metrics::Variable::Direction, metrics::Variable::Speed,
                                             metrics::Variable::Gust};
          for (int k = 0; k < 3; ++k) {
            if (std::isnan(tv[k])) continue;
            out.push_back({method, vars[k], l + 1, t.station_id, truth.time_at(step), pv[k], tv[k]});
          }
        }
  }
  return out;
}

}  // namespace contravirt::trainer
