#include "selfboost/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

namespace selfboost {

MetaOrder parse_meta_order(std::string_view name) {
  if (name == "second") return MetaOrder::second;
  if (name == "first") return MetaOrder::first;
  throw ParameterError("unknown meta order '" + std::string(name) + "'");
}

std::string_view to_string(MetaOrder order) { return order == MetaOrder::second ? "second" : "first"; }

MetaObjective parse_meta_objective(std::string_view name) {
  if (name == "final_exit") return MetaObjective::final_exit;
  if (name == "all_exits") return MetaObjective::all_exits;
  throw ParameterError("unknown meta objective '" + std::string(name) + "'");
}

std::string_view to_string(MetaObjective objective) {
  return objective == MetaObjective::final_exit ? "final_exit" : "all_exits";
}

void TrainConfig::validate() const {
  loss().validate();
  if (meta_period < 1) throw ParameterError("meta_period must be >= 1");
  if (zeta && !(*zeta > 0.0)) throw ParameterError("zeta must be positive");
  if (!(lr_s > 0.0) || !(lr_g > 0.0)) throw ParameterError("learning rates must be positive");
  if (!(lr_factor > 0.0)) throw ParameterError("lr_factor must be positive");
  for (std::size_t i = 1; i < milestones.size(); ++i) {
    if (milestones[i] <= milestones[i - 1]) throw ParameterError("milestones must be strictly increasing");
  }
  if (momentum < 0.0 || momentum >= 1.0) throw ParameterError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ParameterError("weight_decay must be >= 0");
  if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
  if (meta_steps && *meta_steps < 1) throw ParameterError("meta_steps must be >= 1");
}

std::string metrics_header() { return "epoch,split,exit,accuracy,loss,mean_target_entropy,lr,wall_ms\n"; }

std::string format_metrics_row(const MetricsRow& row) {
  char buf[256];
  std::string entropy;
  if (row.target_entropy) {
    std::snprintf(buf, sizeof buf, "%.6f", *row.target_entropy);
    entropy = buf;
  }
  std::snprintf(buf, sizeof buf, "%zu,%s,%s,%.6f,%.6f,%s,%.6g,%.0f\n", row.epoch, row.split.c_str(), row.output.c_str(),
                row.accuracy, row.loss, entropy.c_str(), row.lr, row.wall_ms);
  return buf;
}

std::size_t EvalResult::index(const std::string& output) const {
  for (std::size_t i = 0; i < outputs.size(); ++i)
    if (outputs[i] == output) return i;
  throw InputError("no evaluated output named '" + output + "'");
}

namespace {

/// Running sums for one tracked output.
struct Tally {
  double correct = 0.0, loss = 0.0, entropy = 0.0;
  bool has_entropy = false;
};

template <typename S>
std::size_t argmax_row(const Tensor<S>& m, std::size_t row) {
  const std::size_t c = m.dim(1);
  std::size_t best = 0;
  for (std::size_t k = 1; k < c; ++k)
    if (m[row * c + k] > m[row * c + best]) best = k;
  return best;
}

/// Adds correct-count and summed CE of raw logits.
template <typename S>
void tally_logits(Tally& t, const Tensor<S>& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double top = logits[i * c];
    for (std::size_t k = 1; k < c; ++k) top = std::max(top, static_cast<double>(logits[i * c + k]));
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(static_cast<double>(logits[i * c + k]) - top);
    const auto y = static_cast<std::size_t>(labels[i]);
    t.loss += top + std::log(z) - static_cast<double>(logits[i * c + y]);
    if (argmax_row(logits, i) == y) t.correct += 1.0;
  }
}

/// Adds correct-count and summed NLL of probabilities.
template <typename S>
void tally_probs(Tally& t, const Tensor<S>& probs, std::span<const int> labels) {
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    t.loss -= std::log(std::max(static_cast<double>(probs[i * c + y]), 1e-12));
    if (argmax_row(probs, i) == y) t.correct += 1.0;
  }
}

template <typename S>
void tally_entropy(Tally& t, const Tensor<S>& targets) {
  for (double h : row_entropy(targets)) t.entropy += h;
  t.has_entropy = true;
}

std::vector<std::string> output_names(std::size_t stages, Exits exits) {
  std::vector<std::string> names;
  if (exits == Exits::all) {
    for (std::size_t k = 1; k <= stages; ++k) names.push_back(std::to_string(k));
  } else {
    names.push_back(std::to_string(stages));
  }
  names.push_back("ensemble");
  return names;
}

template <typename S>
void tally_batch(std::vector<Tally>& tallies, const std::vector<Tensor<S>>& logits,
                 const std::vector<Tensor<S>>& targets, std::span<const int> labels, double tau) {
  for (std::size_t k = 0; k < logits.size(); ++k) tally_logits(tallies[k], logits[k], labels);
  for (std::size_t k = 0; k < targets.size() && k < logits.size(); ++k) tally_entropy(tallies[k], targets[k]);
  tally_probs(tallies.back(), ensemble_output<S>(logits, static_cast<S>(tau)), labels);
}

template <typename S>
Var<S> test_loss(const MultiExitModel<S>& model, std::span<const Var<S>> params, const Batch<S>& batch,
                 MetaObjective objective) {
  Tape<S>& tape = params.front().tape();
  const Var<S> x = tape.constant(batch.images);
  if (objective == MetaObjective::final_exit) {
    const auto out = model.forward(params, x, Exits::final_only);
    return cross_entropy(out.logits.back(), std::span<const int>(batch.labels));
  }
  const auto out = model.forward(params, x, Exits::all);
  Var<S> total = cross_entropy(out.logits.front(), std::span<const int>(batch.labels));
  for (std::size_t k = 1; k < out.logits.size(); ++k) {
    total = add(total, cross_entropy(out.logits[k], std::span<const int>(batch.labels)));
  }
  return total;
}

template <typename S>
Var<S> inner_train_loss(const MultiExitModel<S>& model, const LabelGenerator<S>& generator,
                        const std::vector<Var<S>>& model_params, const std::vector<Var<S>>& generator_params,
                        const Batch<S>& batch, const LossConfig& loss) {
  Tape<S>& tape = model_params.front().tape();
  const auto out = model.forward(model_params, tape.constant(batch.images), Exits::all);
  const auto targets = generator.soft_targets(generator_params, out.features, static_cast<S>(loss.tau), false);
  return self_boost_loss<S>(out.logits, batch.labels, targets, loss);
}

template <typename S>
std::vector<Tensor<S>> zeros_like(const ParameterSet<S>& params) {
  std::vector<Tensor<S>> out;
  for (const auto& p : params) out.emplace_back(p.value.shape());
  return out;
}

void require_metadistill(const LossConfig& loss) {
  if (loss.mode != LossMode::metadistill) throw ParameterError("meta-gradients need loss mode metadistill");
}

}  // namespace

template <typename S>
std::vector<Var<S>> inner_update(std::span<const Var<S>> theta, std::span<const Var<S>> grads, double zeta) {
  if (theta.size() != grads.size()) throw DimensionError("inner_update: parameter and gradient counts differ");
  std::vector<Var<S>> out;
  out.reserve(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (zeta == 0.0) {
      out.push_back(theta[i]);
    } else {
      out.push_back(sub(theta[i], scale(grads[i], static_cast<S>(zeta))));
    }
  }
  return out;
}

template <typename S>
std::vector<Tensor<S>> meta_gradient(const MultiExitModel<S>& model, const LabelGenerator<S>& generator,
                                     const Batch<S>& train_batch, const Batch<S>& test_batch,
                                     const LossConfig& loss, double zeta, MetaOrder order, MetaObjective objective) {
  require_metadistill(loss);
  loss.validate();
  // alpha == 1 drops the distillation term, so the targets have no influence.
  if (loss.alpha == 1.0 || zeta == 0.0) return zeros_like(generator.parameters());

  if (order == MetaOrder::second) {
    Tape<S> tape;
    const auto theta = model.parameters().bind(tape, true);
    const auto phi = generator.parameters().bind(tape, true);
    const Var<S> l_train = inner_train_loss(model, generator, theta, phi, train_batch, loss);
    const auto g = backward(l_train, std::span<const Var<S>>(theta), true);
    const auto plus = inner_update<S>(theta, g, zeta);
    return gradients(test_loss(model, std::span<const Var<S>>(plus), test_batch, objective),
                     std::span<const Var<S>>(phi));
  }

  // First order in zeta: the test gradient is taken at theta_S rather than
  // at theta_S+, leaving -zeta * d/dphi <grad L_train, v> with v constant.
  std::vector<std::optional<Tensor<S>>> v(model.parameters().size());
  {
    Tape<S> tape;
    const auto theta = model.parameters().bind(tape, true);
    const Var<S> l_test = test_loss(model, std::span<const Var<S>>(theta), test_batch, objective);
    const auto used = model.parameter_indices(objective == MetaObjective::final_exit ? Exits::final_only : Exits::all);
    std::vector<Var<S>> leaves;
    for (auto i : used) leaves.push_back(theta[i]);
    const auto grads = gradients(l_test, std::span<const Var<S>>(leaves));
    for (std::size_t j = 0; j < used.size(); ++j) v[used[j]] = grads[j];
  }
  Tape<S> tape;
  const auto theta = model.parameters().bind(tape, true);
  const auto phi = generator.parameters().bind(tape, true);
  const Var<S> l_train = inner_train_loss(model, generator, theta, phi, train_batch, loss);
  const auto g = backward(l_train, std::span<const Var<S>>(theta), true);
  std::optional<Var<S>> dot;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!v[i]) continue;  // not read by the test loss
    const Var<S> term = sum(mul(g[i], tape.constant(*v[i])));
    dot = dot ? add(*dot, term) : term;
  }
  return gradients(scale(*dot, static_cast<S>(-zeta)), std::span<const Var<S>>(phi));
}

template <typename S>
double meta_objective_value(const MultiExitModel<S>& model, const LabelGenerator<S>& generator,
                            const Batch<S>& train_batch, const Batch<S>& test_batch, const LossConfig& loss,
                            double zeta, MetaObjective objective) {
  require_metadistill(loss);
  Tape<S> tape;
  const auto theta = model.parameters().bind(tape, true);
  const auto phi = generator.parameters().bind(tape, false);
  const Var<S> l_train = inner_train_loss(model, generator, theta, phi, train_batch, loss);
  const auto g = backward(l_train, std::span<const Var<S>>(theta), false);
  NoGradGuard<S> guard(tape);
  const auto plus = inner_update<S>(theta, g, zeta);
  return static_cast<double>(test_loss(model, std::span<const Var<S>>(plus), test_batch, objective).value().item());
}

template <typename S>
EvalResult evaluate(const MultiExitModel<S>& model, const LabelGenerator<S>* generator, const Dataset& data,
                    std::size_t batch_size, Exits exits, double tau) {
  data.validate();
  if (batch_size < 1) throw InputError("batch size must be >= 1");
  const std::size_t K = model.spec().stages();
  EvalResult result;
  result.outputs = output_names(K, exits);
  std::vector<Tally> tallies(result.outputs.size());
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t stop = std::min(data.size(), start + batch_size);
    const auto batch = make_batch<S>(data, std::span<const std::size_t>(order).subspan(start, stop - start));
    Tape<S> tape;
    NoGradGuard<S> guard(tape);
    const auto params = model.parameters().bind(tape, false);
    const auto out = model.forward(params, tape.constant(batch.images), exits);
    std::vector<Tensor<S>> logits, targets;
    for (const auto& z : out.logits) logits.push_back(z.value());
    if (generator && exits == Exits::all) {
      for (const auto& t : generator->soft_targets({}, out.features, static_cast<S>(tau), true)) {
        targets.push_back(t.value());
      }
    }
    tally_batch(tallies, logits, targets, batch.labels, tau);
  }
  const double n = static_cast<double>(data.size());
  for (const auto& t : tallies) {
    result.accuracy.push_back(t.correct / n);
    result.loss.push_back(t.loss / n);
    result.target_entropy.push_back(t.has_entropy ? std::optional<double>(t.entropy / n) : std::nullopt);
  }
  result.samples = data.size();
  return result;
}

template <typename S>
Trainer<S>::Trainer(TrainConfig config, MultiExitModel<S>& model, LabelGenerator<S>& generator)
    : config_(std::move(config)),
      model_(model),
      generator_(generator),
      sgd_(model.parameters(), config_.momentum, config_.weight_decay),
      adam_(generator.parameters()) {
  config_.validate();
}

template <typename S>
PhaseAudit Trainer<S>::snapshot(PhaseAudit::Phase phase, std::size_t epoch) const {
  PhaseAudit a;
  a.phase = phase;
  a.epoch = epoch;
  a.model_before = model_.parameters().checksum();
  a.momentum_before = sgd_.checksum();
  a.generator_before = generator_.parameters().checksum();
  a.adam_before = adam_.checksum();
  return a;
}

template <typename S>
void Trainer<S>::finish(PhaseAudit& a) const {
  a.model_after = model_.parameters().checksum();
  a.momentum_after = sgd_.checksum();
  a.generator_after = generator_.parameters().checksum();
  a.adam_after = adam_.checksum();
}

template <typename S>
void Trainer<S>::model_phase(std::size_t epoch, const Dataset& train, std::vector<MetricsRow>& rows) {
  PhaseAudit audit = snapshot(PhaseAudit::Phase::model, epoch);
  const double lr = config_.schedule_s().at(epoch);
  const Exits exits = config_.multi_exit() ? Exits::all : Exits::final_only;
  const auto used = model_.parameter_indices(exits);
  const LossConfig loss = config_.loss();
  if (config_.mode == LossMode::classic_kd && !teacher_) throw ParameterError("classic_kd mode needs a teacher");
  const auto names = output_names(model_.spec().stages(), exits);
  std::vector<Tally> tallies(names.size());

  std::optional<AugmentSchedule> aug;
  if (config_.augment) aug = AugmentSchedule{mix_seed(config_.seed, 0xa46e), epoch};
  for (const auto& idx : epoch_batches(train.size(), config_.batch_size, mix_seed(config_.seed, 0xba7c), epoch)) {
    const auto batch = make_batch<S>(train, idx, aug);
    Tape<S> tape;
    const auto theta = model_.parameters().bind(tape, true);
    const auto out = model_.forward(theta, tape.constant(batch.images), exits);
    std::vector<Var<S>> targets;
    if (config_.mode == LossMode::metadistill) {
      targets = generator_.soft_targets({}, out.features, static_cast<S>(config_.tau), true);
    }
    Var<S> objective;
    if (config_.mode == LossMode::classic_kd) {
      const Var<S> teacher = tape.constant(teacher_->predict_logits(batch.images, Exits::final_only).back());
      ++stats_.counters.cross_entropy;
      if (config_.alpha != 1.0) ++stats_.counters.kl;
      objective = classic_kd_loss(out.logits.back(), teacher, std::span<const int>(batch.labels), config_.alpha,
                                  config_.tau);
    } else {
      objective = self_boost_loss<S>(out.logits, batch.labels, targets, loss, &stats_.counters);
    }
    std::vector<Var<S>> leaves;
    for (auto i : used) leaves.push_back(theta[i]);
    const auto g = gradients(objective, std::span<const Var<S>>(leaves));
    auto grads = zeros_like(model_.parameters());
    for (std::size_t j = 0; j < used.size(); ++j) grads[used[j]] = g[j];
    sgd_.step(model_.parameters(), grads, lr, used);
    ++stats_.model_steps;

    std::vector<Tensor<S>> logit_values, target_values;
    for (const auto& z : out.logits) logit_values.push_back(z.value());
    if (config_.mode == LossMode::self_distill) {
      const auto teacher = softmax_rows(logit_values.back(), static_cast<S>(config_.tau));
      for (std::size_t k = 0; k + 1 < logit_values.size(); ++k) target_values.push_back(teacher);
    } else {
      for (const auto& t : targets) target_values.push_back(t.value());
    }
    tally_batch(tallies, logit_values, target_values, batch.labels, config_.tau);
  }
  const double n = static_cast<double>(train.size());
  for (std::size_t k = 0; k < names.size(); ++k) {
    MetricsRow row;
    row.epoch = epoch;
    row.split = "train";
    row.output = names[k];
    row.accuracy = tallies[k].correct / n;
    row.loss = tallies[k].loss / n;
    if (tallies[k].has_entropy) row.target_entropy = tallies[k].entropy / n;
    row.lr = lr;
    rows.push_back(std::move(row));
  }
  finish(audit);
  audits_.push_back(audit);
}

template <typename S>
void Trainer<S>::generator_phase(std::size_t epoch, const Dataset& train) {
  PhaseAudit audit = snapshot(PhaseAudit::Phase::generator, epoch);
  const HalfSplit halves = split_dataset_half(train.size(), mix_seed(mix_seed(config_.seed, 0x5b11), epoch));
  const std::size_t B = config_.batch_size;
  const std::size_t pairs =
      config_.meta_steps ? *config_.meta_steps : std::max<std::size_t>(1, train.size() / (2 * B));
  const double lr = config_.schedule_g().at(epoch);
  const double zeta = config_.zeta_at(epoch);
  std::optional<AugmentSchedule> aug;
  if (config_.augment) aug = AugmentSchedule{mix_seed(config_.seed, 0x3e7a), epoch};

  auto window = [B](const std::vector<std::size_t>& pool, std::size_t p) {
    const std::size_t len = std::min(B, pool.size());
    std::vector<std::size_t> idx(len);
    for (std::size_t j = 0; j < len; ++j) idx[j] = pool[(p * len + j) % pool.size()];
    return idx;
  };
  for (std::size_t p = 0; p < pairs; ++p) {
    const auto train_batch = make_batch<S>(train, window(halves.train, p), aug);
    const auto test_batch = make_batch<S>(train, window(halves.test, p), aug);
    const auto grads = meta_gradient(model_, generator_, train_batch, test_batch, config_.loss(), zeta,
                                     config_.meta_order, config_.meta_objective);
    adam_.step(generator_.parameters(), grads, lr);
    ++stats_.meta_steps;
  }
  finish(audit);
  audits_.push_back(audit);
}

template <typename S>
EpochReport Trainer<S>::run_epoch(std::size_t epoch, const Dataset& train, const Dataset* val) {
  const auto start = std::chrono::steady_clock::now();
  EpochReport report;
  report.epoch = epoch;
  try {
    model_phase(epoch, train, report.rows);
    if (config_.is_meta_epoch(epoch)) generator_phase(epoch, train);
    if (val) {
      const Exits exits = config_.multi_exit() ? Exits::all : Exits::final_only;
      const LabelGenerator<S>* gen = config_.mode == LossMode::metadistill ? &generator_ : nullptr;
      const auto result = evaluate(model_, gen, *val, config_.batch_size, exits, config_.tau);
      for (std::size_t k = 0; k < result.outputs.size(); ++k) {
        MetricsRow row;
        row.epoch = epoch;
        row.split = "val";
        row.output = result.outputs[k];
        row.accuracy = result.accuracy[k];
        row.loss = result.loss[k];
        row.target_entropy = result.target_entropy[k];
        row.lr = config_.schedule_s().at(epoch);
        report.rows.push_back(std::move(row));
      }
    }
  } catch (const TrainingAborted&) {
    throw;
  } catch (const NumericError& e) {
    throw TrainingAborted(epoch, e.what());
  }
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  for (auto& row : report.rows) row.wall_ms = ms;
  ++stats_.epochs_done;
  return report;
}

template <typename S>
void Trainer<S>::run(const Dataset& train, const Dataset* val) {
  for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
    const auto report = run_epoch(epoch, train, val);
    if (on_epoch_end) on_epoch_end(report);
  }
}

#define SELFBOOST_INSTANTIATE(S)                                                                                  \
  template std::vector<Var<S>> inner_update<S>(std::span<const Var<S>>, std::span<const Var<S>>, double);         \
  template std::vector<Tensor<S>> meta_gradient<S>(const MultiExitModel<S>&, const LabelGenerator<S>&,            \
                                                   const Batch<S>&, const Batch<S>&, const LossConfig&, double,   \
                                                   MetaOrder, MetaObjective);                                     \
  template double meta_objective_value<S>(const MultiExitModel<S>&, const LabelGenerator<S>&, const Batch<S>&,    \
                                          const Batch<S>&, const LossConfig&, double, MetaObjective);             \
  template EvalResult evaluate<S>(const MultiExitModel<S>&, const LabelGenerator<S>*, const Dataset&, std::size_t, \
                                  Exits, double);                                                                 \
  template class Trainer<S>;

SELFBOOST_INSTANTIATE(float)
SELFBOOST_INSTANTIATE(double)
#undef SELFBOOST_INSTANTIATE

}  // namespace selfboost
