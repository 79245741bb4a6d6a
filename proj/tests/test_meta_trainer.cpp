#include <doctest.h>

#include <cmath>
#include <set>

#include "selfboost/trainer.hpp"
#include "test_support.hpp"

using namespace selfboost;
using testutil::random_tensor;

namespace {

struct Tiny {
  MultiExitModel<double> model{ModelSpec{3, {2, 4}, 3, Downsample::strided_conv}, 11};
  LabelGenerator<double> gen{GeneratorSpec{ModelSpec{3, {2, 4}, 3, Downsample::strided_conv}, 0}, 12};
  Batch<double> train{random_tensor({4, 3, 8, 8}, 13), {0, 1, 2, 1}, {0, 1, 2, 3}};
  Batch<double> test{random_tensor({4, 3, 8, 8}, 14), {2, 0, 1, 1}, {4, 5, 6, 7}};
  LossConfig loss{0.5, 1.0, LossMode::metadistill};
};

// L_test(theta - zeta * grad L_train) written directly with plain tensors.
double post_step_test_loss(const Tiny& t, const std::vector<Tensor<double>>& phi, double zeta) {
  Tape<double> tape;
  auto theta = t.model.parameters().bind(tape, true);
  std::vector<Var<double>> gen_params;
  for (const auto& p : phi) gen_params.push_back(tape.constant(p));
  auto out = t.model.forward(std::span<const Var<double>>(theta), tape.constant(t.train.images));
  auto targets = t.gen.soft_targets(std::span<const Var<double>>(gen_params), std::span<const Var<double>>(out.features),
                                    1.0, false);
  auto l_train = self_boost_loss(std::span<const Var<double>>(out.logits), t.train.labels,
                                 std::span<const Var<double>>(targets), t.loss);
  auto g = gradients(l_train, std::span<const Var<double>>(theta));
  Tape<double> fresh;
  std::vector<Var<double>> plus;
  for (std::size_t i = 0; i < g.size(); ++i) {
    Tensor<double> w = t.model.parameters()[i].value;
    auto d = w.mutable_data();
    for (std::size_t j = 0; j < d.size(); ++j) d[j] -= zeta * g[i][j];
    plus.push_back(fresh.constant(w));
  }
  auto test_out = t.model.forward(std::span<const Var<double>>(plus), fresh.constant(t.test.images));
  return cross_entropy(test_out.logits.back(), t.test.labels).value().item();
}

std::vector<Tensor<double>> phi_of(const LabelGenerator<double>& gen) {
  std::vector<Tensor<double>> out;
  for (const auto& p : gen.parameters()) out.push_back(p.value);
  return out;
}

Dataset small_synth(std::uint64_t seed, std::size_t n) {
  auto d = synth_dataset(seed, n, 4, 16);
  apply_standardization(d, compute_standardization(d));
  return d;
}

TrainConfig small_config(LossMode mode) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.epochs = 3;
  cfg.meta_period = 1;
  cfg.milestones = {2};
  cfg.batch_size = 16;
  cfg.lr_g = 1e-3;
  cfg.seed = 5;
  return cfg;
}

ModelSpec small_spec() { return ModelSpec{3, {4, 8, 8}, 4, Downsample::strided_conv}; }

}  // namespace

TEST_CASE("inner update examples") {
  Tape<double> tape;
  auto theta = tape.leaf(Tensor<double>::scalar(1.0), true);
  auto g = tape.constant(Tensor<double>::scalar(0.5));
  auto plus = inner_update<double>(std::span<const Var<double>>(&theta, 1), std::span<const Var<double>>(&g, 1), 0.1);
  CHECK(plus[0].value().item() == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(theta.value().item() == 1.0);

  auto w = tape.leaf(random_tensor({3, 4}, 1), true);
  auto gw = tape.constant(random_tensor({3, 4}, 2));
  auto same = inner_update<double>(std::span<const Var<double>>(&w, 1), std::span<const Var<double>>(&gw, 1), 0.0);
  CHECK(same[0].value() == w.value());

  auto bad = tape.constant(Tensor<double>({2}));
  CHECK_THROWS_AS(inner_update<double>(std::span<const Var<double>>(&w, 1), std::span<const Var<double>>(&bad, 1), 0.1),
                  DimensionError);
}

TEST_CASE("inner update on a 2-parameter linear model matches a hand step") {
  // L = mean_i (a x_i + b - y_i)^2
  const double xs[] = {1.0, 2.0, -1.0}, ys[] = {2.0, 3.5, 0.0};
  const double a0 = 0.3, b0 = -0.2, zeta = 0.05;
  double ga = 0, gb = 0;
  for (int i = 0; i < 3; ++i) {
    const double r = a0 * xs[i] + b0 - ys[i];
    ga += 2 * r * xs[i] / 3;
    gb += 2 * r / 3;
  }
  Tape<double> tape;
  auto a = tape.leaf(Tensor<double>::scalar(a0), true), b = tape.leaf(Tensor<double>::scalar(b0), true);
  auto x = tape.constant(Tensor<double>({3}, {xs[0], xs[1], xs[2]}));
  auto y = tape.constant(Tensor<double>({3}, {ys[0], ys[1], ys[2]}));
  auto r = sub(add(mul(broadcast_scalar(a, Shape{3}), x), broadcast_scalar(b, Shape{3})), y);
  auto loss = mean(mul(r, r));
  const Var<double> theta[] = {a, b};
  auto g = backward(loss, std::span<const Var<double>>(theta), true);
  auto plus = inner_update<double>(std::span<const Var<double>>(theta), std::span<const Var<double>>(g), zeta);
  CHECK(std::abs(plus[0].value().item() - (a0 - zeta * ga)) <= 1e-12);
  CHECK(std::abs(plus[1].value().item() - (b0 - zeta * gb)) <= 1e-12);
}

TEST_CASE("second-order meta-gradient matches differences of the post-step test loss") {
  Tiny t;
  const double zeta = 0.1;
  const auto before = t.model.parameters().checksum();
  auto analytic = meta_gradient(t.model, t.gen, t.train, t.test, t.loss, zeta, MetaOrder::second);
  CHECK(t.model.parameters().checksum() == before);
  auto numeric = testutil::numeric_gradient(
      [&](const std::vector<Tensor<double>>& phi) { return post_step_test_loss(t, phi, zeta); }, phi_of(t.gen));
  std::size_t coords = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    INFO(t.gen.parameters()[i].name);
    CHECK(testutil::max_rel_err(analytic[i], numeric[i]) < 1e-3);
    coords += analytic[i].size();
  }
  CHECK(coords == 343);

  // the library objective agrees with the direct construction
  CHECK(std::abs(meta_objective_value(t.model, t.gen, t.train, t.test, t.loss, zeta) -
                 post_step_test_loss(t, phi_of(t.gen), zeta)) <= 1e-12);
}

TEST_CASE("first and second order agree within 10% at zeta 1e-3") {
  Tiny t;
  auto second = meta_gradient(t.model, t.gen, t.train, t.test, t.loss, 1e-3, MetaOrder::second);
  auto first = meta_gradient(t.model, t.gen, t.train, t.test, t.loss, 1e-3, MetaOrder::first);
  double diff = 0, norm = 0;
  for (std::size_t i = 0; i < first.size(); ++i)
    for (std::size_t j = 0; j < first[i].size(); ++j) {
      diff += std::pow(first[i][j] - second[i][j], 2);
      norm += std::pow(second[i][j], 2);
    }
  CHECK(norm > 0);
  CHECK(std::sqrt(diff / norm) < 0.1);
}

TEST_CASE("generator parameters without influence get zero meta-gradient") {
  Tiny t;
  // with a zero classifier the target head conv no longer reaches the targets
  t.gen.parameters().set("head1.fc.weight", Tensor<double>(t.gen.parameters().at("head1.fc.weight").shape()));
  for (auto order : {MetaOrder::second, MetaOrder::first}) {
    auto g = meta_gradient(t.model, t.gen, t.train, t.test, t.loss, 0.1, order);
    for (const char* name : {"head1.conv.weight", "head1.conv.bias", "refine1.weight", "lateral1.weight"}) {
      for (auto v : g[*t.gen.parameters().find(name)].data()) CHECK(v == 0.0);
    }
  }
  auto none = meta_gradient(t.model, t.gen, t.train, t.test, LossConfig{1.0, 1.0, LossMode::metadistill}, 0.1,
                            MetaOrder::second);
  for (const auto& g : none)
    for (auto v : g.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(meta_gradient(t.model, t.gen, t.train, t.test, LossConfig{0.5, 1.0, LossMode::dsn}, 0.1,
                                MetaOrder::second),
                  ParameterError);
}

TEST_CASE("all-exit objective also matches its own differences") {
  Tiny t;
  auto analytic = meta_gradient(t.model, t.gen, t.train, t.test, t.loss, 0.1, MetaOrder::second,
                                MetaObjective::all_exits);
  auto numeric = testutil::numeric_gradient(
      [&](const std::vector<Tensor<double>>& phi) {
        LabelGenerator<double> g = t.gen;
        for (std::size_t i = 0; i < phi.size(); ++i) g.parameters()[i].value = phi[i];
        return meta_objective_value(t.model, g, t.train, t.test, t.loss, 0.1, MetaObjective::all_exits);
      },
      phi_of(t.gen));
  for (std::size_t i = 0; i < analytic.size(); ++i) CHECK(testutil::max_rel_err(analytic[i], numeric[i]) < 1e-3);
}

TEST_CASE("learning-rate schedule and inner step size") {
  TrainConfig cfg;
  cfg.lr_s = 0.1;
  cfg.milestones = {80, 140};
  auto s = cfg.schedule_s();
  CHECK(s.at(0) == 0.1);
  CHECK(s.at(79) == 0.1);
  CHECK(s.at(80) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(s.at(140) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(cfg.zeta_at(100) == s.at(100));
  cfg.zeta = 0.05;
  CHECK(cfg.zeta_at(100) == 0.05);
  cfg.meta_period = 5;
  CHECK(cfg.is_meta_epoch(0));
  CHECK_FALSE(cfg.is_meta_epoch(3));
  CHECK(cfg.is_meta_epoch(10));
  cfg.mode = LossMode::dsn;
  CHECK_FALSE(cfg.is_meta_epoch(10));
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.alpha = 1.5;
  CHECK_THROWS(cfg.validate());
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS(cfg.validate());
  cfg = TrainConfig{};
  cfg.meta_period = 0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("optimizer steps follow their update rules") {
  ParameterSet<double> params;
  params.add("w", Tensor<double>({2}, {1.0, -2.0}));
  SgdMomentum<double> sgd(params, 0.9, 0.01);
  const std::vector<Tensor<double>> g{Tensor<double>({2}, {0.5, 0.25})};
  sgd.step(params, g, 0.1);
  // v = g + wd w; w -= lr v
  const double v0 = 0.5 + 0.01 * 1.0, v1 = 0.25 + 0.01 * -2.0;
  CHECK(params[0].value[0] == doctest::Approx(1.0 - 0.1 * v0).epsilon(1e-15));
  const double w0 = 1.0 - 0.1 * v0;
  sgd.step(params, g, 0.1);
  CHECK(params[0].value[0] == doctest::Approx(w0 - 0.1 * (0.9 * v0 + 0.5 + 0.01 * w0)).epsilon(1e-15));
  CHECK(sgd.velocity()[0][1] == doctest::Approx(0.9 * v1 + 0.25 + 0.01 * (-2.0 - 0.1 * v1)).epsilon(1e-15));

  ParameterSet<double> q;
  q.add("w", Tensor<double>({1}, {1.0}));
  Adam<double> adam(q);
  adam.step(q, std::vector<Tensor<double>>{Tensor<double>({1}, {0.3})}, 0.01);
  // the first bias-corrected step has magnitude lr
  CHECK(q[0].value[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-9));

  const std::vector<Tensor<double>> inf{Tensor<double>({1}, {std::numeric_limits<double>::infinity()})};
  CHECK_THROWS_AS(adam.step(q, inf, 0.01), NumericError);
}

TEST_CASE("baseline mode never evaluates exit losses") {
  auto data = small_synth(1, 64);
  MultiExitModel<float> model(small_spec(), 1);
  LabelGenerator<float> gen(GeneratorSpec{small_spec(), 0}, 2);
  auto cfg = small_config(LossMode::baseline);
  cfg.epochs = 2;
  Trainer<float> trainer(cfg, model, gen);
  const auto exit_before = model.parameters().at("exit1.fc.weight");
  trainer.run(data, nullptr);
  CHECK(trainer.stats().counters.stage_loss == 0);
  CHECK(trainer.stats().counters.kl == 0);
  CHECK(trainer.stats().counters.cross_entropy == trainer.stats().model_steps);
  CHECK(trainer.stats().meta_steps == 0);
  CHECK(model.parameters().at("exit1.fc.weight") == exit_before);
}

TEST_CASE("phase isolation over a 3-epoch metadistill run with M = 1") {
  auto data = small_synth(2, 64);
  MultiExitModel<float> model(small_spec(), 3);
  LabelGenerator<float> gen(GeneratorSpec{small_spec(), 0}, 4);
  Trainer<float> trainer(small_config(LossMode::metadistill), model, gen);
  const auto gen_before = gen.parameters().checksum();
  trainer.run(data, nullptr);
  CHECK(gen.parameters().checksum() != gen_before);
  CHECK(trainer.stats().meta_steps == 3 * 2);
  std::size_t model_phases = 0, gen_phases = 0;
  for (const auto& a : trainer.audits()) {
    if (a.phase == PhaseAudit::Phase::generator) {
      ++gen_phases;
      CHECK(a.model_before == a.model_after);
      CHECK(a.momentum_before == a.momentum_after);
      CHECK(a.generator_before != a.generator_after);
    } else {
      ++model_phases;
      CHECK(a.generator_before == a.generator_after);
      CHECK(a.adam_before == a.adam_after);
      CHECK(a.model_before != a.model_after);
    }
  }
  CHECK(model_phases == 3);
  CHECK(gen_phases == 3);
}

TEST_CASE("meta trigger follows the period") {
  auto data = small_synth(3, 64);
  MultiExitModel<float> model(small_spec(), 3);
  LabelGenerator<float> gen(GeneratorSpec{small_spec(), 0}, 4);
  auto cfg = small_config(LossMode::metadistill);
  cfg.epochs = 5;
  cfg.meta_period = 2;
  cfg.meta_steps = 1;
  Trainer<float> trainer(cfg, model, gen);
  trainer.run(data, nullptr);
  CHECK(trainer.stats().meta_steps == 3);  // epochs 0, 2, 4
  CHECK(trainer.generator_optimizer().steps() == 3);
}

TEST_CASE("two-epoch runs are bit-identical") {
  auto data = small_synth(4, 96);
  auto val = small_synth(5, 32);
  auto run = [&] {
    MultiExitModel<float> model(small_spec(), 7);
    LabelGenerator<float> gen(GeneratorSpec{small_spec(), 0}, 8);
    auto cfg = small_config(LossMode::metadistill);
    cfg.epochs = 2;
    Trainer<float> trainer(cfg, model, gen);
    std::string csv;
    trainer.on_epoch_end = [&](const EpochReport& r) {
      for (auto row : r.rows) {
        row.wall_ms = 0;
        csv += format_metrics_row(row);
      }
    };
    trainer.run(data, &val);
    return std::tuple{csv, model.parameters().checksum(), gen.parameters().checksum()};
  };
  auto a = run(), b = run();
  CHECK(std::get<0>(a) == std::get<0>(b));
  CHECK(std::get<1>(a) == std::get<1>(b));
  CHECK(std::get<2>(a) == std::get<2>(b));
  CHECK(!std::get<0>(a).empty());
}

TEST_CASE("metrics rows cover every output and split") {
  auto data = small_synth(6, 48);
  auto val = small_synth(7, 24);
  MultiExitModel<float> model(small_spec(), 1);
  LabelGenerator<float> gen(GeneratorSpec{small_spec(), 0}, 2);
  auto cfg = small_config(LossMode::metadistill);
  cfg.epochs = 1;
  Trainer<float> trainer(cfg, model, gen);
  std::vector<MetricsRow> rows;
  trainer.on_epoch_end = [&](const EpochReport& r) { rows = r.rows; };
  trainer.run(data, &val);
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& r : rows) {
    seen.insert({r.split, r.output});
    CHECK(r.accuracy >= 0.0);
    CHECK(r.accuracy <= 1.0);
    const bool early = r.output == "1" || r.output == "2";
    CHECK(r.target_entropy.has_value() == early);
  }
  CHECK(seen.size() == 8);
  CHECK(metrics_header() == "epoch,split,exit,accuracy,loss,mean_target_entropy,lr,wall_ms\n");
  MetricsRow row{3, "val", "ensemble", 0.5, 1.25, std::nullopt, 0.1, 0};
  CHECK(format_metrics_row(row) == "3,val,ensemble,0.500000,1.250000,,0.1,0\n");
}

TEST_CASE("a diverging run aborts with finite parameters") {
  auto data = small_synth(8, 64);
  MultiExitModel<float> model(small_spec(), 1);
  LabelGenerator<float> gen(GeneratorSpec{small_spec(), 0}, 2);
  auto cfg = small_config(LossMode::dsn);
  cfg.lr_s = 1e30;
  cfg.epochs = 5;
  Trainer<float> trainer(cfg, model, gen);
  CHECK_THROWS_AS(trainer.run(data, nullptr), TrainingAborted);
  for (const auto& p : model.parameters()) CHECK(p.value.all_finite());
}

TEST_CASE("evaluate reports chance-level accuracy and a consistent ensemble") {
  auto data = synth_dataset(9, 400, 4, 16);
  MultiExitModel<float> model(small_spec(), 5);
  auto all = evaluate<float>(model, nullptr, data, 64, Exits::all);
  CHECK(all.outputs == std::vector<std::string>{"1", "2", "3", "ensemble"});
  CHECK(all.samples == 400);
  auto fin = evaluate<float>(model, nullptr, data, 64, Exits::final_only);
  CHECK(fin.outputs == std::vector<std::string>{"3", "ensemble"});
  CHECK(fin.accuracy[0] == fin.accuracy[1]);
  CHECK(fin.accuracy[0] == all.accuracy[2]);
  CHECK(evaluate<float>(model, nullptr, data, 7, Exits::all).accuracy == all.accuracy);
}
