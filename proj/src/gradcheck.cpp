#include "selfboost/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "selfboost/data.hpp"
#include "selfboost/losses.hpp"
#include "selfboost/trainer.hpp"

namespace selfboost {

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

bool GradcheckReport::passed() const {
  return std::all_of(items.begin(), items.end(), [](const GradcheckItem& i) { return i.passed(); });
}

double GradcheckReport::worst() const {
  double w = 0.0;
  for (const auto& i : items) w = std::max(w, i.worst);
  return w;
}

std::string GradcheckReport::table() const {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-40s %12s %10s %8s  %s\n", "item", "worst_rel", "tolerance", "coords", "result");
  out += line;
  for (const auto& i : items) {
    std::snprintf(line, sizeof line, "%-40s %12.3e %10.1e %8zu  %s\n", i.name.c_str(), i.worst, i.tolerance,
                  i.coordinates, i.passed() ? "PASS" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof line, "%zu items, worst %.3e, %.2f s: %s\n", items.size(), worst(), seconds,
                passed() ? "PASS" : "FAIL");
  out += line;
  return out;
}

namespace {

double evaluate_at(const Objective& f, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  NoGradGuard<double> guard(tape);
  std::vector<Var<double>> vars;
  for (const auto& x : inputs) vars.push_back(tape.constant(x));
  return f(tape, vars).value().item();
}

std::vector<Tensor<double>> gradient_at(const Objective& f, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& x : inputs) vars.push_back(tape.leaf(x, true));
  return gradients(f(tape, vars), std::span<const Var<double>>(vars));
}

Tensor<double> random_tensor(std::mt19937_64& rng, const Shape& shape, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Tensor<double> t(shape);
  for (auto& v : t.mutable_data()) v = normal(rng);
  return t;
}

Tensor<double> positive_tensor(std::mt19937_64& rng, const Shape& shape) {
  std::uniform_real_distribution<double> unit(0.5, 2.0);
  Tensor<double> t(shape);
  for (auto& v : t.mutable_data()) v = unit(rng);
  return t;
}

/// Values at least 0.2 away from zero, so kinks are never straddled.
Tensor<double> away_from_zero(std::mt19937_64& rng, const Shape& shape) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<double> t(shape);
  for (auto& v : t.mutable_data()) {
    const double n = normal(rng);
    v = (n < 0 ? -1.0 : 1.0) * (0.2 + std::abs(n));
  }
  return t;
}

/// sum(v * R) with R fixed by the shape, so every output coordinate matters.
Var<double> weighted(const Var<double>& v) {
  std::mt19937_64 rng(numel(v.shape()) * 7919 + v.shape().size());
  return sum(mul(v, v.tape().constant(random_tensor(rng, v.shape()))));
}

std::vector<int> labels_for(std::size_t n, std::size_t classes) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>((i * 7 + 3) % classes);
  return labels;
}

struct Case {
  std::string name;
  Objective f;
  std::vector<Tensor<double>> inputs;
  bool second_order = false;
};

ModelSpec tiny_spec() {
  ModelSpec spec;
  spec.in_channels = 3;
  spec.widths = {2, 4};
  spec.classes = 3;
  return spec;
}

std::vector<Tensor<double>> values_of(const ParameterSet<double>& params) {
  std::vector<Tensor<double>> out;
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

std::vector<Case> op_cases(std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x0b5));
  std::vector<Case> cases;
  auto unary = [&](std::string name, Tensor<double> x, auto op, bool second) {
    cases.push_back({std::move(name),
                     [op](Tape<double>&, const std::vector<Var<double>>& v) { return weighted(op(v[0])); },
                     {std::move(x)},
                     second});
  };
  auto binary = [&](std::string name, Tensor<double> a, Tensor<double> b, auto op, bool second) {
    cases.push_back({std::move(name),
                     [op](Tape<double>&, const std::vector<Var<double>>& v) { return weighted(op(v[0], v[1])); },
                     {std::move(a), std::move(b)},
                     second});
  };
  const Shape m{3, 4};
  binary("add", random_tensor(rng, m), random_tensor(rng, m), [](auto a, auto b) { return add(a, b); }, false);
  binary("sub", random_tensor(rng, m), random_tensor(rng, m), [](auto a, auto b) { return sub(a, b); }, false);
  binary("mul", random_tensor(rng, m), random_tensor(rng, m), [](auto a, auto b) { return mul(a, b); }, true);
  unary("neg", random_tensor(rng, m), [](auto a) { return neg(a); }, false);
  unary("scale", random_tensor(rng, m), [](auto a) { return scale(a, 1.7); }, false);
  unary("exp", random_tensor(rng, m), [](auto a) { return exp(a); }, true);
  unary("log", positive_tensor(rng, m), [](auto a) { return log(a); }, true);
  unary("reciprocal", positive_tensor(rng, m), [](auto a) { return reciprocal(a); }, true);
  unary("relu", away_from_zero(rng, m), [](auto a) { return relu(a); }, false);
  unary("clamp_min", away_from_zero(rng, m), [](auto a) { return clamp_min(a, 0.0); }, false);
  unary("sum", random_tensor(rng, m), [](auto a) { return mul(sum(a), sum(a)); }, true);
  unary("mean", random_tensor(rng, m), [](auto a) { return mean(a); }, false);
  unary("broadcast_scalar", random_tensor(rng, {1}), [](auto a) { return broadcast_scalar(a, Shape{3, 4}); }, false);
  unary("reshape", random_tensor(rng, m), [](auto a) { return reshape(a, Shape{2, 6}); }, false);
  unary("sum_rows", random_tensor(rng, m), [](auto a) { return sum_rows(a); }, false);
  unary("expand_rows", random_tensor(rng, {3}), [](auto a) { return expand_rows(a, 4); }, false);
  binary("matmul", random_tensor(rng, {3, 4}), random_tensor(rng, {4, 5}),
         [](auto a, auto b) { return matmul(a, b); }, true);
  binary("matmul_ta", random_tensor(rng, {4, 3}), random_tensor(rng, {4, 5}),
         [](auto a, auto b) { return matmul(a, b, true, false); }, true);
  binary("matmul_tb", random_tensor(rng, {3, 4}), random_tensor(rng, {5, 4}),
         [](auto a, auto b) { return matmul(a, b, false, true); }, true);
  binary("matmul_ta_tb", random_tensor(rng, {4, 3}), random_tensor(rng, {5, 4}),
         [](auto a, auto b) { return matmul(a, b, true, true); }, true);
  cases.push_back({"linear",
                   [](Tape<double>&, const std::vector<Var<double>>& v) { return weighted(linear(v[0], v[1], v[2])); },
                   {random_tensor(rng, {3, 4}), random_tensor(rng, {5, 4}), random_tensor(rng, {5})},
                   true});
  binary("add_channel_bias", random_tensor(rng, {2, 3, 4, 4}), random_tensor(rng, {3}),
         [](auto a, auto b) { return add_channel_bias(a, b); }, false);
  unary("reduce_channels", random_tensor(rng, {2, 3, 4, 4}), [](auto a) { return reduce_channels(a); }, false);
  unary("broadcast_channels", random_tensor(rng, {3}),
        [](auto a) { return broadcast_channels(a, Shape{2, 3, 4, 4}); }, false);
  cases.push_back({"conv2d_3x3_s1_p1",
                   [](Tape<double>&, const std::vector<Var<double>>& v) {
                     return weighted(conv2d(v[0], v[1], v[2], Conv2dParams{1, 1}));
                   },
                   {random_tensor(rng, {2, 2, 5, 5}), random_tensor(rng, {3, 2, 3, 3}), random_tensor(rng, {3})},
                   true});
  cases.push_back({"conv2d_3x3_s2_p1",
                   [](Tape<double>&, const std::vector<Var<double>>& v) {
                     return weighted(conv2d(v[0], v[1], v[2], Conv2dParams{2, 1}));
                   },
                   {random_tensor(rng, {2, 2, 6, 6}), random_tensor(rng, {3, 2, 3, 3}), random_tensor(rng, {3})},
                   true});
  binary("conv2d_1x1", random_tensor(rng, {2, 3, 4, 4}), random_tensor(rng, {2, 3, 1, 1}),
         [](auto a, auto b) { return conv2d(a, b, Conv2dParams{1, 0}); }, true);
  binary("conv2d_input_grad", random_tensor(rng, {2, 3, 3, 3}), random_tensor(rng, {3, 2, 3, 3}),
         [](auto g, auto w) { return conv2d_input_grad(g, w, Shape{2, 2, 6, 6}, Conv2dParams{2, 1}); }, true);
  binary("conv2d_weight_grad", random_tensor(rng, {2, 2, 6, 6}), random_tensor(rng, {2, 3, 3, 3}),
         [](auto x, auto g) { return conv2d_weight_grad(x, g, Shape{3, 2, 3, 3}, Conv2dParams{2, 1}); }, true);
  unary("upsample_bilinear2x", random_tensor(rng, {1, 2, 3, 3}), [](auto a) { return upsample_bilinear2x(a); },
        false);
  unary("upsample_bilinear2x_adjoint", random_tensor(rng, {1, 2, 6, 6}),
        [](auto a) { return upsample_bilinear2x_adjoint(a); }, false);
  unary("avg_pool2x", random_tensor(rng, {1, 2, 4, 4}), [](auto a) { return avg_pool2x(a); }, false);
  unary("avg_pool2x_adjoint", random_tensor(rng, {1, 2, 2, 2}), [](auto a) { return avg_pool2x_adjoint(a); },
        false);
  unary("global_avg_pool", random_tensor(rng, {2, 3, 4, 4}), [](auto a) { return global_avg_pool(a); }, false);
  unary("global_avg_pool_adjoint", random_tensor(rng, {2, 3}),
        [](auto a) { return global_avg_pool_adjoint(a, 4, 4); }, false);
  unary("log_softmax", random_tensor(rng, {3, 5}), [](auto a) { return log_softmax(a); }, true);
  unary("softmax", random_tensor(rng, {3, 5}), [](auto a) { return softmax(a); }, true);
  unary("softmax_tempered", random_tensor(rng, {3, 5}), [](auto a) { return softmax_tempered(a, 2.5); }, true);
  unary("log_softmax_tempered", random_tensor(rng, {3, 5}), [](auto a) { return log_softmax_tempered(a, 0.7); },
        true);

  {
    const Tensor<double> x = random_tensor(rng, {5, 4});
    const auto labels = labels_for(5, 3);
    cases.push_back({"two_layer_net_ce",
                     [x, labels](Tape<double>& tape, const std::vector<Var<double>>& v) {
                       const Var<double> h = relu(linear(tape.constant(x), v[0], v[1]));
                       return cross_entropy(linear(h, v[2], v[3]), std::span<const int>(labels));
                     },
                     {random_tensor(rng, {6, 4}), random_tensor(rng, {6}, 0.1), random_tensor(rng, {3, 6}),
                      random_tensor(rng, {3}, 0.1)},
                     true});
  }
  {
    const MultiExitModel<double> model(tiny_spec(), mix_seed(seed, 11));
    const LabelGenerator<double> generator(GeneratorSpec{tiny_spec(), 0}, mix_seed(seed, 12));
    const Tensor<double> x = random_tensor(rng, {2, 3, 8, 8});
    const auto labels = labels_for(2, 3);
    const std::size_t n_model = model.parameters().size();
    auto inputs = values_of(model.parameters());
    for (auto& t : values_of(generator.parameters())) inputs.push_back(t);
    cases.push_back({"multi_exit_model_with_generator",
                     [model, generator, x, labels, n_model](Tape<double>& tape, const std::vector<Var<double>>& v) {
                       const std::span<const Var<double>> all(v);
                       const auto out = model.forward(all.first(n_model), tape.constant(x));
                       const auto targets = generator.soft_targets(all.subspan(n_model), out.features, 1.0, false);
                       return self_boost_loss<double>(out.logits, labels, targets, LossConfig{0.5, 2.0});
                     },
                     std::move(inputs),
                     true});
  }
  return cases;
}

std::vector<Case> loss_cases(std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x1055));
  std::vector<Case> cases;
  const auto labels = labels_for(4, 5);
  cases.push_back({"cross_entropy",
                   [labels](Tape<double>&, const std::vector<Var<double>>& v) {
                     return cross_entropy(v[0], std::span<const int>(labels));
                   },
                   {random_tensor(rng, {4, 5})}});
  cases.push_back({"kl_divergence",
                   [](Tape<double>&, const std::vector<Var<double>>& v) {
                     return kl_divergence(softmax(v[0]), softmax(v[1]));
                   },
                   {random_tensor(rng, {4, 5}), random_tensor(rng, {4, 5})}});
  cases.push_back({"stage_loss",
                   [labels](Tape<double>&, const std::vector<Var<double>>& v) {
                     return stage_loss(v[0], std::span<const int>(labels), softmax_tempered(v[1], 2.0), 0.5, 2.0);
                   },
                   {random_tensor(rng, {4, 5}), random_tensor(rng, {4, 5})}});
  for (LossMode mode : {LossMode::baseline, LossMode::dsn, LossMode::metadistill}) {
    std::vector<Tensor<double>> inputs;
    for (int k = 0; k < 3; ++k) inputs.push_back(random_tensor(rng, {4, 5}));
    if (mode == LossMode::metadistill)
      for (int k = 0; k < 2; ++k) inputs.push_back(random_tensor(rng, {4, 5}));
    if (mode == LossMode::baseline) inputs.resize(1);
    cases.push_back({"self_boost_loss_" + std::string(to_string(mode)),
                     [labels, mode](Tape<double>&, const std::vector<Var<double>>& v) {
                       const std::size_t K = mode == LossMode::baseline ? 1 : 3;
                       std::vector<Var<double>> logits(v.begin(), v.begin() + static_cast<long>(K));
                       std::vector<Var<double>> targets;
                       for (std::size_t k = K; k < v.size(); ++k) targets.push_back(softmax_tempered(v[k], 1.5));
                       return self_boost_loss<double>(logits, labels, targets, LossConfig{0.3, 1.5, mode});
                     },
                     std::move(inputs)});
  }
  {
    // The final-exit teacher is detached, so only the early exits are
    // differentiated; the final logits stay fixed under the probes.
    const Tensor<double> final_logits = random_tensor(rng, {4, 5});
    cases.push_back({"self_boost_loss_self_distill",
                     [labels, final_logits](Tape<double>& tape, const std::vector<Var<double>>& v) {
                       const std::vector<Var<double>> logits{v[0], v[1], tape.constant(final_logits)};
                       return self_boost_loss<double>(logits, labels, {},
                                                      LossConfig{0.3, 1.5, LossMode::self_distill});
                     },
                     {random_tensor(rng, {4, 5}), random_tensor(rng, {4, 5})}});
  }
  {
    const Tensor<double> teacher = random_tensor(rng, {4, 5});
    cases.push_back({"classic_kd_loss",
                     [labels, teacher](Tape<double>& tape, const std::vector<Var<double>>& v) {
                       return classic_kd_loss(v[0], tape.constant(teacher), std::span<const int>(labels), 0.4, 3.0);
                     },
                     {random_tensor(rng, {4, 5})}});
  }
  return cases;
}

void fault_case(GradcheckReport& report) {
  std::mt19937_64 rng(0xfa17);
  report.items.push_back(check_gradient(
      "corrupted_square (injected fault)",
      [](Tape<double>&, const std::vector<Var<double>>& v) { return weighted(corrupted_square(v[0])); },
      {random_tensor(rng, {3, 4})}));
}

template <typename F>
GradcheckReport timed(F&& body) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report = body();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace

GradcheckItem check_gradient(const std::string& name, const Objective& f, const std::vector<Tensor<double>>& inputs,
                             double tolerance, double h) {
  GradcheckItem item{name, 0.0, tolerance, 0};
  const auto analytic = gradient_at(f, inputs);
  auto probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double x0 = inputs[i][j];
      probe[i].mutable_data()[j] = x0 + h;
      const double up = evaluate_at(f, probe);
      probe[i].mutable_data()[j] = x0 - h;
      const double down = evaluate_at(f, probe);
      probe[i].mutable_data()[j] = x0;
      item.worst = std::max(item.worst, relative_error(analytic[i][j], (up - down) / (2 * h)));
      ++item.coordinates;
    }
  }
  return item;
}

GradcheckItem check_second_order(const std::string& name, const Objective& f,
                                 const std::vector<Tensor<double>>& inputs, std::uint64_t seed, double tolerance,
                                 double h) {
  GradcheckItem item{name + " (2nd order)", 0.0, tolerance, 0};
  std::mt19937_64 rng(seed);
  std::vector<Tensor<double>> direction;
  for (const auto& x : inputs) direction.push_back(random_tensor(rng, x.shape()));

  std::vector<Tensor<double>> hvp;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : inputs) vars.push_back(tape.leaf(x, true));
    const auto g = backward(f(tape, vars), std::span<const Var<double>>(vars), true);
    Var<double> dot;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Var<double> term = sum(mul(g[i], tape.constant(direction[i])));
      dot = dot ? add(dot, term) : term;
    }
    hvp = gradients(dot, std::span<const Var<double>>(vars), Unreachable::zero);
  }
  auto shifted = [&](double t) {
    auto xs = inputs;
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i].mutable_array() += t * direction[i].array();
    return gradient_at(f, xs);
  };
  const auto up = shifted(h), down = shifted(-h);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      item.worst = std::max(item.worst, relative_error(hvp[i][j], (up[i][j] - down[i][j]) / (2 * h)));
      ++item.coordinates;
    }
  }
  return item;
}

GradcheckScope parse_gradcheck_scope(const std::string& name) {
  if (name == "ops") return GradcheckScope::ops;
  if (name == "losses") return GradcheckScope::losses;
  if (name == "hypergrad") return GradcheckScope::hypergrad;
  throw ParameterError("unknown gradcheck scope '" + name + "'");
}

Var<double> corrupted_square(const Var<double>& x) {
  Tensor<double> out(x.shape());
  out.mutable_array() = x.value().array() * x.value().array();
  return x.tape().record("corrupted_square", std::move(out), {x}, [x](const Var<double>& g, const Var<double>&) {
    return std::vector<Var<double>>{mul(g, scale(x, 3.0))};
  });
}

GradcheckReport gradcheck_ops(std::uint64_t seed) {
  return timed([&] {
    GradcheckReport report;
    std::uint64_t k = 0;
    for (const auto& c : op_cases(seed)) {
      report.items.push_back(check_gradient(c.name, c.f, c.inputs));
      if (c.second_order) {
        report.items.push_back(check_second_order(c.name, c.f, c.inputs, mix_seed(seed, 0x2d0 + k++)));
      }
    }
    return report;
  });
}

GradcheckReport gradcheck_losses(std::uint64_t seed) {
  return timed([&] {
    GradcheckReport report;
    for (const auto& c : loss_cases(seed)) report.items.push_back(check_gradient(c.name, c.f, c.inputs));
    return report;
  });
}

GradcheckReport gradcheck_hypergrad(std::uint64_t seed) {
  return timed([&] {
    GradcheckReport report;
    const ModelSpec spec = tiny_spec();
    const MultiExitModel<double> model(spec, mix_seed(seed, 21));
    const LabelGenerator<double> generator(GeneratorSpec{spec, 0}, mix_seed(seed, 22));
    const Dataset data = synth_dataset(mix_seed(seed, 23), 8, 3, 8);
    const std::vector<std::size_t> train_idx{0, 1, 2, 3}, test_idx{4, 5, 6, 7};
    const auto train_batch = make_batch<double>(data, train_idx);
    const auto test_batch = make_batch<double>(data, test_idx);
    const LossConfig loss{0.5, 1.0, LossMode::metadistill};

    for (MetaObjective objective : {MetaObjective::final_exit, MetaObjective::all_exits}) {
      const double zeta = 0.1;
      const auto analytic = meta_gradient(model, generator, train_batch, test_batch, loss, zeta, MetaOrder::second,
                                          objective);
      GradcheckItem item{"meta_gradient_second_order_" + std::string(to_string(objective)), 0.0, 1e-3, 0};
      LabelGenerator<double> probe = generator;
      const double h = 1e-5;
      for (std::size_t i = 0; i < probe.parameters().size(); ++i) {
        for (std::size_t j = 0; j < probe.parameters()[i].value.size(); ++j) {
          auto& value = probe.parameters()[i].value;
          const double x0 = value[j];
          value.mutable_data()[j] = x0 + h;
          const double up = meta_objective_value(model, probe, train_batch, test_batch, loss, zeta, objective);
          value.mutable_data()[j] = x0 - h;
          const double down = meta_objective_value(model, probe, train_batch, test_batch, loss, zeta, objective);
          value.mutable_data()[j] = x0;
          item.worst = std::max(item.worst, relative_error(analytic[i][j], (up - down) / (2 * h)));
          ++item.coordinates;
        }
      }
      report.items.push_back(item);
    }

    // First order drops O(zeta^2) terms; at small zeta both orders agree.
    const double zeta = 1e-3;
    const auto second = meta_gradient(model, generator, train_batch, test_batch, loss, zeta, MetaOrder::second);
    const auto first = meta_gradient(model, generator, train_batch, test_batch, loss, zeta, MetaOrder::first);
    double diff = 0.0, norm = 0.0;
    std::size_t coords = 0;
    for (std::size_t i = 0; i < second.size(); ++i) {
      diff += (first[i].array() - second[i].array()).square().sum();
      norm += second[i].array().square().sum();
      coords += second[i].size();
    }
    report.items.push_back({"first_vs_second_order_zeta_1e-3", std::sqrt(diff / std::max(norm, 1e-300)), 0.1, coords});
    return report;
  });
}

GradcheckReport run_gradcheck(GradcheckScope scope, std::uint64_t seed, bool inject_fault) {
  GradcheckReport report;
  switch (scope) {
    case GradcheckScope::ops: report = gradcheck_ops(seed); break;
    case GradcheckScope::losses: report = gradcheck_losses(seed); break;
    case GradcheckScope::hypergrad: report = gradcheck_hypergrad(seed); break;
  }
  if (inject_fault) fault_case(report);
  return report;
}

}  // namespace selfboost
