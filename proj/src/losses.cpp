#include "selfboost/losses.hpp"

#include <cmath>

namespace selfboost {

namespace {

constexpr double kProbabilityFloor = 1e-12;
constexpr double kStochasticTolerance = 1e-6;

template <typename S>
void require_stochastic(const char* what, const Tensor<S>& p) {
  if (p.rank() != 2) throw DimensionError(std::string(what) + " must be (N, C), got " + to_string(p.shape()));
  const std::size_t n = p.dim(0), c = p.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double v = p[i * c + k];
      if (v < 0.0) throw InputError(std::string(what) + " has a negative probability in row " + std::to_string(i));
      total += v;
    }
    if (std::abs(total - 1.0) > kStochasticTolerance) {
      throw InputError(std::string(what) + " row " + std::to_string(i) + " sums to " + std::to_string(total));
    }
  }
}

template <typename S>
Var<S> blend(const Var<S>& ce, const Var<S>& kl, double alpha, double tau) {
  return add(scale(ce, static_cast<S>(alpha)), scale(kl, static_cast<S>((1.0 - alpha) * tau * tau)));
}

}  // namespace

LossMode parse_loss_mode(std::string_view name) {
  if (name == "baseline") return LossMode::baseline;
  if (name == "dsn") return LossMode::dsn;
  if (name == "self_distill") return LossMode::self_distill;
  if (name == "metadistill") return LossMode::metadistill;
  if (name == "classic_kd") return LossMode::classic_kd;
  throw ParameterError("unknown loss mode '" + std::string(name) + "'");
}

std::string_view to_string(LossMode mode) {
  switch (mode) {
    case LossMode::baseline: return "baseline";
    case LossMode::dsn: return "dsn";
    case LossMode::self_distill: return "self_distill";
    case LossMode::metadistill: return "metadistill";
    case LossMode::classic_kd: return "classic_kd";
  }
  return "unknown";
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("alpha must lie in [0, 1]");
  if (!(tau > 0.0)) throw ParameterError("tau must be positive");
}

double distillation_blend(double ce, double kl, double alpha, double tau) {
  return alpha * ce + (1.0 - alpha) * tau * tau * kl;
}

template <typename S>
Var<S> cross_entropy(const Var<S>& logits, std::span<const int> labels) {
  const auto& shape = logits.shape();
  if (shape.size() != 2) throw DimensionError("cross_entropy expects (N, C) logits, got " + to_string(shape));
  const std::size_t n = shape[0], c = shape[1];
  if (labels.size() != n) {
    throw InputError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  Tensor<S> weights(shape);
  auto w = weights.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw InputError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
    }
    w[i * c + static_cast<std::size_t>(labels[i])] = S(-1) / static_cast<S>(n);
  }
  return sum(mul(log_softmax(logits), logits.tape().constant(std::move(weights))));
}

template <typename S>
Var<S> kl_divergence(const Var<S>& p_teacher, const Var<S>& q_student) {
  if (p_teacher.shape() != q_student.shape()) {
    throw DimensionError("kl_divergence: " + to_string(p_teacher.shape()) + " vs " + to_string(q_student.shape()));
  }
  require_stochastic("teacher distribution", p_teacher.value());
  require_stochastic("student distribution", q_student.value());
  const S floor = static_cast<S>(kProbabilityFloor);
  const Var<S> log_ratio = sub(log(clamp_min(p_teacher, floor)), log(clamp_min(q_student, floor)));
  return scale(sum(mul(p_teacher, log_ratio)), S(1) / static_cast<S>(p_teacher.shape()[0]));
}

template <typename S>
Var<S> stage_loss(const Var<S>& logits, std::span<const int> labels, const Var<S>& target, double alpha, double tau,
                  LossCounters* counters) {
  LossConfig{alpha, tau, LossMode::metadistill}.validate();
  if (counters) {
    ++counters->stage_loss;
    ++counters->cross_entropy;
  }
  const Var<S> ce = cross_entropy(logits, labels);
  if (alpha == 1.0) return ce;
  if (counters) ++counters->kl;
  const Var<S> kl = kl_divergence(target, softmax_tempered(logits, static_cast<S>(tau)));
  return blend(ce, kl, alpha, tau);
}

template <typename S>
Var<S> self_boost_loss(std::span<const Var<S>> logits, std::span<const int> labels, std::span<const Var<S>> targets,
                       const LossConfig& config, LossCounters* counters) {
  config.validate();
  if (logits.empty()) throw InputError("self_boost_loss needs at least the final exit");
  const std::size_t K = logits.size();
  if (counters) ++counters->cross_entropy;
  Var<S> total = cross_entropy(logits.back(), labels);
  switch (config.mode) {
    case LossMode::baseline:
      return total;
    case LossMode::dsn:
      for (std::size_t k = 0; k + 1 < K; ++k) {
        if (counters) {
          ++counters->stage_loss;
          ++counters->cross_entropy;
        }
        total = add(total, cross_entropy(logits[k], labels));
      }
      return total;
    case LossMode::self_distill: {
      const Var<S> teacher = detach(softmax_tempered(logits.back(), static_cast<S>(config.tau)));
      for (std::size_t k = 0; k + 1 < K; ++k) {
        total = add(total, stage_loss(logits[k], labels, teacher, config.alpha, config.tau, counters));
      }
      return total;
    }
    case LossMode::metadistill:
      if (targets.size() + 1 != K) {
        throw InputError("self_boost_loss: " + std::to_string(targets.size()) + " soft targets for " +
                         std::to_string(K) + " exits");
      }
      for (std::size_t k = 0; k + 1 < K; ++k) {
        total = add(total, stage_loss(logits[k], labels, targets[k], config.alpha, config.tau, counters));
      }
      return total;
    case LossMode::classic_kd:
      break;
  }
  throw ParameterError("classic_kd mode is trained with classic_kd_loss, not self_boost_loss");
}

template <typename S>
Var<S> classic_kd_loss(const Var<S>& student, const Var<S>& teacher, std::span<const int> labels, double alpha,
                       double tau) {
  LossConfig{alpha, tau, LossMode::classic_kd}.validate();
  if (student.shape() != teacher.shape()) {
    throw DimensionError("classic_kd_loss: student " + to_string(student.shape()) + " vs teacher " +
                         to_string(teacher.shape()));
  }
  const Var<S> ce = cross_entropy(student, labels);
  if (alpha == 1.0) return ce;
  const S t = static_cast<S>(tau);
  const Var<S> kl = kl_divergence(softmax_tempered(detach(teacher), t), softmax_tempered(student, t));
  return blend(ce, kl, alpha, tau);
}

template <typename S>
std::vector<double> row_entropy(const Tensor<S>& probs) {
  if (probs.rank() != 2) throw DimensionError("row_entropy expects (N, C), got " + to_string(probs.shape()));
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const double p = probs[i * c + k];
      if (p > 0.0) out[i] -= p * std::log(p);
    }
  }
  return out;
}

#define SELFBOOST_INSTANTIATE(S)                                                                             \
  template Var<S> cross_entropy<S>(const Var<S>&, std::span<const int>);                                     \
  template Var<S> kl_divergence<S>(const Var<S>&, const Var<S>&);                                            \
  template Var<S> stage_loss<S>(const Var<S>&, std::span<const int>, const Var<S>&, double, double,          \
                                LossCounters*);                                                              \
  template Var<S> self_boost_loss<S>(std::span<const Var<S>>, std::span<const int>, std::span<const Var<S>>, \
                                     const LossConfig&, LossCounters*);                                      \
  template Var<S> classic_kd_loss<S>(const Var<S>&, const Var<S>&, std::span<const int>, double, double);    \
  template std::vector<double> row_entropy<S>(const Tensor<S>&);

SELFBOOST_INSTANTIATE(float)
SELFBOOST_INSTANTIATE(double)
#undef SELFBOOST_INSTANTIATE

}  // namespace selfboost
