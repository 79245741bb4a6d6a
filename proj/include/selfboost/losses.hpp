#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfboost/ops.hpp"

namespace selfboost {

/// Which supervision the multi-exit objective applies.
enum class LossMode {
  baseline,      // final exit, hard labels only
  dsn,           // every exit, hard labels only
  self_distill,  // early exits also match the (detached) final-exit softmax
  metadistill,   // early exits also match generator soft targets
  classic_kd,    // single student exit distilled from a fixed teacher
};

LossMode parse_loss_mode(std::string_view name);
std::string_view to_string(LossMode mode);

struct LossConfig {
  double alpha = 0.5;
  double tau = 1.0;
  LossMode mode = LossMode::metadistill;

  /// Throws ParameterError unless alpha is in [0, 1] and tau > 0.
  void validate() const;
};

/// Tracks how often each loss term is evaluated.
struct LossCounters {
  std::size_t cross_entropy = 0;
  std::size_t kl = 0;
  std::size_t stage_loss = 0;
};

/// Batch mean of -log softmax(logits)[label].
template <typename S>
Var<S> cross_entropy(const Var<S>& logits, std::span<const int> labels);

/// Batch mean of sum_c p * ln(p / q); both arguments are row-stochastic
/// (tolerance 1e-6) and probabilities are clamped at 1e-12 before the logs.
template <typename S>
Var<S> kl_divergence(const Var<S>& p_teacher, const Var<S>& q_student);

/// alpha * ce + (1 - alpha) * tau^2 * kl.
double distillation_blend(double ce, double kl, double alpha, double tau);

/// alpha * CE(y, S_k) + (1 - alpha) * tau^2 * KL(T_k || softmax(S_k / tau)).
/// With alpha == 1 this is exactly cross_entropy(S_k, y).
template <typename S>
Var<S> stage_loss(const Var<S>& logits, std::span<const int> labels, const Var<S>& target, double alpha, double tau,
                  LossCounters* counters = nullptr);

/// CE on the final exit plus one stage loss per early exit, shaped by `config.mode`.
template <typename S>
Var<S> self_boost_loss(std::span<const Var<S>> logits, std::span<const int> labels,
                       std::span<const Var<S>> targets, const LossConfig& config, LossCounters* counters = nullptr);

/// alpha * CE + (1 - alpha) * tau^2 * KL(softmax(teacher / tau) || softmax(student / tau)).
/// The teacher logits are detached.
template <typename S>
Var<S> classic_kd_loss(const Var<S>& student, const Var<S>& teacher, std::span<const int> labels, double alpha,
                       double tau);

/// Per-row Shannon entropy (nats) of a row-stochastic matrix.
template <typename S>
std::vector<double> row_entropy(const Tensor<S>& probs);

}  // namespace selfboost
