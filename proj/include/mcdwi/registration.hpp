#pragma once

// Inner registration loop: Adam on the dense displacement fields of every
// b-value jointly, with a divide-on-increase learning-rate rule.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcdwi/error.hpp"
#include "mcdwi/objective.hpp"
#include "mcdwi/volume.hpp"

namespace mcdwi {

struct InnerOptConfig {
  double learning_rate = 0.1;  // voxels per step
  double lr_drop_factor = 10.0;
  int max_inner_steps = 100;
  // Stop early once the learning rate has fallen below this value.
  double min_learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-12;
  std::uint64_t seed = 0;
  // Index of a field kept at its initial value, or -1 to optimize all.
  int frozen_field = -1;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
    if (!(lr_drop_factor > 1.0)) throw InvalidArgument("lr_drop_factor must be > 1");
    if (max_inner_steps < 0) throw InvalidArgument("max_inner_steps must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
      throw InvalidArgument("Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw InvalidArgument("adam_eps must be > 0");
    if (frozen_field < -1) throw InvalidArgument("frozen_field must be >= -1");
  }
};

class Diverged : public Error {
 public:
  explicit Diverged(std::vector<LossBreakdown> trace) : Error("diverged"), trace_(std::move(trace)) {}
  const std::vector<LossBreakdown>& trace() const { return trace_; }

 private:
  std::vector<LossBreakdown> trace_;
};

// Anything that can score a set of per-b-value fields and optionally return
// the gradient. LossProblem is the production model.
template <typename P>
concept FieldObjective = requires(const P& p, std::span<const DisplacementField> f, std::vector<DisplacementField>* g) {
  { p.evaluate(f, g) } -> std::same_as<LossBreakdown>;
};

struct InnerResult {
  std::vector<DisplacementField> fields;  // lowest-loss visited state
  std::vector<LossBreakdown> trace;       // trace[0] is the initial state
  std::size_t best_step = 0;
  int lr_drops = 0;
  double final_learning_rate = 0.0;
};

namespace detail {

inline bool finite(const LossBreakdown& l) {
  return std::isfinite(l.total) && std::isfinite(l.similarity) && std::isfinite(l.smooth) &&
         std::isfinite(l.model_fit);
}

inline bool finite(const std::vector<DisplacementField>& fields) {
  for (const auto& f : fields) {
    for (const auto& v : f.data()) {
      if (!v.finite()) return false;
    }
  }
  return true;
}

}  // namespace detail

template <FieldObjective Problem>
InnerResult optimize_fields(const Problem& problem, std::vector<DisplacementField> init_fields,
                            const InnerOptConfig& cfg) {
  cfg.validate();
  InnerResult out;
  std::vector<DisplacementField> x = std::move(init_fields);
  std::vector<DisplacementField> grad;

  LossBreakdown current = problem.evaluate(x, &grad);
  out.trace.push_back(current);
  if (!detail::finite(current) || !detail::finite(grad)) throw Diverged(out.trace);

  std::vector<DisplacementField> best = x;
  double best_total = current.total;

  std::vector<DisplacementField> m, v;
  m.reserve(x.size());
  v.reserve(x.size());
  for (const auto& f : x) {
    m.emplace_back(f.dims());
    v.emplace_back(f.dims());
  }

  double lr = cfg.learning_rate;
  double b1_pow = 1.0, b2_pow = 1.0;
  for (int step = 1; step <= cfg.max_inner_steps; ++step) {
    if (lr < cfg.min_learning_rate) break;
    b1_pow *= cfg.adam_beta1;
    b2_pow *= cfg.adam_beta2;
    const double c1 = 1.0 / (1.0 - b1_pow);
    const double c2 = 1.0 / (1.0 - b2_pow);
    for (std::size_t f = 0; f < x.size(); ++f) {
      if (static_cast<int>(f) == cfg.frozen_field) continue;
      for (std::size_t i = 0; i < x[f].size(); ++i) {
        for (int c = 0; c < 3; ++c) {
          const double g = grad[f][i][c];
          double& mi = m[f][i][c];
          double& vi = v[f][i][c];
          mi = cfg.adam_beta1 * mi + (1.0 - cfg.adam_beta1) * g;
          vi = cfg.adam_beta2 * vi + (1.0 - cfg.adam_beta2) * g * g;
          x[f][i][c] -= lr * (mi * c1) / (std::sqrt(vi * c2) + cfg.adam_eps);
        }
      }
    }

    const LossBreakdown next = problem.evaluate(x, &grad);
    out.trace.push_back(next);
    if (!detail::finite(next) || !detail::finite(grad)) throw Diverged(out.trace);
    if (next.total > current.total) {
      lr /= cfg.lr_drop_factor;
      ++out.lr_drops;
    }
    if (next.total < best_total) {
      best_total = next.total;
      best = x;
      out.best_step = static_cast<std::size_t>(step);
    }
    current = next;
  }

  out.fields = std::move(best);
  out.final_learning_rate = lr;
  return out;
}

}  // namespace mcdwi
