#pragma once

// Registration objective:
//   L = L_similarity + alpha1 * L_smooth + alpha2 * L_model_fit
// and its analytic gradient with respect to the per-b-value displacement
// fields.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mcdwi/error.hpp"
#include "mcdwi/signal_model.hpp"
#include "mcdwi/volume.hpp"

namespace mcdwi {

struct LossWeights {
  double alpha1 = 0.01;
  double alpha2 = 1000.0;
  // Divide the smoothness sum by the voxel count so alpha1 does not depend on
  // the image size. false gives the plain sum over voxels.
  bool normalize_smoothness = true;

  void validate() const {
    if (!(alpha1 >= 0.0) || !(alpha2 >= 0.0) || !std::isfinite(alpha1) || !std::isfinite(alpha2)) {
      throw InvalidArgument("loss weights must be finite and non-negative");
    }
  }
};

struct LossBreakdown {
  double similarity = 0.0;
  double smooth = 0.0;
  double model_fit = 0.0;
  double total = 0.0;
};

inline double similarity_loss(const BValueSeries& fixed, const BValueSeries& warped) {
  if (fixed.size() != warped.size()) throw DimensionMismatch("similarity_loss: b-value count mismatch");
  require_same_dims(fixed.dims(), warped.dims(), "similarity_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    for (std::size_t v = 0; v < fixed[i].size(); ++v) acc += std::abs(fixed[i][v] - warped[i][v]);
  }
  return acc / static_cast<double>(fixed.size() * fixed.dims().count());
}

namespace detail {

// Walks every voxel of `field` along `axis`, handing the finite difference
// of each component and the stencil (lower index, upper index, coefficient)
// to `visit`.
template <typename Visit>
void for_each_axis_difference(const DisplacementField& field, int axis, Visit&& visit) {
  const Dims& d = field.dims();
  const int n = d[axis];
  if (n == 1) return;
  const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? static_cast<std::size_t>(d.nx) : d.count() / d.nz);
  std::size_t i = 0;
  for (int z = 0; z < d.nz; ++z) {
    for (int y = 0; y < d.ny; ++y) {
      for (int x = 0; x < d.nx; ++x, ++i) {
        const int c = axis == 0 ? x : (axis == 1 ? y : z);
        std::size_t lo, hi;
        double coef;
        if (c == 0) {
          lo = i;
          hi = i + stride;
          coef = 1.0;
        } else if (c == n - 1) {
          lo = i - stride;
          hi = i;
          coef = 1.0;
        } else {
          lo = i - stride;
          hi = i + stride;
          coef = 0.5;
        }
        visit(i, lo, hi, coef);
      }
    }
  }
}

}  // namespace detail

// Sum of squared Frobenius norms of the displacement Jacobian, optionally
// divided by the voxel count.
inline double smoothness_loss(const DisplacementField& field, bool normalize = true) {
  double acc = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    detail::for_each_axis_difference(field, axis, [&](std::size_t, std::size_t lo, std::size_t hi, double coef) {
      const Vec3 diff = coef * (field[hi] - field[lo]);
      acc += diff.x * diff.x + diff.y * diff.y + diff.z * diff.z;
    });
  }
  return normalize ? acc / static_cast<double>(field.size()) : acc;
}

inline double smoothness_loss(std::span<const DisplacementField> fields, bool normalize = true) {
  double acc = 0.0;
  for (const auto& f : fields) acc += smoothness_loss(f, normalize);
  return acc;
}

// Mean squared log-domain residual over the ROI and all b-values. The maps
// are constants here.
inline double model_fit_loss(const BValueSeries& warped, const ParameterMaps& maps, const RoiMask& roi,
                             double floor_eps = kDefaultLogFloor) {
  require_same_dims(warped.dims(), maps.adc.dims(), "model_fit_loss");
  require_same_dims(warped.dims(), maps.log_s0.dims(), "model_fit_loss");
  require_same_dims(warped.dims(), roi.dims(), "model_fit_loss");
  const std::size_t count = roi_count(roi);
  if (count == 0) throw EmptyRoi();
  double acc = 0.0;
  for (std::size_t i = 0; i < warped.size(); ++i) {
    const double b = warped.bvalue(i);
    for (std::size_t v = 0; v < roi.size(); ++v) {
      if (!roi[v]) continue;
      const double r = floored_log(warped[i][v], floor_eps) - (maps.log_s0[v] - b * maps.adc[v]);
      acc += r * r;
    }
  }
  return acc / static_cast<double>(warped.size() * count);
}

// Binds the fixed and moving series, the (constant) parameter maps and the ROI
// so the loss and its gradient can be evaluated for many candidate fields.
// `maps` may be null when alpha2 == 0; it is never dereferenced in that case.
class LossProblem {
 public:
  LossProblem(const BValueSeries& fixed, const BValueSeries& moving, const ParameterMaps* maps, const RoiMask& roi,
              LossWeights weights, double floor_eps = kDefaultLogFloor)
      : fixed_(fixed), moving_(moving), maps_(maps), roi_(roi), weights_(weights), floor_eps_(floor_eps) {
    weights_.validate();
    if (fixed.size() != moving.size()) throw DimensionMismatch("loss: fixed and moving b-value counts differ");
    require_same_dims(fixed.dims(), moving.dims(), "loss (fixed vs moving)");
    require_same_dims(fixed.dims(), roi.dims(), "loss (roi)");
    if (weights_.alpha2 > 0.0) {
      if (maps_ == nullptr) throw InvalidArgument("loss: parameter maps are required when alpha2 > 0");
      require_same_dims(fixed.dims(), maps_->adc.dims(), "loss (maps)");
      require_same_dims(fixed.dims(), maps_->log_s0.dims(), "loss (maps)");
      roi_voxels_ = roi_count(roi);
      if (roi_voxels_ == 0) throw EmptyRoi();
    }
  }

  // Inputs are held by reference.
  LossProblem(const BValueSeries&, const BValueSeries&, const ParameterMaps*, RoiMask&&, LossWeights,
              double = kDefaultLogFloor) = delete;

  std::size_t field_count() const { return fixed_.size(); }
  const Dims& dims() const { return fixed_.dims(); }
  const LossWeights& weights() const { return weights_; }

  // Loss at `fields`; when `grad` is non-null it receives d total / d u.
  LossBreakdown evaluate(std::span<const DisplacementField> fields, std::vector<DisplacementField>* grad) const {
    check_fields(fields);
    const Dims& d = dims();
    const std::size_t nvox = d.count();
    const std::size_t nb = fixed_.size();
    const bool with_fit = weights_.alpha2 > 0.0;
    const double sim_scale = 1.0 / static_cast<double>(nb * nvox);
    const double fit_scale = with_fit ? 1.0 / static_cast<double>(nb * roi_voxels_) : 0.0;

    if (grad) grad->assign(nb, DisplacementField(d));

    double sim_acc = 0.0, fit_acc = 0.0;
    for (std::size_t bi = 0; bi < nb; ++bi) {
      const ScalarVolume& mov = moving_[bi];
      const ScalarVolume& fix = fixed_[bi];
      const DisplacementField& u = fields[bi];
      const double b = fixed_.bvalue(bi);
      DisplacementField* g = grad ? &(*grad)[bi] : nullptr;
      std::size_t v = 0;
      for (int z = 0; z < d.nz; ++z) {
        for (int y = 0; y < d.ny; ++y) {
          for (int x = 0; x < d.nx; ++x, ++v) {
            const Vec3 pos{x + u[v].x, y + u[v].y, z + u[v].z};
            const bool in_roi = with_fit && roi_[v] != 0;
            if (!g) {
              const double w = trilinear_sample(mov, pos);
              sim_acc += std::abs(w - fix[v]);
              if (in_roi) {
                const double r = floored_log(w, floor_eps_) - (maps_->log_s0[v] - b * maps_->adc[v]);
                fit_acc += r * r;
              }
              continue;
            }
            const SampleWithGradient s = trilinear_sample_with_gradient(mov, pos);
            const double diff = s.value - fix[v];
            sim_acc += std::abs(diff);
            double coef = diff > 0.0 ? sim_scale : (diff < 0.0 ? -sim_scale : 0.0);
            if (in_roi) {
              const double r = floored_log(s.value, floor_eps_) - (maps_->log_s0[v] - b * maps_->adc[v]);
              fit_acc += r * r;
              if (s.value > floor_eps_) coef += weights_.alpha2 * fit_scale * 2.0 * r / s.value;
            }
            (*g)[v] = coef * s.gradient;
          }
        }
      }
    }

    double smooth_acc = 0.0;
    const double smooth_norm = weights_.normalize_smoothness ? 1.0 / static_cast<double>(nvox) : 1.0;
    const double smooth_grad_scale = 2.0 * weights_.alpha1 * smooth_norm;
    for (std::size_t bi = 0; bi < nb; ++bi) {
      const DisplacementField& u = fields[bi];
      DisplacementField* g = grad ? &(*grad)[bi] : nullptr;
      for (int axis = 0; axis < 3; ++axis) {
        detail::for_each_axis_difference(u, axis, [&](std::size_t, std::size_t lo, std::size_t hi, double coef) {
          const Vec3 diff = coef * (u[hi] - u[lo]);
          smooth_acc += diff.x * diff.x + diff.y * diff.y + diff.z * diff.z;
          if (g && smooth_grad_scale != 0.0) {
            const Vec3 push = (smooth_grad_scale * coef) * diff;
            (*g)[hi] += push;
            (*g)[lo] += -1.0 * push;
          }
        });
      }
    }

    LossBreakdown out;
    out.similarity = sim_acc * sim_scale;
    out.smooth = smooth_acc * smooth_norm;
    out.model_fit = fit_acc * fit_scale;
    out.total = out.similarity + weights_.alpha1 * out.smooth + weights_.alpha2 * out.model_fit;
    return out;
  }

  // Moving series warped by `fields`.
  BValueSeries warped(std::span<const DisplacementField> fields) const {
    check_fields(fields);
    std::vector<ScalarVolume> vols;
    vols.reserve(moving_.size());
    for (std::size_t i = 0; i < moving_.size(); ++i) vols.push_back(warp(moving_[i], fields[i]));
    return BValueSeries(std::vector<double>(moving_.bvalues().begin(), moving_.bvalues().end()), std::move(vols));
  }

 private:
  void check_fields(std::span<const DisplacementField> fields) const {
    if (fields.size() != fixed_.size()) {
      throw DimensionMismatch("loss: expected " + std::to_string(fixed_.size()) + " fields, got " +
                              std::to_string(fields.size()));
    }
    for (const auto& f : fields) require_same_dims(f.dims(), dims(), "loss (field)");
  }

  const BValueSeries& fixed_;
  const BValueSeries& moving_;
  const ParameterMaps* maps_;
  const RoiMask& roi_;
  LossWeights weights_;
  double floor_eps_;
  std::size_t roi_voxels_ = 0;
};

inline LossBreakdown total_loss(const BValueSeries& fixed, const BValueSeries& moving,
                                std::span<const DisplacementField> fields, const ParameterMaps& maps,
                                const RoiMask& roi, const LossWeights& weights, double floor_eps = kDefaultLogFloor) {
  return LossProblem(fixed, moving, &maps, roi, weights, floor_eps).evaluate(fields, nullptr);
}

inline std::vector<DisplacementField> loss_gradient(const BValueSeries& fixed, const BValueSeries& moving,
                                                    std::span<const DisplacementField> fields,
                                                    const ParameterMaps& maps, const RoiMask& roi,
                                                    const LossWeights& weights, double floor_eps = kDefaultLogFloor) {
  std::vector<DisplacementField> grad;
  LossProblem(fixed, moving, &maps, roi, weights, floor_eps).evaluate(fields, &grad);
  return grad;
}

}  // namespace mcdwi
