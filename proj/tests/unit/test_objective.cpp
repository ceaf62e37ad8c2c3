#include <gtest/gtest.h>

#include "gradient_check.hpp"
#include "helpers.hpp"
#include "mcdwi/objective.hpp"

using namespace mcdwi;
using namespace mcdwi::testing;

namespace {

BValueSeries constant_series(Dims d, std::vector<double> levels) {
  std::vector<double> b(kBValues.begin(), kBValues.begin() + static_cast<long>(levels.size()));
  std::vector<ScalarVolume> vols;
  for (double l : levels) vols.emplace_back(d, l);
  return BValueSeries(b, vols);
}

DisplacementField shear(Dims d, double k) {
  DisplacementField f(d);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = {k * voxel_point(d, i).x, 0, 0};
  return f;
}

}  // namespace

TEST(SimilarityLoss, Examples) {
  const Dims d{4, 3, 2};
  const BValueSeries a = constant_series(d, {1.0, 1.0}), b = constant_series(d, {0.5, 0.5});
  EXPECT_EQ(similarity_loss(a, a), 0.0);
  EXPECT_DOUBLE_EQ(similarity_loss(a, b), 0.5);
  const BValueSeries a3 = constant_series(d, {3.0, 3.0}), b3 = constant_series(d, {1.5, 1.5});
  EXPECT_DOUBLE_EQ(similarity_loss(a3, b3), 3.0 * similarity_loss(a, b));
  EXPECT_THROW(similarity_loss(a, constant_series(Dims{4, 3, 3}, {1.0, 1.0})), DimensionMismatch);
  EXPECT_THROW(similarity_loss(a, constant_series(d, {1.0, 1.0, 1.0})), DimensionMismatch);
}

TEST(SmoothnessLoss, ConstantFieldIsFree) {
  EXPECT_EQ(smoothness_loss(DisplacementField(Dims{5, 4, 3}, Vec3{2, -1, 0.5})), 0.0);
}

TEST(SmoothnessLoss, UnitShear) {
  const Dims d{6, 5, 4};
  EXPECT_DOUBLE_EQ(smoothness_loss(shear(d, 1.0), false), static_cast<double>(d.count()));
  EXPECT_DOUBLE_EQ(smoothness_loss(shear(d, 1.0), true), 1.0);
}

TEST(SmoothnessLoss, QuadraticInField) {
  const DisplacementField f = random_field({6, 6, 4}, 3, 1.0);
  DisplacementField g = f;
  for (auto& v : g.data()) v *= 2.0;
  EXPECT_NEAR(smoothness_loss(g), 4.0 * smoothness_loss(f), 1e-12 * smoothness_loss(g));
}

TEST(SmoothnessLoss, SumsOverFields) {
  const std::vector<DisplacementField> fs{shear({5, 5, 5}, 1.0), shear({5, 5, 5}, 2.0)};
  EXPECT_DOUBLE_EQ(smoothness_loss(fs), 5.0);
}

TEST(SmoothnessLoss, PositiveForAnyNonConstantAffineField) {
  DisplacementField f(Dims{4, 4, 4});
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = {0, 0, 0.01 * voxel_point(f.dims(), i).y};
  EXPECT_GT(smoothness_loss(f), 0.0);
}

TEST(ModelFitLoss, ZeroOnReconstruction) {
  const Dims d{5, 4, 3};
  const ParameterMaps m = smooth_maps(d, 1);
  const RoiMask roi(d, 1);
  EXPECT_NEAR(model_fit_loss(reconstruct(m, kBValues), m, roi), 0.0, 1e-28);
}

TEST(ModelFitLoss, SingleVoxelHandExample) {
  const Dims d{1, 1, 1};
  const ParameterMaps m{ScalarVolume(d, 0.0), ScalarVolume(d, 1e-3)};
  const BValueSeries s({0, 100}, {ScalarVolume(d, std::exp(0.1)), ScalarVolume(d, std::exp(-0.1 - 0.1))});
  EXPECT_NEAR(model_fit_loss(s, m, RoiMask(d, 1)), 0.01, 1e-15);
}

TEST(ModelFitLoss, IgnoresVoxelsOutsideRoi) {
  const Dims d{4, 1, 1};
  const ParameterMaps m = constant_maps(d, 1.0, 2e-3);
  BValueSeries s = reconstruct(m, kBValues);
  RoiMask roi(d);
  roi[1] = roi[2] = 1;
  const double before = model_fit_loss(s, m, roi);
  std::vector<ScalarVolume> vols = s.volumes();
  for (auto& v : vols) v[0] = v[3] = 123.0;
  EXPECT_EQ(model_fit_loss(BValueSeries(kBValues, vols), m, roi), before);
}

TEST(ModelFitLoss, EmptyRoiThrows) {
  const Dims d{2, 2, 2};
  const ParameterMaps m = constant_maps(d, 1.0, 2e-3);
  EXPECT_THROW(model_fit_loss(reconstruct(m, kBValues), m, RoiMask(d)), EmptyRoi);
}

TEST(ModelFitLoss, NonNegative) {
  const GradientCase c = make_gradient_case(4);
  EXPECT_GT(model_fit_loss(c.moving, c.maps, c.roi), 0.0);
}

TEST(TotalLoss, ZeroAtModelConsistentIdentity) {
  const Dims d{5, 5, 4};
  const ParameterMaps m = smooth_maps(d, 2);
  const BValueSeries s = reconstruct(m, kBValues);
  const std::vector<DisplacementField> zero(s.size(), DisplacementField(d));
  const LossBreakdown l = total_loss(s, s, zero, m, RoiMask(d, 1), LossWeights{});
  EXPECT_EQ(l.similarity, 0.0);
  EXPECT_EQ(l.smooth, 0.0);
  EXPECT_NEAR(l.model_fit, 0.0, 1e-28);
  EXPECT_NEAR(l.total, 0.0, 1e-24);
  for (const auto& g : loss_gradient(s, s, zero, m, RoiMask(d, 1), LossWeights{}))
    for (const auto& v : g.data()) EXPECT_NEAR(v.norm(), 0.0, 1e-15);
}

TEST(TotalLoss, ZeroWeightsReduceToSimilarity) {
  const GradientCase c = make_gradient_case(5);
  const LossBreakdown l = total_loss(c.fixed, c.moving, c.fields, c.maps, c.roi, {0.0, 0.0, true});
  EXPECT_EQ(l.total, l.similarity);
  std::vector<ScalarVolume> w;
  for (std::size_t i = 0; i < c.moving.size(); ++i) w.push_back(warp(c.moving[i], c.fields[i]));
  EXPECT_NEAR(l.similarity, similarity_loss(c.fixed, BValueSeries(kBValues, w)), 1e-15);
}

TEST(TotalLoss, ComponentsCombineWithWeights) {
  const GradientCase c = make_gradient_case(6);
  const LossWeights w{0.01, 1000.0, true};
  const LossBreakdown l = total_loss(c.fixed, c.moving, c.fields, c.maps, c.roi, w);
  EXPECT_EQ(l.total, l.similarity + w.alpha1 * l.smooth + w.alpha2 * l.model_fit);
  EXPECT_GE(l.similarity, 0.0);
  EXPECT_GE(l.smooth, 0.0);
  EXPECT_GE(l.model_fit, 0.0);
  EXPECT_NEAR(l.smooth, smoothness_loss(std::span<const DisplacementField>(c.fields)), 1e-12 * l.smooth);
  const LossProblem p(c.fixed, c.moving, &c.maps, c.roi, w);
  EXPECT_NEAR(l.model_fit, model_fit_loss(p.warped(c.fields), c.maps, c.roi), 1e-12 * l.model_fit);
  // 0.2 + 0.01 * 3.0 + 1000 * 1e-4
  EXPECT_NEAR(0.2 + w.alpha1 * 3.0 + w.alpha2 * 1e-4, 0.33, 1e-15);
}

TEST(LossProblem, RequiresMapsOnlyWithModelFit) {
  const GradientCase c = make_gradient_case(7);
  EXPECT_THROW(LossProblem(c.fixed, c.moving, nullptr, c.roi, {0.01, 1000.0, true}), InvalidArgument);
  const LossProblem p(c.fixed, c.moving, nullptr, c.roi, {0.01, 0.0, true});
  std::vector<DisplacementField> g;
  const LossBreakdown l = p.evaluate(c.fields, &g);
  EXPECT_EQ(l.model_fit, 0.0);
  EXPECT_EQ(g.size(), c.fields.size());
}

TEST(LossProblem, RejectsBadInputs) {
  const GradientCase c = make_gradient_case(8);
  EXPECT_THROW(LossProblem(c.fixed, c.moving, &c.maps, c.roi, {-1.0, 1.0, true}), InvalidArgument);
  const RoiMask roi_mask = RoiMask(c.roi.dims());
  EXPECT_THROW(LossProblem(c.fixed, c.moving, &c.maps, roi_mask, {0.01, 1.0, true}), EmptyRoi);
  const LossProblem p(c.fixed, c.moving, &c.maps, c.roi, {});
  std::vector<DisplacementField> few(c.fields.begin(), c.fields.begin() + 2);
  EXPECT_THROW(p.evaluate(few, nullptr), DimensionMismatch);
}

TEST(LossGradient, MatchesFiniteDifferencesPerTerm) {
  const GradientCase c = make_gradient_case(11);
  const auto problem_loss = [&](LossWeights w) {
    return [&c, w](const std::vector<DisplacementField>& f) {
      return LossProblem(c.fixed, c.moving, &c.maps, c.roi, w).evaluate(f, nullptr).total;
    };
  };
  // Similarity alone.
  {
    const LossWeights w{0.0, 0.0, true};
    const auto g = loss_gradient(c.fixed, c.moving, c.fields, c.maps, c.roi, w);
    const GradientCheck r = check_gradient(problem_loss(w), g, c.fields, 300, 1);
    EXPECT_EQ(r.checkpoints, 300);
    EXPECT_LT(r.max_rel_error, 1e-4);
  }
  // Smoothness alone, unnormalized so the values are O(1).
  {
    const auto smooth = [](const std::vector<DisplacementField>& f) {
      return smoothness_loss(std::span<const DisplacementField>(f), false);
    };
    const LossWeights w1{1.0, 0.0, false}, w0{0.0, 0.0, false};
    auto g = loss_gradient(c.fixed, c.moving, c.fields, c.maps, c.roi, w1);
    const auto g0 = loss_gradient(c.fixed, c.moving, c.fields, c.maps, c.roi, w0);
    for (std::size_t b = 0; b < g.size(); ++b)
      for (std::size_t i = 0; i < g[b].size(); ++i) g[b][i] = g[b][i] - g0[b][i];
    const GradientCheck r = check_gradient(smooth, g, c.fields, 300, 2);
    EXPECT_EQ(r.checkpoints, 300);
    EXPECT_LT(r.max_rel_error, 1e-4);
  }
  // Model fit alone.
  {
    const auto fit = [&c](const std::vector<DisplacementField>& f) {
      const LossProblem p(c.fixed, c.moving, &c.maps, c.roi, {0.0, 1.0, true});
      return model_fit_loss(p.warped(f), c.maps, c.roi);
    };
    auto g = loss_gradient(c.fixed, c.moving, c.fields, c.maps, c.roi, {0.0, 1.0, true});
    const auto g0 = loss_gradient(c.fixed, c.moving, c.fields, c.maps, c.roi, {0.0, 0.0, true});
    for (std::size_t b = 0; b < g.size(); ++b)
      for (std::size_t i = 0; i < g[b].size(); ++i) g[b][i] = g[b][i] - g0[b][i];
    const GradientCheck r = check_gradient(fit, g, c.fields, 300, 3);
    EXPECT_EQ(r.checkpoints, 300);
    EXPECT_LT(r.max_rel_error, 1e-4);
  }
}

TEST(LossGradient, SmoothnessGradientIsWideStencilLaplacianInside) {
  const Dims d{10, 9, 8};
  DisplacementField u(d);
  for (std::size_t i = 0; i < u.size(); ++i) {
    const Vec3 p = voxel_point(d, i);
    u[i] = {p.x * p.x, 0.5 * p.y * p.z, p.x - 2.0 * p.z};
  }
  const BValueSeries flat = constant_series(d, {1.0, 0.5});
  const std::vector<DisplacementField> fields{u, DisplacementField(d)};
  const RoiMask roi_mask = RoiMask(d, 1);
  const LossProblem p(flat, flat, nullptr, roi_mask, {1.0, 0.0, false});
  std::vector<DisplacementField> g;
  p.evaluate(fields, &g);
  // d/du sum |D u|^2 = 2 D^T D u, and D^T D is minus the spacing-2 Laplacian / 4.
  for (int z = 2; z < d.nz - 2; ++z)
    for (int y = 2; y < d.ny - 2; ++y)
      for (int x = 2; x < d.nx - 2; ++x) {
        const std::size_t i = d.index(x, y, z);
        Vec3 lap{};
        const std::size_t strides[3] = {1, static_cast<std::size_t>(d.nx), static_cast<std::size_t>(d.nx * d.ny)};
        for (std::size_t s : strides) lap += 0.25 * (u[i + 2 * s] - 2.0 * u[i] + u[i - 2 * s]);
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(g[0][i][c], -2.0 * lap[c], 1e-9);
      }
  // Affine fields: zero gradient away from the border.
  const std::vector<DisplacementField> sheared{shear(d, 1.0), DisplacementField(d)};
  p.evaluate(sheared, &g);
  for (int z = 2; z < d.nz - 2; ++z)
    for (int y = 2; y < d.ny - 2; ++y)
      for (int x = 2; x < d.nx - 2; ++x) EXPECT_NEAR(g[0].at(x, y, z).norm(), 0.0, 1e-12);
}

TEST(LossGradient, DeterministicAcrossCalls) {
  const GradientCase c = make_gradient_case(12);
  const auto a = loss_gradient(c.fixed, c.moving, c.fields, c.maps, c.roi, {});
  const auto b = loss_gradient(c.fixed, c.moving, c.fields, c.maps, c.roi, {});
  EXPECT_EQ(a, b);
}
