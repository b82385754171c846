#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"

#include "augmorph/dataio/toygen.hpp"
#include "augmorph/xformmodels/models.hpp"

using namespace augmorph;
using namespace augmorph::xformmodels;
using diffcore::Shape;

namespace {

struct SmallCorpus {
  Volume atlas;
  LabelMap atlas_labels;
  std::vector<Volume> unlabeled;
};

SmallCorpus small_corpus(std::size_t n) {
  dataio::ToyGenParams p;
  p.image_size = {32, 32};
  p.anatomy = {8, 2.0, 1};
  p.bias_spacing = 16;
  p.seed = 5;
  SmallCorpus c;
  const auto atlas = dataio::toy_subject(p, dataio::toy_subject_seed(p, 0), true);
  c.atlas = atlas.image;
  c.atlas_labels = atlas.labels;
  for (std::size_t i = 1; i <= n; ++i) c.unlabeled.push_back(dataio::toy_subject(p, dataio::toy_subject_seed(p, i), false).image);
  return c;
}

double head_tail_drop(const std::vector<double>& losses, std::size_t tail) {
  const double t = std::accumulate(losses.end() - static_cast<std::ptrdiff_t>(tail), losses.end(), 0.0) /
                   static_cast<double>(tail);
  return losses.front() - t;
}

// Independent smoothness oracle: mean over voxels and axes of
// gate(p) * (psi(p + e_d) - psi(p))^2, pairs leaving the grid contribute 0.
double smooth_oracle_2d(const Volume& psi, const Volume& gate) {
  const auto h = psi.dim(0), w = psi.dim(1);
  double s = 0;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const double g = gate.data[static_cast<std::size_t>(y * w + x)];
      const double v = psi.data[static_cast<std::size_t>(y * w + x)];
      if (y + 1 < h) s += g * std::pow(psi.data[static_cast<std::size_t>((y + 1) * w + x)] - v, 2);
      if (x + 1 < w) s += g * std::pow(psi.data[static_cast<std::size_t>(y * w + x + 1)] - v, 2);
    }
  }
  return s / static_cast<double>(h * w * 2);
}

// Two regions split at column 8 of a 12 x 16 grid.
LabelMap two_regions() {
  LabelMap l({12, 16});
  for (std::int64_t y = 0; y < 12; ++y)
    for (std::int64_t x = 0; x < 16; ++x) l.data[static_cast<std::size_t>(y * 16 + x)] = x < 8 ? 1 : 2;
  return l;
}

Volume step_at_column(std::int64_t column) {
  Volume psi({12, 16});
  for (std::int64_t y = 0; y < 12; ++y)
    for (std::int64_t x = 0; x < 16; ++x) psi.data[static_cast<std::size_t>(y * 16 + x)] = x >= column ? 1.0f : 0.0f;
  return psi;
}

}  // namespace

TEST_CASE("untrained models are exact identities") {
  const auto spatial = make_spatial_model(spatial_arch(2), 1.0, 9, 3);
  const auto appearance = make_appearance_model(appearance_arch(2), 0.02, 4);
  const auto c = small_corpus(1);
  const auto u = predict_displacement(spatial.forward_net, c.atlas, c.unlabeled[0]);
  CHECK(u.components.shape == Shape{2, 32, 32});
  CHECK(u.max_abs() == 0.0f);
  const auto psi = predict_appearance(appearance, c.atlas, c.unlabeled[0]);
  CHECK(psi.delta.shape == c.atlas.shape);
  CHECK(std::all_of(psi.delta.data.begin(), psi.delta.data.end(), [](float v) { return v == 0.0f; }));

  CHECK_THROWS_AS(predict_displacement(spatial.forward_net, c.atlas, Volume({32, 16})), diffcore::ShapeError);
  CHECK_THROWS_AS(predict_appearance(appearance, c.atlas, Volume({16, 32})), diffcore::ShapeError);
}

TEST_CASE("appearance loss: reconstruction, constant delta, boundary gating") {
  const LabelMap labels = two_regions();
  const auto mask = warpfield::boundary_mask(labels);
  Volume atlas({12, 16});
  for (std::size_t i = 0; i < atlas.size(); ++i) atlas.data[i] = labels.data[i] == 1 ? 0.3f : 0.9f;
  const auto zero_phi = warpfield::DisplacementField::zeros({12, 16});

  CHECK(appearance_total_loss(atlas, atlas, zero_phi, {Volume({12, 16})}, mask, 0.02) == 0.0);

  // A constant delta explains a constant intensity offset with no penalty.
  Volume shifted = atlas;
  for (auto& v : shifted.data) v += 0.25f;
  CHECK(appearance_total_loss(atlas, shifted, zero_phi, {Volume({12, 16}, 0.25f)}, mask, 5.0) ==
        doctest::Approx(0.0).epsilon(1e-12));

  // With subject == atlas + psi the similarity term vanishes, leaving
  // lambda * L_smooth. A step between columns 3 and 4 lies inside region 1;
  // the step between columns 7 and 8 sits on the boundary voxels.
  const Volume gate = smoothness_gate(mask);
  const double lambda = 2.0;
  auto smooth_term = [&](const Volume& psi) {
    Volume subject = atlas;
    for (std::size_t i = 0; i < subject.size(); ++i) subject.data[i] += psi.data[i];
    return appearance_total_loss(atlas, subject, zero_phi, {psi}, mask, lambda) / lambda;
  };
  const Volume interior = step_at_column(4), boundary = step_at_column(8);
  const double s_interior = smooth_term(interior), s_boundary = smooth_term(boundary);
  CHECK(s_interior == doctest::Approx(smooth_oracle_2d(interior, gate)).epsilon(1e-6));
  CHECK(s_boundary == doctest::Approx(smooth_oracle_2d(boundary, gate)).epsilon(1e-6));
  // 12 rows, one jump each, over 12 * 16 * 2 terms; the boundary jump is gated out.
  CHECK(s_interior == doctest::Approx(12.0 / 384.0).epsilon(1e-6));
  CHECK(s_boundary == 0.0);
  CHECK(s_interior > s_boundary);

  CHECK_THROWS_AS(appearance_total_loss(atlas, atlas, zero_phi, {Volume({12, 16})}, mask, -1.0),
                  std::invalid_argument);
}

TEST_CASE("spatial training: no-op, decrease, NCC bound, determinism") {
  const auto c = small_corpus(4);
  const auto init = make_spatial_model(spatial_arch(2), 1.0, 9, 11);

  TrainOptions none;
  none.steps = 0;
  const auto same = train_spatial(init, c.atlas, c.unlabeled, none);
  CHECK(same.model.forward_net.layers[3].kernel.data == init.forward_net.layers[3].kernel.data);
  CHECK(same.forward_losses.empty());

  TrainOptions opt;
  opt.steps = 80;
  opt.seed = 9;
  const auto a = train_spatial(init, c.atlas, c.unlabeled, opt);
  CHECK(head_tail_drop(a.forward_losses, 10) > 0);
  CHECK(head_tail_drop(a.inverse_losses, 10) > 0);

  const auto b = train_spatial(init, c.atlas, c.unlabeled, opt);
  CHECK(a.forward_losses == b.forward_losses);
  for (std::size_t i = 0; i < a.model.forward_net.layers.size(); ++i) {
    CHECK(a.model.forward_net.layers[i].kernel.data == b.model.forward_net.layers[i].kernel.data);
    CHECK(a.model.inverse_net.layers[i].bias.data == b.model.inverse_net.layers[i].bias.data);
  }

  auto free_model = init;
  free_model.smoothness_weight = 0.0;
  opt.steps = 30;
  const auto unreg = train_spatial(free_model, c.atlas, c.unlabeled, opt);
  for (double l : unreg.forward_losses) CHECK(l >= -1.0);
}

TEST_CASE("appearance training: no-op, decrease, determinism") {
  const auto c = small_corpus(4);
  TrainOptions sopt;
  sopt.steps = 60;
  const auto spatial = train_spatial(make_spatial_model(spatial_arch(2), 1.0, 9, 2), c.atlas, c.unlabeled, sopt).model;
  const auto init = make_appearance_model(appearance_arch(2), 0.02, 6);

  TrainOptions none;
  none.steps = 0;
  CHECK(train_appearance(init, c.atlas, c.atlas_labels, c.unlabeled, spatial, none).losses.empty());

  TrainOptions opt;
  opt.steps = 80;
  opt.seed = 21;
  const auto a = train_appearance(init, c.atlas, c.atlas_labels, c.unlabeled, spatial, opt);
  CHECK(head_tail_drop(a.losses, 10) > 0);
  const auto b = train_appearance(init, c.atlas, c.atlas_labels, c.unlabeled, spatial, opt);
  CHECK(a.losses == b.losses);
  CHECK(a.model.net.layers.back().kernel.data == b.model.net.layers.back().kernel.data);
}

TEST_CASE("appearance model trained on the atlas itself predicts a near-zero delta") {
  const auto c = small_corpus(0);
  const std::vector<Volume> only_atlas{c.atlas};
  const auto spatial = make_spatial_model(spatial_arch(2), 1.0, 9, 2);  // identity registration
  TrainOptions opt;
  opt.steps = 60;
  const auto model =
      train_appearance(make_appearance_model(appearance_arch(2), 0.02, 6), c.atlas, c.atlas_labels, only_atlas,
                       spatial, opt)
          .model;
  const auto psi = predict_appearance(model, c.atlas, c.atlas).delta;
  const auto [lo, hi] = std::minmax_element(c.atlas.data.begin(), c.atlas.data.end());
  double mean_abs = 0;
  for (float v : psi.data) mean_abs += std::abs(v);
  mean_abs /= static_cast<double>(psi.size());
  CHECK(mean_abs < 1e-2 * (*hi - *lo));
}

TEST_CASE("large lambda_a leaves psi nearly piecewise constant") {
  const auto c = small_corpus(4);
  TrainOptions sopt;
  sopt.steps = 60;
  const auto spatial = train_spatial(make_spatial_model(spatial_arch(2), 1.0, 9, 2), c.atlas, c.unlabeled, sopt).model;
  TrainOptions opt;
  opt.steps = 120;
  const auto model = train_appearance(make_appearance_model(appearance_arch(2), 1e3, 6), c.atlas, c.atlas_labels,
                                      c.unlabeled, spatial, opt)
                         .model;
  const auto reg = register_subject(spatial, c.atlas, c.unlabeled[0]);
  const auto psi = predict_appearance(model, c.atlas, reg.in_atlas_frame).delta;
  const auto mask = warpfield::boundary_mask(c.atlas_labels).mask;

  const std::int64_t h = psi.dim(0), w = psi.dim(1);
  double interior = 0, boundary = 0;
  std::int64_t n_interior = 0, n_boundary = 0;
  for (std::int64_t y = 0; y + 1 < h; ++y) {
    for (std::int64_t x = 0; x + 1 < w; ++x) {
      const auto p = static_cast<std::size_t>(y * w + x);
      const double gx = psi.data[p + 1] - psi.data[p];
      const double gy = psi.data[p + static_cast<std::size_t>(w)] - psi.data[p];
      const double g = std::sqrt(gx * gx + gy * gy);
      if (mask.data[p]) {
        boundary += g;
        ++n_boundary;
      } else {
        interior += g;
        ++n_interior;
      }
    }
  }
  REQUIRE(n_boundary > 0);
  CHECK(interior / n_interior < 10 * (boundary / n_boundary));
}
