#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "doctest.h"

#include "augmorph/augment/augment.hpp"
#include "augmorph/dataio/toygen.hpp"
#include "augmorph/seeds.hpp"
#include "consistency.hpp"

using namespace augmorph;
using namespace augmorph::augment;

namespace {

struct Fixture {
  Volume atlas;
  LabelMap atlas_labels;
  std::vector<Volume> unlabeled;
  SpatialModel spatial;
  AppearanceModel appearance;
};

dataio::ToyGenParams small_params() {
  dataio::ToyGenParams p;
  p.image_size = {32, 32};
  p.anatomy = {8, 3.0, 1};
  p.bias_spacing = 16;
  p.seed = 8;
  return p;
}

Fixture untrained(std::size_t n) {
  const auto p = small_params();
  Fixture f;
  const auto atlas = dataio::toy_subject(p, dataio::toy_subject_seed(p, 0), true);
  f.atlas = atlas.image;
  f.atlas_labels = atlas.labels;
  for (std::size_t i = 1; i <= n; ++i) f.unlabeled.push_back(dataio::toy_subject(p, dataio::toy_subject_seed(p, i), false).image);
  f.spatial = xformmodels::make_spatial_model(xformmodels::spatial_arch(2), 1.0, 9, 3);
  f.appearance = xformmodels::make_appearance_model(xformmodels::appearance_arch(2), 0.02, 4);
  return f;
}

// Briefly trained models, so fields and deltas are non-trivial.
const Fixture& trained() {
  static const Fixture f = [] {
    Fixture t = untrained(4);
    xformmodels::TrainOptions opt;
    opt.steps = 60;
    t.spatial = xformmodels::train_spatial(t.spatial, t.atlas, t.unlabeled, opt).model;
    t.appearance = xformmodels::train_appearance(t.appearance, t.atlas, t.atlas_labels, t.unlabeled, t.spatial, opt).model;
    return t;
  }();
  return f;
}

SynthesisPlan learned_plan(SynthesisMode mode, std::size_t i, std::size_t j, std::uint64_t counter = 0) {
  SynthesisPlan p;
  p.mode = mode;
  p.spatial_target = i;
  p.appearance_target = j;
  p.counter = counter;
  return p;
}

}  // namespace

TEST_CASE("mode names round-trip") {
  for (auto m : {SynthesisMode::indep, SynthesisMode::coupled, SynthesisMode::rand_aug, SynthesisMode::indep_plus_rand})
    CHECK(parse_synthesis_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_synthesis_mode("mixup"), std::invalid_argument);
}

TEST_CASE("identity models reproduce the atlas bit-exactly") {
  const Fixture f = untrained(3);
  for (auto mode : {SynthesisMode::indep, SynthesisMode::coupled, SynthesisMode::indep_plus_rand}) {
    const std::size_t j = mode == SynthesisMode::coupled ? 1 : 2;
    const auto ex = synthesize(f.atlas, f.atlas_labels, f.spatial, f.appearance, f.unlabeled, learned_plan(mode, 1, j));
    CHECK(ex.image.data == f.atlas.data);
    CHECK(ex.labels.data == f.atlas_labels.data);
  }
  const TransformBank bank(f.atlas, f.atlas_labels, f.spatial, f.appearance, f.unlabeled);
  const auto ex = bank.synthesize(learned_plan(SynthesisMode::indep, 0, 2));
  CHECK(ex.image.data == f.atlas.data);
  CHECK(sas_propagate(f.spatial, f.atlas, f.atlas_labels, f.unlabeled[0]).data == f.atlas_labels.data);
}

TEST_CASE("untrained handles and malformed plans are rejected") {
  const Fixture f = untrained(2);
  const SpatialModel empty_spatial;
  const AppearanceModel empty_appearance;
  const auto plan = learned_plan(SynthesisMode::indep, 0, 1);
  CHECK_THROWS_AS(synthesize(f.atlas, f.atlas_labels, empty_spatial, f.appearance, f.unlabeled, plan),
                  std::invalid_argument);
  CHECK_THROWS_AS(synthesize(f.atlas, f.atlas_labels, f.spatial, empty_appearance, f.unlabeled, plan),
                  std::invalid_argument);
  CHECK_THROWS_AS(sas_propagate(empty_spatial, f.atlas, f.atlas_labels, f.atlas), std::invalid_argument);

  CHECK_THROWS_AS(learned_plan(SynthesisMode::indep, 0, 2).validate(2), std::out_of_range);
  CHECK_THROWS_AS(learned_plan(SynthesisMode::coupled, 0, 1).validate(2), std::invalid_argument);
  CHECK_THROWS_AS(learned_plan(SynthesisMode::rand_aug, 0, 0).validate(2), std::invalid_argument);
  CHECK_THROWS_AS(learned_plan(SynthesisMode::indep_plus_rand, 0, 1, 1).validate(2), std::invalid_argument);
  SynthesisPlan half = learned_plan(SynthesisMode::indep, 0, 1);
  half.appearance_target.reset();
  CHECK_THROWS_AS(half.validate(2), std::invalid_argument);
  CHECK_THROWS_AS(PlanStream(SynthesisMode::indep, 0, 1), std::invalid_argument);
  CHECK_NOTHROW(PlanStream(SynthesisMode::rand_aug, 0, 1));
}

TEST_CASE("plan streams: coverage, coupling, alternation, determinism") {
  const auto indep = enumerate_plans(SynthesisMode::indep, 100, 17, 10000);
  std::set<std::size_t> spatial, appearance;
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& p : indep) {
    spatial.insert(*p.spatial_target);
    appearance.insert(*p.appearance_target);
    pairs.emplace(*p.spatial_target, *p.appearance_target);
    CHECK_NOTHROW(p.validate(100));
  }
  CHECK(spatial.size() > 95);
  CHECK(appearance.size() > 95);
  // 10000 uniform draws over 10000 pairs cover about 1 - 1/e of them.
  CHECK(pairs.size() > 6000);
  CHECK(distinct_plan_count(SynthesisMode::indep, 100) == 10000);
  CHECK(distinct_plan_count(SynthesisMode::coupled, 100) == 100);
  CHECK(distinct_plan_count(SynthesisMode::rand_aug, 100) == 0);

  for (const auto& p : enumerate_plans(SynthesisMode::coupled, 10, 3, 500))
    CHECK(*p.spatial_target == *p.appearance_target);

  for (const auto& p : enumerate_plans(SynthesisMode::indep_plus_rand, 10, 3, 40))
    CHECK(p.uses_learned_transforms() == (p.counter % 2 == 0));
  for (const auto& p : enumerate_plans(SynthesisMode::rand_aug, 0, 3, 10)) CHECK_FALSE(p.uses_learned_transforms());

  CHECK(enumerate_plans(SynthesisMode::indep, 20, 99, 300) == enumerate_plans(SynthesisMode::indep, 20, 99, 300));
  CHECK_FALSE(enumerate_plans(SynthesisMode::indep, 20, 99, 300) == enumerate_plans(SynthesisMode::indep, 20, 98, 300));
  const auto stream = enumerate_plans(SynthesisMode::indep, 20, 99, 5);
  for (std::size_t k = 0; k < stream.size(); ++k) {
    CHECK(stream[k].counter == k);
    CHECK(stream[k].seed == derive_seed(99, k));
  }
}

TEST_CASE("rand-aug: degenerate parameters and intensity factor range") {
  const Fixture f = untrained(0);
  RandAugParams none;
  none.field.amplitude = 0;
  none.factor_min = none.factor_max = 1.0;
  const auto same = rand_aug_example(f.atlas, f.atlas_labels, none, 5);
  CHECK(same.image.data == f.atlas.data);
  CHECK(same.labels.data == f.atlas_labels.data);

  // With no warp the image is factor * atlas, so the factor reads off the
  // brightest voxel.
  RandAugParams scale_only;
  scale_only.field.amplitude = 0;
  const auto peak = static_cast<std::size_t>(std::max_element(f.atlas.data.begin(), f.atlas.data.end()) - f.atlas.data.begin());
  REQUIRE(f.atlas.data[peak] > 0.1f);
  double lo = 10, hi = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto ex = rand_aug_example(f.atlas, f.atlas_labels, scale_only, seed);
    const double factor = static_cast<double>(ex.image.data[peak]) / f.atlas.data[peak];
    lo = std::min(lo, factor);
    hi = std::max(hi, factor);
  }
  CHECK(lo >= 0.5 - 1e-6);
  CHECK(hi <= 1.5 + 1e-6);
  CHECK(lo < 0.55);
  CHECK(hi > 1.45);

  RandAugParams inverted;
  inverted.factor_min = 2;
  inverted.factor_max = 1;
  CHECK_THROWS_AS(rand_aug_example(f.atlas, f.atlas_labels, inverted, 1), std::invalid_argument);
}

TEST_CASE("learned synthesis: labels follow the image") {
  const Fixture& f = trained();
  const TransformBank bank(f.atlas, f.atlas_labels, f.spatial, f.appearance, f.unlabeled);
  REQUIRE(bank.size() == f.unlabeled.size());
  float largest = 0;
  for (std::size_t i = 0; i < bank.size(); ++i) largest = std::max(largest, bank.field(i).max_abs());
  REQUIRE(largest > 0.1f);  // the trained fields are not the identity

  for (const auto& plan : enumerate_plans(SynthesisMode::indep, f.unlabeled.size(), 12, 50)) {
    const auto ex = bank.synthesize(plan);
    const auto& phi = bank.field(*plan.spatial_target);
    CHECK(ex.labels.data == warpfield::warp_nearest(f.atlas_labels, phi).data);
    const auto r = consistency::check(f.atlas_labels, phi, ex.labels);
    CHECK(r.uncovered == 0);
    CHECK(r.far == 0);
  }

  // Labels warped by a different field fail the check.
  const auto mismatched = consistency::check(f.atlas_labels, bank.field(0), warpfield::warp_nearest(f.atlas_labels, bank.field(1)));
  CHECK(mismatched.uncovered + mismatched.far > 0);

  RandAugParams rp;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ex = rand_aug_example(f.atlas, f.atlas_labels, rp, seed);
    const auto phi = warpfield::random_smooth_field(f.atlas.shape, rp.field, derive_seed(seed, 0));
    const auto r = consistency::check(f.atlas_labels, phi, ex.labels);
    CHECK(r.uncovered == 0);
    CHECK(r.far == 0);
  }
}

TEST_CASE("transform bank matches direct synthesis and is deterministic") {
  const Fixture& f = trained();
  const TransformBank bank(f.atlas, f.atlas_labels, f.spatial, f.appearance, f.unlabeled);
  for (auto mode : {SynthesisMode::indep, SynthesisMode::coupled, SynthesisMode::indep_plus_rand}) {
    for (const auto& plan : enumerate_plans(mode, f.unlabeled.size(), 4, 6)) {
      const auto direct = synthesize(f.atlas, f.atlas_labels, f.spatial, f.appearance, f.unlabeled, plan);
      const auto banked = bank.synthesize(plan);
      CHECK(direct.image.data == banked.image.data);
      CHECK(direct.labels.data == banked.labels.data);
      CHECK(banked.provenance == plan);
      CHECK(bank.synthesize(plan).image.data == banked.image.data);
    }
  }

  // Appearance and spatial indices act separately: same i, different j gives
  // the same labels with a different image.
  const auto a = bank.synthesize(learned_plan(SynthesisMode::indep, 0, 1));
  const auto b = bank.synthesize(learned_plan(SynthesisMode::indep, 0, 2));
  CHECK(a.labels.data == b.labels.data);
  CHECK_FALSE(a.image.data == b.image.data);
}

TEST_CASE("sas propagation warps atlas labels with the forward field") {
  const Fixture& f = trained();
  const auto phi = xformmodels::predict_displacement(f.spatial.forward_net, f.atlas, f.unlabeled[1]);
  CHECK(sas_propagate(f.spatial, f.atlas, f.atlas_labels, f.unlabeled[1]).data ==
        warpfield::warp_nearest(f.atlas_labels, phi).data);
}
