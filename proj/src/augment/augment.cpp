#include "augmorph/augment/augment.hpp"

#include <stdexcept>

#include "augmorph/parallel.hpp"
#include "augmorph/seeds.hpp"

namespace augmorph::augment {

namespace {

Volume add_delta(const Volume& atlas, const Volume& delta) {
  if (atlas.shape != delta.shape) throw diffcore::ShapeError("synthesize: appearance delta not aligned with atlas");
  Volume out = atlas;
  for (std::size_t v = 0; v < out.size(); ++v) out.data[v] += delta.data[v];
  return out;
}

void require_models(const SpatialModel& spatial, const AppearanceModel& appearance) {
  if (!spatial.initialized()) throw std::invalid_argument("synthesize: spatial model is not initialized");
  if (!appearance.initialized()) throw std::invalid_argument("synthesize: appearance model is not initialized");
}

Volume appearance_delta(const AppearanceModel& appearance, const SpatialModel& spatial, const Volume& atlas,
                        const Volume& subject) {
  const auto inverse = xformmodels::predict_displacement(spatial.inverse_net, subject, atlas);
  return xformmodels::predict_appearance(appearance, atlas, warpfield::warp_linear(subject, inverse)).delta;
}

}  // namespace

std::string to_string(SynthesisMode mode) {
  switch (mode) {
    case SynthesisMode::indep: return "indep";
    case SynthesisMode::coupled: return "coupled";
    case SynthesisMode::rand_aug: return "rand-aug";
    case SynthesisMode::indep_plus_rand: return "indep+rand";
  }
  return "?";
}

SynthesisMode parse_synthesis_mode(const std::string& text) {
  if (text == "indep") return SynthesisMode::indep;
  if (text == "coupled") return SynthesisMode::coupled;
  if (text == "rand-aug" || text == "rand_aug") return SynthesisMode::rand_aug;
  if (text == "indep+rand" || text == "indep_plus_rand") return SynthesisMode::indep_plus_rand;
  throw std::invalid_argument("unknown synthesis mode '" + text + "'");
}

void SynthesisPlan::validate(std::size_t n_unlabeled) const {
  const bool learned = spatial_target.has_value();
  if (learned != appearance_target.has_value()) {
    throw std::invalid_argument("plan: spatial and appearance targets must be both set or both empty");
  }
  switch (mode) {
    case SynthesisMode::rand_aug:
      if (learned) throw std::invalid_argument("plan: rand-aug plans carry no targets");
      return;
    case SynthesisMode::indep_plus_rand:
      if (learned != (counter % 2 == 0)) {
        throw std::invalid_argument("plan: indep+rand uses learned transforms on even counters only");
      }
      break;
    case SynthesisMode::indep:
    case SynthesisMode::coupled:
      if (!learned) throw std::invalid_argument("plan: " + to_string(mode) + " plans need targets");
      break;
  }
  if (!learned) return;
  if (*spatial_target >= n_unlabeled || *appearance_target >= n_unlabeled) {
    throw std::out_of_range("plan: target index out of range (" + std::to_string(n_unlabeled) + " unlabeled)");
  }
  if (mode == SynthesisMode::coupled && *spatial_target != *appearance_target) {
    throw std::invalid_argument("plan: coupled plans use the same target for both transforms");
  }
}

PlanStream::PlanStream(SynthesisMode mode, std::size_t n_unlabeled, std::uint64_t seed)
    : mode_(mode), n_(n_unlabeled), seed_(seed), rng_(seed) {
  if (n_ == 0 && mode != SynthesisMode::rand_aug) {
    throw std::invalid_argument("plan stream: learned modes need at least one unlabeled subject");
  }
}

SynthesisPlan PlanStream::next() {
  SynthesisPlan p;
  p.mode = mode_;
  p.counter = counter_++;
  p.seed = derive_seed(seed_, p.counter);
  const bool learned = mode_ == SynthesisMode::indep || mode_ == SynthesisMode::coupled ||
                       (mode_ == SynthesisMode::indep_plus_rand && p.counter % 2 == 0);
  if (learned) {
    std::uniform_int_distribution<std::size_t> pick(0, n_ - 1);
    p.spatial_target = pick(rng_);
    p.appearance_target = mode_ == SynthesisMode::coupled ? *p.spatial_target : pick(rng_);
  }
  return p;
}

std::vector<SynthesisPlan> enumerate_plans(SynthesisMode mode, std::size_t n_unlabeled, std::uint64_t seed,
                                           std::size_t count) {
  PlanStream stream(mode, n_unlabeled, seed);
  std::vector<SynthesisPlan> plans;
  plans.reserve(count);
  for (std::size_t k = 0; k < count; ++k) plans.push_back(stream.next());
  return plans;
}

std::size_t distinct_plan_count(SynthesisMode mode, std::size_t n_unlabeled) {
  switch (mode) {
    case SynthesisMode::indep:
    case SynthesisMode::indep_plus_rand: return n_unlabeled * n_unlabeled;
    case SynthesisMode::coupled: return n_unlabeled;
    case SynthesisMode::rand_aug: return 0;
  }
  return 0;
}

LabeledExample rand_aug_example(const Volume& atlas, const LabelMap& atlas_labels, const RandAugParams& params,
                                std::uint64_t seed) {
  if (atlas.shape != atlas_labels.shape) throw diffcore::ShapeError("rand_aug: labels not aligned with atlas");
  if (!(params.factor_min <= params.factor_max)) throw std::invalid_argument("rand_aug: factor_min > factor_max");
  const auto field = warpfield::random_smooth_field(atlas.shape, params.field, derive_seed(seed, 0));
  std::mt19937_64 rng(derive_seed(seed, 1));
  const double factor = std::uniform_real_distribution<double>(params.factor_min, params.factor_max)(rng);
  LabeledExample ex;
  ex.image = warpfield::warp_linear(atlas, field);
  for (auto& v : ex.image.data) v = static_cast<float>(v * factor);
  ex.labels = warpfield::warp_nearest(atlas_labels, field);
  return ex;
}

LabeledExample synthesize(const Volume& atlas, const LabelMap& atlas_labels, const SpatialModel& spatial,
                          const AppearanceModel& appearance, std::span<const Volume> unlabeled,
                          const SynthesisPlan& plan, const RandAugParams& rand_params) {
  plan.validate(unlabeled.size());
  if (!plan.uses_learned_transforms()) {
    LabeledExample ex = rand_aug_example(atlas, atlas_labels, rand_params, plan.seed);
    ex.provenance = plan;
    return ex;
  }
  require_models(spatial, appearance);
  const Volume& yi = unlabeled[*plan.spatial_target];
  const Volume& yj = unlabeled[*plan.appearance_target];
  const Volume delta = appearance_delta(appearance, spatial, atlas, yj);
  const auto phi = xformmodels::predict_displacement(spatial.forward_net, atlas, yi);
  LabeledExample ex;
  ex.image = warpfield::warp_linear(add_delta(atlas, delta), phi);
  ex.labels = warpfield::warp_nearest(atlas_labels, phi);
  ex.provenance = plan;
  return ex;
}

LabelMap sas_propagate(const SpatialModel& spatial, const Volume& atlas, const LabelMap& atlas_labels,
                       const Volume& subject) {
  if (!spatial.initialized()) throw std::invalid_argument("sas: spatial model is not initialized");
  if (atlas.shape != atlas_labels.shape) throw diffcore::ShapeError("sas: labels not aligned with atlas");
  return warpfield::warp_nearest(atlas_labels,
                                 xformmodels::predict_displacement(spatial.forward_net, atlas, subject));
}

TransformBank::TransformBank(const Volume& atlas, const LabelMap& atlas_labels, const SpatialModel& spatial,
                             const AppearanceModel& appearance, std::span<const Volume> unlabeled, int threads)
    : atlas_(atlas), atlas_labels_(atlas_labels), fields_(unlabeled.size()), deltas_(unlabeled.size()) {
  require_models(spatial, appearance);
  if (atlas.shape != atlas_labels.shape) throw diffcore::ShapeError("transform bank: labels not aligned with atlas");
  parallel_for(unlabeled.size(), threads, [&](std::size_t i) {
    fields_[i] = xformmodels::predict_displacement(spatial.forward_net, atlas, unlabeled[i]);
    deltas_[i] = appearance_delta(appearance, spatial, atlas, unlabeled[i]);
  });
}

LabeledExample TransformBank::synthesize(const SynthesisPlan& plan, const RandAugParams& rand_params) const {
  plan.validate(fields_.size());
  if (!plan.uses_learned_transforms()) {
    LabeledExample ex = rand_aug_example(atlas_, atlas_labels_, rand_params, plan.seed);
    ex.provenance = plan;
    return ex;
  }
  const auto& phi = fields_[*plan.spatial_target];
  LabeledExample ex;
  ex.image = warpfield::warp_linear(add_delta(atlas_, deltas_[*plan.appearance_target]), phi);
  ex.labels = warpfield::warp_nearest(atlas_labels_, phi);
  ex.provenance = plan;
  return ex;
}

}  // namespace augmorph::augment
