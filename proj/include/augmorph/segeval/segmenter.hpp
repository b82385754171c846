#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "augmorph/augment/augment.hpp"
#include "augmorph/diffcore/adam.hpp"
#include "augmorph/volume.hpp"
#include "augmorph/xformmodels/net.hpp"

namespace augmorph::segeval {

using augment::LabeledExample;
using xformmodels::NetParams;

/// Slice segmenter: 1-channel slice in, label_count logits out. Volumes of
/// rank 3 are cut along axis 0; rank 1 and 2 volumes are a single slice.
struct SegModel {
  NetParams net;
  int label_count = 0;
  diffcore::Shape slice_shape;

  [[nodiscard]] bool initialized() const { return !net.empty(); }
};

diffcore::Shape slice_shape_of(const diffcore::Shape& volume_shape);
SegModel make_seg_model(int label_count, const diffcore::Shape& slice_shape, std::vector<int> widths,
                        std::uint64_t seed);

/// 1 when the label is absent from both maps.
double dice(const LabelMap& pred, const LabelMap& truth, std::int32_t label);
/// Mean of dice over labels 1..label_count-1.
double mean_foreground_dice(const LabelMap& pred, const LabelMap& truth, int label_count);

/// Per-slice argmax, ties to the smaller label.
LabelMap segment(const SegModel& model, const Volume& image);

/// Training examples for the segmenter. next() is called sequentially by
/// the trainer and returns work that may run on any thread.
class ExampleSource {
 public:
  virtual ~ExampleSource() = default;
  virtual std::function<LabeledExample()> next(std::mt19937_64& rng) = 0;
};

/// Uniform draws from a fixed labelled pool (atlas-only, SAS-aug, supervised).
class PoolSource final : public ExampleSource {
 public:
  PoolSource(std::vector<Volume> images, std::vector<LabelMap> labels);
  std::function<LabeledExample()> next(std::mt19937_64& rng) override;

 private:
  std::vector<Volume> images_;
  std::vector<LabelMap> labels_;
};

/// The atlas with probability 1/(1+K), otherwise the next plan of a
/// synthesis stream over K unlabeled targets.
class SynthesisSource final : public ExampleSource {
 public:
  /// `bank` may be null for rand_aug; it must outlive the source.
  SynthesisSource(const Volume& atlas, const LabelMap& atlas_labels, const augment::TransformBank* bank,
                  augment::SynthesisMode mode, std::size_t n_unlabeled, std::uint64_t seed,
                  augment::RandAugParams rand_params = {});
  std::function<LabeledExample()> next(std::mt19937_64& rng) override;

 private:
  Volume atlas_;
  LabelMap atlas_labels_;
  const augment::TransformBank* bank_;
  augment::PlanStream stream_;
  std::size_t n_;
  augment::RandAugParams rand_params_;
};

struct SegTrainConfig {
  int max_epochs = 20;
  int steps_per_epoch = 50;
  int patience = 5;
  int batch_size = 16;
  std::uint64_t seed = 42;
  int threads = 1;
  diffcore::AdamConfig adam{};
  /// Called after each epoch with (epoch, mean train loss, validation Dice).
  std::function<void(int, double, double)> on_epoch;
};

struct SegTrainResult {
  SegModel model;  // best-validation checkpoint
  int best_epoch = -1;
  double best_val_dice = 0;
  std::vector<double> val_curve;
  std::vector<double> train_losses;  // per epoch
};

SegTrainResult train_segmenter(SegModel model, ExampleSource& source, std::span<const Volume> val_images,
                               std::span<const LabelMap> val_labels, const SegTrainConfig& config);

}  // namespace augmorph::segeval
