#include "augmorph/segeval/segmenter.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "augmorph/parallel.hpp"

namespace augmorph::segeval {

using diffcore::NumericError;
using diffcore::Shape;
using diffcore::ShapeError;
using xformmodels::NetGrads;

namespace {

std::int64_t slice_count(const Shape& volume_shape) { return volume_shape.size() == 3 ? volume_shape[0] : 1; }

template <typename E>
diffcore::BasicTensor<E> take_slice(const diffcore::BasicTensor<E>& v, std::int64_t s) {
  if (v.shape.size() != 3) return v;
  diffcore::BasicTensor<E> out(slice_shape_of(v.shape));
  const auto n = static_cast<std::ptrdiff_t>(out.size());
  std::copy(v.data.begin() + s * n, v.data.begin() + (s + 1) * n, out.data.begin());
  return out;
}

struct SliceResult {
  double loss = 0;
  NetGrads grads;
};

SliceResult slice_step(const SegModel& model, const Volume& image, const LabelMap& labels) {
  xformmodels::Graph g;
  const auto ng = xformmodels::build_net(g, model.net, g.constant(with_channel(image)), true);
  const auto loss = g.cross_entropy(ng.output, labels);
  SliceResult r;
  r.loss = g.value(loss).data[0];
  r.grads.collect(g.backward(loss), ng);
  return r;
}

double validation_dice(const SegModel& model, std::span<const Volume> images, std::span<const LabelMap> labels,
                       int threads) {
  std::vector<double> scores(images.size());
  parallel_for(images.size(), threads, [&](std::size_t i) {
    scores[i] = mean_foreground_dice(segment(model, images[i]), labels[i], model.label_count);
  });
  double total = 0;
  for (double s : scores) total += s;
  return total / static_cast<double>(scores.size());
}

}  // namespace

Shape slice_shape_of(const Shape& volume_shape) {
  if (volume_shape.empty() || volume_shape.size() > 3) {
    throw ShapeError("segmenter: volume rank must be 1..3, got " + diffcore::to_string(volume_shape));
  }
  if (volume_shape.size() == 3) return Shape(volume_shape.begin() + 1, volume_shape.end());
  return volume_shape;
}

SegModel make_seg_model(int label_count, const Shape& slice_shape, std::vector<int> widths, std::uint64_t seed) {
  if (label_count < 2) throw std::invalid_argument("segmenter: need at least 2 labels");
  if (slice_shape.empty() || slice_shape.size() > 2) throw ShapeError("segmenter: slices must have rank 1 or 2");
  xformmodels::NetArch arch;
  arch.spatial_rank = static_cast<int>(slice_shape.size());
  arch.in_channels = 1;
  arch.out_channels = label_count;
  arch.widths = std::move(widths);
  for (auto e : slice_shape) {
    if (e % arch.size_multiple() != 0) {
      throw ShapeError("segmenter: slice extent " + std::to_string(e) + " not divisible by " +
                       std::to_string(arch.size_multiple()));
    }
  }
  return SegModel{xformmodels::init_net(arch, seed), label_count, slice_shape};
}

double dice(const LabelMap& pred, const LabelMap& truth, std::int32_t label) {
  if (pred.shape != truth.shape) {
    throw ShapeError("dice: grid mismatch " + diffcore::to_string(pred.shape) + " vs " + diffcore::to_string(truth.shape));
  }
  std::int64_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool in_a = pred.data[i] == label;
    const bool in_b = truth.data[i] == label;
    a += in_a;
    b += in_b;
    both += in_a && in_b;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

double mean_foreground_dice(const LabelMap& pred, const LabelMap& truth, int label_count) {
  if (label_count < 2) throw std::invalid_argument("mean_foreground_dice: no foreground labels");
  double total = 0;
  for (int l = 1; l < label_count; ++l) total += dice(pred, truth, l);
  return total / (label_count - 1);
}

LabelMap segment(const SegModel& model, const Volume& image) {
  if (!model.initialized()) throw std::invalid_argument("segment: model is not initialized");
  if (slice_shape_of(image.shape) != model.slice_shape) {
    throw ShapeError("segment: image " + diffcore::to_string(image.shape) + " does not match slice shape " +
                     diffcore::to_string(model.slice_shape));
  }
  LabelMap out(image.shape);
  const auto vox = static_cast<std::size_t>(diffcore::numel(model.slice_shape));
  for (std::int64_t s = 0; s < slice_count(image.shape); ++s) {
    const auto logits = xformmodels::run_net(model.net, with_channel(take_slice(image, s)));
    for (std::size_t p = 0; p < vox; ++p) {
      std::int32_t best = 0;
      for (int k = 1; k < model.label_count; ++k) {
        if (logits.data[k * vox + p] > logits.data[best * vox + p]) best = k;
      }
      out.data[static_cast<std::size_t>(s) * vox + p] = best;
    }
  }
  return out;
}

PoolSource::PoolSource(std::vector<Volume> images, std::vector<LabelMap> labels)
    : images_(std::move(images)), labels_(std::move(labels)) {
  if (images_.empty() || images_.size() != labels_.size()) {
    throw std::invalid_argument("pool source: need equally many (>= 1) images and label maps");
  }
}

std::function<LabeledExample()> PoolSource::next(std::mt19937_64& rng) {
  const std::size_t i = std::uniform_int_distribution<std::size_t>(0, images_.size() - 1)(rng);
  return [this, i] { return LabeledExample{images_[i], labels_[i], {}}; };
}

SynthesisSource::SynthesisSource(const Volume& atlas, const LabelMap& atlas_labels,
                                 const augment::TransformBank* bank, augment::SynthesisMode mode,
                                 std::size_t n_unlabeled, std::uint64_t seed, augment::RandAugParams rand_params)
    : atlas_(atlas),
      atlas_labels_(atlas_labels),
      bank_(bank),
      stream_(mode, n_unlabeled, seed),
      n_(n_unlabeled),
      rand_params_(rand_params) {
  if (mode != augment::SynthesisMode::rand_aug && (bank == nullptr || bank->size() != n_unlabeled)) {
    throw std::invalid_argument("synthesis source: learned modes need a transform bank over the unlabeled set");
  }
}

std::function<LabeledExample()> SynthesisSource::next(std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (u < 1.0 / (1.0 + static_cast<double>(n_))) {
    return [this] { return LabeledExample{atlas_, atlas_labels_, {}}; };
  }
  const augment::SynthesisPlan plan = stream_.next();
  if (!plan.uses_learned_transforms()) {
    return [this, plan] {
      auto ex = augment::rand_aug_example(atlas_, atlas_labels_, rand_params_, plan.seed);
      ex.provenance = plan;
      return ex;
    };
  }
  return [this, plan] { return bank_->synthesize(plan, rand_params_); };
}

SegTrainResult train_segmenter(SegModel model, ExampleSource& source, std::span<const Volume> val_images,
                               std::span<const LabelMap> val_labels, const SegTrainConfig& config) {
  if (!model.initialized()) throw std::invalid_argument("train_segmenter: model is not initialized");
  if (val_images.empty() || val_images.size() != val_labels.size()) {
    throw std::invalid_argument("train_segmenter: validation set must be non-empty and paired");
  }
  if (config.batch_size < 1 || config.steps_per_epoch < 1 || config.patience < 1) {
    throw std::invalid_argument("train_segmenter: batch size, steps per epoch and patience must be >= 1");
  }

  SegTrainResult result;
  result.model = model;
  result.best_val_dice = -std::numeric_limits<double>::infinity();
  xformmodels::NetOptimizer opt(model.net, config.adam);
  std::mt19937_64 rng(config.seed);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  int since_best = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    double epoch_loss = 0;
    for (int step = 0; step < config.steps_per_epoch; ++step) {
      std::vector<std::function<LabeledExample()>> work(batch);
      std::vector<std::uint64_t> slice_draw(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        work[b] = source.next(rng);
        slice_draw[b] = rng();
      }
      std::vector<SliceResult> parts(batch);
      parallel_for(batch, config.threads, [&](std::size_t b) {
        const LabeledExample ex = work[b]();
        const auto s = static_cast<std::int64_t>(slice_draw[b] % static_cast<std::uint64_t>(slice_count(ex.image.shape)));
        parts[b] = slice_step(model, take_slice(ex.image, s), take_slice(ex.labels, s));
      });
      NetGrads total = std::move(parts[0].grads);
      double loss = parts[0].loss;
      for (std::size_t b = 1; b < batch; ++b) {
        total.add(parts[b].grads);
        loss += parts[b].loss;
      }
      loss /= static_cast<double>(batch);
      if (!std::isfinite(loss)) {
        throw NumericError("train_segmenter: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step));
      }
      total.scale(1.0 / static_cast<double>(batch));
      opt.step(model.net, total);
      epoch_loss += loss;
    }
    epoch_loss /= config.steps_per_epoch;
    const double val = validation_dice(model, val_images, val_labels, config.threads);
    result.val_curve.push_back(val);
    result.train_losses.push_back(epoch_loss);
    if (config.on_epoch) config.on_epoch(epoch, epoch_loss, val);
    if (val > result.best_val_dice) {
      result.best_val_dice = val;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  if (result.best_epoch < 0) result.best_val_dice = 0;
  return result;
}

}  // namespace augmorph::segeval
