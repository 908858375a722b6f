#pragma once

#include "vibus/encoder.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace vibus {

/// SGD with heavy-ball momentum and polynomial learning-rate decay,
/// lr_k = base_lr * (1 - k / total_steps)^power.
struct SgdConfig {
  double base_lr = 0.1;
  double momentum = 0.99;
  double poly_power = 0.9;
  std::size_t total_steps = 20000;
  double weight_decay = 0.0;
  /// Rescale the global gradient to at most this L2 norm; 0 disables.
  double max_grad_norm = 0.0;
};

class SgdMomentum {
 public:
  explicit SgdMomentum(SgdConfig cfg = {});

  const SgdConfig& config() const { return cfg_; }
  std::size_t steps_taken() const { return step_; }
  double learning_rate() const;

  /// Applies one update to `params` in place.
  void step(std::vector<DenseLayer>& params, const std::vector<DenseLayer>& grads);

 private:
  SgdConfig cfg_;
  std::size_t step_ = 0;
  std::vector<DenseLayer> velocity_;
};

/// One self-supervised step: draw a transform pair, encode both views, gather
/// the FPS-sampled rows (sampled once on the untransformed cloud), and descend
/// the VB loss. Returns the loss before the update. Pre-training runs the
/// encoder without dropout.
double pretrain_step(EncoderParams& params, SgdMomentum& optimizer, const SceneMesh& cloud,
                     const VBConfig& cfg, std::uint64_t seed);

struct FinetuneConfig {
  SgdConfig sgd{.base_lr = 0.1, .momentum = 0.9, .poly_power = 0.9, .total_steps = 1000};
  /// Keep the encoder's dropout active while fitting labels.
  bool train_dropout = true;
  /// Weight each target by n / (categories present * count of its category)
  /// so every category present in a scene contributes equally.
  bool class_balanced = false;
};

/// One pass over `scenes`, one gradient step per scene with at least one
/// target. Cross-entropy is averaged over the labeled vertices of the scene;
/// unlabeled vertices never enter the forward pass. Returns the mean loss
/// weighted by label count. Throws if every target list is empty.
double finetune_epoch(SegmentationModel& model, SgdMomentum& optimizer, std::span<const SceneMesh> scenes,
                      std::span<const std::vector<PointTarget>> targets, const FinetuneConfig& cfg,
                      std::uint64_t seed);

/// Mean cross-entropy of `model` (dropout off) over the targets of one scene.
double cross_entropy(const SegmentationModel& model, const SceneMesh& scene,
                     std::span<const PointTarget> targets);

}  // namespace vibus
