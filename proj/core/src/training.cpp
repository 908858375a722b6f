#include "vibus/training.hpp"

#include "mlp.hpp"
#include "seed.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace vibus {

namespace {

constexpr std::size_t kHiddenLayers = 2;

std::vector<DenseLayer> stacked(const SegmentationModel& model) {
  std::vector<DenseLayer> layers = model.encoder.layers;
  layers.push_back(model.head);
  return layers;
}

void unstack(SegmentationModel& model, std::vector<DenseLayer>&& layers) {
  model.head = std::move(layers.back());
  layers.pop_back();
  model.encoder.layers = std::move(layers);
}

// Row-wise softmax cross-entropy; returns mean loss and writes d(mean)/d(logits).
double softmax_cross_entropy(const Eigen::MatrixXd& logits, std::span<const PointTarget> targets,
                             Eigen::MatrixXd* grad, bool class_balanced = false) {
  const auto n = logits.rows();
  std::vector<double> weight(static_cast<std::size_t>(logits.cols()), 1.0);
  if (class_balanced) {
    std::vector<std::size_t> count(weight.size(), 0);
    for (const PointTarget& t : targets)
      if (t.category >= 0 && t.category < logits.cols()) ++count[static_cast<std::size_t>(t.category)];
    const auto present = static_cast<double>(std::count_if(count.begin(), count.end(), [](std::size_t c) { return c > 0; }));
    for (std::size_t c = 0; c < weight.size(); ++c)
      if (count[c] > 0) weight[c] = static_cast<double>(n) / (present * static_cast<double>(count[c]));
  }
  double total = 0.0;
  if (grad) grad->resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    const double z = e.sum();
    const int c = targets[static_cast<std::size_t>(i)].category;
    if (c < 0 || c >= logits.cols()) throw std::out_of_range("target category outside the classifier head");
    const double w = weight[static_cast<std::size_t>(c)];
    total += w * (std::log(z) - (logits(i, c) - mx));
    if (grad) {
      grad->row(i) = w * e / z;
      (*grad)(i, c) -= w;
    }
  }
  if (grad) *grad /= static_cast<double>(n);
  return total / static_cast<double>(n);
}

std::vector<std::size_t> target_vertices(std::span<const PointTarget> targets) {
  std::vector<std::size_t> v(targets.size());
  std::transform(targets.begin(), targets.end(), v.begin(), [](const PointTarget& t) { return t.vertex; });
  return v;
}

}  // namespace

SgdMomentum::SgdMomentum(SgdConfig cfg) : cfg_(cfg) {
  if (!(cfg_.base_lr >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
  if (!(cfg_.momentum >= 0.0 && cfg_.momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (cfg_.total_steps == 0) throw std::invalid_argument("total_steps must be positive");
}

double SgdMomentum::learning_rate() const {
  const double progress = std::min(1.0, static_cast<double>(step_) / static_cast<double>(cfg_.total_steps));
  return cfg_.base_lr * std::pow(1.0 - progress, cfg_.poly_power);
}

void SgdMomentum::step(std::vector<DenseLayer>& params, const std::vector<DenseLayer>& grads) {
  if (velocity_.empty()) velocity_ = detail::zeros_like(params);
  if (velocity_.size() != params.size() || grads.size() != params.size())
    throw std::invalid_argument("optimizer state does not match parameter layout");

  double scale = 1.0;
  if (cfg_.max_grad_norm > 0.0) {
    double sq = 0.0;
    for (const DenseLayer& g : grads) sq += g.weight.squaredNorm() + g.bias.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > cfg_.max_grad_norm) scale = cfg_.max_grad_norm / norm;
  }
  const double lr = learning_rate();
  for (std::size_t l = 0; l < params.size(); ++l) {
    DenseLayer& v = velocity_[l];
    v.weight = cfg_.momentum * v.weight + scale * grads[l].weight + cfg_.weight_decay * params[l].weight;
    v.bias = cfg_.momentum * v.bias + scale * grads[l].bias;
    params[l].weight -= lr * v.weight;
    params[l].bias -= lr * v.bias;
  }
  ++step_;
}

double pretrain_step(EncoderParams& params, SgdMomentum& optimizer, const SceneMesh& cloud,
                     const VBConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  validate(params);
  const auto [tp, tq] = sample_transform_pair(detail::mix_seed(seed, 1));
  const SceneMesh xp = apply_transform(tp, cloud);
  const SceneMesh xq = apply_transform(tq, cloud);
  const SampleIndexSet idx = fps_random_start(cloud, cfg.fps_target, detail::mix_seed(seed, 2));

  const Eigen::MatrixXd in_p = detail::gather_rows(point_inputs(xp), idx.indices);
  const Eigen::MatrixXd in_q = detail::gather_rows(point_inputs(xq), idx.indices);
  const auto cache_p = detail::mlp_forward(params.layers, kHiddenLayers, in_p, params.dropout_rate, false, 0);
  const auto cache_q = detail::mlp_forward(params.layers, kHiddenLayers, in_q, params.dropout_rate, false, 0);

  const VBLossGradient lg = vb_loss_grad(cache_p.output, cache_q.output, cfg);
  auto grads = detail::mlp_backward(params.layers, kHiddenLayers, cache_p, lg.grad_p);
  detail::accumulate(grads, detail::mlp_backward(params.layers, kHiddenLayers, cache_q, lg.grad_q));
  optimizer.step(params.layers, grads);
  return lg.loss;
}

double finetune_epoch(SegmentationModel& model, SgdMomentum& optimizer, std::span<const SceneMesh> scenes,
                      std::span<const std::vector<PointTarget>> targets, const FinetuneConfig& cfg,
                      std::uint64_t seed) {
  if (scenes.size() != targets.size()) throw std::invalid_argument("one target list per scene is required");
  const bool any = std::any_of(targets.begin(), targets.end(), [](const auto& t) { return !t.empty(); });
  if (!any) throw std::invalid_argument("fine-tuning needs at least one labeled vertex");

  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(detail::mix_seed(seed, 3));
  std::shuffle(order.begin(), order.end(), rng);

  double weighted = 0.0;
  std::size_t count = 0;
  for (const std::size_t s : order) {
    const auto& t = targets[s];
    if (t.empty()) continue;
    const std::vector<std::size_t> vertices = target_vertices(t);
    std::vector<DenseLayer> layers = stacked(model);
    const Eigen::MatrixXd x = detail::gather_rows(point_inputs(scenes[s]), vertices);
    const auto cache = detail::mlp_forward(layers, kHiddenLayers, x, model.encoder.dropout_rate,
                                           cfg.train_dropout, detail::mix_seed(seed, 100 + s));
    Eigen::MatrixXd grad;
    const double loss = softmax_cross_entropy(cache.output, t, &grad, cfg.class_balanced);
    const auto grads = detail::mlp_backward(layers, kHiddenLayers, cache, grad);
    optimizer.step(layers, grads);
    unstack(model, std::move(layers));
    weighted += loss * static_cast<double>(t.size());
    count += t.size();
  }
  return weighted / static_cast<double>(count);
}

double cross_entropy(const SegmentationModel& model, const SceneMesh& scene, std::span<const PointTarget> targets) {
  if (targets.empty()) return 0.0;
  const std::vector<std::size_t> vertices = target_vertices(targets);
  const Eigen::MatrixXd logits = model_logits(model, scene, vertices, false, 0);
  return softmax_cross_entropy(logits, targets, nullptr);
}

}  // namespace vibus
