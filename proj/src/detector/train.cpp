#include "catdet/detector/train.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>
#include <set>

#include "catdet/common/errors.hpp"
#include "catdet/common/hash.hpp"
#include "catdet/numerics/ops.hpp"

namespace catdet::det {

namespace {

constexpr const char* kEpochKey = "train.epochs_done";
constexpr const char* kVelocityPrefix = "sgd.v.";

std::vector<num::NamedTensor> unique_entries(const num::ParamRegistry& reg) {
  std::vector<num::NamedTensor> out;
  std::set<const void*> ids;
  for (const auto& e : reg.entries()) {
    if (ids.insert(e.tensor.identity()).second) out.push_back(e);
  }
  return out;
}

std::vector<num::Tensor> tensors_of(const std::vector<num::NamedTensor>& v) {
  std::vector<num::Tensor> out;
  for (const auto& e : v) out.push_back(e.tensor);
  return out;
}

}  // namespace

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  double lr = cfg.sgd.learning_rate;
  for (std::size_t d : cfg.decay_epochs) {
    if (epoch > d) lr *= cfg.decay_factor;
  }
  return lr;
}

Trainer::Trainer(Detector& model, const data::Dataset& ds, TrainConfig cfg)
    : model_(model),
      cfg_(std::move(cfg)),
      samples_(ds.split(data::Split::kTrain)),
      unique_(unique_entries(model.params())),
      sgd_(cfg_.sgd, tensors_of(unique_)) {
  data::check_split_disjoint(ds);
  if (cfg_.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (cfg_.max_samples > 0 && samples_.size() > cfg_.max_samples) samples_.resize(cfg_.max_samples);
  if (samples_.size() < cfg_.batch_size) throw DataError("train split is smaller than one batch");
}

EpochRecord Trainer::run_epoch() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t epoch = epochs_done_ + 1;
  EpochRecord rec;
  rec.epoch = epoch;
  rec.lr = learning_rate(cfg_, epoch);
  sgd_.config.learning_rate = rec.lr;

  std::vector<std::size_t> order(samples_.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(cfg_.seed, 0x7261696eULL, epoch));
  std::shuffle(order.begin(), order.end(), rng);

  auto params = tensors_of(unique_);
  const std::size_t steps = samples_.size() / cfg_.batch_size;
  const double inv_b = 1.0 / static_cast<double>(cfg_.batch_size);
  for (std::size_t step = 0; step < steps; ++step) {
    model_.params().zero_grads();
    for (std::size_t k = 0; k < cfg_.batch_size; ++k) {
      const auto* s = samples_[order[step * cfg_.batch_size + k]];
      std::vector<Box> negatives;
      for (const auto& d : s->distractors) negatives.push_back(d.box);
      auto l = model_.loss(s->target, s->query, s->gt_boxes, negatives);
      num::backward(num::scale(l.total, inv_b));
      rec.loss += l.total.item();
      rec.objectness += l.objectness;
      rec.match += l.match;
      rec.regression += l.regression;
    }
    rec.max_grad_norm = std::max(rec.max_grad_norm, num::clip_grad_norm(params, cfg_.clip_norm));
    num::sgd_step(params, sgd_);
  }
  model_.params().zero_grads();

  const double n = static_cast<double>(steps * cfg_.batch_size);
  rec.loss /= n;
  rec.objectness /= n;
  rec.match /= n;
  rec.regression /= n;
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ++epochs_done_;
  return rec;
}

void Trainer::save_state(const std::filesystem::path& path) const {
  auto out = model_.params().entries();
  for (std::size_t i = 0; i < unique_.size(); ++i) {
    out.push_back({kVelocityPrefix + unique_[i].name,
                   num::Tensor::from(unique_[i].tensor.shape(), sgd_.velocity[i])});
  }
  out.push_back({kEpochKey, num::Tensor::scalar(static_cast<double>(epochs_done_))});
  num::save_checkpoint(path, out);
}

void Trainer::load_state(const std::filesystem::path& path) {
  const auto values = num::load_checkpoint(path);
  num::load_into(model_.params(), values);
  bool have_epoch = false;
  std::size_t restored = 0;
  for (const auto& v : values) {
    if (v.name == kEpochKey) {
      epochs_done_ = static_cast<std::size_t>(v.tensor.item());
      have_epoch = true;
      continue;
    }
    if (!v.name.starts_with(kVelocityPrefix)) continue;
    const auto name = v.name.substr(std::char_traits<char>::length(kVelocityPrefix));
    for (std::size_t i = 0; i < unique_.size(); ++i) {
      if (unique_[i].name != name) continue;
      if (v.tensor.numel() != sgd_.velocity[i].size()) throw DataError("velocity shape mismatch for " + name);
      std::copy(v.tensor.data().begin(), v.tensor.data().end(), sgd_.velocity[i].begin());
      ++restored;
    }
  }
  if (!have_epoch || restored != unique_.size()) {
    throw DataError(path.string() + " is not a training-state checkpoint");
  }
}

void save_model(const Detector& model, const std::filesystem::path& path) {
  num::save_checkpoint(path, model.params().entries());
}

void load_model(Detector& model, const std::filesystem::path& path) {
  num::load_into(model.params(), num::load_checkpoint(path));
}

}  // namespace catdet::det
