#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "catdet/data/dataset.hpp"
#include "catdet/detector/detector.hpp"
#include "catdet/numerics/sgd.hpp"

namespace catdet::det {

struct TrainConfig {
  std::size_t epochs = 10;
  num::SgdConfig sgd;
  // lr is multiplied by decay_factor once for every listed epoch already completed.
  std::vector<std::size_t> decay_epochs{5, 9};
  double decay_factor = 0.1;
  std::size_t batch_size = 4;
  double clip_norm = 10.0;  // global gradient norm cap per step; 0 disables
  std::uint64_t seed = 1;
  std::size_t max_samples = 0;  // 0 uses the whole train split
};

// Learning rate during 1-based epoch e.
double learning_rate(const TrainConfig& cfg, std::size_t epoch);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double objectness = 0.0;
  double match = 0.0;
  double regression = 0.0;
  double max_grad_norm = 0.0;  // largest pre-clipping norm over the epoch's steps
  double seconds = 0.0;
};

// Mini-batch SGD over the train split. Gradients of batch_size samples are
// averaged before each step; a trailing partial batch is dropped. The sample
// order of epoch e depends only on (seed, e), so a resumed run replays the
// same steps as an uninterrupted one.
class Trainer {
 public:
  Trainer(Detector& model, const data::Dataset& ds, TrainConfig cfg);

  EpochRecord run_epoch();
  bool finished() const { return epochs_done_ >= cfg_.epochs; }
  std::size_t epochs_done() const { return epochs_done_; }
  const TrainConfig& config() const { return cfg_; }

  // Parameters, momentum buffers and the epoch counter.
  void save_state(const std::filesystem::path& path) const;
  void load_state(const std::filesystem::path& path);

 private:
  Detector& model_;
  TrainConfig cfg_;
  std::vector<const data::OneShotSample*> samples_;
  std::vector<num::NamedTensor> unique_;  // first name of each distinct parameter buffer
  num::SgdState sgd_;
  std::size_t epochs_done_ = 0;
};

// Weights-only checkpoint of a model.
void save_model(const Detector& model, const std::filesystem::path& path);
void load_model(Detector& model, const std::filesystem::path& path);

}  // namespace catdet::det
