#pragma once

#include "relnet/detector.hpp"
#include "relnet/evaluation.hpp"
#include "relnet/gce.hpp"
#include "relnet/geometry.hpp"
#include "relnet/heatmap_codec.hpp"
#include "relnet/kv_config.hpp"
#include "relnet/losses.hpp"
#include "relnet/param_store.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace relnet {

struct AugConfig {
  double hflip_prob = 0.5;
  double scale_min = 0.6;
  double scale_max = 1.4;
  double shift_min = 0.6;
  double shift_max = 1.4;
  double color_jitter = 0.2;  // multiplicative, per channel
  bool crop = true;
  int crop_size = 128;

  void validate() const;
  /// Leaves every sample unchanged.
  static AugConfig identity();
};

struct Sample {
  Image image;
  LandmarkSet landmarks;
};

/// Flip, scale about the image center, shift by (s - 1) * size / 2, colour
/// jitter, then crop at a random offset. Flip maps x to (W - 1) - x. Landmarks
/// whose centers leave the output are dropped. The same random numbers are
/// drawn whatever the configuration, so the rng advances identically.
Sample augment(const Sample& sample, const AugConfig& cfg, std::mt19937_64& rng);

enum class Phase : int { Landmark = 1, MultiTask = 2, Adversarial = 3 };

struct PhaseInfo {
  Phase phase = Phase::Landmark;
  bool relation = false;  // relation heatmap term active
  bool adversarial = false;  // GCE active
};

struct TrainConfig {
  int epochs_per_step = 10;
  double lr = 5e-4;
  double gce_lr = 5e-4;
  int batch = 8;
  LossWeights weights;
  int gce_period = 3;
  std::uint64_t seed = 0;
  AugConfig augmentation;
  DetectorConfig detector;
  GceConfig gce;

  void validate() const;
  [[nodiscard]] int total_epochs() const { return 3 * epochs_per_step; }

  /// Reads every field by name; unknown keys are an error.
  static TrainConfig from_kv(KeyValueConfig& kv);
  /// Round-trips through from_kv.
  [[nodiscard]] std::string to_kv() const;
};

/// [0, E) landmark only, [E, 2E) multi-task, [2E, 3E) adversarial.
PhaseInfo train_step_schedule(int epoch, const TrainConfig& cfg);

enum class Update { Detector, Gce };

struct StepRecord {
  long step = 0;  // detector updates so far, 1-based
  int epoch = 0;
  Phase phase = Phase::Landmark;
  Update update = Update::Detector;
  LossReport loss;
};

std::string record_to_json(const StepRecord& r);

struct UpdateEvent {
  const StepRecord& record;
  const ParamStore<float>& detector;
  const ParamStore<float>& gce;
};

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoints and loss log
  std::function<void(const UpdateEvent&)> on_update;
  std::function<void(const std::string&)> progress;
};

struct TrainResult {
  ParamStore<float> detector;
  ParamStore<float> gce;
  std::vector<StepRecord> log;
  std::array<ParamStore<float>, 3> phase_detector;
  std::array<ParamStore<float>, 3> phase_gce;
  long detector_updates = 0;
  long gce_updates = 0;
};

/// Three-phase schedule. In the adversarial phase every `gce_period`-th
/// detector update is followed by one evaluator update on the same batch.
/// Deterministic for a fixed config. Throws std::runtime_error on a
/// non-finite loss, naming the step.
TrainResult run_training(const std::vector<Sample>& dataset, const TrainConfig& cfg, const TrainOptions& opts = {});

/// Forward + decode on one image.
std::vector<Detection> detect(const Detector<float>& net, const ParamStore<float>& params, const Image& image,
                              int top_k = 20);

MetricsReport evaluate_detector(const Detector<float>& net, const ParamStore<float>& params,
                                const std::vector<Sample>& samples, int top_k = 20);

/// Mean evaluator score of ground-truth pairs (Y;R) and of fully predicted
/// pairs (Yhat;Rhat) over `samples`.
struct GceOrdering {
  double ground_truth = 0.0;
  double predicted = 0.0;
};
GceOrdering gce_ordering(const Detector<float>& net, const ParamStore<float>& det_params, const Gce<float>& gce,
                         const ParamStore<float>& gce_params, const std::vector<Sample>& samples);

}  // namespace relnet
