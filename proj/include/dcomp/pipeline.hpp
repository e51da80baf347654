// SPDX-License-Identifier: Apache-2.0
//
// Model topologies, experiment configuration and the train/evaluate loop.
//
//   backbone_only              output = fused coarse depth
//   deform_on_coarse           output = refine(fused coarse depth)
//   variant1_deform_on_sparse  output = refine(raw sparse input, 0 = missing)
//   variant2_deform_on_nn      output = refine(nearest-neighbour densified input)
//
// Every refining topology takes its guidance features from the same
// two-branch backbone and applies the refinement exactly once per frame.

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcomp/backbone.hpp"
#include "dcomp/checkpoint.hpp"
#include "dcomp/dataset.hpp"
#include "dcomp/deform.hpp"
#include "dcomp/metrics.hpp"
#include "dcomp/synth.hpp"
#include "dcomp/train.hpp"

namespace dcomp {

enum class Variant { kBackboneOnly, kDeformOnSparse, kDeformOnNn, kDeformOnCoarse };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);
/// All four, in reporting order.
const std::vector<Variant>& all_variants();

struct ModelConfig {
  Variant variant = Variant::kDeformOnCoarse;
  BackboneConfig backbone;
  std::size_t k = 3;
  bool subtract_mean_weights = false;
  double init_weight_bias = kInitialWeightBias;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct ModelOutput {
  Tensor depth;   // [N,1,H,W] final prediction
  Tensor coarse;  // [N,1,H,W] fused backbone depth
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  /// rgb [N,3,H,W], sparse [N,1,H,W] (meters, 0 = missing).
  ModelOutput forward(const Tensor& rgb, const Tensor& sparse) const;

  const ModelConfig& config() const { return cfg_; }
  ParamList params() const;
  bool refines() const { return cfg_.variant != Variant::kBackboneOnly; }

  /// Copy with constant parameters, for evaluation. Copies (frozen or not)
  /// share the refinement counter with the original.
  Model frozen() const;

  /// Number of frames the refinement operator has processed through this
  /// model object (each frame counts once per application).
  std::size_t refine_frames() const { return counter_->load(); }
  void reset_refine_counter() { counter_->store(0); }

 private:
  Model(const ModelConfig& cfg, const Backbone& backbone, const RefineHeads& heads);

  ModelConfig cfg_;
  Backbone backbone_;
  RefineHeads heads_;
  std::shared_ptr<std::atomic<std::size_t>> counter_;
};

/// Nearest-neighbour densification of each frame of a [N,1,H,W] sparse batch.
Tensor nearest_densify_batch(const Tensor& sparse);

// ---------------------------------------------------------------------------

struct DataConfig {
  std::string root;  // on-disk dataset with train/val splits; empty = synthetic
  SceneConfig scene;
  std::size_t n_train = 32;
  std::size_t n_val = 8;
  std::uint64_t seed = 2024;
};

struct ExperimentConfig {
  ModelConfig model;
  LossConfig loss;
  OptimConfig optim;
  AugmentConfig augment;
  DataConfig data;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;
  // Set when the backbone init depth is derived from the training targets.
  bool auto_init_depth = true;
  nlohmann::json source;  // the document this was parsed from
};

/// Requires "seed"; everything else has defaults. Unknown keys are rejected.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

struct DatasetSplits {
  std::vector<Frame> train;
  std::vector<Frame> val;
};

DatasetSplits load_dataset(const DataConfig& cfg);

struct RunResult {
  Checkpoint checkpoint;  // best-validation parameters
  MetricReport val_report;
  std::size_t best_epoch = 0;
  std::vector<double> epoch_train_loss;
  std::string log;  // line-delimited JSON
};

/// Mean loss of `model` over the frames without augmentation.
double dataset_loss(const Model& model, const std::vector<Frame>& frames, const LossConfig& loss);

/// Evaluates on full frames, one at a time.
MetricReport evaluate(const Model& model, const std::vector<Frame>& frames);

/// Trains cfg.model from scratch with the given seed and keeps the epoch
/// with the lowest validation RMSE. `on_log` receives each log line.
RunResult run_variant(const ExperimentConfig& cfg, const DatasetSplits& data, std::uint64_t seed,
                      const std::function<void(const std::string&)>& on_log = {});

Model model_from_checkpoint(const Checkpoint& ckpt);
Checkpoint make_checkpoint(const Model& model, nlohmann::json meta);

/// Runs the model on a single frame. Frames whose size is not a multiple of
/// the backbone stride are edge-padded and the prediction cropped back.
DepthMap infer(const Model& model, const RgbImage& rgb, const DepthMap& sparse);

// ---------------------------------------------------------------------------
// Multi-variant, multi-seed comparison.

struct StudyRow {
  Variant variant;
  std::uint64_t seed;
  MetricReport report;
};

struct VariantStudy {
  std::vector<StudyRow> rows;

  /// Per-metric median over the seeds of one variant.
  MetricReport median(Variant v) const;
  /// Header `variant,method,rmse_mm,mae_mm,irmse_1perkm,imae_1perkm`; one row
  /// per seed (method `seed=<s>`) plus a `median` row per variant.
  std::string csv() const;
};

inline constexpr const char* kVariantCsvHeader = "variant,method,rmse_mm,mae_mm,irmse_1perkm,imae_1perkm";

/// Log lines passed to `on_log` are the run_variant records with "variant"
/// and "seed" fields added.
VariantStudy run_variant_study(const ExperimentConfig& cfg, const DatasetSplits& data,
                               const std::vector<Variant>& variants, const std::vector<std::uint64_t>& seeds,
                               const std::function<void(const std::string&)>& on_log = {});

nlohmann::json to_json(const SceneConfig& cfg);
SceneConfig scene_config_from_json(const nlohmann::json& j);

}  // namespace dcomp
