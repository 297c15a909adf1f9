#pragma once

#include "avsl/audtrans.hpp"
#include "avsl/common.hpp"
#include "avsl/data_synth.hpp"
#include "avsl/encoders.hpp"
#include "avsl/objectives.hpp"
#include "avsl/vistrans.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace avsl {

/// Which transforms and objectives are active; presets A-F are the ablation rows.
struct AblationFlags {
  bool use_app = true;
  bool use_geo = true;
  bool use_mask = true;
  bool use_mix = true;
  bool use_lgeo = true;

  static AblationFlags preset(char name);
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 1e-4;
  int epochs = 80;
  double lambda_geo = kDefaultLambdaGeo;
  ContrastiveConfig contrastive;
  double alpha_max = 0.65;
  MaskConfig mask;
  AppearanceConfig appearance;
  GeometricConfig geometric;
  std::uint64_t seed = 0;
  int checkpoint_every = 10;
  AblationFlags flags;
  // Branch 2 reuses branch 1's audio augmentation draw when set.
  bool shared_audio_draw = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  ArchConfig arch = ArchConfig::synthetic_default();

  MixingSchedule mixing() const { return MixingSchedule{alpha_max, std::max(1, epochs)}; }
  void validate() const;
  /// FNV-1a over the canonical JSON of every field that affects the loss sequence.
  std::uint64_t hash() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const AblationFlags& f);
void from_json(const nlohmann::json& j, AblationFlags& f);

/// Preset row applied on top of a base config (only the flags change).
TrainConfig with_preset(TrainConfig base, char preset);

// ---------------------------------------------------------------------------

struct AdamState {
  ParamSet<float> m_visual, v_visual, m_audio, v_audio;
  std::int64_t step = 0;
};

struct Checkpoint {
  ModelParams<float> params;
  AdamState optimizer;
  int epoch = 0;  // completed epochs
  std::string rng_state;
  std::uint64_t config_hash = 0;
  nlohmann::json config;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Applies one Adam update in place.
void adam_step(ModelParams<float>& params, AdamState& state, const ParamSet<float>& grad_visual,
               const ParamSet<float>& grad_audio, const TrainConfig& config);

// ---------------------------------------------------------------------------

/// One training pair as seen by the trainer: no labels.
struct TrainingItem {
  std::size_t index = 0;  // manifest index, keys the augmentation streams
  std::string sample_id;
  const Frame* frame = nullptr;
  const Spectrogram* spectrogram = nullptr;
  const Spectrogram* mix_partner = nullptr;  // nearest neighbour, when mixing
};

struct BranchRecord {
  std::vector<std::string> sample_ids;
  std::vector<AppearanceParams> appearance;
  std::vector<GeometricParams> geometric;
  std::vector<MaskRecord> masks;
  std::vector<Grid<float>> self_responses;  // S_ii per sample
  std::uint64_t params_version = 0;
};

struct SiameseGradients {
  ParamSet<float> visual;
  ParamSet<float> audio;
};

/// Raised by forward_siamese when a loss term is not finite; carries the
/// branch records of the offending batch.
struct NonFiniteLoss : NumericError {
  NonFiniteLoss(const std::string& what, nlohmann::json records) : NumericError(what), branch_records(std::move(records)) {}
  nlohmann::json branch_records;
};

struct SiameseOutput {
  LossBreakdown losses;
  BranchRecord branch1, branch2;
};

/// Both weight-tied branches for one batch. Augmentation draws come from
/// streams keyed by (seed, epoch, item index, branch).
SiameseOutput forward_siamese(std::span<const TrainingItem> batch, const ModelParams<float>& params,
                              const TrainConfig& config, int epoch, double alpha,
                              SiameseGradients* grads = nullptr, std::uint64_t params_version = 0);

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  LossBreakdown losses;
  double alpha = 0;
};

void to_json(nlohmann::json& j, const StepRecord& r);
void to_json(nlohmann::json& j, const BranchRecord& r);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // log + checkpoints when set
  std::optional<Checkpoint> resume;
  bool allow_config_mismatch = false;
  int stop_after_epoch = -1;  // stop once this many epochs are complete (-1: run all)
  std::function<void(const StepRecord&)> on_step;
  std::function<void(int epoch, double mean_loss)> on_epoch;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepRecord> log;
  std::uint64_t label_reads = 0;  // label reads observed during training; always 0
};

TrainResult train(const DatasetManifest& manifest, const SplitSpec& splits, const TrainConfig& config,
                  const TrainOptions& options = {});

/// Per-epoch mean of l_total from a step log.
std::vector<double> epoch_mean_losses(const std::vector<StepRecord>& log);

std::vector<StepRecord> read_training_log(const std::filesystem::path& path);

}  // namespace avsl
