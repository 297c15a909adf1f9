#pragma once

#include "avsl/common.hpp"

#include "json.hpp"

#include <vector>

namespace avsl {

struct MaskConfig {
  double p_time = 0.8;
  double p_freq = 0.8;
  double max_time_frac = 0.2;
  double max_freq_frac = 0.2;

  void validate() const;
};

/// Record of the bands a mask_spectrogram call zeroed; width 0 means not applied.
struct MaskRecord {
  int time_start = 0, time_width = 0;
  int freq_start = 0, freq_width = 0;
};

Spectrogram mask_spectrogram(const Spectrogram& spec, Rng& rng, const MaskConfig& config,
                             MaskRecord* record = nullptr);

struct MixingSchedule {
  double alpha_max = 0.65;
  int total_epochs = 80;

  void validate() const;
};

/// alpha = alpha_max * epoch / (total_epochs - 1); 0 when there is a single epoch.
double mixing_coefficient(int epoch, const MixingSchedule& schedule);

struct NeighborIndex {
  std::vector<std::size_t> nearest;
  int built_at_epoch = 0;
  int zero_norm_count = 0;
};

/// Most cosine-similar other embedding for each row; ties go to the smallest index.
NeighborIndex build_neighbor_index(const Eigen::MatrixXf& embeddings, int epoch = 0);
NeighborIndex build_neighbor_index(const std::vector<Vector<float>>& embeddings, int epoch = 0);

/// (1 - alpha) * spec + alpha * similar.
Spectrogram mix_audio(const Spectrogram& spec, const Spectrogram& similar, double alpha);

void to_json(nlohmann::json& j, const MaskConfig& c);
void from_json(const nlohmann::json& j, MaskConfig& c);
void to_json(nlohmann::json& j, const MixingSchedule& s);
void from_json(const nlohmann::json& j, MixingSchedule& s);
void to_json(nlohmann::json& j, const NeighborIndex& index);

}  // namespace avsl
