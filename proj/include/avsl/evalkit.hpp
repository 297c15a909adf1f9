#pragma once

#include "avsl/common.hpp"
#include "avsl/data_synth.hpp"
#include "avsl/encoders.hpp"

#include "json.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace avsl {

// ---------------------------------------------------------------------------
// Localization

/// Bilinear resize with pixel-center alignment and edge clamping.
Grid<float> upsample_bilinear(const Grid<float>& map, int height, int width);

/// Min-max normalization to [0,1]; a constant map becomes all 0.5.
Grid<float> normalize_min_max(const Grid<float>& map);

/// Upsample, normalize, then keep pixels strictly above the threshold.
Mask localize_from_response(const Grid<float>& response, int height, int width, double map_threshold = 0.5);

/// Binary localization mask for one frame/spectrogram pair (no augmentation).
Mask localize(const Frame& frame, const Spectrogram& spec, const ModelParams<float>& params, double map_threshold = 0.5);

/// Response map of a frame against its own audio.
Grid<float> response_for(const Frame& frame, const Spectrogram& spec, const ModelParams<float>& params);

Mask rasterize_box(const Box& box, int height, int width);

/// |pred & gt| / |pred | gt|. Throws EvaluationError for an empty gt or mismatched rasters.
double ciou(const Mask& pred, const Mask& gt);

struct LocalizationReport {
  std::vector<std::string> sample_ids;
  std::vector<double> ciou;
  double success_rate_at_0_5 = 0;
  double auc = 0;
  int n_samples = 0;
  int skipped = 0;
  nlohmann::json config;
};

inline constexpr double kAucStep = 0.05;

/// Fraction of samples with ciou >= threshold; a zero cIoU never counts as a hit.
double success_rate(std::span<const double> cious, double threshold);

/// Trapezoid area under success_rate(t) for t = 0, step, ..., 1.
double auc_from_cious(std::span<const double> cious, double step = kAucStep);

/// Builds a report from per-sample scores. Throws EvaluationError when empty.
LocalizationReport summarize_localization(std::vector<std::string> ids, std::vector<double> cious,
                                          double success_threshold = 0.5);

struct LocalizationOptions {
  double map_threshold = 0.5;
  double success_threshold = 0.5;
};

LocalizationReport evaluate_localization(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                                         const ModelParams<float>& params, const LocalizationOptions& options = {});

/// Test ids split by whether their category was seen in training.
struct OpenSetIds {
  std::vector<std::string> heard;
  std::vector<std::string> unheard;
};
OpenSetIds open_set_partition(const DatasetManifest& manifest, const SplitSpec& splits);

// ---------------------------------------------------------------------------
// Retrieval

struct RetrievalReport {
  std::map<int, double> a_at_k;
  std::map<int, double> p_at_k;
  int n_queries = 0;
  int skipped = 0;  // queries whose category has no other member
};

/// Candidate indices ordered by descending cosine similarity to `query`,
/// ties broken by smaller index, with `exclude` removed.
std::vector<std::size_t> rank_by_cosine(const Vector<float>& query, const Eigen::MatrixXf& candidates,
                                        std::size_t exclude);

/// Row i of `queries` is scored against every row of `candidates` except row i.
RetrievalReport retrieval_from_embeddings(const Eigen::MatrixXf& queries, const Eigen::MatrixXf& candidates,
                                          const std::vector<int>& categories, const std::vector<int>& ks);

RetrievalReport audio_retrieval(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                                const ModelParams<float>& params, const std::vector<int>& ks = {1, 5, 10});

/// Audio queries against spatially average-pooled image features.
RetrievalReport cross_modal_retrieval(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                                      const ModelParams<float>& params, const std::vector<int>& ks = {1, 5, 10});

/// Expected A@K of a uniformly random ranking over the other samples.
double chance_accuracy_at_k(const std::vector<int>& categories, int k);

void to_json(nlohmann::json& j, const LocalizationReport& r);
void to_json(nlohmann::json& j, const RetrievalReport& r);

}  // namespace avsl
