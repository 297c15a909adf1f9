#include "avsl/audtrans.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace avsl {

using nlohmann::json;

void MaskConfig::validate() const {
  for (double p : {p_time, p_freq}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("mask probabilities must be in [0, 1]");
  }
  for (double f : {max_time_frac, max_freq_frac}) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("mask fractions must be in (0, 1]");
  }
}

Spectrogram mask_spectrogram(const Spectrogram& spec, Rng& rng, const MaskConfig& config, MaskRecord* record) {
  Spectrogram out = spec;
  MaskRecord rec;
  const int n_freq = static_cast<int>(spec.rows());
  const int n_time = static_cast<int>(spec.cols());

  const bool time_on = rng.bernoulli(config.p_time);
  const int max_tw = std::max(1, static_cast<int>(std::floor(config.max_time_frac * n_time)));
  const int tw = rng.uniform_int(1, max_tw);
  const int t0 = rng.uniform_int(0, n_time - tw);
  if (time_on) {
    out.middleCols(t0, tw).setZero();
    rec.time_start = t0;
    rec.time_width = tw;
  }

  const bool freq_on = rng.bernoulli(config.p_freq);
  const int max_fw = std::max(1, static_cast<int>(std::floor(config.max_freq_frac * n_freq)));
  const int fw = rng.uniform_int(1, max_fw);
  const int f0 = rng.uniform_int(0, n_freq - fw);
  if (freq_on) {
    out.middleRows(f0, fw).setZero();
    rec.freq_start = f0;
    rec.freq_width = fw;
  }
  if (record) *record = rec;
  return out;
}

void MixingSchedule::validate() const {
  if (!(alpha_max >= 0.0 && alpha_max < 1.0)) throw ConfigError("alpha_max must be in [0, 1)");
  if (total_epochs < 1) throw ConfigError("total_epochs must be positive");
}

double mixing_coefficient(int epoch, const MixingSchedule& schedule) {
  if (epoch < 0 || epoch >= schedule.total_epochs) {
    throw RangeError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(schedule.total_epochs) + ")");
  }
  if (schedule.total_epochs == 1) return 0.0;
  if (epoch == schedule.total_epochs - 1) return schedule.alpha_max;
  return schedule.alpha_max * static_cast<double>(epoch) / static_cast<double>(schedule.total_epochs - 1);
}

NeighborIndex build_neighbor_index(const Eigen::MatrixXf& embeddings, int epoch) {
  // One embedding per row.
  const Eigen::Index n = embeddings.rows();
  if (n < 2) throw ConfigError("neighbor index needs at least two embeddings");
  if (!embeddings.allFinite()) throw NumericError("neighbor index embeddings must be finite");

  NeighborIndex index;
  index.built_at_epoch = epoch;
  Eigen::MatrixXd unit = embeddings.cast<double>();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = unit.row(i).norm();
    if (norm == 0.0) {
      ++index.zero_norm_count;
    } else {
      unit.row(i) /= norm;
    }
  }
  const Eigen::MatrixXd sim = unit * unit.transpose();
  index.nearest.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = -1;
    double best_sim = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      if (best < 0 || sim(i, j) > best_sim) {
        best = j;
        best_sim = sim(i, j);
      }
    }
    index.nearest[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  return index;
}

NeighborIndex build_neighbor_index(const std::vector<Vector<float>>& embeddings, int epoch) {
  if (embeddings.size() < 2) throw ConfigError("neighbor index needs at least two embeddings");
  Eigen::MatrixXf rows(static_cast<Eigen::Index>(embeddings.size()), embeddings.front().size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].size() != rows.cols()) throw ShapeError("embedding dimensions differ");
    rows.row(static_cast<Eigen::Index>(i)) = embeddings[i].transpose();
  }
  return build_neighbor_index(rows, epoch);
}

Spectrogram mix_audio(const Spectrogram& spec, const Spectrogram& similar, double alpha) {
  if (spec.rows() != similar.rows() || spec.cols() != similar.cols()) {
    throw ShapeError("mix_audio: spectrogram shapes differ");
  }
  if (!(alpha >= 0.0 && alpha < 1.0)) throw RangeError("mix_audio: alpha must be in [0, 1)");
  // spec + alpha * (similar - spec): the same convex combination, exact at both fixed points.
  return spec + static_cast<float>(alpha) * (similar - spec);
}

void to_json(json& j, const MaskConfig& c) {
  j = json{{"p_time", c.p_time}, {"p_freq", c.p_freq}, {"max_time_frac", c.max_time_frac}, {"max_freq_frac", c.max_freq_frac}};
}

void from_json(const json& j, MaskConfig& c) {
  c.p_time = j.value("p_time", c.p_time);
  c.p_freq = j.value("p_freq", c.p_freq);
  c.max_time_frac = j.value("max_time_frac", c.max_time_frac);
  c.max_freq_frac = j.value("max_freq_frac", c.max_freq_frac);
}

void to_json(json& j, const MixingSchedule& s) { j = json{{"alpha_max", s.alpha_max}, {"total_epochs", s.total_epochs}}; }

void from_json(const json& j, MixingSchedule& s) {
  s.alpha_max = j.value("alpha_max", s.alpha_max);
  s.total_epochs = j.value("total_epochs", s.total_epochs);
}

void to_json(json& j, const NeighborIndex& index) {
  json nearest = json::object();
  for (std::size_t i = 0; i < index.nearest.size(); ++i) nearest[std::to_string(i)] = index.nearest[i];
  j = json{{"built_at_epoch", index.built_at_epoch}, {"zero_norm_count", index.zero_norm_count}, {"nearest", nearest}};
}

}  // namespace avsl
