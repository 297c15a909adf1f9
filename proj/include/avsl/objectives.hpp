#pragma once

#include "avsl/common.hpp"
#include "avsl/encoders.hpp"
#include "avsl/vistrans.hpp"

#include "json.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace avsl {

/// How the negatives of an anchor enter the loss.
///   sum: N is the plain sum of the unpaired mean responses plus the
///        background mean, and the loss is softplus(N - P).
///   set: every negative is its own logit, i.e. exp(N) is the sum of exp over
///        the unpaired means and the background mean (InfoNCE form).
enum class NegativeMode { sum, set };

/// How the response of image i to an unpaired audio j is reduced to a scalar.
///   mean:   plain average over all pixels.
///   masked: foreground-weighted average under that pair's own pseudo-mask,
///           pooled the same way as the positive.
enum class UnpairedPooling { mean, masked };

struct ContrastiveConfig {
  double epsilon = 0.65;
  double tau = 0.03;
  NegativeMode negatives = NegativeMode::sum;
  double temperature = 1.0;  // logits are divided by this
  UnpairedPooling unpaired = UnpairedPooling::mean;

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(epsilon > -1.0 && epsilon < 1.0)) throw ConfigError("epsilon must be in (-1, 1)");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  }
};

NLOHMANN_JSON_SERIALIZE_ENUM(NegativeMode, {{NegativeMode::sum, "sum"}, {NegativeMode::set, "set"}})
NLOHMANN_JSON_SERIALIZE_ENUM(UnpairedPooling, {{UnpairedPooling::mean, "mean"}, {UnpairedPooling::masked, "masked"}})

inline void to_json(nlohmann::json& j, const ContrastiveConfig& c) {
  j = {{"epsilon", c.epsilon}, {"tau", c.tau}, {"negatives", c.negatives}, {"temperature", c.temperature},
       {"unpaired", c.unpaired}};
}
inline void from_json(const nlohmann::json& j, ContrastiveConfig& c) {
  c.epsilon = j.value("epsilon", c.epsilon);
  c.tau = j.value("tau", c.tau);
  c.negatives = j.value("negatives", c.negatives);
  c.temperature = j.value("temperature", c.temperature);
  c.unpaired = j.value("unpaired", c.unpaired);
}

inline constexpr double kNormFloor = 1e-8;
inline constexpr double kAreaFloor = 1e-8;

// ---------------------------------------------------------------------------
// Response maps

/// Cosine similarity between every audio embedding and every visual pixel.
/// values(j, i * h * w + p) is the response of image i, pixel p to audio j.
template <typename Scalar>
struct ResponseMatrix {
  int height = 0;
  int width = 0;
  Features<Scalar> values;

  int pixels() const { return height * width; }
  int audio_count() const { return static_cast<int>(values.rows()); }
  int image_count() const { return pixels() > 0 ? static_cast<int>(values.cols()) / pixels() : 0; }

  /// Map of image i against audio j.
  Grid<Scalar> pair(int image, int audio) const {
    Grid<Scalar> g(height, width);
    Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(g.data(), pixels()) =
        values.row(audio).segment(static_cast<Eigen::Index>(image) * pixels(), pixels());
    return g;
  }
};

template <typename Scalar>
struct ResponseCache {
  Features<Scalar> audio_unit, visual_unit;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> audio_norm, visual_norm;  // clamped norms
  Eigen::Array<bool, 1, Eigen::Dynamic> audio_clamped, visual_clamped;
};

namespace detail {

template <typename Scalar>
void unit_columns(const Features<Scalar>& x, Features<Scalar>& unit, Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& norm,
                  Eigen::Array<bool, 1, Eigen::Dynamic>& clamped) {
  norm = x.colwise().norm();
  clamped = norm.array() < static_cast<Scalar>(kNormFloor);
  norm = norm.cwiseMax(static_cast<Scalar>(kNormFloor));
  unit = x.array().rowwise() / norm.array();
}

template <typename Scalar>
Features<Scalar> unit_columns_backward(const Features<Scalar>& unit, const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& norm,
                                       const Eigen::Array<bool, 1, Eigen::Dynamic>& clamped, const Features<Scalar>& d_unit) {
  Features<Scalar> dx = d_unit;
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> proj = (unit.array() * d_unit.array()).colwise().sum().matrix();
  for (Eigen::Index c = 0; c < dx.cols(); ++c) {
    if (!clamped(c)) dx.col(c) -= unit.col(c) * proj(c);
  }
  dx.array().rowwise() /= norm.array();
  return dx;
}

}  // namespace detail

/// audio: c x Ba embeddings; visual: c x (Bv * h * w) feature maps.
template <typename Scalar>
ResponseMatrix<Scalar> response_matrix(const Features<Scalar>& audio, const Features<Scalar>& visual, int height,
                                       int width, ResponseCache<Scalar>* cache = nullptr) {
  if (audio.rows() != visual.rows()) {
    throw ShapeError("audio dim " + std::to_string(audio.rows()) + " differs from visual channels " +
                     std::to_string(visual.rows()));
  }
  if (height * width == 0 || visual.cols() % (height * width) != 0) throw ShapeError("visual block is not a stack of h x w maps");
  ResponseCache<Scalar> local;
  ResponseCache<Scalar>& c = cache ? *cache : local;
  detail::unit_columns(audio, c.audio_unit, c.audio_norm, c.audio_clamped);
  detail::unit_columns(visual, c.visual_unit, c.visual_norm, c.visual_clamped);
  ResponseMatrix<Scalar> r;
  r.height = height;
  r.width = width;
  r.values.noalias() = c.audio_unit.transpose() * c.visual_unit;
  return r;
}

template <typename Scalar>
void response_matrix_backward(const ResponseCache<Scalar>& cache, const Features<Scalar>& d_values,
                              Features<Scalar>& d_audio, Features<Scalar>& d_visual) {
  const Features<Scalar> d_audio_unit = cache.visual_unit * d_values.transpose();
  const Features<Scalar> d_visual_unit = cache.audio_unit * d_values;
  d_audio = detail::unit_columns_backward(cache.audio_unit, cache.audio_norm, cache.audio_clamped, d_audio_unit);
  d_visual = detail::unit_columns_backward(cache.visual_unit, cache.visual_norm, cache.visual_clamped, d_visual_unit);
}

/// Single audio embedding against one feature map.
template <typename Scalar>
Grid<Scalar> response_map(const AudioEmbedding<Scalar>& a, const ImageFeatureMap<Scalar>& v) {
  if (a.size() != v.values.rows()) throw ShapeError("response_map: channel dimensions differ");
  const Features<Scalar> audio = a;
  return response_matrix<Scalar>(audio, v.values, v.height, v.width).pair(0, 0);
}

// ---------------------------------------------------------------------------
// Pseudo-mask and contrastive objective

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  return z >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-z)) : std::exp(z) / (Scalar(1) + std::exp(z));
}

template <typename Scalar>
Scalar softplus(Scalar z) {
  return z > Scalar(0) ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

template <typename Derived>
auto pseudo_mask(const Eigen::MatrixBase<Derived>& response, const ContrastiveConfig& config) {
  using Scalar = typename Derived::Scalar;
  const auto eps = static_cast<Scalar>(config.epsilon);
  const auto tau = static_cast<Scalar>(config.tau);
  return response.unaryExpr([eps, tau](Scalar s) { return sigmoid<Scalar>((s - eps) / tau); }).eval();
}

namespace detail {

/// Mean of s weighted by sigmoid(+-(s - eps) / tau), computed with weights
/// rescaled by their largest entry so the mean stays defined when the area
/// underflows (it then tends to the top-weighted pixels).
template <typename Scalar>
struct SoftPool {
  Scalar value = 0;
  Vector<Scalar> grad;  // d value / d s
  bool clamped = false;
};

template <typename Scalar, typename Derived>
SoftPool<Scalar> soft_pool(const Eigen::MatrixBase<Derived>& s, Scalar eps, Scalar tau, bool foreground, bool with_grad) {
  const Scalar sign = foreground ? Scalar(1) : Scalar(-1);
  const Vector<Scalar> z = (s.array() - eps) / tau;
  const Vector<Scalar> log_w = z.unaryExpr([sign](Scalar v) { return -softplus(-sign * v); });
  const Scalar top = log_w.maxCoeff();
  const Vector<Scalar> w = (log_w.array() - top).exp().matrix();
  const Scalar w_sum = w.sum();
  SoftPool<Scalar> pool;
  pool.value = w.dot(s) / w_sum;
  pool.clamped = std::exp(top) * w_sum < static_cast<Scalar>(kAreaFloor);
  if (with_grad) {
    // d(weighted mean)/ds_p = w_p * (1 + (s_p - mean) * dlog(w_p)/ds_p) / sum(w)
    const Vector<Scalar> dlog = z.unaryExpr([sign, tau](Scalar v) { return sign * sigmoid(-sign * v) / tau; });
    pool.grad = (w.array() * (Scalar(1) + (s.array() - pool.value) * dlog.array()) / w_sum).matrix();
  }
  return pool;
}

}  // namespace detail

template <typename Scalar>
struct ContrastiveResult {
  Scalar loss = 0;
  Vector<Scalar> positive;  // P_i
  Vector<Scalar> negative;  // N_i (log-sum-exp of the negatives in set mode)
  int clamped_areas = 0;  // mask or background areas that fell below the floor
};

/// Batch contrastive loss with foreground pseudo-masks. Requires a square
/// response matrix (audio j paired with image j). When d_values is given it
/// receives dLoss/dvalues.
template <typename Scalar>
ContrastiveResult<Scalar> contrastive_loss(const ResponseMatrix<Scalar>& responses, const ContrastiveConfig& config,
                                           Features<Scalar>* d_values = nullptr) {
  const int batch = responses.audio_count();
  if (batch < 1 || responses.image_count() != batch) throw ShapeError("contrastive_loss needs a B x B response grid");
  const Eigen::Index hw = responses.pixels();
  const auto eps = static_cast<Scalar>(config.epsilon);
  const auto tau = static_cast<Scalar>(config.tau);
  const auto temp = static_cast<Scalar>(config.temperature);
  const bool as_set = config.negatives == NegativeMode::set;
  const bool masked = config.unpaired == UnpairedPooling::masked;

  ContrastiveResult<Scalar> result;
  result.positive.resize(batch);
  result.negative.resize(batch);
  if (d_values) d_values->setZero(responses.values.rows(), responses.values.cols());

  Scalar total(0);
  Vector<Scalar> unpaired(batch);  // pooled response of image i to audio j
  std::vector<Vector<Scalar>> d_unpaired(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    const Eigen::Index offset = static_cast<Eigen::Index>(i) * hw;
    const auto s = responses.values.row(i).segment(offset, hw).transpose();
    const auto fg = detail::soft_pool<Scalar>(s, eps, tau, true, d_values != nullptr);
    const auto bg = detail::soft_pool<Scalar>(s, eps, tau, false, d_values != nullptr);
    result.clamped_areas += static_cast<int>(fg.clamped) + static_cast<int>(bg.clamped);
    const Scalar positive = fg.value;
    const Scalar background = bg.value;
    for (int j = 0; j < batch; ++j) {
      if (j == i) {
        unpaired(j) = Scalar(0);
      } else if (masked) {
        auto pool = detail::soft_pool<Scalar>(responses.values.row(j).segment(offset, hw).transpose(), eps, tau, true,
                                              d_values != nullptr);
        unpaired(j) = pool.value;
        d_unpaired[static_cast<std::size_t>(j)] = std::move(pool.grad);
      } else {
        unpaired(j) = responses.values.row(j).segment(offset, hw).mean();
      }
    }

    // dN/d(background) and dN/d(unpaired_j); all ones in sum mode.
    Scalar w_background(1);
    Vector<Scalar> w_unpaired = Vector<Scalar>::Ones(batch);
    w_unpaired(i) = Scalar(0);
    Scalar negative;
    if (as_set) {
      Scalar top = background;
      for (int j = 0; j < batch; ++j) {
        if (j != i) top = std::max(top, unpaired(j));
      }
      w_background = std::exp((background - top) / temp);
      for (int j = 0; j < batch; ++j) w_unpaired(j) = j == i ? Scalar(0) : std::exp((unpaired(j) - top) / temp);
      const Scalar partition = w_background + w_unpaired.sum();
      w_background /= partition;
      w_unpaired /= partition;
      negative = top + temp * std::log(partition);
    } else {
      negative = background + unpaired.sum();
    }
    result.positive(i) = positive;
    result.negative(i) = negative;

    // -log(e^(P/T) / (e^(P/T) + e^(N/T))) = softplus((N - P) / T)
    const Scalar gap = (negative - positive) / temp;
    total += softplus(gap);

    if (d_values) {
      const Scalar w = sigmoid(gap) / (temp * static_cast<Scalar>(batch));  // dl/dN; dl/dP = -w
      d_values->row(i).segment(offset, hw) += (w * w_background * bg.grad - w * fg.grad).transpose();
      for (int j = 0; j < batch; ++j) {
        if (j == i) continue;
        auto target = d_values->row(j).segment(offset, hw);
        if (masked) {
          target += (w * w_unpaired(j) * d_unpaired[static_cast<std::size_t>(j)]).transpose();
        } else {
          target.array() += w * w_unpaired(j) / static_cast<Scalar>(hw);
        }
      }
    }
  }
  result.loss = total / static_cast<Scalar>(batch);
  return result;
}

// ---------------------------------------------------------------------------
// Geometric consistency

/// Root-mean-square residual between s2 and the warp of s1, restricted to
/// pixels whose warp source lies inside the grid. Zero when no pixel is valid.
template <typename Scalar>
Scalar equivariance_loss(const Grid<Scalar>& s1, const Grid<Scalar>& s2, const GeometricParams& geo,
                         Grid<Scalar>* d_s1 = nullptr, Grid<Scalar>* d_s2 = nullptr) {
  if (s1.rows() != s2.rows() || s1.cols() != s2.cols()) throw ShapeError("equivariance_loss: map shapes differ");
  const WarpPlan plan(static_cast<int>(s1.rows()), static_cast<int>(s1.cols()), geo);
  const Eigen::Map<const Vector<Scalar>> flat1(s1.data(), s1.size());
  const Eigen::Map<const Vector<Scalar>> flat2(s2.data(), s2.size());
  const Vector<Scalar> warped = plan.apply(flat1);

  Vector<Scalar> residual = Vector<Scalar>::Zero(s1.size());
  Eigen::Index valid = 0;
  for (Eigen::Index p = 0; p < s1.size(); ++p) {
    if (!plan.tap(static_cast<int>(p)).valid) continue;
    residual(p) = flat2(p) - warped(p);
    ++valid;
  }
  if (d_s1) d_s1->setZero(s1.rows(), s1.cols());
  if (d_s2) d_s2->setZero(s2.rows(), s2.cols());
  if (valid == 0) return Scalar(0);
  const Scalar loss = std::sqrt(residual.squaredNorm() / static_cast<Scalar>(valid));
  if (loss > Scalar(0) && (d_s1 || d_s2)) {
    const Vector<Scalar> g = residual / (static_cast<Scalar>(valid) * loss);
    if (d_s2) Eigen::Map<Vector<Scalar>>(d_s2->data(), d_s2->size()) = g;
    if (d_s1) Eigen::Map<Vector<Scalar>>(d_s1->data(), d_s1->size()) = -plan.apply_transpose(g);
  }
  return loss;
}

// ---------------------------------------------------------------------------

inline constexpr double kDefaultLambdaGeo = 2.0;

struct LossBreakdown {
  double l_cl_branch1 = 0;
  double l_cl_branch2 = 0;
  double l_geo = 0;
  double l_total = 0;
  double lambda_geo = kDefaultLambdaGeo;
};

LossBreakdown total_loss(double l1, double l2, double l_geo, double lambda_geo = kDefaultLambdaGeo);

void to_json(nlohmann::json& j, const LossBreakdown& b);

}  // namespace avsl
