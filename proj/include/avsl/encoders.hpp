#pragma once

#include "avsl/common.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace avsl {

struct StageSpec {
  int out_channels = 16;
  int kernel = 3;
  int stride = 2;
  int padding = 1;
};

/// Strided conv stages (conv -> channel norm -> relu) followed by a linear
/// 1x1 projection to embed_dim.
/// Normalization after each convolution.
///   pixel:  each pixel's channel vector to zero mean, unit variance. Blind to
///           the amplitude of uniform single-channel input.
///   sample: all channels and pixels of one sample together (one-group
///           group norm); keeps contrast between positions.
enum class NormKind { pixel, sample };

NLOHMANN_JSON_SERIALIZE_ENUM(NormKind, {{NormKind::pixel, "pixel"}, {NormKind::sample, "sample"}})

struct EncoderArch {
  int in_channels = 3;
  int input_height = 128;
  int input_width = 128;
  std::vector<StageSpec> stages;
  int embed_dim = 64;
  // Padding wraps around the opposite edge instead of reading zeros, so no
  // feature can tell where the frame border is.
  bool circular_padding = false;
  // Appends a channel holding the row position in [-1, 1] to the input, so a
  // pooled embedding can still tell which rows (frequency bands) were active.
  bool row_coordinate = false;
  NormKind norm = NormKind::pixel;

  int conv_in_channels() const { return in_channels + (row_coordinate ? 1 : 0); }
  int output_height() const;
  int output_width() const;
  void validate(const char* which) const;
};

struct ArchConfig {
  EncoderArch visual;
  EncoderArch audio;

  void validate() const;

  /// 128x128 frames -> 8x8x64 visual map; 64x64 spectrograms -> 64-d audio embedding.
  static ArchConfig synthetic_default(int image_size = 128, int spec_size = 64);
  /// 224x224 frames -> 14x14x512, 512-d audio embedding.
  static ArchConfig paper_scale(int spec_size = 64);
};

void to_json(nlohmann::json& j, const ArchConfig& a);
void from_json(const nlohmann::json& j, ArchConfig& a);

template <typename Scalar>
using ParamSet = std::map<std::string, Features<Scalar>>;

template <typename Scalar = float>
struct ModelParams {
  ArchConfig arch;
  ParamSet<Scalar> visual;
  ParamSet<Scalar> audio;

  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out;
    out.arch = arch;
    for (const auto& [k, v] : visual) out.visual[k] = v.template cast<Other>();
    for (const auto& [k, v] : audio) out.audio[k] = v.template cast<Other>();
    return out;
  }

  bool all_finite() const {
    for (const auto* set : {&visual, &audio}) {
      for (const auto& [k, v] : *set) {
        if (!v.allFinite()) return false;
      }
    }
    return true;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* set : {&visual, &audio}) {
      for (const auto& [k, v] : *set) n += static_cast<std::size_t>(v.size());
    }
    return n;
  }
};

/// Deterministic fan-in scaled initialization.
ModelParams<float> init_parameters(std::uint64_t seed, const ArchConfig& arch);

template <typename Scalar>
ParamSet<Scalar> zeros_like(const ParamSet<Scalar>& params) {
  ParamSet<Scalar> out;
  for (const auto& [k, v] : params) out[k] = Features<Scalar>::Zero(v.rows(), v.cols());
  return out;
}

// ---------------------------------------------------------------------------
// Convolution via im2col. Activations are c x (batch * h * w) with pixel
// index b * h * w + y * w + x; a column of the unfolded matrix holds the
// k*k*c_in patch ordered (ky, kx, c).

struct ConvGeometry {
  int in_channels, in_height, in_width;
  int kernel, stride, padding;
  int out_height, out_width;
  bool circular = false;

  static ConvGeometry make(int c, int h, int w, const StageSpec& s, bool circular = false) {
    return {c, h, w, s.kernel, s.stride, s.padding, (h + 2 * s.padding - s.kernel) / s.stride + 1,
            (w + 2 * s.padding - s.kernel) / s.stride + 1, circular};
  }
  Eigen::Index patch_size() const { return static_cast<Eigen::Index>(kernel) * kernel * in_channels; }

  /// Source row/column of a padded coordinate, or -1 for a zero pad.
  int source(int i, int extent) const {
    if (i >= 0 && i < extent) return i;
    return circular ? ((i % extent) + extent) % extent : -1;
  }
};

template <typename Scalar>
void im2col(const Features<Scalar>& x, int batch, const ConvGeometry& g, Features<Scalar>& cols) {
  const Eigen::Index in_pixels = static_cast<Eigen::Index>(g.in_height) * g.in_width;
  const Eigen::Index out_pixels = static_cast<Eigen::Index>(g.out_height) * g.out_width;
  cols.setZero(g.patch_size(), batch * out_pixels);
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < g.out_height; ++oy) {
      for (int ox = 0; ox < g.out_width; ++ox) {
        const Eigen::Index col = b * out_pixels + static_cast<Eigen::Index>(oy) * g.out_width + ox;
        for (int ky = 0; ky < g.kernel; ++ky) {
          const int iy = g.source(oy * g.stride - g.padding + ky, g.in_height);
          if (iy < 0) continue;
          for (int kx = 0; kx < g.kernel; ++kx) {
            const int ix = g.source(ox * g.stride - g.padding + kx, g.in_width);
            if (ix < 0) continue;
            cols.col(col).segment((static_cast<Eigen::Index>(ky) * g.kernel + kx) * g.in_channels, g.in_channels) =
                x.col(b * in_pixels + static_cast<Eigen::Index>(iy) * g.in_width + ix);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Features<Scalar>& cols, int batch, const ConvGeometry& g, Features<Scalar>& dx) {
  const Eigen::Index in_pixels = static_cast<Eigen::Index>(g.in_height) * g.in_width;
  const Eigen::Index out_pixels = static_cast<Eigen::Index>(g.out_height) * g.out_width;
  dx.setZero(g.in_channels, batch * in_pixels);
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < g.out_height; ++oy) {
      for (int ox = 0; ox < g.out_width; ++ox) {
        const Eigen::Index col = b * out_pixels + static_cast<Eigen::Index>(oy) * g.out_width + ox;
        for (int ky = 0; ky < g.kernel; ++ky) {
          const int iy = g.source(oy * g.stride - g.padding + ky, g.in_height);
          if (iy < 0) continue;
          for (int kx = 0; kx < g.kernel; ++kx) {
            const int ix = g.source(ox * g.stride - g.padding + kx, g.in_width);
            if (ix < 0) continue;
            dx.col(b * in_pixels + static_cast<Eigen::Index>(iy) * g.in_width + ix) +=
                cols.col(col).segment((static_cast<Eigen::Index>(ky) * g.kernel + kx) * g.in_channels, g.in_channels);
          }
        }
      }
    }
  }
}

inline constexpr double kNormEpsilon = 1e-5;

template <typename Scalar>
class ConvEncoder {
 public:
  struct StageCache {
    ConvGeometry geometry{};
    Features<Scalar> cols;
    Features<Scalar> normalized;  // pre-affine
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> inv_std;
    Features<Scalar> activated;
  };
  struct Cache {
    int batch = 0;
    std::vector<StageCache> stages;
  };

  ConvEncoder(const EncoderArch& arch, std::string prefix) : arch_(arch), prefix_(std::move(prefix)) {}

  std::string name(int stage, const char* field) const {
    return prefix_ + ".stage" + std::to_string(stage) + "." + field;
  }
  std::string proj(const char* field) const { return prefix_ + ".proj." + field; }

  /// input: in_channels x (batch * H * W). Returns embed_dim x (batch * h * w).
  Features<Scalar> forward(const ParamSet<Scalar>& params, const Features<Scalar>& input, int batch,
                           Cache* cache = nullptr) const {
    const Eigen::Index expected = static_cast<Eigen::Index>(batch) * arch_.input_height * arch_.input_width;
    if (input.rows() != arch_.in_channels || input.cols() != expected) {
      throw ShapeError(prefix_ + " encoder expects " + std::to_string(arch_.in_channels) + "x" +
                       std::to_string(arch_.input_height) + "x" + std::to_string(arch_.input_width) + " inputs");
    }
    if (cache) {
      cache->batch = batch;
      cache->stages.assign(arch_.stages.size(), StageCache{});
    }
    Features<Scalar> x = arch_.row_coordinate ? with_row_coordinate(input, batch) : input;
    int c = arch_.conv_in_channels(), h = arch_.input_height, w = arch_.input_width;
    for (std::size_t s = 0; s < arch_.stages.size(); ++s) {
      const int si = static_cast<int>(s);
      const ConvGeometry g = ConvGeometry::make(c, h, w, arch_.stages[s], arch_.circular_padding);
      StageCache local;
      StageCache& sc = cache ? cache->stages[s] : local;
      sc.geometry = g;
      im2col(x, batch, g, sc.cols);
      Features<Scalar> z = params.at(name(si, "weight")) * sc.cols;
      z.colwise() += params.at(name(si, "bias")).col(0);
      normalize(z, batch, sc.inv_std);
      sc.normalized = z;
      Features<Scalar> y = (z.array().colwise() * params.at(name(si, "gain")).col(0).array()).matrix();
      y.colwise() += params.at(name(si, "shift")).col(0);
      x = y.cwiseMax(Scalar(0));
      if (cache) sc.activated = x;
      c = arch_.stages[s].out_channels;
      h = g.out_height;
      w = g.out_width;
    }
    Features<Scalar> out = params.at(proj("weight")) * x;
    out.colwise() += params.at(proj("bias")).col(0);
    return out;
  }

  void backward(const ParamSet<Scalar>& params, const Cache& cache, const Features<Scalar>& d_out,
                ParamSet<Scalar>& grads, Features<Scalar>* d_input = nullptr) const {
    const auto& last = cache.stages.back().activated;
    grads.at(proj("weight")).noalias() += d_out * last.transpose();
    grads.at(proj("bias")).col(0) += d_out.rowwise().sum();
    Features<Scalar> dx = params.at(proj("weight")).transpose() * d_out;

    for (int si = static_cast<int>(arch_.stages.size()) - 1; si >= 0; --si) {
      const StageCache& sc = cache.stages[static_cast<std::size_t>(si)];
      // relu
      Features<Scalar> dy = (sc.activated.array() > Scalar(0)).select(dx, Scalar(0));
      grads.at(name(si, "gain")).col(0) += (dy.array() * sc.normalized.array()).rowwise().sum().matrix();
      grads.at(name(si, "shift")).col(0) += dy.rowwise().sum();
      const Features<Scalar> dn = (dy.array().colwise() * params.at(name(si, "gain")).col(0).array()).matrix();
      const Features<Scalar> dz = normalize_backward(dn, sc.normalized, sc.inv_std, cache.batch);

      grads.at(name(si, "weight")).noalias() += dz * sc.cols.transpose();
      grads.at(name(si, "bias")).col(0) += dz.rowwise().sum();
      if (si == 0 && d_input == nullptr) break;
      const Features<Scalar> dcols = params.at(name(si, "weight")).transpose() * dz;
      col2im(dcols, cache.batch, sc.geometry, dx);
    }
    if (d_input) *d_input = dx.topRows(arch_.in_channels);
  }

  const EncoderArch& arch() const { return arch_; }

 private:
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  /// In place; inv_std holds one entry per pixel or per sample.
  void normalize(Features<Scalar>& z, int batch, RowVec& inv_std) const {
    const auto eps = static_cast<Scalar>(kNormEpsilon);
    if (arch_.norm == NormKind::pixel) {
      const RowVec mean = z.colwise().mean();
      z.rowwise() -= mean;
      inv_std = ((z.array().square().colwise().sum() / static_cast<Scalar>(z.rows())) + eps).rsqrt().matrix();
      z.array().rowwise() *= inv_std.array();
      return;
    }
    const Eigen::Index block = z.cols() / batch;
    inv_std.resize(batch);
    for (int b = 0; b < batch; ++b) {
      auto s = z.middleCols(b * block, block);
      s.array() -= s.mean();
      inv_std(b) = Scalar(1) / std::sqrt(s.squaredNorm() / static_cast<Scalar>(s.size()) + eps);
      s *= inv_std(b);
    }
  }

  /// dz = inv_std * (dn - mean(dn) - n * mean(dn * n)), means over each group.
  Features<Scalar> normalize_backward(const Features<Scalar>& dn, const Features<Scalar>& n, const RowVec& inv_std,
                                      int batch) const {
    Features<Scalar> dz = dn;
    if (arch_.norm == NormKind::pixel) {
      const auto channels = static_cast<Scalar>(dn.rows());
      const RowVec mean_dn = dn.colwise().sum() / channels;
      const RowVec mean_dn_n = (dn.array() * n.array()).colwise().sum().matrix() / channels;
      dz.rowwise() -= mean_dn;
      dz.array() -= n.array().rowwise() * mean_dn_n.array();
      dz.array().rowwise() *= inv_std.array();
      return dz;
    }
    const Eigen::Index block = dn.cols() / batch;
    for (int b = 0; b < batch; ++b) {
      auto d = dz.middleCols(b * block, block);
      const auto nb = n.middleCols(b * block, block);
      const Scalar size = static_cast<Scalar>(d.size());
      const Scalar mean_dn = d.sum() / size;
      const Scalar mean_dn_n = d.cwiseProduct(nb).sum() / size;
      d = inv_std(b) * ((d.array() - mean_dn) - nb.array() * mean_dn_n).matrix();
    }
    return dz;
  }

  Features<Scalar> with_row_coordinate(const Features<Scalar>& input, int batch) const {
    const int h = arch_.input_height, w = arch_.input_width;
    Features<Scalar> x(input.rows() + 1, input.cols());
    x.topRows(input.rows()) = input;
    for (int y = 0; y < h; ++y) {
      const auto row = static_cast<Scalar>(h > 1 ? 2.0 * y / (h - 1) - 1.0 : 0.0);
      for (int b = 0; b < batch; ++b) {
        x.row(input.rows()).segment((static_cast<Eigen::Index>(b) * h + y) * w, w).setConstant(row);
      }
    }
    return x;
  }

  EncoderArch arch_;
  std::string prefix_;
};

// ---------------------------------------------------------------------------
// Model-level encode functions.

template <typename Scalar>
struct ImageFeatureMap {
  int height = 0;
  int width = 0;
  Features<Scalar> values;  // c x (height * width)

  int channels() const { return static_cast<int>(values.rows()); }
};

template <typename Scalar>
using AudioEmbedding = Vector<Scalar>;

template <typename Scalar>
Features<Scalar> frames_to_input(std::span<const Frame> frames) {
  if (frames.empty()) return Features<Scalar>(3, 0);
  const Eigen::Index pixels = frames.front().rgb.cols();
  Features<Scalar> x(3, static_cast<Eigen::Index>(frames.size()) * pixels);
  for (std::size_t b = 0; b < frames.size(); ++b) {
    if (frames[b].rgb.cols() != pixels) throw ShapeError("frames in a batch must share a resolution");
    x.middleCols(static_cast<Eigen::Index>(b) * pixels, pixels) = frames[b].rgb.template cast<Scalar>();
  }
  return x;
}

template <typename Scalar>
Features<Scalar> spectrograms_to_input(std::span<const Spectrogram> specs) {
  if (specs.empty()) return Features<Scalar>(1, 0);
  const Eigen::Index cells = specs.front().size();
  Features<Scalar> x(1, static_cast<Eigen::Index>(specs.size()) * cells);
  for (std::size_t b = 0; b < specs.size(); ++b) {
    if (specs[b].size() != cells) throw ShapeError("spectrograms in a batch must share a resolution");
    x.row(0).segment(static_cast<Eigen::Index>(b) * cells, cells) =
        Eigen::Map<const Eigen::RowVectorXf>(specs[b].data(), cells).template cast<Scalar>();
  }
  return x;
}

inline void check_frame(const Frame& f, const EncoderArch& arch) {
  if (f.height != arch.input_height || f.width != arch.input_width) {
    throw ShapeError("frame is " + std::to_string(f.height) + "x" + std::to_string(f.width) + ", encoder expects " +
                     std::to_string(arch.input_height) + "x" + std::to_string(arch.input_width));
  }
}

inline void check_spectrogram(const Spectrogram& s, const EncoderArch& arch) {
  if (s.rows() != arch.input_height || s.cols() != arch.input_width) {
    throw ShapeError("spectrogram is " + std::to_string(s.rows()) + "x" + std::to_string(s.cols()) +
                     ", encoder expects " + std::to_string(arch.input_height) + "x" + std::to_string(arch.input_width));
  }
}

/// Averages each sample's block of `pixels` columns: c x (batch * pixels) -> c x batch.
template <typename Scalar>
Features<Scalar> global_average_pool(const Features<Scalar>& x, int batch) {
  const Eigen::Index pixels = batch > 0 ? x.cols() / batch : 0;
  Features<Scalar> out(x.rows(), batch);
  for (int b = 0; b < batch; ++b) out.col(b) = x.middleCols(b * pixels, pixels).rowwise().mean();
  return out;
}

template <typename Scalar>
Features<Scalar> global_average_pool_backward(const Features<Scalar>& d_pooled, Eigen::Index pixels) {
  const auto batch = d_pooled.cols();
  Features<Scalar> dx(d_pooled.rows(), batch * pixels);
  for (Eigen::Index b = 0; b < batch; ++b) {
    dx.middleCols(b * pixels, pixels) = (d_pooled.col(b) / static_cast<Scalar>(pixels)).replicate(1, pixels);
  }
  return dx;
}

template <typename Scalar>
ImageFeatureMap<Scalar> encode_image(const Frame& frame, const ModelParams<Scalar>& params) {
  check_frame(frame, params.arch.visual);
  const ConvEncoder<Scalar> net(params.arch.visual, "visual");
  ImageFeatureMap<Scalar> out;
  out.height = params.arch.visual.output_height();
  out.width = params.arch.visual.output_width();
  out.values = net.forward(params.visual, frames_to_input<Scalar>(std::span<const Frame>(&frame, 1)), 1);
  return out;
}

template <typename Scalar>
AudioEmbedding<Scalar> encode_audio(const Spectrogram& spec, const ModelParams<Scalar>& params) {
  check_spectrogram(spec, params.arch.audio);
  const ConvEncoder<Scalar> net(params.arch.audio, "audio");
  const Features<Scalar> grid =
      net.forward(params.audio, spectrograms_to_input<Scalar>(std::span<const Spectrogram>(&spec, 1)), 1);
  return global_average_pool(grid, 1).col(0);
}

/// Batched forms: visual c x (B * h * w), audio c x B.
template <typename Scalar>
Features<Scalar> encode_images(std::span<const Frame> frames, const ModelParams<Scalar>& params) {
  for (const auto& f : frames) check_frame(f, params.arch.visual);
  const ConvEncoder<Scalar> net(params.arch.visual, "visual");
  return net.forward(params.visual, frames_to_input<Scalar>(frames), static_cast<int>(frames.size()));
}

template <typename Scalar>
Features<Scalar> encode_audios(std::span<const Spectrogram> specs, const ModelParams<Scalar>& params) {
  for (const auto& s : specs) check_spectrogram(s, params.arch.audio);
  const ConvEncoder<Scalar> net(params.arch.audio, "audio");
  const int batch = static_cast<int>(specs.size());
  return global_average_pool(net.forward(params.audio, spectrograms_to_input<Scalar>(specs), batch), batch);
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic, u32 version, u64 header length, JSON header,
// then little-endian float32 arrays in header order.

struct NamedArray {
  std::string name;
  Features<float> values;
};

void write_array_file(const std::string& path, nlohmann::json header, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_array_file(const std::string& path, nlohmann::json* header);

std::vector<NamedArray> params_to_arrays(const ModelParams<float>& params);
/// Rebuilds params from arrays whose names match init_parameters(arch) exactly.
ModelParams<float> params_from_arrays(const ArchConfig& arch, const std::vector<NamedArray>& arrays);

}  // namespace avsl
