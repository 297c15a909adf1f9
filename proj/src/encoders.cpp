#include "avsl/encoders.hpp"

#include <cstring>
#include <fstream>

namespace avsl {

using nlohmann::json;

int EncoderArch::output_height() const {
  int h = input_height;
  for (const auto& s : stages) h = (h + 2 * s.padding - s.kernel) / s.stride + 1;
  return h;
}

int EncoderArch::output_width() const {
  int w = input_width;
  for (const auto& s : stages) w = (w + 2 * s.padding - s.kernel) / s.stride + 1;
  return w;
}

void EncoderArch::validate(const char* which) const {
  const std::string tag(which);
  if (in_channels < 1 || input_height < 1 || input_width < 1 || embed_dim < 1) {
    throw ConfigError(tag + " encoder has non-positive dimensions");
  }
  if (stages.empty()) throw ConfigError(tag + " encoder needs at least one stage");
  int h = input_height, w = input_width;
  for (const auto& s : stages) {
    if (s.out_channels < 1 || s.kernel < 1 || s.stride < 1 || s.padding < 0) {
      throw ConfigError(tag + " encoder stage has invalid geometry");
    }
    h = (h + 2 * s.padding - s.kernel) / s.stride + 1;
    w = (w + 2 * s.padding - s.kernel) / s.stride + 1;
    if (h < 1 || w < 1) throw ConfigError(tag + " encoder downsamples below 1x1");
  }
}

void ArchConfig::validate() const {
  visual.validate("visual");
  audio.validate("audio");
  if (visual.in_channels != 3) throw ConfigError("visual encoder takes RGB input");
  if (audio.in_channels != 1) throw ConfigError("audio encoder takes single-channel spectrograms");
  if (visual.embed_dim != audio.embed_dim) {
    throw ConfigError("audio embedding dim " + std::to_string(audio.embed_dim) + " differs from visual channels " +
                      std::to_string(visual.embed_dim));
  }
}

ArchConfig ArchConfig::synthetic_default(int image_size, int spec_size) {
  ArchConfig a;
  const std::vector<StageSpec> stages{{16, 4, 4, 0}, {32, 3, 2, 1}, {64, 3, 2, 1}, {64, 3, 1, 1}};
  a.visual = EncoderArch{3, image_size, image_size, stages, 64};
  a.audio = EncoderArch{1, spec_size, spec_size, stages, 64};
  // Category bands differ only in frequency position, which global pooling
  // of a conv stack cannot see without a coordinate channel.
  a.audio.row_coordinate = true;
  a.visual.norm = a.audio.norm = NormKind::sample;
  return a;
}

ArchConfig ArchConfig::paper_scale(int spec_size) {
  ArchConfig a;
  const std::vector<StageSpec> stages{{64, 4, 4, 0}, {128, 3, 2, 1}, {256, 3, 2, 1}, {512, 3, 1, 1}};
  a.visual = EncoderArch{3, 224, 224, stages, 512};
  a.audio = EncoderArch{1, spec_size, spec_size, stages, 512};
  return a;
}

namespace {

json arch_json(const EncoderArch& e) {
  json stages = json::array();
  for (const auto& s : e.stages) {
    stages.push_back({{"out_channels", s.out_channels}, {"kernel", s.kernel}, {"stride", s.stride}, {"padding", s.padding}});
  }
  return {{"in_channels", e.in_channels},
          {"input_height", e.input_height},
          {"input_width", e.input_width},
          {"stages", stages},
          {"embed_dim", e.embed_dim},
          {"circular_padding", e.circular_padding},
          {"row_coordinate", e.row_coordinate},
          {"norm", e.norm}};
}

EncoderArch arch_from(const json& j) {
  EncoderArch e;
  j.at("in_channels").get_to(e.in_channels);
  j.at("input_height").get_to(e.input_height);
  j.at("input_width").get_to(e.input_width);
  j.at("embed_dim").get_to(e.embed_dim);
  e.circular_padding = j.value("circular_padding", false);
  e.row_coordinate = j.value("row_coordinate", false);
  e.norm = j.value("norm", NormKind::pixel);
  for (const auto& s : j.at("stages")) {
    e.stages.push_back({s.at("out_channels").get<int>(), s.at("kernel").get<int>(), s.at("stride").get<int>(),
                        s.at("padding").get<int>()});
  }
  return e;
}

void init_encoder(const EncoderArch& arch, const std::string& prefix, Rng& rng, ParamSet<float>& out) {
  const ConvEncoder<float> net(arch, prefix);
  int c = arch.conv_in_channels();
  for (std::size_t s = 0; s < arch.stages.size(); ++s) {
    const auto& st = arch.stages[s];
    const int si = static_cast<int>(s);
    const int fan_in = st.kernel * st.kernel * c;
    const double scale = std::sqrt(2.0 / fan_in);
    Features<float> w(st.out_channels, fan_in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(scale * rng.normal());
    out[net.name(si, "weight")] = w;
    out[net.name(si, "bias")] = Features<float>::Zero(st.out_channels, 1);
    out[net.name(si, "gain")] = Features<float>::Ones(st.out_channels, 1);
    out[net.name(si, "shift")] = Features<float>::Zero(st.out_channels, 1);
    c = st.out_channels;
  }
  const double scale = std::sqrt(1.0 / c);
  Features<float> w(arch.embed_dim, c);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(scale * rng.normal());
  out[net.proj("weight")] = w;
  out[net.proj("bias")] = Features<float>::Zero(arch.embed_dim, 1);
}

}  // namespace

void to_json(json& j, const ArchConfig& a) { j = json{{"visual", arch_json(a.visual)}, {"audio", arch_json(a.audio)}}; }

void from_json(const json& j, ArchConfig& a) {
  a.visual = arch_from(j.at("visual"));
  a.audio = arch_from(j.at("audio"));
}

ModelParams<float> init_parameters(std::uint64_t seed, const ArchConfig& arch) {
  arch.validate();
  ModelParams<float> params;
  params.arch = arch;
  Rng visual_rng(seed, 0x715, 1);
  Rng audio_rng(seed, 0x715, 2);
  init_encoder(arch.visual, "visual", visual_rng, params.visual);
  init_encoder(arch.audio, "audio", audio_rng, params.audio);
  return params;
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'A', 'V', 'S', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_le(std::ostream& out, std::uint64_t v, int bytes) {
  for (int b = 0; b < bytes; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xFF));
}

std::uint64_t get_le(std::istream& in, int bytes, const std::string& path) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b) {
    const int c = in.get();
    if (c == EOF) throw IoError("truncated checkpoint " + path);
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
  }
  return v;
}
}  // namespace

void write_array_file(const std::string& path, json header, const std::vector<NamedArray>& arrays) {
  json table = json::array();
  std::uint64_t offset = 0;
  for (const auto& a : arrays) {
    table.push_back({{"name", a.name}, {"shape", {a.values.rows(), a.values.cols()}}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(a.values.size()) * 4;
  }
  header["arrays"] = table;
  header["dtype"] = "float32";
  header["byte_order"] = "little";
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  put_le(out, kVersion, 4);
  put_le(out, text.size(), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : arrays) {
    // Column-major element order, matching "shape" [rows, cols].
    for (Eigen::Index i = 0; i < a.values.size(); ++i) {
      std::uint32_t bits;
      const float v = a.values.data()[i];
      std::memcpy(&bits, &v, 4);
      put_le(out, bits, 4);
    }
  }
  if (!out) throw IoError("failed writing checkpoint " + path);
}

std::vector<NamedArray> read_array_file(const std::string& path, json* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError("not a checkpoint file: " + path);
  if (get_le(in, 4, path) != kVersion) throw IoError("unsupported checkpoint version in " + path);
  const auto len = get_le(in, 8, path);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint header in " + path);
  json h;
  try {
    h = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path + ": " + e.what());
  }
  std::vector<NamedArray> arrays;
  for (const auto& entry : h.at("arrays")) {
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    a.values.resize(entry.at("shape")[0].get<Eigen::Index>(), entry.at("shape")[1].get<Eigen::Index>());
    for (Eigen::Index i = 0; i < a.values.size(); ++i) {
      const auto bits = static_cast<std::uint32_t>(get_le(in, 4, path));
      float v;
      std::memcpy(&v, &bits, 4);
      a.values.data()[i] = v;
    }
    arrays.push_back(std::move(a));
  }
  if (header) *header = std::move(h);
  return arrays;
}

std::vector<NamedArray> params_to_arrays(const ModelParams<float>& params) {
  std::vector<NamedArray> out;
  for (const auto* set : {&params.visual, &params.audio}) {
    for (const auto& [k, v] : *set) out.push_back({k, v});
  }
  return out;
}

ModelParams<float> params_from_arrays(const ArchConfig& arch, const std::vector<NamedArray>& arrays) {
  ModelParams<float> params = init_parameters(0, arch);
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  for (auto* set : {&params.visual, &params.audio}) {
    for (auto& [k, v] : *set) {
      auto it = by_name.find(k);
      if (it == by_name.end()) throw IoError("checkpoint lacks parameter " + k);
      if (it->second->values.rows() != v.rows() || it->second->values.cols() != v.cols()) {
        throw IoError("checkpoint parameter " + k + " has the wrong shape");
      }
      v = it->second->values;
    }
  }
  return params;
}

}  // namespace avsl
