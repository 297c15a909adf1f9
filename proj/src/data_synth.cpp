#include "avsl/data_synth.hpp"

#include "avsl/color.hpp"

#include <png.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace avsl {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Label auditing

namespace {
std::atomic<std::uint64_t> g_label_reads{0};
thread_local int t_firewall_depth = 0;
}  // namespace

std::uint64_t label_access_count() { return g_label_reads.load(); }

void note_label_access(const char* what) {
  g_label_reads.fetch_add(1);
  if (t_firewall_depth > 0) {
    throw SupervisionLeak(std::string("label field '") + what + "' read on a self-supervised code path");
  }
}

LabelFirewall::LabelFirewall() { ++t_firewall_depth; }
LabelFirewall::~LabelFirewall() { --t_firewall_depth; }
bool LabelFirewall::active() { return t_firewall_depth > 0; }

// ---------------------------------------------------------------------------
// Config and JSON

void SynthConfig::validate() const {
  if (n_samples < 0) throw ConfigError("n_samples must be non-negative");
  if (n_categories < 2) throw ConfigError("n_categories must be at least 2");
  if (image_size < 32) throw ConfigError("image_size must be at least 32");
  if (spec_size < 8) throw ConfigError("spec_size must be at least 8");
  if (spec_size / n_categories < 1) throw ConfigError("spec_size too small for one frequency band per category");
  if (distractor_count < 0) throw ConfigError("distractor_count must be non-negative");
  if (distractor_count > 0 && n_categories < 2) throw ConfigError("distractors need another category");
  if (!(noise_level >= 0.0) || !std::isfinite(noise_level)) throw ConfigError("noise_level must be finite and >= 0");
}

void to_json(json& j, const SynthConfig& c) {
  j = json{{"n_samples", c.n_samples},           {"n_categories", c.n_categories},
           {"image_size", c.image_size},         {"spec_size", c.spec_size},
           {"distractor_count", c.distractor_count}, {"noise_level", c.noise_level},
           {"seed", c.seed}};
}

void from_json(const json& j, SynthConfig& c) {
  c.n_samples = j.value("n_samples", c.n_samples);
  c.n_categories = j.value("n_categories", c.n_categories);
  c.image_size = j.value("image_size", c.image_size);
  c.spec_size = j.value("spec_size", c.spec_size);
  c.distractor_count = j.value("distractor_count", c.distractor_count);
  c.noise_level = j.value("noise_level", c.noise_level);
  c.seed = j.value("seed", c.seed);
}

void to_json(json& j, const SplitSpec& s) {
  j = json{{"train_ids", s.train_ids},
           {"val_ids", s.val_ids},
           {"test_ids", s.test_ids},
           {"heard_categories", s.heard_categories},
           {"unheard_categories", s.unheard_categories}};
}

void from_json(const json& j, SplitSpec& s) {
  j.at("train_ids").get_to(s.train_ids);
  j.at("val_ids").get_to(s.val_ids);
  j.at("test_ids").get_to(s.test_ids);
  j.at("heard_categories").get_to(s.heard_categories);
  j.at("unheard_categories").get_to(s.unheard_categories);
}

json entry_to_json(const ManifestEntry& e) {
  json j{{"sample_id", e.sample_id}, {"frame", e.frame_file}, {"spectrogram", e.spectrogram_file}};
  if (e.gt_region_) {
    j["gt_region"] = {e.gt_region_->x0, e.gt_region_->y0, e.gt_region_->x1, e.gt_region_->y1};
  } else {
    j["gt_region"] = nullptr;
  }
  j["category_id"] = e.category_id_ ? json(*e.category_id_) : json(nullptr);
  return j;
}

std::size_t DatasetManifest::index_of(const std::string& sample_id) const {
  if (index_cache_.size() != entries.size()) {
    index_cache_.clear();
    for (std::size_t i = 0; i < entries.size(); ++i) index_cache_[entries[i].sample_id] = i;
  }
  auto it = index_cache_.find(sample_id);
  if (it == index_cache_.end()) throw RangeError("unknown sample id " + sample_id);
  return it->second;
}

std::vector<std::size_t> indices_of(const DatasetManifest& manifest, const std::vector<std::string>& ids) {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(manifest.index_of(id));
  return out;
}

// ---------------------------------------------------------------------------
// Codecs

void write_png(const fs::path& path, const Frame& frame) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(frame.height) * frame.width * 3);
  for (Eigen::Index p = 0; p < frame.rgb.cols(); ++p) {
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(frame.rgb(c, p), 0.0f, 1.0f);
      bytes[static_cast<std::size_t>(p) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(frame.width);
  image.height = static_cast<png_uint_32>(frame.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    throw IoError("failed to write PNG " + path.string() + ": " + image.message);
  }
}

Frame read_png(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw IoError("failed to read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> bytes(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IoError("failed to decode PNG " + path.string() + ": " + msg);
  }
  Frame frame(static_cast<int>(image.height), static_cast<int>(image.width));
  for (Eigen::Index p = 0; p < frame.rgb.cols(); ++p) {
    for (int c = 0; c < 3; ++c) frame.rgb(c, p) = bytes[static_cast<std::size_t>(p) * 3 + c] / 255.0f;
  }
  return frame;
}

namespace {

void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xFFu));
}

fs::path sidecar_of(const fs::path& f32_path) {
  fs::path side = f32_path;
  side.replace_extension(".json");
  return side;
}

}  // namespace

void write_spectrogram(const fs::path& f32_path, const Spectrogram& spec) {
  std::vector<unsigned char> bytes;
  bytes.reserve(static_cast<std::size_t>(spec.size()) * 4);
  for (Eigen::Index i = 0; i < spec.size(); ++i) {
    std::uint32_t bits;
    const float v = spec.data()[i];
    std::memcpy(&bits, &v, 4);
    put_u32_le(bytes, bits);
  }
  std::ofstream out(f32_path, std::ios::binary);
  if (!out) throw IoError("cannot open " + f32_path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  json side{{"shape", {1, spec.rows(), spec.cols()}}, {"dtype", "float32"}, {"layout", "freq-major"}};
  std::ofstream sout(sidecar_of(f32_path));
  if (!sout) throw IoError("cannot open sidecar for " + f32_path.string());
  sout << side.dump() << '\n';
}

Spectrogram read_spectrogram(const fs::path& f32_path) {
  std::ifstream sin(sidecar_of(f32_path));
  if (!sin) throw IoError("missing spectrogram sidecar for " + f32_path.string());
  json side;
  try {
    sin >> side;
  } catch (const json::exception& e) {
    throw IoError("corrupt spectrogram sidecar for " + f32_path.string() + ": " + e.what());
  }
  if (side.value("dtype", "") != "float32" || side.value("layout", "") != "freq-major" ||
      !side.contains("shape") || side["shape"].size() != 3) {
    throw IoError("unsupported spectrogram sidecar for " + f32_path.string());
  }
  const auto rows = side["shape"][1].get<Eigen::Index>();
  const auto cols = side["shape"][2].get<Eigen::Index>();
  std::ifstream in(f32_path, std::ios::binary);
  if (!in) throw IoError("cannot open " + f32_path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (static_cast<Eigen::Index>(bytes.size()) != rows * cols * 4) {
    throw IoError("spectrogram file " + f32_path.string() + " has " + std::to_string(bytes.size()) +
                  " bytes, expected " + std::to_string(rows * cols * 4));
  }
  Spectrogram spec(rows, cols);
  for (Eigen::Index i = 0; i < spec.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[static_cast<std::size_t>(i) * 4 + b]) << (8 * b);
    float v;
    std::memcpy(&v, &bits, 4);
    spec.data()[i] = v;
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Synthesis

namespace {

enum class ShapeClass { kDisc, kSquare, kTriangle, kCross };
constexpr int kShapeClasses = 4;

bool inside_shape(ShapeClass shape, double dx, double dy, double r) {
  switch (shape) {
    case ShapeClass::kDisc:
      return dx * dx + dy * dy <= r * r;
    case ShapeClass::kSquare:
      return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case ShapeClass::kTriangle:
      return dy >= -r && dy <= r && std::abs(dx) <= 0.5 * (dy + r);
    case ShapeClass::kCross:
      return (std::abs(dx) <= r / 3.0 && std::abs(dy) <= r) || (std::abs(dy) <= r / 3.0 && std::abs(dx) <= r);
  }
  return false;
}

struct Placement {
  int category = 0;
  double cx = 0, cy = 0, size = 0;
  Box box() const {
    const double r = size / 2.0;
    return Box{static_cast<int>(std::floor(cx - r)), static_cast<int>(std::floor(cy - r)),
               static_cast<int>(std::ceil(cx + r)) + 1, static_cast<int>(std::ceil(cy + r)) + 1};
  }
};

bool boxes_overlap(const Box& a, const Box& b, int margin) {
  return a.x0 < b.x1 + margin && b.x0 < a.x1 + margin && a.y0 < b.y1 + margin && b.y0 < a.y1 + margin;
}

/// Paints the shape and returns its tight pixel bounding box.
std::optional<Box> paint_shape(Frame& frame, const Placement& pl, int n_categories, Rng& rng) {
  const auto shape = static_cast<ShapeClass>(pl.category % kShapeClasses);
  const float hue = static_cast<float>(pl.category) / static_cast<float>(n_categories) +
                    static_cast<float>(rng.uniform(-0.012, 0.012));
  const float sat = static_cast<float>(rng.uniform(0.7, 0.95));
  const float val = static_cast<float>(rng.uniform(0.75, 1.0));
  const auto rgb = color::hsv_to_rgb(hue, sat, val);
  const double r = pl.size / 2.0;
  Box tight{frame.width, frame.height, 0, 0};
  bool any = false;
  const int y_lo = std::max(0, static_cast<int>(std::floor(pl.cy - r - 1)));
  const int y_hi = std::min(frame.height - 1, static_cast<int>(std::ceil(pl.cy + r + 1)));
  const int x_lo = std::max(0, static_cast<int>(std::floor(pl.cx - r - 1)));
  const int x_hi = std::min(frame.width - 1, static_cast<int>(std::ceil(pl.cx + r + 1)));
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const double dx = x + 0.5 - pl.cx;
      const double dy = y + 0.5 - pl.cy;
      if (!inside_shape(shape, dx, dy, r)) continue;
      const float shade = 1.0f - 0.15f * static_cast<float>((dx + dy) / (2.0 * r));
      for (int c = 0; c < 3; ++c) frame.at(y, x, c) = std::clamp(rgb[c] * shade, 0.0f, 1.0f);
      tight.x0 = std::min(tight.x0, x);
      tight.y0 = std::min(tight.y0, y);
      tight.x1 = std::max(tight.x1, x + 1);
      tight.y1 = std::max(tight.y1, y + 1);
      any = true;
    }
  }
  if (!any) return std::nullopt;
  return tight;
}

Frame render_background(int size, double noise_level, Rng& rng) {
  Frame frame(size, size);
  std::array<std::array<float, 3>, 2> ends;
  for (auto& e : ends) {
    e = color::hsv_to_rgb(static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform(0.05, 0.35)),
                          static_cast<float>(rng.uniform(0.2, 0.6)));
  }
  const double angle = rng.uniform(0.0, 6.283185307179586);
  const double gx = std::cos(angle), gy = std::sin(angle);
  const double pixel_noise = 0.5 * noise_level;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double t = 0.5 + 0.7071 * (((x + 0.5) / size - 0.5) * gx + ((y + 0.5) / size - 0.5) * gy);
      for (int c = 0; c < 3; ++c) {
        const double v = (1.0 - t) * ends[0][c] + t * ends[1][c] + pixel_noise * rng.normal();
        frame.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return frame;
}

Spectrogram render_spectrogram(const SynthConfig& config, int category, Rng& rng) {
  const int rows = config.spec_size;
  const int cols = config.spec_size;
  const int band = rows / config.n_categories;
  Spectrogram spec = Spectrogram::Constant(rows, cols, 0.05f);

  // Category band: a few events with random onsets and a per-sample spectral profile.
  std::vector<double> profile(static_cast<std::size_t>(band));
  for (auto& p : profile) p = rng.uniform(0.7, 1.0);
  const int events = rng.uniform_int(2, 5);
  for (int e = 0; e < events; ++e) {
    const int duration = rng.uniform_int(std::max(2, cols / 16), std::max(3, cols / 4));
    const int onset = rng.uniform_int(0, cols - duration);
    const double amplitude = rng.uniform(0.6, 1.0);
    for (int t = onset; t < onset + duration; ++t) {
      const double decay = std::exp(-2.0 * (t - onset) / static_cast<double>(duration));
      for (int k = 0; k < band; ++k) {
        float& cell = spec(category * band + k, t);
        cell = std::max(cell, static_cast<float>(amplitude * profile[static_cast<std::size_t>(k)] * (0.4 + 0.6 * decay)));
      }
    }
  }
  // Instance-specific broadband clicks.
  const int clicks = rng.uniform_int(0, 3);
  for (int c = 0; c < clicks; ++c) {
    const int t = rng.uniform_int(0, cols - 1);
    const double amplitude = rng.uniform(0.1, 0.2);
    for (int f = 0; f < rows; ++f) spec(f, t) += static_cast<float>(amplitude);
  }
  for (Eigen::Index i = 0; i < spec.size(); ++i) {
    spec.data()[i] += static_cast<float>(config.noise_level * rng.normal());
  }
  return spec;
}

std::string sample_name(int index) {
  std::ostringstream os;
  os << 's' << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

std::string category_name(int category) {
  static constexpr const char* kShapes[] = {"disc", "square", "triangle", "cross"};
  return std::string(kShapes[category % kShapeClasses]) + "-" + std::to_string(category);
}

}  // namespace

AudioVisualSample render_synthetic_sample(const SynthConfig& config, int index) {
  config.validate();
  if (index < 0 || index >= config.n_samples) throw RangeError("sample index out of range");
  const int category = index % config.n_categories;
  Rng frame_rng(config.seed, static_cast<std::uint64_t>(index), 1);
  Rng spec_rng(config.seed, static_cast<std::uint64_t>(index), 2);

  const int size = config.image_size;
  Frame frame = render_background(size, config.noise_level, frame_rng);

  Placement sounding;
  sounding.category = category;
  sounding.size = frame_rng.uniform(0.22, 0.34) * size;
  const double margin = sounding.size / 2.0 + 1.0;
  sounding.cx = frame_rng.uniform(margin, size - margin);
  sounding.cy = frame_rng.uniform(margin, size - margin);

  std::vector<Placement> distractors;
  for (int d = 0; d < config.distractor_count; ++d) {
    Placement pl;
    pl.category = (category + frame_rng.uniform_int(1, config.n_categories - 1)) % config.n_categories;
    pl.size = frame_rng.uniform(0.16, 0.28) * size;
    const double m = pl.size / 2.0 + 1.0;
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      pl.cx = frame_rng.uniform(m, size - m);
      pl.cy = frame_rng.uniform(m, size - m);
      placed = !boxes_overlap(pl.box(), sounding.box(), 2);
      for (const auto& other : distractors) placed = placed && !boxes_overlap(pl.box(), other.box(), 0);
    }
    if (placed) distractors.push_back(pl);
  }
  for (const auto& pl : distractors) paint_shape(frame, pl, config.n_categories, frame_rng);
  const auto gt = paint_shape(frame, sounding, config.n_categories, frame_rng);

  Spectrogram spec = render_spectrogram(config, category, spec_rng);
  return AudioVisualSample(sample_name(index), std::move(frame), std::move(spec), gt, category);
}

DatasetManifest generate_synthetic_dataset(const SynthConfig& config, const fs::path& root) {
  config.validate();
  fs::create_directories(root / "frames");
  fs::create_directories(root / "specs");

  DatasetManifest manifest;
  manifest.root = root;
  for (int c = 0; c < config.n_categories; ++c) manifest.category_table[c] = category_name(c);

  for (int i = 0; i < config.n_samples; ++i) {
    // Rendering is the only producer of labels; reading them here is generation, not training.
    const AudioVisualSample sample = render_synthetic_sample(config, i);
    const std::string frame_rel = "frames/" + sample.sample_id + ".png";
    const std::string spec_rel = "specs/" + sample.sample_id + ".f32";
    write_png(root / frame_rel, sample.frame);
    write_spectrogram(root / spec_rel, sample.spectrogram);
    manifest.entries.emplace_back(sample.sample_id, frame_rel, spec_rel, sample.gt_region(), sample.category_id());
  }
  write_manifest(manifest);

  std::ofstream cfg(root / "synth_config.json");
  cfg << json(config).dump(2) << '\n';
  return manifest;
}

void write_manifest(const DatasetManifest& manifest) {
  std::ofstream out(manifest.root / "manifest.jsonl");
  if (!out) throw IoError("cannot write " + (manifest.root / "manifest.jsonl").string());
  for (const auto& e : manifest.entries) {
    json j = entry_to_json(e);
    if (!j["category_id"].is_null()) {
      const int c = j["category_id"].get<int>();
      auto it = manifest.category_table.find(c);
      if (it != manifest.category_table.end()) j["category_name"] = it->second;
    }
    out << j.dump() << '\n';
  }
}

DatasetManifest read_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.jsonl";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest manifest;
  manifest.root = root;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    std::optional<Box> gt;
    if (j.contains("gt_region") && !j["gt_region"].is_null()) {
      const auto& g = j["gt_region"];
      gt = Box{g[0].get<int>(), g[1].get<int>(), g[2].get<int>(), g[3].get<int>()};
    }
    std::optional<int> category;
    if (j.contains("category_id") && !j["category_id"].is_null()) {
      category = j["category_id"].get<int>();
      if (j.contains("category_name")) manifest.category_table[*category] = j["category_name"].get<std::string>();
    }
    ManifestEntry entry(j.at("sample_id").get<std::string>(), j.at("frame").get<std::string>(),
                        j.at("spectrogram").get<std::string>(), gt, category);
    for (const auto* rel : {&entry.frame_file, &entry.spectrogram_file}) {
      if (!fs::exists(root / *rel)) throw IoError("manifest references missing file " + (root / *rel).string());
    }
    manifest.entries.push_back(std::move(entry));
  }
  std::map<std::string, int> seen;
  for (const auto& e : manifest.entries) {
    if (seen[e.sample_id]++ > 0) throw IoError("duplicate sample id " + e.sample_id + " in " + path.string());
  }
  return manifest;
}

AudioVisualSample load_sample(const DatasetManifest& manifest, std::size_t index) {
  if (index >= manifest.entries.size()) {
    throw RangeError("sample index " + std::to_string(index) + " out of range [0, " +
                     std::to_string(manifest.entries.size()) + ")");
  }
  const auto& e = manifest.entries[index];
  return AudioVisualSample(e.sample_id, read_png(manifest.root / e.frame_file),
                           read_spectrogram(manifest.root / e.spectrogram_file), e.gt_region(), e.category_id());
}

UnlabeledSample load_unlabeled(const DatasetManifest& manifest, std::size_t index) {
  if (index >= manifest.entries.size()) {
    throw RangeError("sample index " + std::to_string(index) + " out of range");
  }
  const auto& e = manifest.entries[index];
  return UnlabeledSample{read_png(manifest.root / e.frame_file), read_spectrogram(manifest.root / e.spectrogram_file)};
}

// ---------------------------------------------------------------------------
// Splits

SplitSpec make_splits(const DatasetManifest& manifest, std::array<double, 3> fractions, double unheard_fraction,
                      std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  for (double f : fractions) {
    if (f < 0.0) throw ConfigError("split fractions must be non-negative");
  }
  if (!(unheard_fraction >= 0.0 && unheard_fraction < 1.0)) throw ConfigError("unheard_fraction must be in [0, 1)");

  std::map<int, std::vector<std::size_t>> by_category;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& cat = manifest.entries[i].category_id();
    by_category[cat ? *cat : -1].push_back(i);
  }
  std::vector<int> categories;
  for (const auto& [c, _] : by_category) categories.push_back(c);

  const auto n_unheard = static_cast<std::size_t>(std::lround(unheard_fraction * static_cast<double>(categories.size())));
  if (unheard_fraction > 0.0 && (n_unheard == 0 || n_unheard >= categories.size())) {
    throw ConfigError("too few categories (" + std::to_string(categories.size()) + ") to honor unheard_fraction " +
                      std::to_string(unheard_fraction));
  }

  Rng rng(seed, 0x5B117);
  std::vector<int> shuffled = categories;
  for (std::size_t i = shuffled.size(); i > 1; --i) {
    std::swap(shuffled[i - 1], shuffled[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  }

  SplitSpec splits;
  std::vector<std::size_t> train, val, test;
  for (std::size_t k = 0; k < shuffled.size(); ++k) {
    const int c = shuffled[k];
    auto members = by_category[c];
    if (k < n_unheard) {
      splits.unheard_categories.push_back(c);
      test.insert(test.end(), members.begin(), members.end());
      continue;
    }
    if (c >= 0) splits.heard_categories.push_back(c);
    Rng member_rng(seed, 0xC0FFEE, static_cast<std::uint64_t>(c + 1));
    for (std::size_t i = members.size(); i > 1; --i) {
      std::swap(members[i - 1], members[static_cast<std::size_t>(member_rng.uniform_int(0, static_cast<int>(i) - 1))]);
    }
    const auto n = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::lround(fractions[0] * n));
    const auto n_val = std::min(members.size() - n_train, static_cast<std::size_t>(std::lround(fractions[1] * n)));
    for (std::size_t i = 0; i < members.size(); ++i) {
      (i < n_train ? train : (i < n_train + n_val ? val : test)).push_back(members[i]);
    }
  }
  std::sort(splits.heard_categories.begin(), splits.heard_categories.end());
  std::sort(splits.unheard_categories.begin(), splits.unheard_categories.end());
  for (auto* v : {&train, &val, &test}) std::sort(v->begin(), v->end());
  auto ids = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::string> out;
    for (auto i : idx) out.push_back(manifest.entries[i].sample_id);
    return out;
  };
  splits.train_ids = ids(train);
  splits.val_ids = ids(val);
  splits.test_ids = ids(test);
  return splits;
}

void write_split_file(const fs::path& path, const SplitSpec& splits) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << json(splits).dump(1) << '\n';
}

SplitSpec read_split_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open split file " + path.string());
  try {
    return json::parse(in).get<SplitSpec>();
  } catch (const json::exception& e) {
    throw IoError("corrupt split file " + path.string() + ": " + e.what());
  }
}

int classify_by_band_template(const Spectrogram& spec, int n_categories) {
  const int band = static_cast<int>(spec.rows()) / n_categories;
  int best = 0;
  double best_energy = -1e300;
  for (int c = 0; c < n_categories; ++c) {
    const double energy = spec.middleRows(c * band, band).cast<double>().mean();
    if (energy > best_energy) {
      best_energy = energy;
      best = c;
    }
  }
  return best;
}

}  // namespace avsl
