#pragma once

#include "avsl/common.hpp"

#include "json.hpp"

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace avsl {

/// Axis-aligned box in pixel coordinates, x1/y1 exclusive.
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool valid_in(int frame_width, int frame_height) const {
    return 0 <= x0 && x0 < x1 && x1 <= frame_width && 0 <= y0 && y0 < y1 && y1 <= frame_height;
  }
  friend bool operator==(const Box&, const Box&) = default;
};

// Label access auditing.
//
// Every read of a ground-truth region or category id goes through
// note_label_access(). While a LabelFirewall is alive on the current thread
// such a read throws SupervisionLeak, and every read bumps a global counter
// that training entry points compare before and after.
std::uint64_t label_access_count();
void note_label_access(const char* what);

class LabelFirewall {
 public:
  LabelFirewall();
  ~LabelFirewall();
  LabelFirewall(const LabelFirewall&) = delete;
  LabelFirewall& operator=(const LabelFirewall&) = delete;

  static bool active();
};

class AudioVisualSample {
 public:
  AudioVisualSample() = default;
  AudioVisualSample(std::string id, Frame frame, Spectrogram spec, std::optional<Box> gt,
                    std::optional<int> category)
      : sample_id(std::move(id)),
        frame(std::move(frame)),
        spectrogram(std::move(spec)),
        gt_region_(gt),
        category_id_(category) {}

  std::string sample_id;
  Frame frame;
  Spectrogram spectrogram;

  const std::optional<Box>& gt_region() const {
    note_label_access("gt_region");
    return gt_region_;
  }
  const std::optional<int>& category_id() const {
    note_label_access("category_id");
    return category_id_;
  }

 private:
  std::optional<Box> gt_region_;
  std::optional<int> category_id_;
};

class ManifestEntry {
 public:
  ManifestEntry() = default;
  ManifestEntry(std::string id, std::string frame_file, std::string spec_file, std::optional<Box> gt,
                std::optional<int> category)
      : sample_id(std::move(id)),
        frame_file(std::move(frame_file)),
        spectrogram_file(std::move(spec_file)),
        gt_region_(gt),
        category_id_(category) {}

  std::string sample_id;
  std::string frame_file;        // relative to the manifest root
  std::string spectrogram_file;  // relative to the manifest root, *.f32

  const std::optional<Box>& gt_region() const {
    note_label_access("gt_region");
    return gt_region_;
  }
  const std::optional<int>& category_id() const {
    note_label_access("category_id");
    return category_id_;
  }

 private:
  friend nlohmann::json entry_to_json(const ManifestEntry&);
  std::optional<Box> gt_region_;
  std::optional<int> category_id_;
};

nlohmann::json entry_to_json(const ManifestEntry& e);

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::map<int, std::string> category_table;

  std::size_t size() const { return entries.size(); }
  /// Throws RangeError for unknown ids.
  std::size_t index_of(const std::string& sample_id) const;

 private:
  mutable std::map<std::string, std::size_t> index_cache_;
};

struct SplitSpec {
  std::vector<std::string> train_ids, val_ids, test_ids;
  std::vector<int> heard_categories, unheard_categories;
};

struct SynthConfig {
  int n_samples = 2000;
  int n_categories = 16;
  int image_size = 128;
  int spec_size = 64;
  int distractor_count = 2;
  double noise_level = 0.1;
  std::uint64_t seed = 7;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);
void to_json(nlohmann::json& j, const SplitSpec& s);
void from_json(const nlohmann::json& j, SplitSpec& s);

/// Writes root/{manifest.jsonl, frames/*.png, specs/*.f32 + *.json} and
/// returns the manifest. Output bytes are a pure function of the config.
DatasetManifest generate_synthetic_dataset(const SynthConfig& config, const std::filesystem::path& root);

/// Renders sample `index` of a synthetic dataset in memory (no file I/O).
AudioVisualSample render_synthetic_sample(const SynthConfig& config, int index);

DatasetManifest read_manifest(const std::filesystem::path& root);
void write_manifest(const DatasetManifest& manifest);

AudioVisualSample load_sample(const DatasetManifest& manifest, std::size_t index);

/// Frame and spectrogram only; never touches labels. The training path uses this.
struct UnlabeledSample {
  Frame frame;
  Spectrogram spectrogram;
};
UnlabeledSample load_unlabeled(const DatasetManifest& manifest, std::size_t index);

SplitSpec make_splits(const DatasetManifest& manifest, std::array<double, 3> fractions,
                      double unheard_fraction, std::uint64_t seed);

std::vector<std::size_t> indices_of(const DatasetManifest& manifest, const std::vector<std::string>& ids);

/// Nearest-template category decision from the spectrogram alone: the band
/// with the largest mean energy wins.
int classify_by_band_template(const Spectrogram& spec, int n_categories);

// Codecs.
void write_png(const std::filesystem::path& path, const Frame& frame);
Frame read_png(const std::filesystem::path& path);
void write_spectrogram(const std::filesystem::path& f32_path, const Spectrogram& spec);
Spectrogram read_spectrogram(const std::filesystem::path& f32_path);

void write_split_file(const std::filesystem::path& path, const SplitSpec& splits);
SplitSpec read_split_file(const std::filesystem::path& path);

}  // namespace avsl
