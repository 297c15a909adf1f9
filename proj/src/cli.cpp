#include "avsl/cli.hpp"

#include "avsl/data_synth.hpp"
#include "avsl/evalkit.hpp"
#include "avsl/trainer.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace avsl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Flags shared by most commands. Optional members stay unset unless given.
struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string data_dir;
  std::optional<std::string> preset;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> learning_rate;
  std::optional<std::string> negatives;
  std::optional<double> temperature;
  std::optional<std::string> unpaired;
  bool overwrite = false;
};

struct OperationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_dir(const std::string& value, const char* flag) {
  if (value.empty()) throw OperationError(std::string(flag) + " is required");
}

void guard_output(const fs::path& path, bool overwrite) {
  if (fs::exists(path) && !overwrite) {
    throw OperationError(path.string() + " already exists; pass --overwrite to replace it");
  }
}

void write_json(const fs::path& path, const json& j, CommandResult& result) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  result.artifacts.push_back(path.string());
}

/// Config file first, then flags.
TrainConfig resolve_train_config(const CommonFlags& f) {
  TrainConfig config;
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw IoError("cannot open config " + f.config_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("invalid config file " + f.config_path + ": " + e.what());
    }
    config = j.get<TrainConfig>();
  }
  if (f.seed) config.seed = *f.seed;
  if (f.epochs) config.epochs = *f.epochs;
  if (f.batch_size) config.batch_size = *f.batch_size;
  if (f.learning_rate) config.learning_rate = *f.learning_rate;
  if (f.negatives) config.contrastive.negatives = nlohmann::json(*f.negatives).get<NegativeMode>();
  if (f.temperature) config.contrastive.temperature = *f.temperature;
  if (f.unpaired) config.contrastive.unpaired = nlohmann::json(*f.unpaired).get<UnpairedPooling>();
  if (f.preset) {
    if (f.preset->size() != 1) throw ConfigError("--preset takes one of A-F");
    config = with_preset(config, (*f.preset)[0]);
  }
  return config;
}

/// Matches the encoder input sizes to the dataset on disk.
void fit_arch_to_data(TrainConfig& config, const DatasetManifest& manifest) {
  if (manifest.entries.empty()) return;
  const UnlabeledSample s = load_unlabeled(manifest, 0);
  config.arch.visual.input_height = s.frame.height;
  config.arch.visual.input_width = s.frame.width;
  config.arch.audio.input_height = static_cast<int>(s.spectrogram.rows());
  config.arch.audio.input_width = static_cast<int>(s.spectrogram.cols());
}

SplitSpec load_splits(const fs::path& data_dir) {
  const fs::path path = data_dir / "splits.json";
  if (!fs::exists(path)) throw OperationError("no splits.json in " + data_dir.string() + " (run gen-data first)");
  return read_split_file(path);
}

std::vector<std::string> split_ids(const DatasetManifest& manifest, const SplitSpec& splits, const std::string& which) {
  if (which == "test") return splits.test_ids;
  if (which == "val") return splits.val_ids;
  if (which == "train") return splits.train_ids;
  if (which == "heard") return open_set_partition(manifest, splits).heard;
  if (which == "unheard") return open_set_partition(manifest, splits).unheard;
  throw ConfigError("unknown split '" + which + "' (test, val, train, heard, unheard)");
}

// ---------------------------------------------------------------------------

CommandResult cmd_gen_data(const CommonFlags& f, SynthConfig synth, std::array<double, 3> fractions, double unheard,
                           std::ostream& out) {
  require_dir(f.data_dir, "--data-dir");
  CommandResult result;
  const fs::path root = f.data_dir;
  guard_output(root / "manifest.jsonl", f.overwrite);
  if (f.seed) synth.seed = *f.seed;
  if (f.overwrite && fs::exists(root)) {
    fs::remove_all(root / "frames");
    fs::remove_all(root / "specs");
  }
  const DatasetManifest manifest = generate_synthetic_dataset(synth, root);
  result.artifacts.push_back((root / "manifest.jsonl").string());
  SplitSpec splits;
  if (!manifest.entries.empty()) splits = make_splits(manifest, fractions, unheard, synth.seed);
  write_split_file(root / "splits.json", splits);
  result.artifacts.push_back((root / "splits.json").string());
  out << "generated " << manifest.size() << " samples in " << root.string() << " (train " << splits.train_ids.size()
      << ", val " << splits.val_ids.size() << ", test " << splits.test_ids.size() << ")\n";
  return result;
}

CommandResult cmd_train(const CommonFlags& f, const std::string& resume, bool force_resume, std::ostream& out) {
  require_dir(f.data_dir, "--data-dir");
  require_dir(f.out_dir, "--out-dir");
  CommandResult result;
  const fs::path out_dir = f.out_dir;
  const DatasetManifest manifest = read_manifest(f.data_dir);
  const SplitSpec splits = load_splits(f.data_dir);
  TrainConfig config = resolve_train_config(f);
  fit_arch_to_data(config, manifest);
  if (resume.empty()) guard_output(out_dir / "checkpoint_last.ckpt", f.overwrite);

  TrainOptions options;
  options.out_dir = out_dir;
  options.allow_config_mismatch = force_resume;
  if (!resume.empty()) options.resume = load_checkpoint(resume);
  options.on_epoch = [&out](int epoch, double loss) {
    out << "epoch " << epoch << " mean loss " << std::setprecision(6) << loss << '\n';
  };
  fs::create_directories(out_dir);
  write_json(out_dir / "resolved_config.json", json(config), result);
  const TrainResult trained = train(manifest, splits, config, options);
  result.artifacts.push_back((out_dir / "train_log.jsonl").string());
  result.artifacts.push_back((out_dir / "checkpoint_last.ckpt").string());
  out << "trained " << trained.log.size() << " steps; checkpoint " << (out_dir / "checkpoint_last.ckpt").string() << '\n';
  return result;
}

ModelParams<float> params_from_checkpoint(const std::string& path) {
  if (path.empty()) throw OperationError("--checkpoint is required");
  return load_checkpoint(path).params;
}

void write_ciou_csv(const fs::path& path, const LocalizationReport& r, CommandResult& result) {
  std::ofstream csv(path);
  csv << "sample_id,ciou\n";
  for (std::size_t i = 0; i < r.ciou.size(); ++i) csv << r.sample_ids[i] << ',' << r.ciou[i] << '\n';
  result.artifacts.push_back(path.string());
}

CommandResult cmd_eval_loc(const CommonFlags& f, const std::string& checkpoint, const std::string& split,
                           double map_threshold, std::ostream& out) {
  require_dir(f.data_dir, "--data-dir");
  require_dir(f.out_dir, "--out-dir");
  CommandResult result;
  const fs::path report_path = fs::path(f.out_dir) / ("localization_" + split + ".json");
  guard_output(report_path, f.overwrite);
  const DatasetManifest manifest = read_manifest(f.data_dir);
  const SplitSpec splits = load_splits(f.data_dir);
  const ModelParams<float> params = params_from_checkpoint(checkpoint);
  LocalizationOptions options;
  options.map_threshold = map_threshold;
  LocalizationReport report = evaluate_localization(manifest, split_ids(manifest, splits, split), params, options);
  report.config["split"] = split;
  report.config["checkpoint"] = checkpoint;
  write_json(report_path, json(report), result);
  write_ciou_csv(fs::path(f.out_dir) / ("localization_" + split + ".csv"), report, result);
  out << "cIoU@0.5 " << report.success_rate_at_0_5 << "  AUC " << report.auc << "  (n=" << report.n_samples << ")\n";
  return result;
}

CommandResult cmd_eval_retrieval(const CommonFlags& f, const std::string& checkpoint, const std::string& split,
                                 const std::vector<int>& ks, std::ostream& out) {
  require_dir(f.data_dir, "--data-dir");
  require_dir(f.out_dir, "--out-dir");
  CommandResult result;
  const fs::path report_path = fs::path(f.out_dir) / ("retrieval_" + split + ".json");
  guard_output(report_path, f.overwrite);
  const DatasetManifest manifest = read_manifest(f.data_dir);
  const SplitSpec splits = load_splits(f.data_dir);
  const ModelParams<float> params = params_from_checkpoint(checkpoint);
  const auto ids = split_ids(manifest, splits, split);
  const RetrievalReport audio = audio_retrieval(manifest, ids, params, ks);
  const RetrievalReport cross = cross_modal_retrieval(manifest, ids, params, ks);
  std::vector<int> categories;
  for (const auto& id : ids) categories.push_back(manifest.entries[manifest.index_of(id)].category_id().value_or(-1));
  json chance = json::object();
  for (int k : ks) chance["A@" + std::to_string(k)] = chance_accuracy_at_k(categories, k);
  write_json(report_path,
             {{"audio_retrieval", audio},
              {"cross_modal_retrieval", cross},
              {"chance", chance},
              {"config", {{"split", split}, {"checkpoint", checkpoint}, {"ks", ks}}}},
             result);
  for (int k : ks) {
    out << "A@" << k << " audio " << audio.a_at_k.at(k) << "  cross-modal " << cross.a_at_k.at(k) << '\n';
  }
  return result;
}

// --- plot ------------------------------------------------------------------

std::string svg_polyline(const std::vector<double>& ys, double lo, double hi, int width, int height, const char* color) {
  std::ostringstream os;
  os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double x = 50 + (ys.size() > 1 ? static_cast<double>(i) / (ys.size() - 1) : 0.0) * (width - 70);
    const double y = height - 30 - (hi > lo ? (ys[i] - lo) / (hi - lo) : 0.5) * (height - 50);
    os << x << ',' << y << ' ';
  }
  os << "\"/>\n";
  return os.str();
}

void write_loss_curves(const std::vector<StepRecord>& log, const fs::path& path) {
  std::map<int, std::array<double, 5>> acc;  // l_total, l_cl1, l_cl2, l_geo, count
  for (const auto& r : log) {
    auto& a = acc[r.epoch];
    a[0] += r.losses.l_total;
    a[1] += r.losses.l_cl_branch1;
    a[2] += r.losses.l_cl_branch2;
    a[3] += r.losses.l_geo;
    a[4] += 1;
  }
  std::array<std::vector<double>, 4> series;
  for (const auto& [epoch, a] : acc) {
    for (int s = 0; s < 4; ++s) series[static_cast<std::size_t>(s)].push_back(a[static_cast<std::size_t>(s)] / a[4]);
  }
  double lo = 0.0, hi = 1e-9;
  for (const auto& s : series) {
    for (double v : s) hi = std::max(hi, v);
  }
  constexpr int kW = 640, kH = 360;
  static constexpr const char* kNames[] = {"l_total", "l_cl1", "l_cl2", "l_geo"};
  static constexpr const char* kColors[] = {"black", "steelblue", "darkorange", "seagreen"};
  std::ofstream svg(path);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"50\" y=\"16\" font-size=\"12\">mean loss per epoch (max " << hi << ")</text>\n";
  for (int s = 0; s < 4; ++s) {
    svg << svg_polyline(series[static_cast<std::size_t>(s)], lo, hi, kW, kH, kColors[s]);
    svg << "<text x=\"" << 60 + 90 * s << "\" y=\"" << kH - 8 << "\" font-size=\"11\" fill=\"" << kColors[s] << "\">"
        << kNames[s] << "</text>\n";
  }
  svg << "</svg>\n";
}

Frame overlay(const Frame& frame, const Grid<float>& heat, const std::optional<Box>& box) {
  Frame out = frame;
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      const float h = heat(y, x);
      const float heat_rgb[3] = {h, 0.2f * h, 1.0f - h};
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0.5f * frame.at(y, x, c) + 0.5f * heat_rgb[c];
    }
  }
  if (box) {
    for (int x = box->x0; x < box->x1; ++x) {
      for (int y : {box->y0, box->y1 - 1}) {
        out.at(y, x, 0) = 1.0f;
        out.at(y, x, 1) = 1.0f;
        out.at(y, x, 2) = 1.0f;
      }
    }
    for (int y = box->y0; y < box->y1; ++y) {
      for (int x : {box->x0, box->x1 - 1}) {
        out.at(y, x, 0) = 1.0f;
        out.at(y, x, 1) = 1.0f;
        out.at(y, x, 2) = 1.0f;
      }
    }
  }
  return out;
}

CommandResult cmd_plot(const CommonFlags& f, const std::string& log_path, const std::string& checkpoint,
                       const std::string& split, int n_overlays, std::ostream& out) {
  require_dir(f.out_dir, "--out-dir");
  CommandResult result;
  const fs::path out_dir = f.out_dir;
  fs::create_directories(out_dir);
  if (!log_path.empty()) {
    const fs::path svg = out_dir / "loss_curves.svg";
    guard_output(svg, f.overwrite);
    write_loss_curves(read_training_log(log_path), svg);
    result.artifacts.push_back(svg.string());
  }
  if (!checkpoint.empty()) {
    require_dir(f.data_dir, "--data-dir");
    const DatasetManifest manifest = read_manifest(f.data_dir);
    const SplitSpec splits = load_splits(f.data_dir);
    const ModelParams<float> params = params_from_checkpoint(checkpoint);
    const auto ids = split_ids(manifest, splits, split);
    for (int i = 0; i < std::min<int>(n_overlays, static_cast<int>(ids.size())); ++i) {
      const AudioVisualSample s = load_sample(manifest, manifest.index_of(ids[static_cast<std::size_t>(i)]));
      const Grid<float> heat =
          normalize_min_max(upsample_bilinear(response_for(s.frame, s.spectrogram, params), s.frame.height, s.frame.width));
      const fs::path png = out_dir / ("overlay_" + s.sample_id + ".png");
      guard_output(png, f.overwrite);
      write_png(png, overlay(s.frame, heat, s.gt_region()));
      result.artifacts.push_back(png.string());
    }
  }
  if (result.artifacts.empty()) throw OperationError("plot needs --log and/or --checkpoint");
  out << "wrote " << result.artifacts.size() << " plot artifacts to " << out_dir.string() << '\n';
  return result;
}

// --- ablate ----------------------------------------------------------------

CommandResult cmd_ablate(const CommonFlags& f, const std::string& preset_list, std::ostream& out) {
  require_dir(f.data_dir, "--data-dir");
  require_dir(f.out_dir, "--out-dir");
  CommandResult result;
  const fs::path out_dir = f.out_dir;
  guard_output(out_dir / "ablation.json", f.overwrite);
  const DatasetManifest manifest = read_manifest(f.data_dir);
  const SplitSpec splits = load_splits(f.data_dir);
  CommonFlags base_flags = f;
  base_flags.preset.reset();
  TrainConfig base = resolve_train_config(base_flags);
  fit_arch_to_data(base, manifest);

  std::vector<char> presets;
  std::stringstream ss(preset_list);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (token.size() != 1) throw ConfigError("--preset-list takes comma-separated letters A-F");
    AblationFlags::preset(token[0]);
    presets.push_back(token[0]);
  }

  json rows = json::array();
  std::ofstream csv;
  const auto evaluate = [&](const std::string& name, const ModelParams<float>& params, const json& flags) {
    const LocalizationReport r = evaluate_localization(manifest, splits.test_ids, params);
    rows.push_back({{"model", name}, {"flags", flags}, {"success_rate_at_0.5", r.success_rate_at_0_5}, {"auc", r.auc}, {"n_samples", r.n_samples}});
    out << std::left << std::setw(8) << name << " cIoU@0.5 " << std::fixed << std::setprecision(4) << r.success_rate_at_0_5
        << "  AUC " << r.auc << '\n';
  };

  evaluate("random", init_parameters(base.seed, base.arch), nullptr);
  for (char p : presets) {
    const TrainConfig config = with_preset(base, p);
    const fs::path run_dir = out_dir / (std::string("preset_") + p);
    const fs::path ckpt_path = run_dir / "checkpoint_last.ckpt";
    ModelParams<float> params;
    if (fs::exists(ckpt_path) && !f.overwrite) {
      const Checkpoint existing = load_checkpoint(ckpt_path);
      if (existing.config_hash != config.hash() || existing.epoch != config.epochs) {
        throw OperationError(ckpt_path.string() + " is from a different run; pass --overwrite");
      }
      params = existing.params;
    } else {
      TrainOptions options;
      options.out_dir = run_dir;
      params = train(manifest, splits, config, options).checkpoint.params;
    }
    result.artifacts.push_back(ckpt_path.string());
    evaluate(std::string(1, p), params, json(config.flags));
  }

  write_json(out_dir / "ablation.json", {{"rows", rows}, {"config", json(base)}}, result);
  const fs::path csv_path = out_dir / "ablation.csv";
  csv.open(csv_path);
  csv << "model,success_rate_at_0.5,auc,n_samples\n";
  for (const auto& r : rows) {
    csv << r["model"].get<std::string>() << ',' << r["success_rate_at_0.5"].get<double>() << ','
        << r["auc"].get<double>() << ',' << r["n_samples"].get<int>() << '\n';
  }
  result.artifacts.push_back(csv_path.string());
  return result;
}

void add_common(CLI::App* cmd, CommonFlags& f, bool training) {
  cmd->add_option("--config", f.config_path, "JSON config file (flags override it)");
  cmd->add_option("--seed", f.seed, "Seed for every random stream");
  cmd->add_option("--out-dir", f.out_dir, "Output directory");
  cmd->add_option("--data-dir", f.data_dir, "Dataset root");
  cmd->add_flag("--overwrite", f.overwrite, "Replace existing outputs");
  if (training) {
    cmd->add_option("--preset", f.preset, "Ablation preset A-F")->check(CLI::IsMember({"A", "B", "C", "D", "E", "F"}));
    cmd->add_option("--epochs", f.epochs, "Training epochs");
    cmd->add_option("--batch-size", f.batch_size, "Batch size");
    cmd->add_option("--lr", f.learning_rate, "Learning rate");
    cmd->add_option("--negatives", f.negatives, "Negative aggregation: sum or set")->check(CLI::IsMember({"sum", "set"}));
    cmd->add_option("--temperature", f.temperature, "Contrastive logit temperature");
    cmd->add_option("--unpaired", f.unpaired, "Unpaired map pooling: mean or masked")
        ->check(CLI::IsMember({"mean", "masked"}));
  }
}

}  // namespace

CommandResult run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-supervised audio-visual sound localization"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");

  CommonFlags f;

  SynthConfig synth;
  std::array<double, 3> fractions{0.8, 0.1, 0.1};
  double unheard = 0.0;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic audio-visual dataset");
  add_common(gen, f, false);
  gen->add_option("--n-samples", synth.n_samples);
  gen->add_option("--n-categories", synth.n_categories);
  gen->add_option("--image-size", synth.image_size);
  gen->add_option("--spec-size", synth.spec_size);
  gen->add_option("--distractors", synth.distractor_count);
  gen->add_option("--noise", synth.noise_level);
  gen->add_option("--train-frac", fractions[0]);
  gen->add_option("--val-frac", fractions[1]);
  gen->add_option("--test-frac", fractions[2]);
  gen->add_option("--unheard-fraction", unheard, "Fraction of categories held out of training");

  std::string resume;
  bool force_resume = false;
  auto* train_cmd = app.add_subcommand("train", "Train the Siamese localization model");
  add_common(train_cmd, f, true);
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from");
  train_cmd->add_flag("--force-resume", force_resume, "Resume even if the config hash differs");

  std::string checkpoint;
  std::string split = "test";
  double map_threshold = 0.5;
  auto* eval_loc = app.add_subcommand("eval-loc", "cIoU / AUC localization evaluation");
  add_common(eval_loc, f, false);
  eval_loc->add_option("--checkpoint", checkpoint)->required();
  eval_loc->add_option("--split", split, "test, val, heard or unheard");
  eval_loc->add_option("--map-threshold", map_threshold);

  std::vector<int> ks{1, 5, 10};
  auto* eval_ret = app.add_subcommand("eval-retrieval", "Audio and cross-modal retrieval (A@K, P@K)");
  add_common(eval_ret, f, false);
  eval_ret->add_option("--checkpoint", checkpoint)->required();
  eval_ret->add_option("--split", split);
  eval_ret->add_option("--ks", ks)->delimiter(',');

  std::string log_path;
  int n_overlays = 8;
  auto* plot = app.add_subcommand("plot", "Loss curves and heatmap overlays");
  add_common(plot, f, false);
  plot->add_option("--log", log_path, "train_log.jsonl");
  plot->add_option("--checkpoint", checkpoint);
  plot->add_option("--split", split);
  plot->add_option("--n-overlays", n_overlays);

  std::string preset_list = "A,B,C,D,E,F";
  auto* ablate = app.add_subcommand("ablate", "Train presets A-F and compare localization");
  add_common(ablate, f, true);
  ablate->add_option("--preset-list", preset_list, "Comma-separated presets");

  std::vector<std::string> args{"avsl"};
  args.insert(args.end(), argv.begin(), argv.end());
  std::vector<char*> raw;
  for (auto& a : args) raw.push_back(a.data());
  try {
    app.parse(static_cast<int>(raw.size()), raw.data());
  } catch (const CLI::CallForHelp& e) {
    return {app.exit(e, out, err), {}};
  } catch (const CLI::CallForAllHelp& e) {
    return {app.exit(e, out, err), {}};
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return {2, {}};
  }

  try {
    if (gen->parsed()) return cmd_gen_data(f, synth, fractions, unheard, out);
    if (train_cmd->parsed()) return cmd_train(f, resume, force_resume, out);
    if (eval_loc->parsed()) return cmd_eval_loc(f, checkpoint, split, map_threshold, out);
    if (eval_ret->parsed()) return cmd_eval_retrieval(f, checkpoint, split, ks, out);
    if (plot->parsed()) return cmd_plot(f, log_path, checkpoint, split, n_overlays, out);
    if (ablate->parsed()) return cmd_ablate(f, preset_list, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return {1, {}};
  }
  err << app.help();
  return {2, {}};
}

}  // namespace avsl::cli
