#include "avsl/trainer.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>

namespace avsl {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

AblationFlags AblationFlags::preset(char name) {
  switch (name) {
    case 'A': return {false, false, false, false, false};
    case 'B': return {true, false, false, false, false};
    case 'C': return {true, true, false, false, false};
    case 'D': return {true, true, true, false, false};
    case 'E': return {true, true, true, true, false};
    case 'F': return {true, true, true, true, true};
    default: throw ConfigError(std::string("unknown ablation preset '") + name + "' (expected A-F)");
  }
}

TrainConfig with_preset(TrainConfig base, char preset) {
  base.flags = AblationFlags::preset(preset);
  return base;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(lambda_geo >= 0)) throw ConfigError("lambda_geo must be >= 0");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  contrastive.validate();
  mask.validate();
  appearance.validate();
  geometric.validate();
  mixing().validate();
  arch.validate();
}

void to_json(json& j, const AblationFlags& f) {
  j = {{"use_app", f.use_app}, {"use_geo", f.use_geo}, {"use_mask", f.use_mask}, {"use_mix", f.use_mix}, {"use_lgeo", f.use_lgeo}};
}

void from_json(const json& j, AblationFlags& f) {
  f.use_app = j.value("use_app", f.use_app);
  f.use_geo = j.value("use_geo", f.use_geo);
  f.use_mask = j.value("use_mask", f.use_mask);
  f.use_mix = j.value("use_mix", f.use_mix);
  f.use_lgeo = j.value("use_lgeo", f.use_lgeo);
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"epochs", c.epochs},
       {"lambda_geo", c.lambda_geo},
       {"contrastive", c.contrastive},
       {"alpha_max", c.alpha_max},
       {"mask", c.mask},
       {"appearance", c.appearance},
       {"geometric", c.geometric},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every},
       {"flags", c.flags},
       {"shared_audio_draw", c.shared_audio_draw},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_epsilon", c.adam_epsilon},
       {"arch", c.arch}};
}

void from_json(const json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.lambda_geo = j.value("lambda_geo", c.lambda_geo);
  if (j.contains("contrastive")) j["contrastive"].get_to(c.contrastive);
  c.alpha_max = j.value("alpha_max", c.alpha_max);
  if (j.contains("mask")) j["mask"].get_to(c.mask);
  if (j.contains("appearance")) j["appearance"].get_to(c.appearance);
  if (j.contains("geometric")) j["geometric"].get_to(c.geometric);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  if (j.contains("flags")) j["flags"].get_to(c.flags);
  c.shared_audio_draw = j.value("shared_audio_draw", c.shared_audio_draw);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  if (j.contains("arch")) j["arch"].get_to(c.arch);
}

std::uint64_t TrainConfig::hash() const {
  json j = *this;
  j.erase("checkpoint_every");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Optimizer and checkpoints

namespace {

void adam_update(ParamSet<float>& params, ParamSet<float>& m, ParamSet<float>& v, const ParamSet<float>& grads,
                 const TrainConfig& c, std::int64_t step) {
  const auto b1 = static_cast<float>(c.adam_beta1);
  const auto b2 = static_cast<float>(c.adam_beta2);
  const auto bias1 = static_cast<float>(1.0 - std::pow(c.adam_beta1, static_cast<double>(step)));
  const auto bias2 = static_cast<float>(1.0 - std::pow(c.adam_beta2, static_cast<double>(step)));
  const auto lr = static_cast<float>(c.learning_rate);
  const auto eps = static_cast<float>(c.adam_epsilon);
  for (auto& [name, p] : params) {
    const auto& g = grads.at(name);
    auto& mm = m.at(name);
    auto& vv = v.at(name);
    mm = b1 * mm + (1.0f - b1) * g;
    vv = b2 * vv + (1.0f - b2) * g.cwiseProduct(g);
    p.array() -= lr * (mm.array() / bias1) / ((vv.array() / bias2).sqrt() + eps);
  }
}

AdamState fresh_adam(const ModelParams<float>& params) {
  AdamState s;
  s.m_visual = zeros_like(params.visual);
  s.v_visual = zeros_like(params.visual);
  s.m_audio = zeros_like(params.audio);
  s.v_audio = zeros_like(params.audio);
  return s;
}

}  // namespace

void adam_step(ModelParams<float>& params, AdamState& state, const ParamSet<float>& grad_visual,
               const ParamSet<float>& grad_audio, const TrainConfig& config) {
  ++state.step;
  adam_update(params.visual, state.m_visual, state.v_visual, grad_visual, config, state.step);
  adam_update(params.audio, state.m_audio, state.v_audio, grad_audio, config, state.step);
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  std::vector<NamedArray> arrays = params_to_arrays(ckpt.params);
  const std::pair<const char*, const ParamSet<float>*> moments[] = {{"adam.m.", &ckpt.optimizer.m_visual},
                                                                    {"adam.m.", &ckpt.optimizer.m_audio},
                                                                    {"adam.v.", &ckpt.optimizer.v_visual},
                                                                    {"adam.v.", &ckpt.optimizer.v_audio}};
  for (const auto& [prefix, set] : moments) {
    for (const auto& [k, v] : *set) arrays.push_back({prefix + k, v});
  }
  json header{{"arch_config", ckpt.params.arch},
              {"epoch", ckpt.epoch},
              {"rng_state", ckpt.rng_state},
              {"config_hash", ckpt.config_hash},
              {"config", ckpt.config},
              {"adam_step", ckpt.optimizer.step}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  write_array_file(tmp.string(), header, arrays);
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  json header;
  const auto arrays = read_array_file(path.string(), &header);
  Checkpoint ckpt;
  try {
    const ArchConfig arch = header.at("arch_config").get<ArchConfig>();
    ckpt.params = params_from_arrays(arch, arrays);
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.rng_state = header.value("rng_state", "");
    ckpt.config_hash = header.at("config_hash").get<std::uint64_t>();
    ckpt.config = header.value("config", json::object());
    ckpt.optimizer = fresh_adam(ckpt.params);
    ckpt.optimizer.step = header.value("adam_step", std::int64_t{0});
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  auto fill = [&](ParamSet<float>& set, const std::string& prefix) {
    for (auto& [k, v] : set) {
      auto it = by_name.find(prefix + k);
      if (it != by_name.end()) v = it->second->values;
    }
  };
  fill(ckpt.optimizer.m_visual, "adam.m.");
  fill(ckpt.optimizer.m_audio, "adam.m.");
  fill(ckpt.optimizer.v_visual, "adam.v.");
  fill(ckpt.optimizer.v_audio, "adam.v.");
  return ckpt;
}

// ---------------------------------------------------------------------------
// Siamese forward/backward

namespace {

constexpr std::uint64_t kAugmentStream = 0xA06;

struct BranchInputs {
  std::vector<Frame> frames;
  std::vector<Spectrogram> specs;
};

Spectrogram augment_audio(const TrainingItem& item, const TrainConfig& config, int epoch, int branch, double alpha,
                          MaskRecord* record) {
  const int audio_branch = config.shared_audio_draw ? 0 : branch;
  Rng rng(config.seed, kAugmentStream, static_cast<std::uint64_t>(epoch) << 32 | item.index,
          static_cast<std::uint64_t>(10 + audio_branch));
  Spectrogram spec = *item.spectrogram;
  if (config.flags.use_mix && item.mix_partner != nullptr) spec = mix_audio(spec, *item.mix_partner, alpha);
  if (config.flags.use_mask) spec = mask_spectrogram(spec, rng, config.mask, record);
  return spec;
}

}  // namespace

SiameseOutput forward_siamese(std::span<const TrainingItem> batch, const ModelParams<float>& params,
                              const TrainConfig& config, int epoch, double alpha, SiameseGradients* grads,
                              std::uint64_t params_version) {
  const int n = static_cast<int>(batch.size());
  if (n < 1) throw ConfigError("forward_siamese needs a non-empty batch");
  SiameseOutput out;
  BranchRecord* records[2] = {&out.branch1, &out.branch2};

  std::vector<Frame> frames;
  std::vector<Spectrogram> specs;
  frames.reserve(2 * static_cast<std::size_t>(n));
  specs.reserve(2 * static_cast<std::size_t>(n));
  for (int branch = 0; branch < 2; ++branch) {
    BranchRecord& rec = *records[branch];
    rec.params_version = params_version;
    for (const auto& item : batch) {
      Rng rng(config.seed, kAugmentStream, static_cast<std::uint64_t>(epoch) << 32 | item.index,
              static_cast<std::uint64_t>(branch));
      rec.sample_ids.push_back(item.sample_id);

      MaskRecord mask_record;
      specs.push_back(augment_audio(item, config, epoch, branch, alpha, &mask_record));
      rec.masks.push_back(mask_record);

      Frame frame = *item.frame;
      AppearanceParams app;
      if (config.flags.use_app) {
        app = sample_appearance(rng, config.appearance);
        frame = apply_appearance(frame, app);
      }
      rec.appearance.push_back(app);
      GeometricParams geo;
      if (branch == 1 && config.flags.use_geo) {
        geo = sample_geometric(rng, config.geometric);
        if (!geo.is_identity()) frame = apply_geometric_image(frame, geo);
      }
      rec.geometric.push_back(geo);
      frames.push_back(std::move(frame));
    }
  }

  // Both branches go through the same parameters in one stacked pass.
  const ConvEncoder<float> visual_net(params.arch.visual, "visual");
  const ConvEncoder<float> audio_net(params.arch.audio, "audio");
  for (const auto& f : frames) check_frame(f, params.arch.visual);
  for (const auto& s : specs) check_spectrogram(s, params.arch.audio);
  typename ConvEncoder<float>::Cache visual_cache, audio_cache;
  const Features<float> visual =
      visual_net.forward(params.visual, frames_to_input<float>(frames), 2 * n, grads ? &visual_cache : nullptr);
  const Features<float> audio_grid =
      audio_net.forward(params.audio, spectrograms_to_input<float>(specs), 2 * n, grads ? &audio_cache : nullptr);
  const Features<float> audio = global_average_pool(audio_grid, 2 * n);

  const int h = params.arch.visual.output_height();
  const int w = params.arch.visual.output_width();
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;

  ResponseCache<float> caches[2];
  ResponseMatrix<float> responses[2];
  Features<float> d_responses[2];
  double l_cl[2];
  for (int b = 0; b < 2; ++b) {
    const Features<float> a = audio.middleCols(b * n, n);
    const Features<float> v = visual.middleCols(b * n * hw, n * hw);
    responses[b] = response_matrix<float>(a, v, h, w, &caches[b]);
    const auto cl = contrastive_loss(responses[b], config.contrastive, grads ? &d_responses[b] : nullptr);
    l_cl[b] = cl.loss;
    for (int i = 0; i < n; ++i) records[b]->self_responses.push_back(responses[b].pair(i, i));
  }

  double l_geo = 0.0;
  if (config.flags.use_lgeo) {
    const float scale = static_cast<float>(config.lambda_geo / n);
    for (int i = 0; i < n; ++i) {
      Grid<float> d1, d2;
      const float li = equivariance_loss(out.branch1.self_responses[static_cast<std::size_t>(i)],
                                         out.branch2.self_responses[static_cast<std::size_t>(i)],
                                         out.branch2.geometric[static_cast<std::size_t>(i)], grads ? &d1 : nullptr,
                                         grads ? &d2 : nullptr);
      l_geo += li;
      if (grads) {
        d_responses[0].row(i).segment(i * hw, hw) += scale * Eigen::Map<const Eigen::RowVectorXf>(d1.data(), hw);
        d_responses[1].row(i).segment(i * hw, hw) += scale * Eigen::Map<const Eigen::RowVectorXf>(d2.data(), hw);
      }
    }
    l_geo /= n;
  }
  try {
    out.losses = total_loss(l_cl[0], l_cl[1], l_geo, config.lambda_geo);
  } catch (const NumericError& e) {
    throw NonFiniteLoss(e.what(), json{{"branch1", out.branch1}, {"branch2", out.branch2}});
  }

  if (grads) {
    Features<float> d_audio(audio.rows(), 2 * n);
    Features<float> d_visual(visual.rows(), visual.cols());
    for (int b = 0; b < 2; ++b) {
      Features<float> da, dv;
      response_matrix_backward(caches[b], d_responses[b], da, dv);
      d_audio.middleCols(b * n, n) = da;
      d_visual.middleCols(b * n * hw, n * hw) = dv;
    }
    grads->visual = zeros_like(params.visual);
    grads->audio = zeros_like(params.audio);
    visual_net.backward(params.visual, visual_cache, d_visual, grads->visual);
    const Eigen::Index audio_pixels = audio_grid.cols() / (2 * n);
    audio_net.backward(params.audio, audio_cache, global_average_pool_backward(d_audio, audio_pixels), grads->audio);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Logs

void to_json(json& j, const StepRecord& r) {
  j = {{"step", r.step},
       {"epoch", r.epoch},
       {"l_cl1", r.losses.l_cl_branch1},
       {"l_cl2", r.losses.l_cl_branch2},
       {"l_geo", r.losses.l_geo},
       {"l_total", r.losses.l_total},
       {"alpha", r.alpha}};
}

void to_json(json& j, const BranchRecord& r) {
  json masks = json::array();
  for (const auto& m : r.masks) {
    masks.push_back({{"time_start", m.time_start}, {"time_width", m.time_width}, {"freq_start", m.freq_start}, {"freq_width", m.freq_width}});
  }
  json maps = json::array();
  for (const auto& g : r.self_responses) maps.push_back(std::vector<float>(g.data(), g.data() + g.size()));
  j = {{"sample_ids", r.sample_ids}, {"appearance", r.appearance}, {"geometric", r.geometric},
       {"masks", masks},             {"self_responses", maps},      {"params_version", r.params_version}};
}

std::vector<double> epoch_mean_losses(const std::vector<StepRecord>& log) {
  std::map<int, std::pair<double, int>> acc;
  for (const auto& r : log) {
    auto& [sum, count] = acc[r.epoch];
    sum += r.losses.l_total;
    ++count;
  }
  std::vector<double> out;
  for (const auto& [epoch, sc] : acc) out.push_back(sc.first / sc.second);
  return out;
}

std::vector<StepRecord> read_training_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open training log " + path.string());
  std::vector<StepRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    StepRecord r;
    r.step = j.at("step").get<std::int64_t>();
    r.epoch = j.at("epoch").get<int>();
    r.alpha = j.at("alpha").get<double>();
    r.losses.l_cl_branch1 = j.at("l_cl1").get<double>();
    r.losses.l_cl_branch2 = j.at("l_cl2").get<double>();
    r.losses.l_geo = j.at("l_geo").get<double>();
    r.losses.l_total = j.at("l_total").get<double>();
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct CachedItem {
  std::size_t index;
  std::string sample_id;
  Frame frame;
  Spectrogram spectrogram;
};

Features<float> embed_spectrograms(const std::vector<CachedItem>& items, const ModelParams<float>& params) {
  constexpr std::size_t kChunk = 64;
  Features<float> out(params.arch.audio.embed_dim, static_cast<Eigen::Index>(items.size()));
  std::vector<Spectrogram> chunk;
  for (std::size_t start = 0; start < items.size(); start += kChunk) {
    chunk.clear();
    const std::size_t end = std::min(items.size(), start + kChunk);
    for (std::size_t i = start; i < end; ++i) chunk.push_back(items[i].spectrogram);
    out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        encode_audios<float>(chunk, params);
  }
  return out;
}

void dump_nonfinite(const TrainOptions& options, std::int64_t step, const json& records) {
  if (!options.out_dir) return;
  std::ofstream dump(*options.out_dir / ("nonfinite_step_" + std::to_string(step) + ".json"));
  dump << json{{"step", step}, {"records", records}}.dump() << '\n';
}

}  // namespace

TrainResult train(const DatasetManifest& manifest, const SplitSpec& splits, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  const std::uint64_t reads_before = label_access_count();
  TrainResult result;
  {
    const LabelFirewall firewall;

    Checkpoint& ckpt = result.checkpoint;
    if (options.resume) {
      if (options.resume->config_hash != config.hash() && !options.allow_config_mismatch) {
        throw ConfigError("checkpoint config hash does not match the training config; refusing to resume");
      }
      ckpt = *options.resume;
    } else {
      ckpt.params = init_parameters(config.seed, config.arch);
      ckpt.optimizer = fresh_adam(ckpt.params);
      ckpt.epoch = 0;
    }
    ckpt.config_hash = config.hash();
    ckpt.config = config;

    const auto train_indices = indices_of(manifest, splits.train_ids);
    std::vector<CachedItem> items;
    items.reserve(train_indices.size());
    for (auto idx : train_indices) {
      UnlabeledSample s = load_unlabeled(manifest, idx);
      items.push_back({idx, manifest.entries[idx].sample_id, std::move(s.frame), std::move(s.spectrogram)});
    }

    std::ofstream log_stream;
    if (options.out_dir) {
      fs::create_directories(*options.out_dir);
      log_stream.open(*options.out_dir / "train_log.jsonl", options.resume ? std::ios::app : std::ios::trunc);
    }

    std::int64_t step = ckpt.optimizer.step;
    std::uint64_t version = static_cast<std::uint64_t>(step);
    const int last_epoch = options.stop_after_epoch >= 0 ? std::min(config.epochs, options.stop_after_epoch) : config.epochs;
    for (int epoch = ckpt.epoch; epoch < last_epoch && !items.empty(); ++epoch) {
      std::vector<std::size_t> partners(items.size());
      std::iota(partners.begin(), partners.end(), std::size_t{0});
      if (config.flags.use_mix && items.size() >= 2) {
        const NeighborIndex index = build_neighbor_index(Features<float>(embed_spectrograms(items, ckpt.params).transpose()), epoch);
        partners = index.nearest;
      }
      const double alpha = config.flags.use_mix ? mixing_coefficient(epoch, config.mixing()) : 0.0;

      std::vector<std::size_t> order(items.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng shuffle_rng(config.seed, 0x5EED, static_cast<std::uint64_t>(epoch));
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);
      }

      double epoch_loss = 0.0;
      int epoch_steps = 0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
        std::vector<TrainingItem> batch;
        for (std::size_t k = start; k < end; ++k) {
          const CachedItem& it = items[order[k]];
          const CachedItem* partner = config.flags.use_mix ? &items[partners[order[k]]] : nullptr;
          batch.push_back({it.index, it.sample_id, &it.frame, &it.spectrogram, partner ? &partner->spectrogram : nullptr});
        }
        SiameseGradients grads;
        SiameseOutput out;
        try {
          out = forward_siamese(batch, ckpt.params, config, epoch, alpha, &grads, version);
        } catch (const NonFiniteLoss& e) {
          dump_nonfinite(options, step + 1, e.branch_records);
          throw;
        }
        if (out.branch1.params_version != out.branch2.params_version) {
          throw std::logic_error("siamese branches observed different parameter versions");
        }
        adam_step(ckpt.params, ckpt.optimizer, grads.visual, grads.audio, config);
        ++version;
        ++step;
        StepRecord rec{step, epoch, out.losses, alpha};
        result.log.push_back(rec);
        if (log_stream.is_open()) log_stream << json(rec).dump() << '\n';
        if (options.on_step) options.on_step(rec);
        epoch_loss += out.losses.l_total;
        ++epoch_steps;
      }
      ckpt.epoch = epoch + 1;
      ckpt.rng_state = Rng(config.seed, 0x5EED, static_cast<std::uint64_t>(epoch + 1)).state();
      if (options.on_epoch) options.on_epoch(epoch, epoch_steps ? epoch_loss / epoch_steps : 0.0);
      if (options.out_dir && (ckpt.epoch % config.checkpoint_every == 0 || ckpt.epoch == last_epoch)) {
        log_stream.flush();
        save_checkpoint(ckpt, *options.out_dir / ("checkpoint_epoch" + std::to_string(ckpt.epoch) + ".ckpt"));
        save_checkpoint(ckpt, *options.out_dir / "checkpoint_last.ckpt");
      }
    }
    if (options.out_dir && config.epochs == 0) save_checkpoint(ckpt, *options.out_dir / "checkpoint_last.ckpt");
  }
  result.label_reads = label_access_count() - reads_before;
  if (result.label_reads != 0) throw SupervisionLeak("training read ground-truth labels");
  return result;
}

}  // namespace avsl
