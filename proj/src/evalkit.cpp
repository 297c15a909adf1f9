#include "avsl/evalkit.hpp"

#include "avsl/objectives.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace avsl {

using nlohmann::json;

Grid<float> upsample_bilinear(const Grid<float>& map, int height, int width) {
  const auto h = static_cast<int>(map.rows());
  const auto w = static_cast<int>(map.cols());
  Grid<float> out(height, width);
  for (int y = 0; y < height; ++y) {
    const double sy = std::clamp((y + 0.5) * h / height - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < width; ++x) {
      const double sx = std::clamp((x + 0.5) * w / width - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      out(y, x) = static_cast<float>((1 - fy) * ((1 - fx) * map(y0, x0) + fx * map(y0, x1)) +
                                     fy * ((1 - fx) * map(y1, x0) + fx * map(y1, x1)));
    }
  }
  return out;
}

Grid<float> normalize_min_max(const Grid<float>& map) {
  const float lo = map.minCoeff();
  const float hi = map.maxCoeff();
  if (!(hi > lo)) return Grid<float>::Constant(map.rows(), map.cols(), 0.5f);
  return ((map.array() - lo) / (hi - lo)).matrix();
}

Mask localize_from_response(const Grid<float>& response, int height, int width, double map_threshold) {
  const Grid<float> normalized = normalize_min_max(upsample_bilinear(response, height, width));
  return normalized.array() > static_cast<float>(map_threshold);
}

Grid<float> response_for(const Frame& frame, const Spectrogram& spec, const ModelParams<float>& params) {
  return response_map<float>(encode_audio(spec, params), encode_image(frame, params));
}

Mask localize(const Frame& frame, const Spectrogram& spec, const ModelParams<float>& params, double map_threshold) {
  return localize_from_response(response_for(frame, spec, params), frame.height, frame.width, map_threshold);
}

Mask rasterize_box(const Box& box, int height, int width) {
  Mask m = Mask::Constant(height, width, false);
  const int x0 = std::clamp(box.x0, 0, width), x1 = std::clamp(box.x1, 0, width);
  const int y0 = std::clamp(box.y0, 0, height), y1 = std::clamp(box.y1, 0, height);
  if (x1 > x0 && y1 > y0) m.block(y0, x0, y1 - y0, x1 - x0).setConstant(true);
  return m;
}

double ciou(const Mask& pred, const Mask& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) throw EvaluationError("ciou: raster shapes differ");
  const auto gt_area = gt.count();
  if (gt_area == 0) throw EvaluationError("ciou: empty ground-truth region");
  const auto inter = (pred && gt).count();
  const auto uni = (pred || gt).count();
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double success_rate(std::span<const double> cious, double threshold) {
  if (cious.empty()) return 0.0;
  const auto hits = std::count_if(cious.begin(), cious.end(), [threshold](double c) { return c > 0.0 && c >= threshold; });
  return static_cast<double>(hits) / static_cast<double>(cious.size());
}

double auc_from_cious(std::span<const double> cious, double step) {
  const int n = static_cast<int>(std::lround(1.0 / step));
  double area = 0.0;
  double prev = success_rate(cious, 0.0);
  for (int k = 1; k <= n; ++k) {
    const double cur = success_rate(cious, static_cast<double>(k) / n);
    area += 0.5 * step * (prev + cur);
    prev = cur;
  }
  return area;
}

LocalizationReport summarize_localization(std::vector<std::string> ids, std::vector<double> cious, double success_threshold) {
  if (cious.empty()) throw EvaluationError("localization evaluation over an empty split");
  LocalizationReport r;
  r.sample_ids = std::move(ids);
  r.ciou = std::move(cious);
  r.n_samples = static_cast<int>(r.ciou.size());
  r.success_rate_at_0_5 = success_rate(r.ciou, success_threshold);
  r.auc = auc_from_cious(r.ciou);
  return r;
}

LocalizationReport evaluate_localization(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                                         const ModelParams<float>& params, const LocalizationOptions& options) {
  if (ids.empty()) throw EvaluationError("localization evaluation over an empty split");
  std::vector<std::string> kept;
  std::vector<double> scores;
  int skipped = 0;
  for (const auto& id : ids) {
    const AudioVisualSample s = load_sample(manifest, manifest.index_of(id));
    const auto& gt = s.gt_region();
    if (!gt || !gt->valid_in(s.frame.width, s.frame.height)) {
      ++skipped;
      continue;
    }
    const Mask pred = localize(s.frame, s.spectrogram, params, options.map_threshold);
    scores.push_back(ciou(pred, rasterize_box(*gt, s.frame.height, s.frame.width)));
    kept.push_back(id);
  }
  LocalizationReport r = summarize_localization(std::move(kept), std::move(scores), options.success_threshold);
  r.skipped = skipped;
  r.config = {{"map_threshold", options.map_threshold},
              {"success_threshold", options.success_threshold},
              {"auc_step", kAucStep}};
  return r;
}

OpenSetIds open_set_partition(const DatasetManifest& manifest, const SplitSpec& splits) {
  const std::set<int> unheard(splits.unheard_categories.begin(), splits.unheard_categories.end());
  OpenSetIds out;
  for (const auto& id : splits.test_ids) {
    const auto& cat = manifest.entries[manifest.index_of(id)].category_id();
    (cat && unheard.count(*cat) ? out.unheard : out.heard).push_back(id);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> rank_by_cosine(const Vector<float>& query, const Eigen::MatrixXf& candidates, std::size_t exclude) {
  const double qn = std::max(static_cast<double>(query.norm()), kNormFloor);
  std::vector<double> sim(static_cast<std::size_t>(candidates.rows()));
  for (Eigen::Index i = 0; i < candidates.rows(); ++i) {
    const double cn = std::max(static_cast<double>(candidates.row(i).norm()), kNormFloor);
    sim[static_cast<std::size_t>(i)] = candidates.row(i).cast<double>().dot(query.cast<double>()) / (qn * cn);
  }
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < sim.size(); ++i) {
    if (i != exclude) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
  return order;
}

RetrievalReport retrieval_from_embeddings(const Eigen::MatrixXf& queries, const Eigen::MatrixXf& candidates,
                                          const std::vector<int>& categories, const std::vector<int>& ks) {
  const auto n = static_cast<std::size_t>(queries.rows());
  if (static_cast<std::size_t>(candidates.rows()) != n || categories.size() != n) {
    throw ShapeError("retrieval: queries, candidates and categories must align");
  }
  if (std::set<int>(categories.begin(), categories.end()).size() < 2) {
    throw EvaluationError("retrieval needs at least two categories");
  }
  std::map<int, int> histogram;
  for (int c : categories) ++histogram[c];

  RetrievalReport r;
  std::map<int, double> hit_sum, prec_sum;
  for (std::size_t q = 0; q < n; ++q) {
    if (histogram[categories[q]] < 2) {
      ++r.skipped;
      continue;
    }
    ++r.n_queries;
    const auto ranked = rank_by_cosine(queries.row(static_cast<Eigen::Index>(q)).transpose(), candidates, q);
    for (int k : ks) {
      const std::size_t top = std::min(ranked.size(), static_cast<std::size_t>(k));
      int same = 0;
      for (std::size_t t = 0; t < top; ++t) same += categories[ranked[t]] == categories[q];
      hit_sum[k] += same > 0 ? 1.0 : 0.0;
      prec_sum[k] += top ? static_cast<double>(same) / static_cast<double>(top) : 0.0;
    }
  }
  for (int k : ks) {
    r.a_at_k[k] = r.n_queries ? hit_sum[k] / r.n_queries : 0.0;
    r.p_at_k[k] = r.n_queries ? prec_sum[k] / r.n_queries : 0.0;
  }
  return r;
}

namespace {

struct RetrievalInputs {
  Eigen::MatrixXf audio;   // one row per sample
  Eigen::MatrixXf pooled;  // spatially pooled image features
  std::vector<int> categories;
};

RetrievalInputs embed_split(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                            const ModelParams<float>& params, bool with_images) {
  const int c = params.arch.audio.embed_dim;
  RetrievalInputs in;
  in.audio.resize(static_cast<Eigen::Index>(ids.size()), c);
  if (with_images) in.pooled.resize(static_cast<Eigen::Index>(ids.size()), c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const AudioVisualSample s = load_sample(manifest, manifest.index_of(ids[i]));
    const auto& cat = s.category_id();
    if (!cat) throw EvaluationError("retrieval sample " + ids[i] + " has no category");
    in.categories.push_back(*cat);
    in.audio.row(static_cast<Eigen::Index>(i)) = encode_audio(s.spectrogram, params).transpose();
    if (with_images) {
      in.pooled.row(static_cast<Eigen::Index>(i)) = encode_image(s.frame, params).values.rowwise().mean().transpose();
    }
  }
  return in;
}

}  // namespace

RetrievalReport audio_retrieval(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                                const ModelParams<float>& params, const std::vector<int>& ks) {
  const RetrievalInputs in = embed_split(manifest, ids, params, false);
  return retrieval_from_embeddings(in.audio, in.audio, in.categories, ks);
}

RetrievalReport cross_modal_retrieval(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                                      const ModelParams<float>& params, const std::vector<int>& ks) {
  const RetrievalInputs in = embed_split(manifest, ids, params, true);
  return retrieval_from_embeddings(in.audio, in.pooled, in.categories, ks);
}

double chance_accuracy_at_k(const std::vector<int>& categories, int k) {
  std::map<int, int> histogram;
  for (int c : categories) ++histogram[c];
  const int n = static_cast<int>(categories.size());
  double total = 0.0;
  int queries = 0;
  for (int c : categories) {
    const int same = histogram[c] - 1;
    if (same < 1) continue;
    ++queries;
    // P(no same-category item among k draws without replacement from n - 1).
    const int pool = n - 1;
    const int draws = std::min(k, pool);
    double miss = 1.0;
    for (int t = 0; t < draws && miss > 0.0; ++t) {
      miss = pool - same - t <= 0 ? 0.0 : miss * (pool - same - t) / static_cast<double>(pool - t);
    }
    total += 1.0 - miss;
  }
  return queries ? total / queries : 0.0;
}

void to_json(json& j, const LocalizationReport& r) {
  j = {{"sample_ids", r.sample_ids},
       {"ciou", r.ciou},
       {"success_rate_at_0.5", r.success_rate_at_0_5},
       {"auc", r.auc},
       {"n_samples", r.n_samples},
       {"skipped", r.skipped},
       {"config", r.config}};
}

void to_json(json& j, const RetrievalReport& r) {
  json a = json::object(), p = json::object();
  for (const auto& [k, v] : r.a_at_k) a["A@" + std::to_string(k)] = v;
  for (const auto& [k, v] : r.p_at_k) p["P@" + std::to_string(k)] = v;
  j = {{"a_at_k", a}, {"p_at_k", p}, {"n_queries", r.n_queries}, {"skipped", r.skipped}};
}

}  // namespace avsl
