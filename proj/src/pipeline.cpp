// SPDX-License-Identifier: Apache-2.0

#include "dcomp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "dcomp/interp.hpp"
#include "dcomp/rng.hpp"

namespace dcomp {

Variant parse_variant(const std::string& name) {
  if (name == "backbone_only") return Variant::kBackboneOnly;
  if (name == "variant1_deform_on_sparse") return Variant::kDeformOnSparse;
  if (name == "variant2_deform_on_nn") return Variant::kDeformOnNn;
  if (name == "deform_on_coarse") return Variant::kDeformOnCoarse;
  throw std::invalid_argument("unknown variant '" + name +
                              "' (expected backbone_only, variant1_deform_on_sparse, variant2_deform_on_nn, "
                              "deform_on_coarse)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kBackboneOnly: return "backbone_only";
    case Variant::kDeformOnSparse: return "variant1_deform_on_sparse";
    case Variant::kDeformOnNn: return "variant2_deform_on_nn";
    case Variant::kDeformOnCoarse: return "deform_on_coarse";
  }
  return "?";
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::kBackboneOnly, Variant::kDeformOnSparse, Variant::kDeformOnNn,
                                      Variant::kDeformOnCoarse};
  return v;
}

void ModelConfig::validate() const {
  backbone.validate();
  require_odd_kernel(k);
  if (!std::isfinite(init_weight_bias)) {
    throw std::invalid_argument("model: init_weight_bias must be finite");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"backbone", to_json(c.backbone)},
          {"k", c.k},
          {"subtract_mean_weights", c.subtract_mean_weights},
          {"init_weight_bias", c.init_weight_bias}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.backbone = backbone_config_from_json(j.at("backbone"));
  c.k = j.at("k").get<std::size_t>();
  c.subtract_mean_weights = j.at("subtract_mean_weights").get<bool>();
  c.init_weight_bias = j.at("init_weight_bias").get<double>();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

Model::Model(const ModelConfig& cfg)
    : Model(cfg, Backbone(cfg.backbone),
            RefineHeads::create(2 * cfg.backbone.base_channels, cfg.k, cfg.init_weight_bias)) {}

Model::Model(const ModelConfig& cfg, const Backbone& backbone, const RefineHeads& heads)
    : cfg_(cfg), backbone_(backbone), heads_(heads), counter_(std::make_shared<std::atomic<std::size_t>>(0)) {
  cfg_.validate();
}

ModelOutput Model::forward(const Tensor& rgb, const Tensor& sparse) const {
  const BackboneOutput b = backbone_.forward(rgb, sparse);
  const Tensor coarse = fuse(b.d_c, b.d_d, b.c_c, b.c_d);
  if (!refines()) return {coarse, coarse};
  Tensor base;
  switch (cfg_.variant) {
    case Variant::kDeformOnCoarse: base = coarse; break;
    case Variant::kDeformOnSparse: base = sparse.detach(); break;
    case Variant::kDeformOnNn: base = nearest_densify_batch(sparse); break;
    case Variant::kBackboneOnly: break;
  }
  const FieldTensors f = predict_fields(concat({b.z_d, b.z_c}, 1), heads_);
  counter_->fetch_add(sparse.dim(0));
  return {deform_refine(base, f.weights, f.offsets, cfg_.k, cfg_.subtract_mean_weights), coarse};
}

ParamList Model::params() const {
  ParamList p = backbone_.params();
  if (refines()) {
    for (auto& h : heads_.params()) p.push_back(h);
  }
  return p;
}

Model Model::frozen() const {
  RefineHeads h = heads_;
  h.weight_w = h.weight_w.detach();
  h.weight_b = h.weight_b.detach();
  h.offset_w = h.offset_w.detach();
  h.offset_b = h.offset_b.detach();
  Model m(cfg_, backbone_.detached(), h);
  m.counter_ = counter_;
  return m;
}

Tensor nearest_densify_batch(const Tensor& sparse) {
  if (sparse.rank() != 4 || sparse.dim(1) != 1) throw ShapeError("nearest_densify_batch: expected [N,1,H,W]");
  const std::size_t n = sparse.dim(0), h = sparse.dim(2), w = sparse.dim(3);
  std::vector<double> out;
  out.reserve(n * h * w);
  for (std::size_t b = 0; b < n; ++b) {
    auto s = sparse.data().subspan(b * h * w, h * w);
    const DepthMap d = densify(DepthMap::from_depths(h, w, {s.begin(), s.end()}), InterpMethod::kNearest);
    out.insert(out.end(), d.depths().begin(), d.depths().end());
  }
  return Tensor::from(sparse.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
      throw std::invalid_argument(where + ": unknown key '" + it.key() + "'");
    }
  }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

nlohmann::json to_json(const SceneConfig& c) {
  return {{"width", c.width},
          {"height", c.height},
          {"fov_deg", c.fov_deg},
          {"camera_height", c.camera_height},
          {"pitch_deg", c.pitch_deg},
          {"depth_min", c.depth_min},
          {"depth_max", c.depth_max},
          {"n_boxes", c.n_boxes},
          {"n_poles", c.n_poles},
          {"n_spheres", c.n_spheres},
          {"backdrop", c.backdrop},
          {"light_dir", c.light_dir},
          {"ambient", c.ambient},
          {"sparse_density", c.sparse_density},
          {"sparse_pattern", to_string(c.sparse_pattern)},
          {"gt_density", c.gt_density}};
}

SceneConfig scene_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"width", "height", "fov_deg", "camera_height", "pitch_deg", "depth_min", "depth_max", "n_boxes",
                  "n_poles", "n_spheres", "backdrop", "light_dir", "ambient", "sparse_density", "sparse_pattern",
                  "gt_density"},
                 "scene");
  SceneConfig c;
  read_opt(j, "width", c.width);
  read_opt(j, "height", c.height);
  read_opt(j, "fov_deg", c.fov_deg);
  read_opt(j, "camera_height", c.camera_height);
  read_opt(j, "pitch_deg", c.pitch_deg);
  read_opt(j, "depth_min", c.depth_min);
  read_opt(j, "depth_max", c.depth_max);
  read_opt(j, "n_boxes", c.n_boxes);
  read_opt(j, "n_poles", c.n_poles);
  read_opt(j, "n_spheres", c.n_spheres);
  read_opt(j, "backdrop", c.backdrop);
  read_opt(j, "light_dir", c.light_dir);
  read_opt(j, "ambient", c.ambient);
  read_opt(j, "sparse_density", c.sparse_density);
  if (j.contains("sparse_pattern")) c.sparse_pattern = parse_sparse_pattern(j.at("sparse_pattern").get<std::string>());
  read_opt(j, "gt_density", c.gt_density);
  c.validate();
  return c;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"variant", "seed", "seeds", "k", "subtract_mean_weights", "init_weight_bias", "backbone", "loss",
                  "optim", "augment", "data"},
                 "experiment config");
  if (!j.contains("seed")) throw std::invalid_argument("experiment config: 'seed' is required");
  ExperimentConfig c;
  c.source = j;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.seeds = j.contains("seeds") ? j.at("seeds").get<std::vector<std::uint64_t>>() : std::vector<std::uint64_t>{c.seed};
  if (c.seeds.empty()) throw std::invalid_argument("experiment config: 'seeds' must not be empty");
  if (j.contains("variant")) c.model.variant = parse_variant(j.at("variant").get<std::string>());
  read_opt(j, "k", c.model.k);
  read_opt(j, "subtract_mean_weights", c.model.subtract_mean_weights);
  read_opt(j, "init_weight_bias", c.model.init_weight_bias);
  if (j.contains("backbone")) {
    c.model.backbone = backbone_config_from_json(j.at("backbone"));
    c.auto_init_depth = !j.at("backbone").contains("init_depth");
  }
  c.model.validate();
  if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"));
  if (j.contains("optim")) c.optim = optim_config_from_json(j.at("optim"));
  if (j.contains("augment")) c.augment = augment_config_from_json(j.at("augment"));
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, {"root", "synthetic"}, "data");
    if (d.contains("root") == d.contains("synthetic")) {
      throw std::invalid_argument("data: give exactly one of 'root' or 'synthetic'");
    }
    if (d.contains("root")) {
      c.data.root = d.at("root").get<std::string>();
    } else {
      const auto& s = d.at("synthetic");
      reject_unknown(s, {"scene", "n_train", "n_val", "seed"}, "data.synthetic");
      if (s.contains("scene")) c.data.scene = scene_config_from_json(s.at("scene"));
      read_opt(s, "n_train", c.data.n_train);
      read_opt(s, "n_val", c.data.n_val);
      read_opt(s, "seed", c.data.seed);
    }
  }
  c.data.scene.validate();
  if (c.data.root.empty() && (c.data.n_train == 0 || c.data.n_val == 0)) {
    throw std::invalid_argument("data.synthetic: n_train and n_val must be >= 1");
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json data;
  if (!c.data.root.empty()) {
    data = {{"root", c.data.root}};
  } else {
    data = {{"synthetic",
             {{"scene", to_json(c.data.scene)}, {"n_train", c.data.n_train}, {"n_val", c.data.n_val}, {"seed", c.data.seed}}}};
  }
  nlohmann::json backbone = to_json(c.model.backbone);
  if (c.auto_init_depth) backbone.erase("init_depth");
  backbone.erase("seed");
  return {{"variant", to_string(c.model.variant)},
          {"seed", c.seed},
          {"seeds", c.seeds},
          {"k", c.model.k},
          {"subtract_mean_weights", c.model.subtract_mean_weights},
          {"init_weight_bias", c.model.init_weight_bias},
          {"backbone", backbone},
          {"loss", to_json(c.loss)},
          {"optim", to_json(c.optim)},
          {"augment", to_json(c.augment)},
          {"data", data}};
}

DatasetSplits load_dataset(const DataConfig& cfg) {
  DatasetSplits d;
  if (!cfg.root.empty()) {
    d.train = load_split(cfg.root, "train");
    d.val = load_split(cfg.root, "val");
  } else {
    d.train = make_synthetic_frames(cfg.scene, cfg.seed, cfg.n_train, 0, "train");
    d.val = make_synthetic_frames(cfg.scene, cfg.seed, cfg.n_val, cfg.n_train, "val");
  }
  if (d.train.empty()) throw std::invalid_argument("dataset: empty train split");
  if (d.val.empty()) throw std::invalid_argument("dataset: empty val split");
  return d;
}

// ---------------------------------------------------------------------------
// Training and evaluation

namespace {

struct Batch {
  Tensor rgb, sparse, gt;
};

Batch stack(const std::vector<Sample>& samples) {
  const std::size_t h = samples.front().sparse.height(), w = samples.front().sparse.width(), n = samples.size();
  std::vector<double> rgb, sp, gt;
  rgb.reserve(n * 3 * h * w);
  sp.reserve(n * h * w);
  gt.reserve(n * h * w);
  for (const Sample& s : samples) {
    if (s.sparse.height() != h || s.sparse.width() != w) {
      throw std::invalid_argument("batch: frames of different sizes; set an augment crop");
    }
    rgb.insert(rgb.end(), s.rgb.planar().begin(), s.rgb.planar().end());
    sp.insert(sp.end(), s.sparse.depths().begin(), s.sparse.depths().end());
    gt.insert(gt.end(), s.groundtruth.depths().begin(), s.groundtruth.depths().end());
  }
  return {Tensor::from({n, 3, h, w}, std::move(rgb)), Tensor::from({n, 1, h, w}, std::move(sp)),
          Tensor::from({n, 1, h, w}, std::move(gt))};
}

Sample as_sample(const Frame& f) {
  if (f.groundtruth.size() == 0) throw std::invalid_argument("frame " + f.key + " has no groundtruth");
  return {f.rgb, f.sparse, f.groundtruth};
}

double mean_train_depth(const std::vector<Frame>& frames) {
  double s = 0.0;
  std::size_t n = 0;
  for (const Frame& f : frames) {
    for (std::size_t i = 0; i < f.groundtruth.size(); ++i) {
      if (f.groundtruth.valid_at(i)) {
        s += f.groundtruth.depth_at(i);
        ++n;
      }
    }
  }
  if (n == 0) throw std::invalid_argument("training groundtruth has no valid pixels");
  return s / static_cast<double>(n);
}

Tensor total_loss(const ModelOutput& out, const Tensor& gt, const LossConfig& loss) {
  Tensor l = masked_loss(out.depth, gt, loss);
  if (loss.aux_coarse_weight > 0.0) l = add(l, mul_scalar(masked_loss(out.coarse, gt, loss), loss.aux_coarse_weight));
  return l;
}

nlohmann::json metrics_json(const MetricReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(format_metric(v)); };
  return {{"rmse_mm", num(r.rmse_mm)},
          {"mae_mm", num(r.mae_mm)},
          {"irmse_1perkm", num(r.irmse_per_km)},
          {"imae_1perkm", num(r.imae_per_km)},
          {"n_valid", r.n_valid_pixels}};
}

}  // namespace

double dataset_loss(const Model& model, const std::vector<Frame>& frames, const LossConfig& loss) {
  if (frames.empty()) throw std::invalid_argument("dataset_loss: no frames");
  const Model m = model.frozen();
  double total = 0.0;
  for (const Frame& f : frames) {
    const Batch b = stack({as_sample(f)});
    total += total_loss(m.forward(b.rgb, b.sparse), b.gt, loss).item();
  }
  return total / static_cast<double>(frames.size());
}

MetricReport evaluate(const Model& model, const std::vector<Frame>& frames) {
  MetricAccumulator acc;
  for (const Frame& f : frames) acc.add(infer(model, f.rgb, f.sparse), f.groundtruth, f.key);
  return acc.report();
}

RunResult run_variant(const ExperimentConfig& cfg, const DatasetSplits& data, std::uint64_t seed,
                      const std::function<void(const std::string&)>& on_log) {
  if (data.train.empty()) throw std::invalid_argument("run_variant: empty train split");
  if (data.val.empty()) throw std::invalid_argument("run_variant: empty val split");
  ModelConfig mc = cfg.model;
  mc.backbone.seed = seed;
  if (cfg.auto_init_depth) mc.backbone.init_depth = mean_train_depth(data.train);
  Model model(mc);
  Adam opt(model.params(), cfg.optim);

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 order_rng(mix_seed({seed, 0x0de5}));

  RunResult result;
  double best = std::numeric_limits<double>::infinity();
  std::ostringstream log;
  for (std::size_t epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    const double lr = lr_at(cfg.optim, epoch);
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.optim.batch_size) {
      std::vector<Sample> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.optim.batch_size); ++i) {
        batch.push_back(augment(as_sample(data.train[order[i]]), cfg.augment, mix_seed({seed, epoch, order[i]})));
      }
      const Batch b = stack(batch);
      const Tensor loss = total_loss(model.forward(b.rgb, b.sparse), b.gt, cfg.loss);
      opt.zero_grad();
      loss.backward();
      opt.step(lr);
      loss_sum += loss.item();
      ++steps;
    }
    const double train_loss = loss_sum / static_cast<double>(steps);
    result.epoch_train_loss.push_back(train_loss);
    const MetricReport val = evaluate(model, data.val);
    nlohmann::json line = {{"epoch", epoch}, {"lr", lr}, {"train_loss", train_loss}, {"val", metrics_json(val)}};
    const std::string text = line.dump();
    log << text << "\n";
    if (on_log) on_log(text);
    if (val.rmse_mm < best) {
      best = val.rmse_mm;
      result.best_epoch = epoch;
      result.val_report = val;
      result.checkpoint = make_checkpoint(
          model, {{"seed", seed}, {"epoch", epoch}, {"val", metrics_json(val)}, {"experiment", to_json(cfg)}});
    }
  }
  if (!std::isfinite(best)) throw std::runtime_error("run_variant: validation RMSE never became finite");
  result.log = log.str();
  return result;
}

Checkpoint make_checkpoint(const Model& model, nlohmann::json meta) {
  Checkpoint c;
  c.meta = std::move(meta);
  c.meta["model"] = to_json(model.config());
  for (const auto& p : model.params()) c.params.push_back({p.name, p.tensor.detach()});
  return c;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("model")) throw std::invalid_argument("checkpoint has no model description");
  Model m(model_config_from_json(ckpt.meta.at("model")));
  ParamList target = m.params();
  load_params(target, ckpt.params);
  return m;
}

DepthMap infer(const Model& model, const RgbImage& rgb, const DepthMap& sparse) {
  if (rgb.height() != sparse.height() || rgb.width() != sparse.width()) {
    throw std::invalid_argument("infer: rgb and sparse sizes differ");
  }
  const std::size_t h = sparse.height(), w = sparse.width(), mul = model.config().backbone.size_multiple();
  const std::size_t ph = (h + mul - 1) / mul * mul, pw = (w + mul - 1) / mul * mul;
  std::vector<double> rgbv(3 * ph * pw), spv(ph * pw, 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t r = 0; r < ph; ++r) {
      for (std::size_t x = 0; x < pw; ++x) rgbv[(c * ph + r) * pw + x] = rgb.at(c, std::min(r, h - 1), std::min(x, w - 1));
    }
  }
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t x = 0; x < w; ++x) spv[r * pw + x] = sparse.depth(r, x);
  }
  const Model m = model.frozen();
  const ModelOutput out = m.forward(Tensor::from({1, 3, ph, pw}, std::move(rgbv)), Tensor::from({1, 1, ph, pw}, std::move(spv)));
  auto d = out.depth.data();
  std::vector<double> res(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t x = 0; x < w; ++x) {
      const double v = d[r * pw + x];
      res[r * w + x] = v > 0.0 && std::isfinite(v) ? v : 0.0;
    }
  }
  return DepthMap::from_depths(h, w, std::move(res));
}

// ---------------------------------------------------------------------------

MetricReport VariantStudy::median(Variant v) const {
  std::vector<double> m[4];
  for (const StudyRow& r : rows) {
    if (r.variant != v) continue;
    m[0].push_back(r.report.rmse_mm);
    m[1].push_back(r.report.mae_mm);
    m[2].push_back(r.report.irmse_per_km);
    m[3].push_back(r.report.imae_per_km);
  }
  if (m[0].empty()) throw std::invalid_argument("VariantStudy: no rows for " + to_string(v));
  auto med = [](std::vector<double> x) {
    std::sort(x.begin(), x.end());
    const std::size_t n = x.size();
    return n % 2 == 1 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
  };
  MetricReport out;
  out.rmse_mm = med(m[0]);
  out.mae_mm = med(m[1]);
  out.irmse_per_km = med(m[2]);
  out.imae_per_km = med(m[3]);
  return out;
}

std::string VariantStudy::csv() const {
  std::string s = std::string(kVariantCsvHeader) + "\n";
  std::vector<Variant> seen;
  for (const StudyRow& r : rows) {
    s += to_string(r.variant) + "," + metric_csv_row("seed=" + std::to_string(r.seed), r.report) + "\n";
    if (std::find(seen.begin(), seen.end(), r.variant) == seen.end()) seen.push_back(r.variant);
  }
  for (Variant v : seen) s += to_string(v) + "," + metric_csv_row("median", median(v)) + "\n";
  return s;
}

VariantStudy run_variant_study(const ExperimentConfig& cfg, const DatasetSplits& data,
                               const std::vector<Variant>& variants, const std::vector<std::uint64_t>& seeds,
                               const std::function<void(const std::string&)>& on_log) {
  VariantStudy study;
  for (Variant v : variants) {
    ExperimentConfig c = cfg;
    c.model.variant = v;
    for (std::uint64_t seed : seeds) {
      auto tagged = [&](const std::string& line) {
        if (!on_log) return;
        nlohmann::json j = nlohmann::json::parse(line);
        j["variant"] = to_string(v);
        j["seed"] = seed;
        on_log(j.dump());
      };
      const RunResult r = run_variant(c, data, seed, tagged);
      study.rows.push_back({v, seed, r.val_report});
    }
  }
  return study;
}

}  // namespace dcomp
