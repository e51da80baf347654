// SPDX-License-Identifier: Apache-2.0

#include "dcomp/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "dcomp/dataset.hpp"
#include "dcomp/gradcheck.hpp"
#include "dcomp/interp.hpp"
#include "dcomp/metrics.hpp"
#include "dcomp/pipeline.hpp"
#include "dcomp/png_io.hpp"

namespace fs = std::filesystem;

namespace dcomp {

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

nlohmann::json make_metadata(const std::string& command, const nlohmann::json& config, const nlohmann::json& extra) {
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
  nlohmann::json m = {{"tool", kToolName}, {"version", kToolVersion}, {"command", command}, {"config_hash", hash},
                      {"config", config}};
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = *it;
  return m;
}

namespace {

// Raised for bad user input; reported with exit code 1 like I/O errors.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

void write_meta(const fs::path& path, const nlohmann::json& meta) { write_text(path, meta.dump(2) + "\n"); }

fs::path sidecar(const fs::path& artifact) { return fs::path(artifact.string() + ".meta.json"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

void require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) throw UsageError(std::string(what) + " " + p.string() + " is not a directory");
}

// Output path must not collide with an input; parent must be creatable.
void require_writable_target(const fs::path& out) {
  if (out.empty()) throw UsageError("output path is empty");
  if (fs::exists(out) && fs::is_directory(out)) throw UsageError("output " + out.string() + " is a directory");
}

std::string prediction_path(const FrameRef& ref, const fs::path& out) {
  return (out / ref.split / ref.scene / "pred" / (ref.name + ".png")).string();
}

// PNG files under `root` keyed by relative path without extension and with
// the first directory component equal to one of `kinds` removed. The first
// kind that matches any file wins; otherwise every PNG is keyed as-is.
std::map<std::string, fs::path> collect_pngs(const fs::path& root, const std::vector<std::string>& kinds) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  auto key_of = [&](const fs::path& f, const std::string& drop) -> std::optional<std::string> {
    fs::path rel = fs::relative(f, root);
    rel.replace_extension();
    fs::path key;
    bool dropped = drop.empty();
    for (const auto& part : rel) {
      if (!dropped && part == drop) {
        dropped = true;
        continue;
      }
      key /= part;
    }
    if (!dropped) return std::nullopt;
    return key.generic_string();
  };
  for (const std::string& kind : kinds) {
    std::map<std::string, fs::path> m;
    for (const auto& f : files) {
      if (auto k = key_of(f, kind)) m.emplace(*k, f);
    }
    if (!m.empty()) return m;
  }
  std::map<std::string, fs::path> m;
  for (const auto& f : files) m.emplace(*key_of(f, ""), f);
  return m;
}

void check_densifiable(const DepthMap& sparse, InterpMethod method, const std::string& where) {
  const std::size_t n = sparse.valid_count();
  std::size_t need = 1;
  if (method == InterpMethod::kLinear || method == InterpMethod::kCubic) need = 3;
  if (method == InterpMethod::kRbf) need = 2;
  if (n < need) {
    throw UsageError(where + ": " + std::to_string(n) + " valid pixels, " + to_string(method) + " needs at least " +
                     std::to_string(need));
  }
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& config_path, const fs::path& out, std::size_t n, std::uint64_t seed,
              const std::string& split, const std::string& scene, std::ostream& os) {
  SceneConfig cfg;
  if (!config_path.empty()) {
    const nlohmann::json j = read_json(config_path);
    if (j.contains("data")) {
      // An experiment config: take its synthetic scene description.
      const auto& d = j.at("data");
      cfg = d.contains("synthetic") && d.at("synthetic").contains("scene")
                ? scene_config_from_json(d.at("synthetic").at("scene"))
                : SceneConfig{};
    } else {
      cfg = scene_config_from_json(j);
    }
  }
  cfg.validate();
  if (n == 0) throw UsageError("--n must be >= 1");
  const fs::path dir = out / split / scene;
  for (std::size_t i = 0; i < n; ++i) {
    const Frame f = make_synthetic_frame(cfg, seed, i, split + "/" + scene);
    write_frame(out, split, scene, i, f);
  }
  const nlohmann::json config = {{"scene", to_json(cfg)}, {"n", n}, {"seed", seed}, {"split", split}, {"scene_name", scene}};
  write_meta(dir / "meta.json", make_metadata("synth", config));
  os << "wrote " << n << " frames to " << dir.string() << "\n";
  return 0;
}

int cmd_densify(const std::string& method_name, const fs::path& in, const fs::path& out, std::ostream& os) {
  const InterpMethod method = parse_interp_method(method_name);
  require_dir(in, "input");
  const std::vector<FrameRef> refs = list_frames(in);
  if (refs.empty()) throw UsageError("no <split>/<scene>/sparse/*.png frames under " + in.string());
  for (const FrameRef& r : refs) check_densifiable(read_depth_png(r.path("sparse")), method, r.key());
  const DensifyOptions opt;
  for (const FrameRef& r : refs) {
    write_depth_png(densify(read_depth_png(r.path("sparse")), method, opt), prediction_path(r, out));
  }
  const nlohmann::json config = {{"method", to_string(method)},
                                 {"input", in.generic_string()},
                                 {"frames", refs.size()},
                                 {"rbf_max_sites", opt.rbf_max_sites},
                                 {"rbf_seed", opt.rbf_seed}};
  write_meta(out / "meta.json", make_metadata("densify", config));
  os << "densified " << refs.size() << " frames with " << to_string(method) << " into " << out.string() << "\n";
  return 0;
}

int cmd_eval(const fs::path& pred, const fs::path& gt, const fs::path& out, const std::string& method,
             std::ostream& os) {
  require_dir(pred, "prediction");
  require_dir(gt, "groundtruth");
  require_writable_target(out);
  const auto gts = collect_pngs(gt, {"groundtruth"});
  const auto preds = collect_pngs(pred, {"pred", "groundtruth"});
  if (gts.empty()) throw UsageError("no groundtruth PNGs under " + gt.string());
  for (const auto& [key, path] : gts) {
    if (!preds.count(key)) throw UsageError("no prediction for groundtruth frame '" + key + "'");
  }
  MetricAccumulator acc;
  for (const auto& [key, path] : gts) acc.add(read_depth_png(preds.at(key)), read_depth_png(path), key);
  const MetricReport r = acc.report();
  const std::string csv = std::string(kMetricCsvHeader) + "\n" + metric_csv_row(method, r) + "\n";
  write_text(out, csv);
  const nlohmann::json config = {
      {"pred", pred.generic_string()}, {"gt", gt.generic_string()}, {"method", method}, {"frames", gts.size()}};
  write_meta(sidecar(out), make_metadata("eval", config, {{"n_valid_pixels", r.n_valid_pixels}}));
  os << csv;
  return 0;
}

int cmd_train(const fs::path& config_path, const fs::path& out, std::ostream& os, std::ostream& es) {
  require_writable_target(out);
  const ExperimentConfig cfg = load_experiment_config(config_path);
  const DatasetSplits data = load_dataset(cfg.data);
  const RunResult r = run_variant(cfg, data, cfg.seed, [&es](const std::string& line) { es << line << "\n"; });
  write_checkpoint(r.checkpoint, out);
  write_text(fs::path(out.string() + ".log.jsonl"), r.log);
  const nlohmann::json config = to_json(cfg);
  write_meta(sidecar(out), make_metadata("train", config,
                                         {{"best_epoch", r.best_epoch},
                                          {"val_rmse_mm", r.val_report.rmse_mm},
                                          {"val_mae_mm", r.val_report.mae_mm}}));
  os << kMetricCsvHeader << "\n" << metric_csv_row(to_string(cfg.model.variant), r.val_report) << "\n";
  return 0;
}

int cmd_infer(const fs::path& ckpt_path, const fs::path& in, const fs::path& out, std::ostream& os) {
  const Checkpoint ckpt = read_checkpoint(ckpt_path);
  const Model model = model_from_checkpoint(ckpt);
  require_dir(in, "input");
  const std::vector<FrameRef> refs = list_frames(in);
  if (refs.empty()) throw UsageError("no <split>/<scene>/sparse/*.png frames under " + in.string());
  for (const FrameRef& r : refs) {
    const RgbImage rgb = read_rgb_png(r.path("image"));
    const DepthMap sp = read_depth_png(r.path("sparse"));
    if (rgb.height() != sp.height() || rgb.width() != sp.width()) {
      throw UsageError(r.key() + ": image and sparse sizes differ");
    }
  }
  for (const FrameRef& r : refs) {
    write_depth_png(infer(model, read_rgb_png(r.path("image")), read_depth_png(r.path("sparse"))),
                    prediction_path(r, out));
  }
  const std::size_t passes = model.refine_frames();
  const nlohmann::json config = {{"checkpoint", ckpt_path.generic_string()},
                                 {"checkpoint_hash", fnv1a64(serialize_checkpoint(ckpt))},
                                 {"input", in.generic_string()},
                                 {"frames", refs.size()}};
  write_meta(out / "meta.json", make_metadata("infer", config, {{"refinement_passes", passes}}));
  os << "inferred " << refs.size() << " frames (" << to_string(model.config().variant) << ", refinement passes "
     << passes << ") into " << out.string() << "\n";
  return 0;
}

int cmd_gradcheck(std::size_t instances, std::uint64_t seed, std::ostream& os) {
  GradcheckOptions opt;
  opt.instances = instances;
  opt.seed = seed;
  const GradcheckReport r = run_gradcheck(opt);
  char line[160];
  for (const OpResult& o : r.ops) {
    std::snprintf(line, sizeof(line), "%-36s %3zu instances  max rel err %.3e  %s\n", o.op.c_str(), o.instances,
                  o.max_rel_error, o.passed ? "ok" : "FAIL");
    os << line;
  }
  os << (r.passed() ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance " << opt.tolerance << ", step "
     << opt.step << ")\n";
  return r.passed() ? 0 : 2;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad seed '" + item + "' in --seeds");
    }
  }
  if (seeds.empty()) throw UsageError("--seeds is empty");
  return seeds;
}

int cmd_variants(const fs::path& config_path, const fs::path& out, const std::string& seeds_arg,
                 const std::string& variants_arg, std::ostream& os, std::ostream& es) {
  require_writable_target(out);
  const ExperimentConfig cfg = load_experiment_config(config_path);
  const std::vector<std::uint64_t> seeds = seeds_arg.empty() ? cfg.seeds : parse_seed_list(seeds_arg);
  std::vector<Variant> variants;
  if (variants_arg.empty()) {
    variants = all_variants();
  } else {
    std::stringstream ss(variants_arg);
    std::string item;
    while (std::getline(ss, item, ',')) variants.push_back(parse_variant(item));
  }
  const DatasetSplits data = load_dataset(cfg.data);
  std::string log;
  const VariantStudy study = run_variant_study(cfg, data, variants, seeds, [&](const std::string& line) {
    es << line << "\n";
    log += line + "\n";
  });
  const std::string csv = study.csv();
  write_text(out, csv);
  write_text(fs::path(out.string() + ".log.jsonl"), log);
  nlohmann::json config = to_json(cfg);
  config["seeds"] = seeds;
  nlohmann::json names = nlohmann::json::array();
  for (Variant v : variants) names.push_back(to_string(v));
  config["variants"] = names;
  write_meta(sidecar(out), make_metadata("variants", config));
  os << csv;
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Depth completion with single-pass deformable refinement", kToolName};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::string synth_config, synth_split = "train", synth_scene = "synth";
  std::string synth_out;
  std::size_t synth_n = 0;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset");
  synth->add_option("--config", synth_config, "Scene JSON (or an experiment config)");
  synth->add_option("--out", synth_out, "Dataset root")->required();
  synth->add_option("--n", synth_n, "Number of frames")->required();
  synth->add_option("--seed", synth_seed, "Scene seed")->required();
  synth->add_option("--split", synth_split, "Split directory name");
  synth->add_option("--scene", synth_scene, "Scene directory name");

  std::string dens_method, dens_in, dens_out;
  auto* dens = app.add_subcommand("densify", "Interpolate sparse depth with a classical method");
  dens->add_option("--method", dens_method, "nearest | linear | cubic | rbf")->required();
  dens->add_option("--in", dens_in, "Dataset root")->required();
  dens->add_option("--out", dens_out, "Output root")->required();

  std::string eval_pred, eval_gt, eval_out, eval_method = "prediction";
  auto* eval = app.add_subcommand("eval", "Compute RMSE/MAE/iRMSE/iMAE");
  eval->add_option("--pred", eval_pred, "Prediction root")->required();
  eval->add_option("--gt", eval_gt, "Groundtruth root")->required();
  eval->add_option("--out", eval_out, "Report CSV")->required();
  eval->add_option("--method", eval_method, "Method name for the CSV row");

  std::string train_config, train_out;
  auto* train = app.add_subcommand("train", "Train one variant");
  train->add_option("--config", train_config, "Experiment JSON")->required();
  train->add_option("--out", train_out, "Checkpoint path")->required();

  std::string infer_ckpt, infer_in, infer_out;
  auto* inf = app.add_subcommand("infer", "Predict dense depth with a trained checkpoint");
  inf->add_option("--ckpt", infer_ckpt, "Checkpoint")->required();
  inf->add_option("--in", infer_in, "Dataset root")->required();
  inf->add_option("--out", infer_out, "Output root")->required();

  std::size_t gc_instances = 20;
  std::uint64_t gc_seed = GradcheckOptions{}.seed;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gc->add_option("--instances", gc_instances, "Random instances per op");
  gc->add_option("--seed", gc_seed, "Seed");

  std::string var_config, var_out = "variants.csv", var_seeds, var_list;
  auto* var = app.add_subcommand("variants", "Train and compare every topology over several seeds");
  var->add_option("--config", var_config, "Experiment JSON")->required();
  var->add_option("--out", var_out, "Comparison CSV");
  var->add_option("--seeds", var_seeds, "Comma-separated seeds (default: config seeds)");
  var->add_option("--variants", var_list, "Comma-separated variants (default: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(synth_config, synth_out, synth_n, synth_seed, synth_split, synth_scene, out);
    if (*dens) return cmd_densify(dens_method, dens_in, dens_out, out);
    if (*eval) return cmd_eval(eval_pred, eval_gt, eval_out, eval_method, out);
    if (*train) return cmd_train(train_config, train_out, out, err);
    if (*inf) return cmd_infer(infer_ckpt, infer_in, infer_out, out);
    if (*gc) return cmd_gradcheck(gc_instances, gc_seed, out);
    if (*var) return cmd_variants(var_config, var_out, var_seeds, var_list, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace dcomp
