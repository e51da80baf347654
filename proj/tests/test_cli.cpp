// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "dcomp/cli.hpp"
#include "dcomp/dataset.hpp"
#include "dcomp/png_io.hpp"
#include "test_util.hpp"

namespace dcomp {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "dcomp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> files_under(const fs::path& root) {
  std::vector<std::string> v;
  if (!fs::exists(root)) return v;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) v.push_back(fs::relative(e.path(), root).generic_string());
  std::sort(v.begin(), v.end());
  return v;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p);
  f << s;
}

constexpr const char* kTinyExperiment = R"({
  "variant": "deform_on_coarse",
  "seed": 3,
  "seeds": [3, 4],
  "backbone": {"base_channels": 8},
  "optim": {"epochs": 2},
  "data": {"synthetic": {"scene": {"width": 32, "height": 32}, "n_train": 4, "n_val": 2}}
})";

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"densify", "--method", "nearest"}).code, 1);
}

TEST(Cli, SynthIsDeterministic) {
  const fs::path dir = test::scratch_dir("cli_synth");
  ASSERT_EQ(run({"synth", "--out", (dir / "a").string(), "--n", "2", "--seed", "5"}).code, 0);
  ASSERT_EQ(run({"synth", "--out", (dir / "b").string(), "--n", "2", "--seed", "5"}).code, 0);
  const auto fa = files_under(dir / "a");
  ASSERT_EQ(fa, files_under(dir / "b"));
  EXPECT_EQ(fa.size(), 7u);  // 3 kinds x 2 frames + meta
  for (const auto& f : fa) EXPECT_EQ(test::read_file(dir / "a" / f), test::read_file(dir / "b" / f)) << f;
  const auto meta = nlohmann::json::parse(test::read_file(dir / "a/train/synth/meta.json"));
  EXPECT_EQ(meta.at("tool"), kToolName);
  EXPECT_EQ(meta.at("version"), kToolVersion);
  EXPECT_FALSE(meta.contains("timestamp"));
}

TEST(Cli, SynthAcceptsSceneConfig) {
  const fs::path dir = test::scratch_dir("cli_synth_cfg");
  write_text(dir / "scene.json", R"({"width": 24, "height": 16, "sparse_density": 0.1})");
  ASSERT_EQ(run({"synth", "--config", (dir / "scene.json").string(), "--out", (dir / "d").string(), "--n", "1",
                 "--seed", "1", "--split", "val", "--scene", "s"})
                .code,
            0);
  const DepthMap m = read_depth_png(dir / "d/val/s/sparse/00000.png");
  EXPECT_EQ(m.width(), 24u);
  EXPECT_EQ(m.valid_count(), 38u);
  write_text(dir / "bad.json", R"({"widht": 24})");
  EXPECT_EQ(run({"synth", "--config", (dir / "bad.json").string(), "--out", (dir / "e").string(), "--n", "1",
                 "--seed", "1"})
                .code,
            1);
  EXPECT_FALSE(fs::exists(dir / "e"));
}

TEST(Cli, EvalOfGroundtruthAgainstItselfIsZero) {
  const fs::path dir = test::scratch_dir("cli_eval_self");
  ASSERT_EQ(run({"synth", "--out", (dir / "d").string(), "--n", "2", "--seed", "1"}).code, 0);
  const CliRun r = run({"eval", "--pred", (dir / "d").string(), "--gt", (dir / "d").string(), "--out",
                     (dir / "r.csv").string(), "--method", "self"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(test::read_file(dir / "r.csv"),
            "method,rmse_mm,mae_mm,irmse_1perkm,imae_1perkm\nself,0.0000,0.0000,0.0000,0.0000\n");
  EXPECT_TRUE(fs::exists(dir / "r.csv.meta.json"));
}

TEST(Cli, DensifyOnePointFrameIsConstant) {
  const fs::path dir = test::scratch_dir("cli_one_point");
  DepthMap sp(8, 10);
  sp.set(3, 4, 12.5);
  fs::create_directories(dir / "in/val/s/sparse");
  write_depth_png(sp, dir / "in/val/s/sparse/00000.png");
  const CliRun r = run({"densify", "--method", "nearest", "--in", (dir / "in").string(), "--out", (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const DepthMap d = read_depth_png(dir / "out/val/s/pred/00000.png");
  EXPECT_TRUE(d.fully_valid());
  for (double v : d.depths()) EXPECT_EQ(v, 12.5);
  const auto meta = nlohmann::json::parse(test::read_file(dir / "out/meta.json"));
  EXPECT_EQ(meta.at("config").at("rbf_seed"), 20240917u);
}

TEST(Cli, DensifyValidatesBeforeWriting) {
  const fs::path dir = test::scratch_dir("cli_densify_validate");
  ASSERT_EQ(run({"synth", "--out", (dir / "in").string(), "--n", "2", "--seed", "1"}).code, 0);
  DepthMap two(64, 64);
  two.set(1, 1, 3.0);
  two.set(5, 5, 4.0);
  write_depth_png(two, dir / "in/train/synth/sparse/00001.png");  // too few points for linear
  const CliRun r = run({"densify", "--method", "linear", "--in", (dir / "in").string(), "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("00001"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "out"));
  EXPECT_EQ(run({"densify", "--method", "spline", "--in", (dir / "in").string(), "--out", (dir / "out").string()})
                .code,
            1);
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(Cli, EvalRequiresEveryPrediction) {
  const fs::path dir = test::scratch_dir("cli_eval_missing");
  ASSERT_EQ(run({"synth", "--out", (dir / "d").string(), "--n", "2", "--seed", "1"}).code, 0);
  ASSERT_EQ(run({"densify", "--method", "nearest", "--in", (dir / "d").string(), "--out", (dir / "p").string()}).code,
            0);
  fs::remove(dir / "p/train/synth/pred/00001.png");
  const CliRun r = run({"eval", "--pred", (dir / "p").string(), "--gt", (dir / "d").string(), "--out",
                     (dir / "r.csv").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(fs::exists(dir / "r.csv"));
}

TEST(Cli, DensifyThenEvalLinearHasInfiniteInverseMetrics) {
  const fs::path dir = test::scratch_dir("cli_linear_inf");
  ASSERT_EQ(run({"synth", "--out", (dir / "d").string(), "--n", "2", "--seed", "1"}).code, 0);
  ASSERT_EQ(run({"densify", "--method", "linear", "--in", (dir / "d").string(), "--out", (dir / "p").string()}).code,
            0);
  const CliRun r = run({"eval", "--pred", (dir / "p").string(), "--gt", (dir / "d").string(), "--out",
                     (dir / "r.csv").string(), "--method", "linear"});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find(",inf,inf"), std::string::npos) << r.out;
}

TEST(Cli, GradcheckPasses) {
  const CliRun r = run({"gradcheck", "--instances", "2"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("gradcheck passed"), std::string::npos);
}

TEST(Cli, TrainInferAndReproducibility) {
  const fs::path dir = test::scratch_dir("cli_train");
  write_text(dir / "exp.json", kTinyExperiment);
  for (const char* name : {"a.ckpt", "b.ckpt"}) {
    const CliRun r = run({"train", "--config", (dir / "exp.json").string(), "--out", (dir / name).string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* suffix : {"", ".log.jsonl", ".meta.json"}) {
    EXPECT_EQ(test::read_file(dir / (std::string("a.ckpt") + suffix)),
              test::read_file(dir / (std::string("b.ckpt") + suffix)))
        << suffix;
  }
  ASSERT_EQ(run({"synth", "--out", (dir / "frames").string(), "--n", "3", "--seed", "9", "--split", "val"}).code, 0);
  const CliRun r = run({"infer", "--ckpt", (dir / "a.ckpt").string(), "--in", (dir / "frames").string(), "--out",
                     (dir / "pred").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto meta = nlohmann::json::parse(test::read_file(dir / "pred/meta.json"));
  EXPECT_EQ(meta.at("refinement_passes"), 3u);
  EXPECT_EQ(meta.at("config").at("frames"), 3u);
  EXPECT_TRUE(read_depth_png(dir / "pred/val/synth/pred/00002.png").fully_valid());
  EXPECT_EQ(run({"infer", "--ckpt", (dir / "missing.ckpt").string(), "--in", (dir / "frames").string(), "--out",
                 (dir / "pred2").string()})
                .code,
            1);
  EXPECT_FALSE(fs::exists(dir / "pred2"));
}

TEST(Cli, VariantsWritesComparison) {
  const fs::path dir = test::scratch_dir("cli_variants");
  write_text(dir / "exp.json", kTinyExperiment);
  const CliRun r = run({"variants", "--config", (dir / "exp.json").string(), "--out", (dir / "v.csv").string(),
                     "--seeds", "3", "--variants", "backbone_only,deform_on_coarse"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = test::read_file(dir / "v.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "variant,method,rmse_mm,mae_mm,irmse_1perkm,imae_1perkm");
  EXPECT_NE(csv.find("deform_on_coarse,median,"), std::string::npos);
  EXPECT_NE(csv.find("backbone_only,seed=3,"), std::string::npos);
  const std::string log = test::read_file(dir / "v.csv.log.jsonl");
  const auto first = nlohmann::json::parse(log.substr(0, log.find('\n')));
  EXPECT_EQ(first.at("variant"), "backbone_only");
  EXPECT_EQ(first.at("seed"), 3);
  EXPECT_EQ(run({"variants", "--config", (dir / "exp.json").string(), "--seeds", "x"}).code, 1);
}

TEST(Cli, MetadataHash) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  const auto m = make_metadata("x", {{"k", 1}});
  EXPECT_EQ(m.at("config_hash").get<std::string>().size(), 16u);
  EXPECT_EQ(make_metadata("x", {{"k", 1}}), m);
  EXPECT_NE(make_metadata("x", {{"k", 2}}).at("config_hash"), m.at("config_hash"));
}

}  // namespace
}  // namespace dcomp
