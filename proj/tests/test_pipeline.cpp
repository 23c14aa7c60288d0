#include "liverdiff/hash.hpp"
#include "liverdiff/pipeline.hpp"
#include "support.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace liverdiff;
using nlohmann::json;

namespace {

/// Small phantom run rooted in `root`.
json small_overrides(const std::filesystem::path& root) {
  return {{"paths", {{"data_root", (root / "data").string()}, {"work_dir", (root / "work").string()}}},
          {"phantom", {{"n_patients", 20}, {"images_per_patient", 1}}},
          {"folds", {{"k", 3}}},
          {"shap", {{"fold", 0}}}};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

template <typename F>
std::string config_error(F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config errors name the offending field") {
  CHECK(config_error([] { resolve_config({{"ldm", {{"steps", -1}}}}); }).rfind("ldm.steps", 0) == 0);
  CHECK(config_error([] { resolve_config({{"ldm", {{"stepz", 10}}}}); }).rfind("ldm.stepz", 0) == 0);
  CHECK(config_error([] { resolve_config({{"folds", {{"k", "five"}}}}); }).rfind("folds.k", 0) == 0);
  CHECK(config_error([] { resolve_config({{"grid", {{"sources", {"mixup"}}}}}); }).rfind("grid.sources", 0) == 0);
  CHECK(config_error([] { resolve_config({{"preset", "huge"}}); }).rfind("preset", 0) == 0);
  CHECK(!config_error([] { resolve_config({{"ldm", {{"image_side", 32}}}}); }).empty());
  CHECK(!config_error([] { resolve_config({{"sampler", {{"inference_steps", 5000}}}}); }).empty());
  CHECK(!config_error([] { resolve_config({{"geneval", {{"extractor", "inception"}}}}); }).empty());
  CHECK(!config_error([] { resolve_config({{"shap", {{"fold", 5}}}}); }).empty());
  CHECK(config_error([] { resolve_config(json::object()); }).empty());
}

TEST_CASE("config files are read and validated") {
  testing::TempDir dir("config");
  {
    std::ofstream(dir.path() / "c.json") << R"({"seed": 7, "folds": {"k": 4}})";
    std::ofstream(dir.path() / "bad.json") << R"({"seed": )";
  }
  const auto c = load_config(dir.path() / "c.json");
  CHECK(c.seed == 7);
  CHECK(c.k_folds == 4);
  CHECK_THROWS_AS(load_config(dir.path() / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir.path() / "absent.json"), ConfigError);
  CHECK(load_config(std::nullopt).preset == Preset::phantom);
}

TEST_CASE("the clinical preset carries the full-scale hyperparameters") {
  const auto c = resolve_config(json::object(), Preset::clinical);
  CHECK(c.ldm.steps == 20000);
  CHECK(c.ldm.batch_size == 32);
  CHECK(c.ldm.learning_rate == 2.4e-4);
  CHECK(c.ldm.warmup_steps == 100);
  CHECK(c.ldm.image_side == 256);
  CHECK(c.generate.sampler.inference_steps == 500);
  CHECK(c.generate.sampler.guidance_scale == 1.2);
  CHECK(c.generate.n == 2000);
  CHECK(c.grid.hyper.steps == 1000);
  CHECK(c.grid.hyper.learning_rate == 2e-5);
  CHECK(c.grid.hyper.batch_size == 32);
  CHECK(c.grid.n_seeds == 25);
  CHECK(c.grid.r_values == std::vector<double>{0.0, 0.5, 1.0, 1.5, 2.0});
  CHECK(c.grid.sources == std::vector<MixSource>{MixSource::semantic, MixSource::class2img, MixSource::geometric});
  CHECK(c.k_folds == 5);
  CHECK(c.preprocess.crop_size == 320);
  CHECK(c.preprocess.out_size == 256);
  CHECK(c.variants.size() == 2);
  REQUIRE(c.grid.backbones.size() == 1);
  CHECK(c.grid.backbones[0].architecture == Architecture::resnet50);
  CHECK(c.grid.backbones[0].pretrained);

  const auto phantom = resolve_config(json::object());
  CHECK(phantom.preset == Preset::phantom);
  CHECK(phantom.ldm.image_side == 64);
  CHECK(resolve_config({{"preset", "clinical"}}).ldm.steps == 20000);
}

TEST_CASE("stage seeds derive from the global seed unless overridden") {
  std::ostringstream log;
  const auto cfg = resolve_config({{"seed", 3}});
  const Pipeline p(cfg, {}, log);
  CHECK(p.stage_seed("folds") == derive_seed(3, "folds"));
  CHECK(p.stage_seed("folds") != p.stage_seed("grid"));
  const Pipeline q(cfg, {RunOptions{5, false}}, log);
  CHECK(q.stage_seed("folds") == 5);
}

TEST_CASE("grid spec carries the seed the grid stage ran with") {
  testing::TempDir dir("gridseed");
  std::ostringstream log;
  const auto cfg = resolve_config(small_overrides(dir.path()));
  const Pipeline p(cfg, {}, log);
  CHECK(p.grid_spec().seed == derive_seed(cfg.seed, "grid"));
  CHECK(p.grid_spec().n_seeds == cfg.grid.n_seeds);
  // A later run with another --stage-seed still sees the seed of the stored grid results.
  std::filesystem::create_directories(p.stage_dir("grid"));
  std::ofstream(p.stage_dir("grid") / "run_manifest.json") << R"({"seed": 77})";
  const Pipeline q(cfg, {RunOptions{5, false}}, log);
  CHECK(q.grid_spec().seed == 77);
}

TEST_CASE("stages skip when inputs and outputs are unchanged") {
  testing::TempDir dir("pipe");
  std::ostringstream log;
  Pipeline p(resolve_config(small_overrides(dir.path())), {}, log);
  CHECK(p.run("prepare") == StageOutcome::ran);
  CHECK(p.run("folds") == StageOutcome::ran);
  const std::string folds_before = slurp(p.stage_dir("folds") / "folds.json");
  CHECK(p.run("folds") == StageOutcome::up_to_date);
  CHECK(slurp(p.stage_dir("folds") / "folds.json") == folds_before);
  CHECK(p.run("prepare") == StageOutcome::up_to_date);

  const auto manifest = json::parse(slurp(p.stage_dir("folds") / "run_manifest.json"));
  CHECK(manifest.at("stage") == "folds");
  CHECK(manifest.at("seed") == p.stage_seed("folds"));
  CHECK(manifest.at("outputs") == hash_tree(p.stage_dir("folds")));
  CHECK(manifest.contains("config"));
  CHECK(manifest.contains("duration_s"));

  // A damaged output forces a rerun.
  std::ofstream(p.stage_dir("folds") / "folds.json", std::ios::app) << " ";
  CHECK(p.run("folds") == StageOutcome::ran);
  CHECK(p.run("folds") == StageOutcome::up_to_date);

  // A different stage seed changes the fingerprint.
  Pipeline reseeded(resolve_config(small_overrides(dir.path())), {RunOptions{99, false}}, log);
  CHECK(reseeded.run("folds") == StageOutcome::ran);

  const auto folds = p.folds();
  CHECK(folds.k == 3);
  CHECK(folds.fold_of_patient.size() == 20);
}

TEST_CASE("missing upstream artifacts are reported by path") {
  testing::TempDir dir("pipe-missing");
  std::ostringstream log;
  Pipeline p(resolve_config(small_overrides(dir.path())), {}, log);
  CHECK_THROWS_WITH_AS(p.run("folds"), doctest::Contains("liverdiff prepare"), MissingArtifact);
  p.run("prepare");
  p.run("folds");
  const std::string ckpt = p.checkpoint_path(ModelVariant::semantic, 0).string();
  CHECK_THROWS_WITH_AS(p.run("sample"), doctest::Contains(ckpt.c_str()), MissingArtifact);
  CHECK_THROWS_WITH_AS(p.run("eval-gen"), doctest::Contains("liverdiff sample"), MissingArtifact);
  CHECK_THROWS_AS(p.run("fly"), std::invalid_argument);
}

TEST_CASE("report skips absent sections and is byte-identical on rerun") {
  testing::TempDir dir("pipe-report");
  std::ostringstream log;
  Pipeline p(resolve_config(small_overrides(dir.path())), {}, log);
  CHECK(p.run("report") == StageOutcome::ran);
  const auto path = p.stage_dir("report") / "summary.md";
  const std::string first = slurp(path);
  CHECK(first.find("Section skipped") != std::string::npos);
  CHECK(log.str().find("skipping") != std::string::npos);
  CHECK(p.run("report") == StageOutcome::ran);
  CHECK(slurp(path) == first);
}

TEST_CASE("hash_tree ignores the run manifest") {
  testing::TempDir dir("hash");
  std::ofstream(dir.path() / "a.txt") << "a";
  std::filesystem::create_directories(dir.path() / "sub");
  std::ofstream(dir.path() / "sub" / "b.txt") << "b";
  const auto before = hash_tree(dir.path());
  CHECK(before.size() == 2);
  CHECK(before.at("sub/b.txt") == sha256_hex("b"));
  std::ofstream(dir.path() / "run_manifest.json") << "{}";
  CHECK(hash_tree(dir.path()) == before);
}
