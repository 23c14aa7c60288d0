#include "liverdiff/pipeline.hpp"
#include "liverdiff/turing_http.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Latent-diffusion augmentation pipeline for liver ultrasound classification"};
  app.require_subcommand(1);

  std::string config_path;
  std::string preset;
  std::uint64_t stage_seed = 0;
  bool resume = false;
  app.add_option("--config", config_path, "JSON overrides merged onto the preset")->check(CLI::ExistingFile);
  app.add_option("--preset", preset, "phantom or clinical")->check(CLI::IsMember({"phantom", "clinical"}));
  auto* seed_opt = app.add_option("--stage-seed", stage_seed, "replace the derived seed of the stage");
  app.add_flag("--resume", resume, "reuse finished per-fold artifacts of an interrupted stage");

  std::vector<std::pair<std::string, CLI::App*>> verbs;
  for (const auto& stage : liverdiff::stage_names()) verbs.emplace_back(stage, app.add_subcommand(stage, "run the " + stage + " stage"));
  auto* all = app.add_subcommand("all", "run every stage in order");
  auto* serve = app.add_subcommand("turing-serve", "publish and serve the image Turing test");
  CLI11_PARSE(app, argc, argv);

  try {
    const std::optional<std::filesystem::path> cfg =
        config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path);
    const std::optional<liverdiff::Preset> p =
        preset.empty() ? std::nullopt : std::optional(liverdiff::preset_from_string(preset));
    liverdiff::RunOptions options;
    if (*seed_opt) options.stage_seed = stage_seed;
    options.resume = resume;
    liverdiff::Pipeline pipeline(liverdiff::load_config(cfg, p), options, std::cerr);

    if (*serve) {
      const char* secret = std::getenv(liverdiff::turing::kAdminSecretEnv);
      pipeline.turing_serve(secret ? secret : "");
      return 0;
    }
    if (*all) {
      for (const auto& stage : liverdiff::stage_names()) pipeline.run(stage);
      return 0;
    }
    for (const auto& [stage, sub] : verbs)
      if (*sub) pipeline.run(stage);
    return 0;
  } catch (const liverdiff::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const liverdiff::MissingArtifact& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
