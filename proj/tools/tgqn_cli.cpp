// Command-line surface: dataset generation, training, evaluation, novel-view
// rendering, and attention-score dumps.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tgqn/pipeline/attention_dump.hpp"
#include "tgqn/pipeline/checkpoint.hpp"
#include "tgqn/pipeline/config.hpp"
#include "tgqn/pipeline/eval.hpp"
#include "tgqn/pipeline/train.hpp"
#include "tgqn/scene/shard_io.hpp"

namespace {

using namespace tgqn;
using namespace tgqn::pipeline;

struct CommonFlags {
  std::string config_path;
  std::string variant;
  std::string masked;
  std::optional<std::uint64_t> seed;
  std::string dataset;
  std::string checkpoint;
  std::string out;
  std::optional<long long> steps;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "run config file (key = value)");
  cmd->add_option("--variant", f.variant, "model variant")
      ->check(CLI::IsMember({"tgqn", "gqn", "seqgqn"}));
  cmd->add_option("--masked", f.masked, "attention mask for train and eval")
      ->check(CLI::IsMember({"true", "false"}));
  cmd->add_option("--seed", f.seed, "seed override");
  cmd->add_option("--dataset", f.dataset, "dataset shard path");
  cmd->add_option("--checkpoint", f.checkpoint, "checkpoint path");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--steps", f.steps, "training step override");
}

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig cfg =
      f.config_path.empty() ? RunConfig{} : load_config(f.config_path);
  if (!f.variant.empty()) cfg.variant = variant_from(f.variant);
  if (!f.masked.empty()) {
    cfg.masked_train = f.masked == "true";
    cfg.masked_eval = cfg.masked_train;
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.steps) cfg.max_steps = *f.steps;
  if (!f.dataset.empty()) cfg.train_dataset = f.dataset;
  validate_config(cfg);
  return cfg;
}

int cmd_datagen(const CommonFlags& f, int scenes, int views,
                const std::string& camera, int image_size) {
  if (f.out.empty()) throw CLI::ValidationError("--out", "output path required");
  RunConfig cfg =
      f.config_path.empty() ? RunConfig{} : load_config(f.config_path);
  const int size = image_size > 0 ? image_size : cfg.image_size;
  const std::uint64_t seed = f.seed.value_or(cfg.seed);
  scene::generate_dataset_file(scenes, views, scene::camera_mode_from(camera),
                               static_cast<std::int64_t>(seed), size, f.out);
  std::cout << "wrote " << f.out << " (" << scenes << " scenes, " << views
            << " views, " << size << "x" << size << ", " << camera << ")\n";
  return 0;
}

int cmd_train(const CommonFlags& f) {
  RunConfig cfg = resolve_config(f);
  if (cfg.train_dataset.empty())
    throw CLI::ValidationError("--dataset", "training dataset required");
  const std::string out_dir =
      f.out.empty() ? "runs/" + variant_name(cfg.variant) + "_seed" +
                          std::to_string(cfg.seed)
                    : f.out;
  const scene::Shard train_data = scene::read_shard(cfg.train_dataset);
  std::optional<scene::Shard> eval_data;
  if (!cfg.eval_dataset.empty())
    eval_data = scene::read_shard(cfg.eval_dataset);

  Trainer trainer(cfg, &train_data, eval_data ? &*eval_data : nullptr, out_dir);
  const TrainResult result = trainer.run();

  std::filesystem::create_directories(out_dir);
  std::ofstream cfg_out(out_dir + "/config.txt");
  cfg_out << config_text(cfg);
  if (eval_data) {
    const auto report =
        evaluate_params(trainer.params(), cfg, *eval_data, cfg.eval_scenes,
                        cfg.eval_repeats, cfg.seed);
    std::ofstream csv(out_dir + "/metrics.csv");
    csv << model::metrics_csv_header() << "\n"
        << model::metrics_csv_row(variant_name(cfg.variant), cfg.seed, report)
        << "\n";
    std::ofstream txt(out_dir + "/metrics.txt");
    txt << model::metrics_text(report);
    std::cout << "final eval: l1 " << report.l1_mean << " l2 " << report.l2_mean
              << " ssim " << report.ssim_mean << "\n";
  }
  std::cout << "checkpoint: " << out_dir << "/checkpoint.tgqn\n";
  return 0;
}

Checkpoint<float> load_and_validate(const CommonFlags& f) {
  if (f.checkpoint.empty())
    throw CLI::ValidationError("--checkpoint", "checkpoint path required");
  Checkpoint<float> ck = load_checkpoint<float>(f.checkpoint);
  if (!f.config_path.empty())
    validate_checkpoint_config(ck.config, load_config(f.config_path));
  if (!f.masked.empty()) {
    ck.config.masked_eval = f.masked == "true";
  }
  return ck;
}

int cmd_eval(const CommonFlags& f) {
  Checkpoint<float> ck = load_and_validate(f);
  if (f.dataset.empty())
    throw CLI::ValidationError("--dataset", "evaluation dataset required");
  const scene::Shard data = scene::read_shard(f.dataset);
  const std::uint64_t seed = f.seed.value_or(ck.config.seed);
  const auto report =
      evaluate_params(ck.params, ck.config, data, ck.config.eval_scenes,
                      ck.config.eval_repeats, seed);
  const std::string out_dir = f.out.empty() ? "." : f.out;
  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir + "/metrics.csv");
  csv << model::metrics_csv_header() << "\n"
      << model::metrics_csv_row(variant_name(ck.config.variant), seed, report)
      << "\n";
  std::ofstream txt(out_dir + "/metrics.txt");
  txt << model::metrics_text(report);
  std::cout << model::metrics_text(report);
  return 0;
}

int cmd_render(const CommonFlags& f, int num_scenes) {
  Checkpoint<float> ck = load_and_validate(f);
  if (f.dataset.empty())
    throw CLI::ValidationError("--dataset", "dataset required");
  const scene::Shard data = scene::read_shard(f.dataset);
  const std::string out_dir = f.out.empty() ? "render_out" : f.out;
  std::filesystem::create_directories(out_dir);
  const std::uint64_t seed = f.seed.value_or(ck.config.seed);

  const int scenes = std::min<int>(num_scenes, static_cast<int>(data.scenes.size()));
  const int ctx = ck.config.eval_context_views;
  RunConfig run_cfg = ck.config;
  run_cfg.n_views = ctx;
  for (int s = 0; s < scenes; ++s) {
    Rng rng = Rng(seed).derive("render").derive(static_cast<std::uint64_t>(s));
    const auto picks = rng.sample_distinct(data.header.views_per_scene, ctx + 1);
    std::vector<Observation> obs;
    for (int i = 1; i <= ctx; ++i)
      obs.push_back({data.frame(s, picks[i]), data.scenes[s].poses[picks[i]]});
    const int q = picks[0];
    const auto ctx_ordered =
        order_observations(obs, data.scenes[s].poses[q], data.frame(s, q),
                           ck.config.order_eval);
    Graph<float> g;
    ParamVars<float> pv(g, ck.params, false);
    const auto batch = assemble_batch<float>({ctx_ordered}, ck.config.image_size);
    model::NoiseSource<float> noise(rng.derive("noise"));
    const auto fwd = forward_variant(g, pv, batch, model::RunMode::kGeneration,
                                     run_cfg, noise, ck.config.masked_eval);
    Tensor<float> chw({3, ck.config.image_size, ck.config.image_size});
    std::copy(fwd.steps.back().predicted->value.data(),
              fwd.steps.back().predicted->value.data() + chw.size(), chw.data());
    const std::string stem = out_dir + "/scene" + std::to_string(s);
    write_ppm(stem + "_pred.ppm", model::chw_to_frame(chw));
    write_ppm(stem + "_truth.ppm", data.frame(s, q));
    for (int i = 0; i < ctx; ++i)
      write_ppm(stem + "_ctx" + std::to_string(i) + ".ppm",
                obs[i].frame);
  }
  std::cout << "wrote renders for " << scenes << " scenes to " << out_dir << "\n";
  return 0;
}

int cmd_attn(const CommonFlags& f, int scene_index) {
  Checkpoint<float> ck = load_and_validate(f);
  if (f.dataset.empty())
    throw CLI::ValidationError("--dataset", "dataset required");
  const scene::Shard data = scene::read_shard(f.dataset);
  if (scene_index < 0 || scene_index >= static_cast<int>(data.scenes.size()))
    throw CLI::ValidationError("--scene", "scene index out of range");
  const std::string out_dir = f.out.empty() ? "attn_out" : f.out;
  const std::uint64_t seed = f.seed.value_or(ck.config.seed);

  Rng rng = Rng(seed).derive("attn").derive(static_cast<std::uint64_t>(scene_index));
  const int ctx = ck.config.eval_context_views;
  const auto picks = rng.sample_distinct(data.header.views_per_scene, ctx + 1);
  std::vector<Observation> obs;
  for (int i = 1; i <= ctx; ++i)
    obs.push_back({data.frame(scene_index, picks[i]),
                   data.scenes[scene_index].poses[picks[i]]});
  const auto dump = dump_attention(
      ck.params, ck.config, obs, data.scenes[scene_index].poses[picks[0]],
      data.frame(scene_index, picks[0]), out_dir, seed);
  std::cout << "wrote " << dump.files.size() << " attention files to "
            << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer-based generative query network toolkit"};
  app.require_subcommand(1);

  CommonFlags fl;
  int scenes = 100, views = 10, image_size = 0, render_scenes = 4, attn_scene = 0;
  std::string camera = "ring";

  auto* datagen = app.add_subcommand("datagen", "generate a dataset shard");
  add_common(datagen, fl);
  datagen->add_option("--scenes", scenes, "number of scenes");
  datagen->add_option("--views", views, "views per scene");
  datagen->add_option("--camera", camera, "camera mode")
      ->check(CLI::IsMember({"ring", "free"}));
  datagen->add_option("--image-size", image_size, "image size override");

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, fl);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, fl);

  auto* render = app.add_subcommand("render", "render novel views");
  add_common(render, fl);
  render->add_option("--scenes", render_scenes, "scenes to render");

  auto* attn = app.add_subcommand("attn", "dump attention scores");
  add_common(attn, fl);
  attn->add_option("--scene", attn_scene, "scene index");

  CLI11_PARSE(app, argc, argv);

  try {
    if (datagen->parsed())
      return cmd_datagen(fl, scenes, views, camera, image_size);
    if (train->parsed()) return cmd_train(fl);
    if (eval->parsed()) return cmd_eval(fl);
    if (render->parsed()) return cmd_render(fl, render_scenes);
    if (attn->parsed()) return cmd_attn(fl, attn_scene);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
