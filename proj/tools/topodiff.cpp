// topodiff command-line front end.
//
// Settings come from flags, then from the TOML file given by --config (or
// the TOPODIFF_CONFIG environment variable), then from built-in defaults.
// Sections are named after subcommands, e.g. [train] steps = 5000.

#include "topodiff/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

using namespace topodiff;
using namespace topodiff::cli;

namespace {

void add_model_options(CLI::App* app, DenoiserConfig& m) {
  app->add_option("--layers", m.layers, "denoiser blocks")->capture_default_str();
  app->add_option("--latent", m.latent, "latent width F")->capture_default_str();
  app->add_option("--heads", m.heads, "attention heads")->capture_default_str();
  app->add_option("--window", m.window, "temporal attention window W (odd)")->capture_default_str();
  app->add_option("--d-max", m.d_max, "graph distance cap")->capture_default_str();
  app->add_option("--max-joints", m.max_joints, "largest skeleton accepted")->capture_default_str();
  app->add_option("--diffusion-steps", m.diffusion_steps, "diffusion steps T")
      ->capture_default_str();
  app->add_option("--name-dim", m.name_dim, "joint-name embedding width")->capture_default_str();
}

void add_train_options(CLI::App* app, TrainConfig& t) {
  app->add_option("--steps", t.total_steps, "total optimizer steps")->capture_default_str();
  app->add_option("--batch", t.batch_size, "batch size")->capture_default_str();
  app->add_option("--crop", t.crop_frames, "training crop length in frames")->capture_default_str();
  app->add_option("--lr", t.learning_rate, "Adam learning rate")->capture_default_str();
  app->add_option("--lr-decay", t.lr_decay, "constant or cosine")
      ->check(CLI::IsMember({"constant", "cosine"}))
      ->capture_default_str();
  app->add_option("--grad-clip", t.grad_clip, "global gradient norm clip, 0 disables")
      ->capture_default_str();
  app->add_option("--lambda-rot", t.lambda_rot, "weight of the geodesic rotation loss")
      ->capture_default_str();
  app->add_option("--remove-prob", t.remove_prob, "joint removal probability")
      ->capture_default_str();
  app->add_option("--add-prob", t.add_prob, "joint insertion probability")->capture_default_str();
  app->add_option("--seed", t.seed, "random seed")->capture_default_str();
  app->add_option("--schedule", t.schedule, "noise schedule: cosine or linear")
      ->capture_default_str();
  app->add_option("--name-embedder", t.name_embedder, "hashed:<dim> or table:<path>")
      ->capture_default_str();
  app->add_option("--checkpoint-every", t.checkpoint_every, "steps between checkpoints")
      ->capture_default_str();
  app->add_option("--log-every", t.log_every, "steps between log lines")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Skeleton-agnostic motion diffusion toolkit"};
  app.require_subcommand(1);
  auto* config = app.set_config("--config", "", "TOML settings file");
  config->envname("TOPODIFF_CONFIG");

  PreprocessCommand pre;
  auto* p = app.add_subcommand("preprocess", "Convert BVH folders into a training dataset");
  p->add_option("--in", pre.in_dir, "directory with one subdirectory of BVH files per skeleton")
      ->required();
  p->add_option("--out", pre.out_dir, "output dataset directory")->required();
  p->add_option("--bone-length", pre.config.target_bone_length, "mean bone length after scaling")
      ->capture_default_str();
  p->add_option("--contact-velocity", pre.config.contact_velocity_threshold,
                "foot contact speed threshold (units per frame)")
      ->capture_default_str();
  p->add_option("--contact-height", pre.config.contact_height_threshold,
                "foot contact height threshold")
      ->capture_default_str();
  p->add_option("--idle-pattern", pre.config.idle_pattern, "file name marking the rest-pose clip")
      ->capture_default_str();

  TrainCommand train;
  auto* t = app.add_subcommand("train", "Train a denoiser on a dataset");
  t->add_option("--dataset", train.dataset, "dataset directory")->required();
  t->add_option("--out", train.out_dir, "run directory")->required();
  t->add_option("--resume", train.resume, "checkpoint to continue from");
  add_model_options(t, train.model);
  add_train_options(t, train.train);

  SampleCommand samp;
  auto* s = app.add_subcommand("sample", "Generate motions for dataset skeletons");
  s->add_option("--checkpoint", samp.checkpoint, "checkpoint or run directory")->required();
  s->add_option("--dataset", samp.dataset, "dataset directory")->required();
  s->add_option("--skeleton", samp.skeletons, "skeleton ids (default: all)");
  s->add_option("--out", samp.out_dir, "output directory")->required();
  s->add_option("--frames", samp.frames, "frames per motion")->capture_default_str();
  s->add_option("--count", samp.count, "motions per skeleton")->capture_default_str();
  s->add_option("--seed", samp.seed, "random seed")->capture_default_str();
  s->add_flag("--footlock", samp.footlock, "pin feet during detected contacts");

  EditCommand edit;
  auto* e = app.add_subcommand("edit", "In-betweening and body-part editing of a canonical BVH");
  e->add_option("--checkpoint", edit.checkpoint, "checkpoint or run directory")->required();
  e->add_option("--dataset", edit.dataset, "dataset directory")->required();
  e->add_option("--skeleton", edit.skeleton, "skeleton id of the input")->required();
  e->add_option("--input", edit.input, "canonical BVH written by preprocess")->required();
  e->add_option("--out", edit.out_dir, "output directory")->required();
  e->add_option("--fixed-frames", edit.fixed_frames, "frames kept from the input, e.g. 0-9,30-39");
  e->add_option("--fixed-joints", edit.fixed_joints, "joints kept from the input");
  e->add_flag("--fix-all", edit.fix_all, "keep every token");
  e->add_option("--seed", edit.seed, "random seed")->capture_default_str();

  EvalCommand ev;
  auto* v = app.add_subcommand("eval", "Coverage and diversity of generated motions");
  v->add_option("--dataset", ev.dataset, "dataset directory with the ground truth")->required();
  v->add_option("--generated", ev.generated, "directory with one subdirectory per skeleton")
      ->required();
  v->add_option("--out", ev.out_dir, "report directory")->required();
  v->add_option("--window", ev.metrics.window, "window length in frames")->capture_default_str();
  v->add_option("--stride", ev.metrics.stride, "window stride")->capture_default_str();
  v->add_option("--percentile", ev.metrics.coverage_percentile, "coverage threshold percentile")
      ->capture_default_str();

  AnalyzeCommand an;
  auto* a = app.add_subcommand("analyze", "Correspondence and segmentation from denoiser features");
  a->add_option("--checkpoint", an.checkpoint, "checkpoint or run directory")->required();
  a->add_option("--dataset", an.dataset, "dataset directory")->required();
  a->add_option("--mode", an.mode, "spatial, temporal or segment")
      ->check(CLI::IsMember({"spatial", "temporal", "segment"}))
      ->capture_default_str();
  a->add_option("--reference", an.reference, "reference motion <skeleton>/<clip>")->required();
  a->add_option("--target", an.target, "target motion <skeleton>/<clip>");
  a->add_option("--out", an.out_dir, "output directory")->required();
  a->add_option("--k", an.k, "segments")->capture_default_str();
  a->add_option("--noise-seed", an.analysis.noise_seed, "noise draw used for features")
      ->capture_default_str();
  a->add_flag("--allow-untrained", an.analysis.allow_untrained, "accept an untrained model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitUsage;
  }

  // Resolved settings of the chosen subcommand, usable as --config to rerun.
  CLI::App* used = app.get_subcommands().front();
  const std::string resolved = "[" + used->get_name() + "]\n" + used->config_to_str(true, false);
  if (p->parsed()) {
    return execute("preprocess", pre.out_dir, resolved, 0,
                   [&](RunManifest& m) { cmd_preprocess(pre, m, std::cout); }, std::cerr);
  }
  if (t->parsed()) {
    return execute("train", train.out_dir, resolved, train.train.seed,
                   [&](RunManifest& m) { cmd_train(train, m, std::cout); }, std::cerr);
  }
  if (s->parsed()) {
    return execute("sample", samp.out_dir, resolved, samp.seed,
                   [&](RunManifest& m) { cmd_sample(samp, m, std::cout); }, std::cerr);
  }
  if (e->parsed()) {
    return execute("edit", edit.out_dir, resolved, edit.seed,
                   [&](RunManifest& m) { cmd_edit(edit, m, std::cout); }, std::cerr);
  }
  if (v->parsed()) {
    return execute("eval", ev.out_dir, resolved, 0,
                   [&](RunManifest& m) { cmd_eval(ev, m, std::cout); }, std::cerr);
  }
  return execute("analyze", an.out_dir, resolved, an.analysis.noise_seed,
                 [&](RunManifest& m) { cmd_analyze(an, m, std::cout); }, std::cerr);
}
