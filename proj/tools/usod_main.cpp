#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "usod/pipeline.hpp"

namespace {

// Seed precedence: --seed flag > USOD_SEED environment variable > config file.
usod::TrainConfig load_train_config(const std::string& path, const std::string& seed_flag) {
  usod::Config raw = usod::Config::parse_file(path);
  usod::TrainConfig cfg = usod::TrainConfig::from_config(raw);
  if (const char* env = std::getenv("USOD_SEED")) {
    usod::Config tmp;
    tmp.set("seed", env);
    cfg.seed = tmp.get_u64("seed", cfg.seed);
  }
  if (!seed_flag.empty()) {
    usod::Config tmp;
    tmp.set("seed", seed_flag);
    cfg.seed = tmp.get_u64("seed", cfg.seed);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised salient object detection"};
  app.require_subcommand(1);

  std::string config_path, seed_flag, grid_path, out_dir, in_dir, ckpt_path, pred_dir, gt_dir;
  std::string synth_dir;
  int synth_count = 64, synth_size = 64;
  uint64_t synth_seed = 7;

  CLI::App* train = app.add_subcommand("train", "Train the full pipeline from a config file");
  train->add_option("--config", config_path, "key=value config file")->required();
  train->add_option("--seed", seed_flag, "override the rng seed");

  CLI::App* pseudo = app.add_subcommand("pseudo-label", "Write location/detailed/unss label PNGs");
  pseudo->add_option("--config", config_path, "key=value config file")->required();
  pseudo->add_option("--out", out_dir, "output directory")->required();
  pseudo->add_option("--seed", seed_flag, "override the rng seed");

  CLI::App* infer_cmd = app.add_subcommand("infer", "Decode saliency maps for a directory of images");
  infer_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  infer_cmd->add_option("--in", in_dir, "input image directory")->required();
  infer_cmd->add_option("--out", out_dir, "output directory")->required();

  CLI::App* eval_cmd = app.add_subcommand("eval", "Score prediction PNGs against ground truth");
  eval_cmd->add_option("--pred", pred_dir, "prediction directory")->required();
  eval_cmd->add_option("--gt", gt_dir, "ground-truth directory")->required();

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "Loss-wiring / theta_r grid sweep");
  ablate_cmd->add_option("--config", config_path, "base key=value config file")->required();
  ablate_cmd->add_option("--grid", grid_path, "grid file (loss_rows=..., theta_r=...)")->required();
  ablate_cmd->add_option("--seed", seed_flag, "override the rng seed");

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset with gt/ masks");
  synth->add_option("--out", synth_dir, "output directory")->required();
  synth->add_option("--count", synth_count, "number of images");
  synth->add_option("--size", synth_size, "square image side");
  synth->add_option("--seed", synth_seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const std::string ckpt = usod::train(load_train_config(config_path, seed_flag));
      std::cout << "checkpoint: " << ckpt << "\n";
    } else if (pseudo->parsed()) {
      usod::export_pseudo_labels(load_train_config(config_path, seed_flag), out_dir);
    } else if (infer_cmd->parsed()) {
      usod::infer(ckpt_path, in_dir, out_dir);
    } else if (eval_cmd->parsed()) {
      usod::EvalReport report = usod::evaluate_dataset(pred_dir, gt_dir);
      std::cout << usod::report_table(report);
      for (const std::string& e : report.errors) std::cerr << "warning: " << e << "\n";
    } else if (ablate_cmd->parsed()) {
      std::cout << usod::ablate(load_train_config(config_path, seed_flag),
                                usod::Config::parse_file(grid_path));
    } else if (synth->parsed()) {
      usod::generate_synthetic_dataset(synth_dir, synth_count, synth_size, synth_seed);
      std::cout << "wrote " << synth_count << " images to " << synth_dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
