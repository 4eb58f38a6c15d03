#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "usod/config.hpp"
#include "usod/dataset.hpp"
#include "usod/decoder.hpp"
#include "usod/encoder.hpp"
#include "usod/localizer.hpp"
#include "usod/losses.hpp"
#include "usod/metrics.hpp"
#include "usod/refiner.hpp"
#include "usod/unss.hpp"

namespace usod {

struct TrainConfig {
  // Data / schedule.
  std::string data_dir;
  std::string out_dir = "runs/default";
  int64_t image_size = 352;
  int64_t batch_size = 16;
  int64_t epochs = 10;
  uint64_t seed = 0;
  bool augment = true;

  // Model.
  std::string backbone = "full";  // "toy" or "full"
  std::string pretrained;         // optional encoder weight archive
  int64_t decoder_width = 64;
  bool encoder_bn_update = true;
  std::vector<double> norm_mean = {0.485, 0.456, 0.406};
  std::vector<double> norm_std = {0.229, 0.224, 0.225};
  std::vector<double> scales = {1.0, 0.5, 1.5};

  // Optimizer.
  double lr_decoder = 0.005;
  double lr_encoder = 0.0005;
  double lr_localizer = 0.0005;
  double momentum = 0.9;
  double weight_decay = 5e-4;

  // Pseudo-labels and losses.
  double theta_f = 0.6;
  double theta_g = 0.1;
  double theta_r = 2.5;
  bool unss_literal = false;
  double alpha_rank = 0.25;
  double epsilon = 1e-7;
  RefinerParams refiner;
  LscParams lsc;
  LossWeights weights;
  std::string loss_row = "C2";

  // Resume.
  std::string resume;        // checkpoint path
  bool resume_force = false; // accept config-hash mismatch

  static TrainConfig from_config(const Config& cfg);
  Config to_config() const;
  void validate() const;
};

// Encoder + activation head + decoder sharing one parameter namespace.
struct Model {
  std::unique_ptr<Backbone> encoder;
  ActivationHead localizer;
  Decoder decoder;
  std::vector<int> strides;

  nn::ParamMap named_state();  // "encoder.*", "localizer.*", "decoder.*"
  nn::ParamMap encoder_params();
  nn::ParamMap localizer_params();
  nn::ParamMap decoder_params();
};

Model build_model(const TrainConfig& cfg, Rng& rng);

struct StepLosses {
  double sosl = 0.0, pbce = 0.0, lsc = 0.0, iou = 0.0, total = 0.0;
};

// Localizer forward for one already-normalized batch: per-scale activation
// maps fused by per-pixel max, plus the scale-1 fused feature tensor the
// descriptors pool over. Orientation (G <- 1-G by the border prior) applies
// only when `orient` is set.
struct LocalizerOutput {
  ad::Var activation;      // G, N x 1 x h4 x w4
  ad::Var features;        // F4 (+) up(F5) at scale 1
  FeaturePyramid pyramid;  // scale-1 pyramid, reused by the decoder
};
LocalizerOutput localizer_forward(Model& model, const Tensor& normalized, const TrainConfig& cfg,
                                  bool training, bool orient);

// One optimization step over a raw [0,1] image batch. epoch is 0-based.
StepLosses train_step(Model& model, nn::Sgd& optimizer, const Tensor& batch,
                      const TrainConfig& cfg, int64_t epoch);

// Full training loop: shuffled epochs, per-epoch checkpoints, metrics log
// (<out_dir>/metrics.log), resume support. Returns the final checkpoint path
// (<out_dir>/last.ckpt).
std::string train(const TrainConfig& cfg);

// Writes location/, detailed/, and unss/ pseudo-label PNGs for every dataset
// image using the model state in cfg.resume (fresh initialization if empty).
void export_pseudo_labels(const TrainConfig& cfg, const std::string& out_dir);

// Decodes saliency maps for every image in in_dir at original resolution.
void infer(const std::string& checkpoint_path, const std::string& in_dir,
           const std::string& out_dir);

// Loss-wiring rows and theta_r sweep: one short training + evaluation per
// grid entry; writes <out_dir>/ablation.txt and returns its table text.
std::string ablate(const TrainConfig& base, const Config& grid);

// Checkpoint helpers (full model + optimizer + rng + config).
void save_checkpoint(const std::string& path, Model& model, const nn::Sgd* optimizer,
                     const TrainConfig& cfg, int64_t next_epoch, const Rng& rng);
struct LoadedCheckpoint {
  Model model;
  TrainConfig cfg;
  int64_t next_epoch = 0;
  std::string rng_state;
  std::map<std::string, Tensor> velocity;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

// Mean metrics of a model's predictions over a dataset with gt/ masks.
EvalRow evaluate_model(Model& model, const Dataset& dataset, const TrainConfig& cfg);

}  // namespace usod
