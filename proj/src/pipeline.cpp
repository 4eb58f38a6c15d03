#include "usod/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "usod/checkpoint.hpp"
#include "usod/image_io.hpp"

namespace fs = std::filesystem;

namespace usod {
namespace {

std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim_copy(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim_copy(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& context) {
  std::vector<double> out;
  for (const std::string& item : split_list(text)) out.push_back(parse_double(item, context));
  if (out.empty()) throw ConfigError(context + ": expected a comma-separated list of numbers");
  return out;
}

std::string join_doubles(const std::vector<double>& values) {
  std::string out;
  for (size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += fmt_double(values[i]);
  }
  return out;
}

std::string join_indices(const std::vector<int64_t>& indices) {
  std::string out;
  for (size_t i = 0; i < indices.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(indices[i]);
  }
  return out;
}

std::string stem_png(const std::string& name) { return fs::path(name).stem().string() + ".png"; }

// Copies image n of an N x C x H x W tensor into a 1 x C x H x W tensor.
Tensor slice_image(const Tensor& batch, int64_t n) {
  const int64_t c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  Tensor out({1, c, h, w});
  const int64_t plane = c * h * w;
  std::copy(batch.data() + n * plane, batch.data() + (n + 1) * plane, out.data());
  return out;
}

void shuffle_indices(std::vector<int64_t>& v, Rng& rng) {
  for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
    int64_t j = rng.uniform_int(i + 1);
    std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
  }
}

const char* const kKnownKeys[] = {
    "data_dir",      "out_dir",
    "image_size",    "batch_size",
    "epochs",        "seed",
    "augment",       "backbone",
    "pretrained",    "decoder_width",
    "encoder_bn_update", "norm_mean",
    "norm_std",      "scales",
    "lr_decoder",    "lr_encoder",
    "lr_localizer",  "momentum",
    "weight_decay",  "theta_f",
    "theta_g",       "theta_r",
    "unss_literal",  "alpha_rank",
    "epsilon",       "refiner.gamma1",
    "refiner.gamma2", "refiner.gamma3",
    "refiner.iterations", "refiner.half_resolution",
    "refiner.sigma_f", "refiner.sigma_p",
    "lsc.kernel",    "lsc.sigma_color",
    "lsc.sigma_space", "warmup_epochs",
    "loss_row",      "resume",
    "resume_force"};

}  // namespace

TrainConfig TrainConfig::from_config(const Config& cfg) {
  std::set<std::string> known(std::begin(kKnownKeys), std::end(kKnownKeys));
  for (const auto& [key, value] : cfg.entries()) {
    (void)value;
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }

  TrainConfig tc;
  tc.data_dir = cfg.get_str("data_dir", tc.data_dir);
  tc.out_dir = cfg.get_str("out_dir", tc.out_dir);
  tc.image_size = cfg.get_int("image_size", tc.image_size);
  tc.batch_size = cfg.get_int("batch_size", tc.batch_size);
  tc.epochs = cfg.get_int("epochs", tc.epochs);
  tc.seed = cfg.get_u64("seed", tc.seed);
  tc.augment = cfg.get_bool("augment", tc.augment);
  tc.backbone = cfg.get_str("backbone", tc.backbone);
  tc.pretrained = cfg.get_str("pretrained", tc.pretrained);
  tc.decoder_width = cfg.get_int("decoder_width", tc.decoder_width);
  tc.encoder_bn_update = cfg.get_bool("encoder_bn_update", tc.encoder_bn_update);
  if (cfg.has("norm_mean")) tc.norm_mean = parse_double_list(cfg.get_str("norm_mean", ""), "norm_mean");
  if (cfg.has("norm_std")) tc.norm_std = parse_double_list(cfg.get_str("norm_std", ""), "norm_std");
  if (cfg.has("scales")) tc.scales = parse_double_list(cfg.get_str("scales", ""), "scales");
  tc.lr_decoder = cfg.get_double("lr_decoder", tc.lr_decoder);
  tc.lr_encoder = cfg.get_double("lr_encoder", tc.lr_encoder);
  tc.lr_localizer = cfg.get_double("lr_localizer", tc.lr_localizer);
  tc.momentum = cfg.get_double("momentum", tc.momentum);
  tc.weight_decay = cfg.get_double("weight_decay", tc.weight_decay);
  tc.theta_f = cfg.get_double("theta_f", tc.theta_f);
  tc.theta_g = cfg.get_double("theta_g", tc.theta_g);
  tc.theta_r = cfg.get_double("theta_r", tc.theta_r);
  tc.unss_literal = cfg.get_bool("unss_literal", tc.unss_literal);
  tc.alpha_rank = cfg.get_double("alpha_rank", tc.alpha_rank);
  tc.epsilon = cfg.get_double("epsilon", tc.epsilon);
  tc.refiner.gamma1 = cfg.get_double("refiner.gamma1", tc.refiner.gamma1);
  tc.refiner.gamma2 = cfg.get_double("refiner.gamma2", tc.refiner.gamma2);
  tc.refiner.gamma3 = cfg.get_double("refiner.gamma3", tc.refiner.gamma3);
  tc.refiner.iterations = static_cast<int>(cfg.get_int("refiner.iterations", tc.refiner.iterations));
  tc.refiner.half_resolution = cfg.get_bool("refiner.half_resolution", tc.refiner.half_resolution);
  tc.refiner.sigma_f_override = cfg.get_double("refiner.sigma_f", tc.refiner.sigma_f_override);
  tc.refiner.sigma_p_override = cfg.get_double("refiner.sigma_p", tc.refiner.sigma_p_override);
  tc.refiner.theta_f = tc.theta_f;
  tc.lsc.kernel = static_cast<int>(cfg.get_int("lsc.kernel", tc.lsc.kernel));
  tc.lsc.sigma_color = cfg.get_double("lsc.sigma_color", tc.lsc.sigma_color);
  tc.lsc.sigma_space = cfg.get_double("lsc.sigma_space", tc.lsc.sigma_space);
  tc.weights.warmup_epochs = cfg.get_int("warmup_epochs", tc.weights.warmup_epochs);
  tc.loss_row = cfg.get_str("loss_row", tc.loss_row);
  tc.resume = cfg.get_str("resume", tc.resume);
  tc.resume_force = cfg.get_bool("resume_force", tc.resume_force);
  return tc;
}

Config TrainConfig::to_config() const {
  Config c;
  c.set("data_dir", data_dir);
  c.set("image_size", std::to_string(image_size));
  c.set("batch_size", std::to_string(batch_size));
  c.set("epochs", std::to_string(epochs));
  c.set("seed", std::to_string(seed));
  c.set("augment", augment ? "true" : "false");
  c.set("backbone", backbone);
  c.set("pretrained", pretrained);
  c.set("decoder_width", std::to_string(decoder_width));
  c.set("encoder_bn_update", encoder_bn_update ? "true" : "false");
  c.set("norm_mean", join_doubles(norm_mean));
  c.set("norm_std", join_doubles(norm_std));
  c.set("scales", join_doubles(scales));
  c.set("lr_decoder", fmt_double(lr_decoder));
  c.set("lr_encoder", fmt_double(lr_encoder));
  c.set("lr_localizer", fmt_double(lr_localizer));
  c.set("momentum", fmt_double(momentum));
  c.set("weight_decay", fmt_double(weight_decay));
  c.set("theta_f", fmt_double(theta_f));
  c.set("theta_g", fmt_double(theta_g));
  c.set("theta_r", fmt_double(theta_r));
  c.set("unss_literal", unss_literal ? "true" : "false");
  c.set("alpha_rank", fmt_double(alpha_rank));
  c.set("epsilon", fmt_double(epsilon));
  c.set("refiner.gamma1", fmt_double(refiner.gamma1));
  c.set("refiner.gamma2", fmt_double(refiner.gamma2));
  c.set("refiner.gamma3", fmt_double(refiner.gamma3));
  c.set("refiner.iterations", std::to_string(refiner.iterations));
  c.set("refiner.half_resolution", refiner.half_resolution ? "true" : "false");
  c.set("refiner.sigma_f", fmt_double(refiner.sigma_f_override));
  c.set("refiner.sigma_p", fmt_double(refiner.sigma_p_override));
  c.set("lsc.kernel", std::to_string(lsc.kernel));
  c.set("lsc.sigma_color", fmt_double(lsc.sigma_color));
  c.set("lsc.sigma_space", fmt_double(lsc.sigma_space));
  c.set("warmup_epochs", std::to_string(weights.warmup_epochs));
  c.set("loss_row", loss_row);
  // out_dir / resume / resume_force are invocation details, not training
  // state: leaving them out keeps the config hash stable across resumed runs.
  return c;
}

void TrainConfig::validate() const {
  if (backbone != "toy" && backbone != "full" && backbone != "resnet50")
    throw ConfigError("backbone must be 'toy' or 'full', got '" + backbone + "'");
  const int max_stride = backbone == "toy" ? 16 : 32;
  if (image_size < 32) throw ConfigError("image_size must be at least 32");
  if (image_size % max_stride != 0)
    throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by the encoder's maximum stride " +
                      std::to_string(max_stride));
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (epochs > 0 && epochs < weights.warmup_epochs)
    throw ConfigError("epochs (" + std::to_string(epochs) + ") is smaller than warmup_epochs (" +
                      std::to_string(weights.warmup_epochs) + ")");
  if (decoder_width < 1) throw ConfigError("decoder_width must be positive");
  if (!(lr_decoder > 0) || !(lr_encoder > 0) || !(lr_localizer > 0))
    throw ConfigError("learning rates must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (!(theta_g >= 0 && theta_g < theta_f && theta_f <= 1))
    throw ConfigError("thresholds must satisfy 0 <= theta_g < theta_f <= 1");
  if (!(alpha_rank >= 0)) throw ConfigError("alpha_rank must be non-negative");
  if (!(epsilon > 0) || epsilon > 1e-2) throw ConfigError("epsilon must lie in (0, 1e-2]");
  if (norm_mean.size() != 3 || norm_std.size() != 3)
    throw ConfigError("norm_mean and norm_std must have exactly three entries");
  for (double s : norm_std)
    if (!(s > 0)) throw ConfigError("norm_std entries must be positive");
  if (scales.empty() || scales[0] != 1.0)
    throw ConfigError("scales must be non-empty and start with 1.0");
  for (double s : scales)
    if (!(s > 0)) throw ConfigError("scales must be positive");
  if (lsc.kernel < 1 || lsc.kernel % 2 == 0) throw ConfigError("lsc.kernel must be odd and positive");
  if (!(lsc.sigma_color > 0) || !(lsc.sigma_space > 0))
    throw ConfigError("lsc sigmas must be positive");
  RefinerParams rp = refiner;
  rp.theta_f = theta_f;
  rp.validate();
  UnssParams{theta_r, theta_f, unss_literal}.validate();
  weights.validate();
  LossWiring::from_row(loss_row);  // throws on unknown rows
}

nn::ParamMap Model::named_state() {
  nn::ParamMap pm;
  encoder->collect("encoder", pm);
  localizer.collect("localizer", pm);
  decoder.collect("decoder", pm);
  return pm;
}

nn::ParamMap Model::encoder_params() {
  nn::ParamMap pm;
  encoder->collect("encoder", pm);
  return pm;
}

nn::ParamMap Model::localizer_params() {
  nn::ParamMap pm;
  localizer.collect("localizer", pm);
  return pm;
}

nn::ParamMap Model::decoder_params() {
  nn::ParamMap pm;
  decoder.collect("decoder", pm);
  return pm;
}

Model build_model(const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  Model m;
  m.encoder = make_backbone(cfg.backbone, rng);
  const std::vector<int64_t> ch = m.encoder->channels();
  m.localizer = ActivationHead(ch[3] + ch[4], rng);
  DecoderConfig dc;
  dc.width = cfg.decoder_width;
  dc.levels = 5;
  m.decoder = Decoder(ch, dc, rng);
  m.strides = m.encoder->strides();
  return m;
}

LocalizerOutput localizer_forward(Model& model, const Tensor& normalized, const TrainConfig& cfg,
                                  bool training, bool orient) {
  const int64_t h = normalized.dim(2), w = normalized.dim(3);
  const bool enc_training = training && cfg.encoder_bn_update;
  ad::Var input(normalized);

  LocalizerOutput out;
  std::vector<ad::Var> maps;
  for (double s : cfg.scales) {
    ad::Var x = input;
    if (s != 1.0) {
      int64_t sh = std::max<int64_t>(1, std::llround(static_cast<double>(h) * s));
      int64_t sw = std::max<int64_t>(1, std::llround(static_cast<double>(w) * s));
      x = ad::resize_bilinear(input, sh, sw);
    }
    FeaturePyramid pyr = model.encoder->forward(x, enc_training);
    ad::Var fcat = fused_features(pyr);
    maps.push_back(model.localizer.forward(fcat, training));
    if (s == 1.0 && !out.features.defined()) {
      out.features = fcat;
      out.pyramid = pyr;
    }
  }
  ad::Var fused = maps.size() > 1 ? multiscale_fuse(maps) : maps[0];
  if (orient) fused = orient_foreground(fused);
  out.activation = fused;
  return out;
}

StepLosses train_step(Model& model, nn::Sgd& optimizer, const Tensor& batch,
                      const TrainConfig& cfg, int64_t epoch) {
  ImageBatch images{batch};
  images.validate();
  const int64_t h = batch.dim(2), w = batch.dim(3);
  const bool warm = epoch < cfg.weights.warmup_epochs;
  const LossWeights::Resolved wts = cfg.weights.resolve(epoch);

  Tensor normalized = normalize_images(batch, cfg.norm_mean, cfg.norm_std);
  LocalizerOutput loc = localizer_forward(model, normalized, cfg, true, !warm);
  SoslTerms sosl = sosl_loss(similarity_sets(split_samples(loc.activation, loc.features)),
                             cfg.alpha_rank, cfg.epsilon);

  StepLosses out;
  out.sosl = sosl.total.scalar();

  ad::Var pbce_v, lsc_v, iou_v;
  if (!warm) {
    const LossWiring wiring = LossWiring::from_row(cfg.loss_row);
    Tensor location, suppressed;
    {
      ad::NoGradGuard ng;
      location = ad::resize_bilinear_tensor(loc.activation.value(), h, w);
      RefinerParams rp = cfg.refiner;
      rp.theta_f = cfg.theta_f;
      Tensor detailed = refine(location, batch, rp);
      suppressed = unss_batch(detailed, UnssParams{cfg.theta_r, cfg.theta_f, cfg.unss_literal});
    }
    ad::Var m = model.decoder.forward(loc.pyramid, h, w, true);

    const Tensor& pbce_target = wiring.pbce_target == LabelKind::location ? location : suppressed;
    CertaintyMask mask =
        binarize_certain(SaliencyLabel{pbce_target, wiring.pbce_target}, cfg.theta_f, cfg.theta_g);
    pbce_v = partial_bce(m, mask, cfg.epsilon);
    out.pbce = pbce_v.scalar();
    if (wiring.use_lsc) {
      lsc_v = lsc_loss(m, batch, cfg.lsc);
      out.lsc = lsc_v.scalar();
    }
    if (wiring.use_iou) {
      iou_v = iou_loss(m, wiring.iou_target == LabelKind::location ? location : suppressed);
      out.iou = iou_v.scalar();
    }
  }

  ad::Var total = total_loss(sosl.total, pbce_v, lsc_v, iou_v, wts);
  out.total = total.scalar();
  if (!std::isfinite(out.total) || !std::isfinite(out.sosl) || !std::isfinite(out.pbce) ||
      !std::isfinite(out.lsc) || !std::isfinite(out.iou)) {
    char msg[256];
    std::snprintf(msg, sizeof msg,
                  "non-finite loss at epoch %lld: sosl=%g pbce=%g lsc=%g iou=%g total=%g",
                  static_cast<long long>(epoch), out.sosl, out.pbce, out.lsc, out.iou, out.total);
    throw TrainError(msg);
  }

  ad::backward(total);
  optimizer.step();
  optimizer.zero_grad();
  return out;
}

void save_checkpoint(const std::string& path, Model& model, const nn::Sgd* optimizer,
                     const TrainConfig& cfg, int64_t next_epoch, const Rng& rng) {
  Archive archive;
  nn::ParamMap pm = model.named_state();
  for (const auto& [name, var] : pm.params) archive.add(name, var.value());
  for (const auto& [name, buf] : pm.buffers) archive.add(name, *buf);
  if (optimizer)
    for (const auto& [name, v] : optimizer->velocity()) archive.add("opt." + name, v);
  Config c = cfg.to_config();
  archive.add_string("format", "usod.train.v1");
  archive.add_string("config", c.serialize());
  archive.add_string("config_hash", c.hash());
  archive.add_string("next_epoch", std::to_string(next_epoch));
  archive.add_string("rng", rng.serialize());
  archive.save(path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  Archive archive = Archive::load(path);
  const std::string* cfg_text = archive.find_string("config");
  if (!cfg_text) throw IoError(path + ": checkpoint carries no embedded config");

  LoadedCheckpoint lc;
  lc.cfg = TrainConfig::from_config(Config::parse_string(*cfg_text));
  Rng init_rng(lc.cfg.seed);  // placeholder init; every tensor is overwritten below
  lc.model = build_model(lc.cfg, init_rng);

  nn::ParamMap pm = lc.model.named_state();
  for (const auto& [name, var] : pm.params) {
    const Tensor* t = archive.find(name);
    if (!t) throw IoError(path + ": missing tensor '" + name + "'");
    if (t->shape() != var.value().shape()) throw IoError(path + ": shape mismatch for '" + name + "'");
  }
  for (const auto& [name, buf] : pm.buffers) {
    const Tensor* t = archive.find(name);
    if (!t) throw IoError(path + ": missing tensor '" + name + "'");
    if (t->shape() != buf->shape()) throw IoError(path + ": shape mismatch for '" + name + "'");
  }
  for (auto& [name, var] : pm.params) var.value() = *archive.find(name);
  for (auto& [name, buf] : pm.buffers) *buf = *archive.find(name);
  for (const auto& [name, t] : archive.tensors)
    if (name.rfind("opt.", 0) == 0) lc.velocity[name.substr(4)] = t;

  if (const std::string* ep = archive.find_string("next_epoch")) lc.next_epoch = std::stoll(*ep);
  if (const std::string* rs = archive.find_string("rng"))
    lc.rng_state = *rs;
  else
    lc.rng_state = Rng(lc.cfg.seed).serialize();
  return lc;
}

std::string train(const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.data_dir.empty()) throw ConfigError("train: data_dir is required");
  Dataset data(cfg.data_dir, cfg.image_size);
  fs::create_directories(cfg.out_dir);

  Rng rng(cfg.seed);
  Model model;
  nn::Sgd optimizer(cfg.momentum, cfg.weight_decay);
  int64_t start_epoch = 0;
  std::map<std::string, Tensor> restored_velocity;

  if (!cfg.resume.empty()) {
    LoadedCheckpoint lc = load_checkpoint(cfg.resume);
    const std::string got = lc.cfg.to_config().hash();
    const std::string want = cfg.to_config().hash();
    if (got != want) {
      if (!cfg.resume_force)
        throw ConfigError("resume: training config hash mismatch (checkpoint " + got + ", current " +
                          want + "); set resume_force to continue anyway");
      log_warn("resume: config hash mismatch overridden (" + got + " -> " + want + ")");
    }
    model = std::move(lc.model);
    start_epoch = lc.next_epoch;
    rng.deserialize(lc.rng_state);
    restored_velocity = std::move(lc.velocity);
    log_info("resumed from " + cfg.resume + " at epoch " + std::to_string(start_epoch));
  } else {
    model = build_model(cfg, rng);
    if (!cfg.pretrained.empty()) load_pretrained(*model.encoder, cfg.pretrained);
  }

  optimizer.add_group(model.encoder_params().params, cfg.lr_encoder);
  optimizer.add_group(model.localizer_params().params, cfg.lr_localizer);
  optimizer.add_group(model.decoder_params().params, cfg.lr_decoder);
  for (auto& [name, v] : restored_velocity) optimizer.set_velocity(name, std::move(v));

  const std::string last_path = (fs::path(cfg.out_dir) / "last.ckpt").string();
  if (start_epoch >= cfg.epochs) {
    save_checkpoint(last_path, model, &optimizer, cfg, start_epoch, rng);
    log_info("no epochs to run; wrote " + last_path);
    return last_path;
  }

  const std::string log_path = (fs::path(cfg.out_dir) / "metrics.log").string();
  std::ofstream metrics_log(log_path, start_epoch > 0 ? std::ios::app : std::ios::trunc);
  if (!metrics_log) throw IoError("cannot open " + log_path);

  const int64_t n = data.size();
  const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  int64_t step = start_epoch * steps_per_epoch;

  for (int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    shuffle_indices(order, rng);

    for (int64_t b = 0; b < n; b += cfg.batch_size) {
      const int64_t e = std::min(b + cfg.batch_size, n);
      std::vector<int64_t> indices(order.begin() + b, order.begin() + e);
      Tensor batch = data.load_batch(indices);
      if (cfg.augment) batch = augment_batch(batch, rng);

      StepLosses sl;
      try {
        sl = train_step(model, optimizer, batch, cfg, epoch);
      } catch (const TrainError& err) {
        throw TrainError(std::string(err.what()) + " (batch indices " + join_indices(indices) + ")");
      }

      char line[192];
      std::snprintf(line, sizeof line, "%lld %lld %.9e %.9e %.9e %.9e %.9e\n",
                    static_cast<long long>(step), static_cast<long long>(epoch), sl.sosl, sl.pbce,
                    sl.lsc, sl.iou, sl.total);
      metrics_log << line;
      metrics_log.flush();
      ++step;
    }

    char name[64];
    std::snprintf(name, sizeof name, "epoch_%lld.ckpt", static_cast<long long>(epoch + 1));
    save_checkpoint((fs::path(cfg.out_dir) / name).string(), model, &optimizer, cfg, epoch + 1, rng);
    save_checkpoint(last_path, model, &optimizer, cfg, epoch + 1, rng);
    log_info("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.epochs) + " done");
  }
  return last_path;
}

void export_pseudo_labels(const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (cfg.data_dir.empty()) throw ConfigError("pseudo-label: data_dir is required");
  Dataset data(cfg.data_dir, cfg.image_size);

  Model model;
  bool orient = false;
  if (!cfg.resume.empty()) {
    LoadedCheckpoint lc = load_checkpoint(cfg.resume);
    model = std::move(lc.model);
    orient = lc.next_epoch >= lc.cfg.weights.warmup_epochs;
  } else {
    Rng rng(cfg.seed);
    model = build_model(cfg, rng);
    if (!cfg.pretrained.empty()) load_pretrained(*model.encoder, cfg.pretrained);
  }

  const fs::path base(out_dir);
  fs::create_directories(base / "location");
  fs::create_directories(base / "detailed");
  fs::create_directories(base / "unss");

  RefinerParams rp = cfg.refiner;
  rp.theta_f = cfg.theta_f;
  const UnssParams up{cfg.theta_r, cfg.theta_f, cfg.unss_literal};
  const int64_t s = cfg.image_size;
  const int64_t n = data.size();

  ad::NoGradGuard ng;
  for (int64_t b = 0; b < n; b += cfg.batch_size) {
    const int64_t e = std::min(b + cfg.batch_size, n);
    std::vector<int64_t> indices(static_cast<size_t>(e - b));
    std::iota(indices.begin(), indices.end(), b);
    Tensor batch = data.load_batch(indices);
    Tensor normalized = normalize_images(batch, cfg.norm_mean, cfg.norm_std);
    LocalizerOutput loc = localizer_forward(model, normalized, cfg, false, orient);
    Tensor location = ad::resize_bilinear_tensor(loc.activation.value(), s, s);
    Tensor detailed = refine(location, batch, rp);
    Tensor suppressed = unss_batch(detailed, up);
    for (int64_t i = 0; i < e - b; ++i) {
      const std::string out_name = stem_png(data.names()[static_cast<size_t>(b + i)]);
      save_mask_png((base / "location" / out_name).string(), slice_image(location, i));
      save_mask_png((base / "detailed" / out_name).string(), slice_image(detailed, i));
      save_mask_png((base / "unss" / out_name).string(), slice_image(suppressed, i));
    }
  }
  log_info("wrote " + std::to_string(n) + " pseudo-label triplets to " + out_dir);
}

void infer(const std::string& checkpoint_path, const std::string& in_dir,
           const std::string& out_dir) {
  LoadedCheckpoint lc = load_checkpoint(checkpoint_path);
  const TrainConfig& cfg = lc.cfg;
  const std::vector<std::string> names = list_images(in_dir);
  if (names.empty()) throw IoError(in_dir + ": no images to decode");
  fs::create_directories(out_dir);

  ad::NoGradGuard ng;
  for (const std::string& name : names) {
    Tensor original = load_image_rgb((fs::path(in_dir) / name).string());
    const int64_t h = original.dim(2), w = original.dim(3);
    Tensor square = ad::resize_bilinear_tensor(original, cfg.image_size, cfg.image_size);
    Tensor normalized = normalize_images(square, cfg.norm_mean, cfg.norm_std);
    ad::Var x(normalized);
    FeaturePyramid pyr = lc.model.encoder->forward(x, false);
    ad::Var m = lc.model.decoder.forward(pyr, cfg.image_size, cfg.image_size, false);
    Tensor full = ad::resize_bilinear_tensor(m.value(), h, w);
    save_mask_png((fs::path(out_dir) / stem_png(name)).string(), full);
  }
  log_info("decoded " + std::to_string(names.size()) + " images into " + out_dir);
}

EvalRow evaluate_model(Model& model, const Dataset& dataset, const TrainConfig& cfg) {
  const fs::path gt_dir = fs::path(dataset.dir()) / "gt";
  if (!fs::is_directory(gt_dir)) throw IoError(gt_dir.string() + ": ground-truth directory not found");

  EvalRow row;
  row.dataset = fs::path(dataset.dir()).filename().string();
  const int64_t n = dataset.size();

  ad::NoGradGuard ng;
  double sum_f = 0.0, sum_e = 0.0, sum_mae = 0.0;
  int64_t scored = 0;
  for (int64_t b = 0; b < n; b += cfg.batch_size) {
    const int64_t e = std::min(b + cfg.batch_size, n);
    std::vector<int64_t> indices(static_cast<size_t>(e - b));
    std::iota(indices.begin(), indices.end(), b);
    Tensor batch = dataset.load_batch(indices);
    Tensor normalized = normalize_images(batch, cfg.norm_mean, cfg.norm_std);
    ad::Var x(normalized);
    FeaturePyramid pyr = model.encoder->forward(x, false);
    ad::Var m = model.decoder.forward(pyr, cfg.image_size, cfg.image_size, false);

    for (int64_t i = 0; i < e - b; ++i) {
      const std::string& name = dataset.names()[static_cast<size_t>(b + i)];
      fs::path gt_path = gt_dir / name;
      if (!fs::exists(gt_path)) gt_path = gt_dir / stem_png(name);
      if (!fs::exists(gt_path)) throw IoError(gt_path.string() + ": missing ground-truth mask");
      Tensor gt = load_mask(gt_path.string());
      Tensor pred = slice_image(m.value(), i);
      pred = ad::resize_bilinear_tensor(pred, gt.dim(2), gt.dim(3));
      sum_f += f_beta(pred, gt);
      sum_e += e_measure(pred, gt);
      sum_mae += mae(pred, gt);
      ++scored;
    }
  }
  row.image_count = scored;
  if (scored > 0) {
    row.f_beta = sum_f / static_cast<double>(scored);
    row.e_measure = sum_e / static_cast<double>(scored);
    row.mae = sum_mae / static_cast<double>(scored);
  }
  return row;
}

std::string ablate(const TrainConfig& base, const Config& grid) {
  for (const auto& [key, value] : grid.entries()) {
    (void)value;
    if (key != "loss_rows" && key != "theta_r")
      throw ConfigError("unknown ablation grid key '" + key + "' (expected loss_rows and/or theta_r)");
  }
  std::vector<std::pair<std::string, TrainConfig>> entries;
  for (const std::string& r : split_list(grid.get_str("loss_rows", ""))) {
    TrainConfig cfg = base;
    cfg.loss_row = r;
    cfg.out_dir = (fs::path(base.out_dir) / ("row_" + r)).string();
    entries.emplace_back("loss_row=" + r, cfg);
  }
  if (grid.has("theta_r")) {
    for (double t : parse_double_list(grid.get_str("theta_r", ""), "theta_r")) {
      TrainConfig cfg = base;
      cfg.theta_r = t;
      std::string tag = fmt_double(t);
      for (char& ch : tag)
        if (ch == '.' || ch == '+' || ch == '-') ch = '_';
      cfg.out_dir = (fs::path(base.out_dir) / ("theta_r_" + tag)).string();
      entries.emplace_back("theta_r=" + fmt_double(t), cfg);
    }
  }
  if (entries.empty()) throw ConfigError("ablation grid is empty: set loss_rows and/or theta_r");

  std::ostringstream table;
  table << "setting\timages\tf_beta\te_measure\tmae\n";
  for (auto& [label, cfg] : entries) {
    cfg.validate();
    log_info("ablation entry " + label);
    const std::string ckpt = train(cfg);
    LoadedCheckpoint lc = load_checkpoint(ckpt);
    Dataset data(cfg.data_dir, cfg.image_size);
    EvalRow row = evaluate_model(lc.model, data, cfg);
    char line[192];
    std::snprintf(line, sizeof line, "%s\t%lld\t%.4f\t%.4f\t%.4f\n", label.c_str(),
                  static_cast<long long>(row.image_count), row.f_beta, row.e_measure, row.mae);
    table << line;
  }

  fs::create_directories(base.out_dir);
  const std::string out_path = (fs::path(base.out_dir) / "ablation.txt").string();
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write " + out_path);
  out << table.str();
  return table.str();
}

}  // namespace usod
