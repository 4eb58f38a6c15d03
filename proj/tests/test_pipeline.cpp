#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "usod/image_io.hpp"
#include "usod/pipeline.hpp"

using namespace usod;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("usod_pipe_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream is(p);
  REQUIRE(is.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

// Small synthetic dataset shared by the training tests.
fs::path make_data(const std::string& tag, int count) {
  fs::path dir = temp_dir("data_" + tag);
  generate_synthetic_dataset(dir.string(), count, 32, 44);
  return dir;
}

TrainConfig tiny_cfg(const fs::path& data, const fs::path& out) {
  TrainConfig c;
  c.data_dir = data.string();
  c.out_dir = out.string();
  c.image_size = 32;
  c.batch_size = 4;
  c.epochs = 2;
  c.seed = 7;
  c.augment = false;
  c.backbone = "toy";
  c.decoder_width = 4;
  c.scales = {1.0};
  c.refiner.iterations = 1;
  c.lsc.kernel = 3;
  return c;
}

ad::Var* find_param(nn::ParamMap& pm, const std::string& name) {
  for (auto& [k, v] : pm.params)
    if (k == name) return &v;
  return nullptr;
}

std::vector<std::pair<std::string, Tensor>> snapshot(nn::ParamMap& pm) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& [k, v] : pm.params) out.emplace_back(k, v.value());
  return out;
}

double drift(nn::ParamMap& pm, const std::vector<std::pair<std::string, Tensor>>& snap) {
  double worst = 0.0;
  for (size_t i = 0; i < snap.size(); ++i)
    worst = std::max(worst, testutil::max_abs_diff(pm.params[i].second.value(), snap[i].second));
  return worst;
}

}  // namespace

TEST_CASE("training config parses, serializes, and hashes consistently") {
  Config raw = Config::parse_string(
      "data_dir = /tmp/somewhere\n"
      "image_size = 64\n"
      "epochs = 3\n"
      "seed = 11\n"
      "theta_r = inf\n"
      "scales = 1.0, 0.5\n"
      "refiner.iterations = 4\n"
      "warmup_epochs = 2\n"
      "loss_row = B3\n"
      "unss_literal = true\n");
  TrainConfig tc = TrainConfig::from_config(raw);
  CHECK(tc.data_dir == "/tmp/somewhere");
  CHECK(tc.image_size == 64);
  CHECK(tc.epochs == 3);
  CHECK(tc.seed == 11);
  CHECK(std::isinf(tc.theta_r));
  CHECK(tc.scales == std::vector<double>{1.0, 0.5});
  CHECK(tc.refiner.iterations == 4);
  CHECK(tc.weights.warmup_epochs == 2);
  CHECK(tc.loss_row == "B3");
  CHECK(tc.unss_literal);
  // Untouched keys keep their defaults.
  CHECK(tc.batch_size == 16);
  CHECK(tc.backbone == "full");

  // Round trip is idempotent in both text and hash.
  Config c1 = tc.to_config();
  TrainConfig tc2 = TrainConfig::from_config(c1);
  CHECK(tc2.to_config().serialize() == c1.serialize());
  CHECK(tc2.to_config().hash() == c1.hash());

  // Invocation details do not participate in the hash.
  TrainConfig moved = tc;
  moved.out_dir = "somewhere/else";
  moved.resume = "old/last.ckpt";
  moved.resume_force = true;
  CHECK(moved.to_config().hash() == tc.to_config().hash());

  // Changing real training state does.
  TrainConfig different = tc;
  different.theta_f = 0.55;
  CHECK(different.to_config().hash() != tc.to_config().hash());

  CHECK_THROWS_AS(TrainConfig::from_config(Config::parse_string("lr = 1\n")), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_config(Config::parse_string("scales = \n")), ConfigError);
}

TEST_CASE("training config validation rejects each bad field") {
  fs::path d("/tmp/unused"), o("/tmp/unused_out");
  TrainConfig ok = tiny_cfg(d, o);
  CHECK_NOTHROW(ok.validate());

  auto expect_bad = [&](void (*mutate)(TrainConfig&)) {
    TrainConfig c = tiny_cfg(d, o);
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  expect_bad([](TrainConfig& c) { c.backbone = "vgg16"; });
  expect_bad([](TrainConfig& c) { c.image_size = 24; });
  expect_bad([](TrainConfig& c) { c.image_size = 40; });  // not divisible by 16
  expect_bad([](TrainConfig& c) { c.backbone = "full"; c.image_size = 48; });  // % 32 != 0
  expect_bad([](TrainConfig& c) { c.batch_size = 0; });
  expect_bad([](TrainConfig& c) { c.epochs = -1; });
  expect_bad([](TrainConfig& c) { c.epochs = 1; c.weights.warmup_epochs = 2; });
  expect_bad([](TrainConfig& c) { c.decoder_width = 0; });
  expect_bad([](TrainConfig& c) { c.lr_decoder = 0.0; });
  expect_bad([](TrainConfig& c) { c.momentum = 1.0; });
  expect_bad([](TrainConfig& c) { c.weight_decay = -1e-4; });
  expect_bad([](TrainConfig& c) { c.theta_g = 0.6; });  // must stay below theta_f
  expect_bad([](TrainConfig& c) { c.theta_f = 1.5; });
  expect_bad([](TrainConfig& c) { c.theta_r = 0.0; });
  expect_bad([](TrainConfig& c) { c.alpha_rank = -0.1; });
  expect_bad([](TrainConfig& c) { c.epsilon = 0.0; });
  expect_bad([](TrainConfig& c) { c.norm_mean = {0.5, 0.5}; });
  expect_bad([](TrainConfig& c) { c.norm_std = {0.2, 0.0, 0.2}; });
  expect_bad([](TrainConfig& c) { c.scales = {0.5, 1.0}; });  // must start at 1
  expect_bad([](TrainConfig& c) { c.scales.clear(); });
  expect_bad([](TrainConfig& c) { c.lsc.kernel = 4; });
  expect_bad([](TrainConfig& c) { c.refiner.iterations = 0; });
  expect_bad([](TrainConfig& c) { c.loss_row = "Z9"; });

  // Zero-epoch configs are legal regardless of the warm-up length.
  TrainConfig zero = tiny_cfg(d, o);
  zero.epochs = 0;
  CHECK_NOTHROW(zero.validate());
}

TEST_CASE("model assembly shares one namespace across the three parts") {
  TrainConfig cfg = tiny_cfg("/tmp/unused", "/tmp/unused_out");
  Rng rng(3);
  Model m = build_model(cfg, rng);
  CHECK(m.strides == std::vector<int>{1, 2, 4, 8, 16});

  nn::ParamMap all = m.named_state();
  int64_t enc = 0, loc = 0, dec = 0, total = 0;
  for (auto& [name, v] : all.params) {
    total += v.numel();
    if (name.rfind("encoder.", 0) == 0) enc += v.numel();
    if (name.rfind("localizer.", 0) == 0) loc += v.numel();
    if (name.rfind("decoder.", 0) == 0) dec += v.numel();
  }
  CHECK(enc > 0);
  CHECK(loc > 0);
  CHECK(dec > 0);
  CHECK(enc + loc + dec == total);
  CHECK(total < 100000);  // toy stack stays tiny

  // The localizer projects the concatenated F4/F5 channel stack.
  ad::Var* proj = find_param(all, "localizer.proj.weight");
  REQUIRE(proj != nullptr);
  CHECK(proj->shape() == std::vector<int64_t>{1, 48 + 64, 1, 1});

  // Per-part views carry exactly their own namespace.
  nn::ParamMap enc_only = m.encoder_params();
  for (auto& [name, v] : enc_only.params) CHECK(name.rfind("encoder.", 0) == 0);
}

TEST_CASE("localizer forward produces the activation on F4's grid") {
  TrainConfig cfg = tiny_cfg("/tmp/unused", "/tmp/unused_out");
  cfg.scales = {1.0, 0.5};
  Rng rng(21);
  Model m = build_model(cfg, rng);

  Rng fill(8);
  Tensor batch({2, 3, 32, 32});
  for (int64_t i = 0; i < batch.numel(); ++i) batch[i] = fill.uniform();
  Tensor normalized = normalize_images(batch, cfg.norm_mean, cfg.norm_std);

  LocalizerOutput out = localizer_forward(m, normalized, cfg, false, false);
  REQUIRE(out.activation.shape() == std::vector<int64_t>{2, 1, 4, 4});
  REQUIRE(out.features.shape() == std::vector<int64_t>{2, 112, 4, 4});
  REQUIRE(out.pyramid.f(1).shape() == std::vector<int64_t>{2, 16, 32, 32});
  REQUIRE(out.pyramid.f(5).shape() == std::vector<int64_t>{2, 64, 2, 2});
  for (int64_t i = 0; i < out.activation.numel(); ++i) {
    CHECK(out.activation.value()[i] > 0.0);
    CHECK(out.activation.value()[i] < 1.0);
  }

  // Eval-mode forwards are pure: bitwise repeatable.
  LocalizerOutput again = localizer_forward(m, normalized, cfg, false, false);
  CHECK(testutil::max_abs_diff(out.activation.value(), again.activation.value()) == 0.0);

  // Orientation only ever maps G to itself or 1-G per image.
  LocalizerOutput oriented = localizer_forward(m, normalized, cfg, false, true);
  for (int64_t n = 0; n < 2; ++n) {
    double diff_same = 0.0, diff_flip = 0.0;
    for (int64_t i = 0; i < 16; ++i) {
      double g = out.activation.value()[n * 16 + i];
      double h = oriented.activation.value()[n * 16 + i];
      diff_same = std::max(diff_same, std::abs(h - g));
      diff_flip = std::max(diff_flip, std::abs(h - (1.0 - g)));
    }
    CHECK((diff_same == 0.0 || diff_flip == 0.0));
  }
}

TEST_CASE("warm-up steps train the localizer path and freeze the decoder") {
  fs::path data = make_data("warm", 8);
  TrainConfig cfg = tiny_cfg(data, temp_dir("warm_out"));
  Rng rng(cfg.seed);
  Model model = build_model(cfg, rng);
  nn::Sgd opt(cfg.momentum, cfg.weight_decay);
  opt.add_group(model.encoder_params().params, cfg.lr_encoder);
  opt.add_group(model.localizer_params().params, cfg.lr_localizer);
  opt.add_group(model.decoder_params().params, cfg.lr_decoder);

  Dataset ds(cfg.data_dir, cfg.image_size);
  Tensor batch = ds.load_batch({0, 1, 2, 3});

  nn::ParamMap enc = model.encoder_params();
  nn::ParamMap loc = model.localizer_params();
  nn::ParamMap dec = model.decoder_params();
  auto enc_before = snapshot(enc);
  auto loc_before = snapshot(loc);
  auto dec_before = snapshot(dec);

  StepLosses warm = train_step(model, opt, batch, cfg, 0);
  CHECK(warm.pbce == 0.0);
  CHECK(warm.lsc == 0.0);
  CHECK(warm.iou == 0.0);
  CHECK(warm.sosl > 0.0);
  CHECK(warm.total == warm.sosl);
  // Contrastive gradients move the encoder and localizer but cannot reach the
  // decoder, whose parameters must stay bit-identical.
  CHECK(drift(enc, enc_before) > 0.0);
  CHECK(drift(loc, loc_before) > 0.0);
  CHECK(drift(dec, dec_before) == 0.0);

  // Past the warm-up boundary every term participates.
  dec_before = snapshot(dec);
  StepLosses post = train_step(model, opt, batch, cfg, 1);
  CHECK(post.sosl > 0.0);
  CHECK(post.pbce > 0.0);
  CHECK(post.lsc > 0.0);
  CHECK(post.iou >= 0.0);
  CHECK(std::abs(post.total - (0.1 * post.sosl + post.pbce + post.lsc + 0.1 * post.iou)) < 1e-9);
  CHECK(drift(dec, dec_before) > 0.0);

  // A wiring without the overlap term reports it as zero.
  TrainConfig b1 = cfg;
  b1.loss_row = "B1";
  StepLosses no_iou = train_step(model, opt, batch, b1, 1);
  CHECK(no_iou.iou == 0.0);
  CHECK(no_iou.pbce > 0.0);
}

TEST_CASE("the training loop writes logs and checkpoints deterministically") {
  fs::path data = make_data("loop", 8);
  fs::path out_a = temp_dir("loop_a");
  TrainConfig cfg = tiny_cfg(data, out_a);
  std::string last = train(cfg);
  CHECK(last == (out_a / "last.ckpt").string());
  CHECK(fs::exists(out_a / "epoch_1.ckpt"));
  CHECK(fs::exists(out_a / "epoch_2.ckpt"));
  CHECK(fs::exists(out_a / "last.ckpt"));

  // 8 images / batch 4 = 2 steps per epoch, logged as
  // "step epoch sosl pbce lsc iou total".
  auto lines = read_lines(out_a / "metrics.log");
  REQUIRE(lines.size() == 4);
  for (size_t i = 0; i < lines.size(); ++i) {
    std::istringstream ss(lines[i]);
    int64_t step, epoch;
    double sosl, pbce, lsc, iou, total;
    REQUIRE((ss >> step >> epoch >> sosl >> pbce >> lsc >> iou >> total));
    CHECK(step == static_cast<int64_t>(i));
    CHECK(epoch == static_cast<int64_t>(i / 2));
    CHECK(std::isfinite(total));
    if (epoch == 0) {  // warm-up rows carry no decoder losses
      CHECK(pbce == 0.0);
      CHECK(lsc == 0.0);
      CHECK(iou == 0.0);
    } else {
      CHECK(pbce > 0.0);
    }
  }

  // Re-running the identical config elsewhere reproduces every byte.
  fs::path out_b = temp_dir("loop_b");
  TrainConfig cfg_b = cfg;
  cfg_b.out_dir = out_b.string();
  train(cfg_b);
  CHECK(read_bytes(out_a / "metrics.log") == read_bytes(out_b / "metrics.log"));
  CHECK(read_bytes(out_a / "last.ckpt") == read_bytes(out_b / "last.ckpt"));

  // Resuming from the epoch-1 checkpoint replays epoch 2 exactly.
  fs::path out_c = temp_dir("loop_c");
  TrainConfig cfg_c = cfg;
  cfg_c.out_dir = out_c.string();
  cfg_c.resume = (out_a / "epoch_1.ckpt").string();
  train(cfg_c);
  CHECK(read_bytes(out_c / "last.ckpt") == read_bytes(out_a / "last.ckpt"));
  auto resumed = read_lines(out_c / "metrics.log");
  REQUIRE(resumed.size() == 2);
  CHECK(resumed[0] == lines[2]);
  CHECK(resumed[1] == lines[3]);
}

TEST_CASE("resume refuses a drifted config unless forced") {
  fs::path data = make_data("resume", 8);
  fs::path out = temp_dir("resume_a");
  TrainConfig cfg = tiny_cfg(data, out);
  cfg.epochs = 1;
  train(cfg);

  TrainConfig drifted = cfg;
  drifted.out_dir = temp_dir("resume_b").string();
  drifted.resume = (out / "last.ckpt").string();
  drifted.theta_f = 0.55;
  drifted.epochs = 2;
  CHECK_THROWS_AS(train(drifted), ConfigError);
  CHECK_THROWS_WITH_AS(train(drifted), doctest::Contains("hash mismatch"), ConfigError);

  drifted.resume_force = true;
  std::string last = train(drifted);
  CHECK(fs::exists(last));
}

TEST_CASE("a zero-epoch run just materializes the checkpoint") {
  fs::path data = make_data("zero", 4);
  fs::path out = temp_dir("zero_out");
  TrainConfig cfg = tiny_cfg(data, out);
  cfg.epochs = 0;
  std::string last = train(cfg);
  CHECK(fs::exists(last));
  CHECK_FALSE(fs::exists(out / "metrics.log"));
  LoadedCheckpoint lc = load_checkpoint(last);
  CHECK(lc.next_epoch == 0);
  CHECK(lc.cfg.to_config().hash() == cfg.to_config().hash());
}

TEST_CASE("checkpoints round-trip the full training state bit for bit") {
  fs::path data = make_data("ckpt", 4);
  TrainConfig cfg = tiny_cfg(data, temp_dir("ckpt_out"));
  Rng rng(cfg.seed);
  Model model = build_model(cfg, rng);
  nn::Sgd opt(cfg.momentum, cfg.weight_decay);
  opt.add_group(model.encoder_params().params, cfg.lr_encoder);
  opt.add_group(model.localizer_params().params, cfg.lr_localizer);
  opt.add_group(model.decoder_params().params, cfg.lr_decoder);

  // One real step gives the optimizer non-trivial velocity.
  Dataset ds(cfg.data_dir, cfg.image_size);
  (void)train_step(model, opt, ds.load_batch({0, 1, 2, 3}), cfg, 0);
  REQUIRE(!opt.velocity().empty());

  fs::path path = temp_dir("ckpt_file") / "state.ckpt";
  save_checkpoint(path.string(), model, &opt, cfg, 5, rng);
  LoadedCheckpoint lc = load_checkpoint(path.string());

  CHECK(lc.next_epoch == 5);
  CHECK(lc.rng_state == rng.serialize());
  CHECK(lc.cfg.to_config().hash() == cfg.to_config().hash());

  nn::ParamMap src = model.named_state();
  nn::ParamMap dst = lc.model.named_state();
  REQUIRE(src.params.size() == dst.params.size());
  for (size_t i = 0; i < src.params.size(); ++i) {
    CAPTURE(src.params[i].first);
    CHECK(src.params[i].first == dst.params[i].first);
    CHECK(testutil::max_abs_diff(src.params[i].second.value(), dst.params[i].second.value()) ==
          0.0);
  }
  REQUIRE(src.buffers.size() == dst.buffers.size());
  for (size_t i = 0; i < src.buffers.size(); ++i)
    CHECK(testutil::max_abs_diff(*src.buffers[i].second, *dst.buffers[i].second) == 0.0);

  REQUIRE(lc.velocity.size() == opt.velocity().size());
  for (const auto& [name, v] : opt.velocity()) {
    REQUIRE(lc.velocity.count(name) == 1);
    CHECK(testutil::max_abs_diff(lc.velocity.at(name), v) == 0.0);
  }

  CHECK_THROWS_AS(load_checkpoint((temp_dir("ckpt_miss") / "no.ckpt").string()), IoError);
}

TEST_CASE("pseudo-label export writes three aligned label families") {
  fs::path data = make_data("export", 4);
  TrainConfig cfg = tiny_cfg(data, temp_dir("export_out"));
  fs::path out = temp_dir("export_labels");
  export_pseudo_labels(cfg, out.string());

  auto names = list_images((out / "location").string());
  REQUIRE(names.size() == 4);
  CHECK(names == list_images((out / "detailed").string()));
  CHECK(names == list_images((out / "unss").string()));
  CHECK(names[0] == "img_0000.png");

  // Suppression only ever zeroes pixels, so unss <= detailed everywhere.
  for (const auto& name : names) {
    Tensor det = load_mask((out / "detailed" / name).string());
    Tensor sup = load_mask((out / "unss" / name).string());
    REQUIRE(det.shape() == std::vector<int64_t>{1, 1, 32, 32});
    for (int64_t i = 0; i < det.numel(); ++i) {
      CHECK(sup[i] <= det[i]);
      CHECK((sup[i] == det[i] || sup[i] == 0.0));
    }
  }

  // theta_r = inf disables suppression: unss/ mirrors detailed/ byte for byte.
  TrainConfig open_cfg = cfg;
  open_cfg.theta_r = std::numeric_limits<double>::infinity();
  fs::path out2 = temp_dir("export_open");
  export_pseudo_labels(open_cfg, out2.string());
  for (const auto& name : names)
    CHECK(read_bytes(out2 / "detailed" / name) == read_bytes(out2 / "unss" / name));
}

TEST_CASE("inference decodes every input at its original resolution") {
  fs::path data = make_data("infer", 3);
  fs::path out_dir = temp_dir("infer_ckpt");
  TrainConfig cfg = tiny_cfg(data, out_dir);
  cfg.epochs = 0;
  std::string ckpt = train(cfg);

  // Add one non-square image to the input set.
  fs::path in_dir = temp_dir("infer_in");
  for (const auto& n : list_images(data.string()))
    fs::copy_file(data / n, in_dir / n);
  save_image_png((in_dir / "wide.png").string(), Tensor({3, 28, 40}, 0.5));

  fs::path pred = temp_dir("infer_pred");
  infer(ckpt, in_dir.string(), pred.string());
  auto outs = list_images(pred.string());
  REQUIRE(outs.size() == 4);

  Tensor wide = load_mask((pred / "wide.png").string());
  CHECK(wide.shape() == std::vector<int64_t>{1, 1, 28, 40});
  Tensor square = load_mask((pred / "img_0000.png").string());
  CHECK(square.shape() == std::vector<int64_t>{1, 1, 32, 32});

  // Decoding is deterministic.
  fs::path pred2 = temp_dir("infer_pred2");
  infer(ckpt, in_dir.string(), pred2.string());
  for (const auto& n : outs) CHECK(read_bytes(pred / n) == read_bytes(pred2 / n));

  fs::path empty = temp_dir("infer_empty");
  CHECK_THROWS_AS(infer(ckpt, empty.string(), pred.string()), IoError);
}

TEST_CASE("the ablation driver sweeps wiring rows and suppression ratios") {
  fs::path data = make_data("ablate", 4);
  fs::path out = temp_dir("ablate_out");
  TrainConfig base = tiny_cfg(data, out);
  base.epochs = 1;

  Config grid;
  grid.set("loss_rows", "B2");
  grid.set("theta_r", "3.0");
  std::string table = ablate(base, grid);

  auto lines = read_lines(out / "ablation.txt");
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "setting\timages\tf_beta\te_measure\tmae");
  CHECK(lines[1].rfind("loss_row=B2\t4\t", 0) == 0);
  CHECK(lines[2].rfind("theta_r=3\t4\t", 0) == 0);
  CHECK(table == read_bytes(out / "ablation.txt"));
  CHECK(fs::exists(out / "row_B2" / "last.ckpt"));
  CHECK(fs::exists(out / "theta_r_3" / "last.ckpt"));

  Config bad;
  bad.set("optimizer", "adam");
  CHECK_THROWS_AS(ablate(base, bad), ConfigError);
  Config empty;
  CHECK_THROWS_AS(ablate(base, empty), ConfigError);
}
