#include <doctest.h>

#include <cmath>

#include "cytoxai/diagnostics.hpp"
#include "cytoxai/error.hpp"
#include "cytoxai/training.hpp"
#include "test_helpers.hpp"
#include "toy_data.hpp"

using namespace cytoxai;

namespace {

EncoderSpec tiny_spec(std::uint64_t seed = 3) {
  EncoderSpec e;
  e.architecture = Architecture::tiny;
  e.pretrained = false;
  e.seed = seed;
  e.input_size = 40;
  return e;
}

toy::ToySet small_set(std::uint64_t seed = 1) {
  return toy::make_toy_set(std::vector<std::array<int, 3>>(kNumClasses, {8, 3, 3}), seed, 40);
}

TrainConfig quick_config(TrainMode mode = TrainMode::standard) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = 2;
  c.batch_size = 8;
  c.seed = 5;
  return c;
}

struct QuietWarnings {
  QuietWarnings() : previous(set_warning_sink([](const std::string&) {})) {}
  ~QuietWarnings() { set_warning_sink(previous); }
  WarningSink previous;
};

bool same_weights(const nn::Network& a, const nn::Network& b, bool encoder_only = false) {
  for (std::size_t n = 0; n < a.size(); ++n) {
    const auto& la = a.layer(static_cast<int>(n));
    if (encoder_only && (la.name().rfind("head_", 0) == 0 || la.name().rfind("proj_", 0) == 0)) continue;
    const auto found = b.find(la.name());
    if (!found) return false;
    const auto& lb = b.layer(*found);
    if (la.weights().size() != lb.weights().size()) return false;
    for (std::size_t w = 0; w < la.weights().size(); ++w) {
      const auto& x = la.weights()[w].value;
      const auto& y = lb.weights()[w].value;
      if (x.shape() != y.shape()) return false;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] != y[i]) return false;
      }
    }
  }
  return true;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.epochs = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.mode = TrainMode::cost_sensitive;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.class_weights = std::vector<double>{1, 1, 1};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.class_weights = std::vector<double>(kNumClasses, 1.0);
  CHECK_NOTHROW(c.validate());
  CHECK(parse_train_mode("cost-sensitive") == TrainMode::cost_sensitive);
  CHECK(parse_train_mode("cost_sensitive") == TrainMode::cost_sensitive);
  CHECK_THROWS_AS(parse_train_mode("adversarial"), ArgumentError);
  CHECK(train_mode_name(TrainMode::contrastive) == "contrastive");
}

TEST_CASE("empty splits and missing weights are configuration errors") {
  auto set = small_set();
  SplitManifest no_val = set.manifest;
  std::erase_if(no_val.records, [](const ImageRecord& r) { return r.split == Split::val; });
  CHECK_THROWS_AS(train_standard(no_val, set.source, tiny_spec(), quick_config()), ConfigError);
  CHECK_THROWS_AS(train_cost_sensitive(set.manifest, set.source, tiny_spec(), quick_config(TrainMode::cost_sensitive)),
                  ConfigError);
  CHECK_THROWS_AS(train_standard(set.manifest, set.source, tiny_spec(), quick_config(TrainMode::contrastive)),
                  ConfigError);
}

TEST_CASE("zero epochs returns the initialization") {
  auto set = small_set();
  TrainConfig c = quick_config();
  c.epochs = 0;
  const auto result = train_standard(set.manifest, set.source, tiny_spec(), c);
  Model init = build_encoder(tiny_spec());
  HeadSpec head;
  attach_head(init, head, c.seed);
  CHECK(same_weights(result.model.network(), init.network()));
  CHECK(result.history.epochs.empty());
  CHECK(result.history.best_epoch == 0);
}

TEST_CASE("unit class weights reproduce standard training") {
  QuietWarnings quiet;
  auto set = small_set();
  const auto standard = train_standard(set.manifest, set.source, tiny_spec(), quick_config());
  TrainConfig c = quick_config(TrainMode::cost_sensitive);
  c.class_weights = std::vector<double>(kNumClasses, 1.0);
  const auto weighted = train_cost_sensitive(set.manifest, set.source, tiny_spec(), c);
  REQUIRE(standard.history.step_losses.size() == weighted.history.step_losses.size());
  REQUIRE(!standard.history.step_losses.empty());
  for (std::size_t i = 0; i < standard.history.step_losses.size(); ++i) {
    CHECK(std::abs(standard.history.step_losses[i] - weighted.history.step_losses[i]) < 1e-6);
  }
}

TEST_CASE("training is deterministic and selects the best validation epoch") {
  QuietWarnings quiet;
  auto set = small_set();
  TrainConfig c = quick_config();
  c.epochs = 3;
  const auto a = train_standard(set.manifest, set.source, tiny_spec(), c);
  const auto b = train_standard(set.manifest, set.source, tiny_spec(), c);
  REQUIRE(a.history.epochs.size() == 3);
  REQUIRE(b.history.epochs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.history.epochs[i].train_loss == b.history.epochs[i].train_loss);
    CHECK(a.history.epochs[i].val_loss == b.history.epochs[i].val_loss);
    CHECK(a.history.epochs[i].val_accuracy == b.history.epochs[i].val_accuracy);
  }
  CHECK(a.history.step_losses == b.history.step_losses);
  CHECK(same_weights(a.model.network(), b.model.network()));

  double best = -1;
  for (const auto& e : a.history.epochs) best = std::max(best, e.val_accuracy);
  CHECK(a.history.best_val_accuracy == best);
  CHECK(a.history.epochs.at(a.history.best_epoch - 1).val_accuracy == best);
  Model selected = a.model;
  const auto val = set.manifest.select(Split::val);
  CHECK(evaluate_records(selected, val, set.source).metrics.accuracy == best);

  const std::string csv = history_to_csv(a.history);
  CHECK(csv.rfind("epoch,stage,train_loss,val_loss,val_accuracy,seconds\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("predictions are distributions and checkpoints round-trip") {
  QuietWarnings quiet;
  auto set = small_set();
  auto result = train_standard(set.manifest, set.source, tiny_spec(), quick_config());
  std::vector<Image> images;
  for (const auto* r : set.manifest.select(Split::test)) images.push_back(set.source.load(*r));
  images.push_back(images.front());
  const RowMatrix p = predict_probabilities(result.model, images);
  REQUIRE(p.rows() == static_cast<Eigen::Index>(images.size()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-6);
  CHECK(p.row(0) == p.row(p.rows() - 1));

  TempDir dir;
  const auto path = dir.path() / "ckpt" / "model.cxw";
  CheckpointInfo info;
  info.mode = "standard";
  info.dataset_hash = "abc";
  info.seed = 5;
  info.best_epoch = result.history.best_epoch;
  const std::string id = save_checkpoint(result.model, info, path);
  CHECK(id.size() == 64);
  auto loaded = load_checkpoint(path);
  CHECK(loaded.id == id);
  CHECK(loaded.info.dataset_hash == "abc");
  CHECK(loaded.info.best_epoch == result.history.best_epoch);
  CHECK(loaded.model.freeze_depth() == result.model.freeze_depth());
  const RowMatrix q = predict_probabilities(loaded.model, images);
  CHECK((p - q).cwiseAbs().maxCoeff() < 1e-6);

  std::vector<Image> wrong{Image(41, 40)};
  try {
    predict_probabilities(loaded.model, wrong);
    FAIL("expected an argument error");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("40x40") != std::string::npos);
  }
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.cxw"), IoError);
}

TEST_CASE("contrastive stage 2 leaves the encoder untouched") {
  QuietWarnings quiet;
  auto set = small_set();
  TrainConfig c = quick_config(TrainMode::contrastive);
  c.contrastive.projection_dims = {16, 8};
  TrainingHistory history;
  const Model stage1 = contrastive_stage1(set.manifest, set.source, tiny_spec(), c, history);
  CHECK(history.epochs.size() == 2);
  CHECK(history.epochs[0].stage == "stage1");
  CHECK(std::isnan(history.epochs[0].val_accuracy));
  const nn::Network before = stage1.network();
  auto result = contrastive_stage2(stage1, set.manifest, set.source, c, history);
  CHECK(same_weights(result.model.network(), before, true));
  CHECK(result.model.network().trainable_parameter_count() == (64 + 1) * kNumClasses);
  CHECK(result.history.epochs.size() == 4);
  CHECK(result.history.epochs[3].stage == "stage2");

  for (ContrastiveLoss loss : {ContrastiveLoss::ntxent, ContrastiveLoss::triplet}) {
    c.contrastive.loss = loss;
    c.epochs = 1;
    TrainingHistory h;
    contrastive_stage1(set.manifest, set.source, tiny_spec(), c, h);
    CHECK(std::isfinite(h.epochs.at(0).train_loss));
  }
}

TEST_CASE("contrastive training fails on a single-class train split") {
  auto set = toy::make_toy_set({{{6, 2, 0}}, {{0, 2, 0}}, {{0, 0, 0}}, {{0, 0, 0}}, {{0, 0, 0}}}, 2, 40);
  TrainConfig c = quick_config(TrainMode::contrastive);
  c.contrastive.projection_dims = {8};
  CHECK_THROWS_AS(train_contrastive(set.manifest, set.source, tiny_spec(), c), ConfigError);
}
