#include "cytoxai/training.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "cytoxai/error.hpp"
#include "cytoxai/nn/optimizer.hpp"
#include "cytoxai/persistence.hpp"
#include "cytoxai/random.hpp"
#include "cytoxai/weights_io.hpp"

namespace cytoxai {

std::string_view train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::standard: return "standard";
    case TrainMode::cost_sensitive: return "cost-sensitive";
    case TrainMode::contrastive: return "contrastive";
  }
  return "?";
}

TrainMode parse_train_mode(std::string_view text) {
  if (text == "standard") return TrainMode::standard;
  if (text == "cost-sensitive" || text == "cost_sensitive") return TrainMode::cost_sensitive;
  if (text == "contrastive") return TrainMode::contrastive;
  throw ArgumentError(fmt::format("unknown training mode '{}' (standard, cost-sensitive, contrastive)", text));
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError(fmt::format("train.epochs must be >= 0, got {}", epochs));
  if (!(learning_rate > 0)) throw ConfigError(fmt::format("train.learning_rate must be > 0, got {}", learning_rate));
  if (batch_size < 1) throw ConfigError(fmt::format("train.batch_size must be >= 1, got {}", batch_size));
  if (!(dropout_rate >= 0 && dropout_rate < 1)) throw ConfigError("train.dropout must lie in [0, 1)");
  if (mode == TrainMode::cost_sensitive && !class_weights) {
    throw ConfigError("cost-sensitive training needs class weights");
  }
  if (class_weights) {
    if (class_weights->size() != kNumClasses) {
      throw ConfigError(fmt::format("expected {} class weights, got {}", kNumClasses, class_weights->size()));
    }
    for (double w : *class_weights) {
      if (!(w > 0) || !std::isfinite(w)) throw ConfigError("class weights must be positive and finite");
    }
  }
  if (mode == TrainMode::contrastive) {
    if (!(contrastive.temperature > 0)) throw ConfigError("contrastive.temperature must be > 0");
    if (!(contrastive.margin >= 0)) throw ConfigError("contrastive.margin must be >= 0");
    if (contrastive.projection_dims.empty()) throw ConfigError("contrastive.projection_dims must not be empty");
  }
}

std::string history_to_csv(const TrainingHistory& h) {
  std::string out = "epoch,stage,train_loss,val_loss,val_accuracy,seconds\n";
  for (const auto& e : h.epochs) {
    out += fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.3f}\n", e.epoch, e.stage, e.train_loss, e.val_loss,
                       e.val_accuracy, e.seconds);
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

RowMatrix to_matrix(const nn::Tensor& t) {
  RowMatrix m(t.dim(0), static_cast<Eigen::Index>(t.stride0()));
  for (std::size_t i = 0; i < t.size(); ++i) m.data()[i] = t[i];
  return m;
}

nn::Tensor to_tensor(const RowMatrix& m) {
  nn::Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(m.data()[i]);
  return t;
}

std::vector<const ImageRecord*> require_split(const SplitManifest& manifest, Split split) {
  auto records = manifest.select(split);
  if (records.empty()) throw ConfigError(fmt::format("the manifest has no {} records", split_name(split)));
  return records;
}

void check_mode(const TrainConfig& config, TrainMode expected) {
  config.validate();
  if (config.mode != expected) {
    throw ConfigError(fmt::format("configuration is for {} training, not {}", train_mode_name(config.mode),
                                  train_mode_name(expected)));
  }
}

HeadSpec classifier_head(const TrainConfig& config) {
  HeadSpec head;
  head.kind = HeadKind::classifier;
  head.dropout_rate = config.dropout_rate;
  head.num_classes = kNumClasses;
  return head;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch, std::string_view stage) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(mix_seed(seed, fnv1a(stage)), static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order.begin(), order.end());
  return order;
}

// Classifier training shared by the fine-tuning modes and contrastive stage 2.
void fit_classifier(Model& model, std::span<const ImageRecord* const> train, std::span<const ImageRecord* const> val,
                    ImageSource& images, const TrainConfig& config, std::span<const double> weights,
                    std::string_view stage, TrainingHistory& history) {
  nn::Adam adam({.learning_rate = config.learning_rate});
  nn::Network& net = model.network();
  const int logits = model.logits_node();
  nn::Network best = net;
  double best_acc = -1.0;
  int best_epoch = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = Clock::now();
    const auto order = epoch_order(train.size(), config.seed, epoch, stage);
    double loss_sum = 0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t end = std::min(order.size(), b + config.batch_size);
      std::vector<Image> pixels;
      std::vector<int> labels;
      for (std::size_t i = b; i < end; ++i) {
        pixels.push_back(images.load(*train[order[i]]));
        labels.push_back(static_cast<int>(train[order[i]]->label));
      }
      std::vector<const Image*> ptrs;
      for (const auto& p : pixels) ptrs.push_back(&p);
      net.zero_grad();
      net.forward(model.make_batch(ptrs), true, logits);
      const LossValue loss = softmax_cross_entropy(to_matrix(net.value(logits)), labels, weights);
      net.backward(to_tensor(loss.grad), logits);
      adam.step(net);
      history.step_losses.push_back(loss.value);
      loss_sum += loss.value * static_cast<double>(labels.size());
      seen += labels.size();
    }
    const Evaluation eval = evaluate_records(model, val, images, config.batch_size);
    history.epochs.push_back({epoch, std::string(stage), loss_sum / static_cast<double>(seen), eval.loss,
                              eval.metrics.accuracy, seconds_since(start)});
    if (eval.metrics.accuracy > best_acc) {
      best_acc = eval.metrics.accuracy;
      best_epoch = epoch;
      best = net;
    }
  }
  if (best_epoch > 0) net = std::move(best);
  history.best_epoch = best_epoch;
  history.best_val_accuracy = best_acc < 0 ? 0.0 : best_acc;
}

TrainResult finetune(const SplitManifest& manifest, ImageSource& images, const EncoderSpec& encoder,
                     const TrainConfig& config, std::span<const double> weights) {
  const auto train = require_split(manifest, Split::train);
  const auto val = require_split(manifest, Split::val);
  TrainResult result{build_encoder(encoder), {}};
  attach_head(result.model, classifier_head(config), config.seed);
  fit_classifier(result.model, train, val, images, config, weights, "finetune", result.history);
  return result;
}

std::vector<AugmentKind> view_kinds(const SplitManifest& manifest) {
  if (!manifest.augmentation_kinds.empty()) return manifest.augmentation_kinds;
  const auto all = all_augment_kinds();
  return {all.begin(), all.end()};
}

LossValue contrastive_loss(const RowMatrix& z, std::span<const int> labels, const ContrastiveConfig& c) {
  switch (c.loss) {
    case ContrastiveLoss::npairs: return multiclass_npairs_loss(z, labels);
    case ContrastiveLoss::ntxent: return supervised_ntxent_loss(z, labels, c.temperature);
    case ContrastiveLoss::triplet: return batch_triplet_loss(z, labels, c.margin);
  }
  throw ArgumentError("unknown contrastive loss");
}

constexpr int kResampleAttempts = 10;

}  // namespace

TrainResult train_standard(const SplitManifest& manifest, ImageSource& images, const EncoderSpec& encoder,
                           const TrainConfig& config) {
  check_mode(config, TrainMode::standard);
  return finetune(manifest, images, encoder, config, {});
}

TrainResult train_cost_sensitive(const SplitManifest& manifest, ImageSource& images, const EncoderSpec& encoder,
                                 const TrainConfig& config) {
  check_mode(config, TrainMode::cost_sensitive);
  return finetune(manifest, images, encoder, config, *config.class_weights);
}

Model contrastive_stage1(const SplitManifest& manifest, ImageSource& images, const EncoderSpec& encoder,
                         const TrainConfig& config, TrainingHistory& history) {
  check_mode(config, TrainMode::contrastive);
  const auto train = require_split(manifest, Split::train);
  require_split(manifest, Split::val);
  const auto kinds = view_kinds(manifest);
  Model stage1 = build_encoder(encoder);
  HeadSpec projection;
  projection.kind = HeadKind::projection;
  projection.projection_dims = config.contrastive.projection_dims;
  attach_head(stage1, projection, config.seed);
  {
    std::vector<const ImageRecord*> originals;
    for (const auto* r : train) {
      if (r->provenance == Provenance::original) originals.push_back(r);
    }
    if (originals.empty()) originals = train;
    nn::Adam adam({.learning_rate = config.learning_rate});
    nn::Network& net = stage1.network();
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
      const auto start = Clock::now();
      const auto order = epoch_order(originals.size(), config.seed, epoch, "stage1");
      Rng rng(mix_seed(mix_seed(config.seed, fnv1a("views")), static_cast<std::uint64_t>(epoch)));
      double loss_sum = 0;
      std::size_t steps = 0;
      for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
        const std::size_t end = std::min(order.size(), b + config.batch_size);
        std::vector<std::size_t> batch(order.begin() + b, order.begin() + end);
        auto labels_of = [&](const std::vector<std::size_t>& idx) {
          std::vector<int> labels;
          for (int view = 0; view < 2; ++view) {
            for (auto i : idx) labels.push_back(static_cast<int>(originals[i]->label));
          }
          return labels;
        };
        std::vector<int> labels = labels_of(batch);
        for (int attempt = 0; !has_positive_pairs(labels); ++attempt) {
          if (attempt == kResampleAttempts) {
            throw ConfigError(fmt::format("no batch with positive pairs and two classes after {} resamples",
                                          kResampleAttempts));
          }
          const std::size_t size = std::min<std::size_t>(config.batch_size, originals.size());
          std::vector<std::size_t> pool(originals.size());
          std::iota(pool.begin(), pool.end(), 0);
          rng.shuffle(pool.begin(), pool.end());
          batch.assign(pool.begin(), pool.begin() + size);
          labels = labels_of(batch);
        }
        std::vector<Image> pixels;
        for (int view = 0; view < 2; ++view) {
          for (auto i : batch) {
            const AugmentKind kind = kinds[rng.below(kinds.size())];
            pixels.push_back(augment_image(images.load(*originals[i]), kind, manifest.augment_params, rng.next()));
          }
        }
        std::vector<const Image*> ptrs;
        for (const auto& p : pixels) ptrs.push_back(&p);
        net.zero_grad();
        net.forward(stage1.make_batch(ptrs), true);
        const LossValue loss = contrastive_loss(to_matrix(net.value(net.output())), labels, config.contrastive);
        net.backward(to_tensor(loss.grad));
        adam.step(net);
        history.step_losses.push_back(loss.value);
        loss_sum += loss.value;
        ++steps;
      }
      const double nan = std::numeric_limits<double>::quiet_NaN();
      history.epochs.push_back({epoch, "stage1", loss_sum / static_cast<double>(std::max<std::size_t>(steps, 1)),
                                nan, nan, seconds_since(start)});
    }
  }

  return stage1;
}

TrainResult contrastive_stage2(const Model& stage1, const SplitManifest& manifest, ImageSource& images,
                               const TrainConfig& config, TrainingHistory history) {
  check_mode(config, TrainMode::contrastive);
  const auto train = require_split(manifest, Split::train);
  const auto val = require_split(manifest, Split::val);
  EncoderSpec copy_spec = stage1.encoder_spec();
  copy_spec.pretrained = false;
  copy_spec.freeze_depth = 0;
  TrainResult result{build_encoder(copy_spec), {}};
  copy_matching_weights(stage1.network(), result.model.network());
  apply_freeze_policy(result.model, static_cast<int>(result.model.encoder_layers().size()));
  attach_head(result.model, classifier_head(config), config.seed);
  std::vector<const ImageRecord*> stage2_train;
  for (const auto* r : train) {
    if (config.contrastive.stage2_augmented || r->provenance == Provenance::original) stage2_train.push_back(r);
  }
  result.history = std::move(history);
  fit_classifier(result.model, stage2_train, val, images, config, {}, "stage2", result.history);
  return result;
}

TrainResult train_contrastive(const SplitManifest& manifest, ImageSource& images, const EncoderSpec& encoder,
                              const TrainConfig& config) {
  TrainingHistory history;
  const Model stage1 = contrastive_stage1(manifest, images, encoder, config, history);
  return contrastive_stage2(stage1, manifest, images, config, std::move(history));
}

TrainResult train_model(const SplitManifest& manifest, ImageSource& images, const EncoderSpec& encoder,
                        const TrainConfig& config) {
  switch (config.mode) {
    case TrainMode::standard: return train_standard(manifest, images, encoder, config);
    case TrainMode::cost_sensitive: return train_cost_sensitive(manifest, images, encoder, config);
    case TrainMode::contrastive: return train_contrastive(manifest, images, encoder, config);
  }
  throw ArgumentError("unknown training mode");
}

RowMatrix predict_probabilities(Model& model, std::span<const Image> images, int batch_size) {
  if (!model.head_spec() || model.head_spec()->kind != HeadKind::classifier) {
    throw ArgumentError("prediction needs a model with a classifier head");
  }
  if (batch_size < 1) throw ArgumentError("batch size must be positive");
  const int s = model.input_size();
  RowMatrix out(static_cast<Eigen::Index>(images.size()), model.head_spec()->num_classes);
  for (std::size_t b = 0; b < images.size(); b += batch_size) {
    const std::size_t end = std::min(images.size(), b + batch_size);
    std::vector<const Image*> ptrs;
    for (std::size_t i = b; i < end; ++i) {
      const Image& img = images[i];
      if (img.width != s || img.height != s || img.channels != 3) {
        throw ArgumentError(fmt::format("image {} is {}x{}x{}, the checkpoint expects {}x{}x3", i, img.width,
                                        img.height, img.channels, s, s));
      }
      ptrs.push_back(&img);
    }
    const nn::Tensor& probs = model.predict(model.make_batch(ptrs));
    for (std::size_t i = 0; i < probs.size(); ++i) out.data()[b * out.cols() + i] = probs[i];
  }
  return out;
}

Evaluation evaluate_records(Model& model, std::span<const ImageRecord* const> records, ImageSource& images,
                            int batch_size) {
  if (records.empty()) throw ArgumentError("nothing to evaluate");
  const int logits = model.logits_node();
  if (logits < 0) throw ArgumentError("evaluation needs a model with a classifier head");
  nn::Network& net = model.network();
  Evaluation ev;
  double loss_sum = 0;
  for (std::size_t b = 0; b < records.size(); b += batch_size) {
    const std::size_t end = std::min(records.size(), b + batch_size);
    std::vector<Image> pixels;
    std::vector<int> labels;
    for (std::size_t i = b; i < end; ++i) {
      pixels.push_back(images.load(*records[i]));
      labels.push_back(static_cast<int>(records[i]->label));
    }
    std::vector<const Image*> ptrs;
    for (const auto& p : pixels) ptrs.push_back(&p);
    net.forward(model.make_batch(ptrs), false, logits);
    const RowMatrix scores = to_matrix(net.value(logits));
    loss_sum += softmax_cross_entropy(scores, labels).value * static_cast<double>(labels.size());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      Eigen::Index arg;
      scores.row(i).maxCoeff(&arg);
      ev.predicted.push_back(static_cast<int>(arg));
      ev.truth.push_back(labels[i]);
    }
  }
  ev.loss = loss_sum / static_cast<double>(records.size());
  ev.metrics = compute_metrics(confusion_matrix(ev.truth, ev.predicted, static_cast<int>(net.output_shape(logits)[0])));
  return ev;
}

std::string save_checkpoint(const Model& model, const CheckpointInfo& info, const std::filesystem::path& path) {
  if (!model.head_spec()) throw ArgumentError("a checkpoint needs a model with a head");
  const EncoderSpec& e = model.encoder_spec();
  const HeadSpec& h = *model.head_spec();
  nlohmann::json manifest = {
      {"type", "cytoxai-checkpoint"},
      {"tool_version", kToolVersion},
      {"encoder",
       {{"architecture", architecture_name(e.architecture)},
        {"freeze_depth", model.freeze_depth()},
        {"pretrained", e.pretrained},
        {"input_size", e.input_size},
        {"seed", e.seed}}},
      {"head",
       {{"kind", head_kind_name(h.kind)},
        {"dropout_rate", h.dropout_rate},
        {"num_classes", h.num_classes},
        {"projection_dims", h.projection_dims}}},
      {"mode", info.mode},
      {"dataset_hash", info.dataset_hash},
      {"config_hash", info.config_hash},
      {"seed", info.seed},
      {"best_epoch", info.best_epoch},
      {"best_val_accuracy", info.best_val_accuracy}};
  write_weight_bundle(path, manifest, model.network());
  return sha256_hex(read_file(path));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const WeightBundle bundle = read_weight_bundle(path);
  const auto& m = bundle.manifest;
  if (m.value("type", "") != "cytoxai-checkpoint") throw IoError(path.string() + " is not a checkpoint");
  try {
    const auto& e = m.at("encoder");
    EncoderSpec spec;
    spec.architecture = parse_architecture(e.at("architecture").get<std::string>());
    spec.freeze_depth = e.at("freeze_depth").get<int>();
    spec.pretrained = false;
    spec.input_size = e.at("input_size").get<int>();
    spec.seed = e.at("seed").get<std::uint64_t>();
    const auto& hj = m.at("head");
    HeadSpec head;
    head.kind = parse_head_kind(hj.at("kind").get<std::string>());
    head.dropout_rate = hj.at("dropout_rate").get<double>();
    head.num_classes = hj.at("num_classes").get<int>();
    head.projection_dims = hj.at("projection_dims").get<std::vector<int>>();
    LoadedCheckpoint out{build_encoder(spec), {}, sha256_hex(bytes)};
    attach_head(out.model, head, 0);
    assign_weights(out.model.network(), bundle, true);
    out.info.mode = m.value("mode", "");
    out.info.dataset_hash = m.value("dataset_hash", "");
    out.info.config_hash = m.value("config_hash", "");
    out.info.seed = m.value("seed", std::uint64_t{0});
    out.info.best_epoch = m.value("best_epoch", 0);
    out.info.best_val_accuracy = m.value("best_val_accuracy", 0.0);
    return out;
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(fmt::format("{}: malformed checkpoint header ({})", path.string(), ex.what()));
  }
}

}  // namespace cytoxai
