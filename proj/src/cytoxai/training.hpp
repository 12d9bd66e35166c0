#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cytoxai/dataset.hpp"
#include "cytoxai/evaluation.hpp"
#include "cytoxai/losses.hpp"
#include "cytoxai/model_zoo.hpp"

namespace cytoxai {

enum class TrainMode { standard, cost_sensitive, contrastive };
std::string_view train_mode_name(TrainMode mode);
// Accepts "cost-sensitive" and "cost_sensitive".
TrainMode parse_train_mode(std::string_view text);

struct ContrastiveConfig {
  ContrastiveLoss loss = ContrastiveLoss::npairs;
  double temperature = 0.1;
  double margin = 1.0;
  std::vector<int> projection_dims{256, 128};
  // Stage 2 trains the classifier on the augmented train split when true,
  // on the originals only otherwise.
  bool stage2_augmented = true;

  friend bool operator==(const ContrastiveConfig&, const ContrastiveConfig&) = default;
};

struct TrainConfig {
  TrainMode mode = TrainMode::standard;
  int epochs = 50;
  double learning_rate = 1e-3;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double dropout_rate = 0.5;
  // Indexed by class; required for cost-sensitive training.
  std::optional<std::vector<double>> class_weights;
  ContrastiveConfig contrastive;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochRecord {
  int epoch = 0;
  // "finetune", "stage1" or "stage2".
  std::string stage;
  double train_loss = 0;
  // NaN where not measured (contrastive stage 1).
  double val_loss = 0;
  double val_accuracy = 0;
  double seconds = 0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  // Mean loss of every optimizer step in order, for all stages.
  std::vector<double> step_losses;
  // 0 when no epoch improved on the initial weights (or epochs = 0).
  int best_epoch = 0;
  double best_val_accuracy = 0;
};

// Epoch table as CSV; wall-clock is the only non-deterministic column.
std::string history_to_csv(const TrainingHistory& history);

struct TrainResult {
  Model model;
  TrainingHistory history;
};

// Train on the manifest's train split, select the epoch with the best
// validation accuracy. Deterministic in (encoder seed, config seed).
TrainResult train_model(const SplitManifest& manifest, ImageSource& images, const EncoderSpec& encoder,
                        const TrainConfig& config);

TrainResult train_standard(const SplitManifest& manifest, ImageSource& images, const EncoderSpec& encoder,
                           const TrainConfig& config);
TrainResult train_cost_sensitive(const SplitManifest& manifest, ImageSource& images, const EncoderSpec& encoder,
                                 const TrainConfig& config);
TrainResult train_contrastive(const SplitManifest& manifest, ImageSource& images, const EncoderSpec& encoder,
                              const TrainConfig& config);

// The two halves of train_contrastive. Stage 1 returns the encoder with its
// projection head; stage 2 copies that encoder, freezes every layer of the
// copy and trains a classifier head on top.
Model contrastive_stage1(const SplitManifest& manifest, ImageSource& images, const EncoderSpec& encoder,
                         const TrainConfig& config, TrainingHistory& history);
TrainResult contrastive_stage2(const Model& stage1, const SplitManifest& manifest, ImageSource& images,
                               const TrainConfig& config, TrainingHistory history);

// Rows are class distributions. Images must already be input_size square.
RowMatrix predict_probabilities(Model& model, std::span<const Image> images, int batch_size = 32);

struct Evaluation {
  MetricsReport metrics;
  // Unweighted cross-entropy.
  double loss = 0;
  std::vector<int> truth;
  std::vector<int> predicted;
};

// Evaluation-mode pass over records; used both for model selection and by the
// evaluate command.
Evaluation evaluate_records(Model& model, std::span<const ImageRecord* const> records, ImageSource& images,
                            int batch_size = 32);

struct CheckpointInfo {
  std::string mode;
  std::string dataset_hash;
  std::string config_hash;
  std::uint64_t seed = 0;
  int best_epoch = 0;
  double best_val_accuracy = 0;
};

// Writes weights plus the encoder/head description (atomically). Returns the
// checkpoint id, a SHA-256 over the written file.
std::string save_checkpoint(const Model& model, const CheckpointInfo& info, const std::filesystem::path& path);

struct LoadedCheckpoint {
  Model model;
  CheckpointInfo info;
  std::string id;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cytoxai
