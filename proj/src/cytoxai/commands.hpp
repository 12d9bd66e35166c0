#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cytoxai/config.hpp"
#include "cytoxai/dataset.hpp"

namespace cytoxai {

struct CommandContext {
  RunConfig config;
  // Recorded verbatim in the run log.
  std::string command_line;
  // Empty: <output_dir>/run_log.jsonl.
  std::filesystem::path run_log;

  std::filesystem::path run_log_path() const;
  std::filesystem::path default_manifest_path() const;
};

struct CommandResult {
  // Summary for stdout.
  std::string text;
  std::vector<std::filesystem::path> artifacts;
  std::string dataset_hash;
};

// Every command writes its artifacts atomically and, on success, appends a
// RunRecord to the run log.

// Ingest dataset.root, split, augment and write the manifest.
CommandResult run_prepare(CommandContext& ctx, const std::filesystem::path& manifest_out = {});

CommandResult run_analyze_sizes(CommandContext& ctx, const std::filesystem::path& out = {});

struct WeightsOptions {
  // Explicit per-class counts in class order; otherwise the manifest's
  // weights split is counted.
  std::vector<std::int64_t> counts;
  std::filesystem::path manifest;
  // Optional JSON artifact.
  std::filesystem::path out;
};
CommandResult run_weights(CommandContext& ctx, const WeightsOptions& options);

struct TrainOptions {
  std::filesystem::path manifest;
  // Empty: <output_dir>/train/<arch>-<mode>-<config hash prefix>.
  std::filesystem::path run_dir;
};
CommandResult run_train(CommandContext& ctx, const TrainOptions& options);

struct EvaluateOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;
  Split split = Split::test;
  // Empty: next to the checkpoint, eval-<split>/.
  std::filesystem::path out_dir;
};
CommandResult run_evaluate(CommandContext& ctx, const EvaluateOptions& options);

struct ExplainOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path image;
  // Unset fields fall back to the config's explain section.
  std::optional<std::string> method;
  std::optional<std::string> layer;
  std::optional<int> class_index;
  // Empty: <output_dir>/explain/<image stem>-<method>.
  std::filesystem::path out_dir;
};
CommandResult run_explain(CommandContext& ctx, const ExplainOptions& options);

struct ReportOptions {
  std::vector<std::filesystem::path> metrics;
  // Optional display names, one per metrics file.
  std::vector<std::string> names;
  // Writes <prefix>.txt and <prefix>.csv. Empty: <output_dir>/report.
  std::filesystem::path out_prefix;
};
// Refuses metrics files whose dataset hashes differ.
CommandResult run_report(CommandContext& ctx, const ReportOptions& options);

std::vector<std::string> class_names();

}  // namespace cytoxai
