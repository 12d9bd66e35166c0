#include "cytoxai/commands.hpp"

#include <fmt/format.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>

#include "cytoxai/class_weights.hpp"
#include "cytoxai/diagnostics.hpp"
#include "cytoxai/error.hpp"
#include "cytoxai/evaluation.hpp"
#include "cytoxai/explain.hpp"
#include "cytoxai/image.hpp"
#include "cytoxai/persistence.hpp"
#include "cytoxai/training.hpp"

namespace cytoxai {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string short_hash(const std::string& hash) { return hash.substr(0, 12); }

// CSV artifacts carry their provenance in a leading comment line.
std::string csv_preamble(const RunConfig& config) {
  return fmt::format("# config_hash={} seed={}\n", config_hash(config), config.seed);
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

json provenance(const RunConfig& config) {
  return {{"config_hash", config_hash(config)}, {"seed", config.seed}, {"tool_version", kToolVersion}};
}

template <class Fn>
CommandResult recorded(CommandContext& ctx, Fn body) {
  const std::string started = utc_timestamp();
  ctx.config.validate();
  CommandResult result = body();
  RunRecord record;
  record.command_line = ctx.command_line;
  record.config_hash = config_hash(ctx.config);
  record.dataset_hash = result.dataset_hash;
  record.started_at = started;
  record.finished_at = utc_timestamp();
  for (const auto& a : result.artifacts) record.artifacts.push_back(a.string());
  const fs::path log = ctx.run_log_path();
  if (log.has_parent_path()) fs::create_directories(log.parent_path());
  append_run_record(log, record);
  return result;
}

SplitManifest load_manifest_for(const CommandContext& ctx, const fs::path& given) {
  const fs::path path = given.empty() ? ctx.default_manifest_path() : given;
  if (!fs::exists(path)) {
    throw IoError(fmt::format("manifest {} not found (run `prepare` first or pass --manifest)", path.string()));
  }
  return read_manifest(path);
}

std::string model_label(const Model& model, const std::string& mode) {
  return fmt::format("{} ({})", architecture_name(model.encoder_spec().architecture), mode);
}

std::vector<double> resolve_class_weights(const RunConfig& config, const SplitManifest& manifest) {
  if (config.train.class_weights) return *config.train.class_weights;
  const auto weights = compute_class_weights(count_classes(manifest, config.weights_split));
  const auto names = class_names();
  return weights.dense(names);
}

Image load_input_image(const fs::path& path, int size) {
  const Image raw = load_image(path);
  return resize_bilinear(raw, size, size);
}

}  // namespace

std::vector<std::string> class_names() {
  std::vector<std::string> out;
  for (CellClass c : all_classes()) out.emplace_back(class_name(c));
  return out;
}

fs::path CommandContext::run_log_path() const {
  return run_log.empty() ? config.output_dir / "run_log.jsonl" : run_log;
}

fs::path CommandContext::default_manifest_path() const { return config.output_dir / "manifest.jsonl"; }

CommandResult run_prepare(CommandContext& ctx, const fs::path& manifest_out) {
  return recorded(ctx, [&] {
    const RunConfig& cfg = ctx.config;
    if (cfg.dataset_root.empty()) throw ConfigError("dataset.root is not set");
    IngestResult ingest = ingest_dataset(cfg.dataset_root);
    for (const auto& r : ingest.rejects) warn(fmt::format("skipped {}: {}", r.path.string(), r.reason));
    if (ingest.records.empty()) throw ConfigError(fmt::format("no images found under {}", cfg.dataset_root.string()));
    const std::size_t originals = ingest.records.size();

    SplitManifest split = stratified_split(std::move(ingest.records), cfg.ratios, cfg.seed);
    split.augment_params = cfg.augment_params;
    SplitManifest manifest =
        augment_training_set(split, cfg.augment_factor, cfg.augment_kinds, cfg.augment_replacement, cfg.seed);
    manifest.augment_params = cfg.augment_params;
    manifest.image_size = cfg.encoder.input_size;
    manifest.config_hash = config_hash(cfg);

    const fs::path path = manifest_out.empty() ? ctx.default_manifest_path() : manifest_out;
    write_manifest(manifest, path);

    CommandResult result;
    result.dataset_hash = manifest_hash(manifest);
    result.artifacts.push_back(path);
    const auto counts = manifest.per_class_counts();
    const auto names = class_names();
    std::string text = fmt::format("{:<26}{:>8}{:>8}{:>8}\n", "class", "train", "val", "test");
    for (int c = 0; c < kNumClasses; ++c) {
      text += fmt::format("{:<26}{:>8}{:>8}{:>8}\n", names[c], counts[c][0], counts[c][1], counts[c][2]);
    }
    const auto totals = manifest.split_counts();
    text += fmt::format("{:<26}{:>8}{:>8}{:>8}\n", "total", totals[0], totals[1], totals[2]);
    text += fmt::format("originals: {}  augmented: {}  rejected: {}\n", originals, manifest.records.size() - originals,
                        ingest.rejects.size());
    text += fmt::format("manifest: {}\ndataset hash: {}\n", path.string(), result.dataset_hash);
    result.text = std::move(text);
    return result;
  });
}

CommandResult run_analyze_sizes(CommandContext& ctx, const fs::path& out) {
  return recorded(ctx, [&] {
    const RunConfig& cfg = ctx.config;
    if (cfg.dataset_root.empty()) throw ConfigError("dataset.root is not set");
    const IngestResult ingest = ingest_dataset(cfg.dataset_root);
    if (ingest.records.empty()) throw ConfigError(fmt::format("no images found under {}", cfg.dataset_root.string()));
    const SizeStats s = compute_size_stats(ingest.records, cfg.size_bin_width);

    auto histogram = [](const Histogram& h) {
      return json{{"origin", h.origin}, {"bin_width", h.bin_width}, {"counts", h.counts}};
    };
    json j = {{"type", "cytoxai-sizes"},
              {"images", ingest.records.size()},
              {"bin_width", s.bin_width},
              {"width_histogram", histogram(s.width_histogram)},
              {"height_histogram", histogram(s.height_histogram)},
              {"joint", s.joint},
              {"modal_bin", {s.modal_bin.first, s.modal_bin.second}},
              {"modal_count", s.modal_count},
              {"modal_bin_center", {s.modal_bin_center.first, s.modal_bin_center.second}},
              {"modal_size", {s.modal_size.first, s.modal_size.second}},
              {"min_size", {s.min_size.first, s.min_size.second}},
              {"max_size", {s.max_size.first, s.max_size.second}}};
    j.update(provenance(cfg));
    const fs::path path = out.empty() ? cfg.output_dir / "sizes.json" : out;
    write_json(path, j);

    CommandResult result;
    result.artifacts.push_back(path);
    const double w0 = s.width_histogram.edge(s.modal_bin.first);
    const double h0 = s.height_histogram.edge(s.modal_bin.second);
    result.text = fmt::format(
        "images: {}\nmodal bin: width [{:g}, {:g}) x height [{:g}, {:g}) with {} images\n"
        "mean size in modal bin: {:.1f} x {:.1f}\nsmallest: {} x {}  largest: {} x {}\nsizes: {}\n",
        ingest.records.size(), w0, w0 + s.bin_width, h0, h0 + s.bin_width, s.modal_count, s.modal_size.first,
        s.modal_size.second, s.min_size.first, s.min_size.second, s.max_size.first, s.max_size.second,
        path.string());
    return result;
  });
}

CommandResult run_weights(CommandContext& ctx, const WeightsOptions& options) {
  return recorded(ctx, [&] {
    const auto names = class_names();
    ClassCounts counts;
    CommandResult result;
    if (!options.counts.empty()) {
      if (options.counts.size() != names.size()) {
        throw ArgumentError(fmt::format("expected {} counts, got {}", names.size(), options.counts.size()));
      }
      for (std::size_t c = 0; c < names.size(); ++c) counts.counts.emplace_back(names[c], options.counts[c]);
    } else {
      const SplitManifest manifest = load_manifest_for(ctx, options.manifest);
      counts = count_classes(manifest, ctx.config.weights_split);
      result.dataset_hash = manifest_hash(manifest);
    }
    const ClassWeights weights = compute_class_weights(counts);

    std::string text = fmt::format("{:<26}{:>8}  {}\n", "class", "count", "weight");
    json rows = json::array();
    for (std::size_t c = 0; c < counts.counts.size(); ++c) {
      const auto& [name, n] = counts.counts[c];
      const double w = weights.weights[c].second;
      text += fmt::format("{:<26}{:>8}  {}\n", name, n, w);
      rows.push_back({{"class", name}, {"count", n}, {"weight", w}});
    }
    text += fmt::format("{:<26}{:>8}\n", "total", counts.total());
    if (!options.out.empty()) {
      json j = {{"type", "cytoxai-class-weights"}, {"weights", rows}};
      if (!result.dataset_hash.empty()) j["dataset_hash"] = result.dataset_hash;
      j.update(provenance(ctx.config));
      write_json(options.out, j);
      result.artifacts.push_back(options.out);
    }
    result.text = std::move(text);
    return result;
  });
}

CommandResult run_train(CommandContext& ctx, const TrainOptions& options) {
  return recorded(ctx, [&] {
    const RunConfig& cfg = ctx.config;
    SplitManifest manifest = load_manifest_for(ctx, options.manifest);
    // Originals are decoded from disk, so any input size works.
    manifest.image_size = cfg.encoder.input_size;
    ImageStore images(manifest);

    TrainConfig train = cfg.train;
    if (train.mode == TrainMode::cost_sensitive) train.class_weights = resolve_class_weights(cfg, manifest);
    TrainResult trained = train_model(manifest, images, cfg.encoder, train);

    const std::string hash = config_hash(cfg);
    const fs::path dir = options.run_dir.empty()
                             ? cfg.output_dir / "train" /
                                   fmt::format("{}-{}-{}", architecture_name(cfg.encoder.architecture),
                                               train_mode_name(train.mode), short_hash(hash))
                             : options.run_dir;
    CheckpointInfo info;
    info.mode = std::string(train_mode_name(train.mode));
    info.dataset_hash = manifest_hash(manifest);
    info.config_hash = hash;
    info.seed = cfg.seed;
    info.best_epoch = trained.history.best_epoch;
    info.best_val_accuracy = trained.history.best_val_accuracy;
    const fs::path checkpoint = dir / "checkpoint.cxwb";
    const std::string id = save_checkpoint(trained.model, info, checkpoint);
    const fs::path history = dir / "history.csv";
    write_file_atomic(history, csv_preamble(cfg) + history_to_csv(trained.history));
    const fs::path config_copy = dir / "config.cfg";
    write_file_atomic(config_copy, serialize_config(cfg));

    CommandResult result;
    result.dataset_hash = info.dataset_hash;
    result.artifacts = {checkpoint, history, config_copy};
    std::string text;
    if (train.class_weights) {
      text += "class weights:";
      for (double w : *train.class_weights) text += fmt::format(" {:.6f}", w);
      text += "\n";
    }
    text += fmt::format("mode: {}  loss: {}  epochs: {}\n", info.mode, cfg.loss_name(), train.epochs);
    text += fmt::format("best epoch: {}  val accuracy: {:.4f}\n", info.best_epoch, info.best_val_accuracy);
    text += fmt::format("checkpoint id: {}\ncheckpoint: {}\n", id, checkpoint.string());
    result.text = std::move(text);
    return result;
  });
}

CommandResult run_evaluate(CommandContext& ctx, const EvaluateOptions& options) {
  return recorded(ctx, [&] {
    if (options.checkpoint.empty()) throw ArgumentError("--checkpoint is required");
    if (options.split == Split::unassigned) throw ArgumentError("split must be train, val or test");
    LoadedCheckpoint loaded = load_checkpoint(options.checkpoint);
    SplitManifest manifest = load_manifest_for(ctx, options.manifest);
    manifest.image_size = loaded.model.input_size();
    const std::string dataset_hash = manifest_hash(manifest);
    if (!loaded.info.dataset_hash.empty() && loaded.info.dataset_hash != dataset_hash) {
      warn(fmt::format("checkpoint was trained on dataset {} but is evaluated on {}", short_hash(loaded.info.dataset_hash),
                       short_hash(dataset_hash)));
    }
    const auto records = manifest.select(options.split);
    if (records.empty()) throw ConfigError(fmt::format("the {} split is empty", split_name(options.split)));
    ImageStore images(manifest);
    const Evaluation eval = evaluate_records(loaded.model, records, images, ctx.config.train.batch_size);

    const auto names = class_names();
    const fs::path dir =
        options.out_dir.empty() ? options.checkpoint.parent_path() / fmt::format("eval-{}", split_name(options.split))
                                : options.out_dir;
    const std::string model = model_label(loaded.model, loaded.info.mode);
    json j = {{"type", "cytoxai-metrics"},
              {"model", model},
              {"split", split_name(options.split)},
              {"checkpoint_id", loaded.id},
              {"checkpoint_config_hash", loaded.info.config_hash},
              {"dataset_hash", dataset_hash},
              {"loss", eval.loss},
              {"metrics", metrics_to_json(eval.metrics, names)}};
    j.update(provenance(ctx.config));
    const fs::path metrics_path = dir / "metrics.json";
    write_json(metrics_path, j);
    const NamedReport named{model, eval.metrics};
    const fs::path text_path = dir / "report.txt";
    const fs::path csv_path = dir / "report.csv";
    const std::string table = render_report_text({&named, 1}, names);
    write_file_atomic(text_path, table + fmt::format("\nconfig hash: {}\ndataset hash: {}\n",
                                                     config_hash(ctx.config), dataset_hash));
    write_file_atomic(csv_path, csv_preamble(ctx.config) + render_report_csv({&named, 1}, names));

    CommandResult result;
    result.dataset_hash = dataset_hash;
    result.artifacts = {metrics_path, text_path, csv_path};
    result.text = table + fmt::format("loss: {:.4f}\nmetrics: {}\n", eval.loss, metrics_path.string());
    return result;
  });
}

CommandResult run_explain(CommandContext& ctx, const ExplainOptions& options) {
  return recorded(ctx, [&] {
    const RunConfig& cfg = ctx.config;
    if (options.checkpoint.empty()) throw ArgumentError("--checkpoint is required");
    if (options.image.empty()) throw ArgumentError("--image is required");
    const std::string method = options.method.value_or(cfg.explain.method);
    const std::string layer = options.layer.value_or(cfg.explain.layer);
    int class_index = options.class_index.value_or(cfg.explain.class_index);
    if (class_index >= kNumClasses || class_index < -1) {
      throw ArgumentError(fmt::format("class index {} is outside [0, {})", class_index, kNumClasses));
    }
    const bool is_lime = method == "lime";
    const CamMethod cam = is_lime ? CamMethod::gradcam : parse_cam_method(method);

    LoadedCheckpoint loaded = load_checkpoint(options.checkpoint);
    Model& model = loaded.model;
    if (model.logits_node() < 0) throw ArgumentError("the checkpoint has no classifier head");
    const Image image = load_input_image(options.image, model.input_size());
    const int batch = cfg.train.batch_size;

    const fs::path dir = options.out_dir.empty()
                             ? cfg.output_dir / "explain" / fmt::format("{}-{}", options.image.stem().string(), method)
                             : options.out_dir;
    const auto names = class_names();
    json meta = {{"type", "cytoxai-explanation"},
                 {"method", method},
                 {"image", options.image.string()},
                 {"checkpoint_id", loaded.id},
                 {"dataset_hash", loaded.info.dataset_hash}};
    CommandResult result;
    result.dataset_hash = loaded.info.dataset_hash;
    const fs::path image_path = dir / "heatmap.png";
    const fs::path matrix_path = dir / "heatmap.csv";
    std::string text;

    if (!is_lime) {
      CamOptions cam_options;
      cam_options.class_index = class_index;
      cam_options.layer = layer;
      const Heatmap heatmap = explain_cam(model, image, cam, cam_options);
      save_image(render_cam_overlay(image, heatmap), image_path);
      write_file_atomic(matrix_path, csv_preamble(cfg) + heatmap_to_csv(heatmap));
      class_index = heatmap.class_index;
      meta["layer"] = layer.empty() ? model.network().layer(model.last_conv_node()).name() : layer;
      result.artifacts = {image_path, matrix_path};
    } else {
      auto predictor = [&](std::span<const Image> images) { return predict_probabilities(model, images, batch); };
      if (class_index < 0) {
        const RowMatrix p = predictor({&image, 1});
        Eigen::Index best = 0;
        p.row(0).maxCoeff(&best);
        class_index = static_cast<int>(best);
      }
      const SuperpixelMap segments = segment_superpixels(image, cfg.explain.lime_segments);
      LimeConfig lime;
      lime.n_samples = cfg.explain.lime_samples;
      lime.kernel_width = cfg.explain.lime_kernel_width;
      lime.ridge_lambda = cfg.explain.lime_lambda;
      lime.top_k = cfg.explain.top_k;
      lime.seed = cfg.seed;
      lime.batch_size = batch;
      const LimeExplanation ex = lime_explain(predictor, image, segments, class_index, lime);

      save_image(render_lime_overlay(image, ex, segments, OverlayMode::lime_pros_cons), image_path);
      const fs::path positive_path = dir / "lime_positive.png";
      save_image(render_lime_overlay(image, ex, segments, OverlayMode::lime_positive), positive_path);

      // Raw matrix: each pixel holds its segment's coefficient.
      Heatmap coef_map;
      coef_map.width = segments.width;
      coef_map.height = segments.height;
      coef_map.values.resize(segments.labels.size());
      for (std::size_t i = 0; i < segments.labels.size(); ++i) coef_map.values[i] = ex.coefficients[segments.labels[i]];
      write_file_atomic(matrix_path, csv_preamble(cfg) + heatmap_to_csv(coef_map));

      std::vector<int> pixels(segments.count, 0);
      for (int label : segments.labels) ++pixels[label];
      std::vector<int> rank(segments.count, 0);
      for (std::size_t r = 0; r < ex.top_segments.size(); ++r) rank[ex.top_segments[r]] = static_cast<int>(r) + 1;
      std::string report = csv_preamble(cfg) + "segment,coefficient,pixels,top_rank\n";
      for (int s = 0; s < segments.count; ++s) {
        report += fmt::format("{},{:.9g},{},{}\n", s, ex.coefficients[s], pixels[s], rank[s]);
      }
      const fs::path coef_path = dir / "lime_coefficients.csv";
      write_file_atomic(coef_path, report);

      meta["lime"] = {{"segments", segments.count},       {"samples", lime.n_samples},
                      {"kernel_width", lime.kernel_width}, {"ridge_lambda", lime.ridge_lambda},
                      {"intercept", ex.intercept},         {"r2", ex.r2},
                      {"top_segments", ex.top_segments}};
      result.artifacts = {image_path, positive_path, matrix_path, coef_path};
      text += fmt::format("segments: {}  r2: {:.4f}  top segments:", segments.count, ex.r2);
      for (int s : ex.top_segments) text += fmt::format(" {}", s);
      text += "\n";
    }
    meta["class_index"] = class_index;
    meta["class_name"] = names[class_index];
    json files = json::array();
    for (const auto& a : result.artifacts) files.push_back(a.filename().string());
    meta["artifacts"] = files;
    meta.update(provenance(cfg));
    const fs::path meta_path = dir / "explanation.json";
    write_json(meta_path, meta);
    result.artifacts.push_back(meta_path);

    text = fmt::format("{} for class {} ({})\n", method, class_index, names[class_index]) + text;
    for (const auto& a : result.artifacts) text += fmt::format("wrote {}\n", a.string());
    result.text = std::move(text);
    return result;
  });
}

CommandResult run_report(CommandContext& ctx, const ReportOptions& options) {
  return recorded(ctx, [&] {
    if (options.metrics.empty()) throw ArgumentError("report needs at least one metrics file");
    if (!options.names.empty() && options.names.size() != options.metrics.size()) {
      throw ArgumentError(
          fmt::format("{} names given for {} metrics files", options.names.size(), options.metrics.size()));
    }
    std::vector<json> docs;
    for (const auto& path : options.metrics) {
      try {
        docs.push_back(json::parse(read_file(path)));
      } catch (const json::exception& e) {
        throw IoError(fmt::format("{}: {}", path.string(), e.what()));
      }
      if (docs.back().value("type", "") != "cytoxai-metrics") throw IoError(path.string() + " is not a metrics file");
    }
    const std::string dataset_hash = docs[0].value("dataset_hash", "");
    for (std::size_t i = 1; i < docs.size(); ++i) {
      const std::string hash = docs[i].value("dataset_hash", "");
      if (hash != dataset_hash) {
        throw ConfigError(fmt::format("dataset hash mismatch: {} has {}, {} has {}", options.metrics[0].string(),
                                      short_hash(dataset_hash), options.metrics[i].string(), short_hash(hash)));
      }
    }
    std::vector<NamedReport> reports;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      std::string name = options.names.empty()
                             ? docs[i].value("model", options.metrics[i].parent_path().filename().string())
                             : options.names[i];
      reports.push_back({std::move(name), metrics_from_json(docs[i].at("metrics"))});
    }
    const auto names = class_names();
    const fs::path prefix = options.out_prefix.empty() ? ctx.config.output_dir / "report" : options.out_prefix;
    const fs::path text_path = fs::path(prefix.string() + ".txt");
    const fs::path csv_path = fs::path(prefix.string() + ".csv");
    const std::string table = render_report_text(reports, names);
    write_file_atomic(text_path, table + fmt::format("\nconfig hash: {}\ndataset hash: {}\n", config_hash(ctx.config),
                                                     dataset_hash));
    write_file_atomic(csv_path, csv_preamble(ctx.config) + render_report_csv(reports, names));

    CommandResult result;
    result.dataset_hash = dataset_hash;
    result.artifacts = {text_path, csv_path};
    result.text = table;
    return result;
  });
}

}  // namespace cytoxai
