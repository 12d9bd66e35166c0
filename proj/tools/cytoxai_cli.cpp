// Command-line front end. Talks to the library only through cytoxai.h.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "cytoxai/cytoxai.h"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string quote(const std::string& arg) {
  if (!arg.empty() && arg.find_first_of(" \t\"'\\$") == std::string::npos) return arg;
  std::string out = "'";
  for (char c : arg) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

std::string join_argv(int argc, char** argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) {
    if (i) out += ' ';
    out += quote(argv[i]);
  }
  return out;
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

struct Failure {
  cx_status status;
};

void check(cx_status status) {
  if (status != CX_OK) throw Failure{status};
}

class Session {
 public:
  explicit Session(const std::string& config) { check(cx_session_open(opt(config), &s_)); }
  ~Session() { cx_session_close(s_); }
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;
  cx_session* get() const { return s_; }
  void set(const std::string& key, const std::string& value) { check(cx_session_set(s_, key.c_str(), value.c_str())); }

 private:
  cx_session* s_ = nullptr;
};

void emit(cx_result* result) {
  std::fputs(cx_result_text(result), stdout);
  cx_result_free(result);
}

void print_warning(const char* message, void*) { std::fprintf(stderr, "warning: %s\n", message); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pap smear cell classification, training and explanation toolkit.", "cytoxai"};
  app.set_version_flag("--version", std::string(cx_version()));
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, output_dir, run_log;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool show_config = false;
  app.add_option("--config", config_path, "Config file (flat `section.key = value` lines)")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Override one config key, KEY=VALUE (repeatable)")->allow_extra_args(false);
  app.add_option("--output-dir", output_dir, "Output directory (output.dir)");
  app.add_option("--seed", seed, "Run seed (run.seed)");
  app.add_option("--run-log", run_log, "Run log path (default <output-dir>/run_log.jsonl)");
  app.add_flag("--show-config", show_config, "Print the effective config before running");

  std::string root, manifest, out;

  auto* prepare = app.add_subcommand("prepare", "Ingest, split and augment a dataset into a manifest");
  prepare->add_option("--root", root, "Dataset root with one folder per class");
  prepare->add_option("--manifest", manifest, "Manifest output path");

  auto* sizes = app.add_subcommand("analyze-sizes", "Image size histogram and modal size");
  sizes->add_option("--root", root, "Dataset root with one folder per class");
  sizes->add_option("--out", out, "JSON output path");

  std::vector<std::int64_t> counts;
  auto* weights = app.add_subcommand("weights", "Balanced class weights N / (K * n_c)");
  weights->add_option("--counts", counts, "Per-class counts in class order")->delimiter(',')->expected(5);
  weights->add_option("--manifest", manifest, "Manifest whose weights split is counted");
  weights->add_option("--out", out, "JSON output path");

  std::string mode, arch, run_dir;
  std::optional<int> epochs;
  auto* train = app.add_subcommand("train", "Train a classifier and write a checkpoint");
  train->add_option("--mode", mode, "standard | cost-sensitive | contrastive")
      ->check(CLI::IsMember({"standard", "cost-sensitive", "cost_sensitive", "contrastive"}));
  train->add_option("--arch", arch, "Encoder architecture")
      ->check(CLI::IsMember({"resnet50", "mobilenetv2", "densenet169", "vgg16", "vgg19", "tiny"}));
  train->add_option("--epochs", epochs, "Epochs (train.epochs)");
  train->add_option("--manifest", manifest, "Manifest path");
  train->add_option("--run-dir", run_dir, "Directory for the checkpoint and history");

  std::string checkpoint, split = "test";
  auto* evaluate = app.add_subcommand("evaluate", "Metrics of a checkpoint on one split");
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  evaluate->add_option("--manifest", manifest, "Manifest path");
  evaluate->add_option("--split", split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_option("--out-dir", out, "Output directory");

  std::string method, image, layer;
  int class_index = CX_CLASS_DEFAULT;
  auto* explain = app.add_subcommand("explain", "Saliency heatmap or LIME explanation of one image");
  explain->add_option("--method", method, "gradcam | gradcampp | scorecam | layercam | lime")
      ->check(CLI::IsMember({"gradcam", "gradcampp", "scorecam", "layercam", "lime"}));
  explain->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  explain->add_option("--image", image, "Input image")->required()->check(CLI::ExistingFile);
  explain->add_option("--layer", layer, "Target layer name (default: last convolution)");
  explain->add_option("--class", class_index, "Class index (-1: predicted class)")->check(CLI::Range(-1, 4));
  explain->add_option("--out-dir", out, "Output directory");

  std::vector<std::string> metrics, names;
  auto* report = app.add_subcommand("report", "Comparison table over metrics files");
  report->add_option("metrics", metrics, "metrics.json files")->required();
  report->add_option("--names", names, "Display names, one per metrics file")->delimiter(',');
  report->add_option("--out", out, "Output prefix (writes .txt and .csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "cytoxai: %s\n\n%s", e.what(), app.help().c_str());
    return kExitUsage;
  }

  cx_set_warning_handler(print_warning, nullptr);
  try {
    Session session(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::fprintf(stderr, "cytoxai: --set expects KEY=VALUE, got '%s'\n", kv.c_str());
        return kExitUsage;
      }
      session.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!output_dir.empty()) session.set("output.dir", output_dir);
    if (seed) session.set("run.seed", std::to_string(*seed));
    if (!root.empty()) session.set("dataset.root", root);
    if (!mode.empty()) session.set("train.mode", mode);
    if (!arch.empty()) session.set("model.architecture", arch);
    if (epochs) session.set("train.epochs", std::to_string(*epochs));
    check(cx_session_set_command_line(session.get(), join_argv(argc, argv).c_str()));
    check(cx_session_set_run_log(session.get(), opt(run_log)));
    if (show_config) {
      cx_result* text = nullptr;
      check(cx_session_describe(session.get(), &text));
      emit(text);
    }

    cx_result* result = nullptr;
    cx_session* s = session.get();
    if (*prepare) {
      check(cx_prepare(s, opt(manifest), &result));
    } else if (*sizes) {
      check(cx_analyze_sizes(s, opt(out), &result));
    } else if (*weights) {
      check(cx_weights(s, counts.data(), counts.size(), opt(manifest), opt(out), &result));
    } else if (*train) {
      check(cx_train(s, opt(manifest), opt(run_dir), &result));
    } else if (*evaluate) {
      check(cx_evaluate(s, checkpoint.c_str(), opt(manifest), split.c_str(), opt(out), &result));
    } else if (*explain) {
      check(cx_explain(s, checkpoint.c_str(), image.c_str(), opt(method), opt(layer), class_index, opt(out), &result));
    } else if (*report) {
      std::vector<const char*> paths, labels;
      for (const auto& m : metrics) paths.push_back(m.c_str());
      for (const auto& n : names) labels.push_back(n.c_str());
      check(cx_report(s, paths.data(), paths.size(), labels.empty() ? nullptr : labels.data(), opt(out), &result));
    }
    emit(result);
    return 0;
  } catch (const Failure& f) {
    std::string message = cx_last_error();
    for (char& c : message) {
      if (c == '\n') c = ' ';
    }
    std::fprintf(stderr, "cytoxai: %s: %s\n", cx_status_name(f.status), message.c_str());
    return kExitRuntime;
  }
}
