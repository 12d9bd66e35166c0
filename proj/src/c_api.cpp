#include "cytoxai/cytoxai.h"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "cytoxai/commands.hpp"
#include "cytoxai/diagnostics.hpp"
#include "cytoxai/error.hpp"
#include "cytoxai/persistence.hpp"

struct cx_session {
  cytoxai::CommandContext ctx;
};

struct cx_result {
  std::string text;
  std::string dataset_hash;
  std::vector<std::string> artifacts;
};

namespace {

thread_local std::string g_last_error;

bool given(const char* s) { return s != nullptr && *s != '\0'; }
std::filesystem::path path_or_empty(const char* s) { return given(s) ? std::filesystem::path(s) : std::filesystem::path(); }

template <class Fn>
cx_status guarded(Fn fn) {
  try {
    fn();
    g_last_error.clear();
    return CX_OK;
  } catch (const cytoxai::ArgumentError& e) {
    g_last_error = e.what();
    return CX_E_ARGUMENT;
  } catch (const cytoxai::ConfigError& e) {
    g_last_error = e.what();
    return CX_E_CONFIG;
  } catch (const cytoxai::IoError& e) {
    g_last_error = e.what();
    return CX_E_IO;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return CX_E_IO;
  } catch (const cytoxai::FetchError& e) {
    g_last_error = e.what();
    return CX_E_FETCH;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CX_E_RUNTIME;
  } catch (...) {
    g_last_error = "unknown error";
    return CX_E_RUNTIME;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw cytoxai::ArgumentError(std::string(what) + " is NULL");
}

cx_result* wrap(cytoxai::CommandResult r) {
  auto* out = new cx_result;
  out->text = std::move(r.text);
  out->dataset_hash = std::move(r.dataset_hash);
  for (auto& a : r.artifacts) out->artifacts.push_back(a.string());
  return out;
}

template <class Fn>
cx_status command(cx_session* session, cx_result** out, Fn fn) {
  return guarded([&] {
    require(session, "session");
    require(out, "out");
    *out = nullptr;
    *out = wrap(fn(session->ctx));
  });
}

}  // namespace

extern "C" {

const char* cx_version(void) { return cytoxai::kToolVersion.data(); }

const char* cx_status_name(cx_status status) {
  switch (status) {
    case CX_OK: return "ok";
    case CX_E_ARGUMENT: return "argument error";
    case CX_E_CONFIG: return "configuration error";
    case CX_E_IO: return "i/o error";
    case CX_E_FETCH: return "missing pretrained weights";
    case CX_E_RUNTIME: return "runtime error";
  }
  return "unknown status";
}

const char* cx_last_error(void) { return g_last_error.c_str(); }

void cx_set_warning_handler(cx_warning_fn fn, void* user) {
  if (fn == nullptr) {
    cytoxai::set_warning_sink(nullptr);
  } else {
    cytoxai::set_warning_sink([fn, user](const std::string& message) { fn(message.c_str(), user); });
  }
}

cx_status cx_session_open(const char* config_path, cx_session** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    auto session = std::make_unique<cx_session>();
    if (given(config_path)) session->ctx.config = cytoxai::load_config(config_path);
    *out = session.release();
  });
}

void cx_session_close(cx_session* session) { delete session; }

cx_status cx_session_set(cx_session* session, const char* key, const char* value) {
  return guarded([&] {
    require(session, "session");
    require(key, "key");
    require(value, "value");
    cytoxai::apply_override(session->ctx.config, key, value);
  });
}

cx_status cx_session_set_command_line(cx_session* session, const char* command_line) {
  return guarded([&] {
    require(session, "session");
    session->ctx.command_line = command_line ? command_line : "";
  });
}

cx_status cx_session_set_run_log(cx_session* session, const char* path) {
  return guarded([&] {
    require(session, "session");
    session->ctx.run_log = path_or_empty(path);
  });
}

cx_status cx_session_config_hash(const cx_session* session, char out[65]) {
  return guarded([&] {
    require(session, "session");
    require(out, "out");
    const std::string hash = cytoxai::config_hash(session->ctx.config);
    hash.copy(out, 64);
    out[64] = '\0';
  });
}

cx_status cx_session_describe(const cx_session* session, cx_result** out) {
  return guarded([&] {
    require(session, "session");
    require(out, "out");
    auto* r = new cx_result;
    r->text = cytoxai::serialize_config(session->ctx.config);
    *out = r;
  });
}

cx_status cx_prepare(cx_session* session, const char* manifest_out, cx_result** out) {
  return command(session, out, [&](auto& ctx) { return cytoxai::run_prepare(ctx, path_or_empty(manifest_out)); });
}

cx_status cx_analyze_sizes(cx_session* session, const char* out_path, cx_result** out) {
  return command(session, out, [&](auto& ctx) { return cytoxai::run_analyze_sizes(ctx, path_or_empty(out_path)); });
}

cx_status cx_weights(cx_session* session, const int64_t* counts, size_t n_counts, const char* manifest,
                     const char* out_path, cx_result** out) {
  return command(session, out, [&](auto& ctx) {
    cytoxai::WeightsOptions options;
    if (n_counts > 0) {
      require(counts, "counts");
      options.counts.assign(counts, counts + n_counts);
    }
    options.manifest = path_or_empty(manifest);
    options.out = path_or_empty(out_path);
    return cytoxai::run_weights(ctx, options);
  });
}

cx_status cx_train(cx_session* session, const char* manifest, const char* run_dir, cx_result** out) {
  return command(session, out, [&](auto& ctx) {
    return cytoxai::run_train(ctx, {path_or_empty(manifest), path_or_empty(run_dir)});
  });
}

cx_status cx_evaluate(cx_session* session, const char* checkpoint, const char* manifest, const char* split,
                      const char* out_dir, cx_result** out) {
  return command(session, out, [&](auto& ctx) {
    cytoxai::EvaluateOptions options;
    options.checkpoint = path_or_empty(checkpoint);
    options.manifest = path_or_empty(manifest);
    if (given(split)) options.split = cytoxai::parse_split(split);
    options.out_dir = path_or_empty(out_dir);
    return cytoxai::run_evaluate(ctx, options);
  });
}

cx_status cx_explain(cx_session* session, const char* checkpoint, const char* image, const char* method,
                     const char* layer, int class_index, const char* out_dir, cx_result** out) {
  return command(session, out, [&](auto& ctx) {
    cytoxai::ExplainOptions options;
    options.checkpoint = path_or_empty(checkpoint);
    options.image = path_or_empty(image);
    if (given(method)) options.method = method;
    if (given(layer)) options.layer = layer;
    if (class_index != CX_CLASS_DEFAULT) options.class_index = class_index;
    options.out_dir = path_or_empty(out_dir);
    return cytoxai::run_explain(ctx, options);
  });
}

cx_status cx_report(cx_session* session, const char* const* metrics, size_t n_metrics, const char* const* names,
                    const char* out_prefix, cx_result** out) {
  return command(session, out, [&](auto& ctx) {
    cytoxai::ReportOptions options;
    if (n_metrics > 0) require(metrics, "metrics");
    for (size_t i = 0; i < n_metrics; ++i) {
      require(metrics[i], "metrics entry");
      options.metrics.emplace_back(metrics[i]);
      if (names != nullptr) {
        require(names[i], "names entry");
        options.names.emplace_back(names[i]);
      }
    }
    options.out_prefix = path_or_empty(out_prefix);
    return cytoxai::run_report(ctx, options);
  });
}

const char* cx_result_text(const cx_result* result) { return result ? result->text.c_str() : ""; }

const char* cx_result_dataset_hash(const cx_result* result) { return result ? result->dataset_hash.c_str() : ""; }

size_t cx_result_artifact_count(const cx_result* result) { return result ? result->artifacts.size() : 0; }

const char* cx_result_artifact(const cx_result* result, size_t index) {
  if (!result || index >= result->artifacts.size()) return nullptr;
  return result->artifacts[index].c_str();
}

void cx_result_free(cx_result* result) { delete result; }

}  // extern "C"
