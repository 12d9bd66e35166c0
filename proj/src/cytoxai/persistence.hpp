#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cytoxai {

inline constexpr std::string_view kToolVersion = "0.3.0";

// Writes to a sibling temporary file and renames it over `path`, so readers
// never observe a partially written artifact. Creates parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

std::string sha256_hex(std::string_view data);
std::string utc_timestamp();

struct RunRecord {
  std::string command_line;
  std::string config_hash;
  std::string dataset_hash;
  std::string tool_version{kToolVersion};
  std::string started_at;
  std::string finished_at;
  std::vector<std::string> artifacts;
};

std::string to_json_line(const RunRecord& record);
// Appends one line to the run log; the log is append-only.
void append_run_record(const std::filesystem::path& log_path, const RunRecord& record);
std::vector<RunRecord> read_run_log(const std::filesystem::path& log_path);

}  // namespace cytoxai
