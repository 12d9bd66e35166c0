#include "cytoxai/persistence.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "cytoxai/error.hpp"

namespace cytoxai {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  static std::atomic<unsigned> counter{0};
  fs::path tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("failed writing " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move artifact into place at " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string to_json_line(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["command_line"] = r.command_line;
  j["config_hash"] = r.config_hash;
  j["dataset_hash"] = r.dataset_hash;
  j["tool_version"] = r.tool_version;
  j["started_at"] = r.started_at;
  j["finished_at"] = r.finished_at;
  j["artifacts"] = r.artifacts;
  return j.dump();
}

void append_run_record(const fs::path& log_path, const RunRecord& record) {
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  // A single write() of one line on an O_APPEND descriptor keeps concurrent appends whole.
  const std::string line = to_json_line(record) + "\n";
  std::FILE* f = std::fopen(log_path.c_str(), "a");
  if (!f) throw IoError("cannot open run log " + log_path.string());
  const std::size_t written = std::fwrite(line.data(), 1, line.size(), f);
  std::fclose(f);
  if (written != line.size()) throw IoError("short write to run log " + log_path.string());
}

std::vector<RunRecord> read_run_log(const fs::path& log_path) {
  std::vector<RunRecord> out;
  std::ifstream in(log_path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    RunRecord r;
    r.command_line = j.value("command_line", "");
    r.config_hash = j.value("config_hash", "");
    r.dataset_hash = j.value("dataset_hash", "");
    r.tool_version = j.value("tool_version", "");
    r.started_at = j.value("started_at", "");
    r.finished_at = j.value("finished_at", "");
    r.artifacts = j.value("artifacts", std::vector<std::string>{});
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace cytoxai
