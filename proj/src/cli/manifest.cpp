#include "mapo/cli/manifest.hpp"

#include <chrono>

#include "mapo/io.hpp"

namespace mapo::cli {

namespace {

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json file_entry(const std::filesystem::path& path) {
  nlohmann::json e;
  e["path"] = path.string();
  e["sha256"] = mapo::io::hex(mapo::io::sha256_file(path));
  return e;
}

}  // namespace

RunManifest::RunManifest(std::string command, nlohmann::json resolved_config) {
  j_["command"] = std::move(command);
  j_["config"] = std::move(resolved_config);
  j_["inputs"] = nlohmann::json::array();
  j_["outputs"] = nlohmann::json::array();
  j_["started_at"] = iso_now();
}

void RunManifest::add_input(const std::filesystem::path& path) {
  j_["inputs"].push_back(file_entry(path));
}

void RunManifest::add_output(const std::filesystem::path& path) {
  j_["outputs"].push_back(file_entry(path));
}

void RunManifest::set_seeds(const nlohmann::json& seeds) { j_["seeds"] = seeds; }

void RunManifest::note(const std::string& key, const nlohmann::json& value) {
  j_[key] = value;
}

void RunManifest::write(const std::filesystem::path& dir) {
  j_["finished_at"] = iso_now();
  io::write_text_file(dir / "manifest.json", j_.dump(2) + "\n");
}

}  // namespace mapo::cli
