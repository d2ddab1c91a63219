#include "scrl/manifest.hpp"

#include <fstream>

#include <json.hpp>

#include "scrl/common.hpp"

namespace scrl {

uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot hash missing file: " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= uint64_t(uint8_t(buf[i]));
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void RunManifest::add_input(const std::string& path) {
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(fnv1a_file(path)));
  input_hashes.emplace_back(path, hex);
}

void RunManifest::write(const std::string& path) const {
  nlohmann::json j;
  j["command"] = command;
  j["args"] = args;
  j["seed"] = seed;
  j["inputs"] = nlohmann::json::array();
  for (const auto& [p, h] : input_hashes) j["inputs"].push_back({{"path", p}, {"hash", h}});
  j["outputs"] = outputs;
  j["simd_mode"] = simd_mode;
  j["wall_clock_sec"] = wall_clock_sec;
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace scrl
