#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace puregen::io {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string& path);

struct ManifestEntry {
  std::string path;  // relative to the run directory, '/' separated
  std::uint64_t bytes = 0;
  std::string sha256;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

// Artifact list of a run directory. `created` is the only nondeterministic
// field and is excluded from equality.
struct Manifest {
  std::string created;
  std::vector<ManifestEntry> entries;  // sorted by path

  friend bool operator==(const Manifest& a, const Manifest& b) { return a.entries == b.entries; }
};

inline constexpr char kManifestName[] = "manifest.txt";

// Hashes every regular file under `dir` except the manifest itself.
Manifest scan_directory(const std::string& dir);

// Text form: "# created <iso8601>" then "<sha256>  <bytes>  <path>" lines.
std::string format_manifest(const Manifest& manifest);
Manifest parse_manifest(const std::string& text, const std::string& context = "manifest");

void write_manifest(const std::string& dir, const Manifest& manifest);
Manifest read_manifest(const std::string& dir);

// One message per missing, added or modified artifact; empty when clean.
std::vector<std::string> verify_manifest(const std::string& dir);

// Sidecar "key = value" text written next to a checkpoint.
void write_sidecar(const std::string& path, const std::map<std::string, std::string>& fields);
std::map<std::string, std::string> read_sidecar(const std::string& path);

}  // namespace puregen::io
