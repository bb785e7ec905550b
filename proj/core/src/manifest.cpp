#include "puregen/manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "puregen/errors.hpp"

namespace puregen::io {

namespace fs = std::filesystem;

namespace {

std::string hex(const unsigned char* p, unsigned n) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(2 * n, '0');
  for (unsigned i = 0; i < n; ++i) {
    s[2 * i] = kDigits[p[i] >> 4];
    s[2 * i + 1] = kDigits[p[i] & 0xF];
  }
  return s;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw DataError("sha256 failed");
  }
  return hex(digest, len);
}

std::string sha256_file(const std::string& path) {
  const std::vector<char> bytes = detail::read_file(path);
  return sha256_hex(std::string_view(bytes.data(), bytes.size()));
}

Manifest scan_directory(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  Manifest m;
  m.created = utc_now();
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel == kManifestName) continue;
    m.entries.push_back({rel, static_cast<std::uint64_t>(e.file_size()), sha256_file(e.path().string())});
  }
  std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return m;
}

std::string format_manifest(const Manifest& manifest) {
  std::ostringstream out;
  out << "# created " << manifest.created << "\n";
  for (const auto& e : manifest.entries) out << e.sha256 << "  " << e.bytes << "  " << e.path << "\n";
  return out.str();
}

Manifest parse_manifest(const std::string& text, const std::string& context) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.starts_with("# created ")) {
      m.created = trim(std::string_view(line).substr(10));
      continue;
    }
    if (line[0] == '#') continue;
    std::istringstream fields(line);
    ManifestEntry e;
    if (!(fields >> e.sha256 >> e.bytes)) throw DataError(context + ":" + std::to_string(lineno) + ": bad entry");
    std::string rest;
    std::getline(fields, rest);
    e.path = trim(rest);
    if (e.sha256.size() != 64 || e.path.empty()) {
      throw DataError(context + ":" + std::to_string(lineno) + ": bad entry");
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const std::string& dir, const Manifest& manifest) {
  const std::string text = format_manifest(manifest);
  detail::write_file((fs::path(dir) / kManifestName).string(), std::vector<char>(text.begin(), text.end()));
}

Manifest read_manifest(const std::string& dir) {
  const std::string path = (fs::path(dir) / kManifestName).string();
  const std::vector<char> bytes = detail::read_file(path);
  return parse_manifest(std::string(bytes.begin(), bytes.end()), path);
}

std::vector<std::string> verify_manifest(const std::string& dir) {
  const Manifest recorded = read_manifest(dir);
  const Manifest actual = scan_directory(dir);
  std::vector<std::string> problems;
  std::map<std::string, const ManifestEntry*> now;
  for (const auto& e : actual.entries) now[e.path] = &e;
  std::set<std::string> seen;
  for (const auto& e : recorded.entries) {
    seen.insert(e.path);
    auto it = now.find(e.path);
    if (it == now.end()) {
      problems.push_back("missing: " + e.path);
    } else if (it->second->sha256 != e.sha256 || it->second->bytes != e.bytes) {
      problems.push_back("modified: " + e.path);
    }
  }
  for (const auto& e : actual.entries) {
    if (!seen.contains(e.path)) problems.push_back("unlisted: " + e.path);
  }
  return problems;
}

void write_sidecar(const std::string& path, const std::map<std::string, std::string>& fields) {
  std::string text;
  for (const auto& [k, v] : fields) text += k + " = " + v + "\n";
  detail::write_file(path, std::vector<char>(text.begin(), text.end()));
}

std::map<std::string, std::string> read_sidecar(const std::string& path) {
  const std::vector<char> bytes = detail::read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[trim(std::string_view(line).substr(0, eq))] = trim(std::string_view(line).substr(eq + 1));
  }
  return out;
}

}  // namespace puregen::io
