#include "fixtures.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <atomic>
#include <fstream>
#include <ostream>
#include <sstream>

#include "commands.hpp"
#include "ipgo/embedding_file.hpp"
#include "ipgo/error.hpp"
#include "json.hpp"

namespace ipgo::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIo, "sha256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file_bytes(path)); }

namespace {

struct ScratchDir {
  fs::path path;
  ScratchDir() {
    static std::atomic<unsigned> counter{0};
    path = fs::temp_directory_path() /
           ("ipgo-fixtures-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string substitute(std::string s, const std::string& key, const std::string& value) {
  for (std::size_t pos = 0; (pos = s.find(key, pos)) != std::string::npos; pos += value.size()) {
    s.replace(pos, key.size(), value);
  }
  return s;
}

Json load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read fixture manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Json j = Json::parse(ss.str(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(ErrorCode::kMalformed, path.string() + ": manifest is not a JSON object");
  }
  if (!j.contains("fixtures")) j["fixtures"] = Json::array();
  if (!j["fixtures"].is_array()) throw Error(ErrorCode::kMalformed, path.string() + ": 'fixtures' must be an array");
  for (const auto& f : j["fixtures"]) {
    if (!f.is_object() || !f.contains("id") || !f["id"].is_string() || !f.contains("command") ||
        !f["command"].is_array() || !f.contains("outputs") || !f["outputs"].is_array()) {
      throw Error(ErrorCode::kMalformed, path.string() + ": every fixture needs id, command and outputs");
    }
    for (const auto& o : f["outputs"]) {
      if (!o.is_object() || !o.contains("path") || !o["path"].is_string()) {
        throw Error(ErrorCode::kMalformed,
                    path.string() + ": fixture '" + f["id"].get<std::string>() + "' has an output without a path");
      }
    }
  }
  return j;
}

}  // namespace

bool regen_fixtures(const fs::path& manifest_path, bool write, std::ostream& out, std::ostream& err) {
  Json manifest = load_manifest(manifest_path);
  const fs::path root = manifest_path.parent_path().empty() ? fs::path(".") : manifest_path.parent_path();
  bool ok = true;
  std::size_t checked = 0;

  for (auto& fixture : manifest["fixtures"]) {
    const std::string id = fixture["id"].get<std::string>();
    const std::string seed = fixture.contains("seed") ? fixture["seed"].dump() : "0";
    ScratchDir scratch;
    const fs::path target = write ? root : scratch.path;

    std::vector<std::string> args;
    for (const auto& a : fixture["command"]) {
      if (!a.is_string()) throw Error(ErrorCode::kMalformed, "fixture '" + id + "': command entries must be strings");
      args.push_back(substitute(substitute(a.get<std::string>(), "{seed}", seed), "{out}", target.string()));
    }
    std::ostringstream sub_out, sub_err;
    if (run_cli(args, sub_out, sub_err) != 0) {
      err << error_record("fixture_mismatch", "fixture '" + id + "': generator failed: " + sub_err.str(),
                          "regen-fixtures")
          << '\n';
      ok = false;
      continue;
    }

    for (auto& output : fixture["outputs"]) {
      const std::string rel = output["path"].get<std::string>();
      const std::string fresh = sha256_file(target / rel);
      if (write) {
        output["sha256"] = fresh;
        continue;
      }
      const std::string expected = output.contains("sha256") ? output["sha256"].get<std::string>() : "";
      if (fresh != expected) {
        err << error_record("fixture_mismatch",
                            "fixture '" + id + "' drifted: " + rel + " regenerates to sha256 " + fresh +
                                ", manifest says " + expected,
                            "regen-fixtures")
            << '\n';
        ok = false;
        continue;
      }
      const fs::path committed = root / rel;
      if (!fs::exists(committed) || sha256_file(committed) != expected) {
        err << error_record("fixture_mismatch",
                            "fixture '" + id + "': checked-in " + committed.string() + " does not match the manifest",
                            "regen-fixtures")
            << '\n';
        ok = false;
      }
    }
    ++checked;
  }

  if (write) write_file_atomic(manifest_path, manifest.dump(2) + "\n");
  out << (write ? "regenerated " : "checked ") << checked << " fixture(s) from " << manifest_path.string()
      << (ok ? "" : " with mismatches") << '\n';
  return ok;
}

}  // namespace ipgo::cli
