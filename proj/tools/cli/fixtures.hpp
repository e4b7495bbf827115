#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>

namespace ipgo::cli {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

// Manifest layout:
//   {"version": 1,
//    "fixtures": [{"id": ..., "seed": N,
//                  "command": ["gen-synthetic", "--seed", "{seed}", "--out", "{out}/x.ipgo"],
//                  "outputs": [{"path": "x.ipgo", "sha256": ...}]}]}
// Commands are ipgo subcommands; {seed} and {out} are substituted, where
// {out} is the manifest's directory in write mode and a scratch directory
// otherwise. Check mode regenerates every fixture and fails, naming the
// fixture, if a regenerated or checked-in output does not match its hash.
// Write mode regenerates in place and records the new hashes.
bool regen_fixtures(const std::filesystem::path& manifest, bool write, std::ostream& out,
                    std::ostream& err);

}  // namespace ipgo::cli
