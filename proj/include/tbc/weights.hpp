#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <variant>

#include "tbc/scm.hpp"
#include "tbc/tem.hpp"

namespace tbc {

// --- weight files ("TBCW") -------------------------------------------------
//
// magic "TBCW", u32 version = 1, u8 kind (0 = TEM, 1 = SCM), then
//   TEM: u32 BC, u32 L
//   SCM: u32 C_SCM
// then every parameter tensor in construction order as little-endian binary32,
// then a u64 FNV-1a checksum of all preceding bytes. Shapes are implied by the
// header; the SCM classifier width is recovered from the payload length.

enum class WeightKind : std::uint8_t { tem = 0, scm = 1 };

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

void write_tem(std::ostream& out, const TemNet& net);
void write_scm(std::ostream& out, const ScmNet& net);
void save_weights(const std::filesystem::path& path, const TemNet& net);
void save_weights(const std::filesystem::path& path, const ScmNet& net);

using AnyNet = std::variant<TemNet, ScmNet>;

/// Reads either kind. Throws DataError on bad magic, version, checksum or size.
AnyNet read_weights(std::istream& in);
AnyNet load_weights(const std::filesystem::path& path);
TemNet load_tem(const std::filesystem::path& path);
ScmNet load_scm(const std::filesystem::path& path);

/// FNV-1a of the serialized file image; equal hashes mean byte-identical weights.
std::uint64_t weights_hash(const TemNet& net);
std::uint64_t weights_hash(const ScmNet& net);

}  // namespace tbc
