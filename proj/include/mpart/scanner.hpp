#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpart/isa.hpp"
#include "mpart/layout.hpp"

namespace mpart::scanner {

// `csrwi pmpcfg0, 0`, little-endian.
inline constexpr std::array<uint8_t, 4> kSpEntryEncoding = {0x73, 0x50, 0x00, 0x3a};

struct ScanPolicy {
  bool forbid_pmp_writes = true;
  bool forbid_trap_vector_writes = true;
  std::optional<std::size_t> allowed_spentry_offset;
  std::array<uint8_t, 4> allowed_spentry_encoding = kSpEntryEncoding;
};

struct Finding {
  std::size_t offset = 0;
  unsigned width = 4;
  std::string mnemonic;  // decoded summary
  isa::Sensitivity sensitivity = isa::Sensitivity::None;
  friend bool operator==(const Finding&, const Finding&) = default;
};

enum class Verdict { Clean, Rejected };
std::string to_string(Verdict);

struct ScanReport {
  Verdict verdict = Verdict::Clean;
  std::vector<Finding> findings;  // ordered by offset, then width
  std::string digest_algorithm = "sha256";
  std::string blob_digest;  // lowercase hex
  friend bool operator==(const ScanReport&, const ScanReport&) = default;
};

// Bad policy or layout input, as opposed to a rejected blob.
class ConfigurationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string sha256_hex(std::span<const uint8_t> bytes);

// Throws ConfigurationError if the allowed offset is unaligned or outside the blob.
ScanReport scan(std::span<const uint8_t> blob, const ScanPolicy& policy = {});

// {verdict, digest_algorithm, blob_digest, findings:[{offset, mnemonic, sensitivity}]}
std::string to_json(const ScanReport& report, int indent = 2);

struct FirmwareCheck {
  bool pass = false;
  ScanReport report;
};

// The blob is the image of the layout's f_code region. The SPEntry must sit
// in the region's last instruction slot.
FirmwareCheck verify_firmware(std::span<const uint8_t> blob, const monitor::CompartmentLayout& layout);

}  // namespace mpart::scanner
