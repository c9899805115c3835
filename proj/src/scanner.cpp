#include <algorithm>
#include <memory>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "json.hpp"
#include "mpart/scanner.hpp"

namespace mpart::scanner {

namespace {

bool forbidden(const ScanPolicy& p, isa::Sensitivity s) {
  switch (s) {
    case isa::Sensitivity::PmpWrite: return p.forbid_pmp_writes;
    case isa::Sensitivity::TrapVectorWrite: return p.forbid_trap_vector_writes;
    case isa::Sensitivity::None: return false;
  }
  return false;
}

bool is_allowed_spentry(std::span<const uint8_t> blob, std::size_t offset, const ScanPolicy& p) {
  if (!p.allowed_spentry_offset || *p.allowed_spentry_offset != offset || offset + 4 > blob.size()) return false;
  return std::equal(p.allowed_spentry_encoding.begin(), p.allowed_spentry_encoding.end(), blob.begin() + offset);
}

}  // namespace

std::string to_string(Verdict v) { return v == Verdict::Clean ? "Clean" : "Rejected"; }

std::string sha256_hex(std::span<const uint8_t> bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
    throw std::runtime_error("sha256: digest computation failed");
  std::string out;
  out.reserve(2 * len);
  for (unsigned i = 0; i < len; ++i) out += fmt::format("{:02x}", md[i]);
  return out;
}

ScanReport scan(std::span<const uint8_t> blob, const ScanPolicy& policy) {
  if (policy.allowed_spentry_offset) {
    const std::size_t o = *policy.allowed_spentry_offset;
    if (o % 2 != 0) throw ConfigurationError(fmt::format("allowed SPEntry offset {} is not 2-byte aligned", o));
    if (o + 4 > blob.size()) throw ConfigurationError(fmt::format("allowed SPEntry offset {} lies outside the blob", o));
  }
  ScanReport r;
  r.blob_digest = sha256_hex(blob);
  for (std::size_t o = 0; o + 2 <= blob.size(); o += 2) {
    // The 16-bit reading can never be sensitive: compressed forms have no CSR
    // writes, so classifying it only matters for the low halfword's width.
    const uint16_t lo = static_cast<uint16_t>(blob[o] | (blob[o + 1] << 8));
    const isa::Instruction half = isa::decode_word(lo);
    if (forbidden(policy, isa::is_isolation_sensitive(half)))
      r.findings.push_back({o, 2, half.to_string(), isa::is_isolation_sensitive(half)});
    if (o + 4 > blob.size()) continue;
    const uint32_t word = lo | static_cast<uint32_t>(blob[o + 2] | (blob[o + 3] << 8)) << 16;
    if ((word & 3) != 3) continue;  // not a 32-bit encoding at this offset
    const isa::Instruction full = isa::decode_word(word);
    const isa::Sensitivity s = isa::is_isolation_sensitive(full);
    if (forbidden(policy, s) && !is_allowed_spentry(blob, o, policy)) r.findings.push_back({o, 4, full.to_string(), s});
  }
  r.verdict = r.findings.empty() ? Verdict::Clean : Verdict::Rejected;
  return r;
}

std::string to_json(const ScanReport& report, int indent) {
  nlohmann::ordered_json j;
  j["verdict"] = to_string(report.verdict);
  j["digest_algorithm"] = report.digest_algorithm;
  j["blob_digest"] = report.blob_digest;
  j["findings"] = nlohmann::ordered_json::array();
  for (const auto& f : report.findings)
    j["findings"].push_back({{"offset", f.offset}, {"mnemonic", f.mnemonic}, {"sensitivity", isa::to_string(f.sensitivity)}});
  return j.dump(indent);
}

FirmwareCheck verify_firmware(std::span<const uint8_t> blob, const monitor::CompartmentLayout& layout) {
  const auto& code = layout.f_code;
  if (code.size < 4 || layout.spentry_offset != code.size - 4)
    throw ConfigurationError(fmt::format("SPEntry offset {:#x} is not the last instruction slot of f_code (size {:#x})",
                                         layout.spentry_offset, code.size));
  if (blob.size() != code.size)
    throw ConfigurationError(fmt::format("firmware blob is {} bytes, f_code region is {}", blob.size(), code.size));
  ScanPolicy policy;
  policy.allowed_spentry_offset = layout.spentry_offset;
  FirmwareCheck out;
  out.report = scan(blob, policy);
  out.pass = out.report.verdict == Verdict::Clean;
  return out;
}

}  // namespace mpart::scanner
