#include <stdexcept>

#include "mpart/corpus.hpp"

namespace mpart::corpus {

namespace {

using isa::Description;
using isa::Mnemonic;

uint32_t word_of(const Description& d) {
  const auto bytes = isa::encode(d);
  if (bytes.size() != 4) throw std::invalid_argument("expected a 32-bit form");
  return bytes[0] | bytes[1] << 8 | bytes[2] << 16 | static_cast<uint32_t>(bytes[3]) << 24;
}

void put32(std::vector<uint8_t>& b, std::size_t at, uint32_t w) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<uint8_t>(w >> (8 * i));
}

bool sensitive_at(const std::vector<uint8_t>& b, std::size_t o) {
  if (o + 4 > b.size()) return false;
  const uint32_t w = b[o] | b[o + 1] << 8 | b[o + 2] << 16 | static_cast<uint32_t>(b[o + 3]) << 24;
  if ((w & 3) != 3) return false;
  return isa::is_isolation_sensitive(isa::decode_word(w)) != isa::Sensitivity::None;
}

Description random_instruction(std::mt19937_64& rng) {
  auto r = [&](uint64_t n) { return static_cast<int64_t>(rng() % n); };
  auto reg = [&] { return static_cast<unsigned>(rng() % 32); };
  auto imm12 = [&] { return r(4096) - 2048; };
  switch (r(14)) {
    case 0: return isa::ops::alu_imm(Mnemonic::Addi, reg(), reg(), imm12());
    case 1: return isa::ops::alu(Mnemonic::Add, reg(), reg(), reg());
    case 2: return isa::ops::alu(Mnemonic::Sub, reg(), reg(), reg());
    case 3: return isa::ops::load(Mnemonic::Ld, reg(), reg(), imm12());
    case 4: return isa::ops::store(Mnemonic::Sd, reg(), reg(), imm12());
    case 5: return isa::ops::lui(reg(), r(1 << 20) - (1 << 19));
    case 6: return isa::ops::branch(Mnemonic::Bne, reg(), reg(), 2 * (r(2048) - 1024));
    case 7: return isa::ops::jal(reg(), 2 * (r(1 << 19) - (1 << 18)));
    case 8: return isa::ops::alu_imm(Mnemonic::Slli, reg(), reg(), r(64));
    case 9: return isa::ops::csrr(reg(), isa::csr::mscratch);
    case 10: return isa::ops::csrw(isa::csr::mscratch, reg());
    case 11: return isa::ops::nop();
    case 12: return Description{Mnemonic::CLi, static_cast<unsigned>(1 + rng() % 31), 0, 0, r(64) - 32};
    default: return Description{Mnemonic::CMv, static_cast<unsigned>(1 + rng() % 31), 0,
                                static_cast<unsigned>(1 + rng() % 31), 0};
  }
}

}  // namespace

std::vector<Description> sensitive_forms() {
  std::vector<uint16_t> csrs = {isa::csr::mtvec, isa::csr::mseccfg, isa::csr::mseccfgh};
  for (uint16_t c = 0x3A0; c <= 0x3AE; c += 2) csrs.push_back(c);
  for (uint16_t c = 0x3B0; c <= 0x3EF; ++c) csrs.push_back(c);
  std::vector<Description> out;
  for (uint16_t c : csrs) {
    out.push_back(isa::ops::csrrw(0, c, 5));
    out.push_back(isa::ops::csrrs(6, c, 7));
    out.push_back(isa::ops::csrrc(0, c, 31));
    out.push_back(isa::ops::csrrwi(0, c, 0));
    out.push_back(isa::ops::csrrsi(10, c, 1));
    out.push_back(isa::ops::csrrci(0, c, 17));
  }
  return out;
}

std::vector<uint8_t> benign_blob(std::mt19937_64& rng, std::size_t size) {
  if (size % 2 != 0) throw std::invalid_argument("benign_blob: size must be even");
  std::vector<uint8_t> b;
  b.reserve(size);
  while (b.size() < size) {
    const std::size_t before = b.size();
    auto bytes = isa::encode(random_instruction(rng));
    if (before + bytes.size() > size) bytes = isa::encode(Description{Mnemonic::CNop});
    b.insert(b.end(), bytes.begin(), bytes.end());
    const std::size_t from = before >= 2 ? before - 2 : 0;
    bool bad = false;
    for (std::size_t o = from; o < b.size(); o += 2) bad = bad || sensitive_at(b, o);
    if (bad) b.resize(before);
  }
  return b;
}

Planted plant_aligned(std::vector<uint8_t> blob, const Description& form, std::size_t offset) {
  if (offset % 2 != 0 || offset + 4 > blob.size()) throw std::invalid_argument("plant_aligned: bad offset");
  put32(blob, offset, word_of(form));
  return Planted{std::move(blob), offset, form, false};
}

Planted plant_embedded(std::vector<uint8_t> blob, const Description& form, std::size_t offset) {
  if (offset % 2 != 0 || offset < 2 || offset + 4 > blob.size()) throw std::invalid_argument("plant_embedded: bad offset");
  const uint32_t w = word_of(form);
  // lui t0 with imm[19:4] = low half of the form; imm[3:0] = 0.
  const uint32_t lui = (w & 0xFFFF) << 16 | (5u << 7) | 0x37;
  put32(blob, offset - 2, lui);
  blob[offset + 2] = static_cast<uint8_t>(w >> 16);
  blob[offset + 3] = static_cast<uint8_t>(w >> 24);
  return Planted{std::move(blob), offset, form, true};
}

std::vector<Planted> adversarial_corpus(uint64_t seed, std::size_t count, std::size_t blob_size) {
  std::mt19937_64 rng(seed);
  const auto forms = sensitive_forms();
  std::vector<Planted> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto blob = benign_blob(rng, blob_size);
    const std::size_t slots = (blob_size - 4) / 2;
    std::size_t offset = 2 * (1 + rng() % slots);
    if (offset + 4 > blob_size) offset = blob_size - 4;
    const auto& form = forms[i % forms.size()];
    out.push_back(i % 2 == 0 ? plant_aligned(std::move(blob), form, offset) : plant_embedded(std::move(blob), form, offset));
  }
  return out;
}

}  // namespace mpart::corpus
