#include "mpart/program.hpp"

#include <cstring>
#include <stdexcept>

namespace mpart::isa {

namespace {

int64_t sext12(uint64_t v) { return static_cast<int64_t>((v & 0xFFF) ^ 0x800) - 0x800; }

// Produces the instruction sequence for li; shared by li() and li_size().
void li_sequence(unsigned rd, int64_t v, std::vector<Description>& out) {
  if (v >= -2048 && v <= 2047) {
    out.push_back(ops::alu_imm(Mnemonic::Addi, rd, reg::zero, v));
    return;
  }
  if (v >= INT32_MIN && v <= INT32_MAX) {
    const int64_t lo = sext12(static_cast<uint64_t>(v));
    const int64_t hi = ((v - lo) >> 12) & 0xFFFFF;
    out.push_back(ops::lui(rd, (hi ^ 0x80000) - 0x80000));
    if (lo != 0) out.push_back(ops::alu_imm(Mnemonic::Addiw, rd, rd, lo));
    return;
  }
  const int64_t lo = sext12(static_cast<uint64_t>(v));
  const int64_t hi = (v - lo) >> 12;
  li_sequence(rd, hi, out);
  out.push_back(ops::alu_imm(Mnemonic::Slli, rd, rd, 12));
  if (lo != 0) out.push_back(ops::alu_imm(Mnemonic::Addi, rd, rd, lo));
}

}  // namespace

ProgramBuilder& ProgramBuilder::emit(const Description& d) {
  const auto bytes = encode(d);
  bytes_.insert(bytes_.end(), bytes.begin(), bytes.end());
  return *this;
}

ProgramBuilder& ProgramBuilder::raw(std::span<const uint8_t> bytes) {
  bytes_.insert(bytes_.end(), bytes.begin(), bytes.end());
  return *this;
}

ProgramBuilder& ProgramBuilder::raw32(uint32_t w) {
  const uint8_t b[4] = {static_cast<uint8_t>(w), static_cast<uint8_t>(w >> 8),
                        static_cast<uint8_t>(w >> 16), static_cast<uint8_t>(w >> 24)};
  return raw(b);
}

ProgramBuilder& ProgramBuilder::label(const std::string& name) {
  if (!labels_.emplace(name, here()).second) throw std::logic_error("duplicate label: " + name);
  return *this;
}

ProgramBuilder& ProgramBuilder::pad_to(uint64_t address) {
  if (address < here()) throw std::logic_error("pad_to: address already passed");
  bytes_.resize(address - base_, 0);
  return *this;
}

ProgramBuilder& ProgramBuilder::li(unsigned rd, uint64_t value) {
  std::vector<Description> seq;
  li_sequence(rd, static_cast<int64_t>(value), seq);
  for (const auto& d : seq) emit(d);
  return *this;
}

std::size_t ProgramBuilder::li_size(uint64_t value) {
  std::vector<Description> seq;
  li_sequence(reg::t0, static_cast<int64_t>(value), seq);
  return seq.size() * 4;
}

ProgramBuilder& ProgramBuilder::la(unsigned rd, const std::string& target) {
  fixups_.push_back({bytes_.size(), FixKind::Auipc, Description{Mnemonic::Auipc, rd}, target});
  bytes_.resize(bytes_.size() + 8, 0);
  return *this;
}

ProgramBuilder& ProgramBuilder::jal(unsigned rd, const std::string& target) {
  fixups_.push_back({bytes_.size(), FixKind::Jal, ops::jal(rd, 0), target});
  bytes_.resize(bytes_.size() + 4, 0);
  return *this;
}

ProgramBuilder& ProgramBuilder::branch(Mnemonic m, unsigned rs1, unsigned rs2, const std::string& target) {
  fixups_.push_back({bytes_.size(), FixKind::Branch, ops::branch(m, rs1, rs2, 0), target});
  bytes_.resize(bytes_.size() + 4, 0);
  return *this;
}

uint64_t ProgramBuilder::address_of(const std::string& name) const {
  const auto it = labels_.find(name);
  if (it == labels_.end()) throw std::logic_error("undefined label: " + name);
  return it->second;
}

std::vector<uint8_t> ProgramBuilder::finish() const {
  std::vector<uint8_t> out = bytes_;
  for (const auto& f : fixups_) {
    const uint64_t pc = base_ + f.offset;
    const int64_t delta = static_cast<int64_t>(address_of(f.target) - pc);
    std::vector<uint8_t> enc;
    if (f.kind == FixKind::Auipc) {
      const int64_t lo = sext12(static_cast<uint64_t>(delta));
      const int64_t hi = (delta - lo) >> 12;
      enc = encode(Description{Mnemonic::Auipc, f.templ.rd, 0, 0, hi});
      const auto add = encode(ops::alu_imm(Mnemonic::Addi, f.templ.rd, f.templ.rd, lo));
      enc.insert(enc.end(), add.begin(), add.end());
    } else {
      Description d = f.templ;
      d.imm = delta;
      enc = encode(d);
    }
    std::memcpy(out.data() + f.offset, enc.data(), enc.size());
  }
  return out;
}

}  // namespace mpart::isa
