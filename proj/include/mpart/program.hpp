#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpart/isa.hpp"

namespace mpart::isa {

// Small label-resolving assembler for the supported subset. Used to
// generate the monitor, firmware and principal images.
class ProgramBuilder {
 public:
  explicit ProgramBuilder(uint64_t base) : base_(base) {}

  uint64_t base() const { return base_; }
  uint64_t here() const { return base_ + bytes_.size(); }
  std::size_t size() const { return bytes_.size(); }

  ProgramBuilder& emit(const Description& d);
  ProgramBuilder& raw(std::span<const uint8_t> bytes);
  ProgramBuilder& raw32(uint32_t word);

  // Binds a label at the current position. Labels are unique.
  ProgramBuilder& label(const std::string& name);
  // Pads with zero bytes (an illegal encoding) up to an absolute address.
  ProgramBuilder& pad_to(uint64_t address);

  // Loads a 64-bit constant with the shortest lui/addi(w)/slli sequence.
  ProgramBuilder& li(unsigned rd, uint64_t value);
  // Number of bytes li(rd, value) will emit.
  static std::size_t li_size(uint64_t value);
  // PC-relative address of a label (auipc + addi).
  ProgramBuilder& la(unsigned rd, const std::string& target);

  ProgramBuilder& j(const std::string& target) { return jal(reg::zero, target); }
  ProgramBuilder& jal(unsigned rd, const std::string& target);
  ProgramBuilder& branch(Mnemonic m, unsigned rs1, unsigned rs2, const std::string& target);
  ProgramBuilder& beq(unsigned rs1, unsigned rs2, const std::string& t) { return branch(Mnemonic::Beq, rs1, rs2, t); }
  ProgramBuilder& bne(unsigned rs1, unsigned rs2, const std::string& t) { return branch(Mnemonic::Bne, rs1, rs2, t); }
  ProgramBuilder& blt(unsigned rs1, unsigned rs2, const std::string& t) { return branch(Mnemonic::Blt, rs1, rs2, t); }
  ProgramBuilder& bltu(unsigned rs1, unsigned rs2, const std::string& t) { return branch(Mnemonic::Bltu, rs1, rs2, t); }
  ProgramBuilder& bgeu(unsigned rs1, unsigned rs2, const std::string& t) { return branch(Mnemonic::Bgeu, rs1, rs2, t); }

  bool has_label(const std::string& name) const { return labels_.contains(name); }
  uint64_t address_of(const std::string& name) const;

  // Resolves all label references; throws std::logic_error on undefined
  // labels and UnsupportedInstruction on out-of-range offsets.
  std::vector<uint8_t> finish() const;
  const std::map<std::string, uint64_t>& labels() const { return labels_; }

 private:
  enum class FixKind { Jal, Branch, Auipc };
  struct Fixup {
    std::size_t offset;
    FixKind kind;
    Description templ;
    std::string target;
  };

  uint64_t base_;
  std::vector<uint8_t> bytes_;
  std::map<std::string, uint64_t> labels_;
  std::vector<Fixup> fixups_;
};

}  // namespace mpart::isa
