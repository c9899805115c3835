#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mpart/isa.hpp"

namespace mpart::corpus {

// Every CSR write form (register and immediate; write, set, clear) against
// every PMP, mseccfg and mtvec address, with a nonzero source.
std::vector<isa::Description> sensitive_forms();

// Random instruction stream over the supported subset with no sensitive
// encoding at any 2-byte offset. `size` must be even.
std::vector<uint8_t> benign_blob(std::mt19937_64& rng, std::size_t size);

struct Planted {
  std::vector<uint8_t> blob;
  std::size_t offset = 0;  // where the sensitive word starts
  isa::Description form;
  bool embedded = false;  // hidden in the upper halfword of a preceding lui
};

// Overwrites four bytes at an even offset with the encoded form.
Planted plant_aligned(std::vector<uint8_t> blob, const isa::Description& form, std::size_t offset);
// Places a lui at offset-2 whose upper halfword is the low half of the
// form, followed by the form's high half, so the sensitive word only
// appears when decoding from the middle of the lui. offset >= 2.
Planted plant_embedded(std::vector<uint8_t> blob, const isa::Description& form, std::size_t offset);

// Alternates aligned and embedded plants, cycling through sensitive_forms().
std::vector<Planted> adversarial_corpus(uint64_t seed, std::size_t count, std::size_t blob_size);

}  // namespace mpart::corpus
