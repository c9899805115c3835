#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "mpart/harness.hpp"

namespace mpart::config {

// Malformed or inconsistent config file. The CLI maps this to exit 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything a config file can describe. Schema (all keys optional):
//
//   layout:   memory_base, memory_size, platform_entries, f_count,
//             regions: {p_code|f_code|sallyport|p_data|f_data|os: {base, size}},
//             enclaves: {count, base, stride, private_size, shared_size},
//             pmp_assignment: {region: entry}   checked, not applied
//   hazard:   {window, flush}
//   monitor:  {vulnerable_sallyport}
//   firmware: blob path, relative to the config file
//   os_script, enclave_scripts[i]: [{action, a, b, c}]
//   timers:   [{at: "<image>:<symbol>" | region, offset, delay}]
//   max_steps
//
// Numbers are JSON integers or strings with a 0x/0 prefix. Unknown keys are
// rejected.
struct RunConfig {
  monitor::SystemConfig system;
  unsigned f_count = 1;
  std::vector<harness::Injection> timers;
  uint64_t max_steps = 50000;
};

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

// "firmware-call" → FirmwareCall. Throws ConfigError on unknown names.
monitor::ActionKind parse_action(const std::string& name);
std::string action_name(monitor::ActionKind);

// Normalized layout: memory, regions (sorted by base), pmp_assignment,
// spentry address, entry counts. Multi-firmware layouts add firmware slots.
std::string layout_json(const RunConfig& cfg, int indent = 2);

// Throws ConfigError when f_count > 1: the simulator runs one firmware.
void require_single_firmware(const RunConfig& cfg);

std::vector<uint8_t> read_file(const std::filesystem::path& path);

}  // namespace mpart::config
