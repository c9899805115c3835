// mpart: scan firmware blobs, run configured systems, run the attack suite.
// Exit codes: 0 pass, 1 security-negative result, 2 operational error.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "mpart/config.hpp"
#include "mpart/corpus.hpp"

namespace {

using namespace mpart;
using nlohmann::ordered_json;

constexpr int kPass = 0;
constexpr int kNegative = 1;
constexpr int kError = 2;

struct Options {
  std::string format = "json";
  bool json() const { return format == "json"; }
};

config::RunConfig config_or_default(const std::string& path) {
  return path.empty() ? config::RunConfig{} : config::load_config(path);
}

std::string scan_text(const scanner::ScanReport& r) {
  std::string s = fmt::format("verdict: {}\nsha256:  {}\n", scanner::to_string(r.verdict), r.blob_digest);
  for (const auto& f : r.findings)
    s += fmt::format("  {:#08x}  {:<28} {}\n", f.offset, f.mnemonic, isa::to_string(f.sensitivity));
  return s;
}

int cmd_scan(const Options& o, const std::string& blob_path, const std::string& layout_path) {
  const auto cfg = config_or_default(layout_path);
  config::require_single_firmware(cfg);
  const auto blob = config::read_file(blob_path);
  const auto layout = monitor::build_layout(cfg.system.layout);
  const auto check = scanner::verify_firmware(blob, layout);
  std::cout << (o.json() ? scanner::to_json(check.report) + "\n" : scan_text(check.report));
  return check.pass ? kPass : kNegative;
}

// Writes the built-in firmware image for the layout, optionally with a
// sensitive CSR write planted at an even offset.
int cmd_firmware(const std::string& config_path, const std::string& out, std::optional<std::size_t> plant_at) {
  const auto cfg = config_or_default(config_path);
  config::require_single_firmware(cfg);
  auto bytes = monitor::build_firmware_image(monitor::build_layout(cfg.system.layout)).bytes;
  if (plant_at) {
    if (*plant_at % 2 != 0 || *plant_at + 4 > bytes.size())
      throw config::ConfigError(fmt::format("--plant-at {:#x}: must be even and inside the image", *plant_at));
    const auto form = corpus::sensitive_forms().front();
    bytes = corpus::plant_aligned(std::move(bytes), form, *plant_at).blob;
    fmt::print(stderr, "planted {} {:#x} at {:#x}\n", isa::mnemonic_name(form.mnemonic), form.csr, *plant_at);
  }
  std::ofstream f(out, std::ios::binary);
  if (!f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw config::ConfigError("cannot write " + out);
  return kPass;
}

int cmd_layout(const Options& o, const std::string& config_path) {
  const auto cfg = config_or_default(config_path);
  const auto text = config::layout_json(cfg);
  if (o.json()) {
    std::cout << text << "\n";
    return kPass;
  }
  const auto j = ordered_json::parse(text);
  for (const auto& r : j["regions"])
    fmt::print("{:<20} {:#08x} {:#08x} {}\n", r["name"].get<std::string>(), r["base"].get<uint64_t>(),
               r["size"].get<uint64_t>(), r["perms"].get<std::string>());
  for (const auto& [name, idx] : j["pmp_assignment"].items()) fmt::print("entry {:>2}  {}\n", idx.get<unsigned>(), name);
  fmt::print("runtime entries: {}\n", j["runtime_entries"].get<unsigned>());
  return kPass;
}

int cmd_run(const Options& o, const std::string& config_path, const std::string& trace_path,
            std::optional<unsigned> hazard_window) {
  auto cfg = config_or_default(config_path);
  config::require_single_firmware(cfg);
  if (hazard_window) cfg.system.hazard.window = *hazard_window;

  harness::NominalFlow flow;
  flow.name = "run";
  flow.system = cfg.system;
  flow.environment = cfg.timers;
  flow.max_steps = cfg.max_steps;

  harness::NominalResult r;
  try {
    r = harness::run_nominal(flow);
  } catch (const monitor::BootRejected& e) {
    if (o.json()) {
      ordered_json j;
      j["outcome"] = "BootRejected";
      j["scan"] = ordered_json::parse(scanner::to_json(e.report()));
      std::cout << j.dump(2) << "\n";
    } else {
      std::cout << "boot rejected\n" << scan_text(e.report());
    }
    return kNegative;
  }

  if (!trace_path.empty()) {
    std::ofstream f(trace_path, std::ios::binary);
    if (!f) throw config::ConfigError("cannot write " + trace_path);
    f << hart::to_ndjson(r.trace);
  }

  if (o.json()) {
    ordered_json j;
    j["outcome"] = hart::to_string(r.outcome);
    j["sequence"] = r.sequence;
    j["events"] = r.trace.size();
    j["boot_events"] = r.boot_events;
    j["violations"] = ordered_json::array();
    for (const auto& v : r.violations)
      j["violations"].push_back({{"invariant", harness::to_string(v.invariant)}, {"index", v.index}, {"message", v.message}});
    j["trace_path"] = trace_path.empty() ? ordered_json(nullptr) : ordered_json(trace_path);
    std::cout << j.dump(2) << "\n";
  } else {
    fmt::print("outcome:    {}\nsequence:   {}\nevents:     {}\n", hart::to_string(r.outcome),
               fmt::join(r.sequence, " "), r.trace.size());
    for (const auto& v : r.violations)
      fmt::print("violation:  {} at event {}: {}\n", harness::to_string(v.invariant), v.index, v.message);
  }
  return r.outcome == hart::Outcome::Stopped && r.violations.empty() ? kPass : kNegative;
}

int cmd_attack_suite(const Options& o, const std::string& config_path, const std::vector<std::string>& only,
                     const std::string& trace_dir) {
  const auto cfg = config_or_default(config_path);
  config::require_single_firmware(cfg);
  harness::SuiteConfig suite_cfg{cfg.system.layout, cfg.system.hazard, cfg.system.monitor};

  auto suite = harness::builtin_suite(suite_cfg);
  if (!only.empty()) {
    for (const auto& name : only)
      if (std::none_of(suite.begin(), suite.end(), [&](const auto& s) { return s.name == name; }))
        throw config::ConfigError("no scenario named " + name);
    std::erase_if(suite, [&](const auto& s) { return std::find(only.begin(), only.end(), s.name) == only.end(); });
  }

  std::vector<harness::ScenarioResult> results;
  for (const auto& s : suite) results.push_back(harness::run_scenario(s));
  if (!trace_dir.empty()) std::filesystem::create_directories(trace_dir);

  std::cout << (o.json() ? harness::suite_json(results, trace_dir.empty() ? std::nullopt : std::optional(trace_dir)) +
                               "\n"
                         : harness::suite_text(results));
  const bool ok = std::all_of(results.begin(), results.end(), [](const auto& r) {
    return r.matched && r.verdict.kind != harness::VerdictKind::Breach;
  });
  return ok ? kPass : kNegative;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ISA-level simulator for a compartmentalized RISC-V machine-mode monitor"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--format", o.format, "Report format")->check(CLI::IsMember({"json", "text"}))->capture_default_str();

  std::string blob, layout_path, config_path, trace_path, trace_dir;
  std::optional<unsigned> hazard_window;
  std::vector<std::string> only;

  auto* scan = app.add_subcommand("scan", "Scan a firmware blob; exit 1 if it would be rejected at boot");
  scan->add_option("blob", blob, "Raw f_code image")->required();
  scan->add_option("--layout", layout_path, "Config file whose layout places the blob");

  auto* layout = app.add_subcommand("layout", "Validate a config and print the normalized layout");
  layout->add_option("--config", config_path, "Config file");

  auto* run = app.add_subcommand("run", "Boot a system and run the OS script");
  run->add_option("--config", config_path, "Config file");
  run->add_option("--trace", trace_path, "Write the ND-JSON trace here");
  run->add_option("--hazard-window", hazard_window, "PMP write hazard window in instructions");

  auto* suite = app.add_subcommand("attack-suite", "Run the built-in attack scenarios");
  suite->add_option("--config", config_path, "Config file");
  suite->add_option("--only", only, "Run only these scenarios");
  suite->add_option("--trace-dir", trace_dir, "Write one ND-JSON trace per scenario here");

  std::string out;
  std::optional<std::size_t> plant_at;
  auto* firmware = app.add_subcommand("firmware", "Write the built-in firmware image as a raw blob");
  firmware->add_option("--config", config_path, "Config file");
  firmware->add_option("-o,--output", out, "Output path")->required();
  firmware->add_option("--plant-at", plant_at, "Plant a forbidden CSR write at this offset");

  for (auto* sub : {scan, layout, run, suite, firmware}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kError;
  }

  try {
    if (*scan) return cmd_scan(o, blob, layout_path);
    if (*layout) return cmd_layout(o, config_path);
    if (*run) return cmd_run(o, config_path, trace_path, hazard_window);
    if (*suite) return cmd_attack_suite(o, config_path, only, trace_dir);
    if (*firmware) return cmd_firmware(config_path, out, plant_at);
  } catch (const monitor::LayoutError& e) {
    fmt::print(stderr, "mpart: layout: {} ({})\n", e.what(), monitor::to_string(e.kind()));
  } catch (const std::exception& e) {
    fmt::print(stderr, "mpart: {}\n", e.what());
  }
  return kError;
}
