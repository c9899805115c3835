#include <fstream>
#include <set>

#include <fmt/format.h>

#include "json.hpp"
#include "mpart/config.hpp"

namespace mpart::config {

using nlohmann::json;
using nlohmann::ordered_json;
using monitor::ActionKind;

namespace {

constexpr std::pair<ActionKind, const char*> kActionNames[] = {
    {ActionKind::FirmwareCall, "firmware-call"},   {ActionKind::EnclaveCreate, "enclave-create"},
    {ActionKind::EnclaveDelete, "enclave-delete"}, {ActionKind::EnclaveEnter, "enclave-enter"},
    {ActionKind::EnclaveResume, "enclave-resume"}, {ActionKind::EnclaveExit, "enclave-exit"},
    {ActionKind::EnclaveOcall, "enclave-ocall"},   {ActionKind::Ecall, "ecall"},
    {ActionKind::Fault, "fault"},                  {ActionKind::SpinForTimer, "spin-for-timer"},
    {ActionKind::AppSyscall, "app-syscall"},       {ActionKind::AppSpin, "app-spin"},
    {ActionKind::Load, "load"},                    {ActionKind::Store, "store"},
    {ActionKind::Jump, "jump"},                    {ActionKind::Code, "code"},
};

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.contains(k)) throw ConfigError(fmt::format("{}: unknown key \"{}\"", where, k));
}

uint64_t number(const json& j, const std::string& where) {
  if (j.is_number_unsigned()) return j.get<uint64_t>();
  if (j.is_number_integer() && j.get<int64_t>() >= 0) return j.get<uint64_t>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    try {
      std::size_t used = 0;
      const uint64_t v = std::stoull(s, &used, 0);
      if (used == s.size() && !s.starts_with('-')) return v;
    } catch (const std::logic_error&) {
    }
  }
  throw ConfigError(fmt::format("{}: expected a non-negative integer, got {}", where, j.dump()));
}

template <class T>
void set_number(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const uint64_t v = number(obj[key], where + "." + key);
  if (v > std::numeric_limits<T>::max()) throw ConfigError(fmt::format("{}.{}: out of range", where, key));
  out = static_cast<T>(v);
}

bool boolean(const json& j, const std::string& where) {
  if (!j.is_boolean()) throw ConfigError(where + ": expected true or false");
  return j.get<bool>();
}

void parse_layout(const json& j, RunConfig& cfg, std::map<std::string, unsigned>& assignment) {
  only_keys(j, "layout", {"memory_base", "memory_size", "platform_entries", "f_count", "regions", "enclaves",
                          "pmp_assignment"});
  auto& l = cfg.system.layout;
  set_number(j, "memory_base", l.memory_base, "layout");
  set_number(j, "memory_size", l.memory_size, "layout");
  set_number(j, "platform_entries", l.platform_entries, "layout");
  set_number(j, "f_count", cfg.f_count, "layout");
  if (cfg.f_count == 0) throw ConfigError("layout.f_count: must be at least 1");

  if (j.contains("regions")) {
    const auto& r = j["regions"];
    only_keys(r, "layout.regions", {"p_code", "f_code", "sallyport", "p_data", "f_data", "os"});
    const std::pair<const char*, monitor::RegionSpec*> specs[] = {
        {"p_code", &l.p_code}, {"f_code", &l.f_code}, {"sallyport", &l.sallyport},
        {"p_data", &l.p_data}, {"f_data", &l.f_data}, {"os", &l.os},
    };
    for (const auto& [name, spec] : specs) {
      if (!r.contains(name)) continue;
      const std::string where = std::string("layout.regions.") + name;
      only_keys(r[name], where, {"base", "size"});
      set_number(r[name], "base", spec->base, where);
      set_number(r[name], "size", spec->size, where);
    }
  }
  if (j.contains("enclaves")) {
    const auto& e = j["enclaves"];
    only_keys(e, "layout.enclaves", {"count", "base", "stride", "private_size", "shared_size"});
    set_number(e, "count", l.enclave_count, "layout.enclaves");
    set_number(e, "base", l.enclave_base, "layout.enclaves");
    set_number(e, "stride", l.enclave_stride, "layout.enclaves");
    set_number(e, "private_size", l.enclave_private_size, "layout.enclaves");
    set_number(e, "shared_size", l.enclave_shared_size, "layout.enclaves");
  }
  if (j.contains("pmp_assignment")) {
    const auto& a = j["pmp_assignment"];
    if (!a.is_object()) throw ConfigError("layout.pmp_assignment: expected an object");
    for (const auto& [name, v] : a.items()) {
      uint64_t idx = number(v, "layout.pmp_assignment." + name);
      if (idx >= pmp::kEntries) throw ConfigError(fmt::format("layout.pmp_assignment.{}: no entry {}", name, idx));
      assignment[name] = static_cast<unsigned>(idx);
    }
  }
}

std::vector<monitor::Action> parse_script(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of actions");
  std::vector<monitor::Action> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string at = fmt::format("{}[{}]", where, i);
    only_keys(j[i], at, {"action", "a", "b", "c"});
    if (!j[i].contains("action") || !j[i]["action"].is_string()) throw ConfigError(at + ": missing \"action\"");
    monitor::Action a;
    try {
      a.kind = parse_action(j[i]["action"].get<std::string>());
    } catch (const ConfigError& e) {
      throw ConfigError(at + ": " + e.what());
    }
    if (a.kind == ActionKind::Code) throw ConfigError(at + ": raw code actions are only available from the library");
    set_number(j[i], "a", a.a, at);
    set_number(j[i], "b", a.b, at);
    set_number(j[i], "c", a.c, at);
    out.push_back(std::move(a));
  }
  return out;
}

harness::Address parse_address(const json& j, const std::string& where) {
  harness::Address a;
  if (j.contains("at")) {
    if (!j["at"].is_string()) throw ConfigError(where + ".at: expected a string");
    a.anchor = j["at"].get<std::string>();
  }
  uint64_t off = 0;
  set_number(j, "offset", off, where);
  a.offset = static_cast<int64_t>(off);
  return a;
}

// Builds the layout so that placement errors surface at load time, and
// checks any requested entry assignment against it.
void check_layout(const RunConfig& cfg, const std::map<std::string, unsigned>& wanted) {
  std::map<std::string, unsigned> actual;
  if (cfg.f_count > 1)
    actual = monitor::build_multi_f_layout(cfg.system.layout, cfg.f_count).pmp_assignment;
  else
    actual = monitor::build_layout(cfg.system.layout).pmp_assignment;
  for (const auto& [name, idx] : wanted) {
    const auto it = actual.find(name);
    if (it == actual.end()) throw ConfigError(fmt::format("layout.pmp_assignment: no region \"{}\"", name));
    if (it->second != idx)
      throw ConfigError(fmt::format("layout.pmp_assignment.{}: entry {} requested, the layout uses {}", name, idx,
                                    it->second));
  }
}

ordered_json region_json(const monitor::Region& r) {
  return ordered_json{{"name", r.name}, {"base", r.base}, {"size", r.size}, {"perms", r.perms}};
}

}  // namespace

monitor::ActionKind parse_action(const std::string& name) {
  for (const auto& [k, n] : kActionNames)
    if (name == n) return k;
  throw ConfigError(fmt::format("unknown action \"{}\"", name));
}

std::string action_name(ActionKind kind) {
  for (const auto& [k, n] : kActionNames)
    if (k == kind) return n;
  return "?";
}

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  only_keys(j, "config",
            {"layout", "hazard", "monitor", "firmware", "os_script", "enclave_scripts", "timers", "max_steps"});

  RunConfig cfg;
  std::map<std::string, unsigned> assignment;
  if (j.contains("layout")) parse_layout(j["layout"], cfg, assignment);
  if (j.contains("hazard")) {
    only_keys(j["hazard"], "hazard", {"window", "flush"});
    set_number(j["hazard"], "window", cfg.system.hazard.window, "hazard");
    if (j["hazard"].contains("flush")) cfg.system.hazard.flush = boolean(j["hazard"]["flush"], "hazard.flush");
  }
  if (j.contains("monitor")) {
    only_keys(j["monitor"], "monitor", {"vulnerable_sallyport"});
    if (j["monitor"].contains("vulnerable_sallyport"))
      cfg.system.monitor.vulnerable_sallyport =
          boolean(j["monitor"]["vulnerable_sallyport"], "monitor.vulnerable_sallyport");
  }
  if (j.contains("firmware")) {
    if (!j["firmware"].is_string()) throw ConfigError("firmware: expected a path");
    cfg.system.firmware_blob = read_file(base_dir / j["firmware"].get<std::string>());
  }
  if (j.contains("os_script")) cfg.system.os_script = parse_script(j["os_script"], "os_script");
  if (j.contains("enclave_scripts")) {
    const auto& e = j["enclave_scripts"];
    if (!e.is_array()) throw ConfigError("enclave_scripts: expected an array of scripts");
    for (std::size_t i = 0; i < e.size(); ++i)
      cfg.system.enclave_scripts.push_back(parse_script(e[i], fmt::format("enclave_scripts[{}]", i)));
  }
  if (j.contains("timers")) {
    const auto& t = j["timers"];
    if (!t.is_array()) throw ConfigError("timers: expected an array");
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::string at = fmt::format("timers[{}]", i);
      only_keys(t[i], at, {"at", "offset", "delay"});
      harness::Injection inj;
      inj.trigger = parse_address(t[i], at);
      uint64_t delay = 0;
      set_number(t[i], "delay", delay, at);
      inj.timer_delay = delay;
      inj.note = "timer";
      cfg.timers.push_back(std::move(inj));
    }
  }
  set_number(j, "max_steps", cfg.max_steps, "config");

  try {
    check_layout(cfg, assignment);
  } catch (const monitor::LayoutError& e) {
    throw ConfigError(fmt::format("layout: {} ({})", e.what(), monitor::to_string(e.kind())));
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void require_single_firmware(const RunConfig& cfg) {
  if (cfg.f_count > 1)
    throw ConfigError(fmt::format("layout.f_count = {}: only single-firmware systems can be simulated", cfg.f_count));
}

std::string layout_json(const RunConfig& cfg, int indent) {
  ordered_json j;
  const auto emit = [&](const monitor::CompartmentLayout& l, const std::map<std::string, unsigned>& assignment) {
    j["memory"] = {{"base", l.memory_base}, {"size", l.memory_size}};
    auto regions = l.regions();
    std::sort(regions.begin(), regions.end(), [](const auto& a, const auto& b) { return a.base < b.base; });
    j["regions"] = ordered_json::array();
    for (const auto& r : regions) j["regions"].push_back(region_json(r));
    std::vector<std::pair<unsigned, std::string>> by_entry;
    for (const auto& [name, idx] : assignment) by_entry.emplace_back(idx, name);
    std::sort(by_entry.begin(), by_entry.end());
    j["pmp_assignment"] = ordered_json::object();
    for (const auto& [idx, name] : by_entry) j["pmp_assignment"][name] = idx;
    j["spentry"] = l.spentry_address();
    j["platform_entries"] = l.platform_entries;
  };
  try {
    if (cfg.f_count > 1) {
      const auto m = monitor::build_multi_f_layout(cfg.system.layout, cfg.f_count);
      emit(m.base, m.pmp_assignment);
      j["f_count"] = cfg.f_count;
      j["runtime_entries"] = m.runtime_entries();
      j["firmware_slots"] = ordered_json::array();
      for (const auto& s : m.slots)
        j["firmware_slots"].push_back({{"bracket", region_json(s.bracket)},
                                       {"enter_stub", region_json(s.enter_stub)},
                                       {"code", region_json(s.code)},
                                       {"exit_stub", region_json(s.exit_stub)},
                                       {"data", region_json(s.data)}});
    } else {
      const auto l = monitor::build_layout(cfg.system.layout);
      emit(l, l.pmp_assignment);
      j["f_count"] = 1;
      j["runtime_entries"] = l.runtime_entries();
    }
  } catch (const monitor::LayoutError& e) {
    throw ConfigError(fmt::format("layout: {} ({})", e.what(), monitor::to_string(e.kind())));
  }
  j["hazard"] = {{"window", cfg.system.hazard.window}, {"flush", cfg.system.hazard.flush}};
  return j.dump(indent);
}

}  // namespace mpart::config
