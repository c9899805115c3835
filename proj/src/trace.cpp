#include <array>
#include <sstream>

#include "json.hpp"
#include "mpart/hart.hpp"

namespace mpart::hart {

using nlohmann::ordered_json;

namespace {

constexpr std::array<const char*, 9> kKindNames = {"Fetch",     "Execute",        "Trap",
                                                   "CsrWrite",  "MemAccess",      "ModeSwitch",
                                                   "InterruptTaken", "PipelineFlush", "Injected"};

Mode mode_from(const std::string& s) {
  if (s == "M") return Mode::Machine;
  if (s == "SU") return Mode::SupervisorUser;
  throw TraceFormatError("unknown mode: " + s);
}

pmp::Access access_from(const std::string& s) {
  if (s == "read") return pmp::Access::Read;
  if (s == "write") return pmp::Access::Write;
  if (s == "execute") return pmp::Access::Execute;
  throw TraceFormatError("unknown access: " + s);
}

}  // namespace

std::string to_string(EventKind k) { return kKindNames[static_cast<std::size_t>(k)]; }

std::optional<EventKind> event_kind_from_string(const std::string& s) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i)
    if (s == kKindNames[i]) return static_cast<EventKind>(i);
  return std::nullopt;
}

std::string to_ndjson(const Trace& trace) {
  std::string out;
  for (const auto& e : trace) {
    ordered_json j;
    j["cycle"] = e.cycle;
    j["seq"] = e.seq;
    j["kind"] = to_string(e.kind);
    j["pc"] = e.pc;
    j["instruction"] = e.instruction;
    j["mode"] = pmp::to_string(e.mode);
    j["pmp_hash"] = e.pmp_hash;
    j["interrupts_enabled"] = e.interrupts_enabled;
    j["mtvec"] = e.mtvec;
    switch (e.kind) {
      case EventKind::Trap:
      case EventKind::InterruptTaken: j["cause"] = e.cause; break;
      case EventKind::CsrWrite:
        j["csr"] = e.csr;
        j["csr_name"] = isa::CsrAddress{e.csr}.name();
        j["old"] = e.old_value;
        j["new"] = e.new_value;
        break;
      case EventKind::Fetch:
      case EventKind::MemAccess:
        j["query"] = {{"address", e.query.address},
                      {"size", e.query.size},
                      {"access", pmp::to_string(e.query.access)},
                      {"mode", pmp::to_string(e.query.mode)}};
        j["allowed"] = e.allowed;
        break;
      case EventKind::ModeSwitch:
        j["from_mode"] = pmp::to_string(e.from_mode);
        j["target"] = e.target;
        break;
      case EventKind::Injected: j["target"] = e.target; break;
      default: break;
    }
    if (!e.note.empty()) j["note"] = e.note;
    out += j.dump();
    out += '\n';
  }
  return out;
}

Trace parse_ndjson(const std::string& text) {
  Trace trace;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TraceEvent e;
      e.cycle = j.at("cycle").get<uint64_t>();
      e.seq = j.at("seq").get<uint64_t>();
      const auto kind = event_kind_from_string(j.at("kind").get<std::string>());
      if (!kind) throw TraceFormatError("unknown event kind");
      e.kind = *kind;
      e.pc = j.at("pc").get<uint64_t>();
      e.instruction = j.at("instruction").get<std::string>();
      e.mode = mode_from(j.at("mode").get<std::string>());
      e.pmp_hash = j.at("pmp_hash").get<uint64_t>();
      e.interrupts_enabled = j.at("interrupts_enabled").get<bool>();
      e.mtvec = j.at("mtvec").get<uint64_t>();
      if (j.contains("cause")) e.cause = j["cause"].get<uint64_t>();
      if (j.contains("csr")) {
        e.csr = j["csr"].get<uint16_t>();
        e.old_value = j.at("old").get<uint64_t>();
        e.new_value = j.at("new").get<uint64_t>();
      }
      if (j.contains("query")) {
        const auto& q = j["query"];
        e.query.address = q.at("address").get<uint64_t>();
        e.query.size = q.at("size").get<unsigned>();
        e.query.access = access_from(q.at("access").get<std::string>());
        e.query.mode = mode_from(q.at("mode").get<std::string>());
        e.allowed = j.at("allowed").get<bool>();
      }
      if (j.contains("from_mode")) e.from_mode = mode_from(j["from_mode"].get<std::string>());
      if (j.contains("target")) e.target = j["target"].get<uint64_t>();
      if (j.contains("note")) e.note = j["note"].get<std::string>();
      if (!trace.empty() && e.seq <= trace.back().seq) throw TraceFormatError("sequence numbers not increasing");
      trace.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw TraceFormatError("line " + std::to_string(lineno) + ": " + ex.what());
    } catch (const TraceFormatError& ex) {
      throw TraceFormatError("line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return trace;
}

}  // namespace mpart::hart
