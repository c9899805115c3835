#include <filesystem>
#include <fstream>

#include <fmt/format.h>

#include "json.hpp"
#include "mpart/harness.hpp"

namespace mpart::harness {

namespace {

std::vector<const ScenarioResult*> by_name(const std::vector<ScenarioResult>& results) {
  std::vector<const ScenarioResult*> sorted;
  for (const auto& r : results) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->name < b->name; });
  return sorted;
}

}  // namespace

std::string suite_json(const std::vector<ScenarioResult>& results, const std::optional<std::string>& trace_dir) {
  const auto sorted = by_name(results);

  auto out = nlohmann::ordered_json::array();
  for (const auto* r : sorted) {
    nlohmann::ordered_json j;
    j["name"] = r->name;
    j["verdict"] = to_string(r->verdict.kind);
    if (r->verdict.mechanism) j["mechanism"] = to_string(*r->verdict.mechanism);
    j["steps"] = r->steps;
    if (trace_dir && !r->trace.empty()) {
      const auto path = std::filesystem::path(*trace_dir) / (r->name + ".ndjson");
      std::ofstream f(path, std::ios::binary);
      if (!f) throw std::runtime_error("cannot write " + path.string());
      f << hart::to_ndjson(r->trace);
      j["trace_path"] = path.string();
    } else {
      j["trace_path"] = nullptr;
    }
    j["expected"] = r->expected.name();
    j["matched"] = r->matched;
    j["detail"] = r->verdict.detail;
    if (r->verdict.evidence) {
      const auto& v = *r->verdict.evidence;
      j["evidence"] = {{"invariant", to_string(v.invariant)}, {"event_index", v.index}, {"seq", v.event.seq},
                       {"pc", v.event.pc}, {"message", v.message}};
    }
    out.push_back(std::move(j));
  }
  return out.dump(2) + "\n";
}

std::string suite_text(const std::vector<ScenarioResult>& results) {
  std::string s;
  unsigned ok = 0;
  for (const auto* r : by_name(results)) {
    ok += r->matched;
    s += fmt::format("{:<36} {:<4} {:<30} expected {:<28} {} steps\n", r->name, r->matched ? "ok" : "FAIL",
                     r->verdict.name(), r->expected.name(), r->steps);
  }
  s += fmt::format("{}/{} scenarios as expected\n", ok, results.size());
  return s;
}

}  // namespace mpart::harness
