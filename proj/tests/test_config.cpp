#include "doctest.h"
#include "json.hpp"
#include "mpart/config.hpp"

using namespace mpart;
using config::ConfigError;
using config::parse_config;

TEST_CASE("an empty config is the default system") {
  const auto c = parse_config("{}");
  CHECK(c.system.layout.p_code.size == 0x2000);
  CHECK(c.system.hazard.window == 0);
  CHECK(c.f_count == 1);
  CHECK(c.system.os_script.empty());
}

TEST_CASE("numbers may be integers or prefixed strings") {
  const auto c = parse_config(R"({"layout": {"memory_size": "0x200000", "enclaves": {"count": 2, "base": 524288}},
                                  "hazard": {"window": "3", "flush": false}, "max_steps": 100})");
  CHECK(c.system.layout.memory_size == 0x200000);
  CHECK(c.system.layout.enclave_count == 2);
  CHECK(c.system.layout.enclave_base == 0x80000);
  CHECK(c.system.hazard.window == 3);
  CHECK_FALSE(c.system.hazard.flush);
  CHECK(c.max_steps == 100);
}

TEST_CASE("malformed configs are rejected") {
  for (const char* bad : {
           "[",
           R"({"layouts": {}})",
           R"({"layout": {"memory_size": -1}})",
           R"({"layout": {"memory_size": "12q"}})",
           R"({"layout": {"f_count": 0}})",
           R"({"hazard": {"flush": "yes"}})",
           R"({"os_script": [{"action": "reboot"}]})",
           R"({"os_script": [{"action": "code"}]})",
           R"({"os_script": {"action": "fault"}})",
           R"({"layout": {"pmp_assignment": {"os": 4, "nowhere": 2}}})",
           R"({"layout": {"pmp_assignment": {"os": 16}}})",
           R"({"layout": {"regions": {"os": {"base": "0x1000", "size": "0x1000"}}}})",
           R"({"firmware": "/nonexistent/blob.bin"})",
       }) {
    CAPTURE(bad);
    CHECK_THROWS_AS(parse_config(bad), ConfigError);
  }
}

TEST_CASE("action names round-trip") {
  for (const char* n : {"firmware-call", "enclave-create", "enclave-ocall", "spin-for-timer", "app-syscall", "store"})
    CHECK(config::action_name(config::parse_action(n)) == n);
  const auto c = parse_config(R"({"os_script": [{"action": "firmware-call", "a": 1, "b": "0x20"}],
                                  "timers": [{"at": "os:spin.0", "delay": 8}]})");
  REQUIRE(c.system.os_script.size() == 1);
  CHECK(c.system.os_script[0].kind == monitor::ActionKind::FirmwareCall);
  CHECK(c.system.os_script[0].b == 0x20);
  REQUIRE(c.timers.size() == 1);
  CHECK(c.timers[0].trigger.anchor == "os:spin.0");
  CHECK(c.timers[0].timer_delay == 8u);
}

TEST_CASE("the normalized layout is stable and complete") {
  const auto c = parse_config(R"({"layout": {"enclaves": {"count": 1}}})");
  const auto text = config::layout_json(c);
  CHECK(text == config::layout_json(parse_config(R"({"layout": {"enclaves": {"count": 1}}})")));
  const auto j = nlohmann::json::parse(text);
  CHECK(j["runtime_entries"] == 8);
  CHECK(j["pmp_assignment"]["sallyport"] == 8);
  CHECK(j["regions"].size() == 8);
  for (std::size_t i = 1; i < j["regions"].size(); ++i) CHECK(j["regions"][i - 1]["base"] < j["regions"][i]["base"]);

  const auto multi = nlohmann::json::parse(config::layout_json(parse_config(R"({"layout": {"f_count": 2}})")));
  CHECK(multi["runtime_entries"] == 7);
  CHECK(multi["firmware_slots"].size() == 2);
  CHECK_THROWS_AS(config::require_single_firmware(parse_config(R"({"layout": {"f_count": 2}})")), ConfigError);
}
