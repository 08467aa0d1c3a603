#include <nlohmann/json.hpp>

#include "doctest.h"
#include "eventmatch/error.hpp"
#include "eventmatch/parallel.hpp"
#include "eventmatch/selfcheck.hpp"

using namespace eventmatch;

TEST_CASE("default selfcheck passes") {
  const auto r = run_selfcheck(0);
  CHECK(r.passed());
  CHECK(r.checks.size() == selfcheck_names().size());
  for (const auto& c : r.checks) {
    CAPTURE(c.name);
    CHECK(c.passed);
    CHECK(c.measured <= c.tolerance);
  }
  CHECK(r.seconds < 60.0);
  CHECK_FALSE(deterministic());  // restored afterwards
}

TEST_CASE("another seed passes too") { CHECK(run_selfcheck(12345).passed()); }

TEST_CASE("each injected fault trips exactly its own check") {
  for (const auto& name : selfcheck_names()) {
    CAPTURE(name);
    const auto r = run_selfcheck(0, name);
    CHECK_FALSE(r.passed());
    for (const auto& c : r.checks) CHECK(c.passed == (c.name != name));
  }
  CHECK_THROWS_AS(run_selfcheck(0, std::string("no-such-check")), DomainError);
}

TEST_CASE("json report schema") {
  const auto r = run_selfcheck(3, std::string("voxel-mass"));
  const auto j = nlohmann::json::parse(selfcheck_json(r));
  CHECK(j.at("seed") == 3);
  CHECK(j.at("passed") == false);
  CHECK(j.at("seconds").is_number());
  REQUIRE(j.at("checks").size() == selfcheck_names().size());
  for (const auto& c : j.at("checks")) {
    CHECK(c.at("name").is_string());
    CHECK(c.at("passed").is_boolean());
    CHECK(c.at("tolerance").is_number());
    CHECK(c.at("detail").is_string());
    CHECK(c.at("seconds").is_number());
    CHECK((c.at("measured").is_number() || c.at("measured").is_null()));
  }
  CHECK(j.at("checks")[0].at("name") == "voxel-mass");
  CHECK(j.at("checks")[0].at("passed") == false);
  CHECK(selfcheck_text(r).find("FAIL voxel-mass") != std::string::npos);
}
