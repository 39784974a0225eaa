#include <doctest.h>

#include "cascade_bsde/config.hpp"
#include "cascade_bsde/errors.hpp"

using cbsde::Config;
using cbsde::ValidationError;

namespace {

std::string field_of(const std::string& text) {
  try {
    Config::parse(text);
  } catch (const ValidationError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST_CASE("flat object with every value kind") {
  const Config c = Config::parse(R"({"M": 50, "ok": true, "name": "tree",
                                     "xs": [1, 2.5], "m": [[1, 0], [0, 1]]})");
  CHECK(c.integer("M", 1, 1, 100) == 50);
  CHECK(c.flag("ok", false));
  CHECK(c.str("name") == "tree");
  CHECK(c.list("xs", {}) == std::vector<double>{1.0, 2.5});
  CHECK(c.matrix("m", {}).size() == 2);
  CHECK(c.number("absent", 3.0) == 3.0);
}

TEST_CASE("malformed documents are rejected") {
  CHECK_THROWS_AS(Config::parse("{"), ValidationError);
  CHECK_THROWS_AS(Config::parse("[1, 2]"), ValidationError);
  CHECK_THROWS_AS(Config::parse(R"({"a": {"b": 1}})"), ValidationError);
  CHECK(field_of(R"({"a": {"b": 1}})") == "a");
  CHECK(field_of(R"({"a": [1, "x"]})") == "a");
}

TEST_CASE("typed accessors name the offending key") {
  const Config c = Config::parse(R"({"M": 0, "T": -1, "flag": 1, "frac": 2.5})");
  try {
    c.integer("M", 1, 1, 100000);
    FAIL("expected a range error");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "M");
  }
  CHECK_THROWS_AS(c.positive("T", 1.0), ValidationError);
  CHECK_THROWS_AS(c.flag("flag", false), ValidationError);
  CHECK_THROWS_AS(c.integer("frac", 1, 1, 10), ValidationError);
  CHECK_THROWS_AS(c.str("M"), ValidationError);
}

TEST_CASE("unknown keys are rejected") {
  const Config c = Config::parse(R"({"M": 10, "typo": 1})");
  CHECK_NOTHROW(c.require_known({"M", "typo"}));
  try {
    c.require_known({"M"});
    FAIL("expected an unknown-key error");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "typo");
  }
}

TEST_CASE("missing file is a validation error") {
  CHECK_THROWS_AS(Config::load("/nonexistent/config.json"), ValidationError);
}
