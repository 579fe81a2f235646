#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "vbcalc/fieldexpr.hpp"

using namespace vbc::expr;

namespace {

double eval_str(const std::string& s, const std::map<std::string, double>& b = {}) {
  return eval(*parse(s), b);
}

ExprPtr random_tree(std::mt19937_64& rng, int depth) {
  std::uniform_int_distribution<int> pick(0, depth > 0 ? 4 : 1);
  std::uniform_real_distribution<double> num(0.0, 10.0);
  static const char ops[] = {'+', '-', '*', '/', '^'};
  static const char* names[] = {"x1", "x2", "v1", "lambda"};
  switch (pick(rng)) {
    case 0:
      return literal(std::round(num(rng) * 1000.0) / 1000.0);
    case 1:
      return variable(names[rng() % 4]);
    case 2:
      return negate(random_tree(rng, depth - 1));
    case 3:
      return binary(ops[rng() % 5], random_tree(rng, depth - 1), random_tree(rng, depth - 1));
    default:
      return call(static_cast<Func>(rng() % 7), random_tree(rng, depth - 1));
  }
}

}  // namespace

TEST_CASE("precedence and associativity") {
  CHECK(eval_str("2^3^2") == 512.0);
  CHECK(eval_str("-2^2") == -4.0);
  CHECK(eval_str("1+2*3") == 7.0);
  CHECK(eval_str("(1+2)*3") == 9.0);
  CHECK(eval_str("8/4/2") == 1.0);
  CHECK(eval_str("2^-1") == 0.5);
  CHECK(eval_str("1e-3*1000") == Catch::Approx(1.0));
}

TEST_CASE("variables and functions") {
  std::map<std::string, double> b{{"x1", 0.3}, {"v1", -2.0}};
  CHECK(eval_str("sin(x1)^2 + cos(x1)^2", b) == Catch::Approx(1.0));
  CHECK(eval_str("abs(v1)*exp(0)", b) == 2.0);
  CHECK(eval_str("tanh(0) + log(1) + sqrt(4)", b) == 2.0);
  CHECK(free_variables(*parse("x1*v2 + sin(x1)")) == std::set<std::string>{"v2", "x1"});
}

TEST_CASE("domain errors give NaN") {
  CHECK(std::isnan(eval_str("sqrt(-1)")));
  CHECK(std::isnan(eval_str("log(-1)")));
}

TEST_CASE("unbound names and malformed input throw") {
  CHECK_THROWS_AS(eval_str("x3 + 1", {{"x1", 0.0}}), UnboundVariable);
  CHECK_THROWS_AS(parse("1 +"), ParseError);
  CHECK_THROWS_AS(parse("sin 1"), ParseError);
  CHECK_THROWS_AS(parse("(1"), ParseError);
  CHECK_THROWS_AS(parse("1 2"), ParseError);
  CHECK_THROWS_AS(parse("foo(1)"), ParseError);
  try {
    parse("1 + * 2");
    FAIL("no throw");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 4);
  }
}

TEST_CASE("compiled program matches the tree walker") {
  auto e = parse("-0.5*v1 + sin(x1)*lambda^2 - x2/3");
  Program p = compile(*e, {"x1", "x2", "v1"}, {{"lambda", 1.5}});
  std::vector<double> slots{0.7, -1.2, 2.5};
  std::map<std::string, double> b{{"x1", 0.7}, {"x2", -1.2}, {"v1", 2.5}, {"lambda", 1.5}};
  CHECK(p(slots) == Catch::Approx(eval(*e, b)).epsilon(1e-15));
  CHECK(compile(*parse("2*pi"), {}, {{"pi", M_PI}}).is_constant());
  CHECK_THROWS_AS(compile(*e, {"x1"}), UnboundVariable);
}

TEST_CASE("print round-trips random trees") {
  std::mt19937_64 rng(20261016);
  for (int i = 0; i < 1000; ++i) {
    ExprPtr e = random_tree(rng, 5);
    std::string text = print(*e);
    ExprPtr back = parse(text);
    INFO(text);
    REQUIRE(structurally_equal(*e, *back));
    CHECK(print(*back) == text);
  }
}
