#include <catch2/catch_amalgamated.hpp>

#include "amorgp/grammar.hpp"
#include "amorgp/rng.hpp"
#include "test_util.hpp"

using namespace amorgp;

TEST_CASE("parse handles the two-dimensional product expression", "[grammar]") {
  const auto expr = parse("(SExLIN_1 + SE_1) * (SE_2 + PER_2)");
  REQUIRE(expr.d() == 2);
  REQUIRE(expr.dims[0] ==
          std::vector<BaseSymbol>{BaseSymbol::SE_LIN, BaseSymbol::SE});
  REQUIRE(expr.dims[1] ==
          std::vector<BaseSymbol>{BaseSymbol::SE, BaseSymbol::PER});
}

TEST_CASE("parse minimal and ARD expressions", "[grammar]") {
  const auto one = parse("SE_1");
  REQUIRE(one.d() == 1);
  REQUIRE(one.dims[0] == std::vector<BaseSymbol>{BaseSymbol::SE});

  const auto ard = parse("SE_1 * SE_2 * SE_3");
  REQUIRE(ard.d() == 3);
  for (const auto& addends : ard.dims)
    REQUIRE(addends == std::vector<BaseSymbol>{BaseSymbol::SE});
}

TEST_CASE("parse accepts out-of-order dimension indices", "[grammar]") {
  const auto expr = parse("PER_2 * SE_1");
  REQUIRE(expr.dims[0] == std::vector<BaseSymbol>{BaseSymbol::SE});
  REQUIRE(expr.dims[1] == std::vector<BaseSymbol>{BaseSymbol::PER});
}

TEST_CASE("parse error paths", "[grammar]") {
  REQUIRE_THROWS_AS(parse("SE_1 +"), ParseError);
  REQUIRE_THROWS_AS(parse("(SE_1 + PER_2)"), ParseError);      // mixed index
  REQUIRE_THROWS_AS(parse("SE_1 * SE_3"), ParseError);         // missing dim 2
  REQUIRE_THROWS_AS(parse("SE_1 * PER_1"), ParseError);        // duplicate dim
  REQUIRE_THROWS_AS(parse("FOO_1"), ParseError);               // unknown symbol
  REQUIRE_THROWS_AS(parse("SE1"), ParseError);                 // missing index
  REQUIRE_THROWS_AS(parse(""), ParseError);
  REQUIRE_THROWS_AS(parse("SE_0"), ParseError);

  try {
    parse("SE_1 * (SE_2 + WAT_2)");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    REQUIRE(e.pos > 0);  // error carries a position
  }
}

TEST_CASE("format produces canonical text", "[grammar]") {
  REQUIRE(format(KernelExpression{{{BaseSymbol::SE}}}) == "SE_1");
  REQUIRE(format(KernelExpression{{{BaseSymbol::SE_LIN, BaseSymbol::SE},
                                   {BaseSymbol::SE, BaseSymbol::PER}}}) ==
          "(SExLIN_1 + SE_1) * (SE_2 + PER_2)");
  REQUIRE(format(KernelExpression{{{BaseSymbol::PER}, {BaseSymbol::PER}}}) ==
          "PER_1 * PER_2");
}

TEST_CASE("parse/format round-trip over random expressions", "[grammar]") {
  Rng rng(20240601);
  for (int i = 0; i < 1000; ++i) {
    const auto expr = testutil::random_expression(rng, rng.uniform_int(1, 6), 4);
    REQUIRE(parse(format(expr)) == expr);
  }
}

TEST_CASE("param_dim matches symbol arities", "[grammar]") {
  KernelExpression ard4{{{BaseSymbol::SE},
                         {BaseSymbol::SE},
                         {BaseSymbol::SE},
                         {BaseSymbol::SE}}};
  REQUIRE(param_dim(ard4) == 8);

  KernelExpression per3{{{BaseSymbol::PER}, {BaseSymbol::PER}, {BaseSymbol::PER}}};
  REQUIRE(param_dim(per3) == 9);

  const auto eq3 = parse("(SExLIN_1 + SE_1) * (SE_2 + PER_2)");
  REQUIRE(param_dim(eq3) == 11);  // (4+2) + (2+3)

  // Additivity over dimensions and addends.
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto expr = testutil::random_expression(rng, rng.uniform_int(1, 5));
    int sum = 0;
    for (const auto& addends : expr.dims)
      for (BaseSymbol s : addends) sum += param_dim(KernelExpression{{{s}}});
    REQUIRE(param_dim(expr) == sum);
  }
}

TEST_CASE("one-hot encoding uses the frozen slot order", "[grammar]") {
  const auto one = encode_one_hot(KernelExpression{{{BaseSymbol::SE}}});
  REQUIRE(one.size() == 1);
  REQUIRE(one[0].size() == 1);
  REQUIRE(one[0][0] == std::array<double, 6>{1, 0, 0, 0, 0, 0});

  const auto two =
      encode_one_hot(KernelExpression{{{BaseSymbol::SE, BaseSymbol::PER}}});
  REQUIRE(two[0][0] == std::array<double, 6>{1, 0, 0, 0, 0, 0});
  REQUIRE(two[0][1] == std::array<double, 6>{0, 0, 1, 0, 0, 0});

  const auto eq3 = encode_one_hot(parse("(SExLIN_1 + SE_1) * (SE_2 + PER_2)"));
  REQUIRE(eq3.size() == 2);
  REQUIRE(eq3[0].size() == 2);
  REQUIRE(eq3[1].size() == 2);
  REQUIRE(eq3[0][0][3] == 1.0);  // SExLIN slot
  REQUIRE(eq3[0][1][0] == 1.0);  // SE slot
  REQUIRE(eq3[1][0][0] == 1.0);
  REQUIRE(eq3[1][1][2] == 1.0);  // PER slot
}

TEST_CASE("one-hot rows sum to one and lengths mirror the expression",
          "[grammar]") {
  Rng rng(99);
  for (int i = 0; i < 200; ++i) {
    const auto expr = testutil::random_expression(rng, rng.uniform_int(1, 5));
    const auto enc = encode_one_hot(expr);
    REQUIRE(enc.size() == expr.dims.size());
    for (std::size_t d = 0; d < enc.size(); ++d) {
      REQUIRE(enc[d].size() == expr.dims[d].size());
      for (const auto& row : enc[d]) {
        double total = 0.0;
        for (double v : row) total += v;
        REQUIRE(total == 1.0);
      }
    }
  }
}

TEST_CASE("expression JSON form round-trips", "[grammar]") {
  const auto expr = parse("(LINxPER_1 + SE_1) * SExPER_2");
  const auto j = expression_to_json(expr);
  REQUIRE(j["dims"][0][0] == "LINxPER");
  REQUIRE(expression_from_json(j) == expr);
}
