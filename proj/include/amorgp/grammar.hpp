#pragma once

// Symbolic kernel expressions: a product over input dimensions of sums of
// indexed base symbols. This header owns the symbol corpus, the text syntax,
// the one-hot encoding and the parameter-space bookkeeping.
//
// Surface syntax:
//   expr    := dimterm ('*' dimterm)*
//   dimterm := '(' sum ')' | base
//   sum     := base ('+' base)*
//   base    := SYMBOL '_' INDEX
// with SYMBOL in {SE, LIN, PER, SExLIN, SExPER, LINxPER}. All bases inside
// one dimterm carry the same index, and indices 1..d each appear exactly once.

#include <array>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace amorgp {

// Slot order is frozen; one-hot encodings and checkpoint files depend on it.
enum class BaseSymbol : int {
  SE = 0,
  LIN = 1,
  PER = 2,
  SE_LIN = 3,
  SE_PER = 4,
  LIN_PER = 5,
};

inline constexpr int kNumBaseSymbols = 6;

inline constexpr std::array<BaseSymbol, kNumBaseSymbols> kAllBaseSymbols = {
    BaseSymbol::SE,     BaseSymbol::LIN,    BaseSymbol::PER,
    BaseSymbol::SE_LIN, BaseSymbol::SE_PER, BaseSymbol::LIN_PER,
};

constexpr int arity(BaseSymbol s) {
  switch (s) {
    case BaseSymbol::SE: return 2;
    case BaseSymbol::LIN: return 2;
    case BaseSymbol::PER: return 3;
    case BaseSymbol::SE_LIN: return 4;
    case BaseSymbol::SE_PER: return 5;
    case BaseSymbol::LIN_PER: return 5;
  }
  return 0;
}

constexpr std::string_view symbol_name(BaseSymbol s) {
  switch (s) {
    case BaseSymbol::SE: return "SE";
    case BaseSymbol::LIN: return "LIN";
    case BaseSymbol::PER: return "PER";
    case BaseSymbol::SE_LIN: return "SExLIN";
    case BaseSymbol::SE_PER: return "SExPER";
    case BaseSymbol::LIN_PER: return "LINxPER";
  }
  return "?";
}

inline bool symbol_from_name(std::string_view name, BaseSymbol& out) {
  for (BaseSymbol s : kAllBaseSymbols) {
    if (symbol_name(s) == name) {
      out = s;
      return true;
    }
  }
  return false;
}

// Role of each hyperparameter slot; the sampler and the MAP priors key off it.
enum class ParamRole { Variance, Offset, Period, Lengthscale };

inline std::span<const ParamRole> param_roles(BaseSymbol s) {
  using R = ParamRole;
  static constexpr std::array<R, 2> se{R::Variance, R::Lengthscale};
  static constexpr std::array<R, 2> lin{R::Variance, R::Offset};
  static constexpr std::array<R, 3> per{R::Variance, R::Period, R::Lengthscale};
  static constexpr std::array<R, 4> se_lin{R::Variance, R::Lengthscale,
                                           R::Variance, R::Offset};
  static constexpr std::array<R, 5> se_per{R::Variance, R::Lengthscale,
                                           R::Variance, R::Period,
                                           R::Lengthscale};
  static constexpr std::array<R, 5> lin_per{R::Variance, R::Offset,
                                            R::Variance, R::Period,
                                            R::Lengthscale};
  switch (s) {
    case BaseSymbol::SE: return se;
    case BaseSymbol::LIN: return lin;
    case BaseSymbol::PER: return per;
    case BaseSymbol::SE_LIN: return se_lin;
    case BaseSymbol::SE_PER: return se_per;
    case BaseSymbol::LIN_PER: return lin_per;
  }
  return {};
}

inline std::span<const std::string_view> param_names(BaseSymbol s) {
  using sv = std::string_view;
  static constexpr std::array<sv, 2> se{"variance", "lengthscale"};
  static constexpr std::array<sv, 2> lin{"variance", "offset"};
  static constexpr std::array<sv, 3> per{"variance", "period", "lengthscale"};
  static constexpr std::array<sv, 4> se_lin{"se_variance", "se_lengthscale",
                                            "lin_variance", "lin_offset"};
  static constexpr std::array<sv, 5> se_per{"se_variance", "se_lengthscale",
                                            "per_variance", "per_period",
                                            "per_lengthscale"};
  static constexpr std::array<sv, 5> lin_per{"lin_variance", "lin_offset",
                                             "per_variance", "per_period",
                                             "per_lengthscale"};
  switch (s) {
    case BaseSymbol::SE: return se;
    case BaseSymbol::LIN: return lin;
    case BaseSymbol::PER: return per;
    case BaseSymbol::SE_LIN: return se_lin;
    case BaseSymbol::SE_PER: return se_per;
    case BaseSymbol::LIN_PER: return lin_per;
  }
  return {};
}

/// Product over dimensions of sums of base symbols. dims[i] holds the addends
/// acting on input dimension i (0-based internally, 1-based in the syntax).
struct KernelExpression {
  std::vector<std::vector<BaseSymbol>> dims;

  int d() const { return static_cast<int>(dims.size()); }

  int num_addends(int dim) const { return static_cast<int>(dims[dim].size()); }

  bool operator==(const KernelExpression&) const = default;

  void validate() const {
    if (dims.empty()) throw std::invalid_argument("expression has no dimensions");
    for (const auto& addends : dims)
      if (addends.empty())
        throw std::invalid_argument("expression has an empty dimension term");
  }
};

/// Total hyperparameter count dim(Theta_S).
inline int param_dim(const KernelExpression& expr) {
  int total = 0;
  for (const auto& addends : expr.dims)
    for (BaseSymbol s : addends) total += arity(s);
  return total;
}

/// One-hot rows per addend, mirroring the expression's shape.
inline std::vector<std::vector<std::array<double, kNumBaseSymbols>>>
encode_one_hot(const KernelExpression& expr) {
  std::vector<std::vector<std::array<double, kNumBaseSymbols>>> out;
  out.reserve(expr.dims.size());
  for (const auto& addends : expr.dims) {
    auto& rows = out.emplace_back();
    rows.reserve(addends.size());
    for (BaseSymbol s : addends) {
      std::array<double, kNumBaseSymbols> row{};
      row[static_cast<int>(s)] = 1.0;
      rows.push_back(row);
    }
  }
  return out;
}

struct ParseError : std::invalid_argument {
  ParseError(const std::string& message, std::size_t position)
      : std::invalid_argument(message + " (at position " +
                              std::to_string(position) + ")"),
        pos(position) {}
  std::size_t pos;
};

namespace detail {

class ExprParser {
 public:
  explicit ExprParser(std::string_view text) : text_(text) {}

  KernelExpression parse() {
    // index -> addends, filled as dimterms arrive
    std::vector<std::pair<int, std::vector<BaseSymbol>>> terms;
    terms.push_back(parse_dimterm());
    skip_ws();
    while (!at_end()) {
      expect('*');
      terms.push_back(parse_dimterm());
      skip_ws();
    }
    int d = 0;
    for (const auto& [idx, _] : terms) d = std::max(d, idx);
    KernelExpression expr;
    expr.dims.resize(d);
    for (auto& [idx, addends] : terms) {
      if (!expr.dims[idx - 1].empty())
        throw ParseError("duplicated dimension index " + std::to_string(idx),
                         pos_);
      expr.dims[idx - 1] = std::move(addends);
    }
    for (int i = 0; i < d; ++i)
      if (expr.dims[i].empty())
        throw ParseError("missing dimension index " + std::to_string(i + 1),
                         pos_);
    return expr;
  }

 private:
  std::pair<int, std::vector<BaseSymbol>> parse_dimterm() {
    skip_ws();
    std::vector<BaseSymbol> addends;
    int index = 0;
    if (peek() == '(') {
      ++pos_;
      auto [sym, idx] = parse_base();
      index = idx;
      addends.push_back(sym);
      skip_ws();
      while (peek() == '+') {
        ++pos_;
        auto [sym2, idx2] = parse_base();
        if (idx2 != index)
          throw ParseError("mixed dimension indices inside one term (" +
                               std::to_string(index) + " vs " +
                               std::to_string(idx2) + ")",
                           pos_);
        addends.push_back(sym2);
        skip_ws();
      }
      expect(')');
    } else {
      auto [sym, idx] = parse_base();
      index = idx;
      addends.push_back(sym);
    }
    return {index, std::move(addends)};
  }

  std::pair<BaseSymbol, int> parse_base() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) ||
            text_[pos_] == '_'))
      ++pos_;
    if (pos_ == start) throw ParseError("expected a base symbol", pos_);
    const std::string_view token = text_.substr(start, pos_ - start);
    const auto underscore = token.rfind('_');
    if (underscore == std::string_view::npos)
      throw ParseError("base symbol missing '_<index>'", start);
    const std::string_view name = token.substr(0, underscore);
    const std::string_view digits = token.substr(underscore + 1);
    BaseSymbol sym;
    if (!symbol_from_name(name, sym))
      throw ParseError("unknown symbol '" + std::string(name) + "'", start);
    if (digits.empty()) throw ParseError("missing dimension index", start);
    int idx = 0;
    for (char c : digits) {
      if (!std::isdigit(static_cast<unsigned char>(c)))
        throw ParseError("malformed dimension index", start);
      idx = idx * 10 + (c - '0');
      if (idx > 1'000'000) throw ParseError("dimension index out of range", start);
    }
    if (idx < 1) throw ParseError("dimension index must be >= 1", start);
    return {sym, idx};
  }

  void expect(char c) {
    skip_ws();
    if (at_end() || text_[pos_] != c)
      throw ParseError(std::string("expected '") + c + "'", pos_);
    ++pos_;
  }

  char peek() {
    skip_ws();
    return at_end() ? '\0' : text_[pos_];
  }

  void skip_ws() {
    while (pos_ < text_.size() &&
           std::isspace(static_cast<unsigned char>(text_[pos_])))
      ++pos_;
  }

  bool at_end() const { return pos_ >= text_.size(); }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline KernelExpression parse(std::string_view text) {
  detail::ExprParser parser(text);
  KernelExpression expr = parser.parse();
  expr.validate();
  return expr;
}

/// Canonical text: dimensions in index order, parenthesized iff N_i > 1.
inline std::string format(const KernelExpression& expr) {
  expr.validate();
  std::ostringstream out;
  for (int i = 0; i < expr.d(); ++i) {
    if (i > 0) out << " * ";
    const auto& addends = expr.dims[i];
    const bool parens = addends.size() > 1;
    if (parens) out << '(';
    for (std::size_t j = 0; j < addends.size(); ++j) {
      if (j > 0) out << " + ";
      out << symbol_name(addends[j]) << '_' << (i + 1);
    }
    if (parens) out << ')';
  }
  return out.str();
}

inline nlohmann::json expression_to_json(const KernelExpression& expr) {
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& addends : expr.dims) {
    nlohmann::json row = nlohmann::json::array();
    for (BaseSymbol s : addends) row.push_back(std::string(symbol_name(s)));
    dims.push_back(std::move(row));
  }
  return nlohmann::json{{"dims", std::move(dims)}};
}

inline KernelExpression expression_from_json(const nlohmann::json& j) {
  KernelExpression expr;
  for (const auto& row : j.at("dims")) {
    auto& addends = expr.dims.emplace_back();
    for (const auto& name : row) {
      BaseSymbol s;
      if (!symbol_from_name(name.get<std::string>(), s))
        throw std::invalid_argument("unknown symbol tag '" +
                                    name.get<std::string>() + "'");
      addends.push_back(s);
    }
  }
  expr.validate();
  return expr;
}

}  // namespace amorgp
