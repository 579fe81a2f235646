#ifndef VBCALC_FIELDEXPR_HPP
#define VBCALC_FIELDEXPR_HPP

// Small arithmetic expression language used to define fields in scene files.
//
// Grammar (lowest to highest precedence):
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | power
//   power   := primary ('^' unary)?          // right associative
//   primary := number | name | name '(' expr ')' | '(' expr ')'
//
// Functions: sin cos exp log sqrt abs tanh. Names not followed by '(' are
// variables (x1..xd, v1..vn) or scene parameters.

#include <cstddef>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vbc::expr {

enum class Func { Sin, Cos, Exp, Log, Sqrt, Abs, Tanh };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  enum class Kind { Literal, Variable, Negate, Binary, Call };

  Kind kind = Kind::Literal;
  double value = 0.0;  // Literal
  std::string name;    // Variable
  char op = 0;         // Binary: + - * / ^
  Func func = Func::Sin;
  ExprPtr lhs;  // Negate / Call operand, Binary left
  ExprPtr rhs;  // Binary right
};

ExprPtr literal(double value);
ExprPtr variable(std::string name);
ExprPtr negate(ExprPtr operand);
ExprPtr binary(char op, ExprPtr lhs, ExprPtr rhs);
ExprPtr call(Func func, ExprPtr operand);

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t offset, const std::string& message);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class UnboundVariable : public std::runtime_error {
 public:
  explicit UnboundVariable(const std::string& name);
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

ExprPtr parse(std::string_view source);

/// Source text that parses back to the same tree.
std::string print(const Expr& e);

bool structurally_equal(const Expr& a, const Expr& b);

std::set<std::string> free_variables(const Expr& e);

const char* function_name(Func f);

/// Tree-walking evaluation. Domain errors (log of a negative number, ...)
/// propagate as NaN; an unbound name throws UnboundVariable.
double eval(const Expr& e, const std::map<std::string, double>& bindings);

/// Flat postfix program with variables resolved to slot indices and
/// constants folded in. Immutable; run() needs only caller scratch space.
class Program {
 public:
  enum class Code { Push, Load, Neg, Add, Sub, Mul, Div, Pow, Call };
  struct Instr {
    Code code;
    double value = 0.0;
    int slot = 0;
    Func func = Func::Sin;
  };

  Program() = default;

  double run(std::span<const double> slots, std::span<double> stack) const;
  double operator()(std::span<const double> slots) const;

  std::size_t stack_depth() const { return depth_; }
  bool is_constant() const { return code_.size() == 1 && code_[0].code == Code::Push; }
  const std::vector<Instr>& code() const { return code_; }

 private:
  friend Program compile(const Expr&, const std::vector<std::string>&,
                         const std::map<std::string, double>&);
  std::vector<Instr> code_;
  std::size_t depth_ = 0;
};

/// Resolve names first against `slots` (runtime variables), then against
/// `constants` (folded in). Throws UnboundVariable for anything else.
Program compile(const Expr& e, const std::vector<std::string>& slots,
                const std::map<std::string, double>& constants = {});

}  // namespace vbc::expr

#endif  // VBCALC_FIELDEXPR_HPP
