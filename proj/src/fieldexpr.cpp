#include "vbcalc/fieldexpr.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace vbc::expr {

namespace {

struct FuncEntry {
  const char* name;
  Func func;
};

constexpr std::array<FuncEntry, 7> kFunctions{{{"sin", Func::Sin},
                                               {"cos", Func::Cos},
                                               {"exp", Func::Exp},
                                               {"log", Func::Log},
                                               {"sqrt", Func::Sqrt},
                                               {"abs", Func::Abs},
                                               {"tanh", Func::Tanh}}};

double apply(Func f, double a) {
  switch (f) {
    case Func::Sin: return std::sin(a);
    case Func::Cos: return std::cos(a);
    case Func::Exp: return std::exp(a);
    case Func::Log: return std::log(a);
    case Func::Sqrt: return std::sqrt(a);
    case Func::Abs: return std::abs(a);
    case Func::Tanh: return std::tanh(a);
  }
  return std::nan("");
}

double apply(char op, double a, double b) {
  switch (op) {
    case '+': return a + b;
    case '-': return a - b;
    case '*': return a * b;
    case '/': return a / b;
    case '^': return std::pow(a, b);
  }
  return std::nan("");
}

class Parser {
 public:
  explicit Parser(std::string_view src) : src_(src) {}

  ExprPtr parse_all() {
    ExprPtr e = parse_expr();
    skip_ws();
    if (pos_ != src_.size()) fail("expected operator or end of input");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    std::string found = pos_ < src_.size() ? std::string("'") + src_[pos_] + "'" : "end of input";
    throw ParseError(pos_, what + ", found " + found);
  }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  ExprPtr parse_expr() {
    ExprPtr lhs = parse_term();
    for (;;) {
      if (accept('+')) {
        lhs = binary('+', lhs, parse_term());
      } else if (accept('-')) {
        lhs = binary('-', lhs, parse_term());
      } else {
        return lhs;
      }
    }
  }

  ExprPtr parse_term() {
    ExprPtr lhs = parse_unary();
    for (;;) {
      if (accept('*')) {
        lhs = binary('*', lhs, parse_unary());
      } else if (accept('/')) {
        lhs = binary('/', lhs, parse_unary());
      } else {
        return lhs;
      }
    }
  }

  ExprPtr parse_unary() {
    if (accept('-')) return negate(parse_unary());
    if (accept('+')) return parse_unary();
    return parse_power();
  }

  ExprPtr parse_power() {
    ExprPtr base = parse_primary();
    if (accept('^')) return binary('^', base, parse_unary());
    return base;
  }

  ExprPtr parse_primary() {
    skip_ws();
    if (pos_ >= src_.size()) fail("expected number, name or '('");
    char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      ExprPtr inner = parse_expr();
      if (!accept(')')) fail("expected ')'");
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
        ++pos_;
      std::string name(src_.substr(start, pos_ - start));
      skip_ws();
      if (pos_ < src_.size() && src_[pos_] == '(') {
        const FuncEntry* entry = nullptr;
        for (const auto& f : kFunctions)
          if (name == f.name) entry = &f;
        if (!entry) throw ParseError(start, "unknown function '" + name + "'");
        ++pos_;
        ExprPtr arg = parse_expr();
        if (!accept(')')) fail("expected ')' after function argument");
        return call(entry->func, arg);
      }
      return variable(std::move(name));
    }
    fail("expected number, name or '('");
  }

  ExprPtr parse_number() {
    std::size_t start = pos_;
    auto digits = [&] {
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    };
    digits();
    if (pos_ < src_.size() && src_[pos_] == '.') {
      ++pos_;
      digits();
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t save = pos_++;
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
      if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        digits();
      } else {
        pos_ = save;
      }
    }
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(src_.data() + start, src_.data() + pos_, v);
    if (ec != std::errc() || ptr != src_.data() + pos_) {
      pos_ = start;
      fail("malformed number");
    }
    return literal(v);
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

void collect(const Expr& e, std::set<std::string>& out) {
  if (e.kind == Expr::Kind::Variable) out.insert(e.name);
  if (e.lhs) collect(*e.lhs, out);
  if (e.rhs) collect(*e.rhs, out);
}

std::size_t emit(const Expr& e, const std::vector<std::string>& slots,
                 const std::map<std::string, double>& constants,
                 std::vector<Program::Instr>& code) {
  using Code = Program::Code;
  switch (e.kind) {
    case Expr::Kind::Literal:
      code.push_back({Code::Push, e.value});
      return 1;
    case Expr::Kind::Variable: {
      for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i] == e.name) {
          code.push_back({Code::Load, 0.0, static_cast<int>(i)});
          return 1;
        }
      }
      auto it = constants.find(e.name);
      if (it == constants.end()) throw UnboundVariable(e.name);
      code.push_back({Code::Push, it->second});
      return 1;
    }
    case Expr::Kind::Negate: {
      std::size_t d = emit(*e.lhs, slots, constants, code);
      if (code.back().code == Code::Push) {
        code.back().value = -code.back().value;
      } else {
        code.push_back({Code::Neg});
      }
      return d;
    }
    case Expr::Kind::Call: {
      std::size_t d = emit(*e.lhs, slots, constants, code);
      if (code.back().code == Code::Push) {
        code.back().value = apply(e.func, code.back().value);
      } else {
        code.push_back({Code::Call, 0.0, 0, e.func});
      }
      return d;
    }
    case Expr::Kind::Binary: {
      std::size_t dl = emit(*e.lhs, slots, constants, code);
      std::size_t dr = emit(*e.rhs, slots, constants, code);
      const std::size_t n = code.size();
      if (code[n - 1].code == Code::Push && code[n - 2].code == Code::Push) {
        double v = apply(e.op, code[n - 2].value, code[n - 1].value);
        code.pop_back();
        code.back().value = v;
        return 1;
      }
      Code c = Code::Add;
      switch (e.op) {
        case '+': c = Code::Add; break;
        case '-': c = Code::Sub; break;
        case '*': c = Code::Mul; break;
        case '/': c = Code::Div; break;
        case '^': c = Code::Pow; break;
      }
      code.push_back({c});
      return std::max(dl, dr + 1);
    }
  }
  return 0;
}

}  // namespace

ParseError::ParseError(std::size_t offset, const std::string& message)
    : std::runtime_error("parse error at offset " + std::to_string(offset) + ": " + message),
      offset_(offset) {}

UnboundVariable::UnboundVariable(const std::string& name)
    : std::runtime_error("unbound variable '" + name + "'"), name_(name) {}

ExprPtr literal(double value) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::Literal;
  e->value = value;
  return e;
}

ExprPtr variable(std::string name) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::Variable;
  e->name = std::move(name);
  return e;
}

ExprPtr negate(ExprPtr operand) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::Negate;
  e->lhs = std::move(operand);
  return e;
}

ExprPtr binary(char op, ExprPtr lhs, ExprPtr rhs) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::Binary;
  e->op = op;
  e->lhs = std::move(lhs);
  e->rhs = std::move(rhs);
  return e;
}

ExprPtr call(Func func, ExprPtr operand) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::Call;
  e->func = func;
  e->lhs = std::move(operand);
  return e;
}

ExprPtr parse(std::string_view source) { return Parser(source).parse_all(); }

const char* function_name(Func f) {
  for (const auto& entry : kFunctions)
    if (entry.func == f) return entry.name;
  return "?";
}

std::string print(const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::Literal: {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", std::abs(e.value));
      return e.value < 0 ? std::string("(-") + buf + ")" : std::string(buf);
    }
    case Expr::Kind::Variable:
      return e.name;
    case Expr::Kind::Negate: {
      const bool wrap = e.lhs->kind == Expr::Kind::Binary;
      return wrap ? "-(" + print(*e.lhs) + ")" : "-" + print(*e.lhs);
    }
    case Expr::Kind::Call:
      return std::string(function_name(e.func)) + "(" + print(*e.lhs) + ")";
    case Expr::Kind::Binary: {
      auto operand = [](const Expr& x) {
        return x.kind == Expr::Kind::Negate ? "(" + print(x) + ")" : print(x);
      };
      return "(" + operand(*e.lhs) + " " + e.op + " " + operand(*e.rhs) + ")";
    }
  }
  return {};
}

bool structurally_equal(const Expr& a, const Expr& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case Expr::Kind::Literal:
      return a.value == b.value || (std::isnan(a.value) && std::isnan(b.value));
    case Expr::Kind::Variable:
      return a.name == b.name;
    case Expr::Kind::Negate:
      return structurally_equal(*a.lhs, *b.lhs);
    case Expr::Kind::Call:
      return a.func == b.func && structurally_equal(*a.lhs, *b.lhs);
    case Expr::Kind::Binary:
      return a.op == b.op && structurally_equal(*a.lhs, *b.lhs) &&
             structurally_equal(*a.rhs, *b.rhs);
  }
  return false;
}

std::set<std::string> free_variables(const Expr& e) {
  std::set<std::string> out;
  collect(e, out);
  return out;
}

double eval(const Expr& e, const std::map<std::string, double>& bindings) {
  switch (e.kind) {
    case Expr::Kind::Literal:
      return e.value;
    case Expr::Kind::Variable: {
      auto it = bindings.find(e.name);
      if (it == bindings.end()) throw UnboundVariable(e.name);
      return it->second;
    }
    case Expr::Kind::Negate:
      return -eval(*e.lhs, bindings);
    case Expr::Kind::Call:
      return apply(e.func, eval(*e.lhs, bindings));
    case Expr::Kind::Binary:
      return apply(e.op, eval(*e.lhs, bindings), eval(*e.rhs, bindings));
  }
  return std::nan("");
}

Program compile(const Expr& e, const std::vector<std::string>& slots,
                const std::map<std::string, double>& constants) {
  Program p;
  p.depth_ = emit(e, slots, constants, p.code_);
  return p;
}

double Program::run(std::span<const double> slots, std::span<double> stack) const {
  std::size_t top = 0;
  for (const Instr& in : code_) {
    switch (in.code) {
      case Code::Push: stack[top++] = in.value; break;
      case Code::Load: stack[top++] = slots[in.slot]; break;
      case Code::Neg: stack[top - 1] = -stack[top - 1]; break;
      case Code::Call: stack[top - 1] = apply(in.func, stack[top - 1]); break;
      case Code::Add: --top; stack[top - 1] += stack[top]; break;
      case Code::Sub: --top; stack[top - 1] -= stack[top]; break;
      case Code::Mul: --top; stack[top - 1] *= stack[top]; break;
      case Code::Div: --top; stack[top - 1] /= stack[top]; break;
      case Code::Pow: --top; stack[top - 1] = std::pow(stack[top - 1], stack[top]); break;
    }
  }
  return top ? stack[0] : std::nan("");
}

double Program::operator()(std::span<const double> slots) const {
  if (depth_ <= 32) {
    std::array<double, 32> stack;
    return run(slots, stack);
  }
  std::vector<double> stack(depth_);
  return run(slots, stack);
}

}  // namespace vbc::expr
