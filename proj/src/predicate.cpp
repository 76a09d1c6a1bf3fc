#include "transport/predicate.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <variant>

#include "transport/error.hpp"

namespace transport {

enum class CompareOp { Less, LessEq, Greater, GreaterEq, Equal, NotEqual };

struct Predicate::Node {
  struct And {
    std::shared_ptr<const Node> lhs, rhs;
  };
  struct Or {
    std::shared_ptr<const Node> lhs, rhs;
  };
  struct Not {
    std::shared_ptr<const Node> operand;
  };
  struct Compare {
    std::string covariate;
    CompareOp op;
    std::string literal;
  };
  struct In {
    std::string covariate;
    std::vector<std::string> labels;
  };
  std::variant<And, Or, Not, Compare, In> value;
};

namespace {

using NodePtr = std::shared_ptr<const Predicate::Node>;

struct Token {
  enum Kind { Word, Quoted, Op, LParen, RParen, LBrace, RBrace, Comma, End } kind;
  std::string text;
};

bool word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-' || c == '+';
}

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == '(') {
      out.push_back({Token::LParen, "("}), ++i;
    } else if (c == ')') {
      out.push_back({Token::RParen, ")"}), ++i;
    } else if (c == '{') {
      out.push_back({Token::LBrace, "{"}), ++i;
    } else if (c == '}') {
      out.push_back({Token::RBrace, "}"}), ++i;
    } else if (c == ',') {
      out.push_back({Token::Comma, ","}), ++i;
    } else if (c == '<' || c == '>' || c == '=' || c == '!') {
      std::string op(1, c);
      if (i + 1 < s.size() && s[i + 1] == '=') op += '=';
      if (op == "=" || op == "!") throw Error("predicate: unexpected '" + op + "'");
      out.push_back({Token::Op, op});
      i += op.size();
    } else if (c == '"' || c == '\'') {
      const auto close = s.find(c, i + 1);
      if (close == std::string_view::npos) throw Error("predicate: unterminated string");
      out.push_back({Token::Quoted, std::string(s.substr(i + 1, close - i - 1))});
      i = close + 1;
    } else if (word_char(c)) {
      std::size_t j = i;
      while (j < s.size() && word_char(s[j])) ++j;
      out.push_back({Token::Word, std::string(s.substr(i, j - i))});
      i = j;
    } else {
      throw Error(std::string("predicate: unexpected character '") + c + "'");
    }
  }
  out.push_back({Token::End, ""});
  return out;
}

bool keyword(const Token& t, std::string_view kw) {
  if (t.kind != Token::Word || t.text.size() != kw.size()) return false;
  for (std::size_t i = 0; i < kw.size(); ++i) {
    if (std::toupper(static_cast<unsigned char>(t.text[i])) != kw[i]) return false;
  }
  return true;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

  NodePtr parse() {
    auto node = parse_or();
    if (peek().kind != Token::End) throw Error("predicate: unexpected '" + peek().text + "'");
    return node;
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  Token take() { return tokens_[pos_++]; }

  static NodePtr make(auto value) {
    return std::make_shared<const Predicate::Node>(Predicate::Node{std::move(value)});
  }

  NodePtr parse_or() {
    auto lhs = parse_and();
    while (keyword(peek(), "OR")) {
      take();
      lhs = make(Predicate::Node::Or{lhs, parse_and()});
    }
    return lhs;
  }

  NodePtr parse_and() {
    auto lhs = parse_unary();
    while (keyword(peek(), "AND")) {
      take();
      lhs = make(Predicate::Node::And{lhs, parse_unary()});
    }
    return lhs;
  }

  NodePtr parse_unary() {
    if (keyword(peek(), "NOT")) {
      take();
      return make(Predicate::Node::Not{parse_unary()});
    }
    if (peek().kind == Token::LParen) {
      take();
      auto inner = parse_or();
      if (take().kind != Token::RParen) throw Error("predicate: expected ')'");
      return inner;
    }
    return parse_comparison();
  }

  std::string literal() {
    const auto t = take();
    if (t.kind != Token::Word && t.kind != Token::Quoted) {
      throw Error("predicate: expected a value, got '" + t.text + "'");
    }
    return t.text;
  }

  NodePtr parse_comparison() {
    const auto name = take();
    if (name.kind != Token::Word && name.kind != Token::Quoted) {
      throw Error("predicate: expected a covariate name, got '" + name.text + "'");
    }
    if (keyword(peek(), "IN")) {
      take();
      if (take().kind != Token::LBrace) throw Error("predicate: expected '{' after IN");
      std::vector<std::string> labels{literal()};
      while (peek().kind == Token::Comma) {
        take();
        labels.push_back(literal());
      }
      if (take().kind != Token::RBrace) throw Error("predicate: expected '}'");
      return make(Predicate::Node::In{name.text, std::move(labels)});
    }
    const auto op = take();
    if (op.kind != Token::Op) throw Error("predicate: expected a comparison after '" + name.text + "'");
    CompareOp cmp;
    if (op.text == "<") cmp = CompareOp::Less;
    else if (op.text == "<=") cmp = CompareOp::LessEq;
    else if (op.text == ">") cmp = CompareOp::Greater;
    else if (op.text == ">=") cmp = CompareOp::GreaterEq;
    else if (op.text == "==") cmp = CompareOp::Equal;
    else cmp = CompareOp::NotEqual;
    return make(Predicate::Node::Compare{name.text, cmp, literal()});
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

std::optional<double> as_number(const std::string& s) {
  if (s == "true" || s == "TRUE") return 1.0;
  if (s == "false" || s == "FALSE") return 0.0;
  double v = 0;
  const char* first = s.data();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

void collect(const Predicate::Node& node, std::vector<std::string>& out) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Predicate::Node::And> || std::is_same_v<T, Predicate::Node::Or>) {
          collect(*n.lhs, out);
          collect(*n.rhs, out);
        } else if constexpr (std::is_same_v<T, Predicate::Node::Not>) {
          collect(*n.operand, out);
        } else {
          if (std::find(out.begin(), out.end(), n.covariate) == out.end()) out.push_back(n.covariate);
        }
      },
      node.value);
}

void check(const Predicate::Node& node, const CovariateSchema& schema) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Predicate::Node::And> || std::is_same_v<T, Predicate::Node::Or>) {
          check(*n.lhs, schema);
          check(*n.rhs, schema);
        } else if constexpr (std::is_same_v<T, Predicate::Node::Not>) {
          check(*n.operand, schema);
        } else {
          const auto j = schema.find(n.covariate);
          if (!j) throw Error("predicate references unknown covariate '" + n.covariate + "'");
          const auto& spec = schema[*j];
          if constexpr (std::is_same_v<T, Predicate::Node::In>) {
            for (const auto& l : n.labels) {
              if (spec.kind == CovariateKind::Categorical ? !spec.level_index(l).has_value()
                                                          : !as_number(l).has_value()) {
                throw Error("predicate: '" + l + "' is not a valid value of '" + n.covariate + "'");
              }
            }
          } else if (spec.kind == CovariateKind::Categorical) {
            if (n.op != CompareOp::Equal && n.op != CompareOp::NotEqual) {
              throw Error("predicate: categorical '" + n.covariate + "' supports only == and !=");
            }
            if (!spec.level_index(n.literal)) {
              throw Error("predicate: '" + n.literal + "' is not a level of '" + n.covariate + "'");
            }
          } else if (!as_number(n.literal)) {
            throw Error("predicate: '" + n.literal + "' is not numeric (covariate '" + n.covariate + "')");
          }
        }
      },
      node.value);
}

bool eval(const Predicate::Node& node, const CovariateSchema& schema, const SubjectRecord& row) {
  return std::visit(
      [&](const auto& n) -> bool {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Predicate::Node::And>) {
          return eval(*n.lhs, schema, row) && eval(*n.rhs, schema, row);
        } else if constexpr (std::is_same_v<T, Predicate::Node::Or>) {
          return eval(*n.lhs, schema, row) || eval(*n.rhs, schema, row);
        } else if constexpr (std::is_same_v<T, Predicate::Node::Not>) {
          return !eval(*n.operand, schema, row);
        } else {
          const auto j = *schema.find(n.covariate);
          const auto& spec = schema[j];
          const double v = row.covariates[j];
          if constexpr (std::is_same_v<T, Predicate::Node::In>) {
            return std::any_of(n.labels.begin(), n.labels.end(), [&](const std::string& l) {
              return spec.kind == CovariateKind::Categorical
                         ? static_cast<double>(*spec.level_index(l)) == v
                         : *as_number(l) == v;
            });
          } else {
            const double rhs = spec.kind == CovariateKind::Categorical
                                   ? static_cast<double>(*spec.level_index(n.literal))
                                   : *as_number(n.literal);
            switch (n.op) {
              case CompareOp::Less: return v < rhs;
              case CompareOp::LessEq: return v <= rhs;
              case CompareOp::Greater: return v > rhs;
              case CompareOp::GreaterEq: return v >= rhs;
              case CompareOp::Equal: return v == rhs;
              case CompareOp::NotEqual: return v != rhs;
            }
            return false;
          }
        }
      },
      node.value);
}

}  // namespace

Predicate::Predicate() = default;

Predicate Predicate::parse(std::string_view text) {
  Predicate p;
  p.text_ = std::string(text);
  if (std::all_of(text.begin(), text.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); })) {
    return p;
  }
  p.root_ = Parser(tokenize(text)).parse();
  return p;
}

std::vector<std::string> Predicate::covariates() const {
  std::vector<std::string> out;
  if (root_) collect(*root_, out);
  return out;
}

void Predicate::validate(const CovariateSchema& schema) const {
  if (root_) check(*root_, schema);
}

bool Predicate::evaluate(const CovariateSchema& schema, const SubjectRecord& row) const {
  return root_ == nullptr || eval(*root_, schema, row);
}

std::vector<bool> Predicate::mask(const Cohort& cohort) const {
  validate(cohort.schema());
  std::vector<bool> out;
  out.reserve(cohort.size());
  for (const auto& r : cohort.rows()) out.push_back(evaluate(cohort.schema(), r));
  return out;
}

Cohort eligibility_filter(const Cohort& cohort, const Predicate& criteria) {
  return cohort.subset(criteria.mask(cohort));
}

}  // namespace transport
