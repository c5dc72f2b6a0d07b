#include "mompo/runner.hpp"

#include <cctype>
#include <cmath>
#include <memory>
#include <string>

namespace mompo {

namespace {

struct Node {
  enum class Kind { number, list, ref, neg, add, sub, mul, div };
  Kind kind = Kind::number;
  double value = 0.0;
  std::vector<double> values;
  int ref = 0;
  std::unique_ptr<Node> lhs;
  std::unique_ptr<Node> rhs;
};

class Parser {
 public:
  explicit Parser(std::string text) : s_(std::move(text)) {}

  std::unique_ptr<Node> parse() {
    auto n = expr();
    skip();
    if (pos_ != s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
    return n;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("sweep expression '" + s_ + "': " + what + " at position " + std::to_string(pos_));
  }
  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!eat(c)) fail(std::string("expected '") + c + "'");
  }

  static std::unique_ptr<Node> binary(Node::Kind k, std::unique_ptr<Node> l, std::unique_ptr<Node> r) {
    auto n = std::make_unique<Node>();
    n->kind = k;
    n->lhs = std::move(l);
    n->rhs = std::move(r);
    return n;
  }

  std::unique_ptr<Node> expr() {
    auto n = term();
    for (;;) {
      if (eat('+')) n = binary(Node::Kind::add, std::move(n), term());
      else if (eat('-')) n = binary(Node::Kind::sub, std::move(n), term());
      else return n;
    }
  }
  std::unique_ptr<Node> term() {
    auto n = unary();
    for (;;) {
      if (eat('*')) n = binary(Node::Kind::mul, std::move(n), unary());
      else if (eat('/')) n = binary(Node::Kind::div, std::move(n), unary());
      else return n;
    }
  }
  std::unique_ptr<Node> unary() {
    if (eat('-')) {
      auto n = std::make_unique<Node>();
      n->kind = Node::Kind::neg;
      n->lhs = unary();
      return n;
    }
    return atom();
  }
  double number() {
    skip();
    const char* begin = s_.c_str() + pos_;
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin) fail("expected a number");
    pos_ += static_cast<std::size_t>(end - begin);
    return v;
  }
  std::unique_ptr<Node> atom() {
    skip();
    auto n = std::make_unique<Node>();
    if (eat('(')) {
      n = expr();
      expect(')');
      return n;
    }
    if (eat('[')) {
      n->kind = Node::Kind::list;
      if (eat(']')) fail("empty list");
      do {
        n->values.push_back(signed_number());
      } while (eat(','));
      expect(']');
      return n;
    }
    if (eat('@')) {
      skip();
      const std::size_t start = pos_;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      if (start == pos_) fail("expected an objective index after '@'");
      n->kind = Node::Kind::ref;
      n->ref = std::stoi(s_.substr(start, pos_ - start));
      return n;
    }
    if (s_.compare(pos_, 8, "linspace") == 0) {
      pos_ += 8;
      expect('(');
      const double a = signed_number();
      expect(',');
      const double b = signed_number();
      expect(',');
      const double count = number();
      expect(')');
      if (count < 1 || count != std::floor(count)) fail("linspace count must be a positive integer");
      const int c = static_cast<int>(count);
      n->kind = Node::Kind::list;
      for (int i = 0; i < c; ++i) n->values.push_back(c == 1 ? a : a + (b - a) * i / (c - 1));
      if (c > 1) n->values.back() = b;
      return n;
    }
    n->kind = Node::Kind::number;
    n->value = number();
    return n;
  }
  double signed_number() {
    if (eat('-')) return -number();
    return number();
  }

  std::string s_;
  std::size_t pos_ = 0;
};

void find_lists(const Node& n, std::vector<const Node*>& out) {
  if (n.kind == Node::Kind::list) out.push_back(&n);
  if (n.lhs) find_lists(*n.lhs, out);
  if (n.rhs) find_lists(*n.rhs, out);
}

double evaluate(const Node& n, double list_value, const std::vector<double>& chosen) {
  switch (n.kind) {
    case Node::Kind::number: return n.value;
    case Node::Kind::list: return list_value;
    case Node::Kind::ref:
      if (n.ref < 0 || n.ref >= static_cast<int>(chosen.size()))
        throw ConfigError("sweep: @" + std::to_string(n.ref) + " refers to an objective not yet assigned");
      return chosen[static_cast<std::size_t>(n.ref)];
    case Node::Kind::neg: return -evaluate(*n.lhs, list_value, chosen);
    case Node::Kind::add: return evaluate(*n.lhs, list_value, chosen) + evaluate(*n.rhs, list_value, chosen);
    case Node::Kind::sub: return evaluate(*n.lhs, list_value, chosen) - evaluate(*n.rhs, list_value, chosen);
    case Node::Kind::mul: return evaluate(*n.lhs, list_value, chosen) * evaluate(*n.rhs, list_value, chosen);
    case Node::Kind::div: return evaluate(*n.lhs, list_value, chosen) / evaluate(*n.rhs, list_value, chosen);
  }
  return 0.0;
}

struct Entry {
  std::unique_ptr<Node> root;
  std::vector<double> list;  // {unused} when the entry has no list
  bool has_list = false;
};

Entry parse_entry(const std::string& text) {
  Entry e;
  e.root = Parser(text).parse();
  std::vector<const Node*> lists;
  find_lists(*e.root, lists);
  if (lists.size() > 1) throw ConfigError("sweep expression '" + text + "' holds more than one list");
  e.has_list = !lists.empty();
  e.list = e.has_list ? lists.front()->values : std::vector<double>{0.0};
  return e;
}

void expand(const std::vector<Entry>& entries, std::size_t k, std::vector<double>& chosen,
            std::vector<std::vector<double>>& out) {
  if (k == entries.size()) {
    out.push_back(chosen);
    return;
  }
  for (const double v : entries[k].list) {
    chosen.push_back(evaluate(*entries[k].root, v, chosen));
    expand(entries, k + 1, chosen, out);
    chosen.pop_back();
  }
}

}  // namespace

std::vector<double> expand_values(const std::string& expression) {
  const Entry e = parse_entry(expression);
  std::vector<double> out;
  for (const double v : e.list) out.push_back(evaluate(*e.root, v, {}));
  return out;
}

std::vector<PreferenceSpec> expand_sweep(const SweepSpec& sweep) {
  if (sweep.values.empty()) throw ConfigError("sweep: no objectives given");
  std::vector<Entry> entries;
  for (const auto& v : sweep.values) entries.push_back(parse_entry(v));
  std::vector<double> chosen;
  std::vector<std::vector<double>> combos;
  expand(entries, 0, chosen, combos);
  std::vector<PreferenceSpec> out;
  out.reserve(combos.size());
  const int n = static_cast<int>(sweep.values.size());
  for (const auto& c : combos) {
    Vector v = Eigen::Map<const Vector>(c.data(), n);
    out.push_back(validate_preference({sweep.mode, v}, n));
  }
  return out;
}

}  // namespace mompo
