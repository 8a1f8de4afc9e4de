#include "prsense/expr.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace prsense {

int ParameterSet::add(const std::string& name) {
  if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
  int id = static_cast<int>(names_.size());
  names_.push_back(name);
  index_.emplace(name, id);
  return id;
}

int ParameterSet::id_of(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

const std::string& ParameterSet::name_of(int id) const {
  if (id < 0 || id >= size()) throw MissingParameter("parameter id out of range");
  return names_[static_cast<std::size_t>(id)];
}

struct Expr::Node {
  ExprKind kind;
  Rational value;            // constant
  int param = -1;            // parameter
  std::vector<Expr> kids;    // sum / product / power(base) / log(arg)
  Rational exponent;         // power
};

Expr Expr::wrap(Node&& n) { return Expr(std::make_shared<const Node>(std::move(n))); }

Expr Expr::constant(Rational r) {
  Node n;
  n.kind = ExprKind::constant;
  n.value = r;
  return wrap(std::move(n));
}

Expr Expr::parameter(int id) {
  if (id < 0) throw MissingParameter("negative parameter id");
  Node n;
  n.kind = ExprKind::parameter;
  n.param = id;
  return wrap(std::move(n));
}

Expr Expr::sum(std::vector<Expr> terms) {
  std::vector<Expr> kids;
  Rational acc(0);
  bool have_const = false;
  auto push = [&](const Expr& e) {
    if (e.kind() == ExprKind::constant) {
      try {
        acc = rat_add(acc, e.constant_value());
        have_const = true;
        return;
      } catch (const NumericalError&) {
        // overflow: keep the term symbolic
      }
    }
    kids.push_back(e);
  };
  for (const Expr& t : terms) {
    if (t.kind() == ExprKind::sum) {
      for (const Expr& k : t.node_->kids) push(k);
    } else {
      push(t);
    }
  }
  if (have_const && !acc.is_zero()) kids.push_back(constant(acc));
  if (kids.empty()) return constant(Rational(0));
  if (kids.size() == 1) return kids[0];
  Node n;
  n.kind = ExprKind::sum;
  n.kids = std::move(kids);
  return wrap(std::move(n));
}

Expr Expr::product(std::vector<Expr> factors) {
  std::vector<Expr> kids;
  Rational acc(1);
  bool zero = false;
  auto push = [&](const Expr& e) {
    if (e.kind() == ExprKind::constant) {
      if (e.constant_value().is_zero()) {
        zero = true;
        return;
      }
      try {
        acc = rat_mul(acc, e.constant_value());
        return;
      } catch (const NumericalError&) {
      }
    }
    kids.push_back(e);
  };
  for (const Expr& f : factors) {
    if (f.kind() == ExprKind::product) {
      for (const Expr& k : f.node_->kids) push(k);
    } else {
      push(f);
    }
  }
  if (zero) return constant(Rational(0));
  if (!acc.is_one()) kids.insert(kids.begin(), constant(acc));
  if (kids.empty()) return constant(Rational(1));
  if (kids.size() == 1) return kids[0];
  Node n;
  n.kind = ExprKind::product;
  n.kids = std::move(kids);
  return wrap(std::move(n));
}

Expr Expr::pow(Expr base, Rational exponent) {
  if (exponent.is_zero()) return constant(Rational(1));
  if (exponent.is_one()) return base;
  if (base.kind() == ExprKind::constant) {
    Rational b = base.constant_value();
    if (b.is_zero()) {
      if (exponent.num < 0) throw DomainError("0 raised to a negative power");
      return constant(Rational(0));
    }
    if (b.is_one()) return constant(Rational(1));
    // Fold small integer powers exactly.
    if (exponent.is_integer() && exponent.num > 0 && exponent.num <= 16) {
      try {
        Rational r(1);
        for (long long i = 0; i < exponent.num; ++i) r = rat_mul(r, b);
        return constant(r);
      } catch (const NumericalError&) {
      }
    }
  }
  Node n;
  n.kind = ExprKind::power;
  n.kids.push_back(std::move(base));
  n.exponent = exponent;
  return wrap(std::move(n));
}

Expr Expr::log(Expr arg) {
  if (arg.kind() == ExprKind::constant && arg.constant_value().is_one()) return constant(Rational(0));
  Node n;
  n.kind = ExprKind::log;
  n.kids.push_back(std::move(arg));
  return wrap(std::move(n));
}

ExprKind Expr::kind() const { return node_->kind; }

bool Expr::is_zero() const {
  return node_->kind == ExprKind::constant && node_->value.is_zero();
}

Rational Expr::constant_value() const {
  if (node_->kind != ExprKind::constant) throw MalformedExpr("constant_value on non-constant");
  return node_->value;
}

double Expr::evaluate(const Instantiation& u) const {
  switch (node_->kind) {
    case ExprKind::constant:
      return node_->value.to_double();
    case ExprKind::parameter:
      return u.at(node_->param);
    case ExprKind::sum: {
      double s = 0.0;
      for (const Expr& k : node_->kids) s += k.evaluate(u);
      return s;
    }
    case ExprKind::product: {
      double p = 1.0;
      for (const Expr& k : node_->kids) p *= k.evaluate(u);
      return p;
    }
    case ExprKind::power: {
      double b = node_->kids[0].evaluate(u);
      double e = node_->exponent.to_double();
      if (node_->exponent.is_integer()) {
        if (b == 0.0 && node_->exponent.num < 0) throw DomainError("0 raised to a negative power");
        return std::pow(b, e);
      }
      if (b < 0.0) throw DomainError("fractional power of a negative base");
      if (b == 0.0 && node_->exponent.num < 0) throw DomainError("0 raised to a negative power");
      return std::pow(b, e);
    }
    case ExprKind::log: {
      double a = node_->kids[0].evaluate(u);
      if (!(a > 0.0)) throw DomainError("log of a nonpositive value");
      return std::log(a);
    }
  }
  throw MalformedExpr("corrupt expression node");
}

Expr Expr::differentiate(int v) const {
  switch (node_->kind) {
    case ExprKind::constant:
      return constant(Rational(0));
    case ExprKind::parameter:
      return constant(Rational(node_->param == v ? 1 : 0));
    case ExprKind::sum: {
      std::vector<Expr> parts;
      parts.reserve(node_->kids.size());
      for (const Expr& k : node_->kids) parts.push_back(k.differentiate(v));
      return sum(std::move(parts));
    }
    case ExprKind::product: {
      std::vector<Expr> parts;
      for (std::size_t i = 0; i < node_->kids.size(); ++i) {
        std::vector<Expr> factors;
        factors.push_back(node_->kids[i].differentiate(v));
        for (std::size_t j = 0; j < node_->kids.size(); ++j)
          if (j != i) factors.push_back(node_->kids[j]);
        parts.push_back(product(std::move(factors)));
      }
      return sum(std::move(parts));
    }
    case ExprKind::power: {
      // d(b^q) = q * b^(q-1) * db
      const Expr& base = node_->kids[0];
      Rational qm1 = rat_sub(node_->exponent, Rational(1));
      return product({constant(node_->exponent), pow(base, qm1), base.differentiate(v)});
    }
    case ExprKind::log: {
      const Expr& arg = node_->kids[0];
      return product({arg.differentiate(v), pow(arg, Rational(-1))});
    }
  }
  throw MalformedExpr("corrupt expression node");
}

Expr Expr::substitute(int v, const Expr& replacement) const {
  switch (node_->kind) {
    case ExprKind::constant:
      return *this;
    case ExprKind::parameter:
      return node_->param == v ? replacement : *this;
    case ExprKind::sum: {
      std::vector<Expr> parts;
      for (const Expr& k : node_->kids) parts.push_back(k.substitute(v, replacement));
      return sum(std::move(parts));
    }
    case ExprKind::product: {
      std::vector<Expr> parts;
      for (const Expr& k : node_->kids) parts.push_back(k.substitute(v, replacement));
      return product(std::move(parts));
    }
    case ExprKind::power:
      return pow(node_->kids[0].substitute(v, replacement), node_->exponent);
    case ExprKind::log:
      return log(node_->kids[0].substitute(v, replacement));
  }
  throw MalformedExpr("corrupt expression node");
}

void Expr::collect_params(std::set<int>& out) const {
  switch (node_->kind) {
    case ExprKind::constant:
      return;
    case ExprKind::parameter:
      out.insert(node_->param);
      return;
    default:
      for (const Expr& k : node_->kids) k.collect_params(out);
  }
}

std::vector<int> Expr::params() const {
  std::set<int> s;
  collect_params(s);
  return std::vector<int>(s.begin(), s.end());
}

bool Expr::depends_on(int v) const {
  switch (node_->kind) {
    case ExprKind::constant:
      return false;
    case ExprKind::parameter:
      return node_->param == v;
    default:
      for (const Expr& k : node_->kids)
        if (k.depends_on(v)) return true;
      return false;
  }
}

std::string Expr::str(const ParameterSet* names) const {
  std::ostringstream os;
  switch (node_->kind) {
    case ExprKind::constant:
      os << node_->value.str();
      break;
    case ExprKind::parameter:
      if (names)
        os << names->name_of(node_->param);
      else
        os << "p" << node_->param;
      break;
    case ExprKind::sum:
    case ExprKind::product: {
      const char* sep = node_->kind == ExprKind::sum ? " + " : " * ";
      os << "(";
      for (std::size_t i = 0; i < node_->kids.size(); ++i) {
        if (i) os << sep;
        os << node_->kids[i].str(names);
      }
      os << ")";
      break;
    }
    case ExprKind::power:
      os << node_->kids[0].str(names) << "^(" << node_->exponent.str() << ")";
      break;
    case ExprKind::log:
      os << "ln(" << node_->kids[0].str(names) << ")";
      break;
  }
  return os.str();
}

}  // namespace prsense
