#pragma once

#include <memory>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "prsense/errors.hpp"
#include "prsense/rational.hpp"

namespace prsense {

/// Finite ordered parameter set: dense ids 0..size()-1, unique names.
class ParameterSet {
 public:
  int add(const std::string& name);
  int id_of(const std::string& name) const;  // -1 when absent
  const std::string& name_of(int id) const;
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

/// Real valuation of every parameter, indexed by parameter id.
struct Instantiation {
  std::vector<double> values;

  Instantiation() = default;
  explicit Instantiation(std::vector<double> v) : values(std::move(v)) {}

  int size() const { return static_cast<int>(values.size()); }
  double at(int id) const {
    if (id < 0 || id >= size()) throw MissingParameter("parameter id " + std::to_string(id) + " has no value");
    return values[static_cast<std::size_t>(id)];
  }
  double& operator[](int id) { return values[static_cast<std::size_t>(id)]; }
  double operator[](int id) const { return values[static_cast<std::size_t>(id)]; }
};

enum class ExprKind : std::uint8_t { constant, parameter, sum, product, power, log };

/// Immutable expression over {rational constants, parameters, +, *, rational
/// powers, natural log}. Construction folds constants and eliminates
/// zero/one units; nothing beyond that, so trees stay predictable.
/// Differentiation is closed over this node set.
class Expr {
 public:
  Expr() : Expr(constant(Rational(0))) {}

  static Expr constant(Rational r);
  static Expr constant(long long n) { return constant(Rational(n)); }
  /// Exact dyadic conversion; throws MalformedExpr for doubles whose exact
  /// rational form does not fit int64.
  static Expr constant(double x) { return constant(rational_from_double(x)); }
  static Expr parameter(int id);
  static Expr sum(std::vector<Expr> terms);
  static Expr product(std::vector<Expr> factors);
  static Expr pow(Expr base, Rational exponent);
  static Expr log(Expr arg);

  double evaluate(const Instantiation& u) const;
  Expr differentiate(int param_id) const;
  Expr substitute(int param_id, const Expr& replacement) const;

  ExprKind kind() const;
  bool is_constant() const { return kind() == ExprKind::constant; }
  bool is_zero() const;
  Rational constant_value() const;  // requires is_constant()

  void collect_params(std::set<int>& out) const;
  std::vector<int> params() const;
  bool depends_on(int param_id) const;

  std::string str(const ParameterSet* names = nullptr) const;

 private:
  struct Node;
  explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  static Expr wrap(Node&& n);
  std::shared_ptr<const Node> node_;
};

inline Expr operator+(const Expr& a, const Expr& b) { return Expr::sum({a, b}); }
inline Expr operator*(const Expr& a, const Expr& b) { return Expr::product({a, b}); }
inline Expr operator-(const Expr& a, const Expr& b) {
  return Expr::sum({a, Expr::product({Expr::constant(-1LL), b})});
}
inline Expr operator-(const Expr& a) { return Expr::product({Expr::constant(-1LL), a}); }

}  // namespace prsense
