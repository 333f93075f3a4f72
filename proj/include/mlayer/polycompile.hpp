#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlayer/io.hpp"
#include "mlayer/model.hpp"

namespace mlayer {

/// Polynomial text that could not be parsed; column is the 0-based offset
/// of the offending character.
class PolynomialParseError : public std::runtime_error {
 public:
  PolynomialParseError(const std::string& what, std::size_t column)
      : std::runtime_error(what + " (column " + std::to_string(column) + ")"),
        column_(column) {}
  std::size_t column() const { return column_; }

 private:
  std::size_t column_;
};

struct Monomial {
  double coef = 0.0;
  std::vector<int> exponents;  // length n_vars

  int degree() const { return std::accumulate(exponents.begin(), exponents.end(), 0); }
};

/// Sparse multivariate polynomial: one (coefficient, exponent vector) pair
/// per monomial, no duplicate exponent vectors, no zero coefficients.
struct Polynomial {
  int n_vars = 0;
  std::vector<Monomial> terms;

  double eval(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != n_vars)
      throw DimensionError("Polynomial::eval: wrong input length");
    double total = 0.0;
    for (const Monomial& t : terms) {
      double prod = t.coef;
      for (int v = 0; v < n_vars; ++v)
        for (int e = 0; e < t.exponents[v]; ++e) prod *= x[v];
      total += prod;
    }
    return total;
  }

  /// Merges duplicate exponent vectors and drops zero coefficients.
  void normalize() {
    std::vector<Monomial> merged;
    for (Monomial& t : terms) {
      auto it = std::find_if(merged.begin(), merged.end(), [&](const Monomial& m) {
        return m.exponents == t.exponents;
      });
      if (it == merged.end())
        merged.push_back(std::move(t));
      else
        it->coef += t.coef;
    }
    merged.erase(std::remove_if(merged.begin(), merged.end(),
                                [](const Monomial& m) { return m.coef == 0.0; }),
                 merged.end());
    terms = std::move(merged);
  }
};

namespace detail {

class PolynomialParser {
 public:
  explicit PolynomialParser(std::string_view text) : text_(text) {}

  Polynomial parse() {
    Polynomial poly;
    int max_var = -1;
    skip_ws();
    if (at_end()) throw PolynomialParseError("empty polynomial", pos_);
    bool first = true;
    while (!at_end()) {
      double sign = 1.0;
      skip_ws();
      if (peek() == '+' || peek() == '-') {
        if (peek() == '-') sign = -1.0;
        ++pos_;
      } else if (!first) {
        throw PolynomialParseError("expected '+' or '-' between terms", pos_);
      }
      first = false;
      Monomial m = parse_term();
      m.coef *= sign;
      for (std::size_t v = 0; v < m.exponents.size(); ++v)
        if (m.exponents[v] > 0) max_var = std::max(max_var, static_cast<int>(v));
      poly.terms.push_back(std::move(m));
      skip_ws();
    }
    poly.n_vars = max_var + 1;
    for (Monomial& m : poly.terms) m.exponents.resize(poly.n_vars, 0);
    poly.normalize();
    return poly;
  }

 private:
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return at_end() ? '\0' : text_[pos_]; }
  void skip_ws() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  Monomial parse_term() {
    Monomial m;
    m.coef = 1.0;
    bool any_factor = false;
    while (true) {
      skip_ws();
      if (peek() == 'x') {
        const auto [var, exp] = parse_var();
        if (static_cast<std::size_t>(var) >= m.exponents.size())
          m.exponents.resize(var + 1, 0);
        m.exponents[var] += exp;
        any_factor = true;
      } else if (std::isdigit(static_cast<unsigned char>(peek())) || peek() == '.') {
        m.coef *= parse_number();
        any_factor = true;
      } else {
        throw PolynomialParseError("expected a number or a variable like x0", pos_);
      }
      skip_ws();
      if (peek() == '*') {
        ++pos_;
        continue;
      }
      break;
    }
    if (!any_factor) throw PolynomialParseError("empty term", pos_);
    return m;
  }

  std::pair<int, int> parse_var() {
    ++pos_;  // consume 'x'
    if (at_end() || !std::isdigit(static_cast<unsigned char>(peek())))
      throw PolynomialParseError("variable needs an index, e.g. x0", pos_);
    const int var = parse_int();
    int exp = 1;
    if (peek() == '^') {
      ++pos_;
      if (at_end() || !std::isdigit(static_cast<unsigned char>(peek())))
        throw PolynomialParseError("'^' needs a non-negative integer exponent", pos_);
      exp = parse_int();
    }
    return {var, exp};
  }

  int parse_int() {
    long v = 0;
    const std::size_t start = pos_;
    while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) {
      v = v * 10 + (text_[pos_] - '0');
      if (v > 1000000) throw PolynomialParseError("integer too large", start);
      ++pos_;
    }
    return static_cast<int>(v);
  }

  double parse_number() {
    const std::size_t start = pos_;
    while (!at_end() && (std::isdigit(static_cast<unsigned char>(peek())) || peek() == '.'))
      ++pos_;
    if (!at_end() && (peek() == 'e' || peek() == 'E')) {
      std::size_t mark = pos_;
      ++pos_;
      if (!at_end() && (peek() == '+' || peek() == '-')) ++pos_;
      if (at_end() || !std::isdigit(static_cast<unsigned char>(peek())))
        pos_ = mark;  // the 'e' was not an exponent
      else
        while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
    }
    const std::string token(text_.substr(start, pos_ - start));
    try {
      std::size_t used = 0;
      const double v = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
      return v;
    } catch (const std::exception&) {
      throw PolynomialParseError("malformed number '" + token + "'", start);
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses text like "3.5*x0^2*x1 - x2 + 4". Whitespace-insensitive;
/// duplicate monomials are merged.
inline Polynomial parse_polynomial(std::string_view text, int n_vars_hint = -1) {
  Polynomial p = detail::PolynomialParser(text).parse();
  if (n_vars_hint > p.n_vars) {
    p.n_vars = n_vars_hint;
    for (Monomial& m : p.terms) m.exponents.resize(p.n_vars, 0);
  }
  return p;
}

/// The Leibniz expansion of det (or the permanent, when signs are dropped)
/// of a k x k matrix of k^2 variables in row-major order.
inline Polynomial determinant_polynomial(int k, bool permanent = false) {
  if (k < 1 || k > 6) throw DomainError("determinant_polynomial: k must be in [1, 6]");
  Polynomial p;
  p.n_vars = k * k;
  std::vector<int> perm(k);
  for (int i = 0; i < k; ++i) perm[i] = i;
  do {
    int inversions = 0;
    for (int i = 0; i < k; ++i)
      for (int j = i + 1; j < k; ++j)
        if (perm[i] > perm[j]) ++inversions;
    Monomial m;
    m.coef = (!permanent && inversions % 2 == 1) ? -1.0 : 1.0;
    m.exponents.assign(k * k, 0);
    for (int i = 0; i < k; ++i) m.exponents[i * k + perm[i]] += 1;
    p.terms.push_back(std::move(m));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return p;
}

/// One monomial as a strictly-upper-triangular block: a (g+1) x (g+1)
/// template with the monomial's g variable factors on the first upper
/// diagonal (ascending variable order). exp of the block puts the monomial
/// divided by g! in cell (0, g), so the readout weight coef * g! recovers
/// coef * monomial.
struct MonomialTemplate {
  int size = 0;              // degree + 1
  std::vector<int> factors;  // variable index per superdiagonal slot
  int row = 0;
  int col = 0;               // (row, col) = (0, degree)
  double factorial = 1.0;    // (size - 1)!
  double coef = 0.0;
};

inline MonomialTemplate compile_monomial(double coef, const std::vector<int>& exponents) {
  MonomialTemplate t;
  t.coef = coef;
  for (std::size_t v = 0; v < exponents.size(); ++v) {
    if (exponents[v] < 0) throw DomainError("compile_monomial: negative exponent");
    for (int e = 0; e < exponents[v]; ++e) t.factors.push_back(static_cast<int>(v));
  }
  const int degree = static_cast<int>(t.factors.size());
  if (degree < 1)
    throw DomainError("compile_monomial: degree-0 terms belong in the output bias");
  t.size = degree + 1;
  t.row = 0;
  t.col = degree;
  for (int i = 2; i <= degree; ++i) t.factorial *= i;
  return t;
}

/// A model whose forward pass evaluates a polynomial exactly, plus the
/// bookkeeping that locates every monomial inside exp(M).
struct CompiledModel {
  MLayerParams params;
  std::vector<TermCell> term_cells;
  std::vector<double> scale_factors;  // (block size - 1)! per term

  double eval(std::span<const double> x) const { return forward_out(params, x)[0]; }
};

/// Assembles the per-monomial blocks into one block-diagonal strictly
/// upper triangular matrix template: d = n_vars with an identity
/// embedding, T routes each variable to its superdiagonal cells, the
/// single readout row holds coef * g! at each term cell, and degree-0
/// terms go to the output bias.
inline CompiledModel compile_polynomial(const Polynomial& poly) {
  double constant = 0.0;
  std::vector<MonomialTemplate> templates;
  for (const Monomial& m : poly.terms) {
    if (m.degree() == 0)
      constant += m.coef;
    else
      templates.push_back(compile_monomial(m.coef, m.exponents));
  }
  if (templates.empty())
    throw DomainError("compile_polynomial: need at least one term of degree >= 1");

  int n = 0;
  for (const MonomialTemplate& t : templates) n += t.size;
  Dims dims{poly.n_vars, poly.n_vars, n, 1};
  CompiledModel model;
  model.params = MLayerParams::zeros(dims);
  model.params.u = Matrix::identity(poly.n_vars);

  int offset = 0;
  for (const MonomialTemplate& t : templates) {
    for (std::size_t i = 0; i < t.factors.size(); ++i)
      model.params.t[t.factors[i]](offset + static_cast<int>(i),
                                   offset + static_cast<int>(i) + 1) = 1.0;
    const double scale = t.coef * t.factorial;
    model.params.s[0](offset + t.row, offset + t.col) = scale;
    model.term_cells.push_back(TermCell{offset, t.row, t.col, scale});
    model.scale_factors.push_back(t.factorial);
    offset += t.size;
  }
  model.params.v[0] = constant;
  return model;
}

/// The worked 7 x 7 feature-cross example: with embedding phi = x, exp(M)
/// has leading row (1, phi0, phi1, phi2, phi0*phi1, phi1*phi2,
/// phi1*phi2^2), and the two readout rows select the cross terms (0,4) and
/// (0,6).
inline CompiledModel feature_cross_gadget() {
  Dims dims{3, 3, 7, 2};
  CompiledModel model;
  model.params = MLayerParams::zeros(dims);
  model.params.u = Matrix::identity(3);
  auto& t = model.params.t;
  t[0](0, 1) = 1.0;
  t[1](0, 2) = 1.0;
  t[2](0, 3) = 1.0;
  t[0](2, 4) = 2.0;
  t[2](2, 5) = 2.0;
  t[2](5, 6) = 3.0;
  model.params.s[0](0, 4) = 1.0;  // phi0 * phi1
  model.params.s[1](0, 6) = 1.0;  // phi1 * phi2^2
  model.term_cells = {TermCell{0, 0, 4, 1.0}, TermCell{0, 0, 6, 1.0}};
  model.scale_factors = {1.0, 1.0};
  return model;
}

/// Size-8 gadget computing the determinant of a 3 x 3 matrix (inputs
/// flattened row-major as a..i): exp(M)_{0,7} + exp(M)_{1,6} is exactly the
/// determinant. The permanent variant drops the minus signs.
inline CompiledModel det3_gadget(bool permanent = false) {
  Dims dims{9, 9, 8, 1};
  CompiledModel model;
  model.params = MLayerParams::zeros(dims);
  model.params.u = Matrix::identity(9);
  const double sign = permanent ? 1.0 : -1.0;
  auto& t = model.params.t;
  // Variables: a=x0 b=x1 c=x2 / d=x3 e=x4 f=x5 / g=x6 h=x7 i=x8.
  t[8](0, 2) = 1.0;         // M02 = i
  t[5](0, 3) = 1.0;         // M03 = f
  t[7](1, 2) = 1.0;         // M12 = h
  t[4](1, 3) = 1.0;         // M13 = e
  t[3](2, 4) = 2.0;         // M24 = 2d
  t[5](2, 5) = 2.0 * sign;  // M25 = -2f
  t[6](3, 4) = 2.0 * sign;  // M34 = -2g
  t[8](3, 5) = 2.0;         // M35 = 2i
  t[2](4, 6) = 3.0;         // M46 = 3c
  t[1](4, 7) = 3.0 * sign;  // M47 = -3b
  t[0](5, 6) = 3.0;         // M56 = 3a
  model.params.s[0](0, 7) = 1.0;
  model.params.s[0](1, 6) = 1.0;
  model.term_cells = {TermCell{0, 0, 7, 1.0}, TermCell{0, 1, 6, 1.0}};
  model.scale_factors = {1.0, 1.0};
  return model;
}

}  // namespace mlayer
