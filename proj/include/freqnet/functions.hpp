#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "freqnet/errors.hpp"

namespace freqnet {

enum class FamilyKind { Constant, Linear, Logistic, Probit, Cloglog, Bump, Table };

inline const char* family_name(FamilyKind k) {
  switch (k) {
    case FamilyKind::Constant: return "constant";
    case FamilyKind::Linear: return "linear";
    case FamilyKind::Logistic: return "logistic";
    case FamilyKind::Probit: return "probit";
    case FamilyKind::Cloglog: return "cloglog";
    case FamilyKind::Bump: return "bump";
    case FamilyKind::Table: return "table";
  }
  return "?";
}

struct ParamBounds {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();

  bool contains(double v) const { return v >= lo && v <= hi; }
  double clamp(double v) const { return std::min(hi, std::max(lo, v)); }
};

inline double sigmoid(double a) {
  if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

inline double normal_cdf(double a) { return 0.5 * std::erfc(-a / std::sqrt(2.0)); }
inline double normal_pdf(double a) { return std::exp(-0.5 * a * a) / std::sqrt(2.0 * M_PI); }

// Parametric aggregation function [0,1]^n -> [0,1].
//
// Parameter layout per kind:
//   constant  {p}
//   linear    {w_1..w_n, c}      f = (sum w_i x_i)/n + c
//   logistic  {w_1..w_n, c}      f = sigmoid(sum w_i x_i + c)
//   probit    {w_1..w_n, c}      f = Phi(sum w_i x_i + c)
//   cloglog   {w_1..w_n, c}      f = 1 - exp(-exp(sum w_i x_i + c))
//   bump      {alpha, beta, p}   f = alpha exp(-beta (x - p)^2), n = 1
//   table     {v_0..v_{2^n-1}}   f = v[bits of x], inputs must be 0 or 1;
//                                bit i of the index is input i
class FunctionFamily {
 public:
  FunctionFamily() = default;
  FunctionFamily(FamilyKind kind, size_t arity, std::vector<double> params)
      : kind_(kind), arity_(arity), params_(std::move(params)) {
    if (params_.size() != expected_params(kind, arity))
      throw ModelError(std::string(family_name(kind)) + " family of arity " + std::to_string(arity) + " needs " +
                       std::to_string(expected_params(kind, arity)) + " parameters");
  }

  static FunctionFamily constant(double p, size_t arity = 0) { return {FamilyKind::Constant, arity, {p}}; }
  static FunctionFamily affine(FamilyKind kind, std::vector<double> w, double c) {
    size_t n = w.size();
    w.push_back(c);
    return {kind, n, std::move(w)};
  }
  static FunctionFamily bump(double alpha, double beta, double p) { return {FamilyKind::Bump, 1, {alpha, beta, p}}; }
  static FunctionFamily table(size_t arity, std::vector<double> values) {
    return {FamilyKind::Table, arity, std::move(values)};
  }

  static size_t expected_params(FamilyKind kind, size_t arity) {
    switch (kind) {
      case FamilyKind::Constant: return 1;
      case FamilyKind::Bump: return 3;
      case FamilyKind::Table: return size_t{1} << arity;
      default: return arity + 1;
    }
  }

  FamilyKind kind() const { return kind_; }
  size_t arity() const { return arity_; }
  const std::vector<double>& params() const { return params_; }
  void set_params(std::vector<double> p) {
    if (p.size() != params_.size()) throw ModelError("parameter count mismatch");
    params_ = std::move(p);
  }
  void set_param(size_t i, double v) { params_.at(i) = v; }

  bool is_affine() const {
    return kind_ == FamilyKind::Linear || kind_ == FamilyKind::Logistic || kind_ == FamilyKind::Probit ||
           kind_ == FamilyKind::Cloglog;
  }

  std::vector<ParamBounds> bounds() const {
    std::vector<ParamBounds> b(params_.size());
    switch (kind_) {
      case FamilyKind::Constant:
      case FamilyKind::Table:
        for (auto& x : b) x = {0.0, 1.0};
        break;
      case FamilyKind::Linear:
        b.back() = {0.0, 1.0};
        break;
      case FamilyKind::Bump:
        b[0] = {0.0, 1.0};
        b[1] = {0.0, std::numeric_limits<double>::infinity()};
        b[2] = {0.0, 1.0};
        break;
      default:
        break;
    }
    return b;
  }

  // Bound and range violations; empty when the family maps [0,1]^n into [0,1].
  std::vector<std::string> diagnostics() const {
    std::vector<std::string> out;
    auto b = bounds();
    for (size_t i = 0; i < params_.size(); ++i) {
      if (!std::isfinite(params_[i])) out.push_back("parameter " + std::to_string(i) + " is not finite");
      else if (!b[i].contains(params_[i]))
        out.push_back(std::string(family_name(kind_)) + " parameter " + std::to_string(i) + " = " +
                      std::to_string(params_[i]) + " outside its bounds");
    }
    if (kind_ == FamilyKind::Linear && arity_ > 0) {
      // Box criterion: extreme values of an affine map on the cube sit at vertices.
      double hi = params_.back(), lo = params_.back();
      for (size_t i = 0; i < arity_; ++i) {
        hi += std::max(params_[i], 0.0) / static_cast<double>(arity_);
        lo += std::min(params_[i], 0.0) / static_cast<double>(arity_);
      }
      if (hi > 1.0 + 1e-12 || lo < -1e-12)
        out.push_back("linear family image [" + std::to_string(lo) + ", " + std::to_string(hi) +
                      "] is not contained in [0,1]");
    }
    return out;
  }

  double affine_value(std::span<const double> x) const {
    double a = params_[arity_];
    for (size_t i = 0; i < arity_; ++i) a += params_[i] * x[i];
    return a;
  }

  double eval(std::span<const double> x) const {
    if (x.size() != arity_)
      throw ModelError(std::string(family_name(kind_)) + " expects " + std::to_string(arity_) + " inputs");
    for (double v : x)
      if (!(v >= 0.0 && v <= 1.0)) throw ModelError("function input outside [0,1]");
    double out = 0;
    switch (kind_) {
      case FamilyKind::Constant:
        out = params_[0];
        break;
      case FamilyKind::Linear: {
        double s = 0;
        for (size_t i = 0; i < arity_; ++i) s += params_[i] * x[i];
        out = (arity_ ? s / static_cast<double>(arity_) : 0.0) + params_[arity_];
        break;
      }
      case FamilyKind::Logistic:
        out = sigmoid(affine_value(x));
        break;
      case FamilyKind::Probit:
        out = normal_cdf(affine_value(x));
        break;
      case FamilyKind::Cloglog:
        out = -std::expm1(-std::exp(affine_value(x)));
        break;
      case FamilyKind::Bump: {
        const double d = x[0] - params_[2];
        out = params_[0] * std::exp(-params_[1] * d * d);
        break;
      }
      case FamilyKind::Table: {
        size_t idx = 0;
        for (size_t i = 0; i < arity_; ++i) {
          if (x[i] == 1.0) idx |= size_t{1} << i;
          else if (x[i] != 0.0) throw ModelError("table family evaluated at a non-boolean input");
        }
        out = params_[idx];
        break;
      }
    }
    return std::clamp(out, 0.0, 1.0);
  }

  bool differentiable() const { return kind_ != FamilyKind::Table; }

  // Gradient with respect to the parameters. Constant has no differentiable parameters.
  std::vector<double> grad(std::span<const double> x) const {
    if (kind_ == FamilyKind::Table) throw ModelError("table family has no parameter gradient");
    if (x.size() != arity_) throw ModelError("input arity mismatch");
    std::vector<double> g;
    auto affine_grad = [&](double d) {
      for (size_t i = 0; i < arity_; ++i) g.push_back(d * x[i]);
      g.push_back(d);
    };
    switch (kind_) {
      case FamilyKind::Constant:
        break;
      case FamilyKind::Linear:
        for (size_t i = 0; i < arity_; ++i) g.push_back(x[i] / static_cast<double>(arity_));
        g.push_back(1.0);
        break;
      case FamilyKind::Logistic: {
        const double s = sigmoid(affine_value(x));
        affine_grad(s * (1 - s));
        break;
      }
      case FamilyKind::Probit:
        affine_grad(normal_pdf(affine_value(x)));
        break;
      case FamilyKind::Cloglog: {
        const double a = affine_value(x);
        affine_grad(std::exp(a - std::exp(a)));
        break;
      }
      case FamilyKind::Bump: {
        const double d = x[0] - params_[2];
        const double e = std::exp(-params_[1] * d * d);
        g = {e, -params_[0] * d * d * e, 2.0 * params_[0] * params_[1] * d * e};
        break;
      }
      case FamilyKind::Table:
        break;
    }
    return g;
  }

  // f^{-1}{0,1} is contained in {0,1}^n (analytic, per kind).
  bool interior_preserving() const {
    switch (kind_) {
      case FamilyKind::Constant:
        return arity_ == 0 || (params_[0] > 0.0 && params_[0] < 1.0);
      case FamilyKind::Logistic:
      case FamilyKind::Probit:
      case FamilyKind::Cloglog:
        for (double p : params_)
          if (!std::isfinite(p)) return false;
        return true;
      case FamilyKind::Bump:
        // alpha in (0,1) keeps values in (0,1); alpha = 1 hits 1 at x = p.
        return params_[0] > 0.0 && params_[0] < 1.0;
      case FamilyKind::Table:
        return true;  // only defined on {0,1}^n
      case FamilyKind::Linear: {
        if (arity_ == 0) return params_[0] > 0.0 && params_[0] < 1.0;
        double hi = params_.back(), lo = params_.back();
        bool all_nonzero = true;
        for (size_t i = 0; i < arity_; ++i) {
          hi += std::max(params_[i], 0.0) / static_cast<double>(arity_);
          lo += std::min(params_[i], 0.0) / static_cast<double>(arity_);
          all_nonzero &= params_[i] != 0.0;
        }
        // A zero weight lets an extreme value extend along a fractional coordinate.
        return (lo > 0.0 || all_nonzero) && (hi < 1.0 || all_nonzero);
      }
    }
    return false;
  }

  friend bool operator==(const FunctionFamily&, const FunctionFamily&) = default;

 private:
  FamilyKind kind_ = FamilyKind::Constant;
  size_t arity_ = 0;
  std::vector<double> params_{0.5};
};

}  // namespace freqnet
