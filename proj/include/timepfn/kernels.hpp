#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "timepfn/common.hpp"
#include "timepfn/config.hpp"
#include "timepfn/rng.hpp"

namespace timepfn {

enum class KernelKind {
  Linear,
  Periodic,
  SquaredExponential,
  RationalQuadratic,
  Constant,
  WhiteNoise,
};

inline const char* kernel_kind_name(KernelKind k) {
  switch (k) {
    case KernelKind::Linear: return "linear";
    case KernelKind::Periodic: return "periodic";
    case KernelKind::SquaredExponential: return "se";
    case KernelKind::RationalQuadratic: return "rq";
    case KernelKind::Constant: return "constant";
    case KernelKind::WhiteNoise: return "whitenoise";
  }
  return "?";
}

// One covariance function from the bank. Parameters are interpreted in the
// units of whatever grid the kernel is evaluated on; sample_kernel_expr
// converts its index-unit configuration onto the normalized [0,1] grid.
struct BaseKernel {
  KernelKind kind = KernelKind::Constant;
  double variance = 1.0;     // sigma^2; the value itself for Constant
  double lengthscale = 1.0;  // Periodic, SE, RQ
  double period = 1.0;       // Periodic
  double alpha = 1.0;        // RQ

  double operator()(double a, double b) const {
    const double d = a - b;
    switch (kind) {
      case KernelKind::Linear:
        return variance * a * b;
      case KernelKind::Periodic: {
        const double s = std::sin(M_PI * d / period);
        return variance * std::exp(-2.0 * s * s / (lengthscale * lengthscale));
      }
      case KernelKind::SquaredExponential:
        return variance * std::exp(-d * d / (2.0 * lengthscale * lengthscale));
      case KernelKind::RationalQuadratic:
        return variance *
               std::pow(1.0 + d * d / (2.0 * alpha * lengthscale * lengthscale),
                        -alpha);
      case KernelKind::Constant:
        return variance;
      case KernelKind::WhiteNoise:
        return a == b ? variance : 0.0;
    }
    return 0.0;
  }

  void validate() const {
    auto check = [&](double v, const char* name, bool strictly_positive) {
      if (!std::isfinite(v) || v < 0.0 || (strictly_positive && v == 0.0))
        throw NonFiniteParameter(std::string("kernel parameter ") + name +
                                 " out of range for " + kernel_kind_name(kind));
    };
    check(variance, "variance", false);
    if (kind == KernelKind::Periodic || kind == KernelKind::SquaredExponential ||
        kind == KernelKind::RationalQuadratic)
      check(lengthscale, "lengthscale", true);
    if (kind == KernelKind::Periodic) check(period, "period", true);
    if (kind == KernelKind::RationalQuadratic) check(alpha, "alpha", true);
  }

  std::string to_string() const;
};

// Composed covariance function: an expression tree over base kernels with
// Add/Mul nodes. Sums and products of PSD kernels stay PSD.
class KernelExpr {
 public:
  enum class NodeKind { Leaf, Add, Mul };

  static KernelExpr leaf(BaseKernel k) {
    KernelExpr e;
    e.node_ = NodeKind::Leaf;
    e.base_ = k;
    return e;
  }
  static KernelExpr add(KernelExpr a, KernelExpr b) {
    return combine(NodeKind::Add, std::move(a), std::move(b));
  }
  static KernelExpr mul(KernelExpr a, KernelExpr b) {
    return combine(NodeKind::Mul, std::move(a), std::move(b));
  }

  NodeKind node() const { return node_; }
  const BaseKernel& base() const { return base_; }
  const KernelExpr& lhs() const { return *lhs_; }
  const KernelExpr& rhs() const { return *rhs_; }

  int leaf_count() const {
    if (node_ == NodeKind::Leaf) return 1;
    return lhs_->leaf_count() + rhs_->leaf_count();
  }
  int depth() const {
    if (node_ == NodeKind::Leaf) return 1;
    return 1 + std::max(lhs_->depth(), rhs_->depth());
  }

  double eval(double a, double b) const {
    switch (node_) {
      case NodeKind::Leaf: return base_(a, b);
      case NodeKind::Add: return lhs_->eval(a, b) + rhs_->eval(a, b);
      case NodeKind::Mul: return lhs_->eval(a, b) * rhs_->eval(a, b);
    }
    return 0.0;
  }

  void validate() const {
    if (node_ == NodeKind::Leaf) {
      base_.validate();
    } else {
      lhs_->validate();
      rhs_->validate();
    }
  }

  std::string to_string() const;

 private:
  static KernelExpr combine(NodeKind op, KernelExpr a, KernelExpr b) {
    KernelExpr e;
    e.node_ = op;
    e.lhs_ = std::make_shared<KernelExpr>(std::move(a));
    e.rhs_ = std::make_shared<KernelExpr>(std::move(b));
    return e;
  }

  NodeKind node_ = NodeKind::Leaf;
  BaseKernel base_;
  std::shared_ptr<const KernelExpr> lhs_, rhs_;
};

inline std::string BaseKernel::to_string() const {
  std::string s = kernel_kind_name(kind);
  s += "(var=" + std::to_string(variance);
  if (kind == KernelKind::Periodic)
    s += ",period=" + std::to_string(period) + ",ls=" + std::to_string(lengthscale);
  if (kind == KernelKind::SquaredExponential)
    s += ",ls=" + std::to_string(lengthscale);
  if (kind == KernelKind::RationalQuadratic)
    s += ",ls=" + std::to_string(lengthscale) + ",alpha=" + std::to_string(alpha);
  return s + ")";
}

inline std::string KernelExpr::to_string() const {
  switch (node_) {
    case NodeKind::Leaf: return base_.to_string();
    case NodeKind::Add: return "(" + lhs_->to_string() + " + " + rhs_->to_string() + ")";
    case NodeKind::Mul: return "(" + lhs_->to_string() + " * " + rhs_->to_string() + ")";
  }
  return "";
}

// Gram matrix of expr on the given grid. Only the upper triangle is
// evaluated; the lower is mirrored, so K == K^T bit-exactly.
template <typename Scalar>
Matrix<Scalar> evaluate_kernel(const KernelExpr& expr,
                               const Vector<Scalar>& grid) {
  expr.validate();
  const Index n = grid.size();
  if (n < 1) throw ShapeMismatch("evaluate_kernel: empty grid");
  for (Index i = 0; i < n; ++i)
    if (!std::isfinite(static_cast<double>(grid[i])))
      throw NonFiniteParameter("evaluate_kernel: non-finite grid value");
  Matrix<Scalar> K(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) {
      const double v = expr.eval(static_cast<double>(grid[i]),
                                 static_cast<double>(grid[j]));
      if (!std::isfinite(v))
        throw NonFiniteParameter("evaluate_kernel: non-finite entry at (" +
                                 std::to_string(i) + "," + std::to_string(j) + ")");
      K(i, j) = static_cast<Scalar>(v);
      K(j, i) = K(i, j);
    }
  }
  return K;
}

// Sampling ranges for the bank. Periods and SE/RQ lengthscales are given in
// index units and rescaled onto the normalized [0,1] grid at sampling time.
struct KernelBankConfig {
  std::vector<double> periodic_periods = {4, 7, 12, 24, 30, 52, 96};
  double periodic_lengthscale = 1.0;
  double stationary_variance = 1.0;  // Periodic, SE, RQ, Linear
  double se_lengthscale_min = 0.1;   // fraction of grid length, log-uniform
  double se_lengthscale_max = 1.0;
  double rq_alpha_min = 0.1;  // log-uniform
  double rq_alpha_max = 10.0;
  double constant_min = 0.1;  // uniform
  double constant_max = 1.0;
  double whitenoise_variance_max = 0.01;  // uniform (0, max]

  static KernelBankConfig from_config(const ConfigMap& cfg) {
    KernelBankConfig bank;
    const std::string s = "kernels";
    bank.periodic_periods = cfg.get_real_list(s, "periodic_periods", bank.periodic_periods);
    bank.periodic_lengthscale = cfg.get_real(s, "periodic_lengthscale", bank.periodic_lengthscale);
    bank.stationary_variance = cfg.get_real(s, "variance", bank.stationary_variance);
    bank.se_lengthscale_min = cfg.get_real(s, "se_lengthscale_min", bank.se_lengthscale_min);
    bank.se_lengthscale_max = cfg.get_real(s, "se_lengthscale_max", bank.se_lengthscale_max);
    bank.rq_alpha_min = cfg.get_real(s, "rq_alpha_min", bank.rq_alpha_min);
    bank.rq_alpha_max = cfg.get_real(s, "rq_alpha_max", bank.rq_alpha_max);
    bank.constant_min = cfg.get_real(s, "constant_min", bank.constant_min);
    bank.constant_max = cfg.get_real(s, "constant_max", bank.constant_max);
    bank.whitenoise_variance_max = cfg.get_real(s, "whitenoise_variance_max", bank.whitenoise_variance_max);
    return bank;
  }
};

inline BaseKernel sample_base_kernel(RngStream& rng, int grid_length,
                                     const KernelBankConfig& bank) {
  // Index units -> normalized grid units (grid is 0..T-1 mapped onto [0,1]).
  const double span = std::max(grid_length - 1, 1);
  static constexpr KernelKind kinds[] = {
      KernelKind::Linear,           KernelKind::Periodic,
      KernelKind::SquaredExponential, KernelKind::RationalQuadratic,
      KernelKind::Constant,         KernelKind::WhiteNoise,
  };
  BaseKernel k;
  k.kind = kinds[rng.uniform_int(6)];
  switch (k.kind) {
    case KernelKind::Linear:
      k.variance = bank.stationary_variance;
      break;
    case KernelKind::Periodic: {
      const auto& periods = bank.periodic_periods;
      const double p = periods[rng.uniform_int(periods.size())];
      k.period = std::max(p, 1e-12) / span;
      k.lengthscale = bank.periodic_lengthscale;
      k.variance = bank.stationary_variance;
      break;
    }
    case KernelKind::SquaredExponential:
      k.lengthscale = rng.log_uniform(bank.se_lengthscale_min * grid_length,
                                      bank.se_lengthscale_max * grid_length) / span;
      k.variance = bank.stationary_variance;
      break;
    case KernelKind::RationalQuadratic:
      k.lengthscale = rng.log_uniform(bank.se_lengthscale_min * grid_length,
                                      bank.se_lengthscale_max * grid_length) / span;
      k.alpha = rng.log_uniform(bank.rq_alpha_min, bank.rq_alpha_max);
      k.variance = bank.stationary_variance;
      break;
    case KernelKind::Constant:
      k.variance = rng.uniform(bank.constant_min, bank.constant_max);
      break;
    case KernelKind::WhiteNoise:
      k.variance = rng.uniform(0.0, bank.whitenoise_variance_max);
      break;
  }
  if (!(k.variance >= 0.0)) k.variance = 0.0;
  k.lengthscale = std::max(k.lengthscale, 1e-12);
  k.period = std::max(k.period, 1e-12);
  k.alpha = std::max(k.alpha, 1e-12);
  return k;
}

// Draws a composed kernel: leaf count j ~ U{1..J}, leaves drawn with
// replacement from the bank, folded left-to-right with uniformly random
// Add/Mul operators.
inline KernelExpr sample_kernel_expr(RngStream& rng, int max_compositions,
                                     int grid_length,
                                     const KernelBankConfig& bank = {}) {
  if (max_compositions < 1)
    throw Error("sample_kernel_expr: max_compositions must be >= 1");
  const int leaves = 1 + static_cast<int>(rng.uniform_int(max_compositions));
  KernelExpr expr = KernelExpr::leaf(sample_base_kernel(rng, grid_length, bank));
  for (int i = 1; i < leaves; ++i) {
    KernelExpr next = KernelExpr::leaf(sample_base_kernel(rng, grid_length, bank));
    if (rng.uniform_int(2) == 0)
      expr = KernelExpr::add(std::move(expr), std::move(next));
    else
      expr = KernelExpr::mul(std::move(expr), std::move(next));
  }
  return expr;
}

}  // namespace timepfn
