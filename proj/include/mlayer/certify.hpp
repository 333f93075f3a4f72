#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mlayer/expm.hpp"
#include "mlayer/io.hpp"
#include "mlayer/model.hpp"
#include "mlayer/rng.hpp"

namespace mlayer {

/// Certified L-infinity radius for one example together with the constants
/// that produced it. All fields are non-negative; radius is 0 whenever the
/// example is misclassified or the margin is 0.
struct RobustnessCertificate {
  long long example_id = 0;
  double delta_in = 0.0;  // per-model: ||M'||_2 <= delta_in * ||x~||_inf
  double s_norm = 0.0;    // ||S||_2 with S read as an h x n^2 matrix
  double m_norm = 0.0;    // ||M||_2 for this example
  double margin = 0.0;    // top-class evidence minus runner-up (clamped at 0)
  double radius = 0.0;    // certified L-infinity radius
  bool correctly_classified = false;
  int predicted = -1;
};

/// Certifies examples against one model. The per-model constants delta_in
/// and ||S||_2 are computed once in the constructor; everything per-example
/// is recomputed per call and deterministic.
class Certifier {
 public:
  explicit Certifier(const MLayerParams& params)
      : params_(&params),
        sqrt_n_(std::sqrt(static_cast<double>(params.dims.n))),
        delta_in_(compute_delta_in(params)),
        s_norm_(compute_s_norm(params)),
        b_norm_(spectral_norm(params.b)) {}

  double delta_in() const { return delta_in_; }
  double s_norm() const { return s_norm_; }

  /// The closed-form deviation bound for a known ||M||_2:
  /// sqrt(n) * ||S||_2 * delta_in * eps * exp(delta_in * eps) * exp(||M||_2).
  /// Monotone increasing in eps, and 0 at eps = 0.
  double deviation_bound(double m_norm, double eps) const {
    return sqrt_n_ * s_norm_ * delta_in_ * eps * std::exp(delta_in_ * eps) *
           std::exp(m_norm);
  }

  double output_deviation_bound(std::span<const double> x, double eps) const {
    if (eps < 0.0) throw DomainError("output_deviation_bound: eps must be >= 0");
    return deviation_bound(spectral_norm(build_matrix(*params_, x)), eps);
  }

  RobustnessCertificate certify(std::span<const double> x, int label,
                                long long example_id = 0) const {
    if (params_->dims.h < 2)
      throw DomainError("certify: needs a classification model (h >= 2)");
    if (label < 0 || label >= params_->dims.h)
      throw DomainError("certify: label out of range");
    const Forward fwd = forward(*params_, x);

    RobustnessCertificate cert;
    cert.example_id = example_id;
    cert.delta_in = delta_in_;
    cert.s_norm = s_norm_;
    cert.m_norm = spectral_norm(fwd.m);
    cert.predicted = static_cast<int>(
        std::max_element(fwd.out.begin(), fwd.out.end()) - fwd.out.begin());
    cert.correctly_classified = cert.predicted == label;

    double runner_up = -std::numeric_limits<double>::infinity();
    for (int m = 0; m < params_->dims.h; ++m)
      if (m != label) runner_up = std::max(runner_up, fwd.out[m]);
    const double raw_margin = fwd.out[label] - runner_up;
    cert.margin = std::max(0.0, raw_margin);
    if (!cert.correctly_classified || cert.margin <= 0.0) return cert;

    // A class flip needs one output difference to move by the full margin,
    // and |delta_i - delta_j| <= sqrt(2) * ||delta||_2, so it is enough to
    // keep the output deviation below margin / sqrt(2).
    const double target = cert.margin / std::sqrt(2.0);
    if (deviation_bound(cert.m_norm, 0.0) > target) return cert;  // degenerate

    double lo = 0.0, hi = 1e-6;
    int guard = 0;
    while (deviation_bound(cert.m_norm, hi) <= target && guard++ < 4096) {
      lo = hi;
      hi *= 2.0;
    }
    // Largest eps with bound(eps) <= target, to relative 1e-6.
    while (hi - lo > 1e-6 * hi) {
      const double mid = 0.5 * (lo + hi);
      if (deviation_bound(cert.m_norm, mid) <= target)
        lo = mid;
      else
        hi = mid;
    }
    cert.radius = lo;
    return cert;
  }

  /// Global Lipschitz constant valid on the box ||x||_inf <= x_inf_cap:
  /// ||M||_2 is capped over the box by ||B||_2 + delta_in * x_inf_cap and
  /// the perturbation exponential by exp(delta_in * x_inf_cap).
  double lipschitz_bound(double x_inf_cap) const {
    if (x_inf_cap < 0.0) throw DomainError("lipschitz_bound: cap must be >= 0");
    return sqrt_n_ * s_norm_ * delta_in_ * std::exp(delta_in_ * x_inf_cap) *
           std::exp(b_norm_ + delta_in_ * x_inf_cap);
  }

  /// Empirical soundness check: perturbs every coordinate by a random sign
  /// times 0.99 * radius and reports whether the predicted class ever
  /// changed. Must come back true for a valid certificate.
  bool attack_audit(std::span<const double> x, double radius, int trials,
                    std::uint64_t seed = 0x5eed) const {
    if (radius <= 0.0) return true;  // nothing inside an empty ball
    const std::vector<double> base = forward_out(*params_, x);
    const int predicted = static_cast<int>(
        std::max_element(base.begin(), base.end()) - base.begin());
    Rng rng(seed);
    std::vector<double> perturbed(x.size());
    const double step = 0.99 * radius;
    for (int t = 0; t < trials; ++t) {
      for (std::size_t q = 0; q < x.size(); ++q)
        perturbed[q] = x[q] + ((rng.next_u64() & 1) ? step : -step);
      const std::vector<double> out = forward_out(*params_, perturbed);
      const int pred = static_cast<int>(
          std::max_element(out.begin(), out.end()) - out.begin());
      if (pred != predicted) return false;
    }
    return true;
  }

  /// delta_in as the inf-to-Frobenius operator bound of the linear map
  /// x -> M - B: with W_{(jk),q} = sum_a T_a(j,k) U(a,q), returns
  /// sqrt(sum_{jk} (sum_q |W_{(jk),q}|)^2). Since ||.||_2 <= ||.||_F this
  /// also bounds the spectral norm of the matrix deviation.
  static double compute_delta_in(const MLayerParams& params) {
    const Dims& dims = params.dims;
    double total = 0.0;
    std::vector<double> t_col(dims.d);
    for (int j = 0; j < dims.n; ++j)
      for (int k = 0; k < dims.n; ++k) {
        for (int a = 0; a < dims.d; ++a) t_col[a] = params.t[a](j, k);
        double row_sum = 0.0;
        for (int q = 0; q < dims.p; ++q) {
          double w = 0.0;
          for (int a = 0; a < dims.d; ++a) w += t_col[a] * params.u(a, q);
          row_sum += std::abs(w);
        }
        total += row_sum * row_sum;
      }
    return std::sqrt(total);
  }

  /// ||S||_2 of the readout viewed as an h x n^2 matrix.
  static double compute_s_norm(const MLayerParams& params) {
    const Dims& dims = params.dims;
    const int nn = dims.n * dims.n;
    Matrix s_flat(dims.h, nn);
    for (int m = 0; m < dims.h; ++m)
      for (int i = 0; i < nn; ++i) s_flat(m, i) = params.s[m].data()[i];
    return spectral_norm(s_flat);
  }

 private:
  const MLayerParams* params_;
  double sqrt_n_;
  double delta_in_;
  double s_norm_;
  double b_norm_;
};

inline double delta_in(const MLayerParams& params) {
  return Certifier::compute_delta_in(params);
}

inline double output_deviation_bound(const MLayerParams& params,
                                     std::span<const double> x, double eps) {
  return Certifier(params).output_deviation_bound(x, eps);
}

inline RobustnessCertificate certified_radius(const MLayerParams& params,
                                              std::span<const double> x, int label) {
  return Certifier(params).certify(x, label);
}

inline double lipschitz_bound(const MLayerParams& params, double x_inf_cap) {
  return Certifier(params).lipschitz_bound(x_inf_cap);
}

inline bool attack_audit(const MLayerParams& params, std::span<const double> x,
                         double radius, int trials, std::uint64_t seed = 0x5eed) {
  return Certifier(params).attack_audit(x, radius, trials, seed);
}

/// example_id, margin, delta_in, s_norm, m_norm, radius.
inline std::string certificates_to_csv(const std::vector<RobustnessCertificate>& certs) {
  std::string out = "example_id,margin,delta_in,s_norm,m_norm,radius\n";
  for (const RobustnessCertificate& c : certs) {
    out += std::to_string(c.example_id);
    out += ',' + format_double(c.margin);
    out += ',' + format_double(c.delta_in);
    out += ',' + format_double(c.s_norm);
    out += ',' + format_double(c.m_norm);
    out += ',' + format_double(c.radius);
    out += '\n';
  }
  return out;
}

/// Log10-spaced histogram of the positive radii: bin_lo,bin_hi,count rows.
inline std::string radius_histogram_csv(const std::vector<double>& radii, int n_bins = 40) {
  std::vector<double> positive;
  for (double r : radii)
    if (r > 0.0) positive.push_back(r);
  std::string out = "bin_lo,bin_hi,count\n";
  if (positive.empty() || n_bins < 1) return out;
  const auto [lo_it, hi_it] = std::minmax_element(positive.begin(), positive.end());
  double lo = std::log10(*lo_it);
  double hi = std::log10(*hi_it);
  if (hi - lo < 1e-12) hi = lo + 1e-12;
  const double width = (hi - lo) / n_bins;
  std::vector<long long> counts(n_bins, 0);
  for (double r : positive) {
    int b = static_cast<int>((std::log10(r) - lo) / width);
    b = std::clamp(b, 0, n_bins - 1);
    ++counts[b];
  }
  for (int b = 0; b < n_bins; ++b) {
    out += format_double(std::pow(10.0, lo + b * width));
    out += ',' + format_double(std::pow(10.0, lo + (b + 1) * width));
    out += ',' + std::to_string(counts[b]);
    out += '\n';
  }
  return out;
}

}  // namespace mlayer
