#pragma once

#include <algorithm>
#include <cmath>

#include "czc/rangecoder.hpp"

// Discretized likelihood models: an integer symbol k carries probability
// CDF(k + 1/2) - CDF(k - 1/2). The continuous-input variants (with uniform
// noise standing in for rounding) supply training gradients; the integer
// variants are quantized into range-coder tables.

namespace czc::entropy {

constexpr double kMinLikelihood = 1e-9;
constexpr double kLog2E = 1.4426950408889634;  // 1/ln 2

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865476); }
inline double normal_pdf(double x) {
  return 0.3989422804014327 * std::exp(-0.5 * x * x);
}
inline double logistic_cdf(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logistic_pdf(double x) {
  double e = std::exp(-std::fabs(x));
  double d = 1.0 + e;
  return e / (d * d);
}

// Bits of -log2 p(v) under N(mu, sigma^2) discretized at half-integers,
// with gradients w.r.t. v, mu, sigma. sigma must already be floored.
inline double gaussian_bits_grad(double v, double mu, double sigma, double& dv, double& dmu,
                                 double& dsigma) {
  double inv = 1.0 / sigma;
  double a = (v + 0.5 - mu) * inv;
  double b = (v - 0.5 - mu) * inv;
  double p = normal_cdf(a) - normal_cdf(b);
  if (p < kMinLikelihood) {
    // Deep tail: the clamped likelihood is constant, but keep an asymptotic
    // pull on the value/mean/scale so training can't strand elements there.
    // -ln p ~ t^2/2 at the inner boundary t, which never underflows.
    double t = v >= mu ? b : a;
    dv = kLog2E * t * inv;
    dmu = -dv;
    dsigma = -kLog2E * t * t * inv;
    return -std::log2(kMinLikelihood);
  }
  double pa = normal_pdf(a), pb = normal_pdf(b);
  double dldp = -kLog2E / p;  // d(-log2 p)/dp = -1/(p ln2)
  dv = dldp * (pa - pb) * inv;
  dmu = -dv;
  dsigma = dldp * -(pa * a - pb * b) * inv;
  return -std::log2(p);
}

// Same for a logistic with location loc and scale s.
inline double logistic_bits_grad(double v, double loc, double s, double& dv, double& dloc,
                                 double& ds) {
  double inv = 1.0 / s;
  double a = (v + 0.5 - loc) * inv;
  double b = (v - 0.5 - loc) * inv;
  double p = logistic_cdf(a) - logistic_cdf(b);
  if (p < kMinLikelihood) {
    // -ln p ~ |t| at the inner boundary t for the logistic tail.
    double t = v >= loc ? b : a;
    dv = kLog2E * (t >= 0 ? inv : -inv);
    dloc = -dv;
    ds = -kLog2E * std::fabs(t) * inv;
    return -std::log2(kMinLikelihood);
  }
  double pa = logistic_pdf(a), pb = logistic_pdf(b);
  double dldp = -kLog2E / p;
  dv = dldp * (pa - pb) * inv;
  dloc = -dv;
  ds = dldp * -(pa * a - pb * b) * inv;
  return -std::log2(p);
}

inline double gaussian_bits(int v, double mu, double sigma) {
  double inv = 1.0 / sigma;
  double p = normal_cdf((v + 0.5 - mu) * inv) - normal_cdf((v - 0.5 - mu) * inv);
  return -std::log2(std::max(p, kMinLikelihood));
}

inline double logistic_bits(int v, double loc, double s) {
  double inv = 1.0 / s;
  double p = logistic_cdf((v + 0.5 - loc) * inv) - logistic_cdf((v - 0.5 - loc) * inv);
  return -std::log2(std::max(p, kMinLikelihood));
}

// ---------------------------------------------------------------------------
// Range-coder tables. Support spans +-9 sigma (at least +-2) around the mean
// so that a rounded latent essentially never needs clamping; tail mass folds
// into the end bins.

constexpr int kSupportClip = 4096;

template <class Cdf>
rc::QuantizedCdf quantized_from_cdf(double center, double width, Cdf&& cdf) {
  int lo = static_cast<int>(std::floor(center - width));
  int hi = static_cast<int>(std::ceil(center + width));
  lo = std::max(lo, -kSupportClip);
  hi = std::min(hi, kSupportClip);
  if (hi < lo) hi = lo;
  std::vector<double> mass(static_cast<size_t>(hi - lo + 1));
  for (int k = lo; k <= hi; ++k) {
    double upper = k == hi ? 1.0 : cdf(k + 0.5);
    double lower = k == lo ? 0.0 : cdf(k - 0.5);
    mass[static_cast<size_t>(k - lo)] = std::max(upper - lower, 0.0);
  }
  return rc::QuantizedCdf::from_masses(lo, mass);
}

inline rc::QuantizedCdf gaussian_qcdf(double mu, double sigma) {
  double inv = 1.0 / sigma;
  return quantized_from_cdf(mu, std::max(9.0 * sigma, 2.0) + 1.0,
                            [mu, inv](double x) { return normal_cdf((x - mu) * inv); });
}

inline rc::QuantizedCdf logistic_qcdf(double loc, double s) {
  double inv = 1.0 / s;
  return quantized_from_cdf(loc, std::max(14.0 * s, 2.0) + 1.0,
                            [loc, inv](double x) { return logistic_cdf((x - loc) * inv); });
}

}  // namespace czc::entropy
