#pragma once

#include <cmath>

namespace xbt::testing {

// KL(N(mh, sh^2) || N(m, s^2)) by composite Simpson over mh +- 14 sh.
// Log densities are subtracted analytically so the tails never underflow to 0*log(0/0).
inline double kl_quadrature(double mh, double sh, double m, double s, int intervals = 40000) {
  const double a = mh - 14.0 * sh, b = mh + 14.0 * sh, h = (b - a) / intervals;
  auto f = [&](double x) {
    const double zp = (x - mh) / sh, zq = (x - m) / s;
    const double logp = -0.5 * zp * zp - std::log(sh) - 0.5 * std::log(2.0 * M_PI);
    const double logq = -0.5 * zq * zq - std::log(s) - 0.5 * std::log(2.0 * M_PI);
    return std::exp(logp) * (logp - logq);
  };
  double acc = f(a) + f(b);
  for (int i = 1; i < intervals; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

}  // namespace xbt::testing
