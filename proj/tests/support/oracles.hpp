// Independent brute-force oracles the test suites freeze expected values
// against. Deliberately scalar, allocation-happy, and written from the
// definitions rather than from the library code.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "memseed/scenes.hpp"

namespace testsupport {

// --- shot-boundary oracle ---------------------------------------------------

struct HsvPx {
  double h, s, v;
};

inline HsvPx oracle_hsv(double r, double g, double b) {
  double cmax = std::max({r, g, b});
  double cmin = std::min({r, g, b});
  double delta = cmax - cmin;
  HsvPx out{0.0, 0.0, cmax};
  if (cmax > 0.0) out.s = delta / cmax;
  if (delta > 0.0) {
    double deg;
    if (cmax == r)
      deg = 60.0 * std::fmod((g - b) / delta, 6.0);
    else if (cmax == g)
      deg = 60.0 * ((b - r) / delta + 2.0);
    else
      deg = 60.0 * ((r - g) / delta + 4.0);
    if (deg < 0.0) deg += 360.0;
    out.h = deg / 360.0;
  }
  return out;
}

inline std::vector<bool> oracle_edge_bits(const memseed::Frame& f) {
  const int w = f.width, h = f.height;
  std::vector<double> gray(static_cast<std::size_t>(w) * h);
  for (int i = 0; i < w * h; ++i)
    gray[i] = (f.rgb[3 * i] / 255.0 + f.rgb[3 * i + 1] / 255.0 + f.rgb[3 * i + 2] / 255.0) / 3.0;
  auto g = [&](int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return gray[static_cast<std::size_t>(y) * w + x];
  };
  std::vector<double> mag(static_cast<std::size_t>(w) * h);
  double mx = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double gx = (g(x + 1, y - 1) + 2 * g(x + 1, y) + g(x + 1, y + 1)) -
                  (g(x - 1, y - 1) + 2 * g(x - 1, y) + g(x - 1, y + 1));
      double gy = (g(x - 1, y + 1) + 2 * g(x, y + 1) + g(x + 1, y + 1)) -
                  (g(x - 1, y - 1) + 2 * g(x, y - 1) + g(x + 1, y - 1));
      mag[static_cast<std::size_t>(y) * w + x] = std::sqrt(gx * gx + gy * gy);
      mx = std::max(mx, mag[static_cast<std::size_t>(y) * w + x]);
    }
  std::vector<bool> bits(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = mag[i] > std::max(0.25 * mx, 1e-12);
  return bits;
}

inline double oracle_frame_delta(const memseed::Frame& a, const memseed::Frame& b) {
  const std::size_t n = a.pixel_count();
  double hsv_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    HsvPx pa = oracle_hsv(a.rgb[3 * i] / 255.0, a.rgb[3 * i + 1] / 255.0, a.rgb[3 * i + 2] / 255.0);
    HsvPx pb = oracle_hsv(b.rgb[3 * i] / 255.0, b.rgb[3 * i + 1] / 255.0, b.rgb[3 * i + 2] / 255.0);
    double dh = std::fabs(pa.h - pb.h);
    dh = std::min(dh, 1.0 - dh);
    hsv_total += (dh + std::fabs(pa.s - pb.s) + std::fabs(pa.v - pb.v)) / 3.0;
  }
  auto ea = oracle_edge_bits(a), eb = oracle_edge_bits(b);
  double flips = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (ea[i] != eb[i]) flips += 1.0;
  return 0.5 * (hsv_total / static_cast<double>(n)) + 0.5 * (flips / static_cast<double>(n));
}

// --- rank-correlation oracle (tie-free inputs) -------------------------------

// Classic Spearman formula 1 - 6*sum(d^2)/(n(n^2-1)); valid only without ties.
inline double oracle_spearman_no_ties(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  auto ranks = [&](const std::vector<double>& v) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[order[i]] = static_cast<double>(i + 1);
    return r;
  };
  auto rx = ranks(x), ry = ranks(y);
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  double nn = static_cast<double>(n);
  return 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
}

}  // namespace testsupport
