#pragma once

#include "unforge/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <vector>

namespace unforge::testing {

// Top-down memoized LCS, deliberately unlike a bottom-up table.
inline int lcs_oracle(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<std::size_t, std::size_t>, int> memo;
  std::function<int(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> int {
    if (i == a.size() || j == b.size()) return 0;
    const auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const int v = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    memo[key] = v;
    return v;
  };
  return go(0, 0);
}

// Largest empirical CDF gap, by brute force over every pooled point.
inline double ks_d_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  auto cdf = [](const std::vector<double>& s, double x) {
    return static_cast<double>(std::count_if(s.begin(), s.end(), [&](double v) { return v <= x; })) /
           static_cast<double>(s.size());
  };
  for (const auto* s : {&a, &b})
    for (double x : *s) d = std::max(d, std::abs(cdf(a, x) - cdf(b, x)));
  return d;
}

inline double permutation_p(const std::vector<double>& a, const std::vector<double>& b, int resamples, Rng& rng) {
  const double d_obs = ks_d_oracle(a, b);
  std::vector<double> pool(a);
  pool.insert(pool.end(), b.begin(), b.end());
  int hits = 0;
  for (int r = 0; r < resamples; ++r) {
    rng.shuffle(std::span(pool));
    const std::vector<double> x(pool.begin(), pool.begin() + static_cast<long>(a.size()));
    const std::vector<double> y(pool.begin() + static_cast<long>(a.size()), pool.end());
    if (ks_d_oracle(x, y) >= d_obs - 1e-12) ++hits;
  }
  return static_cast<double>(hits) / resamples;
}

}  // namespace unforge::testing
