#pragma once

// Straightforward reference implementations used to cross-check the library.
// They use plain loops over std::vector and never call into efficomm kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major, m[row][col]

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double keep_ratio_raw(bool ego, double alpha, double tau, double k_ego = 0.9, double k_remote = 0.5) {
  const double base = ego ? k_ego : k_remote;
  return base * (0.5 + 0.5 * alpha) * (0.7 + 0.3 * (1.0 - tau));
}

/// max(1, floor(cells * k)) with k taken as the exact rational value of the double.
inline std::int64_t cells_to_keep(double k, std::int64_t cells) {
  using boost::multiprecision::cpp_int;
  using boost::multiprecision::cpp_rational;
  int exp = 0;
  const double mant = std::frexp(k, &exp);
  const auto m = static_cast<std::int64_t>(std::ldexp(mant, 53));
  cpp_rational exact{cpp_int(m)};
  if (exp - 53 >= 0)
    exact *= cpp_rational(cpp_int(1) << (exp - 53));
  else
    exact /= cpp_rational(cpp_int(1) << (53 - exp));
  const cpp_rational prod = exact * cpp_rational(cells);
  const cpp_int floor = boost::multiprecision::numerator(prod) / boost::multiprecision::denominator(prod);
  return std::max<std::int64_t>(1, floor.convert_to<std::int64_t>());
}

/// Sorts every cell by (score desc, index asc) and keeps the first k.
inline std::vector<std::uint8_t> topk(const Vec& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::uint8_t> keep(scores.size(), 0);
  for (std::size_t i = 0; i < k; ++i) keep[idx[i]] = 1;
  return keep;
}

inline Vec matvec(const Mat& m, const Vec& x) {
  Vec y(m.size(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) y[i] += m[i][j] * x[j];
  return y;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vec softmax(const Vec& logits) {
  double top = logits[0];
  for (double v : logits) top = std::max(top, v);
  Vec p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += p[i] = std::exp(logits[i] - top);
  for (double& v : p) v /= sum;
  return p;
}

/// Dense single-head graph attention over a full graph. Materializes the
/// N x N logit table first, then normalizes each row.
inline Mat gat(const Mat& nodes, const Mat& weight, const Vec& attention, double slope, Mat* coef_out = nullptr) {
  const std::size_t n = nodes.size(), hidden = weight.size();
  Mat h(n);
  for (std::size_t v = 0; v < n; ++v) h[v] = matvec(weight, nodes[v]);
  Mat e(n, Vec(n));
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t u = 0; u < n; ++u) {
      double s = 0.0;
      for (std::size_t i = 0; i < hidden; ++i) s += attention[i] * h[u][i] + attention[hidden + i] * h[v][i];
      e[v][u] = s > 0.0 ? s : slope * s;
    }
  Mat coef(n), z(n, Vec(hidden, 0.0));
  for (std::size_t v = 0; v < n; ++v) {
    coef[v] = softmax(e[v]);
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t i = 0; i < hidden; ++i) z[v][i] += coef[v][u] * h[u][i];
    for (double& x : z[v]) x = x > 0.0 ? x : std::expm1(x);
  }
  if (coef_out) *coef_out = coef;
  return z;
}

/// Attention at one cell: columns[0] is the query source, every column is a key/value source.
inline Vec sdpa(const Mat& columns, const Mat& wq, const Mat& wk, const Mat& wv) {
  const Vec q = matvec(wq, columns[0]);
  const double scale = 1.0 / std::sqrt(double(wq.size()));
  Vec logits;
  for (const auto& x : columns) logits.push_back(dot(q, matvec(wk, x)) * scale);
  const Vec p = softmax(logits);
  Vec out(wv.size(), 0.0);
  for (std::size_t j = 0; j < columns.size(); ++j) {
    const Vec v = matvec(wv, columns[j]);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[j] * v[i];
  }
  return out;
}

inline double entropy(const Vec& g) {
  double h = 0.0;
  for (double x : g)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

/// Single pass mean and population standard deviation.
struct Welford {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / double(n);
    m2 += d * (x - mean);
  }
  double std() const { return n ? std::sqrt(m2 / double(n)) : 0.0; }
};

/// Ray walk rounding every intermediate coordinate with floor(x + 0.5).
inline bool visible(int r0, int c0, int r1, int c1, const std::vector<std::vector<int>>& occ) {
  const int dr = r1 - r0, dc = c1 - c0;
  const int n = std::max(std::abs(dr), std::abs(dc));
  const int target = occ[r1][c1];
  for (int t = 1; t < n; ++t) {
    const int r = r0 + int(std::floor(double(t) * dr / n + 0.5));
    const int c = c0 + int(std::floor(double(t) * dc / n + 0.5));
    if (occ[r][c] >= 0 && occ[r][c] != target) return false;
  }
  return true;
}

/// Little-endian field readers for hand-parsing payloads.
inline std::uint32_t le(const std::vector<std::uint8_t>& b, std::size_t at, int width) {
  std::uint32_t v = 0;
  for (int i = width - 1; i >= 0; --i) v = (v << 8) | b[at + std::size_t(i)];
  return v;
}

inline float le_f32(const std::vector<std::uint8_t>& b, std::size_t at) {
  const std::uint32_t bits = le(b, at, 4);
  float f;
  static_assert(sizeof f == sizeof bits);
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

}  // namespace oracle
