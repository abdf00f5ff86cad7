#include "segfuse/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace segfuse {

namespace {

// Continued-fraction part of the incomplete beta function, evaluated with
// the modified Lentz algorithm. Converges quickly for x below the
// crossover point (a+1)/(a+b+2); ibeta() flips arguments otherwise.
double betacf(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-12;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

Summary summarize(const std::vector<double>& scores, bool sample_sd) {
  if (scores.size() < 2) {
    throw std::invalid_argument("summarize: need at least 2 scores, got " +
                                std::to_string(scores.size()));
  }
  double sum = 0.0;
  for (double s : scores) {
    if (!std::isfinite(s)) {
      throw std::invalid_argument("summarize: scores must be finite");
    }
    sum += s;
  }
  const double n = static_cast<double>(scores.size());
  const double mean = sum / n;
  double ss = 0.0;
  for (double s : scores) {
    ss += (s - mean) * (s - mean);
  }
  Summary out;
  out.mean = mean;
  out.sd = std::sqrt(ss / (sample_sd ? n - 1.0 : n));
  out.n = static_cast<int>(scores.size());
  return out;
}

Sided sided_from_string(const std::string& s) {
  if (s == "greater") return Sided::Greater;
  if (s == "two") return Sided::Two;
  throw std::invalid_argument("sidedness must be \"greater\" or \"two\", got \"" +
                              s + "\"");
}

std::string to_string(Sided sided) {
  return sided == Sided::Greater ? "greater" : "two";
}

double ibeta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw std::invalid_argument("ibeta: parameters must be positive");
  }
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double lbeta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  const double front =
      std::exp(a * std::log(x) + b * std::log1p(-x) - lbeta);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * betacf(a, b, x) / a;
  }
  // Symmetry transform keeps the continued fraction in its fast region.
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double t_cdf(double t, double df) {
  if (!(df > 0.0)) {
    throw std::invalid_argument("t_cdf: df must be positive, got " +
                                std::to_string(df));
  }
  const double x = df / (df + t * t);
  const double tail = 0.5 * ibeta(0.5 * df, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

TestResult welch_test(double m1, double s1, int n1, double m2, double s2,
                      int n2, Sided sided) {
  if (n1 < 2 || n2 < 2) {
    throw std::invalid_argument("welch_test: each group needs n >= 2");
  }
  if (s1 < 0.0 || s2 < 0.0) {
    throw std::invalid_argument("welch_test: standard deviations must be >= 0");
  }
  const double v1 = s1 * s1 / n1;
  const double v2 = s2 * s2 / n2;
  const double se2 = v1 + v2;
  if (se2 == 0.0) {
    throw std::invalid_argument(
        "welch_test: both groups have zero variance (degenerate)");
  }
  TestResult r;
  r.sided = sided;
  r.t = (m1 - m2) / std::sqrt(se2);
  r.df = se2 * se2 / (v1 * v1 / (n1 - 1) + v2 * v2 / (n2 - 1));
  if (sided == Sided::Greater) {
    r.p = 1.0 - t_cdf(r.t, r.df);
  } else {
    r.p = 2.0 * (1.0 - t_cdf(std::fabs(r.t), r.df));
  }
  if (r.p < 0.0) r.p = 0.0;
  if (r.p > 1.0) r.p = 1.0;
  return r;
}

TestResult welch_test(const RunGroup& g1, const RunGroup& g2, Sided sided) {
  const Summary a = summarize(g1.scores);
  const Summary b = summarize(g2.scores);
  return welch_test(a.mean, a.sd, a.n, b.mean, b.sd, b.n, sided);
}

}  // namespace segfuse
