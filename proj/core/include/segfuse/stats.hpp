#pragma once

#include <string>
#include <vector>

namespace segfuse {

// One experimental condition: a label plus one score per repetition.
struct RunGroup {
  std::string label;
  std::vector<double> scores;
};

struct Summary {
  double mean = 0.0;
  double sd = 0.0;
  int n = 0;
};

// Mean and standard deviation of repeated scores. The default divisor is
// n-1; pass sample_sd=false for the population divisor.
Summary summarize(const std::vector<double>& scores, bool sample_sd = true);

enum class Sided { Greater, Two };

Sided sided_from_string(const std::string& s);
std::string to_string(Sided sided);

struct TestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
  Sided sided = Sided::Greater;
};

// Regularized incomplete beta function I_x(a, b).
double ibeta(double a, double b, double x);

// Student-t CDF, exact via I_x(df/2, 1/2) with x = df/(df + t^2).
double t_cdf(double t, double df);

// Welch's unequal-variance t-test from summary statistics. "greater"
// tests whether group 1 exceeds group 2.
TestResult welch_test(double m1, double s1, int n1, double m2, double s2,
                      int n2, Sided sided);
TestResult welch_test(const RunGroup& g1, const RunGroup& g2, Sided sided);

}  // namespace segfuse
