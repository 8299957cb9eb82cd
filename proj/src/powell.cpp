#include "lagtrack/powell.hpp"

#include <cmath>
#include <limits>
#include <utility>

namespace lagtrack {

namespace {

constexpr double kGold = 1.618033988749895;
constexpr double kCGold = 0.3819660112501051;
constexpr double kTiny = 1e-20;
constexpr double kGrowLimit = 100.0;

struct Bracket {
  double a, b, c;
  double fa, fb, fc;
};

// Downhill bracketing of a 1-D minimum, starting from [0, 1].
template <class F>
Bracket bracket_minimum(F&& g, double f0) {
  Bracket br{0.0, 1.0, 0.0, f0, g(1.0), 0.0};
  if (br.fb > br.fa) {
    std::swap(br.a, br.b);
    std::swap(br.fa, br.fb);
  }
  br.c = br.b + kGold * (br.b - br.a);
  br.fc = g(br.c);
  int guard = 0;
  while (br.fb > br.fc && guard++ < 200) {
    const double r = (br.b - br.a) * (br.fb - br.fc);
    const double q = (br.b - br.c) * (br.fb - br.fa);
    double denom = q - r;
    if (std::abs(denom) < kTiny) denom = denom < 0 ? -kTiny : kTiny;
    double u = br.b - ((br.b - br.c) * q - (br.b - br.a) * r) / (2.0 * denom);
    const double ulim = br.b + kGrowLimit * (br.c - br.b);
    double fu;
    if ((br.b - u) * (u - br.c) > 0.0) {
      fu = g(u);
      if (fu < br.fc) {
        br.a = br.b; br.fa = br.fb;
        br.b = u; br.fb = fu;
        return br;
      }
      if (fu > br.fb) {
        br.c = u; br.fc = fu;
        return br;
      }
      u = br.c + kGold * (br.c - br.b);
      fu = g(u);
    } else if ((br.c - u) * (u - ulim) > 0.0) {
      fu = g(u);
      if (fu < br.fc) {
        br.b = br.c; br.fb = br.fc;
        br.c = u; br.fc = fu;
        u = br.c + kGold * (br.c - br.b);
        fu = g(u);
      }
    } else if ((u - ulim) * (ulim - br.c) >= 0.0) {
      u = ulim;
      fu = g(u);
    } else {
      u = br.c + kGold * (br.c - br.b);
      fu = g(u);
    }
    br.a = br.b; br.fa = br.fb;
    br.b = br.c; br.fb = br.fc;
    br.c = u; br.fc = fu;
  }
  return br;
}

template <class F>
std::pair<double, double> brent(F&& g, const Bracket& br, double tol) {
  double a = std::min(br.a, br.c);
  double b = std::max(br.a, br.c);
  double x = br.b, w = br.b, v = br.b;
  double fx = br.fb, fw = br.fb, fv = br.fb;
  double d = 0.0, e = 0.0;
  for (int iter = 0; iter < 200; ++iter) {
    const double xm = 0.5 * (a + b);
    const double tol1 = tol * std::abs(x) + 1e-14;
    const double tol2 = 2.0 * tol1;
    if (std::abs(x - xm) <= tol2 - 0.5 * (b - a)) break;
    if (std::abs(e) > tol1) {
      const double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      const double etemp = e;
      e = d;
      if (std::abs(p) >= std::abs(0.5 * q * etemp) || p <= q * (a - x) || p >= q * (b - x)) {
        e = (x >= xm) ? a - x : b - x;
        d = kCGold * e;
      } else {
        d = p / q;
        const double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = std::copysign(tol1, xm - x);
      }
    } else {
      e = (x >= xm) ? a - x : b - x;
      d = kCGold * e;
    }
    const double u = std::abs(d) >= tol1 ? x + d : x + std::copysign(tol1, d);
    const double fu = g(u);
    if (fu <= fx) {
      if (u >= x) a = x; else b = x;
      v = w; w = x; x = u;
      fv = fw; fw = fx; fx = fu;
    } else {
      if (u < x) a = u; else b = u;
      if (fu <= fw || w == x) {
        v = w; w = u;
        fv = fw; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u;
        fv = fu;
      }
    }
  }
  return {x, fx};
}

}  // namespace

std::pair<double, double> line_minimize(const Objective& f, const Eigen::VectorXd& x,
                                        const Eigen::VectorXd& direction, double f_at_x,
                                        double tolerance) {
  Eigen::VectorXd trial(x.size());
  auto g = [&](double t) {
    trial = x + t * direction;
    return f(trial);
  };
  const Bracket br = bracket_minimum(g, f_at_x);
  auto best = brent(g, br, tolerance);
  if (!(best.second <= f_at_x)) return {0.0, f_at_x};
  return best;
}

PowellResult minimize_powell(const Objective& f, const Eigen::VectorXd& start,
                             const PowellOptions& options) {
  const Eigen::Index n = start.size();
  Eigen::MatrixXd directions = Eigen::MatrixXd::Identity(n, n);
  PowellResult result;
  result.x = start;
  result.value = f(start);
  if (n == 0) {
    result.converged = true;
    return result;
  }

  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    result.iterations = iter;
    const Eigen::VectorXd x_start = result.x;
    const double f_start = result.value;
    double biggest_drop = 0.0;
    Eigen::Index biggest_index = 0;

    for (Eigen::Index i = 0; i < n; ++i) {
      const double before = result.value;
      const auto [t, value] = line_minimize(f, result.x, directions.col(i), before,
                                            options.line_tolerance);
      result.x += t * directions.col(i);
      result.value = value;
      if (before - value > biggest_drop) {
        biggest_drop = before - value;
        biggest_index = i;
      }
    }

    if (2.0 * (f_start - result.value) <=
        options.relative_tolerance * (std::abs(f_start) + std::abs(result.value)) + 1e-300) {
      result.converged = true;
      return result;
    }

    // Try the average direction of this sweep; replace the direction of
    // largest decrease when the extrapolation test passes.
    const Eigen::VectorXd new_dir = result.x - x_start;
    const Eigen::VectorXd extrapolated = 2.0 * result.x - x_start;
    const double f_ext = f(extrapolated);
    if (f_ext < f_start) {
      const double a = f_start - 2.0 * result.value + f_ext;
      const double b = f_start - result.value - biggest_drop;
      const double c = f_start - f_ext;
      if (2.0 * a * b * b - biggest_drop * c * c < 0.0) {
        const auto [t, value] =
            line_minimize(f, result.x, new_dir, result.value, options.line_tolerance);
        result.x += t * new_dir;
        result.value = value;
        directions.col(biggest_index) = directions.col(n - 1);
        directions.col(n - 1) = new_dir;
      }
    }
  }
  return result;
}

}  // namespace lagtrack
