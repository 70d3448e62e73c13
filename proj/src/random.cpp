#include "bifa/random.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace bifa {

namespace {

constexpr double kZeroTol = 10.0 * std::numeric_limits<double>::epsilon();

double gig_mode(double lambda, double omega) {
  if (lambda >= 1.0) return (std::sqrt((lambda - 1.0) * (lambda - 1.0) + omega * omega) + (lambda - 1.0)) / omega;
  return omega / (std::sqrt((1.0 - lambda) * (1.0 - lambda) + omega * omega) + (1.0 - lambda));
}

// The three regimes below follow Hörmann & Leydold (2014). All of them draw
// from the standardized density x^(lambda-1) exp(-omega (x + 1/x) / 2) with
// lambda >= 0.

double gig_concave(Rng& rng, double lambda, double omega) {
  const double xm = gig_mode(lambda, omega);
  const double x0 = omega / (1.0 - lambda);
  const double k0 = std::exp((lambda - 1.0) * std::log(xm) - 0.5 * omega * (xm + 1.0 / xm));
  double a[3];
  double k1, k2;
  a[0] = k0 * x0;
  if (x0 >= 2.0 / omega) {
    k1 = 0.0;
    a[1] = 0.0;
    k2 = std::pow(x0, lambda - 1.0);
    a[2] = k2 * 2.0 * std::exp(-omega * x0 / 2.0) / omega;
  } else {
    k1 = std::exp(-omega);
    a[1] = lambda == 0.0 ? k1 * std::log(2.0 / (omega * omega))
                         : k1 / lambda * (std::pow(2.0 / omega, lambda) - std::pow(x0, lambda));
    k2 = std::pow(2.0 / omega, lambda - 1.0);
    a[2] = k2 * 2.0 * std::exp(-1.0) / omega;
  }
  const double total = a[0] + a[1] + a[2];
  for (;;) {
    double v = total * rng.uniform();
    double x, hx;
    if (v <= a[0]) {
      x = x0 * v / a[0];
      hx = k0;
    } else if ((v -= a[0]) <= a[1]) {
      if (lambda == 0.0) {
        x = omega * std::exp(std::exp(omega) * v);
        hx = k1 / x;
      } else {
        x = std::pow(std::pow(x0, lambda) + lambda / k1 * v, 1.0 / lambda);
        hx = k1 * std::pow(x, lambda - 1.0);
      }
    } else {
      v -= a[1];
      const double lo = std::max(x0, 2.0 / omega);
      x = -2.0 / omega * std::log(std::exp(-omega / 2.0 * lo) - omega / (2.0 * k2) * v);
      hx = k2 * std::exp(-omega / 2.0 * x);
    }
    const double u = rng.uniform() * hx;
    if (std::log(u) <= (lambda - 1.0) * std::log(x) - omega / 2.0 * (x + 1.0 / x)) return x;
  }
}

double gig_rou_noshift(Rng& rng, double lambda, double omega) {
  const double t = 0.5 * (lambda - 1.0);
  const double s = 0.25 * omega;
  const double xm = gig_mode(lambda, omega);
  const double nc = t * std::log(xm) - s * (xm + 1.0 / xm);
  const double ym = ((lambda + 1.0) + std::sqrt((lambda + 1.0) * (lambda + 1.0) + omega * omega)) / omega;
  const double um = std::exp(0.5 * (lambda + 1.0) * std::log(ym) - s * (ym + 1.0 / ym) - nc);
  for (;;) {
    const double u = um * rng.uniform();
    const double v = rng.uniform();
    const double x = u / v;
    if (std::log(v) <= t * std::log(x) - s * (x + 1.0 / x) - nc) return x;
  }
}

double gig_rou_shift(Rng& rng, double lambda, double omega) {
  const double t = 0.5 * (lambda - 1.0);
  const double s = 0.25 * omega;
  const double xm = gig_mode(lambda, omega);
  const double nc = t * std::log(xm) - s * (xm + 1.0 / xm);

  // Extremes of x sqrt(f(x + xm)) are roots of a cubic; Cardano in
  // trigonometric form.
  const double a = -(2.0 * (lambda + 1.0) / omega + xm);
  const double b = 2.0 * (lambda - 1.0) * xm / omega - 1.0;
  const double c = xm;
  const double p = b - a * a / 3.0;
  const double q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
  const double fi = std::acos(std::clamp(-q / (2.0 * std::sqrt(-(p * p * p) / 27.0)), -1.0, 1.0));
  const double fak = 2.0 * std::sqrt(-p / 3.0);
  const double y1 = fak * std::cos(fi / 3.0) - a / 3.0;
  const double y2 = fak * std::cos(fi / 3.0 + 4.0 / 3.0 * std::numbers::pi) - a / 3.0;
  const double uplus = (y1 - xm) * std::exp(t * std::log(y1) - s * (y1 + 1.0 / y1) - nc);
  const double uminus = (y2 - xm) * std::exp(t * std::log(y2) - s * (y2 + 1.0 / y2) - nc);
  for (;;) {
    const double u = uminus + rng.uniform() * (uplus - uminus);
    const double v = rng.uniform();
    const double x = u / v + xm;
    if (x > 0.0 && std::log(v) <= t * std::log(x) - s * (x + 1.0 / x) - nc) return x;
  }
}

}  // namespace

double Rng::uniform() {
  // 53 random bits mapped to the open interval.
  const std::uint64_t bits = engine_() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double Rng::normal() { return normal_(engine_); }

double Rng::exponential(double rate) { return -std::log(uniform()) / rate; }

double Rng::gamma(double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0) || !std::isfinite(shape) || !std::isfinite(rate))
    throw NumericError("gamma: invalid parameters shape=" + std::to_string(shape) +
                       " rate=" + std::to_string(rate));
  if (shape < 1e-3) {
    const double x = boost::math::gamma_p_inv(shape, uniform());
    return std::max(x, std::numeric_limits<double>::min()) / rate;
  }
  if (shape < 1.0) {
    // Shape boost G(a) = G(a + 1) U^(1/a), in logs to avoid underflow.
    const double g = gamma(shape + 1.0, 1.0);
    const double lx = std::log(g) + std::log(uniform()) / shape;
    return std::max(std::exp(lx), std::numeric_limits<double>::min()) / rate;
  }
  // Marsaglia & Tsang.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
  }
}

double Rng::gig(double lambda, double chi, double psi) {
  if (!std::isfinite(lambda) || !std::isfinite(chi) || !std::isfinite(psi) || chi < 0.0 || psi < 0.0 ||
      (chi == 0.0 && lambda <= 0.0) || (psi == 0.0 && lambda >= 0.0))
    throw NumericError("gig: invalid parameters");
  if (chi < kZeroTol) {
    if (lambda > 0.0) return gamma(lambda, psi / 2.0);
    throw NumericError("gig: chi underflow with lambda <= 0");
  }
  if (psi < kZeroTol) {
    if (lambda < 0.0) return 1.0 / gamma(-lambda, chi / 2.0);
    throw NumericError("gig: psi underflow with lambda >= 0");
  }
  const double abs_lambda = std::abs(lambda);
  const double alpha = std::sqrt(chi / psi);
  const double omega = std::sqrt(psi * chi);
  double x;
  if (abs_lambda > 2.0 || omega > 3.0) {
    x = gig_rou_shift(*this, abs_lambda, omega);
  } else if (abs_lambda >= 1.0 - 2.25 * omega * omega || omega > 0.2) {
    x = gig_rou_noshift(*this, abs_lambda, omega);
  } else {
    x = gig_concave(*this, abs_lambda, omega);
  }
  return lambda < 0.0 ? alpha / x : alpha * x;
}

double Rng::inv_gaussian(double mean, double shape) {
  if (!(mean > 0.0) || !(shape > 0.0)) throw NumericError("inv_gaussian: invalid parameters");
  if (!std::isfinite(mean)) return 1.0 / gamma(0.5, shape / 2.0);  // Lévy limit
  // Michael, Schucany & Haas, with the root rewritten to avoid cancellation.
  const double z = normal();
  const double y = z * z;
  const double my = mean * y;
  const double x = mean - 2.0 * mean * my / (my + std::sqrt(my * my + 4.0 * mean * shape * y));
  if (uniform() <= mean / (mean + x)) return x;
  return mean * mean / x;
}

double Rng::beta(double a, double b) {
  const double x = gamma(a, 1.0);
  const double y = gamma(b, 1.0);
  return x / (x + y);
}

std::uint64_t Rng::poisson(double mean) {
  if (!(mean >= 0.0) || !std::isfinite(mean)) throw NumericError("poisson: invalid mean");
  if (mean == 0.0) return 0;
  std::poisson_distribution<std::uint64_t> dist(mean);
  return dist(engine_);
}

std::size_t Rng::index(std::size_t n) {
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

Vector Rng::normal_vector(Index n) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = normal();
  return v;
}

Matrix Rng::normal_matrix(Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = normal();
  return m;
}

Vector Rng::dirichlet(const Vector& alpha) {
  Vector g(alpha.size());
  for (Index i = 0; i < alpha.size(); ++i) g(i) = gamma(alpha(i), 1.0);
  return g / g.sum();
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(17);
  os << engine_ << ' ' << normal_;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  is.imbue(std::locale::classic());
  is >> engine_ >> normal_;
  if (!is) throw ParseError("rng state could not be parsed");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer over the combined key.
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace bifa
