#include "roim/measures.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "roim/rng.hpp"

namespace roim {

// ---------------------------------------------------------------------------
// Piecewise
// ---------------------------------------------------------------------------

Piecewise::Piecewise(std::vector<Piece> pieces) : pieces_(std::move(pieces)) {
  if (pieces_.empty()) throw contract_error("piecewise function needs pieces");
  std::sort(pieces_.begin(), pieces_.end(),
            [](const Piece& a, const Piece& b) { return a.lo < b.lo; });
  if (pieces_.front().lo != 0 || pieces_.back().hi != 1) {
    throw contract_error("piecewise function must cover [0,1)");
  }
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    if (!(pieces_[i].lo < pieces_[i].hi)) {
      throw contract_error("piecewise pieces must have positive length");
    }
    if (i > 0 && pieces_[i - 1].hi != pieces_[i].lo) {
      throw contract_error("piecewise pieces must be contiguous");
    }
  }
}

Piecewise Piecewise::constant(const Rat& c) {
  return Piecewise({{Rat(0), Rat(1), c, Rat(0)}});
}

Piecewise Piecewise::identity() {
  return Piecewise({{Rat(0), Rat(1), Rat(0), Rat(1)}});
}

Piecewise Piecewise::linear(const Rat& a, const Rat& b) {
  return Piecewise({{Rat(0), Rat(1), a, b}});
}

Piecewise Piecewise::indicator(const Rat& lo, const Rat& hi) {
  std::vector<Piece> ps;
  if (lo > 0) ps.push_back({Rat(0), lo, Rat(0), Rat(0)});
  ps.push_back({lo, hi, Rat(1), Rat(0)});
  if (hi < 1) ps.push_back({hi, Rat(1), Rat(0), Rat(0)});
  return Piecewise(std::move(ps));
}

Piecewise Piecewise::from_grid(const GridFunction& u) {
  std::vector<Piece> ps;
  const long k = static_cast<long>(u.k);
  for (long i = 0; i < k; ++i) {
    Rat v(u.values[static_cast<std::size_t>(i)]);
    if (!ps.empty() && ps.back().a == v && ps.back().b == 0) {
      ps.back().hi = rat(i + 1, k);
    } else {
      ps.push_back({rat(i, k), rat(i + 1, k), v, Rat(0)});
    }
  }
  return Piecewise(std::move(ps));
}

Rat Piecewise::value(const Rat& x) const {
  for (const Piece& p : pieces_) {
    if (x >= p.lo && x < p.hi) return p.a + p.b * x;
  }
  throw contract_error("piecewise value outside [0,1)");
}

double Piecewise::value(double x) const {
  for (const Piece& p : pieces_) {
    if (x >= to_double(p.lo) && x < to_double(p.hi)) {
      return to_double(p.a) + to_double(p.b) * x;
    }
  }
  throw contract_error("piecewise value outside [0,1)");
}

Rat Piecewise::integral(const Rat& lo, const Rat& hi) const {
  Rat total = 0;
  for (const Piece& p : pieces_) {
    Rat a = std::max(lo, p.lo);
    Rat b = std::min(hi, p.hi);
    if (!(a < b)) continue;
    total += p.a * (b - a) + p.b * (b * b - a * a) / 2;
  }
  return total;
}

double Piecewise::sup_norm() const {
  double m = 0.0;
  for (const Piece& p : pieces_) {
    m = std::max(m, std::abs(to_double(Rat(p.a + p.b * p.lo))));
    m = std::max(m, std::abs(to_double(Rat(p.a + p.b * p.hi))));
  }
  return m;
}

double Piecewise::variation() const {
  double var = 0.0;
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    const Piece& p = pieces_[i];
    var += std::abs(to_double(Rat(p.b * (p.hi - p.lo))));
    if (i + 1 < pieces_.size()) {
      const Piece& q = pieces_[i + 1];
      var += std::abs(to_double(Rat(q.a + q.b * q.lo - (p.a + p.b * p.hi))));
    }
  }
  return var;
}

Piecewise Piecewise::shifted(const Rat& c) const {
  std::vector<Piece> ps = pieces_;
  for (Piece& p : ps) p.a += c;
  return Piecewise(std::move(ps));
}

Piecewise Piecewise::scaled(const Rat& c) const {
  std::vector<Piece> ps = pieces_;
  for (Piece& p : ps) {
    p.a *= c;
    p.b *= c;
  }
  return Piecewise(std::move(ps));
}

bool Piecewise::nonnegative() const {
  for (const Piece& p : pieces_) {
    if (p.a + p.b * p.lo < 0 || p.a + p.b * p.hi < 0) return false;
  }
  return true;
}

GridFunction Piecewise::to_grid(std::size_t k) const {
  GridFunction u(k, 0.0);
  Rat width = rat(1, static_cast<long>(k));
  for (std::size_t i = 0; i < k; ++i) {
    Rat lo = rat(static_cast<long>(i), static_cast<long>(k));
    u.values[i] = to_double(Rat(integral(lo, lo + width) / width));
  }
  return u;
}

Poly Poly::times(const Poly& other) const {
  Poly out;
  out.c.assign(c.size() + other.c.size() - 1, Rat(0));
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < other.c.size(); ++j) {
      out.c[i + j] += c[i] * other.c[j];
    }
  }
  return out;
}

Rat Poly::integral(const Rat& lo, const Rat& hi) const {
  Rat total = 0;
  Rat lp = lo, hp = hi;
  for (std::size_t m = 0; m < c.size(); ++m) {
    // lp = lo^{m+1}, hp = hi^{m+1}
    total += c[m] * (hp - lp) / static_cast<long>(m + 1);
    lp *= lo;
    hp *= hi;
  }
  return total;
}

// ---------------------------------------------------------------------------
// RandomDensity
// ---------------------------------------------------------------------------

RandomDensity::RandomDensity(Piecewise shared) {
  if (!shared.nonnegative()) {
    throw contract_error("random density must be nonnegative");
  }
  if (shared.integral() <= 0) {
    throw contract_error("random density must have positive mass");
  }
  per_symbol_.push_back(std::move(shared));
}

RandomDensity::RandomDensity(std::vector<Piecewise> per_symbol)
    : per_symbol_(std::move(per_symbol)) {
  if (per_symbol_.empty()) throw contract_error("empty density family");
  for (const Piecewise& p : per_symbol_) {
    if (!p.nonnegative()) {
      throw contract_error("random density must be nonnegative");
    }
    if (p.integral() <= 0) {
      throw contract_error("random density must have positive mass");
    }
  }
}

RandomDensity RandomDensity::eta_preset() {
  RandomDensity d;
  d.eta_ = true;
  d.per_symbol_.push_back(Piecewise::constant(Rat(1)));
  return d;
}

const Piecewise& RandomDensity::at_symbol(std::size_t s) const {
  if (per_symbol_.size() == 1) return per_symbol_[0];
  if (s >= per_symbol_.size()) throw contract_error("no density for symbol");
  return per_symbol_[s];
}

// ---------------------------------------------------------------------------
// ConditionalMeasure
// ---------------------------------------------------------------------------

ConditionalMeasure::ConditionalMeasure(const OpenSystem& sys, OmegaPath omega,
                                       RandomDensity psi, int N,
                                       long start_fiber, std::size_t grid_k)
    : sys_(&sys),
      omega_(std::move(omega)),
      psi_(std::move(psi)),
      N_(N),
      start_fiber_(start_fiber),
      grid_k_(grid_k) {
  if (N < 0) throw contract_error("conditioning horizon must be >= 0");
  if (psi_.is_eta()) {
    if (exact_path()) {
      psi_start_ = Piecewise::constant(Rat(1));  // phi = 1 on this path
    } else {
      GridFunction phi = equivariant_density(*sys_, omega_, grid_k_, 1e-10,
                                             1024, start_fiber_);
      psi_start_ = Piecewise::from_grid(phi);
    }
  } else {
    psi_start_ = psi_.at_symbol(omega_.symbol(start_fiber_));
  }
}

bool ConditionalMeasure::exact_path() const {
  return sys_->full_branch() && sys_->hole_aligned();
}

// ---------------------------------------------------------------------------
// Exact cylinder integration
// ---------------------------------------------------------------------------

namespace {

// Subdivision of one cylinder by the pulled-back breakpoints of all factors.
void collect_cuts(const Rat& lo, const Rat& hi, const Piecewise& psi,
                  const std::vector<OrbitFactor>& factors,
                  const std::vector<std::pair<Rat, Rat>>& affine,
                  std::vector<Rat>& cuts) {
  cuts.clear();
  cuts.push_back(lo);
  cuts.push_back(hi);
  auto add = [&](const Piecewise& fn, const Rat& A, const Rat& B) {
    const auto& ps = fn.pieces();
    for (std::size_t i = 1; i < ps.size(); ++i) {
      Rat x = (ps[i].lo - B) / A;
      if (x > lo && x < hi) cuts.push_back(x);
    }
  };
  add(psi, Rat(1), Rat(0));
  for (const OrbitFactor& f : factors) {
    const auto& [A, B] = affine[static_cast<std::size_t>(f.time)];
    add(f.fn, A, B);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
}

const Piecewise::Piece& piece_at(const Piecewise& fn, const Rat& y) {
  for (const auto& piece : fn.pieces()) {
    if (y >= piece.lo && y < piece.hi) return piece;
  }
  // the closure point y == 1 belongs to the last piece
  if (y == 1) return fn.pieces().back();
  throw contract_error("orbit factor evaluated outside [0,1)");
}

}  // namespace

Rat exact_survivor_integral(const OpenSystem& sys, const OmegaPath& omega,
                            long start_fiber, int N, const Piecewise& psi,
                            const std::vector<OrbitFactor>& factors) {
  for (const OrbitFactor& f : factors) {
    if (f.time < 0 || f.time > N + 1) {
      throw contract_error("orbit factor time outside [0, N+1]");
    }
  }
  Rat total = 0;
  std::vector<Rat> cuts;
  for_each_surviving_cylinder(
      sys, omega, N + 1,
      [&](const Rat& lo, const Rat& hi, const std::vector<std::uint8_t>&,
          const std::vector<std::pair<Rat, Rat>>& affine) {
        collect_cuts(lo, hi, psi, factors, affine, cuts);
        for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
          const Rat& p = cuts[c];
          const Rat& q = cuts[c + 1];
          Rat mid = (p + q) / 2;
          const auto& psip = piece_at(psi, mid);
          Poly acc = Poly::affine(psip.a, psip.b);
          for (const OrbitFactor& f : factors) {
            const auto& [A, B] = affine[static_cast<std::size_t>(f.time)];
            const auto& piece = piece_at(f.fn, A * mid + B);
            acc = acc.times(Poly::affine(piece.a + piece.b * B, piece.b * A));
          }
          total += acc.integral(p, q);
        }
      },
      start_fiber);
  return total;
}

Rat exact_conditional_mass(const ConditionalMeasure& zeta) {
  if (!zeta.exact_path()) {
    throw unsupported_system_error(
        "exact conditional mass requires the full-branch aligned path");
  }
  const Piecewise& psi = zeta.psi_at_start();
  Rat num = exact_survivor_integral(zeta.system(), zeta.omega(),
                                    zeta.start_fiber(), zeta.horizon(), psi,
                                    {});
  Rat den = exact_survivor_integral(zeta.system(), zeta.omega(),
                                    zeta.start_fiber(), 0, psi, {});
  if (den <= 0) throw degenerate_error("zeta has no mass on X_{omega,0}");
  if (num <= 0) throw degenerate_error("zeta gives X_{omega,N} zero mass");
  return num / den;
}

Rat exact_conditional_expectation(const ConditionalMeasure& zeta,
                                  const std::vector<OrbitFactor>& factors) {
  if (!zeta.exact_path()) {
    throw unsupported_system_error(
        "exact conditional expectation requires the aligned path");
  }
  const Piecewise& psi = zeta.psi_at_start();
  Rat num = exact_survivor_integral(zeta.system(), zeta.omega(),
                                    zeta.start_fiber(), zeta.horizon(), psi,
                                    factors);
  Rat den = exact_survivor_integral(zeta.system(), zeta.omega(),
                                    zeta.start_fiber(), zeta.horizon(), psi,
                                    {});
  if (den <= 0) throw degenerate_error("zeta gives X_{omega,N} zero mass");
  return num / den;
}

std::vector<double> exact_orbit_moments(
    const ConditionalMeasure& zeta, const std::vector<OrbitFactor>& factors,
    const std::vector<std::vector<int>>& products) {
  if (!zeta.exact_path()) {
    throw unsupported_system_error(
        "exact orbit moments require the aligned path");
  }
  const int N = zeta.horizon();
  for (const OrbitFactor& f : factors) {
    if (f.time < 0 || f.time > N + 1) {
      throw contract_error("orbit factor time outside [0, N+1]");
    }
  }
  const Piecewise& psi = zeta.psi_at_start();
  std::vector<double> sums(products.size(), 0.0);
  double mass = 0.0;
  std::vector<Rat> cuts;
  std::vector<std::pair<double, double>> fac(factors.size());
  std::vector<double> poly, next;
  for_each_surviving_cylinder(
      zeta.system(), zeta.omega(), N + 1,
      [&](const Rat& lo, const Rat& hi, const std::vector<std::uint8_t>&,
          const std::vector<std::pair<Rat, Rat>>& affine) {
        collect_cuts(lo, hi, psi, factors, affine, cuts);
        for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
          const Rat& p = cuts[c];
          const Rat& q = cuts[c + 1];
          Rat mid = (p + q) / 2;
          double len = to_double(Rat(q - p));
          if (len <= 0.0) continue;
          // local coordinate s: x = p + s keeps the tiny cylinder widths
          // away from catastrophic cancellation in the moments
          const auto& psip = piece_at(psi, mid);
          double psi_a = to_double(Rat(psip.a + psip.b * p));
          double psi_b = to_double(psip.b);
          for (std::size_t j = 0; j < factors.size(); ++j) {
            const auto& [A, B] =
                affine[static_cast<std::size_t>(factors[j].time)];
            const auto& piece = piece_at(factors[j].fn, A * mid + B);
            fac[j] = {to_double(Rat(piece.a + piece.b * (A * p + B))),
                      to_double(Rat(piece.b * A))};
          }
          double mass_piece = psi_a * len + 0.5 * psi_b * len * len;
          mass += mass_piece;
          for (std::size_t pi = 0; pi < products.size(); ++pi) {
            poly = {psi_a, psi_b};
            for (int j : products[pi]) {
              const auto& [fa, fb] = fac[static_cast<std::size_t>(j)];
              next.assign(poly.size() + 1, 0.0);
              for (std::size_t m = 0; m < poly.size(); ++m) {
                next[m] += poly[m] * fa;
                next[m + 1] += poly[m] * fb;
              }
              poly = next;
            }
            double integ = 0.0;
            double lp = len;
            for (std::size_t m = 0; m < poly.size(); ++m) {
              integ += poly[m] * lp / static_cast<double>(m + 1);
              lp *= len;
            }
            sums[pi] += integ;
          }
        }
      },
      zeta.start_fiber());
  if (mass <= 0.0) throw degenerate_error("no surviving mass");
  for (double& s : sums) s /= mass;
  return sums;
}

// ---------------------------------------------------------------------------
// conditional_mass
// ---------------------------------------------------------------------------

double conditional_mass(const ConditionalMeasure& zeta) {
  if (zeta.exact_path()) {
    const Piecewise& psi = zeta.psi_at_start();
    bool flat = true;
    for (const auto& piece : psi.pieces()) flat = flat && piece.b == 0;
    if (zeta.horizon() <= 12 && !flat) {
      return to_double(exact_conditional_mass(zeta));
    }
    if (flat) {
      // exact interval recursion; fast at any horizon
      std::map<std::pair<long, int>, Rat> cache;
      Rat num = 0, den = 0;
      for (const auto& piece : psi.pieces()) {
        num += piece.a * survival_overlap(zeta.system(), zeta.omega(),
                                          zeta.start_fiber(), piece.lo,
                                          piece.hi, zeta.horizon(), &cache);
        den += piece.a * survival_overlap(zeta.system(), zeta.omega(),
                                          zeta.start_fiber(), piece.lo,
                                          piece.hi, 0, &cache);
      }
      if (den <= 0) throw degenerate_error("zeta has no mass on X_{omega,0}");
      if (num <= 0) throw degenerate_error("zeta gives X_{omega,N} zero mass");
      return to_double(Rat(num / den));
    }
    return to_double(exact_conditional_mass(zeta));
  }
  // Monte Carlo fallback: draw from zeta_{omega,0} and count survivors
  ConditionalMeasure base(zeta.system(), zeta.omega(), zeta.density(), 0,
                          zeta.start_fiber());
  ConditionalSample s =
      sample_conditional(base, 20000, 9, SamplerMode::Rejection);
  std::size_t alive = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (survives(zeta.system(), zeta.omega(), s.x(i), zeta.horizon(),
                 zeta.start_fiber())
            .survived) {
      ++alive;
    }
  }
  if (alive == 0) throw degenerate_error("no sampled point survived");
  return static_cast<double>(alive) / static_cast<double>(s.size());
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

SequentialSampler::SequentialSampler(const ConditionalMeasure& zeta,
                                     std::uint64_t seed)
    : sys_(&zeta.system()),
      omega_(&zeta.omega()),
      N_(zeta.horizon()),
      start_fiber_(zeta.start_fiber()),
      seed_(seed) {
  if (!zeta.exact_path()) {
    throw unsupported_system_error(
        "sequential sampling requires the full-branch aligned path");
  }
  const auto& psi = zeta.psi_at_start();
  if (psi.pieces().size() != 1 || psi.pieces()[0].b != 0) {
    throw unsupported_system_error(
        "sequential digit sampling requires a constant density (eta preset)");
  }
  cumw_.resize(static_cast<std::size_t>(N_) + 1);
  allowed_.resize(static_cast<std::size_t>(N_) + 1);
  for (int t = 0; t <= N_; ++t) {
    std::size_t sym = omega_->symbol(start_fiber_ + t);
    const auto& allowed = sys_->allowed_branches(sym);
    if (allowed.empty()) {
      throw degenerate_error("a fiber hole removes every branch");
    }
    allowed_[static_cast<std::size_t>(t)] = allowed;
    double total = 0.0;
    std::vector<double> cw;
    for (std::size_t a : allowed) {
      total += 1.0 / std::abs(to_double(sys_->map(sym).branch(a).slope));
      cw.push_back(total);
    }
    for (double& w : cw) w /= total;
    cumw_[static_cast<std::size_t>(t)] = std::move(cw);
  }
}

void SequentialSampler::generate(std::size_t index,
                                 std::vector<std::uint8_t>& digits,
                                 double& tail) const {
  digits.resize(static_cast<std::size_t>(N_) + 1);
  for (int t = 0; t <= N_; ++t) {
    double u = rng::uniform(seed_, index, static_cast<std::uint64_t>(t));
    const auto& cw = cumw_[static_cast<std::size_t>(t)];
    std::size_t pick = 0;
    while (pick + 1 < cw.size() && u >= cw[pick]) ++pick;
    digits[static_cast<std::size_t>(t)] =
        static_cast<std::uint8_t>(allowed_[static_cast<std::size_t>(t)][pick]);
  }
  tail = rng::uniform(seed_, index, static_cast<std::uint64_t>(N_) + 1);
}

double SequentialSampler::point(const std::vector<std::uint8_t>& digits,
                                double tail) const {
  double z = tail;
  for (int t = N_; t >= 0; --t) {
    std::size_t sym = omega_->symbol(start_fiber_ + t);
    const Branch& b =
        sys_->map(sym).branch(digits[static_cast<std::size_t>(t)]);
    z = (z - to_double(b.intercept)) / to_double(b.slope);
  }
  return z;
}

void SequentialSampler::positions(const std::vector<std::uint8_t>& digits,
                                  double tail, std::vector<double>& out) const {
  out.assign(static_cast<std::size_t>(N_) + 1, 0.0);
  double z = tail;
  for (int t = N_; t >= 0; --t) {
    std::size_t sym = omega_->symbol(start_fiber_ + t);
    const Branch& b =
        sys_->map(sym).branch(digits[static_cast<std::size_t>(t)]);
    z = (z - to_double(b.intercept)) / to_double(b.slope);
    out[static_cast<std::size_t>(t)] = z;
  }
}

std::vector<double> ConditionalSample::orbit_positions(std::size_t i) const {
  std::vector<double> out(static_cast<std::size_t>(N_) + 1, 0.0);
  if (!digits_.empty()) {
    const std::size_t stride = static_cast<std::size_t>(N_) + 1;
    double z = tail_[i];
    for (int t = N_; t >= 0; --t) {
      std::size_t sym = omega_.symbol(start_fiber_ + t);
      const Branch& b = sys_->map(sym).branch(
          digits_[i * stride + static_cast<std::size_t>(t)]);
      z = (z - to_double(b.intercept)) / to_double(b.slope);
      out[static_cast<std::size_t>(t)] = z;
    }
  } else {
    double z = x_[i];
    for (int t = 0; t <= N_; ++t) {
      out[static_cast<std::size_t>(t)] = z;
      if (t < N_) z = step(*sys_, omega_.symbol(start_fiber_ + t), z);
    }
  }
  return out;
}

void ConditionalSample::dump_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw contract_error("cannot open '" + path + "' for writing");
  out << "index,x,escape_time_or_-1,weight\n";
  char buf[64];
  for (std::size_t i = 0; i < size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", x_[i]);
    out << i << ',' << buf << ",-1,1\n";
  }
}

namespace {

// inverse-CDF draw from one affine density piece over [lo,hi)
double sample_affine_piece(double lo, double hi, double a, double b,
                           double u) {
  double len = hi - lo;
  if (std::abs(b) < 1e-300) return lo + u * len;
  double mass = a * len + 0.5 * b * (hi * hi - lo * lo);
  double target = u * mass + a * lo + 0.5 * b * lo * lo;
  // solve 0.5 b x^2 + a x = target
  double disc = a * a + 2.0 * b * target;
  if (disc < 0) disc = 0;
  double x = (-a + std::sqrt(disc)) / b;
  if (x < lo || x > hi) x = (-a - std::sqrt(disc)) / b;
  return std::min(std::max(x, lo), hi);
}

}  // namespace

ConditionalSample sample_conditional(const ConditionalMeasure& zeta,
                                     std::size_t M, std::uint64_t seed,
                                     SamplerMode mode,
                                     std::uint64_t max_proposals) {
  if (M < 1) throw contract_error("sample count must be >= 1");
  ConditionalSample out;
  out.sys_ = &zeta.system();
  out.omega_ = zeta.omega();
  out.N_ = zeta.horizon();
  out.start_fiber_ = zeta.start_fiber();
  const int N = zeta.horizon();

  // mode resolution: enumerating 3^(N+1) cylinders stops paying past N = 12;
  // the eta preset switches to per-digit sequential sampling instead
  if (mode == SamplerMode::ExactCylinder && N > 12) {
    if (zeta.exact_path() && zeta.psi_at_start().pieces().size() == 1 &&
        zeta.psi_at_start().pieces()[0].b == 0) {
      mode = SamplerMode::Sequential;
    } else {
      throw contract_error(
          "exact cylinder sampling is limited to N <= 12; use rejection");
    }
  }
  if ((mode == SamplerMode::ExactCylinder ||
       mode == SamplerMode::Sequential) &&
      !zeta.exact_path()) {
    mode = SamplerMode::Rejection;
  }
  out.mode_ = mode;

  const std::size_t stride = static_cast<std::size_t>(N) + 1;

  if (mode == SamplerMode::Sequential) {
    SequentialSampler gen(zeta, seed);
    out.x_.resize(M);
    out.digits_.resize(M * stride);
    out.tail_.resize(M);
    out.certified_.assign(M, true);
    std::vector<std::uint8_t> digits;
    double tail;
    for (std::size_t i = 0; i < M; ++i) {
      gen.generate(i, digits, tail);
      std::copy(digits.begin(), digits.end(),
                out.digits_.begin() + i * stride);
      out.tail_[i] = tail;
      out.x_[i] = gen.point(digits, tail);
    }
    return out;
  }

  if (mode == SamplerMode::ExactCylinder) {
    const Piecewise& psi = zeta.psi_at_start();
    struct Cyl {
      double lo, hi;
      double cum;
      std::vector<std::uint8_t> word;
    };
    std::vector<Cyl> cyls;
    double cum = 0.0;
    for_each_surviving_cylinder(
        zeta.system(), zeta.omega(), N + 1,
        [&](const Rat& lo, const Rat& hi,
            const std::vector<std::uint8_t>& word,
            const std::vector<std::pair<Rat, Rat>>&) {
          double w = to_double(psi.integral(lo, hi));
          if (w <= 0.0) return;
          cum += w;
          cyls.push_back({to_double(lo), to_double(hi), cum, word});
        },
        zeta.start_fiber());
    if (cyls.empty()) throw degenerate_error("no surviving cylinder has mass");

    out.x_.resize(M);
    out.digits_.resize(M * stride);
    out.tail_.resize(M);
    out.certified_.assign(M, true);
    for (std::size_t i = 0; i < M; ++i) {
      double u = rng::uniform(seed, i, 0) * cum;
      std::size_t a = 0, b = cyls.size() - 1;
      while (a < b) {
        std::size_t mid = (a + b) / 2;
        if (cyls[mid].cum > u)
          b = mid;
        else
          a = mid + 1;
      }
      const Cyl& c = cyls[a];
      // point inside the cylinder, distributed like psi
      double u2 = rng::uniform(seed, i, 1);
      double total = 0.0;
      std::vector<double> seg_cum;
      std::vector<std::array<double, 4>> geom;
      for (const auto& piece : psi.pieces()) {
        double plo = std::max(c.lo, to_double(piece.lo));
        double phi = std::min(c.hi, to_double(piece.hi));
        if (plo >= phi) continue;
        double pa = to_double(piece.a);
        double pb = to_double(piece.b);
        double mass = pa * (phi - plo) + 0.5 * pb * (phi * phi - plo * plo);
        total += mass;
        seg_cum.push_back(total);
        geom.push_back({plo, phi, pa, pb});
      }
      double target = u2 * total;
      std::size_t si = 0;
      while (si + 1 < seg_cum.size() && target >= seg_cum[si]) ++si;
      double prev = si == 0 ? 0.0 : seg_cum[si - 1];
      double frac =
          (target - prev) / std::max(1e-300, seg_cum[si] - prev);
      double x = sample_affine_piece(geom[si][0], geom[si][1], geom[si][2],
                                     geom[si][3], frac);
      out.x_[i] = x;
      std::copy(c.word.begin(), c.word.end(),
                out.digits_.begin() + i * stride);
      // tail = image of x through the word; forward affine is exact enough
      // at these depths
      double z = x;
      for (int t = 0; t <= N; ++t) {
        std::size_t sym = zeta.omega().symbol(zeta.start_fiber() + t);
        const Branch& br = zeta.system().map(sym).branch(
            c.word[static_cast<std::size_t>(t)]);
        z = to_double(br.slope) * z + to_double(br.intercept);
      }
      out.tail_[i] = std::min(std::max(z, 0.0), 1.0 - 1e-16);
    }
    return out;
  }

  // rejection: draw from psi, accept on survival
  const Piecewise& psi = zeta.psi_at_start();
  std::vector<double> piece_cum;
  std::vector<std::array<double, 4>> geom;
  double total = 0.0;
  for (const auto& piece : psi.pieces()) {
    double plo = to_double(piece.lo), phi = to_double(piece.hi);
    double pa = to_double(piece.a), pb = to_double(piece.b);
    double mass = pa * (phi - plo) + 0.5 * pb * (phi * phi - plo * plo);
    if (mass <= 0) continue;
    piece_cum.push_back(total += mass);
    geom.push_back({plo, phi, pa, pb});
  }
  out.x_.resize(M);
  out.certified_.assign(M, true);
  std::uint64_t proposals = 0;
  const std::uint64_t abort_after = max_proposals;
  Counter draw(seed, 0xfaceULL);
  for (std::size_t i = 0; i < M; ++i) {
    for (;;) {
      if (++proposals > abort_after) {
        throw degenerate_error(
            "rejection sampler exceeded 1e8 proposals before " +
            std::to_string(M) + " acceptances");
      }
      double u = draw.next_uniform() * total;
      std::size_t si = 0;
      while (si + 1 < piece_cum.size() && u >= piece_cum[si]) ++si;
      double prev = si == 0 ? 0.0 : piece_cum[si - 1];
      double frac = (u - prev) / std::max(1e-300, piece_cum[si] - prev);
      double x = sample_affine_piece(geom[si][0], geom[si][1], geom[si][2],
                                     geom[si][3], frac);
      if (survives(zeta.system(), zeta.omega(), x, N, zeta.start_fiber())
              .survived) {
        out.x_[i] = x;
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// integrate_conditional
// ---------------------------------------------------------------------------

IntegralEstimate integrate_conditional(const ConditionalMeasure& zeta,
                                       const Piecewise& u,
                                       std::size_t mc_samples,
                                       std::uint64_t seed) {
  IntegralEstimate out;
  if (zeta.exact_path() && zeta.horizon() <= 12) {
    out.value =
        to_double(exact_conditional_expectation(zeta, {OrbitFactor{0, u}}));
    out.std_error = 0.0;
    out.exact = true;
    return out;
  }
  ConditionalSample s = sample_conditional(zeta, mc_samples, seed);
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    double v = u.value(s.x(i));
    double d = v - mean;
    mean += d / static_cast<double>(i + 1);
    m2 += d * (v - mean);
  }
  out.value = mean;
  out.std_error = std::sqrt(m2 / static_cast<double>(s.size() - 1) /
                            static_cast<double>(s.size()));
  out.exact = false;
  return out;
}

}  // namespace roim
