#include "roim/limits.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "roim/parallel.hpp"
#include "roim/rng.hpp"

namespace roim {

// ---------------------------------------------------------------------------
// Observable
// ---------------------------------------------------------------------------

namespace {

// Holder/BV metadata over the family: L = 2 esssup ||f||_alpha when every
// fiber is continuous, else the BV-based working scale.
std::pair<double, bool> observable_scale(const std::vector<Piecewise>& fam,
                                         double alpha) {
  double scale = 0.0;
  bool holder = true;
  for (const Piecewise& f : fam) {
    // continuity across pieces
    const auto& ps = f.pieces();
    for (std::size_t i = 0; i + 1 < ps.size(); ++i) {
      Rat left = ps[i].a + ps[i].b * ps[i].hi;
      Rat right = ps[i + 1].a + ps[i + 1].b * ps[i + 1].lo;
      if (left != right) holder = false;
    }
    double sup = f.sup_norm();
    if (holder && alpha == 1.0) {
      double lip = 0.0;
      for (const auto& p : ps) lip = std::max(lip, std::abs(to_double(p.b)));
      scale = std::max(scale, 2.0 * (sup + lip));
    } else if (holder) {
      // alpha-Holder constant of an affine piece over [0,1): |b| suffices
      double lip = 0.0;
      for (const auto& p : ps) lip = std::max(lip, std::abs(to_double(p.b)));
      scale = std::max(scale, 2.0 * (sup + lip));
    } else {
      scale = std::max(scale, 2.0 * (sup + f.variation()));
    }
  }
  return {scale, holder};
}

}  // namespace

Observable::Observable(Piecewise shared, double alpha) : alpha_(alpha) {
  per_symbol_.push_back(std::move(shared));
  auto [s, h] = observable_scale(per_symbol_, alpha_);
  scale_ = s;
  holder_finite_ = h;
}

Observable::Observable(std::vector<Piecewise> per_symbol, double alpha)
    : per_symbol_(std::move(per_symbol)), alpha_(alpha) {
  if (per_symbol_.empty()) throw contract_error("observable needs a function");
  auto [s, h] = observable_scale(per_symbol_, alpha_);
  scale_ = s;
  holder_finite_ = h;
}

const Piecewise& Observable::at(std::size_t symbol) const {
  if (per_symbol_.size() == 1) return per_symbol_[0];
  if (symbol >= per_symbol_.size()) {
    throw contract_error("no observable for symbol");
  }
  return per_symbol_[symbol];
}

Observable Observable::indicator_half() {
  return Observable(Piecewise::indicator(rat(1, 2), rat(1)));
}

Observable Observable::indicator_third() {
  return Observable(Piecewise::indicator(rat(1, 3), rat(1)));
}

Observable Observable::coordinate() { return Observable(Piecewise::identity()); }

namespace {

// sum of scaled piecewise functions over merged breakpoints
Piecewise combine(const Piecewise& f, const Rat& cf, const Piecewise& g,
                  const Rat& cg) {
  std::vector<Rat> cuts{Rat(0), Rat(1)};
  for (const auto& p : f.pieces()) cuts.push_back(p.lo);
  for (const auto& p : g.pieces()) cuts.push_back(p.lo);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<Piecewise::Piece> out;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const Rat& lo = cuts[i];
    const Rat& hi = cuts[i + 1];
    Rat mid = (lo + hi) / 2;
    const auto pf = [&](const Piecewise& fn) -> std::pair<Rat, Rat> {
      for (const auto& p : fn.pieces()) {
        if (mid >= p.lo && mid < p.hi) return {p.a, p.b};
      }
      throw contract_error("combine: uncovered point");
    };
    auto [fa, fb] = pf(f);
    auto [ga, gb] = pf(g);
    out.push_back({lo, hi, cf * fa + cg * ga, cf * fb + cg * gb});
  }
  return Piecewise(std::move(out));
}

// g o T for one fiber map: pull g's pieces back through every branch
Piecewise compose_with_map(const Piecewise& g, const BranchMap& m) {
  std::vector<Piecewise::Piece> out;
  for (std::size_t i = 0; i < m.branch_count(); ++i) {
    const Branch& b = m.branch(i);
    for (const auto& gp : g.pieces()) {
      // x with T(x) in [gp.lo, gp.hi)
      Rat u = (gp.lo - b.intercept) / b.slope;
      Rat v = (gp.hi - b.intercept) / b.slope;
      if (u > v) std::swap(u, v);
      u = std::max(u, b.lo);
      v = std::min(v, b.hi);
      if (!(u < v)) continue;
      // g(T x) = gp.a + gp.b (slope x + intercept)
      out.push_back({u, v, gp.a + gp.b * b.intercept, gp.b * b.slope});
    }
  }
  return Piecewise(std::move(out));
}

}  // namespace

Observable coboundary_observable(const OpenSystem& sys, const Piecewise& g) {
  std::vector<Piecewise> fam;
  fam.reserve(sys.alphabet_size());
  for (std::size_t s = 0; s < sys.alphabet_size(); ++s) {
    Piecewise gT = compose_with_map(g, sys.map(s));
    fam.push_back(combine(g, Rat(1), gT, Rat(-1)));
  }
  return Observable(std::move(fam));
}

// ---------------------------------------------------------------------------
// Exact operator sweeps
// ---------------------------------------------------------------------------

namespace {

// grid size that resolves the system's partitions/holes and f's breakpoints
std::size_t aligned_grid(const OpenSystem& sys, const Observable& f,
                         std::size_t base_k) {
  mpz_class l(1);
  auto fold = [&](const Rat& x) {
    mpz_class den = Rat(x).get_den();
    mpz_lcm(l.get_mpz_t(), l.get_mpz_t(), den.get_mpz_t());
  };
  for (std::size_t s = 0; s < sys.alphabet_size(); ++s) {
    for (const Rat& b : sys.map(s).breakpoints()) fold(b);
    for (const auto& [lo, hi] : sys.hole(s).intervals()) {
      fold(lo);
      fold(hi);
    }
    for (const auto& p : f.at(s).pieces()) fold(p.lo);
  }
  if (!l.fits_ulong_p() || l.get_ui() > 262144) {
    throw unsupported_system_error(
        "no reasonable grid resolves every breakpoint exactly");
  }
  std::size_t lcm = l.get_ui();
  std::size_t k = lcm;
  while (k < base_k) k += lcm;
  return k;
}

struct SweepData {
  std::size_t k = 0;
  std::vector<double> Z_check;            // surviving psi-mass per n (constant)
  std::vector<double> c;                  // centering constants
  std::vector<GridFunction> u;            // forward densities, fibers 0..N
  std::vector<GridFunction> s;            // backward survival funcs, 0..N
  std::vector<GridFunction> fgrid;        // f at fiber n
  double Z = 0.0;
};

// forward/backward sweeps shared by the exact centering and the exact
// operator variance profile
SweepData run_sweeps(const OpenSystem& sys, const OmegaPath& omega,
                     long start_fiber, int N, const Observable& f,
                     std::size_t k) {
  SweepData d;
  d.k = k;
  const std::size_t nsym = sys.alphabet_size();
  std::vector<OperatorMatrix> closed(nsym);
  std::vector<std::vector<double>> mask(nsym);
  std::vector<GridFunction> fsym(nsym);
  std::vector<bool> have(nsym, false);
  auto prep = [&](std::size_t sym) {
    if (have[sym]) return;
    closed[sym] = ulam_closed(sys, sym, k);
    mask[sym] = survive_fractions(sys, sym, k);
    fsym[sym] = f.at(sym).to_grid(k);
    have[sym] = true;
  };

  d.u.resize(static_cast<std::size_t>(N) + 1);
  d.s.resize(static_cast<std::size_t>(N) + 1);
  d.fgrid.resize(static_cast<std::size_t>(N) + 1);

  // forward: u_0 = psi = 1 (eta preset on the aligned path), masked at each
  // step before the push
  GridFunction cur(k, 1.0);
  for (int t = 0; t <= N; ++t) {
    std::size_t sym = omega.symbol(start_fiber + t);
    prep(sym);
    d.u[static_cast<std::size_t>(t)] = cur;
    d.fgrid[static_cast<std::size_t>(t)] = fsym[sym];
    if (t < N) {
      GridFunction masked = cur;
      for (std::size_t i = 0; i < k; ++i) masked.values[i] *= mask[sym][i];
      cur = closed[sym].apply(masked);
    }
  }
  // backward: s_N = mask_N, s_t = mask_t .* pullback(s_{t+1})
  {
    std::size_t symN = omega.symbol(start_fiber + N);
    prep(symN);
    GridFunction sN(k, 1.0);
    for (std::size_t i = 0; i < k; ++i) sN.values[i] = mask[symN][i];
    d.s[static_cast<std::size_t>(N)] = std::move(sN);
    for (int t = N - 1; t >= 0; --t) {
      std::size_t sym = omega.symbol(start_fiber + t);
      GridFunction pulled =
          closed[sym].pullback(d.s[static_cast<std::size_t>(t) + 1]);
      for (std::size_t i = 0; i < k; ++i) pulled.values[i] *= mask[sym][i];
      d.s[static_cast<std::size_t>(t)] = std::move(pulled);
    }
  }

  // normalizer and centering constants
  auto dot3 = [&](const GridFunction& a, const GridFunction& b,
                  const GridFunction& cc) {
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      acc += a.values[i] * b.values[i] * cc.values[i];
    }
    return acc / static_cast<double>(k);
  };
  GridFunction ones(k, 1.0);
  d.Z = dot3(d.u[0], d.s[0], ones);
  if (d.Z <= 0.0) throw degenerate_error("no surviving mass in the sweeps");
  d.c.resize(static_cast<std::size_t>(N));
  d.Z_check.resize(static_cast<std::size_t>(N) + 1);
  for (int n = 0; n <= N; ++n) {
    d.Z_check[static_cast<std::size_t>(n)] =
        dot3(d.u[static_cast<std::size_t>(n)], d.s[static_cast<std::size_t>(n)],
             ones);
    if (n < N) {
      d.c[static_cast<std::size_t>(n)] =
          dot3(d.u[static_cast<std::size_t>(n)],
               d.s[static_cast<std::size_t>(n)],
               d.fgrid[static_cast<std::size_t>(n)]) /
          d.Z;
    }
  }
  return d;
}

}  // namespace

namespace {

bool piecewise_constant(const Observable& f, std::size_t nsym) {
  for (std::size_t s = 0; s < nsym; ++s) {
    for (const auto& p : f.at(s).pieces()) {
      if (p.b != 0) return false;
    }
  }
  return true;
}

}  // namespace

std::vector<double> centering_constants(const OpenSystem& sys,
                                        const OmegaPath& omega,
                                        long start_fiber, int N,
                                        const Observable& f,
                                        std::size_t base_k) {
  if (!(sys.full_branch() && sys.hole_aligned())) {
    throw unsupported_system_error(
        "exact centering requires the full-branch aligned path");
  }
  if (piecewise_constant(f, sys.alphabet_size())) {
    // operator sweeps: exact at any horizon, since every sweep object is
    // genuinely constant on the aligned grid cells
    std::size_t k = aligned_grid(sys, f, base_k);
    SweepData d = run_sweeps(sys, omega, start_fiber, N, f, k);
    return d.c;
  }
  // affine pieces vary within cells, which the grid sweeps average away;
  // the cylinder engine integrates them exactly up to depth 13
  if (N > 12) {
    throw unsupported_system_error(
        "exact centering of non-constant observables is limited to N <= 12");
  }
  ConditionalMeasure eta(sys, omega, RandomDensity::eta_preset(), N,
                         start_fiber);
  std::vector<OrbitFactor> factors;
  std::vector<std::vector<int>> products;
  for (int n = 0; n < N; ++n) {
    factors.push_back(OrbitFactor{n, f.at(omega.symbol(start_fiber + n))});
    products.push_back({n});
  }
  return exact_orbit_moments(eta, factors, products);
}

CenteredArray centered_observables(const Observable& f,
                                   const ConditionalMeasure& zeta,
                                   const ConditionalSample& points) {
  if (points.horizon() != zeta.horizon() ||
      points.start_fiber() != zeta.start_fiber()) {
    throw contract_error(
        "sample horizon does not match the conditional measure");
  }
  const int N = zeta.horizon();
  const std::size_t M = points.size();
  CenteredArray out;
  out.count = M;
  out.N = N;
  out.values.resize(M * static_cast<std::size_t>(N));

  // raw values first
  std::vector<GridFunction> fsym;  // per symbol cache at evaluation grid
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<double> pos = points.orbit_positions(m);
    for (int n = 0; n < N; ++n) {
      std::size_t sym = zeta.omega().symbol(zeta.start_fiber() + n);
      out.values[m * static_cast<std::size_t>(N) + static_cast<std::size_t>(n)] =
          f.at(sym).value(pos[static_cast<std::size_t>(n)]);
    }
  }

  // centering: exact when available, else empirical column means
  bool exact = zeta.exact_path() && zeta.density().is_eta();
  if (exact) {
    try {
      out.centering =
          centering_constants(zeta.system(), zeta.omega(), zeta.start_fiber(),
                              N, f);
      out.exact_centering = true;
    } catch (const unsupported_system_error&) {
      exact = false;
    }
  }
  if (!exact) {
    out.centering.assign(static_cast<std::size_t>(N), 0.0);
    for (int n = 0; n < N; ++n) {
      double acc = 0.0;
      for (std::size_t m = 0; m < M; ++m) {
        acc += out.values[m * static_cast<std::size_t>(N) +
                          static_cast<std::size_t>(n)];
      }
      out.centering[static_cast<std::size_t>(n)] =
          acc / static_cast<double>(M);
    }
    out.exact_centering = false;
    out.centering_se = 1.0 / std::sqrt(static_cast<double>(M));
  }
  for (std::size_t m = 0; m < M; ++m) {
    for (int n = 0; n < N; ++n) {
      out.values[m * static_cast<std::size_t>(N) + static_cast<std::size_t>(n)] -=
          out.centering[static_cast<std::size_t>(n)];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Variance profile
// ---------------------------------------------------------------------------

VarianceProfile variance_profile(const OpenSystem& sys, const OmegaPath& omega,
                                 long start_fiber, int N, const Observable& f,
                                 EstimationMode mode,
                                 const CenteredArray* mc_array,
                                 std::size_t base_k) {
  VarianceProfile out;
  out.N = N;
  out.mode = mode;
  out.sigma2_n.assign(static_cast<std::size_t>(N) + 1, 0.0);
  out.col_var.assign(static_cast<std::size_t>(N), 0.0);

  if (mode == EstimationMode::ExactCylinder) {
    if (N > 12) {
      throw contract_error("exact cylinder profile is limited to N <= 12");
    }
    ConditionalMeasure eta(sys, omega, RandomDensity::eta_preset(), N,
                           start_fiber);
    std::vector<OrbitFactor> factors;
    for (int n = 0; n < N; ++n) {
      factors.push_back(
          OrbitFactor{n, f.at(omega.symbol(start_fiber + n))});
    }
    std::vector<std::vector<int>> products;
    for (int n = 0; n < N; ++n) products.push_back({n});
    for (int i = 0; i < N; ++i) {
      for (int j = i; j < N; ++j) products.push_back({i, j});
    }
    std::vector<double> mom = exact_orbit_moments(eta, factors, products);
    std::vector<double> c(mom.begin(), mom.begin() + N);
    std::vector<std::vector<double>> cov(
        static_cast<std::size_t>(N),
        std::vector<double>(static_cast<std::size_t>(N), 0.0));
    std::size_t idx = static_cast<std::size_t>(N);
    for (int i = 0; i < N; ++i) {
      for (int j = i; j < N; ++j, ++idx) {
        double v = mom[idx] - c[static_cast<std::size_t>(i)] *
                                  c[static_cast<std::size_t>(j)];
        cov[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v;
        cov[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = v;
      }
    }
    for (int n = 0; n < N; ++n) {
      out.col_var[static_cast<std::size_t>(n)] =
          cov[static_cast<std::size_t>(n)][static_cast<std::size_t>(n)];
    }
    for (int n = 1; n <= N; ++n) {
      double acc = out.sigma2_n[static_cast<std::size_t>(n) - 1];
      // add row i = n-1 against every j
      for (int j = 0; j < N; ++j) {
        acc += cov[static_cast<std::size_t>(n) - 1][static_cast<std::size_t>(j)];
      }
      out.sigma2_n[static_cast<std::size_t>(n)] = acc;
    }
  } else if (mode == EstimationMode::ExactOperator) {
    if (!(sys.full_branch() && sys.hole_aligned())) {
      throw unsupported_system_error(
          "exact operator profile requires the aligned path");
    }
    if (!piecewise_constant(f, sys.alphabet_size())) {
      throw unsupported_system_error(
          "the operator profile is exact for piecewise-constant observables "
          "only; use the cylinder mode (N <= 12) for affine pieces");
    }
    std::size_t k = aligned_grid(sys, f, base_k);
    SweepData d = run_sweeps(sys, omega, start_fiber, N, f, k);
    const double Z = d.Z;
    // centered observables on the grid
    std::vector<GridFunction> fc(static_cast<std::size_t>(N));
    for (int n = 0; n < N; ++n) {
      fc[static_cast<std::size_t>(n)] = d.fgrid[static_cast<std::size_t>(n)];
      for (double& v : fc[static_cast<std::size_t>(n)].values) {
        v -= d.c[static_cast<std::size_t>(n)];
      }
    }
    std::vector<OperatorMatrix> closed(sys.alphabet_size());
    std::vector<std::vector<double>> mask(sys.alphabet_size());
    std::vector<bool> have(sys.alphabet_size(), false);
    auto prep = [&](std::size_t sym) {
      if (have[sym]) return;
      closed[sym] = ulam_closed(sys, sym, k);
      mask[sym] = survive_fractions(sys, sym, k);
      have[sym] = true;
    };
    // past accumulator G_t = sum_{j<t} push(u_j .* fc_j)
    std::vector<double> past(static_cast<std::size_t>(N), 0.0);
    {
      GridFunction G(k, 0.0);
      for (int t = 0; t < N; ++t) {
        std::size_t sym = omega.symbol(start_fiber + t);
        prep(sym);
        double acc = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
          acc += G.values[i] * fc[static_cast<std::size_t>(t)].values[i] *
                 d.s[static_cast<std::size_t>(t)].values[i];
        }
        past[static_cast<std::size_t>(t)] = acc / static_cast<double>(k) / Z;
        if (t + 1 < N) {
          GridFunction add = d.u[static_cast<std::size_t>(t)];
          for (std::size_t i = 0; i < k; ++i) {
            add.values[i] = (G.values[i] +
                             add.values[i] *
                                 fc[static_cast<std::size_t>(t)].values[i]) *
                            mask[sym][i];
          }
          G = closed[sym].apply(add);
        }
      }
    }
    // future accumulator R_t = fc_t .* s_t + mask_t .* pullback(R_{t+1})
    std::vector<double> fut(static_cast<std::size_t>(N), 0.0);
    {
      GridFunction R(k, 0.0);
      for (int t = N - 1; t >= 0; --t) {
        std::size_t sym = omega.symbol(start_fiber + t);
        prep(sym);
        GridFunction pulled = closed[sym].pullback(R);
        for (std::size_t i = 0; i < k; ++i) {
          R.values[i] = fc[static_cast<std::size_t>(t)].values[i] *
                            d.s[static_cast<std::size_t>(t)].values[i] +
                        mask[sym][i] * pulled.values[i];
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
          acc += d.u[static_cast<std::size_t>(t)].values[i] *
                 fc[static_cast<std::size_t>(t)].values[i] * R.values[i];
        }
        fut[static_cast<std::size_t>(t)] = acc / static_cast<double>(k) / Z;
      }
    }
    for (int n = 0; n < N; ++n) {
      // Var(fbar_n) = E[fc_n^2]
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        double v = fc[static_cast<std::size_t>(n)].values[i];
        acc += d.u[static_cast<std::size_t>(n)].values[i] * v * v *
               d.s[static_cast<std::size_t>(n)].values[i];
      }
      out.col_var[static_cast<std::size_t>(n)] =
          acc / static_cast<double>(k) / Z;
    }
    for (int n = 1; n <= N; ++n) {
      out.sigma2_n[static_cast<std::size_t>(n)] =
          out.sigma2_n[static_cast<std::size_t>(n) - 1] +
          past[static_cast<std::size_t>(n) - 1] +
          fut[static_cast<std::size_t>(n) - 1];
    }
  } else {
    if (!mc_array || mc_array->N != N) {
      throw contract_error("Monte Carlo profile needs a centered array");
    }
    const std::size_t M = mc_array->count;
    // sigma^2_{N,n} = sum_{i<n} E[fbar_i S]
    std::vector<double> b(static_cast<std::size_t>(N), 0.0);
    std::vector<double> colsq(static_cast<std::size_t>(N), 0.0);
    double s2sum = 0.0, s4sum = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      double S = 0.0;
      for (int n = 0; n < N; ++n) S += mc_array->at(m, n);
      for (int n = 0; n < N; ++n) {
        double v = mc_array->at(m, n);
        b[static_cast<std::size_t>(n)] += v * S;
        colsq[static_cast<std::size_t>(n)] += v * v;
      }
      s2sum += S * S;
      s4sum += S * S * S * S;
    }
    for (int n = 0; n < N; ++n) {
      b[static_cast<std::size_t>(n)] /= static_cast<double>(M);
      out.col_var[static_cast<std::size_t>(n)] =
          colsq[static_cast<std::size_t>(n)] / static_cast<double>(M);
    }
    for (int n = 1; n <= N; ++n) {
      out.sigma2_n[static_cast<std::size_t>(n)] =
          out.sigma2_n[static_cast<std::size_t>(n) - 1] +
          b[static_cast<std::size_t>(n) - 1];
    }
    double mean_s2 = s2sum / static_cast<double>(M);
    double var_s2 =
        s4sum / static_cast<double>(M) - mean_s2 * mean_s2;
    out.sigma2_se = std::sqrt(std::max(0.0, var_s2) / static_cast<double>(M));
  }

  out.sigma2 = out.sigma2_n.back();
  out.sigma = std::sqrt(std::max(0.0, out.sigma2));
  out.coboundary_suspect = out.sigma2 <= 1e-10 * std::max(1, N);
  return out;
}

// ---------------------------------------------------------------------------
// sigma_infinity
// ---------------------------------------------------------------------------

SigmaInfinity sigma_infinity(const OpenSystem& sys, const Observable& f,
                             int n_T, std::size_t draws, std::size_t k,
                             std::uint64_t seed) {
  if (n_T < 2) throw contract_error("sigma_infinity needs n_T >= 2");
  SigmaInfinity out;
  out.autocov.assign(static_cast<std::size_t>(n_T) + 1, 0.0);
  const long horizon = 2L * n_T + 1050;
  double total = 0.0;

  for (std::size_t dI = 0; dI < draws; ++dI) {
    OmegaPath omega(sys.environment(), seed + dI, horizon);
    SpectralTriple st = spectral_triple(sys, omega, n_T, k, 1e-10, 1024);

    // per-fiber centered f on the grid, f~ = f - eta_inf(f)
    std::vector<GridFunction> fc(static_cast<std::size_t>(n_T) + 1);
    // nu at each fiber comes from one backward pass inside spectral_triple;
    // recompute per fiber via conformal_measure for the centering values
    // (the grid is small, this is cheap)
    std::vector<std::vector<double>> nus(static_cast<std::size_t>(n_T) + 1);
    std::vector<GridFunction> phis(static_cast<std::size_t>(n_T) + 1);
    for (int t = 0; t <= n_T; ++t) {
      nus[static_cast<std::size_t>(t)] =
          conformal_measure(sys, omega, k, 1e-10, 1024, t);
      phis[static_cast<std::size_t>(t)] =
          equivariant_density(sys, omega, k, 1e-10, 1024, t);
    }
    for (int t = 0; t <= n_T; ++t) {
      std::size_t sym = omega.symbol(t);
      GridFunction g = f.at(sym).to_grid(k);
      double eta_inf = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        eta_inf += nus[static_cast<std::size_t>(t)][i] *
                   phis[static_cast<std::size_t>(t)].values[i] * g.values[i];
      }
      for (double& v : g.values) v -= eta_inf;
      fc[static_cast<std::size_t>(t)] = std::move(g);
    }

    // a_0 = eta_inf(f~^2); a_n = lambda^{-n} nu_{sigma^n}(f~_n L^n(phi f~_0))
    double draw_sum = 0.0;
    {
      double a0 = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        a0 += nus[0][i] * phis[0].values[i] * fc[0].values[i] * fc[0].values[i];
      }
      draw_sum += a0;
      out.autocov[0] += std::abs(a0) / static_cast<double>(draws);
    }
    GridFunction v = phis[0];
    for (std::size_t i = 0; i < k; ++i) v.values[i] *= fc[0].values[i];
    for (int n = 1; n <= n_T; ++n) {
      std::size_t sym = omega.symbol(n - 1);
      OperatorMatrix open = ulam_open(sys, sym, k);
      v = open.apply(v);
      double lam = st.lambda_per_step[static_cast<std::size_t>(n) - 1];
      for (double& x : v.values) x /= lam;
      double an = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        an += nus[static_cast<std::size_t>(n)][i] *
              fc[static_cast<std::size_t>(n)].values[i] * v.values[i];
      }
      draw_sum += 2.0 * an;
      out.autocov[static_cast<std::size_t>(n)] +=
          std::abs(an) / static_cast<double>(draws);
    }
    total += draw_sum;
  }
  out.sigma2 = total / static_cast<double>(draws);

  // geometric tail from the last decade of the averaged |a_n|
  int lo = std::max(1, n_T - 10);
  double peak = 0.0;
  for (double v : out.autocov) peak = std::max(peak, v);
  const double floor_eps = std::max(1e-300, 1e-13 * peak);
  std::vector<std::pair<double, double>> pts;
  for (int n = lo; n <= n_T; ++n) {
    double v = out.autocov[static_cast<std::size_t>(n)];
    if (v > floor_eps) pts.emplace_back(n, std::log(v));
  }
  if (pts.size() >= 2) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (auto [x, y] : pts) {
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    double m = static_cast<double>(pts.size());
    double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    out.fitted_ratio = std::exp(slope);
    if (out.fitted_ratio >= 1.0) {
      throw degenerate_error(
          "autocovariance does not decay (fitted ratio >= 1)");
    }
    double last = out.autocov[static_cast<std::size_t>(n_T)];
    out.tail_bound =
        2.0 * last * out.fitted_ratio / (1.0 - out.fitted_ratio);
  } else {
    // everything at the floor: the series has already converged
    out.fitted_ratio = 0.0;
    out.tail_bound = 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalized sums and paths
// ---------------------------------------------------------------------------

std::vector<double> normalized_sum(const CenteredArray& array,
                                   const VarianceProfile& profile) {
  if (profile.sigma <= 0.0) {
    throw contract_error("sigma must be positive to normalize");
  }
  std::vector<double> w(array.count, 0.0);
  for (std::size_t m = 0; m < array.count; ++m) {
    double acc = 0.0;
    for (int n = 0; n < array.N; ++n) acc += array.at(m, n);
    w[m] = acc / profile.sigma;
  }
  return w;
}

PathSample::PathSample(std::shared_ptr<const CenteredArray> array,
                       const VarianceProfile& profile)
    : array_(std::move(array)), sigma_(profile.sigma) {
  if (profile.sigma <= 0.0) {
    throw contract_error("sigma must be positive for the path process");
  }
  if (array_->N != profile.N) throw contract_error("profile/array mismatch");
  alphas_.resize(static_cast<std::size_t>(array_->N));
  for (int n = 0; n < array_->N; ++n) {
    alphas_[static_cast<std::size_t>(n)] =
        profile.sigma2_n[static_cast<std::size_t>(n)] / profile.sigma2;
  }
  terminal_ = evaluate(1.0);
}

std::vector<double> PathSample::evaluate(double t) const {
  std::vector<double> out(array_->count, 0.0);
  // J_alpha(t) = 1 iff t >= alpha (1e-9 tie tolerance)
  int cutoff = 0;
  while (cutoff < array_->N &&
         alphas_[static_cast<std::size_t>(cutoff)] <= t + 1e-9) {
    ++cutoff;
  }
  for (std::size_t m = 0; m < array_->count; ++m) {
    double acc = 0.0;
    for (int n = 0; n < cutoff; ++n) acc += array_->at(m, n);
    out[m] = acc / sigma_;
  }
  return out;
}

// ---------------------------------------------------------------------------
// FCB estimation
// ---------------------------------------------------------------------------

FcbEstimate fcb_gap_estimate(const Observable& f,
                             const ConditionalMeasure& zeta,
                             const FcbBlockSpec& blocks) {
  const auto& times = blocks.times;
  const auto& lb = blocks.block_bounds;
  if (times.empty() || lb.size() < 2 || lb.front() != 0 ||
      lb.back() != static_cast<int>(times.size())) {
    throw contract_error("invalid block structure");
  }
  for (std::size_t i = 0; i + 1 < lb.size(); ++i) {
    if (lb[i] >= lb[i + 1]) throw contract_error("blocks must be nonempty");
    // times strictly increase within a block
    for (int j = lb[i]; j + 1 < lb[i + 1]; ++j) {
      if (!(times[static_cast<std::size_t>(j)] <
            times[static_cast<std::size_t>(j) + 1])) {
        throw contract_error("times must increase within each block");
      }
    }
  }
  for (int t : times) {
    if (t < 0 || t >= zeta.horizon()) {
      throw contract_error("block time outside [0, N)");
    }
  }
  if (!zeta.exact_path() || zeta.horizon() > 12) {
    throw contract_error(
        "exact FCB evaluation is limited to the aligned path with N <= 12");
  }

  // centered factors
  std::vector<double> c = centering_constants(
      zeta.system(), zeta.omega(), zeta.start_fiber(), zeta.horizon(), f);
  std::vector<OrbitFactor> factors;
  factors.reserve(times.size());
  for (int t : times) {
    std::size_t sym = zeta.omega().symbol(zeta.start_fiber() + t);
    factors.push_back(OrbitFactor{
        t, f.at(sym).shifted(Rat(-c[static_cast<std::size_t>(t)]))});
  }
  // products: the full product plus one per block
  std::vector<std::vector<int>> products;
  std::vector<int> all(times.size());
  std::iota(all.begin(), all.end(), 0);
  products.push_back(all);
  for (std::size_t i = 0; i + 1 < lb.size(); ++i) {
    std::vector<int> block;
    for (int j = lb[i]; j < lb[i + 1]; ++j) block.push_back(j);
    products.push_back(std::move(block));
  }
  std::vector<double> mom = exact_orbit_moments(zeta, factors, products);
  double prod = 1.0;
  for (std::size_t i = 1; i < mom.size(); ++i) prod *= mom[i];
  FcbEstimate out;
  out.lhs = std::abs(mom[0] - prod);
  out.exact = true;
  return out;
}

FcbSweep fcb_gap_sweep(const Observable& f, const ConditionalMeasure& zeta,
                       const std::vector<int>& gaps) {
  FcbSweep out;
  out.gaps = gaps;
  const int N = zeta.horizon();
  // one cylinder sweep for every pair moment; the per-gap value averages
  // |E[fbar_i fbar_{i+g}] - E[fbar_i] E[fbar_{i+g}]| over the base times,
  // which quenches the fiber-to-fiber jitter of the prefactor
  std::vector<double> c = centering_constants(
      zeta.system(), zeta.omega(), zeta.start_fiber(), N, f);
  std::vector<OrbitFactor> factors;
  for (int n = 0; n < N; ++n) {
    std::size_t sym = zeta.omega().symbol(zeta.start_fiber() + n);
    factors.push_back(OrbitFactor{
        n, f.at(sym).shifted(Rat(-c[static_cast<std::size_t>(n)]))});
  }
  std::vector<std::vector<int>> products;
  for (int n = 0; n < N; ++n) products.push_back({n});
  std::vector<std::pair<int, int>> pair_of;
  for (int gap : gaps) {
    for (int i = 0; i + gap < N; ++i) {
      products.push_back({i, i + gap});
      pair_of.emplace_back(gap, i);
    }
  }
  std::vector<double> mom = exact_orbit_moments(zeta, factors, products);
  for (std::size_t g = 0; g < gaps.size(); ++g) out.lhs.push_back(0.0);
  std::vector<int> counts(gaps.size(), 0);
  for (std::size_t p = 0; p < pair_of.size(); ++p) {
    auto [gap, i] = pair_of[p];
    double lhs = std::abs(mom[static_cast<std::size_t>(N) + p] -
                          mom[static_cast<std::size_t>(i)] *
                              mom[static_cast<std::size_t>(i + gap)]);
    for (std::size_t g = 0; g < gaps.size(); ++g) {
      if (gaps[g] == gap) {
        out.lhs[g] += lhs;
        ++counts[g];
      }
    }
  }
  for (std::size_t g = 0; g < gaps.size(); ++g) {
    out.lhs[g] /= std::max(1, counts[g]);
  }
  // log-linear fit over the gaps with values above the numerical floor
  double floor = 0.0;
  for (double v : out.lhs) floor = std::max(floor, v);
  floor = std::max(1e-300, 1e-13 * floor);
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    if (out.lhs[i] > floor) {
      pts.emplace_back(gaps[i], std::log(out.lhs[i]));
    }
  }
  if (pts.size() < 2) {
    out.degenerate = true;
    return out;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (auto [x, y] : pts) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  double m = static_cast<double>(pts.size());
  double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  double intercept = (sy - slope * sx) / m;
  out.fitted_r = std::exp(slope);
  double ss = 0.0;
  for (auto [x, y] : pts) {
    double r = y - (slope * x + intercept);
    ss += r * r;
  }
  out.residual = std::sqrt(ss / m);
  return out;
}

// ---------------------------------------------------------------------------
// Distances
// ---------------------------------------------------------------------------

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw contract_error("quantile needs p in (0,1)");
  }
  // Newton with a bisection cage
  double lo = -12.0, hi = 12.0, x = 0.0;
  for (int it = 0; it < 200; ++it) {
    double f = normal_cdf(x) - p;
    if (f > 0)
      hi = x;
    else
      lo = x;
    double d = normal_pdf(x);
    double step = d > 1e-300 ? f / d : 0.0;
    double nx = x - step;
    if (!(nx > lo && nx < hi)) nx = 0.5 * (lo + hi);
    if (std::abs(nx - x) < 1e-15) return nx;
    x = nx;
  }
  return x;
}

double dist_kolmogorov(std::vector<double> sample) {
  if (sample.empty()) throw contract_error("empty sample");
  std::sort(sample.begin(), sample.end());
  const double M = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    double F = normal_cdf(sample[i]);
    double hi = (static_cast<double>(i) + 1.0) / M - F;
    double lo = F - static_cast<double>(i) / M;
    d = std::max(d, std::max(hi, lo));
  }
  return d;
}

namespace {

// antiderivative of Phi
double big_phi_int(double x) { return x * normal_cdf(x) + normal_pdf(x); }

}  // namespace

double dist_wasserstein(std::vector<double> sample) {
  if (sample.empty()) throw contract_error("empty sample");
  std::sort(sample.begin(), sample.end());
  const double M = static_cast<double>(sample.size());
  double total = 0.0;
  // left tail: integral of Phi up to the first order statistic
  total += big_phi_int(sample.front());
  // right tail: integral of (1 - Phi) from the last order statistic
  total += -(sample.back() - big_phi_int(sample.back()));
  // between consecutive order statistics F_emp = i/M
  for (std::size_t i = 0; i + 1 < sample.size(); ++i) {
    double a = sample[i], b = sample[i + 1];
    if (a == b) continue;
    double q = (static_cast<double>(i) + 1.0) / M;
    double Fa = normal_cdf(a), Fb = normal_cdf(b);
    auto piece = [&](double u, double v) {
      // integral of (q - Phi) over [u,v]
      return q * (v - u) - (big_phi_int(v) - big_phi_int(u));
    };
    if (Fb <= q) {
      total += piece(a, b);
    } else if (Fa >= q) {
      total += -piece(a, b);
    } else {
      double x = normal_quantile(q);
      x = std::min(std::max(x, a), b);
      total += piece(a, x) - piece(x, b);
    }
  }
  return total;
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw contract_error("empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j])
      ++i;
    else
      ++j;
    double fa = static_cast<double>(i) / static_cast<double>(a.size());
    double fb = static_cast<double>(j) / static_cast<double>(b.size());
    d = std::max(d, std::abs(fa - fb));
  }
  return d;
}

double ks_two_sample_critical(double alpha, std::size_t m, std::size_t n) {
  double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
  return c * std::sqrt((static_cast<double>(m) + static_cast<double>(n)) /
                       (static_cast<double>(m) * static_cast<double>(n)));
}

// ---------------------------------------------------------------------------
// Block-streamed CLT pipeline
// ---------------------------------------------------------------------------

CltRun run_clt(const OpenSystem& sys, const OmegaPath& omega,
               const Observable& f, int N, std::size_t M, std::uint64_t seed,
               unsigned threads, const std::vector<double>& path_t,
               std::size_t base_k) {
  if (!(sys.full_branch() && sys.hole_aligned())) {
    throw unsupported_system_error(
        "the streamed CLT pipeline runs on the full-branch aligned path");
  }
  CltRun out;
  out.N = N;
  out.M = M;
  out.path_t = path_t;

  // exact centering and exact variance profile (operator sweeps)
  VarianceProfile prof = variance_profile(sys, omega, 0, N, f,
                                          EstimationMode::ExactOperator,
                                          nullptr, base_k);
  if (prof.sigma <= 0.0) {
    throw degenerate_error("sigma vanishes; observable looks like a coboundary");
  }
  out.sigma = prof.sigma;
  std::vector<double> alphas(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    alphas[static_cast<std::size_t>(n)] =
        prof.sigma2_n[static_cast<std::size_t>(n)] / prof.sigma2;
  }
  std::vector<int> cutoffs;
  for (double t : path_t) {
    int c = 0;
    while (c < N && alphas[static_cast<std::size_t>(c)] <= t + 1e-9) ++c;
    cutoffs.push_back(c);
  }
  std::vector<double> c = centering_constants(sys, omega, 0, N, f, base_k);
  // per-fiber observable grids for O(1) evaluation
  std::size_t kf = aligned_grid(sys, f, base_k);
  std::vector<GridFunction> fsym(sys.alphabet_size());
  for (std::size_t s = 0; s < sys.alphabet_size(); ++s) {
    fsym[s] = f.at(s).to_grid(kf);
  }
  std::vector<std::size_t> syms(static_cast<std::size_t>(N) + 1);
  for (int t = 0; t <= N; ++t) {
    syms[static_cast<std::size_t>(t)] = omega.symbol(t);
  }

  ConditionalMeasure eta(sys, omega, RandomDensity::eta_preset(), N);
  SequentialSampler sampler(eta, seed);

  struct BlockAcc {
    double s2 = 0.0, s4 = 0.0;
    std::vector<double> pvar_sum;  // sum of W(t)^2 per path time
    std::vector<double> pmean_sum;
    std::vector<double> w;  // per-sample W values (appended in order)
  };
  const std::size_t block_size = 8192;
  const std::size_t nblocks = block_count(M, block_size);
  std::vector<BlockAcc> acc(nblocks);

  for_each_block(M, block_size, threads, [&](const BlockRange& br) {
    BlockAcc a;
    a.pvar_sum.assign(path_t.size(), 0.0);
    a.pmean_sum.assign(path_t.size(), 0.0);
    a.w.reserve(br.end - br.begin);
    std::vector<std::uint8_t> digits;
    std::vector<double> pos;
    double tail;
    for (std::size_t m = br.begin; m < br.end; ++m) {
      sampler.generate(m, digits, tail);
      sampler.positions(digits, tail, pos);
      double S = 0.0;
      std::vector<double> prefix(path_t.size(), 0.0);
      for (int n = 0; n < N; ++n) {
        double v =
            fsym[syms[static_cast<std::size_t>(n)]].value_at(
                pos[static_cast<std::size_t>(n)]) -
            c[static_cast<std::size_t>(n)];
        S += v;
        for (std::size_t pt = 0; pt < cutoffs.size(); ++pt) {
          if (n < cutoffs[pt]) prefix[pt] += v;
        }
      }
      a.s2 += S * S;
      a.s4 += S * S * S * S;
      double W = S / prof.sigma;
      a.w.push_back(W);
      for (std::size_t pt = 0; pt < path_t.size(); ++pt) {
        double wt = prefix[pt] / prof.sigma;
        a.pvar_sum[pt] += wt * wt;
        a.pmean_sum[pt] += wt;
      }
    }
    acc[br.index] = std::move(a);
  });

  // deterministic sequential reduction in block order
  std::vector<double> w;
  w.reserve(M);
  double s2 = 0.0, s4 = 0.0;
  std::vector<double> pvar(path_t.size(), 0.0), pmean(path_t.size(), 0.0);
  std::vector<std::vector<double>> batch_var(path_t.size());
  for (const BlockAcc& a : acc) {
    s2 += a.s2;
    s4 += a.s4;
    for (std::size_t pt = 0; pt < path_t.size(); ++pt) {
      pvar[pt] += a.pvar_sum[pt];
      pmean[pt] += a.pmean_sum[pt];
      double bm = a.pmean_sum[pt] / static_cast<double>(a.w.size());
      batch_var[pt].push_back(a.pvar_sum[pt] / static_cast<double>(a.w.size()) -
                              bm * bm);
    }
    w.insert(w.end(), a.w.begin(), a.w.end());
  }
  double mean_s2 = s2 / static_cast<double>(M);
  out.sigma2_mc = mean_s2;
  double var_s2 = s4 / static_cast<double>(M) - mean_s2 * mean_s2;
  out.sigma2_mc_se = std::sqrt(std::max(0.0, var_s2) / static_cast<double>(M));

  out.d_k = dist_kolmogorov(w);
  out.d_w = dist_wasserstein(std::move(w));
  out.d_k_se_floor = 1.22 / std::sqrt(static_cast<double>(M));

  out.path_var.resize(path_t.size());
  out.path_var_se.resize(path_t.size());
  for (std::size_t pt = 0; pt < path_t.size(); ++pt) {
    double mean = pmean[pt] / static_cast<double>(M);
    out.path_var[pt] = pvar[pt] / static_cast<double>(M) - mean * mean;
    // batch-means error over the blocks
    double bm = 0.0, bs = 0.0;
    for (double v : batch_var[pt]) bm += v;
    bm /= static_cast<double>(batch_var[pt].size());
    for (double v : batch_var[pt]) bs += (v - bm) * (v - bm);
    bs = std::sqrt(bs / std::max<std::size_t>(1, batch_var[pt].size() - 1));
    out.path_var_se[pt] =
        bs / std::sqrt(static_cast<double>(batch_var[pt].size()));
  }
  return out;
}

}  // namespace roim
