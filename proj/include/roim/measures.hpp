#ifndef ROIM_MEASURES_HPP
#define ROIM_MEASURES_HPP

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "roim/piecewise.hpp"
#include "roim/spectral.hpp"

namespace roim {

// ---------------------------------------------------------------------------
// Random densities
// ---------------------------------------------------------------------------

// Admissible random density psi: one nonnegative piecewise-affine density per
// symbol (or one shared), nu-normalized in intent. The conditional measures
// built from psi are invariant under scaling, so the normalization is
// reported rather than enforced exactly.
class RandomDensity {
 public:
  // same density on every fiber
  explicit RandomDensity(Piecewise shared);
  // one density per symbol
  explicit RandomDensity(std::vector<Piecewise> per_symbol);

  // the conditionally invariant preset: psi = phi (density of eta)
  static RandomDensity eta_preset();

  bool is_eta() const { return eta_; }
  const Piecewise& at_symbol(std::size_t s) const;

 private:
  RandomDensity() = default;
  std::vector<Piecewise> per_symbol_;
  bool eta_ = false;
};

// ---------------------------------------------------------------------------
// Conditional measures
// ---------------------------------------------------------------------------

enum class SamplerMode { ExactCylinder, Sequential, Rejection };

// zeta_{omega,N}(A) = zeta_omega(A ∩ X_{omega,N}) / zeta_omega(X_{omega,N})
// where zeta_omega has density psi restricted to X_{omega,0}. Exact paths
// require the full-branch hole-aligned system; MC paths work everywhere.
class ConditionalMeasure {
 public:
  ConditionalMeasure(const OpenSystem& sys, OmegaPath omega, RandomDensity psi,
                     int N, long start_fiber = 0, std::size_t grid_k = 4096);

  const OpenSystem& system() const { return *sys_; }
  const OmegaPath& omega() const { return omega_; }
  int horizon() const { return N_; }
  long start_fiber() const { return start_fiber_; }
  const RandomDensity& density() const { return psi_; }
  bool exact_path() const;

  // psi at the starting fiber (phi for the eta preset; identically 1 on the
  // exact path, the numeric pullback elsewhere).
  const Piecewise& psi_at_start() const { return psi_start_; }

 private:
  const OpenSystem* sys_;
  OmegaPath omega_;
  RandomDensity psi_;
  int N_;
  long start_fiber_;
  std::size_t grid_k_;
  Piecewise psi_start_ = Piecewise::constant(Rat(1));
};

// ---------------------------------------------------------------------------
// Exact integration (cylinder path)
// ---------------------------------------------------------------------------

// One factor f(T^t x) of an integrand.
struct OrbitFactor {
  int time = 0;
  Piecewise fn = Piecewise::constant(Rat(1));
};

// Exact integral of  prod_j f_j(T^{t_j} x) * psi(x)  over X_{omega,N},
// by streaming the surviving depth-(N+1) cylinders; every factor is affine
// on each cylinder after pulling its breakpoints back. Requires t_j <= N+1.
Rat exact_survivor_integral(const OpenSystem& sys, const OmegaPath& omega,
                            long start_fiber, int N, const Piecewise& psi,
                            const std::vector<OrbitFactor>& factors);

// zeta_omega(X_{omega,N}), exact on the aligned path.
Rat exact_conditional_mass(const ConditionalMeasure& zeta);

// Exact conditional expectation of prod f_j(T^{t_j} x) under zeta_{omega,N}.
Rat exact_conditional_expectation(const ConditionalMeasure& zeta,
                                  const std::vector<OrbitFactor>& factors);

// Batched form: E[prod_{j in product} f_j(T^{t_j} x)] under zeta_{omega,N}
// for every requested index subset, in a single cylinder sweep. Integration
// within each cylinder is exact (local coordinates); accumulation across the
// 3^(N+1)-odd cylinders is double precision.
std::vector<double> exact_orbit_moments(
    const ConditionalMeasure& zeta, const std::vector<OrbitFactor>& factors,
    const std::vector<std::vector<int>>& products);

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// zeta_omega(X_{omega,N}) as a double; exact path when available, otherwise a
// Monte Carlo estimate. Throws degenerate_error on zero mass.
double conditional_mass(const ConditionalMeasure& zeta);

// Sample with survival certificates. Every point carries its digit word and
// within-cylinder tail when produced by an exact sampler, so orbit positions
// can be reconstructed stably (backward through the contracting inverse
// branches) at any horizon.
class ConditionalSample {
 public:
  std::size_t size() const { return x_.size(); }
  int horizon() const { return N_; }
  long start_fiber() const { return start_fiber_; }
  SamplerMode mode() const { return mode_; }
  double x(std::size_t i) const { return x_[i]; }
  double weight(std::size_t) const { return 1.0; }
  bool certified(std::size_t i) const { return certified_[i]; }
  std::optional<int> escape_time(std::size_t) const { return std::nullopt; }

  // orbit positions T^t x for t = 0..horizon
  std::vector<double> orbit_positions(std::size_t i) const;

  void dump_csv(const std::string& path) const;

 private:
  friend ConditionalSample sample_conditional(const ConditionalMeasure&,
                                              std::size_t, std::uint64_t,
                                              SamplerMode, std::uint64_t);
  friend class SequentialSampler;
  const OpenSystem* sys_ = nullptr;
  OmegaPath omega_{Environment::iid({1.0}, 0), 0, 0};
  int N_ = 0;
  long start_fiber_ = 0;
  SamplerMode mode_ = SamplerMode::Rejection;
  std::vector<double> x_;
  std::vector<std::uint8_t> digits_;  // flattened size*(N+1) (exact modes)
  std::vector<double> tail_;          // within-cylinder position (exact modes)
  std::vector<bool> certified_;
};

// Draws M points from zeta_{omega,N}. Default mode: exact cylinder
// enumeration for N <= 12, sequential digit sampling beyond (eta preset on
// the exact path), rejection elsewhere. Rejection aborts (degenerate_error)
// after 1e8 proposals without M acceptances.
ConditionalSample sample_conditional(
    const ConditionalMeasure& zeta, std::size_t M, std::uint64_t seed,
    SamplerMode mode = SamplerMode::ExactCylinder,
    std::uint64_t max_proposals = 100000000ULL);

// Streaming per-index sampler used by the statistics pipelines: digits and
// tail for sample `index` are a pure function of (seed, index).
class SequentialSampler {
 public:
  SequentialSampler(const ConditionalMeasure& zeta, std::uint64_t seed);

  // fills `digits` (N+1 entries) and the tail position
  void generate(std::size_t index, std::vector<std::uint8_t>& digits,
                double& tail) const;

  // orbit positions T^t x for t = 0..N from a digit word + tail
  void positions(const std::vector<std::uint8_t>& digits, double tail,
                 std::vector<double>& out) const;

  double point(const std::vector<std::uint8_t>& digits, double tail) const;

 private:
  const OpenSystem* sys_;
  const OmegaPath* omega_;
  int N_;
  long start_fiber_;
  std::uint64_t seed_;
  // per-fiber digit weights over allowed branches (cumulative, normalized)
  std::vector<std::vector<double>> cumw_;
  std::vector<std::vector<std::size_t>> allowed_;
};

struct IntegralEstimate {
  double value = 0.0;
  double std_error = 0.0;  // 0 on the exact path
  bool exact = false;
};

// Integral of u against zeta_{omega,N}: exact cylinder sums on the aligned
// path, Monte Carlo with a reported standard error otherwise.
IntegralEstimate integrate_conditional(const ConditionalMeasure& zeta,
                                       const Piecewise& u,
                                       std::size_t mc_samples = 200000,
                                       std::uint64_t seed = 1);

}  // namespace roim

#endif
