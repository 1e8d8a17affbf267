#ifndef ROIM_SPECTRAL_HPP
#define ROIM_SPECTRAL_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "roim/transfer.hpp"

namespace roim {

// ---------------------------------------------------------------------------
// Spectral objects
// ---------------------------------------------------------------------------

// Leading spectral data of the open cocycle along one realization: per-step
// escape factors lambda_{sigma^i omega}, the equivariant density phi at fiber
// 0 (normalized so that <nu, phi> = 1), and the conformal measure nu at fiber
// 0 as cell masses summing to 1.
struct SpectralTriple {
  std::vector<double> lambda_per_step;
  double lambda_geomean = 0.0;
  GridFunction phi;
  std::vector<double> nu;
  std::size_t k = 0;
  long pullback_horizon = 0;
  double nu_equivariance_residual = 0.0;
};

struct EscapeRateResult {
  std::vector<double> per_step;
  double geometric_mean = 0.0;
};

// Sup-norm decay table of Q_{omega,n}(u) = (lambda^n)^{-1} L^n u -
// nu(u) phi_{sigma^n omega}, with a least-squares fit of log sup-norm vs n.
struct QDecayFit {
  std::vector<double> table;        // index n = 0..n_max
  double D = 0.0;                   // fitted prefactor, per unit BV norm
  double kappa = 0.0;               // fitted decay rate
  double residual = 0.0;            // rms misfit of the log-linear model
  double max_ratio = 0.0;           // max_n table[n+1]/table[n] over the fit range
  double bv_norm = 0.0;             // var(u) + sup|u|
  bool degenerate = false;          // true when the fit range is identically 0
};

struct ConditionClause {
  std::string id;
  std::string status;  // "pass" | "fail" | "assumed"
  std::map<std::string, double> witness;
  std::string note;
};

struct ConditionReport {
  std::vector<ConditionClause> clauses;
  bool all_checkable_pass() const {
    for (const auto& c : clauses)
      if (c.status == "fail") return false;
    return true;
  }
  const ConditionClause* find(const std::string& id) const {
    for (const auto& c : clauses)
      if (c.id == id) return &c;
    return nullptr;
  }
};

struct LyCheckResult {
  double lhs = 0.0;     // sum over refined cells J of var(L^n(1_J u))
  double a_coeff = 0.0; // A_omega^(n)
  double k_coeff = 0.0; // K_{omega,n}
  double a_term = 0.0;  // A * var(u)
  double k_term = 0.0;  // K * nu(|u|)
  double rhs = 0.0;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Per-step escape factors from the open cocycle applied to the pulled-back
// density; exact on aligned grids for the quadrupling preset. Throws
// degenerate_error if the surviving mass vanishes.
EscapeRateResult escape_rate(const OpenSystem& sys, const OmegaPath& omega,
                             int n_max, std::size_t k, double tol = 1e-12,
                             long max_horizon = 1024);

// Equivariant density phi at fiber `fiber`, computed as the pullback limit
// L_{sigma^{-B}omega}^B 1 with horizon doubling until the sup-norm change
// drops below tol. Normalized so that <nu, phi> = 1.
GridFunction equivariant_density(const OpenSystem& sys, const OmegaPath& omega,
                                 std::size_t k, double tol = 1e-10,
                                 long max_horizon = 1024, long fiber = 0);

// Conformal measure nu at fiber `fiber` as cell masses, from the adjoint
// push-down nu^{(t)} ∝ A_t nu^{(t+1)} started at fiber +B. residual_out, when
// given, receives the adjoint-equivariance residual.
std::vector<double> conformal_measure(const OpenSystem& sys,
                                      const OmegaPath& omega, std::size_t k,
                                      double tol = 1e-10,
                                      long max_horizon = 1024, long fiber = 0,
                                      double* residual_out = nullptr);

// Full triple in one pass (shared pullback horizon).
SpectralTriple spectral_triple(const OpenSystem& sys, const OmegaPath& omega,
                               int n_max, std::size_t k, double tol = 1e-10,
                               long max_horizon = 1024);

// Decay table of Q_{omega,n}(u) for n = 0..n_max and its log-linear fit over
// n in [2, n_max]. A fit range that is identically zero (u on the equivariant
// ray, or u collapsing onto it after finitely many steps) sets the degenerate
// flag with D = 0 instead of fitting.
QDecayFit q_decay(const OpenSystem& sys, const OmegaPath& omega,
                  const GridFunction& u, int n_max, std::size_t k,
                  double tol = 1e-10, long max_horizon = 1024);

// Numeric witnesses for the checkable clauses of the standing conditions;
// failures are report entries, never exceptions. Fiber-dependent quantities
// are sampled over `env_draws` seeded realizations plus all single-symbol
// fibers, and reported as sampled essential suprema.
ConditionReport verify_conditions(const OpenSystem& sys, int n_max,
                                  std::size_t k, double tol = 1e-10,
                                  std::size_t env_draws = 1000);

// Both sides of the open Lasota-Yorke inequality
//   sum_J var(L^n(1_J u)) <= A var(u) + K nu(|u|)
// on the exact full-branch affine path. `nu` defaults to the conformal
// measure computed at the same grid.
LyCheckResult lasota_yorke_check(const OpenSystem& sys, const OmegaPath& omega,
                                 const GridFunction& u, int n,
                                 const std::vector<double>* nu = nullptr);

// ---------------------------------------------------------------------------
// Exact helpers (full-branch, hole-aligned path)
// ---------------------------------------------------------------------------

// lambda_{sigma^t omega} = sum over allowed branches of 1/|slope|, exact.
Rat exact_lambda(const OpenSystem& sys, const OmegaPath& omega, long fiber);

// nu-mass of the depth-n cylinder with the given digit word starting at
// `fiber`: prod_t 1/(lambda_t |s_{a_t}|).
Rat exact_nu_cylinder(const OpenSystem& sys, const OmegaPath& omega,
                      long fiber, const std::vector<std::uint8_t>& word);

// delta_{omega,n} = min positive nu-mass over surviving depth-n cylinders.
Rat exact_delta(const OpenSystem& sys, const OmegaPath& omega, long fiber,
                int n);

// Maximum run of contiguous non-full surviving intervals for T^n (zero on
// full-branch systems).
int xi_run_length(const OpenSystem& sys, const OmegaPath& omega, long fiber,
                  int n);

}  // namespace roim

#endif
