#ifndef ROIM_LIMITS_HPP
#define ROIM_LIMITS_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "roim/measures.hpp"

namespace roim {

// ---------------------------------------------------------------------------
// Observables
// ---------------------------------------------------------------------------

// Random observable f: one piecewise-affine function per symbol (or one
// shared). `scale` is the working constant L = 2 esssup ||f||_alpha when the
// fibers are Holder continuous, and 2 esssup ||f||_BV otherwise (indicators
// have no finite Holder norm; the BV scale is what the bound calculators
// receive).
class Observable {
 public:
  explicit Observable(Piecewise shared, double alpha = 1.0);
  Observable(std::vector<Piecewise> per_symbol, double alpha = 1.0);

  const Piecewise& at(std::size_t symbol) const;
  double alpha() const { return alpha_; }
  double scale() const { return scale_; }
  bool holder_finite() const { return holder_finite_; }

  // named presets used by the experiment pipelines
  static Observable indicator_half();   // 1_{[1/2,1)}
  static Observable indicator_third();  // 1_{[1/3,1)}
  static Observable coordinate();       // f(x) = x

 private:
  std::vector<Piecewise> per_symbol_;
  double alpha_;
  double scale_;
  bool holder_finite_;
};

// f_omega = g - g o T_omega (plus centering, a coboundary): the degenerate
// case of the variance theory, used to exercise the Sigma^2 = 0 direction.
Observable coboundary_observable(const OpenSystem& sys, const Piecewise& g);

// ---------------------------------------------------------------------------
// Centered arrays and variance structures
// ---------------------------------------------------------------------------

// M x N matrix of centered observations fbar_{omega,N,n}(x_m) plus the
// centering constants zeta_{omega,N}(f o T^n).
struct CenteredArray {
  std::size_t count = 0;  // M
  int N = 0;
  std::vector<double> values;     // row-major M x N
  std::vector<double> centering;  // n = 0..N-1
  bool exact_centering = false;
  double centering_se = 0.0;

  double at(std::size_t m, int n) const {
    return values[m * static_cast<std::size_t>(N) + static_cast<std::size_t>(n)];
  }
};

enum class EstimationMode { ExactCylinder, ExactOperator, MonteCarlo };

struct VarianceProfile {
  int N = 0;
  std::vector<double> sigma2_n;  // sigma^2_{N,n}, n = 0..N (first entry 0)
  std::vector<double> col_var;   // Var(fbar_n)
  double sigma2 = 0.0;
  double sigma = 0.0;
  EstimationMode mode = EstimationMode::MonteCarlo;
  double sigma2_se = 0.0;           // MC only
  bool coboundary_suspect = false;  // sigma ~ 0
};

// Centering constants zeta_{omega,N}(f o T^n), exact on the aligned path
// (operator sweeps at a grid resolving f, the holes, and the partitions).
std::vector<double> centering_constants(const OpenSystem& sys,
                                        const OmegaPath& omega,
                                        long start_fiber, int N,
                                        const Observable& f,
                                        std::size_t base_k = 4096);

// Evaluates f o T^n - c_n on every sample point; centering is exact when the
// system admits it, Monte Carlo (column means) otherwise. Throws
// contract_error if the sample horizon disagrees with zeta's.
CenteredArray centered_observables(const Observable& f,
                                   const ConditionalMeasure& zeta,
                                   const ConditionalSample& points);

// sigma^2_{N,n} table. ExactCylinder streams the surviving cylinders
// (N <= 12, any piecewise-affine observable); ExactOperator uses grid sweeps
// (any horizon, piecewise-constant observables only -- affine pieces vary
// within cells and would be averaged away); MonteCarlo uses sample moments.
VarianceProfile variance_profile(const OpenSystem& sys, const OmegaPath& omega,
                                 long start_fiber, int N, const Observable& f,
                                 EstimationMode mode,
                                 const CenteredArray* mc_array = nullptr,
                                 std::size_t base_k = 4096);

// ---------------------------------------------------------------------------
// Asymptotic variance
// ---------------------------------------------------------------------------

struct SigmaInfinity {
  double sigma2 = 0.0;          // truncated series value
  double tail_bound = 0.0;      // geometric tail estimate beyond n_T
  double fitted_ratio = 0.0;    // fitted decay of |a_n|
  std::vector<double> autocov;  // mean |a_n| over the environment draws
};

// Sigma^2(f) = E_m[eta_inf(f~^2)] + 2 sum_n E_m[eta_inf(f~ . f~ o T^n)],
// truncated at n_T; the omega-average runs over `draws` seeded realizations.
// f is centered per fiber with eta_{omega,inf}(f) before use. Throws
// degenerate_error when the autocovariance does not decay (fit >= 1).
SigmaInfinity sigma_infinity(const OpenSystem& sys, const Observable& f,
                             int n_T, std::size_t draws = 16,
                             std::size_t k = 1024, std::uint64_t seed = 12);

// ---------------------------------------------------------------------------
// Normalized sums and the path process
// ---------------------------------------------------------------------------

// W_m = (row sum of the centered array) / sigma. Throws contract_error when
// sigma is not positive.
std::vector<double> normalized_sum(const CenteredArray& array,
                                   const VarianceProfile& profile);

// Cadlag step path W(t) = sigma^{-1} sum_n J_{alpha_n}(t) fbar_n with jump
// grid alpha_n = sigma^2_{N,n} / sigma^2_N.
class PathSample {
 public:
  PathSample(std::shared_ptr<const CenteredArray> array,
             const VarianceProfile& profile);

  const std::vector<double>& jump_grid() const { return alphas_; }
  // W(1) per sample point (equals normalized_sum)
  const std::vector<double>& terminal() const { return terminal_; }
  // W(t) per sample point. Includes term n iff t >= alpha_n, with a 1e-9 tie
  // tolerance so exact grid hits are not lost to rounding dust.
  std::vector<double> evaluate(double t) const;

 private:
  std::shared_ptr<const CenteredArray> array_;
  std::vector<double> alphas_;
  double sigma_;
  std::vector<double> terminal_;
};

// ---------------------------------------------------------------------------
// Functional correlation bound estimation
// ---------------------------------------------------------------------------

// Block structure of Theorem-A-style tests: times n_1 <= ... <= n_k split
// into consecutive blocks by 0 = l_0 < l_1 < ... < l_{p+1} = k. The test
// function is the product of all block coordinates (separately Lipschitz on
// bounded ranges), so the multi-measure term factorizes into per-block
// integrals.
struct FcbBlockSpec {
  std::vector<int> times;         // n_1..n_k
  std::vector<int> block_bounds;  // l_0..l_{p+1}
};

struct FcbEstimate {
  double lhs = 0.0;  // |E[G(x,..,x)] - prod_blocks E[G_i]|
  bool exact = false;
};

FcbEstimate fcb_gap_estimate(const Observable& f, const ConditionalMeasure& zeta,
                             const FcbBlockSpec& blocks);

struct FcbSweep {
  std::vector<int> gaps;
  std::vector<double> lhs;
  double fitted_r = 0.0;
  double residual = 0.0;
  bool degenerate = false;  // all values at the numerical floor
};

// g(x,y) = xy over blocks {i}, {i+gap}: the covariance sweep, averaged over
// every admissible base time i, with a log-linear fit of the decay rate.
FcbSweep fcb_gap_sweep(const Observable& f, const ConditionalMeasure& zeta,
                       const std::vector<int>& gaps);

// ---------------------------------------------------------------------------
// Distances to the standard normal
// ---------------------------------------------------------------------------

double normal_cdf(double x);
double normal_pdf(double x);
double normal_quantile(double p);  // Newton on the CDF

// One-sample Kolmogorov-Smirnov statistic against N(0,1).
double dist_kolmogorov(std::vector<double> sample);

// W1 distance to N(0,1): integral of |F_emp - Phi|, exact between order
// statistics via the Gaussian antiderivative.
double dist_wasserstein(std::vector<double> sample);

// Two-sample KS statistic and the Smirnov critical value at level alpha.
double ks_two_sample(std::vector<double> a, std::vector<double> b);
double ks_two_sample_critical(double alpha, std::size_t m, std::size_t n);

// ---------------------------------------------------------------------------
// Block-streamed CLT pipeline
// ---------------------------------------------------------------------------

struct CltRun {
  int N = 0;
  std::size_t M = 0;
  double sigma = 0.0;       // normalization used for W (exact profile)
  double sigma2_mc = 0.0;   // sample estimate of sigma^2_{omega,N}
  double sigma2_mc_se = 0.0;
  double d_k = 0.0;
  double d_w = 0.0;
  double d_k_se_floor = 0.0;
  std::vector<double> path_t;       // marginal check times
  std::vector<double> path_var;     // Var W(t)
  std::vector<double> path_var_se;  // batch-means errors
};

// Samples eta_{omega,N} sequentially in fixed blocks (deterministic for any
// thread count), centers with the exact constants, and accumulates W, the
// distances, and the path marginals in one pass.
CltRun run_clt(const OpenSystem& sys, const OmegaPath& omega,
               const Observable& f, int N, std::size_t M, std::uint64_t seed,
               unsigned threads = 1,
               const std::vector<double>& path_t = {0.25, 0.5, 0.75},
               std::size_t base_k = 4096);

}  // namespace roim

#endif
