#ifndef ROIM_SYSTEM_HPP
#define ROIM_SYSTEM_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "roim/rational.hpp"

namespace roim {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct unsupported_system_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct degenerate_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct contract_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct convergence_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Branch maps
// ---------------------------------------------------------------------------

// One affine branch T(x) = slope*x + intercept on [lo, hi).
struct Branch {
  Rat lo;
  Rat hi;
  Rat slope;      // |slope| >= kappa_1 > 1
  Rat intercept;
  bool increasing() const { return slope > 0; }
};

// Piecewise-affine expanding map of [0,1). Branch boundaries belong to the
// right-hand branch, so branch assignment is total on [0,1) and derivatives
// follow the left-derivative convention at the interior breakpoints.
class BranchMap {
 public:
  // breakpoints: 0 = b0 < b1 < ... < bm = 1, one (slope, intercept) pair per
  // cell. Throws config_error if a slope magnitude is <= 1 or an image leaves
  // [0,1].
  BranchMap(std::vector<Rat> breakpoints, std::vector<Rat> slopes,
            std::vector<Rat> intercepts);

  std::size_t branch_count() const { return branches_.size(); }
  const Branch& branch(std::size_t i) const { return branches_[i]; }
  const std::vector<Rat>& breakpoints() const { return breakpoints_; }

  // Index of the branch whose half-open cell contains x.
  std::size_t branch_index(const Rat& x) const;
  std::size_t branch_index(double x) const;

  Rat apply(const Rat& x) const;
  double apply(double x) const;

  // True when every branch maps its cell onto all of [0,1).
  bool full_branch() const;

  // min / max of |slope| over branches.
  Rat min_slope_magnitude() const;
  Rat max_slope_magnitude() const;

 private:
  std::vector<Rat> breakpoints_;
  std::vector<Branch> branches_;
};

// ---------------------------------------------------------------------------
// Holes
// ---------------------------------------------------------------------------

// Finite union of disjoint half-open subintervals of [0,1) with rational
// endpoints; total length strictly between 0 and 1.
class HoleSpec {
 public:
  HoleSpec(std::vector<std::pair<Rat, Rat>> intervals, bool allow_empty = false);

  bool contains(const Rat& x) const;
  bool contains(double x) const;
  bool empty() const { return intervals_.empty(); }
  Rat total_length() const;
  std::size_t component_count() const { return intervals_.size(); }
  const std::vector<std::pair<Rat, Rat>>& intervals() const {
    return intervals_;
  }

  // An empty hole models the closed system; it is only constructible through
  // the explicit bypass flag.
  static HoleSpec none() { return HoleSpec({}, true); }

 private:
  std::vector<std::pair<Rat, Rat>> intervals_;  // sorted, disjoint
};

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

enum class EnvironmentMode { ExplicitSequence, Iid, Markov };

// Distribution of the driving symbol sequence. A realization (OmegaPath) is
// materialized lazily from (seed, stream) and is two-sided indexable up to a
// declared horizon, which the pullback constructions in spectral need.
class Environment {
 public:
  static Environment iid(std::vector<double> weights, std::uint64_t seed);
  static Environment markov(std::vector<std::vector<double>> matrix,
                            std::uint64_t seed);
  static Environment explicit_sequence(std::vector<std::size_t> symbols,
                                       long origin, std::uint64_t seed);

  EnvironmentMode mode() const { return mode_; }
  std::size_t alphabet_size() const;
  std::uint64_t seed() const { return seed_; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<std::vector<double>>& matrix() const { return matrix_; }
  const std::vector<std::size_t>& sequence() const { return sequence_; }
  long sequence_origin() const { return origin_; }

  // Stationary symbol distribution (weights for iid, left eigenvector for
  // markov, empirical frequencies for explicit sequences).
  std::vector<double> stationary() const;

 private:
  Environment() = default;
  EnvironmentMode mode_ = EnvironmentMode::Iid;
  std::vector<double> weights_;
  std::vector<std::vector<double>> matrix_;
  std::vector<std::size_t> sequence_;
  long origin_ = 0;
  std::uint64_t seed_ = 0;
};

// One realization omega: symbols for fiber indices in [-horizon, horizon].
class OmegaPath {
 public:
  OmegaPath(const Environment& env, std::uint64_t stream, long horizon);

  std::size_t symbol(long t) const {
    if (t < -horizon_ || t > horizon_)
      throw contract_error("fiber index " + std::to_string(t) +
                           " outside realization horizon " +
                           std::to_string(horizon_));
    return symbols_[static_cast<std::size_t>(t + horizon_)];
  }
  long horizon() const { return horizon_; }
  std::uint64_t stream() const { return stream_; }

 private:
  long horizon_;
  std::uint64_t stream_;
  std::vector<std::size_t> symbols_;
};

// ---------------------------------------------------------------------------
// Open system
// ---------------------------------------------------------------------------

class OpenSystem {
 public:
  OpenSystem(std::vector<BranchMap> maps, std::vector<HoleSpec> holes,
             Environment env, std::string name = "");

  std::size_t alphabet_size() const { return maps_.size(); }
  const BranchMap& map(std::size_t symbol) const;
  const HoleSpec& hole(std::size_t symbol) const;
  const Environment& environment() const { return env_; }
  const std::string& name() const { return name_; }

  bool full_branch() const { return full_branch_; }
  bool affine() const { return true; }  // only affine branches representable
  bool hole_aligned() const { return hole_aligned_; }

  // Uniform expansion bounds over the whole family.
  Rat kappa1() const;
  Rat kappa2() const;

  OmegaPath realize(std::uint64_t stream, long horizon) const {
    return OmegaPath(env_, stream, horizon);
  }

  // Branch cells of `symbol` that do not meet its hole. Only meaningful on
  // hole-aligned systems, where each cell is either inside the hole or
  // disjoint from it.
  const std::vector<std::size_t>& allowed_branches(std::size_t symbol) const;

 private:
  std::vector<BranchMap> maps_;
  std::vector<HoleSpec> holes_;
  Environment env_;
  std::string name_;
  bool full_branch_ = false;
  bool hole_aligned_ = false;
  std::vector<std::vector<std::size_t>> allowed_;
};

// ---------------------------------------------------------------------------
// Cylinders
// ---------------------------------------------------------------------------

struct CylinderInterval {
  Rat lo;
  Rat hi;
  std::vector<std::uint8_t> word;  // branch digits a_0 .. a_{n-1}
};

// The surviving depth-n monotonicity cells: every element lies inside
// X_{omega,n-1}. Intervals are half-open [lo, hi) for orientation-preserving
// systems.
struct CylinderSet {
  int depth = 0;
  std::vector<CylinderInterval> intervals;
  Rat total_length;
  std::size_t count() const { return intervals.size(); }
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// T_omega(x) for the branch containing x.
Rat step(const OpenSystem& sys, std::size_t symbol, const Rat& x);
double step(const OpenSystem& sys, std::size_t symbol, double x);

// (x, T x, T^2 x, ..., T^n x) along omega starting at fiber 0.
std::vector<Rat> orbit(const OpenSystem& sys, const OmegaPath& omega,
                       const Rat& x, int n);
std::vector<double> orbit(const OpenSystem& sys, const OmegaPath& omega,
                          double x, int n);

struct SurvivalResult {
  bool survived;
  std::optional<int> escape_time;
};

// Whether the orbit of x avoids every hole at steps 0..N, i.e. x lies in
// X_{omega,N}; escape_time is the first j with T^j(x) in the fiber-j hole.
SurvivalResult survives(const OpenSystem& sys, const OmegaPath& omega,
                        const Rat& x, int N, long start_fiber = 0);
SurvivalResult survives(const OpenSystem& sys, const OmegaPath& omega,
                        double x, int N, long start_fiber = 0);

// Exact enumeration of the surviving depth-n cells. Requires a full-branch,
// affine, hole-aligned system; throws unsupported_system_error otherwise.
CylinderSet surviving_cylinders(const OpenSystem& sys, const OmegaPath& omega,
                                int depth, long start_fiber = 0);

// Streaming form of the same enumeration: visit(lo, hi, word, affine_by_depth)
// is called once per surviving cylinder, where affine_by_depth[t] = (A_t, B_t)
// gives T^t restricted to the cylinder as y = A_t x + B_t for t = 0..depth.
// Avoids materializing 3^depth intervals.
using CylinderVisitor = std::function<void(
    const Rat& lo, const Rat& hi, const std::vector<std::uint8_t>& word,
    const std::vector<std::pair<Rat, Rat>>& affine_by_depth)>;
void for_each_surviving_cylinder(const OpenSystem& sys, const OmegaPath& omega,
                                 int depth, const CylinderVisitor& visit,
                                 long start_fiber = 0);

// Leb([lo,hi) ∩ X_{sigma^m omega, r}), exact. r = -1 means no constraint.
// Full-interval values are memoized per (start_fiber, r) in the cache the
// caller supplies (key = r).
Rat survival_overlap(const OpenSystem& sys, const OmegaPath& omega,
                     long start_fiber, const Rat& lo, const Rat& hi, int r,
                     std::map<std::pair<long, int>, Rat>* full_cache = nullptr);

// Leb(X_{sigma^m omega, r}), exact.
Rat surviving_mass(const OpenSystem& sys, const OmegaPath& omega,
                   long start_fiber, int r,
                   std::map<std::pair<long, int>, Rat>* full_cache = nullptr);

// ---------------------------------------------------------------------------
// Presets and serialization
// ---------------------------------------------------------------------------

// The quadrupling map 4x mod 1 with alphabet {0,1,2,3}, partition into
// quarters, hole I_{omega_0} = [omega_0/4, (omega_0+1)/4), iid uniform
// environment.
OpenSystem preset_quadrupling_random_hole(std::uint64_t seed);

// Same map, hole doubled to I_{s} ∪ I_{s+1 mod 4}.
OpenSystem preset_quadrupling_double_hole(std::uint64_t seed);

// Full-branch three-cell variant with slopes (2,4,4) and per-symbol one-cell
// holes; phi is nonconstant here.
OpenSystem preset_asymmetric_two_slope(std::uint64_t seed);

// JSON system definition: {alphabet, branches:[{breakpoints,slopes,
// intercepts}], holes:[[["p/q","p/q"],...]], environment:{mode,...,seed}}.
OpenSystem load_system_json(const std::string& path);
OpenSystem system_from_json_text(const std::string& text);
OpenSystem system_from_preset(const std::string& name, std::uint64_t seed);

}  // namespace roim

#endif
