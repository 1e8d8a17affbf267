#include "roim/system.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "roim/rng.hpp"

namespace roim {

namespace {

// Two-sided fiber index -> nonnegative counter, independent of horizon.
std::uint64_t zigzag(long t) {
  return t >= 0 ? 2ULL * static_cast<std::uint64_t>(t)
                : 2ULL * static_cast<std::uint64_t>(-(t + 1)) + 1ULL;
}

std::size_t weighted_pick(const std::vector<double>& w, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) {
    acc += w[i];
    if (u < acc) return i;
  }
  return w.empty() ? 0 : w.size() - 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// BranchMap
// ---------------------------------------------------------------------------

BranchMap::BranchMap(std::vector<Rat> breakpoints, std::vector<Rat> slopes,
                     std::vector<Rat> intercepts)
    : breakpoints_(std::move(breakpoints)) {
  if (breakpoints_.size() < 2 || slopes.size() != breakpoints_.size() - 1 ||
      intercepts.size() != slopes.size()) {
    throw config_error("branch map needs m+1 breakpoints and m coefficient pairs");
  }
  if (breakpoints_.front() != 0 || breakpoints_.back() != 1) {
    throw config_error("breakpoints must start at 0 and end at 1");
  }
  for (std::size_t i = 0; i + 1 < breakpoints_.size(); ++i) {
    if (!(breakpoints_[i] < breakpoints_[i + 1])) {
      throw config_error("breakpoints must be strictly increasing");
    }
  }
  for (std::size_t i = 0; i < slopes.size(); ++i) {
    Branch b{breakpoints_[i], breakpoints_[i + 1], slopes[i], intercepts[i]};
    if (b.slope == 0) throw config_error("zero slope branch");
    if (abs(b.slope) < 1) {
      throw config_error("slope magnitude below 1 on branch " +
                         std::to_string(i));
    }
    Rat ya = b.slope * b.lo + b.intercept;
    Rat yb = b.slope * b.hi + b.intercept;
    Rat im_lo = std::min(ya, yb);
    Rat im_hi = std::max(ya, yb);
    if (im_lo < 0 || im_hi > 1) {
      throw config_error("branch image leaves [0,1] on branch " +
                         std::to_string(i));
    }
    branches_.push_back(std::move(b));
  }
}

std::size_t BranchMap::branch_index(const Rat& x) const {
  if (x < 0 || x >= 1) throw contract_error("point outside [0,1)");
  // last breakpoint <= x
  std::size_t lo = 0, hi = branches_.size() - 1;
  while (lo < hi) {
    std::size_t mid = (lo + hi + 1) / 2;
    if (breakpoints_[mid] <= x)
      lo = mid;
    else
      hi = mid - 1;
  }
  return lo;
}

std::size_t BranchMap::branch_index(double x) const {
  if (!(x >= 0.0 && x < 1.0)) throw contract_error("point outside [0,1)");
  std::size_t lo = 0, hi = branches_.size() - 1;
  while (lo < hi) {
    std::size_t mid = (lo + hi + 1) / 2;
    if (to_double(breakpoints_[mid]) <= x)
      lo = mid;
    else
      hi = mid - 1;
  }
  return lo;
}

Rat BranchMap::apply(const Rat& x) const {
  const Branch& b = branches_[branch_index(x)];
  return b.slope * x + b.intercept;
}

double BranchMap::apply(double x) const {
  const Branch& b = branches_[branch_index(x)];
  return to_double(b.slope) * x + to_double(b.intercept);
}

bool BranchMap::full_branch() const {
  for (const Branch& b : branches_) {
    Rat ya = b.slope * b.lo + b.intercept;
    Rat yb = b.slope * b.hi + b.intercept;
    if (std::min(ya, yb) != 0 || std::max(ya, yb) != 1) return false;
  }
  return true;
}

Rat BranchMap::min_slope_magnitude() const {
  Rat m = abs(branches_[0].slope);
  for (const Branch& b : branches_) m = std::min(m, Rat(abs(b.slope)));
  return m;
}

Rat BranchMap::max_slope_magnitude() const {
  Rat m = abs(branches_[0].slope);
  for (const Branch& b : branches_) m = std::max(m, Rat(abs(b.slope)));
  return m;
}

// ---------------------------------------------------------------------------
// HoleSpec
// ---------------------------------------------------------------------------

HoleSpec::HoleSpec(std::vector<std::pair<Rat, Rat>> intervals, bool allow_empty)
    : intervals_(std::move(intervals)) {
  std::sort(intervals_.begin(), intervals_.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  Rat total = 0;
  for (std::size_t i = 0; i < intervals_.size(); ++i) {
    const auto& [lo, hi] = intervals_[i];
    if (!(lo >= 0 && lo < hi && hi <= 1)) {
      throw config_error("hole interval must satisfy 0 <= lo < hi <= 1");
    }
    if (i > 0 && intervals_[i - 1].second > lo) {
      throw config_error("hole intervals must be pairwise disjoint");
    }
    total += hi - lo;
  }
  if (!allow_empty && (total <= 0 || total >= 1)) {
    throw config_error("hole must have total length strictly between 0 and 1");
  }
}

bool HoleSpec::contains(const Rat& x) const {
  for (const auto& [lo, hi] : intervals_) {
    if (x >= lo && x < hi) return true;
    if (x < lo) return false;
  }
  return false;
}

bool HoleSpec::contains(double x) const {
  for (const auto& [lo, hi] : intervals_) {
    if (x >= to_double(lo) && x < to_double(hi)) return true;
    if (x < to_double(lo)) return false;
  }
  return false;
}

Rat HoleSpec::total_length() const {
  Rat total = 0;
  for (const auto& [lo, hi] : intervals_) total += hi - lo;
  return total;
}

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

Environment Environment::iid(std::vector<double> weights, std::uint64_t seed) {
  Environment e;
  e.mode_ = EnvironmentMode::Iid;
  double sum = 0;
  for (double w : weights) {
    if (w < 0) throw config_error("iid weights must be nonnegative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw config_error("iid weights must sum to 1");
  }
  e.weights_ = std::move(weights);
  e.seed_ = seed;
  return e;
}

Environment Environment::markov(std::vector<std::vector<double>> matrix,
                                std::uint64_t seed) {
  Environment e;
  e.mode_ = EnvironmentMode::Markov;
  const std::size_t n = matrix.size();
  for (const auto& row : matrix) {
    if (row.size() != n) throw config_error("markov matrix must be square");
    double sum = 0;
    for (double p : row) {
      if (p < 0) throw config_error("markov entries must be nonnegative");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw config_error("markov matrix must be row-stochastic");
    }
  }
  e.matrix_ = std::move(matrix);
  e.seed_ = seed;
  return e;
}

Environment Environment::explicit_sequence(std::vector<std::size_t> symbols,
                                           long origin, std::uint64_t seed) {
  if (symbols.empty()) throw config_error("explicit sequence must be nonempty");
  Environment e;
  e.mode_ = EnvironmentMode::ExplicitSequence;
  e.sequence_ = std::move(symbols);
  e.origin_ = origin;
  e.seed_ = seed;
  return e;
}

std::size_t Environment::alphabet_size() const {
  switch (mode_) {
    case EnvironmentMode::Iid:
      return weights_.size();
    case EnvironmentMode::Markov:
      return matrix_.size();
    case EnvironmentMode::ExplicitSequence: {
      std::size_t m = 0;
      for (std::size_t s : sequence_) m = std::max(m, s + 1);
      return m;
    }
  }
  return 0;
}

std::vector<double> Environment::stationary() const {
  switch (mode_) {
    case EnvironmentMode::Iid:
      return weights_;
    case EnvironmentMode::Markov: {
      const std::size_t n = matrix_.size();
      std::vector<double> v(n, 1.0 / static_cast<double>(n)), w(n);
      for (int it = 0; it < 500; ++it) {
        std::fill(w.begin(), w.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) w[j] += v[i] * matrix_[i][j];
        double sum = 0;
        for (double x : w) sum += x;
        for (double& x : w) x /= sum;
        v.swap(w);
      }
      return v;
    }
    case EnvironmentMode::ExplicitSequence: {
      std::vector<double> freq(alphabet_size(), 0.0);
      for (std::size_t s : sequence_) freq[s] += 1.0;
      for (double& f : freq) f /= static_cast<double>(sequence_.size());
      return freq;
    }
  }
  return {};
}

OmegaPath::OmegaPath(const Environment& env, std::uint64_t stream, long horizon)
    : horizon_(horizon), stream_(stream) {
  if (horizon < 0) throw config_error("horizon must be nonnegative");
  symbols_.resize(static_cast<std::size_t>(2 * horizon + 1));
  switch (env.mode()) {
    case EnvironmentMode::Iid: {
      for (long t = -horizon; t <= horizon; ++t) {
        double u = rng::uniform(env.seed(), stream, zigzag(t));
        symbols_[static_cast<std::size_t>(t + horizon)] =
            weighted_pick(env.weights(), u);
      }
      break;
    }
    case EnvironmentMode::Markov: {
      std::vector<double> init = env.stationary();
      std::size_t prev = 0;
      for (long t = -horizon; t <= horizon; ++t) {
        double u = rng::uniform(env.seed(), stream, zigzag(t));
        const std::vector<double>& row =
            (t == -horizon) ? init : env.matrix()[prev];
        prev = weighted_pick(row, u);
        symbols_[static_cast<std::size_t>(t + horizon)] = prev;
      }
      break;
    }
    case EnvironmentMode::ExplicitSequence: {
      const long origin = env.sequence_origin();
      const long len = static_cast<long>(env.sequence().size());
      if (origin > -horizon || origin + len <= horizon) {
        throw config_error(
            "explicit sequence does not cover the requested horizon");
      }
      for (long t = -horizon; t <= horizon; ++t) {
        symbols_[static_cast<std::size_t>(t + horizon)] =
            env.sequence()[static_cast<std::size_t>(t - origin)];
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// OpenSystem
// ---------------------------------------------------------------------------

OpenSystem::OpenSystem(std::vector<BranchMap> maps, std::vector<HoleSpec> holes,
                       Environment env, std::string name)
    : maps_(std::move(maps)),
      holes_(std::move(holes)),
      env_(std::move(env)),
      name_(std::move(name)) {
  if (maps_.empty() || maps_.size() != holes_.size()) {
    throw config_error("every symbol needs both a map and a hole");
  }
  if (env_.alphabet_size() > maps_.size()) {
    throw config_error("environment alphabet exceeds system alphabet");
  }
  full_branch_ = true;
  for (const BranchMap& m : maps_) full_branch_ = full_branch_ && m.full_branch();

  // Surjectivity of each fiber map (Condition 1).
  for (const BranchMap& m : maps_) {
    std::vector<std::pair<Rat, Rat>> images;
    for (std::size_t i = 0; i < m.branch_count(); ++i) {
      const Branch& b = m.branch(i);
      Rat ya = b.slope * b.lo + b.intercept;
      Rat yb = b.slope * b.hi + b.intercept;
      images.emplace_back(std::min(ya, yb), std::max(ya, yb));
    }
    std::sort(images.begin(), images.end());
    Rat covered = 0;
    for (const auto& [lo, hi] : images) {
      if (lo > covered) break;
      covered = std::max(covered, hi);
    }
    if (covered < 1) throw config_error("fiber map is not surjective onto [0,1]");
  }

  hole_aligned_ = true;
  for (std::size_t s = 0; s < maps_.size(); ++s) {
    const auto& bps = maps_[s].breakpoints();
    for (const auto& [lo, hi] : holes_[s].intervals()) {
      bool lo_ok = std::find(bps.begin(), bps.end(), lo) != bps.end();
      bool hi_ok = std::find(bps.begin(), bps.end(), hi) != bps.end();
      if (!lo_ok || !hi_ok) hole_aligned_ = false;
    }
  }
  if (hole_aligned_) {
    allowed_.resize(maps_.size());
    for (std::size_t s = 0; s < maps_.size(); ++s) {
      for (std::size_t i = 0; i < maps_[s].branch_count(); ++i) {
        const Branch& b = maps_[s].branch(i);
        // aligned holes contain a cell entirely or not at all; probe the left
        // endpoint
        if (!holes_[s].contains(b.lo)) allowed_[s].push_back(i);
      }
    }
  }
}

const BranchMap& OpenSystem::map(std::size_t symbol) const {
  if (symbol >= maps_.size())
    throw config_error("invalid symbol " + std::to_string(symbol));
  return maps_[symbol];
}

const HoleSpec& OpenSystem::hole(std::size_t symbol) const {
  if (symbol >= holes_.size())
    throw config_error("invalid symbol " + std::to_string(symbol));
  return holes_[symbol];
}

Rat OpenSystem::kappa1() const {
  Rat k = maps_[0].min_slope_magnitude();
  for (const BranchMap& m : maps_) k = std::min(k, m.min_slope_magnitude());
  return k;
}

Rat OpenSystem::kappa2() const {
  Rat k = maps_[0].max_slope_magnitude();
  for (const BranchMap& m : maps_) k = std::max(k, m.max_slope_magnitude());
  return k;
}

const std::vector<std::size_t>& OpenSystem::allowed_branches(
    std::size_t symbol) const {
  if (!hole_aligned_) {
    throw unsupported_system_error(
        "allowed_branches requires a hole-aligned system");
  }
  if (symbol >= allowed_.size())
    throw config_error("invalid symbol " + std::to_string(symbol));
  return allowed_[symbol];
}

// ---------------------------------------------------------------------------
// Orbits and survival
// ---------------------------------------------------------------------------

Rat step(const OpenSystem& sys, std::size_t symbol, const Rat& x) {
  Rat y = sys.map(symbol).apply(x);
  if (y == 1) y = 0;  // closure endpoint folds back to the orbit space [0,1)
  return y;
}

double step(const OpenSystem& sys, std::size_t symbol, double x) {
  double y = sys.map(symbol).apply(x);
  if (y >= 1.0) y = 0.0;
  return y;
}

std::vector<Rat> orbit(const OpenSystem& sys, const OmegaPath& omega,
                       const Rat& x, int n) {
  if (n < 0) throw contract_error("orbit length must be nonnegative");
  std::vector<Rat> out;
  out.reserve(static_cast<std::size_t>(n) + 1);
  out.push_back(x);
  Rat y = x;
  for (int t = 0; t < n; ++t) {
    y = step(sys, omega.symbol(t), y);
    out.push_back(y);
  }
  return out;
}

std::vector<double> orbit(const OpenSystem& sys, const OmegaPath& omega,
                          double x, int n) {
  if (n < 0) throw contract_error("orbit length must be nonnegative");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n) + 1);
  out.push_back(x);
  double y = x;
  for (int t = 0; t < n; ++t) {
    y = step(sys, omega.symbol(t), y);
    out.push_back(y);
  }
  return out;
}

SurvivalResult survives(const OpenSystem& sys, const OmegaPath& omega,
                        const Rat& x, int N, long start_fiber) {
  Rat y = x;
  for (int j = 0; j <= N; ++j) {
    std::size_t s = omega.symbol(start_fiber + j);
    if (sys.hole(s).contains(y)) return {false, j};
    if (j < N) y = step(sys, s, y);
  }
  return {true, std::nullopt};
}

SurvivalResult survives(const OpenSystem& sys, const OmegaPath& omega,
                        double x, int N, long start_fiber) {
  double y = x;
  for (int j = 0; j <= N; ++j) {
    std::size_t s = omega.symbol(start_fiber + j);
    if (sys.hole(s).contains(y)) return {false, j};
    if (j < N) y = step(sys, s, y);
  }
  return {true, std::nullopt};
}

// ---------------------------------------------------------------------------
// Cylinder enumeration
// ---------------------------------------------------------------------------

namespace {

struct CylinderDfs {
  const OpenSystem& sys;
  const OmegaPath& omega;
  long start_fiber;
  int depth;
  const CylinderVisitor& visit;
  std::vector<std::uint8_t> word;
  // affine[t] = (A,B) with T^t = A x + B on the current cylinder
  std::vector<std::pair<Rat, Rat>> affine;

  void run(const Rat& lo, const Rat& hi, int t) {
    if (t == depth) {
      visit(lo, hi, word, affine);
      return;
    }
    std::size_t sym = omega.symbol(start_fiber + t);
    const BranchMap& m = sys.map(sym);
    const auto& [A, B] = affine.back();
    for (std::size_t a : sys.allowed_branches(sym)) {
      const Branch& br = m.branch(a);
      // pull the branch cell back through T^t
      Rat u = (br.lo - B) / A;
      Rat v = (br.hi - B) / A;
      if (u > v) std::swap(u, v);
      u = std::max(u, lo);
      v = std::min(v, hi);
      if (!(u < v)) continue;
      word.push_back(static_cast<std::uint8_t>(a));
      affine.emplace_back(br.slope * A, br.slope * B + br.intercept);
      run(u, v, t + 1);
      affine.pop_back();
      word.pop_back();
    }
  }
};

}  // namespace

void for_each_surviving_cylinder(const OpenSystem& sys, const OmegaPath& omega,
                                 int depth, const CylinderVisitor& visit,
                                 long start_fiber) {
  if (depth < 1) throw contract_error("cylinder depth must be >= 1");
  if (!(sys.full_branch() && sys.hole_aligned())) {
    throw unsupported_system_error(
        "exact cylinder enumeration requires a full-branch, affine, "
        "hole-aligned system");
  }
  CylinderDfs dfs{sys, omega, start_fiber, depth, visit, {}, {}};
  dfs.word.reserve(static_cast<std::size_t>(depth));
  dfs.affine.reserve(static_cast<std::size_t>(depth) + 1);
  dfs.affine.emplace_back(Rat(1), Rat(0));
  dfs.run(Rat(0), Rat(1), 0);
}

CylinderSet surviving_cylinders(const OpenSystem& sys, const OmegaPath& omega,
                                int depth, long start_fiber) {
  CylinderSet out;
  out.depth = depth;
  out.total_length = 0;
  for_each_surviving_cylinder(
      sys, omega, depth,
      [&](const Rat& lo, const Rat& hi, const std::vector<std::uint8_t>& word,
          const std::vector<std::pair<Rat, Rat>>&) {
        out.intervals.push_back({lo, hi, word});
        out.total_length += hi - lo;
      },
      start_fiber);
  return out;
}

// ---------------------------------------------------------------------------
// Survival measure
// ---------------------------------------------------------------------------

namespace {

// Pieces of [lo,hi) with the fiber hole removed.
void subtract_hole(const HoleSpec& hole, const Rat& lo, const Rat& hi,
                   std::vector<std::pair<Rat, Rat>>& out) {
  Rat cur = lo;
  for (const auto& [hlo, hhi] : hole.intervals()) {
    if (hhi <= cur) continue;
    if (hlo >= hi) break;
    if (hlo > cur) out.emplace_back(cur, std::min(hlo, hi));
    cur = std::max(cur, hhi);
    if (cur >= hi) break;
  }
  if (cur < hi) out.emplace_back(cur, hi);
}

}  // namespace

Rat survival_overlap(const OpenSystem& sys, const OmegaPath& omega,
                     long start_fiber, const Rat& lo, const Rat& hi, int r,
                     std::map<std::pair<long, int>, Rat>* full_cache) {
  if (!(lo < hi)) return Rat(0);
  if (r < 0) return hi - lo;
  const bool full = (lo == 0 && hi == 1);
  if (full && full_cache) {
    auto it = full_cache->find({start_fiber, r});
    if (it != full_cache->end()) return it->second;
  }
  std::size_t sym = omega.symbol(start_fiber);
  const BranchMap& m = sys.map(sym);
  const HoleSpec& hole = sys.hole(sym);
  Rat total = 0;
  for (std::size_t i = 0; i < m.branch_count(); ++i) {
    const Branch& br = m.branch(i);
    Rat u = std::max(lo, br.lo);
    Rat v = std::min(hi, br.hi);
    if (!(u < v)) continue;
    std::vector<std::pair<Rat, Rat>> alive;
    subtract_hole(hole, u, v, alive);
    for (const auto& [plo, phi] : alive) {
      Rat ya = br.slope * plo + br.intercept;
      Rat yb = br.slope * phi + br.intercept;
      if (ya > yb) std::swap(ya, yb);
      Rat sub = survival_overlap(sys, omega, start_fiber + 1, ya, yb, r - 1,
                                 full_cache);
      total += sub / abs(br.slope);
    }
  }
  if (full && full_cache) (*full_cache)[{start_fiber, r}] = total;
  return total;
}

Rat surviving_mass(const OpenSystem& sys, const OmegaPath& omega,
                   long start_fiber, int r,
                   std::map<std::pair<long, int>, Rat>* full_cache) {
  return survival_overlap(sys, omega, start_fiber, Rat(0), Rat(1), r,
                          full_cache);
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

namespace {

BranchMap quadrupling_map() {
  return BranchMap({rat(0), rat(1, 4), rat(1, 2), rat(3, 4), rat(1)},
                   {rat(4), rat(4), rat(4), rat(4)},
                   {rat(0), rat(-1), rat(-2), rat(-3)});
}

}  // namespace

OpenSystem preset_quadrupling_random_hole(std::uint64_t seed) {
  std::vector<BranchMap> maps;
  std::vector<HoleSpec> holes;
  for (long s = 0; s < 4; ++s) {
    maps.push_back(quadrupling_map());
    holes.push_back(HoleSpec({{rat(s, 4), rat(s + 1, 4)}}));
  }
  Environment env = Environment::iid({0.25, 0.25, 0.25, 0.25}, seed);
  return OpenSystem(std::move(maps), std::move(holes), std::move(env),
                    "quadrupling-random-hole");
}

OpenSystem preset_quadrupling_double_hole(std::uint64_t seed) {
  std::vector<BranchMap> maps;
  std::vector<HoleSpec> holes;
  for (long s = 0; s < 4; ++s) {
    maps.push_back(quadrupling_map());
    long s2 = (s + 1) % 4;
    holes.push_back(HoleSpec(
        {{rat(s, 4), rat(s + 1, 4)}, {rat(s2, 4), rat(s2 + 1, 4)}}));
  }
  Environment env = Environment::iid({0.25, 0.25, 0.25, 0.25}, seed);
  return OpenSystem(std::move(maps), std::move(holes), std::move(env),
                    "quadrupling-double-hole");
}

OpenSystem preset_asymmetric_two_slope(std::uint64_t seed) {
  BranchMap m({rat(0), rat(1, 2), rat(3, 4), rat(1)}, {rat(2), rat(4), rat(4)},
              {rat(0), rat(-2), rat(-3)});
  std::vector<BranchMap> maps(3, m);
  std::vector<HoleSpec> holes;
  holes.push_back(HoleSpec({{rat(0), rat(1, 2)}}));
  holes.push_back(HoleSpec({{rat(1, 2), rat(3, 4)}}));
  holes.push_back(HoleSpec({{rat(3, 4), rat(1)}}));
  Environment env =
      Environment::iid({1.0 / 3.0, 1.0 / 3.0, 1.0 - 2.0 / 3.0}, seed);
  return OpenSystem(std::move(maps), std::move(holes), std::move(env),
                    "asymmetric-two-slope");
}

OpenSystem system_from_preset(const std::string& name, std::uint64_t seed) {
  if (name == "quadrupling-random-hole")
    return preset_quadrupling_random_hole(seed);
  if (name == "quadrupling-double-hole")
    return preset_quadrupling_double_hole(seed);
  if (name == "asymmetric-two-slope") return preset_asymmetric_two_slope(seed);
  throw config_error("unknown preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// JSON I/O
// ---------------------------------------------------------------------------

namespace {

std::vector<Rat> parse_rat_list(const nlohmann::json& arr) {
  std::vector<Rat> out;
  for (const auto& v : arr) out.push_back(parse_rational(v.get<std::string>()));
  return out;
}

}  // namespace

OpenSystem system_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw config_error(std::string("system file is not valid JSON: ") +
                       e.what());
  }
  if (j.contains("preset")) {
    std::uint64_t seed = j.value("seed", 0ULL);
    return system_from_preset(j["preset"].get<std::string>(), seed);
  }
  try {
    std::size_t alphabet = j.at("alphabet").get<std::size_t>();
    std::vector<BranchMap> maps;
    for (const auto& b : j.at("branches")) {
      maps.emplace_back(parse_rat_list(b.at("breakpoints")),
                        parse_rat_list(b.at("slopes")),
                        parse_rat_list(b.at("intercepts")));
    }
    std::vector<HoleSpec> holes;
    for (const auto& h : j.at("holes")) {
      std::vector<std::pair<Rat, Rat>> iv;
      for (const auto& pair : h) {
        iv.emplace_back(parse_rational(pair.at(0).get<std::string>()),
                        parse_rational(pair.at(1).get<std::string>()));
      }
      holes.emplace_back(std::move(iv));
    }
    if (maps.size() != alphabet || holes.size() != alphabet) {
      throw config_error("alphabet size does not match branches/holes");
    }
    const auto& envj = j.at("environment");
    std::string mode = envj.at("mode").get<std::string>();
    std::uint64_t seed = envj.value("seed", 0ULL);
    Environment env = Environment::iid({1.0}, 0);
    if (mode == "iid") {
      env = Environment::iid(envj.at("weights").get<std::vector<double>>(),
                             seed);
    } else if (mode == "markov") {
      env = Environment::markov(
          envj.at("matrix").get<std::vector<std::vector<double>>>(), seed);
    } else if (mode == "explicit") {
      env = Environment::explicit_sequence(
          envj.at("sequence").get<std::vector<std::size_t>>(),
          envj.value("origin", 0L), seed);
    } else {
      throw config_error("unknown environment mode '" + mode + "'");
    }
    return OpenSystem(std::move(maps), std::move(holes), std::move(env),
                      j.value("name", std::string{}));
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("malformed system definition: ") + e.what());
  }
}

OpenSystem load_system_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open system file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return system_from_json_text(ss.str());
}

}  // namespace roim
