#include "roim/system.hpp"

#include <cmath>
#include <cstdint>

#include "doctest.h"
#include "roim/rng.hpp"

using namespace roim;

namespace {

// --- test oracles -----------------------------------------------------------

// Base-4 digit-shift oracle for the quadrupling map: T^n(x) = frac(4^n x),
// computed directly in exact arithmetic (no step iteration).
Rat quadrupling_orbit_oracle(const Rat& x, int n) {
  Rat y = x;
  mpz_class four_n;
  mpz_ui_pow_ui(four_n.get_mpz_t(), 4, static_cast<unsigned long>(n));
  y = x * Rat(four_n);
  mpz_class fl;
  mpz_fdiv_q(fl.get_mpz_t(), y.get_num_mpz_t(), y.get_den_mpz_t());
  return y - Rat(fl);
}

// n-th base-4 digit of x.
int base4_digit(const Rat& x, int n) {
  Rat shifted = quadrupling_orbit_oracle(x, n);
  return static_cast<int>(floor_long(shifted * 4));
}

OpenSystem quadrupling_with_sequence(std::vector<std::size_t> symbols,
                                     long horizon) {
  std::vector<BranchMap> maps;
  std::vector<HoleSpec> holes;
  for (long s = 0; s < 4; ++s) {
    maps.emplace_back(
        std::vector<Rat>{rat(0), rat(1, 4), rat(1, 2), rat(3, 4), rat(1)},
        std::vector<Rat>{rat(4), rat(4), rat(4), rat(4)},
        std::vector<Rat>{rat(0), rat(-1), rat(-2), rat(-3)});
    holes.emplace_back(
        std::vector<std::pair<Rat, Rat>>{{rat(s, 4), rat(s + 1, 4)}});
  }
  // tile the pattern over [-horizon, horizon] with symbol(0) = symbols[0]
  const long L = static_cast<long>(symbols.size());
  const long origin = -((horizon + 2 + L - 1) / L) * L;
  std::vector<std::size_t> padded;
  while (static_cast<long>(padded.size()) + origin <= horizon + 2) {
    for (std::size_t s : symbols) padded.push_back(s);
  }
  Environment env = Environment::explicit_sequence(std::move(padded), origin, 7);
  return OpenSystem(std::move(maps), std::move(holes), std::move(env));
}

}  // namespace

TEST_CASE("branch map validation") {
  CHECK_THROWS_AS(BranchMap({rat(0), rat(1, 2)}, {rat(2)}, {rat(0)}),
                  config_error);  // breakpoints must end at 1
  CHECK_THROWS_AS(BranchMap({rat(0), rat(1, 2), rat(1)}, {rat(2), rat(3)},
                            {rat(0), rat(0)}),
                  config_error);  // second branch image leaves [0,1]
  CHECK_THROWS_AS(
      BranchMap({rat(0), rat(1)}, {rat(1, 2)}, {rat(0)}),
      config_error);  // slope magnitude below 1
  BranchMap ok({rat(0), rat(1, 2), rat(1)}, {rat(2), rat(2)},
               {rat(0), rat(-1)});
  CHECK(ok.full_branch());
  CHECK(ok.min_slope_magnitude() == rat(2));
}

TEST_CASE("hole validation") {
  CHECK_THROWS_AS(HoleSpec({{rat(0), rat(1)}}), config_error);  // full hole
  CHECK_THROWS_AS(HoleSpec({{rat(0), rat(1, 2)}, {rat(1, 4), rat(3, 4)}}),
                  config_error);  // overlap
  HoleSpec h({{rat(1, 2), rat(3, 4)}, {rat(0), rat(1, 8)}});
  CHECK(h.total_length() == rat(3, 8));
  CHECK(h.contains(rat(1, 2)));
  CHECK_FALSE(h.contains(rat(3, 4)));  // half-open
}

TEST_CASE("step on the quadrupling map") {
  OpenSystem sys = preset_quadrupling_random_hole(1);
  CHECK(step(sys, 0, 0.3) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(step(sys, 0, 0.0) == 0.0);
  CHECK(step(sys, 0, 0.25) == 0.0);  // branch boundary -> interval endpoint
  CHECK(step(sys, 2, rat(1, 3)) == rat(1, 3));
  CHECK_THROWS_AS(step(sys, 9, 0.5), config_error);
}

TEST_CASE("orbit matches the base-4 digit-shift oracle") {
  OpenSystem sys = preset_quadrupling_random_hole(1);
  OmegaPath omega = sys.realize(0, 40);

  // exact rational period-2 orbit
  auto o = orbit(sys, omega, rat(1, 5), 2);
  CHECK(o == std::vector<Rat>{rat(1, 5), rat(4, 5), rat(1, 5)});

  // n = 0 is the identity
  auto o0 = orbit(sys, omega, rat(3, 7), 0);
  REQUIRE(o0.size() == 1);
  CHECK(o0[0] == rat(3, 7));

  // float orbit of 0.3 against the oracle applied to the double's exact value
  auto of = orbit(sys, omega, 0.3, 3);
  Rat x03(0.3);  // exact binary value of the double
  std::vector<double> expect = {0.3, 0.2, 0.8, 0.2};
  for (int t = 0; t <= 3; ++t) {
    CHECK(of[static_cast<std::size_t>(t)] ==
          doctest::Approx(expect[static_cast<std::size_t>(t)]).epsilon(1e-12));
    CHECK(of[static_cast<std::size_t>(t)] ==
          doctest::Approx(to_double(quadrupling_orbit_oracle(x03, t)))
              .epsilon(1e-14));
  }
}

TEST_CASE("rational and float orbits agree for n <= 30") {
  OpenSystem sys = preset_quadrupling_random_hole(3);
  OmegaPath omega = sys.realize(5, 40);
  Counter rng(101, 0);
  for (int trial = 0; trial < 50; ++trial) {
    double x = rng.next_uniform();
    Rat xr(x);  // same point, exactly
    auto orf = orbit(sys, omega, x, 30);
    auto orr = orbit(sys, omega, xr, 30);
    for (int t = 0; t <= 30; ++t) {
      CHECK(std::abs(orf[static_cast<std::size_t>(t)] -
                     to_double(orr[static_cast<std::size_t>(t)])) <= 1e-12);
    }
  }
}

TEST_CASE("survival against the digit oracle") {
  OpenSystem sys = quadrupling_with_sequence({0, 1, 2, 3}, 20);
  OmegaPath omega = sys.realize(0, 20);
  // omega = (0,1,2,3,0,...); x = 0.3 has base-4 digits (1,0,3,...)
  Rat x03(0.3);
  auto s = survives(sys, omega, x03, 2);
  CHECK(s.survived);
  CHECK_FALSE(s.escape_time.has_value());

  // x = 0.1 lies in the hole [0,1/4) at time 0
  auto s2 = survives(sys, omega, rat(1, 10), 0);
  CHECK_FALSE(s2.survived);
  CHECK(s2.escape_time == 0);

  // digit oracle over random rationals
  Counter rng(77, 0);
  for (int trial = 0; trial < 200; ++trial) {
    Rat x = rat(static_cast<long>(rng.next_index(99999)), 100000);
    int N = static_cast<int>(rng.next_index(12));
    bool expect = true;
    int expect_time = -1;
    for (int j = 0; j <= N; ++j) {
      if (base4_digit(x, j) ==
          static_cast<int>(omega.symbol(j))) {
        expect = false;
        expect_time = j;
        break;
      }
    }
    auto r = survives(sys, omega, x, N);
    CHECK(r.survived == expect);
    if (!expect) CHECK(r.escape_time == expect_time);
  }
}

TEST_CASE("survival with an empty hole (closed bypass)") {
  BranchMap m({rat(0), rat(1, 2), rat(1)}, {rat(2), rat(2)},
              {rat(0), rat(-1)});
  Environment env = Environment::iid({1.0}, 5);
  OpenSystem closed({m}, {HoleSpec::none()}, env);
  OmegaPath omega = closed.realize(0, 64);
  auto r = survives(closed, omega, rat(1, 3), 50);
  CHECK(r.survived);
  CHECK_FALSE(r.escape_time.has_value());
}

TEST_CASE("survives is monotone in the horizon") {
  OpenSystem sys = preset_quadrupling_random_hole(11);
  OmegaPath omega = sys.realize(1, 24);
  Counter rng(13, 1);
  for (int trial = 0; trial < 100; ++trial) {
    Rat x = rat(static_cast<long>(rng.next_index(99991)), 99991);
    auto r12 = survives(sys, omega, x, 12);
    if (r12.survived) {
      for (int N = 0; N <= 12; ++N) CHECK(survives(sys, omega, x, N).survived);
    } else {
      int esc = *r12.escape_time;
      for (int N = esc; N <= 12; ++N) {
        auto r = survives(sys, omega, x, N);
        CHECK_FALSE(r.survived);
        CHECK(r.escape_time == esc);
      }
    }
  }
}

TEST_CASE("surviving cylinders at depth 1, 2, 10") {
  OpenSystem sys = quadrupling_with_sequence({0, 1, 2, 3}, 16);
  OmegaPath omega = sys.realize(0, 16);

  CylinderSet c1 = surviving_cylinders(sys, omega, 1);
  REQUIRE(c1.count() == 3);
  CHECK(c1.intervals[0].lo == rat(1, 4));
  CHECK(c1.intervals[0].hi == rat(1, 2));
  CHECK(c1.intervals[2].hi == rat(1));
  CHECK(c1.total_length == rat(3, 4));

  CylinderSet c2 = surviving_cylinders(sys, omega, 2);
  CHECK(c2.count() == 9);
  CHECK(c2.total_length == rat(9, 16));

  CylinderSet c10 = surviving_cylinders(sys, omega, 10);
  CHECK(c10.count() == 59049);  // 3^10
  Rat expect = 1;
  for (int i = 0; i < 10; ++i) expect *= rat(3, 4);
  CHECK(c10.total_length == expect);
}

TEST_CASE("Leb(X_n) = (3/4)^(n+1) exactly for n <= 12") {
  OpenSystem sys = preset_quadrupling_random_hole(21);
  for (std::uint64_t stream = 0; stream < 3; ++stream) {
    OmegaPath omega = sys.realize(stream, 16);
    Rat expect = rat(3, 4);
    for (int n = 0; n <= 12; ++n) {
      CylinderSet c = surviving_cylinders(sys, omega, n + 1);
      CHECK(c.total_length == expect);
      mpz_class cnt;
      mpz_ui_pow_ui(cnt.get_mpz_t(), 3, static_cast<unsigned long>(n + 1));
      CHECK(mpz_class(static_cast<unsigned long>(c.count())) == cnt);
      expect *= rat(3, 4);
      if (n >= 8) break;  // counts grow fast; depth 9 is plenty here
    }
    // the deep case once per realization
    std::map<std::pair<long, int>, Rat> cache;
    Rat full = surviving_mass(sys, omega, 0, 12, &cache);
    Rat e13 = 1;
    for (int i = 0; i < 13; ++i) e13 *= rat(3, 4);
    CHECK(full == e13);
  }
}

TEST_CASE("cylinders agree with pointwise survival") {
  OpenSystem sys = preset_quadrupling_random_hole(31);
  OmegaPath omega = sys.realize(2, 12);
  const int n = 6;
  CylinderSet cs = surviving_cylinders(sys, omega, n);
  Counter rng(99, 2);
  for (int trial = 0; trial < 10000; ++trial) {
    Rat x = rat(static_cast<long>(rng.next_index(1048573)), 1048573);
    bool in_cyl = false;
    for (const auto& iv : cs.intervals) {
      if (x >= iv.lo && x < iv.hi) {
        in_cyl = true;
        break;
      }
    }
    CHECK(in_cyl == survives(sys, omega, x, n - 1).survived);
  }
}

TEST_CASE("survival_overlap matches cylinder totals and partial intervals") {
  OpenSystem sys = preset_quadrupling_random_hole(41);
  OmegaPath omega = sys.realize(3, 12);
  std::map<std::pair<long, int>, Rat> cache;
  for (int r = 0; r <= 6; ++r) {
    CylinderSet cs = surviving_cylinders(sys, omega, r + 1);
    CHECK(surviving_mass(sys, omega, 0, r, &cache) == cs.total_length);
    // partial interval: clip every cylinder against [1/3, 4/5)
    Rat expect = 0;
    for (const auto& iv : cs.intervals) {
      Rat a = std::max(iv.lo, rat(1, 3));
      Rat b = std::min(iv.hi, rat(4, 5));
      if (a < b) expect += b - a;
    }
    CHECK(survival_overlap(sys, omega, 0, rat(1, 3), rat(4, 5), r, &cache) ==
          expect);
  }
}

TEST_CASE("cylinder enumeration requires the exact path") {
  // a non-aligned hole disables exact enumeration
  std::vector<BranchMap> maps;
  std::vector<HoleSpec> holes;
  for (int s = 0; s < 2; ++s) {
    maps.emplace_back(
        std::vector<Rat>{rat(0), rat(1, 2), rat(1)},
        std::vector<Rat>{rat(2), rat(2)}, std::vector<Rat>{rat(0), rat(-1)});
    holes.emplace_back(
        std::vector<std::pair<Rat, Rat>>{{rat(1, 3), rat(1, 2)}});
  }
  OpenSystem sys(std::move(maps), std::move(holes),
                 Environment::iid({0.5, 0.5}, 3));
  CHECK_FALSE(sys.hole_aligned());
  OmegaPath omega = sys.realize(0, 8);
  CHECK_THROWS_AS(surviving_cylinders(sys, omega, 2), unsupported_system_error);
  // survival_overlap still works off the aligned path
  Rat m0 = surviving_mass(sys, omega, 0, 0);
  CHECK(m0 == rat(5, 6));
}

TEST_CASE("environment modes") {
  CHECK_THROWS_AS(Environment::iid({0.5, 0.4}, 1), config_error);
  CHECK_THROWS_AS(Environment::markov({{0.5, 0.4}, {0.3, 0.7}}, 1),
                  config_error);
  Environment mk = Environment::markov({{0.9, 0.1}, {0.2, 0.8}}, 1);
  auto st = mk.stationary();
  // detailed balance solution (2/3, 1/3)
  CHECK(st[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-10));

  // realizations are deterministic per (seed, stream)
  Environment env = Environment::iid({0.25, 0.25, 0.25, 0.25}, 17);
  OmegaPath a(env, 4, 32);
  OmegaPath b(env, 4, 32);
  OmegaPath c(env, 5, 32);
  bool same = true, differ = false;
  for (long t = -32; t <= 32; ++t) {
    same = same && (a.symbol(t) == b.symbol(t));
    differ = differ || (a.symbol(t) != c.symbol(t));
  }
  CHECK(same);
  CHECK(differ);

  // iid symbols are horizon-consistent
  OmegaPath wide(env, 4, 64);
  bool consistent = true;
  for (long t = -32; t <= 32; ++t)
    consistent = consistent && (wide.symbol(t) == a.symbol(t));
  CHECK(consistent);

  CHECK_THROWS_AS(a.symbol(99), contract_error);
}

TEST_CASE("json round trip and presets") {
  const char* text = R"({
    "name": "half-tent-ish",
    "alphabet": 2,
    "branches": [
      {"breakpoints": ["0", "1/2", "1"], "slopes": ["2", "2"],
       "intercepts": ["0", "-1"]},
      {"breakpoints": ["0", "1/4", "1/2", "3/4", "1"],
       "slopes": ["4", "4", "4", "4"],
       "intercepts": ["0", "-1", "-2", "-3"]}
    ],
    "holes": [[["0", "1/2"]], [["1/4", "1/2"]]],
    "environment": {"mode": "iid", "weights": [0.5, 0.5], "seed": 9}
  })";
  OpenSystem sys = system_from_json_text(text);
  CHECK(sys.alphabet_size() == 2);
  CHECK(sys.full_branch());
  CHECK(sys.hole_aligned());
  CHECK(sys.map(1).branch_count() == 4);

  OpenSystem preset = system_from_preset("quadrupling-random-hole", 3);
  CHECK(preset.name() == "quadrupling-random-hole");
  CHECK(preset.kappa1() == rat(4));
  CHECK(preset.kappa2() == rat(4));
  CHECK_THROWS_AS(system_from_preset("no-such-preset", 0), config_error);

  const char* bad = R"({"alphabet": 1, "branches": [], "holes": [],
                        "environment": {"mode": "iid", "weights": [1.0]}})";
  CHECK_THROWS_AS(system_from_json_text(bad), config_error);
}
