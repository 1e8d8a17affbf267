#ifndef ROIM_RATIONAL_HPP
#define ROIM_RATIONAL_HPP

#include <gmpxx.h>

#include <stdexcept>
#include <string>

namespace roim {

// Exact rational scalar used on all enumeration paths. GMP keeps the
// arithmetic arbitrary-precision; doubles are the fallback everywhere else.
using Rat = mpq_class;

// Parses "p/q" or "p" (decimal integers, optional sign).
inline Rat parse_rational(const std::string& text) {
  Rat r;
  if (r.set_str(text, 10) != 0) {
    throw std::invalid_argument("not a rational: '" + text + "'");
  }
  r.canonicalize();
  return r;
}

inline std::string to_string(const Rat& r) { return r.get_str(); }

inline double to_double(const Rat& r) { return r.get_d(); }

inline Rat rat(long num, long den = 1) {
  Rat r(num, den);
  r.canonicalize();
  return r;
}

// Largest integer <= r.
inline long floor_long(const Rat& r) {
  mpz_class q;
  mpz_fdiv_q(q.get_mpz_t(), r.get_num_mpz_t(), r.get_den_mpz_t());
  return q.get_si();
}

}  // namespace roim

#endif
