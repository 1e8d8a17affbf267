#ifndef ROIM_PIECEWISE_HPP
#define ROIM_PIECEWISE_HPP

#include <vector>

#include "roim/transfer.hpp"

namespace roim {

// Piecewise-affine function on [0,1) with rational breakpoints: f(x) = a + b x
// on each [lo, hi). Closed under the exact integration the cylinder paths
// need; grid functions embed with b = 0 on every cell.
class Piecewise {
 public:
  struct Piece {
    Rat lo;
    Rat hi;
    Rat a;
    Rat b;
  };

  explicit Piecewise(std::vector<Piece> pieces);

  static Piecewise constant(const Rat& c);
  static Piecewise identity();                       // f(x) = x
  static Piecewise linear(const Rat& a, const Rat& b);
  static Piecewise indicator(const Rat& lo, const Rat& hi);
  static Piecewise from_grid(const GridFunction& u);

  const std::vector<Piece>& pieces() const { return pieces_; }

  Rat value(const Rat& x) const;
  double value(double x) const;

  // integral over [lo,hi) ∩ [0,1)
  Rat integral(const Rat& lo, const Rat& hi) const;
  Rat integral() const { return integral(Rat(0), Rat(1)); }

  double sup_norm() const;
  // total variation: slope mass plus jump magnitudes at the breakpoints
  double variation() const;

  // f + c and c * f
  Piecewise shifted(const Rat& c) const;
  Piecewise scaled(const Rat& c) const;

  bool nonnegative() const;

  GridFunction to_grid(std::size_t k) const;  // cell averages (exact)

 private:
  std::vector<Piece> pieces_;  // sorted, contiguous, covering [0,1)
};

// Dense polynomial with rational coefficients, used for exact cylinder
// moments of products of composed affine observables.
struct Poly {
  std::vector<Rat> c;  // c[0] + c[1] x + ...

  static Poly affine(const Rat& a, const Rat& b) { return Poly{{a, b}}; }
  Poly times(const Poly& other) const;
  Rat integral(const Rat& lo, const Rat& hi) const;
};

}  // namespace roim

#endif
