#ifndef ROIM_TRANSFER_HPP
#define ROIM_TRANSFER_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "roim/system.hpp"

namespace roim {

// ---------------------------------------------------------------------------
// Grid functions
// ---------------------------------------------------------------------------

// Piecewise-constant function on the uniform k-cell grid of [0,1); values are
// cell averages, cell width 1/k implicit.
struct GridFunction {
  std::size_t k = 0;
  std::vector<double> values;

  GridFunction() = default;
  GridFunction(std::size_t cells, double fill)
      : k(cells), values(cells, fill) {}

  static GridFunction constant(std::size_t k, double c) {
    return GridFunction(k, c);
  }
  // Cell-averaged indicator of [lo,hi); exact when the endpoints are grid
  // points.
  static GridFunction indicator(std::size_t k, const Rat& lo, const Rat& hi);

  double integral() const;   // Lebesgue integral
  double sup_norm() const;   // max |value|
  double l1_norm() const;    // integral of |u|
  double value_at(double x) const;

  GridFunction& operator*=(double c);
};

// Discrete total variation sum |u_{i+1} - u_i|; the exact BV variation for
// grid-constant functions. Requires k >= 2.
double grid_variation(const GridFunction& u);

// ---------------------------------------------------------------------------
// Ulam matrices
// ---------------------------------------------------------------------------

// Sparse row-major Ulam discretization. A[i][j] = Leb(C_i ∩ T^{-1}C_j) /
// Leb(C_i). Closed matrices are row-stochastic; open matrices are the closed
// matrix with each row scaled by the surviving fraction of its cell (0 or 1
// on aligned grids).
struct OperatorMatrix {
  std::size_t k = 0;
  std::vector<std::size_t> row_ptr;  // size k+1
  std::vector<std::uint32_t> col;
  std::vector<double> val;
  bool open = false;
  bool aligned = true;                    // grid aligned with breakpoints/holes
  std::vector<std::size_t> masked_cells;  // cells fully inside the hole

  std::size_t nnz() const { return col.size(); }

  // Density push u -> L u (adjoint of composition): out_j = sum_i A_ij u_i.
  GridFunction apply(const GridFunction& u) const;
  // Test-function pullback h -> E[h o T | cell]: out_i = sum_j A_ij h_j.
  GridFunction pullback(const GridFunction& h) const;
};

// Closed transfer operator of one fiber map on a k-cell grid. Preconditions:
// k >= branch count and minimum slope magnitude > 1. Entries come from exact
// rational overlap integration; `aligned` is false (with exact entries still)
// when k is not a multiple of every breakpoint denominator.
OperatorMatrix ulam_closed(const OpenSystem& sys, std::size_t symbol,
                           std::size_t k);

// Open operator: closed matrix with hole rows masked. On aligned grids
// integral(L_open 1) = Leb(X_{omega,0}).
OperatorMatrix ulam_open(const OpenSystem& sys, std::size_t symbol,
                         std::size_t k);

// Surviving fraction of each grid cell for the fiber hole (exact, as double).
std::vector<double> survive_fractions(const OpenSystem& sys,
                                      std::size_t symbol, std::size_t k);

// ---------------------------------------------------------------------------
// Cocycles
// ---------------------------------------------------------------------------

// Ordered product L_{sigma^{n-1}omega} ... L_omega with per-step L1
// renormalization; the true integral of the running density is recoverable
// as exp(log_mass).
struct CocycleProduct {
  std::vector<OperatorMatrix> ops;
  GridFunction current;
  double log_mass = 0.0;
};

CocycleProduct assemble_cocycle(const OpenSystem& sys, const OmegaPath& omega,
                                long start_fiber, int steps, std::size_t k,
                                bool open = true);

// Applies all assembled steps to u. Returns the renormalized density and the
// log of the total mass; throws degenerate_error if the mass reaches zero.
std::pair<GridFunction, double> apply_cocycle(CocycleProduct& product,
                                              const GridFunction& u);

// Little-endian binary dump (u32 k, u64 nnz, then u32 row, u32 col, f64
// value per entry) for cross-checking against other implementations.
void dump_matrix_binary(const OperatorMatrix& m, const std::string& path);

}  // namespace roim

#endif
