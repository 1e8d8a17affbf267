#include "roim/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace roim {

// ---------------------------------------------------------------------------
// GridFunction
// ---------------------------------------------------------------------------

GridFunction GridFunction::indicator(std::size_t k, const Rat& lo,
                                     const Rat& hi) {
  GridFunction u(k, 0.0);
  Rat width = rat(1, static_cast<long>(k));
  for (std::size_t i = 0; i < k; ++i) {
    Rat clo = rat(static_cast<long>(i)) * width;
    Rat chi = clo + width;
    Rat a = std::max(lo, clo);
    Rat b = std::min(hi, chi);
    if (a < b) u.values[i] = to_double(Rat((b - a) / width));
  }
  return u;
}

double GridFunction::integral() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(k);
}

double GridFunction::sup_norm() const {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

double GridFunction::l1_norm() const {
  double s = 0.0;
  for (double v : values) s += std::abs(v);
  return s / static_cast<double>(k);
}

double GridFunction::value_at(double x) const {
  auto i = static_cast<std::size_t>(x * static_cast<double>(k));
  if (i >= k) i = k - 1;
  return values[i];
}

GridFunction& GridFunction::operator*=(double c) {
  for (double& v : values) v *= c;
  return *this;
}

double grid_variation(const GridFunction& u) {
  if (u.k < 2) throw contract_error("grid_variation needs k >= 2");
  double var = 0.0;
  for (std::size_t i = 0; i + 1 < u.k; ++i) {
    var += std::abs(u.values[i + 1] - u.values[i]);
  }
  return var;
}

// ---------------------------------------------------------------------------
// Ulam assembly
// ---------------------------------------------------------------------------

namespace {

bool grid_aligned(const BranchMap& m, std::size_t k) {
  Rat kk(static_cast<long>(k));
  for (const Rat& b : m.breakpoints()) {
    Rat scaled = b * kk;
    if (scaled.get_den() != 1) return false;
  }
  return true;
}

bool grid_aligned(const HoleSpec& h, std::size_t k) {
  Rat kk(static_cast<long>(k));
  for (const auto& [lo, hi] : h.intervals()) {
    if (Rat(lo * kk).get_den() != 1 || Rat(hi * kk).get_den() != 1)
      return false;
  }
  return true;
}

}  // namespace

OperatorMatrix ulam_closed(const OpenSystem& sys, std::size_t symbol,
                           std::size_t k) {
  const BranchMap& m = sys.map(symbol);
  if (k < m.branch_count()) {
    throw contract_error("grid must have at least one cell per branch");
  }
  if (!(sys.kappa1() > 1)) {
    throw contract_error(
        "ulam discretization requires uniform expansion (min |slope| > 1)");
  }
  OperatorMatrix A;
  A.k = k;
  A.aligned = grid_aligned(m, k);
  A.row_ptr.assign(k + 1, 0);

  const Rat width = rat(1, static_cast<long>(k));
  std::vector<std::pair<std::uint32_t, Rat>> row;
  std::vector<std::vector<std::pair<std::uint32_t, Rat>>> rows(k);
  for (std::size_t i = 0; i < k; ++i) {
    row.clear();
    Rat clo = rat(static_cast<long>(i)) * width;
    Rat chi = clo + width;
    for (std::size_t br = 0; br < m.branch_count(); ++br) {
      const Branch& b = m.branch(br);
      Rat u = std::max(clo, b.lo);
      Rat v = std::min(chi, b.hi);
      if (!(u < v)) continue;
      Rat ya = b.slope * u + b.intercept;
      Rat yb = b.slope * v + b.intercept;
      if (ya > yb) std::swap(ya, yb);
      // distribute the image interval across grid cells
      long j0 = floor_long(ya * rat(static_cast<long>(k)));
      long j1 = floor_long(yb * rat(static_cast<long>(k)));
      for (long j = j0; j <= j1 && j < static_cast<long>(k); ++j) {
        if (j < 0) continue;
        Rat jlo = rat(j) * width;
        Rat jhi = jlo + width;
        Rat a = std::max(ya, jlo);
        Rat bb = std::min(yb, jhi);
        if (!(a < bb)) continue;
        // Leb(C_i ∩ T^{-1}[a,bb)) = (bb - a)/|slope|; entry divides by Leb(C_i)
        Rat entry = (bb - a) / abs(b.slope) / width;
        row.emplace_back(static_cast<std::uint32_t>(j), entry);
      }
    }
    std::sort(row.begin(), row.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    // merge duplicate columns (several branch pieces can hit one cell)
    auto& out = rows[i];
    for (const auto& [j, e] : row) {
      if (!out.empty() && out.back().first == j)
        out.back().second += e;
      else
        out.emplace_back(j, e);
    }
  }
  std::size_t nnz = 0;
  for (const auto& r : rows) nnz += r.size();
  A.col.reserve(nnz);
  A.val.reserve(nnz);
  for (std::size_t i = 0; i < k; ++i) {
    A.row_ptr[i] = A.col.size();
    for (const auto& [j, e] : rows[i]) {
      A.col.push_back(j);
      A.val.push_back(to_double(e));
    }
  }
  A.row_ptr[k] = A.col.size();
  return A;
}

std::vector<double> survive_fractions(const OpenSystem& sys,
                                      std::size_t symbol, std::size_t k) {
  const HoleSpec& hole = sys.hole(symbol);
  std::vector<double> frac(k, 1.0);
  const Rat width = rat(1, static_cast<long>(k));
  for (std::size_t i = 0; i < k; ++i) {
    Rat clo = rat(static_cast<long>(i)) * width;
    Rat chi = clo + width;
    Rat dead = 0;
    for (const auto& [lo, hi] : hole.intervals()) {
      Rat a = std::max(lo, clo);
      Rat b = std::min(hi, chi);
      if (a < b) dead += b - a;
    }
    frac[i] = to_double(Rat((width - dead) / width));
  }
  return frac;
}

OperatorMatrix ulam_open(const OpenSystem& sys, std::size_t symbol,
                         std::size_t k) {
  OperatorMatrix A = ulam_closed(sys, symbol, k);
  A.open = true;
  A.aligned = A.aligned && grid_aligned(sys.hole(symbol), k);
  std::vector<double> frac = survive_fractions(sys, symbol, k);
  for (std::size_t i = 0; i < k; ++i) {
    if (frac[i] == 1.0) continue;
    if (frac[i] == 0.0) A.masked_cells.push_back(i);
    for (std::size_t p = A.row_ptr[i]; p < A.row_ptr[i + 1]; ++p) {
      A.val[p] *= frac[i];
    }
  }
  return A;
}

GridFunction OperatorMatrix::apply(const GridFunction& u) const {
  if (u.k != k) throw contract_error("grid size mismatch in operator apply");
  GridFunction out(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const double ui = u.values[i];
    if (ui == 0.0) continue;
    for (std::size_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) {
      out.values[col[p]] += val[p] * ui;
    }
  }
  return out;
}

GridFunction OperatorMatrix::pullback(const GridFunction& h) const {
  if (h.k != k) throw contract_error("grid size mismatch in pullback");
  GridFunction out(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    double acc = 0.0;
    for (std::size_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) {
      acc += val[p] * h.values[col[p]];
    }
    out.values[i] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cocycle
// ---------------------------------------------------------------------------

CocycleProduct assemble_cocycle(const OpenSystem& sys, const OmegaPath& omega,
                                long start_fiber, int steps, std::size_t k,
                                bool open) {
  if (steps < 1) throw contract_error("cocycle needs at least one step");
  CocycleProduct prod;
  prod.ops.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    std::size_t sym = omega.symbol(start_fiber + t);
    prod.ops.push_back(open ? ulam_open(sys, sym, k)
                            : ulam_closed(sys, sym, k));
  }
  return prod;
}

std::pair<GridFunction, double> apply_cocycle(CocycleProduct& product,
                                              const GridFunction& u) {
  GridFunction v = u;
  double log_mass = 0.0;
  double base = v.integral();
  if (base <= 0.0) throw degenerate_error("input density has no mass");
  v *= 1.0 / base;
  log_mass += std::log(base);
  for (const OperatorMatrix& op : product.ops) {
    v = op.apply(v);
    double mass = v.integral();
    if (mass <= 0.0) {
      throw degenerate_error("cocycle mass reached zero (hole swallowed all)");
    }
    v *= 1.0 / mass;
    log_mass += std::log(mass);
  }
  product.current = v;
  product.log_mass = log_mass;
  return {v, log_mass};
}

void dump_matrix_binary(const OperatorMatrix& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw contract_error("cannot open '" + path + "' for writing");
  auto put_u32 = [&](std::uint32_t x) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  auto put_u64 = [&](std::uint64_t x) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  };
  put_u32(static_cast<std::uint32_t>(m.k));
  put_u64(m.nnz());
  for (std::size_t i = 0; i < m.k; ++i) {
    for (std::size_t p = m.row_ptr[i]; p < m.row_ptr[i + 1]; ++p) {
      put_u32(static_cast<std::uint32_t>(i));
      put_u32(m.col[p]);
      double v = m.val[p];
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      put_u64(bits);
    }
  }
}

}  // namespace roim
