#include "mmtrack/lap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mmtrack::lap {

CostMatrix::CostMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), cost_(rows * cols, 0.0), feasible_(rows * cols, 1) {}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Row-major dense problem with nr <= nc.
struct Dense {
  std::size_t nr;
  std::size_t nc;
  std::vector<double> c;
  double operator()(std::size_t i, std::size_t j) const { return c[i * nc + j]; }
};

// Returns col4row for a dense problem with nr <= nc and finite costs.
std::vector<std::ptrdiff_t> shortest_augmenting_path(const Dense& d) {
  const std::size_t nr = d.nr;
  const std::size_t nc = d.nc;
  std::vector<double> u(nr, 0.0), v(nc, 0.0), dist(nc);
  std::vector<std::ptrdiff_t> path(nc, -1), col4row(nr, -1), row4col(nc, -1);
  std::vector<char> seen_row(nr), seen_col(nc);
  std::vector<std::size_t> remaining(nc);

  for (std::size_t cur = 0; cur < nr; ++cur) {
    std::fill(seen_row.begin(), seen_row.end(), 0);
    std::fill(seen_col.begin(), seen_col.end(), 0);
    std::fill(dist.begin(), dist.end(), kInf);
    for (std::size_t j = 0; j < nc; ++j) remaining[j] = j;
    std::size_t num_remaining = nc;

    double min_val = 0.0;
    std::ptrdiff_t sink = -1;
    std::size_t i = cur;
    while (sink < 0) {
      seen_row[i] = 1;
      std::size_t best = num_remaining;
      double lowest = kInf;
      for (std::size_t it = 0; it < num_remaining; ++it) {
        const std::size_t j = remaining[it];
        const double r = min_val + d(i, j) - u[i] - v[j];
        if (r < dist[j]) {
          path[j] = static_cast<std::ptrdiff_t>(i);
          dist[j] = r;
        }
        if (best == num_remaining || dist[j] < lowest) {
          lowest = dist[j];
          best = it;
          continue;
        }
        // Ties prefer a free column, then the lowest column index.
        const std::size_t bj = remaining[best];
        const bool free_j = row4col[j] < 0;
        const bool free_b = row4col[bj] < 0;
        if (dist[j] == lowest && (free_j != free_b ? free_j : j < bj)) best = it;
      }
      if (best == num_remaining || !std::isfinite(lowest)) {
        throw std::logic_error("lap: no augmenting path on a complete matrix");
      }
      min_val = lowest;
      const std::size_t j = remaining[best];
      if (row4col[j] < 0) {
        sink = static_cast<std::ptrdiff_t>(j);
      } else {
        i = static_cast<std::size_t>(row4col[j]);
      }
      seen_col[j] = 1;
      remaining[best] = remaining[--num_remaining];
    }

    u[cur] += min_val;
    for (std::size_t r = 0; r < nr; ++r) {
      if (seen_row[r] && r != cur) u[r] += min_val - dist[static_cast<std::size_t>(col4row[r])];
    }
    for (std::size_t j = 0; j < nc; ++j) {
      if (seen_col[j]) v[j] -= min_val - dist[j];
    }
    std::size_t j = static_cast<std::size_t>(sink);
    while (true) {
      const std::size_t r = static_cast<std::size_t>(path[j]);
      row4col[j] = static_cast<std::ptrdiff_t>(r);
      const std::ptrdiff_t prev = col4row[r];
      col4row[r] = static_cast<std::ptrdiff_t>(j);
      if (r == cur) break;
      j = static_cast<std::size_t>(prev);
    }
  }
  return col4row;
}

}  // namespace

Assignment solve(const CostMatrix& m) {
  Assignment out;
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  if (rows == 0 || cols == 0) return out;

  double max_cost = 0.0;
  bool any_feasible = false;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (!m.feasible(r, c)) continue;
      const double x = m.cost(r, c);
      if (!std::isfinite(x) || x < 0.0) {
        throw std::invalid_argument("lap: feasible costs must be finite and non-negative");
      }
      max_cost = std::max(max_cost, x);
      any_feasible = true;
    }
  }
  if (!any_feasible) return out;

  // Any matching with one more feasible pair is cheaper than every matching
  // with one fewer, so the optimum maximizes cardinality first.
  const bool transposed = rows > cols;
  const std::size_t n = std::min(rows, cols);
  const double forbidden = max_cost * static_cast<double>(n) + 1.0;
  Dense d{transposed ? cols : rows, transposed ? rows : cols, {}};
  d.c.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = m.feasible(r, c) ? m.cost(r, c) : forbidden;
      if (transposed) {
        d.c[c * d.nc + r] = x;
      } else {
        d.c[r * d.nc + c] = x;
      }
    }
  }

  const auto col4row = shortest_augmenting_path(d);
  for (std::size_t i = 0; i < d.nr; ++i) {
    const auto j = static_cast<std::size_t>(col4row[i]);
    const std::size_t r = transposed ? j : i;
    const std::size_t c = transposed ? i : j;
    if (m.feasible(r, c)) out.pairs.emplace_back(r, c);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (const auto& [r, c] : out.pairs) out.total_cost += m.cost(r, c);
  return out;
}

}  // namespace mmtrack::lap
