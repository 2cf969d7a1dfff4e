#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace mmtrack::lap {

// Dense rectangular cost matrix with a feasibility mask. Cells start
// feasible with cost 0.
class CostMatrix {
 public:
  CostMatrix() = default;
  CostMatrix(std::size_t rows, std::size_t cols);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double cost(std::size_t r, std::size_t c) const { return cost_[r * cols_ + c]; }
  bool feasible(std::size_t r, std::size_t c) const { return feasible_[r * cols_ + c] != 0; }

  void set(std::size_t r, std::size_t c, double cost) {
    cost_[r * cols_ + c] = cost;
    feasible_[r * cols_ + c] = 1;
  }
  void forbid(std::size_t r, std::size_t c) { feasible_[r * cols_ + c] = 0; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> cost_;
  std::vector<std::uint8_t> feasible_;
};

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // sorted by row
  double total_cost = 0.0;
};

// Minimum-cost matching among the maximum-cardinality feasible matchings.
// Shortest-augmenting-path Jonker-Volgenant on the (virtually) padded
// problem. Throws std::invalid_argument on a negative or non-finite
// feasible cost.
Assignment solve(const CostMatrix& matrix);

}  // namespace mmtrack::lap
