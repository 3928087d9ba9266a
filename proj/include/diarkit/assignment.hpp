#pragma once

#include <vector>

namespace diarkit {

// Exact minimum-cost assignment on a square matrix (O(n^3) shortest
// augmenting paths). Returns pi with pi[i] = column assigned to row i.
// Ties between optimal assignments break to the lexicographically smallest
// permutation (tolerance 1e-9 relative to the optimum).
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost);

// Total cost of an assignment.
double assignment_cost(const std::vector<std::vector<double>>& cost,
                       const std::vector<int>& perm);

}  // namespace diarkit
