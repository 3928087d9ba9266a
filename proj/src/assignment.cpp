#include "diarkit/assignment.hpp"

#include "diarkit/tensor.hpp"

#include <cmath>
#include <limits>

namespace diarkit {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Shortest-augmenting-path assignment with row/column potentials.
// a is row-major n x n; fills row_to_col; returns the minimal total cost.
double solve_square(const std::vector<double>& a, int n, std::vector<int>& row_to_col) {
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> match(n + 1, 0), way(n + 1, 0);  // match[j] = row on column j (1-based)
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = match[j0];
            int j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = a[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0);
    }
    row_to_col.assign(n, -1);
    double total = 0.0;
    for (int j = 1; j <= n; ++j) {
        if (match[j] > 0) {
            row_to_col[match[j] - 1] = j - 1;
            total += a[static_cast<std::size_t>(match[j] - 1) * n + (j - 1)];
        }
    }
    return total;
}

}  // namespace

std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    if (n == 0) throw ContractError("hungarian: empty cost matrix");
    std::vector<double> flat(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(cost[i].size()) != n) {
            throw ContractError("hungarian: cost matrix is not square");
        }
        for (int j = 0; j < n; ++j) {
            if (!std::isfinite(cost[i][j])) {
                throw NumericalError("hungarian: non-finite cost at (" + std::to_string(i) + "," +
                                     std::to_string(j) + ")");
            }
            flat[static_cast<std::size_t>(i) * n + j] = cost[i][j];
        }
    }

    std::vector<int> scratch;
    const double best = solve_square(flat, n, scratch);
    const double tol = 1e-9 * std::max(1.0, std::abs(best));

    // Fix rows one by one to the smallest column that still admits an optimal
    // completion; the result is the lexicographically smallest optimum.
    std::vector<int> result(n, -1);
    std::vector<char> col_taken(n, 0);
    double fixed = 0.0;
    for (int i = 0; i < n; ++i) {
        const int remaining = n - i - 1;
        for (int c = 0; c < n; ++c) {
            if (col_taken[c]) continue;
            double completion = 0.0;
            if (remaining > 0) {
                std::vector<double> sub;
                sub.reserve(static_cast<std::size_t>(remaining) * remaining);
                for (int r = i + 1; r < n; ++r) {
                    for (int cc = 0; cc < n; ++cc) {
                        if (!col_taken[cc] && cc != c) {
                            sub.push_back(flat[static_cast<std::size_t>(r) * n + cc]);
                        }
                    }
                }
                completion = solve_square(sub, remaining, scratch);
            }
            if (fixed + cost[i][c] + completion <= best + tol) {
                result[i] = c;
                col_taken[c] = 1;
                fixed += cost[i][c];
                break;
            }
        }
        if (result[i] < 0) {
            // numerically impossible: the unconstrained optimum always remains
            throw NumericalError("hungarian: no optimal completion found");
        }
    }
    return result;
}

double assignment_cost(const std::vector<std::vector<double>>& cost,
                       const std::vector<int>& perm) {
    double total = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) total += cost[i][perm[i]];
    return total;
}

}  // namespace diarkit
