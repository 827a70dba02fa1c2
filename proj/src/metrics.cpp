#include "sinkem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sinkem/sinkhorn.hpp"

namespace sinkem {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Matrix squared_cost(const DiscreteMixture& a, const DiscreteMixture& b) {
    const int ka = a.K(), kb = b.K(), d = a.d;
    Matrix c(ka, kb);
    for (int i = 0; i < ka; ++i)
        for (int j = 0; j < kb; ++j) {
            double s = 0.0;
            for (int t = 0; t < d; ++t) {
                double diff = a.atoms[i * d + t] - b.atoms[j * d + t];
                s += diff * diff;
            }
            c(i, j) = s;
        }
    return c;
}

bool uniform_masses(const DiscreteMixture& m) {
    const double u = 1.0 / m.K();
    for (double x : m.masses)
        if (std::abs(x - u) > 1e-12) return false;
    return true;
}

// Exact transportation simplex with Bland's pivoting rule (no cycling on
// degenerate bases). Basis cells form a spanning tree of the bipartite
// supply/demand graph.
class TransportSimplex {
public:
    TransportSimplex(const Matrix& cost, std::span<const double> a, std::span<const double> b)
        : c_(cost), a_(a.begin(), a.end()), b_(b.begin(), b.end()),
          m_(static_cast<int>(a.size())), n_(static_cast<int>(b.size())) {}

    double solve() {
        northwest_corner();
        const int max_pivots = 200000;
        for (int it = 0; it < max_pivots; ++it) {
            compute_duals();
            int ei = -1, ej = -1;
            if (!find_entering(ei, ej)) {
                recompute_flows();
                return total_cost();
            }
            pivot(ei, ej);
        }
        throw NumericalError("transport simplex: pivot limit exceeded");
    }

private:
    struct Cell {
        int i, j;
        double flow;
    };

    void northwest_corner() {
        std::vector<double> ra = a_, rb = b_;
        int i = 0, j = 0;
        while (true) {
            double x = std::min(ra[i], rb[j]);
            basis_.push_back({i, j, x});
            ra[i] -= x;
            rb[j] -= x;
            if (i == m_ - 1 && j == n_ - 1) break;
            if (ra[i] <= rb[j] && i < m_ - 1)
                ++i;
            else
                ++j;
        }
    }

    void compute_duals() {
        u_.assign(m_, kInf);
        v_.assign(n_, kInf);
        u_[0] = 0.0;
        bool progress = true;
        while (progress) {
            progress = false;
            for (const auto& cell : basis_) {
                if (u_[cell.i] != kInf && v_[cell.j] == kInf) {
                    v_[cell.j] = c_(cell.i, cell.j) - u_[cell.i];
                    progress = true;
                } else if (v_[cell.j] != kInf && u_[cell.i] == kInf) {
                    u_[cell.i] = c_(cell.i, cell.j) - v_[cell.j];
                    progress = true;
                }
            }
        }
    }

    bool find_entering(int& ei, int& ej) const {
        for (int i = 0; i < m_; ++i)
            for (int j = 0; j < n_; ++j) {
                if (is_basic(i, j)) continue;
                if (c_(i, j) - u_[i] - v_[j] < -1e-12) {
                    ei = i;
                    ej = j;
                    return true;  // Bland: first improving cell in fixed order
                }
            }
        return false;
    }

    bool is_basic(int i, int j) const {
        for (const auto& cell : basis_)
            if (cell.i == i && cell.j == j) return true;
        return false;
    }

    // Unique alternating cycle created by the entering cell: path in the
    // basis tree from row node ei to column node ej.
    void pivot(int ei, int ej) {
        const int nodes = m_ + n_;
        std::vector<int> parent_edge(nodes, -1), parent_node(nodes, -1);
        std::vector<char> seen(nodes, 0);
        std::vector<int> stack = {ei};
        seen[ei] = 1;
        while (!stack.empty()) {
            int u = stack.back();
            stack.pop_back();
            for (std::size_t e = 0; e < basis_.size(); ++e) {
                int x = basis_[e].i, y = m_ + basis_[e].j;
                int to = -1;
                if (x == u)
                    to = y;
                else if (y == u)
                    to = x;
                if (to >= 0 && !seen[to]) {
                    seen[to] = 1;
                    parent_edge[to] = static_cast<int>(e);
                    parent_node[to] = u;
                    stack.push_back(to);
                }
            }
        }
        // walk back from the column node of the entering edge
        std::vector<int> path;  // edge indices, alternating -,+,-,...
        int cur = m_ + ej;
        while (cur != ei) {
            path.push_back(parent_edge[cur]);
            cur = parent_node[cur];
        }
        // entering edge gets +delta; edges at even positions in `path`
        // (starting from the column end) get -delta, odd get +delta.
        double delta = kInf;
        int leave = -1;
        for (std::size_t p = 0; p < path.size(); p += 2) {
            const auto& cell = basis_[path[p]];
            if (cell.flow < delta - 1e-18) {
                delta = cell.flow;
                leave = path[p];
            }
        }
        for (std::size_t p = 0; p < path.size(); ++p) {
            if (p % 2 == 0)
                basis_[path[p]].flow -= delta;
            else
                basis_[path[p]].flow += delta;
        }
        basis_[leave] = {ei, ej, delta};
    }

    // Re-solve the tree system with the exact marginals by leaf elimination;
    // removes any drift the pivots accumulated.
    void recompute_flows() {
        const int nodes = m_ + n_;
        std::vector<double> need(nodes);
        for (int i = 0; i < m_; ++i) need[i] = a_[i];
        for (int j = 0; j < n_; ++j) need[m_ + j] = b_[j];
        std::vector<int> degree(nodes, 0);
        std::vector<char> done(basis_.size(), 0);
        for (const auto& cell : basis_) {
            ++degree[cell.i];
            ++degree[m_ + cell.j];
        }
        for (std::size_t round = 0; round < basis_.size(); ++round) {
            bool progress = false;
            for (std::size_t e = 0; e < basis_.size(); ++e) {
                if (done[e]) continue;
                int x = basis_[e].i, y = m_ + basis_[e].j;
                int leaf = (degree[x] == 1) ? x : (degree[y] == 1 ? y : -1);
                if (leaf < 0) continue;
                int other = (leaf == x) ? y : x;
                basis_[e].flow = need[leaf];
                need[other] -= need[leaf];
                need[leaf] = 0.0;
                --degree[x];
                --degree[y];
                done[e] = 1;
                progress = true;
            }
            if (!progress) break;
        }
    }

    double total_cost() const {
        double total = 0.0;
        for (const auto& cell : basis_) total += c_(cell.i, cell.j) * cell.flow;
        return total;
    }

    const Matrix& c_;
    std::vector<double> a_, b_;
    int m_, n_;
    std::vector<Cell> basis_;
    std::vector<double> u_, v_;
};

}  // namespace

void DiscreteMixture::validate() const {
    if (d < 1 || atoms.empty()) throw InvalidInput("discrete mixture: needs atoms");
    if (static_cast<int>(atoms.size()) != K() * d) throw InvalidInput("discrete mixture: atoms size != K*d");
    if (static_cast<int>(masses.size()) != K()) throw InvalidInput("discrete mixture: masses size != K");
    double s = 0.0;
    for (double m : masses) {
        if (!(m >= 0.0)) throw InvalidInput("discrete mixture: masses must be nonnegative");
        s += m;
    }
    if (std::abs(s - 1.0) > 1e-12) throw InvalidInput("discrete mixture: masses must sum to 1");
}

double solve_assignment(const Matrix& cost, std::vector<int>& row_to_col) {
    const int n = static_cast<int>(cost.rows);
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            int i0 = p[j0], j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    row_to_col.assign(n, -1);
    double total = 0.0;
    for (int j = 1; j <= n; ++j) {
        if (p[j] == 0) continue;
        row_to_col[p[j] - 1] = j - 1;
        total += cost(p[j] - 1, j - 1);
    }
    return total;
}

double w2_squared_exact(const DiscreteMixture& a, const DiscreteMixture& b) {
    a.validate();
    b.validate();
    if (a.d != b.d) throw InvalidInput("w2: ambient dimensions differ");
    if (a.K() > 12 || b.K() > 12)
        throw InvalidInput("w2: exact solver is for K <= 12; use the entropic variant");
    Matrix cost = squared_cost(a, b);
    if (a.K() == b.K() && uniform_masses(a) && uniform_masses(b)) {
        std::vector<int> assignment;
        return solve_assignment(cost, assignment) / a.K();
    }
    TransportSimplex ts(cost, a.masses, b.masses);
    return ts.solve();
}

double w2_squared_entropic(const DiscreteMixture& a, const DiscreteMixture& b, double reg,
                           int iterations) {
    a.validate();
    b.validate();
    if (a.d != b.d) throw InvalidInput("w2: ambient dimensions differ");
    Matrix cost = squared_cost(a, b);
    return entropic_transport_cost(cost, a.masses, b.masses, reg, iterations);
}

double accuracy(const Matrix& centers, const Matrix& truth, double radius) {
    if (centers.rows != truth.rows || centers.cols != truth.cols)
        throw InvalidInput("accuracy: centers and truth must have matching shapes");
    const std::size_t K = centers.rows;
    const std::size_t ds = std::min<std::size_t>(3, centers.cols);
    std::size_t hits = 0;
    for (std::size_t k = 0; k < K; ++k) {
        double s = 0.0;
        for (std::size_t t = 0; t < ds; ++t) {
            double diff = centers(k, t) - truth(k, t);
            s += diff * diff;
        }
        if (std::sqrt(s) <= radius) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(K);
}

double mse(const Matrix& centers, const Matrix& truth) {
    if (centers.rows != truth.rows || centers.cols != truth.cols)
        throw InvalidInput("mse: centers and truth must have matching shapes");
    double total = 0.0;
    for (std::size_t k = 0; k < centers.rows; ++k)
        for (std::size_t t = 0; t < centers.cols; ++t) {
            double diff = centers(k, t) - truth(k, t);
            total += diff * diff;
        }
    return total / static_cast<double>(centers.rows);
}

namespace {
Matrix assign_centers(const Matrix& centers, const Matrix& truth) {
    const std::size_t K = centers.rows, d = centers.cols;
    Matrix cost(K, K);
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                double diff = centers(i, t) - truth(j, t);
                s += diff * diff;
            }
            cost(i, j) = s;
        }
    std::vector<int> row_to_col;
    solve_assignment(cost, row_to_col);
    Matrix out(K, d);
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t t = 0; t < d; ++t) out(row_to_col[i], t) = centers(i, t);
    return out;
}
}  // namespace

double accuracy_assigned(const Matrix& centers, const Matrix& truth, double radius) {
    return accuracy(assign_centers(centers, truth), truth, radius);
}

double mse_assigned(const Matrix& centers, const Matrix& truth) {
    return mse(assign_centers(centers, truth), truth);
}

double xu_weighted_permutation_error(const Matrix& centers, const Matrix& truth,
                                     std::span<const double> true_weights) {
    const int K = static_cast<int>(truth.rows);
    if (K > 8) throw InvalidInput("xu error: K too large for permutation enumeration");
    std::vector<int> perm(K);
    std::iota(perm.begin(), perm.end(), 0);
    double best = kInf;
    do {
        double total = 0.0;
        for (int k = 0; k < K; ++k) {
            double s = 0.0;
            for (std::size_t t = 0; t < truth.cols; ++t) {
                double diff = centers(perm[k], t) - truth(k, t);
                s += diff * diff;
            }
            total += true_weights[k] * s;
        }
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

int convergence_iteration(std::span<const double> errors, double factor) {
    if (errors.empty()) throw InvalidInput("convergence_iteration: empty error sequence");
    const double bar = factor * errors.back();
    for (std::size_t t = 0; t < errors.size(); ++t)
        if (errors[t] < bar) return static_cast<int>(t);
    return static_cast<int>(errors.size()) - 1;
}

}  // namespace sinkem
