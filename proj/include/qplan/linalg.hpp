#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "qplan/error.hpp"

namespace qplan {

using Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

constexpr bool is_power_of_two(Index n) noexcept
{
    return n > 0 && (n & (n - 1)) == 0;
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m)
{
    return m.allFinite();
}

/// Normalized Sylvester-Hadamard matrix of order n, so that H * H^T = I.
template <typename Scalar = double>
MatrixX<Scalar> hadamard_matrix(Index n)
{
    if (!is_power_of_two(n)) {
        throw Error(ErrorCode::UnsupportedDimension,
                    "Hadamard order must be a power of two, got " + std::to_string(n));
    }
    // Entry (i, j) of the unnormalized Sylvester matrix is (-1)^popcount(i & j).
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(n));
    MatrixX<Scalar> h(n, n);
    for (Index j = 0; j < n; ++j) {
        for (Index i = 0; i < n; ++i) {
            const auto bits = static_cast<std::uint64_t>(i & j);
            h(i, j) = (__builtin_popcountll(bits) & 1) ? -scale : scale;
        }
    }
    return h;
}

/// Thin SVD factors: m ~= left * diag(singular_values) * right.
template <typename Scalar>
struct SvdFactors {
    MatrixX<Scalar> left;   // rows x r, orthonormal columns
    MatrixX<Scalar> right;  // r x cols, orthonormal rows
    VectorX<Scalar> singular_values;

    Index rank() const { return singular_values.size(); }
    Index rows() const { return left.rows(); }
    Index cols() const { return right.cols(); }

    MatrixX<Scalar> reconstruct() const
    {
        return left * singular_values.asDiagonal() * right;
    }
};

namespace detail {

// Flip (u, v) pairs so that each u's first significant entry is nonnegative.
template <typename Scalar>
void canonicalize_signs(MatrixX<Scalar>& u, MatrixX<Scalar>& v_rows)
{
    for (Index k = 0; k < u.cols(); ++k) {
        for (Index i = 0; i < u.rows(); ++i) {
            const Scalar x = u(i, k);
            if (std::abs(x) > Scalar(1e-12)) {
                if (x < 0) {
                    u.col(k) = -u.col(k);
                    v_rows.row(k) = -v_rows.row(k);
                }
                break;
            }
        }
    }
}

// Replace near-null columns of q (flagged in `keep` as false) by unit vectors
// orthogonal to every other column.
template <typename Scalar>
void complete_orthonormal(MatrixX<Scalar>& q, const std::vector<bool>& keep)
{
    const Index m = q.rows();
    Index next_basis = 0;
    for (Index k = 0; k < q.cols(); ++k) {
        if (keep[static_cast<std::size_t>(k)]) {
            continue;
        }
        bool placed = false;
        while (!placed && next_basis < m) {
            VectorX<Scalar> cand = VectorX<Scalar>::Unit(m, next_basis++);
            for (int pass = 0; pass < 2; ++pass) {
                for (Index j = 0; j < q.cols(); ++j) {
                    if (j == k || (!keep[static_cast<std::size_t>(j)] && j > k)) {
                        continue;
                    }
                    cand -= q.col(j).dot(cand) * q.col(j);
                }
            }
            const Scalar nrm = cand.norm();
            if (nrm > Scalar(1e-6)) {
                q.col(k) = cand / nrm;
                placed = true;
            }
        }
    }
}

}  // namespace detail

/// Thin SVD by one-sided (Hestenes) Jacobi rotations.
///
/// Returns min(rows, cols) triplets, singular values sorted descending. Columns
/// belonging to numerically zero singular values are completed to an
/// orthonormal basis so that both factors stay orthonormal.
template <typename Derived>
SvdFactors<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& m)
{
    using Scalar = typename Derived::Scalar;
    if (!m.allFinite()) {
        throw Error(ErrorCode::InvalidInput, "svd: matrix has non-finite entries");
    }
    const bool transposed = m.rows() < m.cols();
    MatrixX<Scalar> a = transposed ? MatrixX<Scalar>(m.transpose()) : MatrixX<Scalar>(m);
    const Index rows = a.rows();
    const Index n = a.cols();
    MatrixX<Scalar> v = MatrixX<Scalar>::Identity(n, n);

    const Scalar eps = std::numeric_limits<Scalar>::epsilon();
    constexpr int kMaxSweeps = 80;
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (Index p = 0; p + 1 < n; ++p) {
            for (Index q = p + 1; q < n; ++q) {
                const Scalar alpha = a.col(p).squaredNorm();
                const Scalar beta = a.col(q).squaredNorm();
                const Scalar gamma = a.col(p).dot(a.col(q));
                if (gamma == Scalar(0) || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) {
                    continue;
                }
                rotated = true;
                const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
                const Scalar t = std::copysign(Scalar(1), zeta) /
                                 (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
                const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
                const Scalar s = c * t;
                for (Index i = 0; i < rows; ++i) {
                    const Scalar ap = a(i, p);
                    const Scalar aq = a(i, q);
                    a(i, p) = c * ap - s * aq;
                    a(i, q) = s * ap + c * aq;
                }
                for (Index i = 0; i < n; ++i) {
                    const Scalar vp = v(i, p);
                    const Scalar vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) {
            break;
        }
    }

    VectorX<Scalar> sv(n);
    for (Index k = 0; k < n; ++k) {
        sv(k) = a.col(k).norm();
    }
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index x, Index y) { return sv(x) > sv(y); });

    MatrixX<Scalar> u(rows, n);
    MatrixX<Scalar> vs(n, n);
    VectorX<Scalar> sorted(n);
    const Scalar cutoff = (n > 0 ? sv.maxCoeff() : Scalar(0)) * eps * Scalar(rows) * Scalar(4);
    std::vector<bool> keep(static_cast<std::size_t>(n));
    for (Index k = 0; k < n; ++k) {
        const Index src = order[static_cast<std::size_t>(k)];
        sorted(k) = sv(src);
        vs.col(k) = v.col(src);
        const bool significant = sv(src) > cutoff && sv(src) > Scalar(0);
        keep[static_cast<std::size_t>(k)] = significant;
        u.col(k) = significant ? VectorX<Scalar>(a.col(src) / sv(src)) : VectorX<Scalar>::Zero(rows);
    }
    detail::complete_orthonormal(u, keep);

    SvdFactors<Scalar> out;
    if (transposed) {
        // m^T = u S vs^T  =>  m = vs S u^T
        out.left = vs;
        out.right = u.transpose();
    } else {
        out.left = u;
        out.right = vs.transpose();
    }
    out.singular_values = sorted;
    detail::canonicalize_signs(out.left, out.right);
    return out;
}

/// Leading r triplets of the full SVD (Eckart-Young optimal rank-r approximation).
template <typename Derived>
SvdFactors<typename Derived::Scalar> truncated_svd(const Eigen::MatrixBase<Derived>& m, Index r)
{
    using Scalar = typename Derived::Scalar;
    if (r < 0 || r > std::min(m.rows(), m.cols())) {
        throw Error(ErrorCode::RankExceedsDimension,
                    "truncated_svd: rank " + std::to_string(r) + " exceeds min(" +
                        std::to_string(m.rows()) + ", " + std::to_string(m.cols()) + ")");
    }
    if (r == 0) {
        if (!m.allFinite()) {
            throw Error(ErrorCode::InvalidInput, "svd: matrix has non-finite entries");
        }
        return {MatrixX<Scalar>(m.rows(), 0), MatrixX<Scalar>(0, m.cols()), VectorX<Scalar>(0)};
    }
    auto full = svd(m);
    return {full.left.leftCols(r), full.right.topRows(r), full.singular_values.head(r)};
}

/// Non-overlapping tiling of a matrix into equally sized blocks, stored row-major
/// over the block grid.
template <typename Scalar>
struct BlockGrid {
    Index block_rows = 0;
    Index block_cols = 0;
    Index grid_rows = 0;
    Index grid_cols = 0;
    std::vector<MatrixX<Scalar>> blocks;

    const MatrixX<Scalar>& at(Index p, Index q) const
    {
        return blocks[static_cast<std::size_t>(p * grid_cols + q)];
    }
    MatrixX<Scalar>& at(Index p, Index q)
    {
        return blocks[static_cast<std::size_t>(p * grid_cols + q)];
    }
};

inline void check_block_size(Index rows, Index cols, Index s_o, Index s_i)
{
    if (s_o <= 0 || s_i <= 0 || rows % s_o != 0 || cols % s_i != 0) {
        throw Error(ErrorCode::InvalidBlockSize,
                    "block " + std::to_string(s_o) + "x" + std::to_string(s_i) +
                        " does not tile " + std::to_string(rows) + "x" + std::to_string(cols));
    }
}

template <typename Derived>
BlockGrid<typename Derived::Scalar> partition_blocks(const Eigen::MatrixBase<Derived>& m,
                                                      Index s_o, Index s_i)
{
    check_block_size(m.rows(), m.cols(), s_o, s_i);
    BlockGrid<typename Derived::Scalar> grid;
    grid.block_rows = s_o;
    grid.block_cols = s_i;
    grid.grid_rows = m.rows() / s_o;
    grid.grid_cols = m.cols() / s_i;
    grid.blocks.reserve(static_cast<std::size_t>(grid.grid_rows * grid.grid_cols));
    for (Index p = 0; p < grid.grid_rows; ++p) {
        for (Index q = 0; q < grid.grid_cols; ++q) {
            grid.blocks.emplace_back(m.block(p * s_o, q * s_i, s_o, s_i));
        }
    }
    return grid;
}

template <typename Scalar>
MatrixX<Scalar> assemble_blocks(const BlockGrid<Scalar>& grid)
{
    MatrixX<Scalar> m(grid.grid_rows * grid.block_rows, grid.grid_cols * grid.block_cols);
    for (Index p = 0; p < grid.grid_rows; ++p) {
        for (Index q = 0; q < grid.grid_cols; ++q) {
            m.block(p * grid.block_rows, q * grid.block_cols, grid.block_rows, grid.block_cols) =
                grid.at(p, q);
        }
    }
    return m;
}

/// Positive divisors of n in ascending order.
inline std::vector<Index> divisors(Index n)
{
    std::vector<Index> out;
    for (Index d = 1; d <= n; ++d) {
        if (n % d == 0) {
            out.push_back(d);
        }
    }
    return out;
}

}  // namespace qplan
