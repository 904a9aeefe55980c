#pragma once

#include <Eigen/Core>

#include <cstddef>

namespace centrifuge::kernels {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// C (+)= op(A) * op(B) on row-major buffers. Shapes are those of op(A) [m x k]
// and op(B) [k x n].
inline void gemm(const double* a, bool trans_a, const double* b, bool trans_b, double* c, std::size_t m,
                 std::size_t k, std::size_t n, bool accumulate) {
    const auto M = static_cast<Eigen::Index>(m);
    const auto K = static_cast<Eigen::Index>(k);
    const auto N = static_cast<Eigen::Index>(n);
    MatrixMap out(c, M, N);
    if (!accumulate) out.setZero();
    if (trans_a && trans_b) {
        out.noalias() += ConstMatrixMap(a, K, M).transpose() * ConstMatrixMap(b, N, K).transpose();
    } else if (trans_a) {
        out.noalias() += ConstMatrixMap(a, K, M).transpose() * ConstMatrixMap(b, K, N);
    } else if (trans_b) {
        out.noalias() += ConstMatrixMap(a, M, K) * ConstMatrixMap(b, N, K).transpose();
    } else {
        out.noalias() += ConstMatrixMap(a, M, K) * ConstMatrixMap(b, K, N);
    }
}

} // namespace centrifuge::kernels
