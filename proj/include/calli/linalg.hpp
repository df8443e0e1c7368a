#pragma once

#include <Eigen/Core>

#include "calli/parallel.hpp"

namespace calli {

using Matrix = Eigen::MatrixXd;  // column-major
using Vector = Eigen::VectorXd;

// C = A * B (optionally +=), parallelized over fixed column blocks of C.
// Block boundaries depend only on the shape, so the result is bit-identical
// for any worker count.
template <typename MA, typename MB>
void gemm(Matrix& C, const MA& A, const MB& B, bool accumulate = false) {
    const auto n = static_cast<std::size_t>(B.cols());
    if (C.rows() != A.rows() || C.cols() != B.cols()) C.resize(A.rows(), B.cols());
    constexpr std::size_t kGrain = 512;
    parallel_blocks(n, kGrain, [&](std::size_t lo, std::size_t hi) {
        const auto w = static_cast<Eigen::Index>(hi - lo);
        auto dst = C.middleCols(static_cast<Eigen::Index>(lo), w);
        if (accumulate)
            dst.noalias() += A * B.middleCols(static_cast<Eigen::Index>(lo), w);
        else
            dst.noalias() = A * B.middleCols(static_cast<Eigen::Index>(lo), w);
    });
}

}  // namespace calli
