#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace q2l::gemm {

/// C[m x n] += A[m x k] * B[k x n], all row-major and contiguous.
///
/// i-k-j ordering keeps the innermost loop a contiguous axpy over C and B rows,
/// which the compiler vectorizes without reassociating any sum.
template <class T>
void nn_accumulate(std::size_t m, std::size_t k, std::size_t n, const T* __restrict a, const T* __restrict b,
                   T* __restrict c) {
    for (std::size_t i = 0; i < m; ++i) {
        T* __restrict crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T s = arow[p];
            if (s == T(0)) continue;
            const T* __restrict brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        }
    }
}

template <class T>
std::vector<T> transposed(std::size_t rows, std::size_t cols, const T* src) {
    std::vector<T> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = src[i * cols + j];
    return out;
}

}  // namespace q2l::gemm
