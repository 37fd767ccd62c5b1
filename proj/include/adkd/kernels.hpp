#pragma once

#include <span>

#include "adkd/tensor.hpp"

// Dense kernels behind the autodiff ops. The top-level versions parallelise
// over output rows with OpenMP; each output element is accumulated by a single
// thread in a fixed order, so results do not depend on the thread count.
// `reference` holds the plain serial versions the tests compare against.
namespace adkd::kernels {

// out = a · b
Tensor matmul(const Tensor& a, const Tensor& b);
// out = a · bᵀ
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// out = aᵀ · b
Tensor matmul_tn(const Tensor& a, const Tensor& b);

// Row-wise softmax. Columns with key_mask[c] == 0 get probability 0 and are
// excluded from the normaliser. An empty mask means no masking.
Tensor softmax_rows(const Tensor& x, std::span<const unsigned char> key_mask);
Tensor log_softmax_rows(const Tensor& x);

// GELU, tanh approximation, and its first two derivatives.
double gelu(double x);
double gelu_grad(double x);
double gelu_grad2(double x);

Tensor gelu(const Tensor& x);
Tensor gelu_grad(const Tensor& x);
Tensor gelu_grad2(const Tensor& x);

namespace reference {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x, std::span<const unsigned char> key_mask);
Tensor gelu(const Tensor& x);

}  // namespace reference

}  // namespace adkd::kernels
