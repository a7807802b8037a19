#pragma once

#include <cstddef>
#include <vector>

#include "gvit/tensor.hpp"

namespace gvit {

enum class Activation { relu, gelu };

/// a[m×k] · b[k×n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product of equal shapes.
Tensor mul(const Tensor& a, const Tensor& b);
/// x[m×n] + bias broadcast over rows; bias holds n values (any shape).
Tensor add_row_vector(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);
/// Multiplies column j of x[m×n] by factors[j]. factors are constants.
Tensor scale_columns(const Tensor& x, const std::vector<double>& factors);

Tensor activation(const Tensor& x, Activation kind);
Tensor relu(const Tensor& x);
/// tanh approximation: 0.5 x (1 + tanh(√(2/π)(x + 0.044715 x³))).
Tensor gelu(const Tensor& x);
double gelu_value(double x);

/// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);

/// Row standardization (population variance) followed by gain and bias.
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);

/// Sum of all elements as a 1-element tensor.
Tensor sum(const Tensor& x);

}  // namespace gvit
