#pragma once

#include <vector>

#include "vidqa/rng.hpp"
#include "vidqa/tensor.hpp"

namespace vidqa {

// Elementwise arithmetic (shapes must match exactly).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Multiply by a compile-time constant / by a scalar tensor.
Tensor scale(const Tensor& a, double c);
Tensor scale_by(const Tensor& a, const Tensor& s);
// Add a length-c vector to every row of an [r x c] matrix.
Tensor add_bias(const Tensor& m, const Tensor& v);

// Rank-2 linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Row/column rearrangement. gather_rows duplicates are allowed; backward
// scatter-adds.
Tensor gather_rows(const Tensor& a, std::vector<std::size_t> idx);
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
// [c] -> [1 x c] and row extraction to rank-1.
Tensor as_row(const Tensor& v);
Tensor row_vector(const Tensor& a, std::size_t r);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mean_rows(const Tensor& a);  // [r x c] -> [1 x c]

// Nonlinearities (exact-erf gelu; numerically stable sigmoid).
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp_elem(const Tensor& a);
Tensor log_elem(const Tensor& a);

// Temperature softmax with max subtraction. Rank-1 input, or per-row over a
// rank-2 input. temperature must be positive (std::domain_error otherwise).
Tensor softmax(const Tensor& logits, double temperature = 1.0);
Tensor softmax_rows(const Tensor& a, double temperature = 1.0);

// Per-row L2 normalization; a zero-norm row raises NumericError.
Tensor l2_normalize_rows(const Tensor& a);

// Per-row layer normalization with learnable gain/bias.
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);

// Inverted dropout; identity when training is false or rate is 0.
Tensor dropout(const Tensor& a, double rate, RngStream& rng, bool training);

// Cross entropy -sum(target * log(clamp(predicted, 1e-12))) between two
// rank-1 distributions. Both must be nonnegative and sum to 1 within 1e-6.
Tensor soft_cross_entropy(const Tensor& target, const Tensor& predicted);

// Row gather from an embedding table by token id.
Tensor embed_rows(const Tensor& table, const std::vector<int>& ids);

bool all_finite(const Tensor& t);

}  // namespace vidqa
