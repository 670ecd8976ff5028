// Differentiable ops on Tape variables. Batches are rows, features are columns.
#pragma once

#include "pinv/nn/tape.hpp"

#include <span>
#include <vector>

namespace pinv::nn {

// Arithmetic. Binary ops require equal shapes unless noted.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var matmul(Var a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

// Broadcasting: `row` is 1 x cols and is applied to every row of `x`;
// `col` is rows x 1 and is applied to every column.
Var add_row(Var x, Var row);
Var sub_row(Var x, Var row);
Var mul_row(Var x, Var row);
Var mul_col(Var x, Var col);

// Elementwise.
Var relu(Var a);
Var elu_plus1(Var a);
Var exp(Var a);
Var tanh(Var a);
Var log(Var a);
Var square(Var a);
Var pow(Var a, double p);
Var clamp_min(Var a, double lo);

// Row-wise.
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var logsumexp_rows(Var a);

// Reductions and reshapes.
Var sum(Var a);
Var mean(Var a);
Var row_sums(Var a);
Var col_means(Var a);
/// Sums consecutive blocks of `group` columns: rows x (k*group) -> rows x k.
Var group_sum_cols(Var a, Index group);
Var col_block(Var a, Index start, Index count);
Var concat_cols(Var a, Var b);
/// out.col(j) = a.col(perm[j]).
Var permute_cols(Var a, std::span<const int> perm);

/// Mean-reduced softmax cross-entropy of `logits` against one-hot `targets`.
Var softmax_cross_entropy(Var logits, const Matrix& targets);

}  // namespace pinv::nn
