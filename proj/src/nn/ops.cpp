#include "pinv/nn/ops.hpp"

#include <cmath>
#include <sstream>
#include <string>

namespace pinv::nn {
namespace {

std::string shape(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape(a.value()) + " vs " +
                         shape(b.value()));
  }
}

void row_broadcast(Var x, Var row, const char* op) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw DimensionError(std::string(op) + ": expected 1x" + std::to_string(x.cols()) +
                         " row, got " + shape(row.value()));
  }
}

}  // namespace

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() + b.value(), {a, b},
                         [ia, ib](Tape& t, const Matrix&, const Matrix& g) {
                           t.accumulate(ia, g);
                           t.accumulate(ib, g);
                         });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() - b.value(), {a, b},
                         [ia, ib](Tape& t, const Matrix&, const Matrix& g) {
                           t.accumulate(ia, g);
                           t.accumulate(ib, -g);
                         });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b},
                         [ia, ib](Tape& t, const Matrix&, const Matrix& g) {
                           if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                           if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                         });
}

Var div(Var a, Var b) {
  same_shape(a, b, "div");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value().cwiseQuotient(b.value()), {a, b},
                         [ia, ib](Tape& t, const Matrix& out, const Matrix& g) {
                           const Matrix& bv = t.value(ib);
                           if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseQuotient(bv));
                           if (t.requires_grad(ib)) {
                             t.accumulate(ib, -g.cwiseProduct(out).cwiseQuotient(bv));
                           }
                         });
}

Var scale(Var a, double s) {
  const auto ia = a.id();
  return a.tape().record(a.value() * s, {a},
                         [ia, s](Tape& t, const Matrix&, const Matrix& g) { t.accumulate(ia, g * s); });
}

Var add_scalar(Var a, double s) {
  const auto ia = a.id();
  return a.tape().record(a.value().array() + s, {a},
                         [ia](Tape& t, const Matrix&, const Matrix& g) { t.accumulate(ia, g); });
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape(a.value()) + " * " + shape(b.value()));
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() * b.value(), {a, b},
                         [ia, ib](Tape& t, const Matrix&, const Matrix& g) {
                           if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
                           if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
                         });
}

Var add_row(Var x, Var row) {
  row_broadcast(x, row, "add_row");
  const auto ix = x.id(), ir = row.id();
  Matrix out = x.value().rowwise() + row.value().row(0);
  return x.tape().record(std::move(out), {x, row},
                         [ix, ir](Tape& t, const Matrix&, const Matrix& g) {
                           t.accumulate(ix, g);
                           if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
                         });
}

Var sub_row(Var x, Var row) {
  row_broadcast(x, row, "sub_row");
  const auto ix = x.id(), ir = row.id();
  Matrix out = x.value().rowwise() - row.value().row(0);
  return x.tape().record(std::move(out), {x, row},
                         [ix, ir](Tape& t, const Matrix&, const Matrix& g) {
                           t.accumulate(ix, g);
                           if (t.requires_grad(ir)) t.accumulate(ir, -g.colwise().sum());
                         });
}

Var mul_row(Var x, Var row) {
  row_broadcast(x, row, "mul_row");
  const auto ix = x.id(), ir = row.id();
  Matrix out = x.value().array().rowwise() * row.value().row(0).array();
  return x.tape().record(std::move(out), {x, row},
                         [ix, ir](Tape& t, const Matrix&, const Matrix& g) {
                           const Matrix& rv = t.value(ir);
                           if (t.requires_grad(ix)) {
                             Matrix gx = g.array().rowwise() * rv.row(0).array();
                             t.accumulate(ix, gx);
                           }
                           if (t.requires_grad(ir)) {
                             t.accumulate(ir, g.cwiseProduct(t.value(ix)).colwise().sum());
                           }
                         });
}

Var mul_col(Var x, Var col) {
  if (col.cols() != 1 || col.rows() != x.rows()) {
    throw DimensionError("mul_col: expected " + std::to_string(x.rows()) + "x1 column, got " +
                         shape(col.value()));
  }
  const auto ix = x.id(), ic = col.id();
  Matrix out = x.value().array().colwise() * col.value().col(0).array();
  return x.tape().record(std::move(out), {x, col},
                         [ix, ic](Tape& t, const Matrix&, const Matrix& g) {
                           const Matrix& cv = t.value(ic);
                           if (t.requires_grad(ix)) {
                             Matrix gx = g.array().colwise() * cv.col(0).array();
                             t.accumulate(ix, gx);
                           }
                           if (t.requires_grad(ic)) {
                             t.accumulate(ic, g.cwiseProduct(t.value(ix)).rowwise().sum());
                           }
                         });
}

Var relu(Var a) {
  const auto ia = a.id();
  return a.tape().record(a.value().cwiseMax(0.0), {a},
                         [ia](Tape& t, const Matrix&, const Matrix& g) {
                           const Matrix& x = t.value(ia);
                           t.accumulate(ia, (x.array() > 0.0).select(g, 0.0));
                         });
}

Var elu_plus1(Var a) {
  const auto ia = a.id();
  Matrix out = a.value().unaryExpr([](double x) { return x > 0.0 ? x + 1.0 : std::exp(x); });
  return a.tape().record(std::move(out), {a},
                         [ia](Tape& t, const Matrix& out, const Matrix& g) {
                           const Matrix& x = t.value(ia);
                           // d/dx = 1 for x > 0, exp(x) = out otherwise.
                           Matrix d = (x.array() > 0.0).select(Matrix::Ones(x.rows(), x.cols()), out);
                           t.accumulate(ia, g.cwiseProduct(d));
                         });
}

Var exp(Var a) {
  const auto ia = a.id();
  return a.tape().record(a.value().array().exp().matrix(), {a},
                         [ia](Tape& t, const Matrix& out, const Matrix& g) {
                           t.accumulate(ia, g.cwiseProduct(out));
                         });
}

Var tanh(Var a) {
  const auto ia = a.id();
  return a.tape().record(a.value().array().tanh().matrix(), {a},
                         [ia](Tape& t, const Matrix& out, const Matrix& g) {
                           t.accumulate(ia, g.cwiseProduct((1.0 - out.array().square()).matrix()));
                         });
}

Var log(Var a) {
  const auto ia = a.id();
  return a.tape().record(a.value().array().log().matrix(), {a},
                         [ia](Tape& t, const Matrix&, const Matrix& g) {
                           t.accumulate(ia, g.cwiseQuotient(t.value(ia)));
                         });
}

Var square(Var a) {
  const auto ia = a.id();
  return a.tape().record(a.value().array().square().matrix(), {a},
                         [ia](Tape& t, const Matrix&, const Matrix& g) {
                           t.accumulate(ia, 2.0 * g.cwiseProduct(t.value(ia)));
                         });
}

Var pow(Var a, double p) {
  const auto ia = a.id();
  return a.tape().record(a.value().array().pow(p).matrix(), {a},
                         [ia, p](Tape& t, const Matrix&, const Matrix& g) {
                           Matrix d = p * t.value(ia).array().pow(p - 1.0);
                           t.accumulate(ia, g.cwiseProduct(d));
                         });
}

Var clamp_min(Var a, double lo) {
  const auto ia = a.id();
  return a.tape().record(a.value().cwiseMax(lo), {a},
                         [ia, lo](Tape& t, const Matrix&, const Matrix& g) {
                           const Matrix& x = t.value(ia);
                           t.accumulate(ia, (x.array() >= lo).select(g, 0.0));
                         });
}

namespace {

Matrix softmax_value(const Matrix& x) {
  Matrix out = x.colwise() - x.rowwise().maxCoeff();
  out = out.array().exp();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

Vector logsumexp_value(const Matrix& x) {
  Vector mx = x.rowwise().maxCoeff();
  Vector s = (x.colwise() - mx).array().exp().rowwise().sum();
  return mx.array() + s.array().log();
}

}  // namespace

Var softmax_rows(Var a) {
  const auto ia = a.id();
  return a.tape().record(softmax_value(a.value()), {a},
                         [ia](Tape& t, const Matrix& s, const Matrix& g) {
                           Vector dot = g.cwiseProduct(s).rowwise().sum();
                           Matrix gx = s.array() * (g.colwise() - dot).array();
                           t.accumulate(ia, gx);
                         });
}

Var log_softmax_rows(Var a) {
  const auto ia = a.id();
  Matrix out = a.value().colwise() - logsumexp_value(a.value());
  return a.tape().record(std::move(out), {a},
                         [ia](Tape& t, const Matrix& ls, const Matrix& g) {
                           Vector gsum = g.rowwise().sum();
                           Matrix s = ls.array().exp();
                           Matrix gx = g - Matrix(s.array().colwise() * gsum.array());
                           t.accumulate(ia, gx);
                         });
}

Var logsumexp_rows(Var a) {
  const auto ia = a.id();
  Matrix out = logsumexp_value(a.value());
  return a.tape().record(std::move(out), {a},
                         [ia](Tape& t, const Matrix& lse, const Matrix& g) {
                           const Matrix& x = t.value(ia);
                           Matrix w = (x.colwise() - lse.col(0)).array().exp();
                           Matrix gx = w.array().colwise() * g.col(0).array();
                           t.accumulate(ia, gx);
                         });
}

Var sum(Var a) {
  const auto ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(std::move(out), {a},
                         [ia](Tape& t, const Matrix&, const Matrix& g) {
                           const Matrix& x = t.value(ia);
                           t.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
                         });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw DimensionError("mean of empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var row_sums(Var a) {
  const auto ia = a.id();
  Matrix out = a.value().rowwise().sum();
  return a.tape().record(std::move(out), {a},
                         [ia](Tape& t, const Matrix&, const Matrix& g) {
                           const Index c = t.value(ia).cols();
                           t.accumulate(ia, g.col(0).replicate(1, c));
                         });
}

Var col_means(Var a) {
  const auto ia = a.id();
  if (a.rows() == 0) throw DimensionError("col_means of empty batch");
  Matrix out = a.value().colwise().mean();
  return a.tape().record(std::move(out), {a},
                         [ia](Tape& t, const Matrix&, const Matrix& g) {
                           const Index r = t.value(ia).rows();
                           t.accumulate(ia, (g / static_cast<double>(r)).replicate(r, 1));
                         });
}

Var group_sum_cols(Var a, Index group) {
  if (group <= 0 || a.cols() % group != 0) {
    throw DimensionError("group_sum_cols: " + std::to_string(a.cols()) + " columns not divisible by " +
                         std::to_string(group));
  }
  const auto ia = a.id();
  const Index k = a.cols() / group;
  Matrix out(a.rows(), k);
  for (Index j = 0; j < k; ++j) out.col(j) = a.value().middleCols(j * group, group).rowwise().sum();
  return a.tape().record(std::move(out), {a},
                         [ia, group, k](Tape& t, const Matrix&, const Matrix& g) {
                           Matrix gx(g.rows(), k * group);
                           for (Index j = 0; j < k; ++j) gx.middleCols(j * group, group) = g.col(j).replicate(1, group);
                           t.accumulate(ia, gx);
                         });
}

Var col_block(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw DimensionError("col_block out of range");
  }
  const auto ia = a.id();
  return a.tape().record(a.value().middleCols(start, count), {a},
                         [ia, start, count](Tape& t, const Matrix&, const Matrix& g) {
                           const Matrix& x = t.value(ia);
                           Matrix gx = Matrix::Zero(x.rows(), x.cols());
                           gx.middleCols(start, count) = g;
                           t.accumulate(ia, gx);
                         });
}

Var concat_cols(Var a, Var b) {
  if (a.rows() != b.rows()) throw DimensionError("concat_cols: row mismatch");
  const auto ia = a.id(), ib = b.id();
  const Index ca = a.cols(), cb = b.cols();
  Matrix out(a.rows(), ca + cb);
  out << a.value(), b.value();
  return a.tape().record(std::move(out), {a, b},
                         [ia, ib, ca, cb](Tape& t, const Matrix&, const Matrix& g) {
                           if (t.requires_grad(ia)) t.accumulate(ia, g.leftCols(ca));
                           if (t.requires_grad(ib)) t.accumulate(ib, g.rightCols(cb));
                         });
}

Var permute_cols(Var a, std::span<const int> perm) {
  if (static_cast<Index>(perm.size()) != a.cols()) throw DimensionError("permute_cols: bad permutation size");
  const auto ia = a.id();
  std::vector<int> p(perm.begin(), perm.end());
  Matrix out(a.rows(), a.cols());
  for (Index j = 0; j < a.cols(); ++j) out.col(j) = a.value().col(p[j]);
  return a.tape().record(std::move(out), {a},
                         [ia, p = std::move(p)](Tape& t, const Matrix&, const Matrix& g) {
                           Matrix gx(g.rows(), g.cols());
                           for (Index j = 0; j < g.cols(); ++j) gx.col(p[j]) = g.col(j);
                           t.accumulate(ia, gx);
                         });
}

Var softmax_cross_entropy(Var logits, const Matrix& targets) {
  Tape& t = logits.tape();
  Var y = t.constant(targets);
  Var ll = mul(log_softmax_rows(logits), y);
  return scale(sum(ll), -1.0 / static_cast<double>(logits.rows()));
}

}  // namespace pinv::nn
