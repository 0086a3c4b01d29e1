#include "medvl/autograd.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "medvl/errors.hpp"

namespace medvl {

Var Tape::push(Matrix value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(Parameter& p) {
  Parameter* param = &p;
  return push(p.value, p.trainable, [param](Tape& t, std::size_t self) { param->grad += t.grad(self); });
}

Matrix& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  if (!nodes_[v.id].requires_grad) return;
  grad(v.id) += g;
}

void Tape::backward(Var root, double seed) {
  if (nodes_[root.id].value.size() != 1) throw ShapeError("backward root must be a scalar");
  if (!nodes_[root.id].requires_grad) return;
  grad(root.id)(0, 0) += seed;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.has_grad && n.backward) n.backward(*this, i);
  }
}

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw ShapeError(what);
}

}  // namespace

Var matmul_nt(Tape& t, Var x, Var w) {
  const Matrix& xv = t.value(x);
  const Matrix& wv = t.value(w);
  require(xv.cols() == wv.cols(), "matmul_nt: inner dimensions differ");
  Matrix out = xv * wv.transpose();
  const bool rg = t.requires_grad(x) || t.requires_grad(w);
  return t.push(std::move(out), rg, [x, w](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(x)) t.accumulate(x, g * t.value(w));
    if (t.requires_grad(w)) t.accumulate(w, g.transpose() * t.value(x));
  });
}

Var matmul(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require(av.cols() == bv.rows(), "matmul: inner dimensions differ");
  Matrix out = av * bv;
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var add(Tape& t, Var a, Var b) {
  require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(),
          "add: shapes differ");
  Matrix out = t.value(a) + t.value(b);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var add_row(Tape& t, Var x, Var row) {
  const Matrix& xv = t.value(x);
  const Matrix& rv = t.value(row);
  require(rv.rows() == 1 && rv.cols() == xv.cols(), "add_row: row shape differs");
  Matrix out = xv.rowwise() + rv.row(0);
  const bool rg = t.requires_grad(x) || t.requires_grad(row);
  return t.push(std::move(out), rg, [x, row](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    t.accumulate(x, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var scale(Tape& t, Var x, double s) {
  Matrix out = t.value(x) * s;
  return t.push(std::move(out), t.requires_grad(x),
                [x, s](Tape& t, std::size_t self) { t.accumulate(x, t.grad(self) * s); });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const Matrix& xv = t.value(x);
  const Matrix& gv = t.value(gamma);
  const Matrix& bv = t.value(beta);
  const Eigen::Index d = xv.cols();
  require(gv.rows() == 1 && gv.cols() == d && bv.rows() == 1 && bv.cols() == d,
          "layer_norm: affine shape differs");
  auto xhat = std::make_shared<Matrix>(xv.rows(), d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (xv.row(r).array() - mu) * (*inv_std)(r);
  }
  Matrix out = (xhat->array().rowwise() * gv.row(0).array()).rowwise() + bv.row(0).array();
  const bool rg = t.requires_grad(x) || t.requires_grad(gamma) || t.requires_grad(beta);
  return t.push(std::move(out), rg, [x, gamma, beta, xhat, inv_std](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(gamma)) t.accumulate(gamma, (g.array() * xhat->array()).colwise().sum().matrix());
    if (t.requires_grad(beta)) t.accumulate(beta, g.colwise().sum());
    if (t.requires_grad(x)) {
      const Matrix dxhat = g.array().rowwise() * t.value(gamma).row(0).array();
      Matrix dx(g.rows(), g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = (dxhat.row(r).array() * xhat->row(r).array()).mean();
        dx.row(r) = (*inv_std)(r) * (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2);
      }
      t.accumulate(x, dx);
    }
  });
}

Var gelu(Tape& t, Var x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  const Matrix& xv = t.value(x);
  Matrix out = xv.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v))); });
  return t.push(std::move(out), t.requires_grad(x), [x](Tape& t, std::size_t self) {
    const Matrix d = t.value(x).unaryExpr([](double v) {
      const double th = std::tanh(k * (v + c * v * v * v));
      return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * k * (1.0 + 3.0 * c * v * v);
    });
    t.accumulate(x, t.grad(self).cwiseProduct(d));
  });
}

Var attention(Tape& t, Var q, Var k, Var v, int heads, bool causal) {
  const Matrix& qv = t.value(q);
  const Matrix& kv = t.value(k);
  const Matrix& vv = t.value(v);
  require(qv.rows() == kv.rows() && kv.rows() == vv.rows(), "attention: sequence lengths differ");
  require(qv.cols() == kv.cols() && kv.cols() == vv.cols(), "attention: widths differ");
  require(heads >= 1 && qv.cols() % heads == 0, "attention: width not divisible by heads");
  const Eigen::Index n = qv.rows();
  const Eigen::Index dh = qv.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<std::vector<Matrix>>(heads);
  Matrix out(n, qv.cols());
  for (int h = 0; h < heads; ++h) {
    Matrix s = qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose() * inv_sqrt;
    if (causal) {
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) s(i, j) = -std::numeric_limits<double>::infinity();
      }
    }
    (*probs)[h] = softmax_rows(s);
    out.middleCols(h * dh, dh) = (*probs)[h] * vv.middleCols(h * dh, dh);
  }
  const bool rg = t.requires_grad(q) || t.requires_grad(k) || t.requires_grad(v);
  return t.push(std::move(out), rg, [q, k, v, heads, dh, inv_sqrt, probs](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& qv = t.value(q);
    const Matrix& kv = t.value(k);
    const Matrix& vv = t.value(v);
    Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
    Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
    Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
    for (int h = 0; h < heads; ++h) {
      const Matrix& p = (*probs)[h];
      const Matrix go = g.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh) = p.transpose() * go;
      const Matrix dp = go * vv.middleCols(h * dh, dh).transpose();
      const Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
      const Matrix ds = p.array() * (dp.array().colwise() - rowdot.array());
      dq.middleCols(h * dh, dh) = ds * kv.middleCols(h * dh, dh) * inv_sqrt;
      dk.middleCols(h * dh, dh) = ds.transpose() * qv.middleCols(h * dh, dh) * inv_sqrt;
    }
    t.accumulate(q, dq);
    t.accumulate(k, dk);
    t.accumulate(v, dv);
  });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Eigen::Index cols = t.value(parts.front()).cols();
  Eigen::Index rows = 0;
  bool rg = false;
  for (Var p : parts) {
    require(t.value(p).cols() == cols, "concat_rows: widths differ");
    rows += t.value(p).rows();
    rg = rg || t.requires_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, t.value(p).rows()) = t.value(p);
    r += t.value(p).rows();
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  return t.push(std::move(out), rg, [owned](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Eigen::Index r = 0;
    for (Var p : owned) {
      const Eigen::Index n = t.value(p).rows();
      if (t.requires_grad(p)) t.accumulate(p, g.middleRows(r, n));
      r += n;
    }
  });
}

Var gather_rows(Tape& t, Var table, std::span<const int> ids) {
  const Matrix& tv = t.value(table);
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < tv.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> owned(ids.begin(), ids.end());
  return t.push(std::move(out), t.requires_grad(table), [table, owned](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix dt = Matrix::Zero(t.value(table).rows(), t.value(table).cols());
    for (std::size_t i = 0; i < owned.size(); ++i) dt.row(owned[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(table, dt);
  });
}

Var reshape(Tape& t, Var x, Eigen::Index rows, Eigen::Index cols) {
  const Matrix& xv = t.value(x);
  require(rows * cols == xv.size(), "reshape: element count differs");
  Matrix out = Eigen::Map<const Matrix>(xv.data(), rows, cols);
  return t.push(std::move(out), t.requires_grad(x), [x](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& xv = t.value(x);
    t.accumulate(x, Eigen::Map<const Matrix>(g.data(), xv.rows(), xv.cols()));
  });
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Var weighted_nll(Tape& t, Var logits, std::span<const int> labels, double weight) {
  const Matrix& lv = t.value(logits);
  require(static_cast<Eigen::Index>(labels.size()) == lv.rows(), "weighted_nll: one label per row required");
  double total = 0.0;
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0) continue;
    require(y < lv.cols(), "weighted_nll: label out of range");
    const double m = lv.row(r).maxCoeff();
    const double lse = m + std::log((lv.row(r).array() - m).exp().sum());
    total += lse - lv(r, y);
  }
  Matrix out(1, 1);
  out(0, 0) = weight * total;
  std::vector<int> owned(labels.begin(), labels.end());
  return t.push(std::move(out), t.requires_grad(logits), [logits, owned, weight](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0) * weight;
    const Matrix& lv = t.value(logits);
    Matrix d = Matrix::Zero(lv.rows(), lv.cols());
    for (Eigen::Index r = 0; r < lv.rows(); ++r) {
      const int y = owned[static_cast<std::size_t>(r)];
      if (y < 0) continue;
      const double m = lv.row(r).maxCoeff();
      RowVector p = (lv.row(r).array() - m).exp();
      p /= p.sum();
      p(y) -= 1.0;
      d.row(r) = g * p;
    }
    t.accumulate(logits, d);
  });
}

}  // namespace medvl
