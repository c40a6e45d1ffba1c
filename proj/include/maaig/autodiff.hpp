#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape records operations as they are evaluated; backward()
// replays them in reverse and accumulates gradients. Parameters are bound by
// pointer: their values are read in place and their gradients are added to a
// caller-owned sink after the backward pass.

#include <cmath>
#include <string>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace maaig::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using IndexMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value) { return push(std::move(value), false); }

  // Reads `value` in place; `grad_sink` (if any) receives d(loss)/d(value).
  Var parameter(const Matrix& value, Matrix* grad_sink) {
    Node n;
    n.external = &value;
    n.sink = grad_sink;
    n.requires_grad = record_ && grad_sink != nullptr;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix& value(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.external ? *n.external : n.value;
  }

  double scalar(Var v) const { return value(v)(0, 0); }

  // Reverse sweep from a 1x1 node.
  void backward(Var loss) {
    if (!record_) throw std::logic_error("backward() on a non-recording tape");
    if (value(loss).size() != 1) throw std::invalid_argument("backward() needs a scalar node");
    for (auto& n : nodes_) {
      if (n.requires_grad) {
        const Matrix& v = n.external ? *n.external : n.value;
        n.grad.setZero(v.rows(), v.cols());
      }
    }
    if (!node(loss).requires_grad) return;
    node(loss).grad(0, 0) = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.requires_grad && n.backward) n.backward();
    }
    for (auto& n : nodes_) {
      if (n.sink && n.requires_grad) {
        if (n.sink->size() == 0) n.sink->setZero(n.grad.rows(), n.grad.cols());
        *n.sink += n.grad;
      }
    }
  }

  // ---- operations ------------------------------------------------------

  Var matmul(Var a, Var b) {
    Var out = push(value(a) * value(b), needs(a, b));
    on_backward(out, [this, a, b, out] {
      const Matrix& g = grad(out);
      if (node(a).requires_grad) grad(a).noalias() += g * value(b).transpose();
      if (node(b).requires_grad) grad(b).noalias() += value(a).transpose() * g;
    });
    return out;
  }

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Var out = push(value(a) + value(b), needs(a, b));
    on_backward(out, [this, a, b, out] {
      if (node(a).requires_grad) grad(a) += grad(out);
      if (node(b).requires_grad) grad(b) += grad(out);
    });
    return out;
  }

  // a (n x m) plus the row vector b (1 x m) on every row.
  Var add_row(Var a, Var b) {
    if (value(b).rows() != 1 || value(b).cols() != value(a).cols()) {
      throw std::invalid_argument("add_row: shape mismatch");
    }
    Matrix v = value(a);
    v.rowwise() += value(b).row(0);
    Var out = push(std::move(v), needs(a, b));
    on_backward(out, [this, a, b, out] {
      if (node(a).requires_grad) grad(a) += grad(out);
      if (node(b).requires_grad) grad(b) += grad(out).colwise().sum();
    });
    return out;
  }

  Var linear(Var x, Var w, Var bias = {}) {
    Var y = matmul(x, w);
    return bias.valid() ? add_row(y, bias) : y;
  }

  Var scale(Var a, double s) {
    Var out = push(value(a) * s, needs(a));
    on_backward(out, [this, a, out, s] { grad(a) += s * grad(out); });
    return out;
  }

  // Elementwise product with a constant matrix (dropout masks).
  Var mul_const(Var a, Matrix mask) {
    Var out = push(value(a).cwiseProduct(mask), needs(a));
    on_backward(out, [this, a, out, m = std::move(mask)] { grad(a) += grad(out).cwiseProduct(m); });
    return out;
  }

  Var relu(Var a) {
    Var out = push(value(a).cwiseMax(0.0), needs(a));
    on_backward(out, [this, a, out] {
      grad(a) += (value(a).array() > 0.0).select(grad(out), 0.0);
    });
    return out;
  }

  // Row-wise layer normalization with learned scale and shift (1 x m each).
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
    const Matrix& xv = value(x);
    const auto m = static_cast<double>(xv.cols());
    Eigen::VectorXd inv_std(xv.rows());
    Matrix xhat(xv.rows(), xv.cols());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
      const double mean = xv.row(r).mean();
      const double var = (xv.row(r).array() - mean).square().sum() / m;
      inv_std(r) = 1.0 / std::sqrt(var + eps);
      xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
    }
    Matrix y = xhat.array().rowwise() * value(gamma).row(0).array();
    y.rowwise() += value(beta).row(0);
    Var out = push(std::move(y), needs(x, gamma, beta));
    on_backward(out, [this, x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), m] {
      const Matrix& g = grad(out);
      if (node(gamma).requires_grad) grad(gamma) += g.cwiseProduct(xhat).colwise().sum();
      if (node(beta).requires_grad) grad(beta) += g.colwise().sum();
      if (node(x).requires_grad) {
        Matrix gx = g.array().rowwise() * value(gamma).row(0).array();
        for (Eigen::Index r = 0; r < gx.rows(); ++r) {
          const double mg = gx.row(r).sum() / m;
          const double mgx = gx.row(r).dot(xhat.row(r)) / m;
          grad(x).row(r).array() += inv_std(r) * (gx.row(r).array() - mg - xhat.row(r).array() * mgx);
        }
      }
    });
    return out;
  }

  // Row-wise RMS normalization with a learned scale (no centering, no shift).
  Var rms_norm(Var x, Var gamma, double eps = 1e-6) {
    const Matrix& xv = value(x);
    const auto m = static_cast<double>(xv.cols());
    Eigen::VectorXd inv_rms(xv.rows());
    Matrix xhat(xv.rows(), xv.cols());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
      inv_rms(r) = 1.0 / std::sqrt(xv.row(r).squaredNorm() / m + eps);
      xhat.row(r) = xv.row(r) * inv_rms(r);
    }
    Matrix y = xhat.array().rowwise() * value(gamma).row(0).array();
    Var out = push(std::move(y), needs(x, gamma));
    on_backward(out, [this, x, gamma, out, xhat = std::move(xhat), inv_rms = std::move(inv_rms), m] {
      const Matrix& g = grad(out);
      if (node(gamma).requires_grad) grad(gamma) += g.cwiseProduct(xhat).colwise().sum();
      if (node(x).requires_grad) {
        Matrix gx = g.array().rowwise() * value(gamma).row(0).array();
        for (Eigen::Index r = 0; r < gx.rows(); ++r) {
          const double mgx = gx.row(r).dot(xhat.row(r)) / m;
          grad(x).row(r).array() += inv_rms(r) * (gx.row(r).array() - xhat.row(r).array() * mgx);
        }
      }
    });
    return out;
  }

  // Rows of `table` selected by `ids`.
  Var embedding(Var table, std::vector<int> ids) {
    const Matrix& t = value(table);
    Matrix v(static_cast<Eigen::Index>(ids.size()), t.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= t.rows()) throw std::out_of_range("embedding: id out of range");
      v.row(static_cast<Eigen::Index>(i)) = t.row(ids[i]);
    }
    Var out = push(std::move(v), needs(table));
    on_backward(out, [this, table, out, ids = std::move(ids)] {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        grad(table).row(ids[i]) += grad(out).row(static_cast<Eigen::Index>(i));
      }
    });
    return out;
  }

  // Gathers a learned (buckets x heads) table into a stacked per-head bias of
  // shape (heads * n) x m, where buckets is n x m.
  Var gather_bias(Var table, IndexMatrix buckets) {
    const Matrix& t = value(table);
    const Eigen::Index heads = t.cols(), n = buckets.rows(), m = buckets.cols();
    Matrix v(heads * n, m);
    for (Eigen::Index h = 0; h < heads; ++h)
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j) v(h * n + i, j) = t(buckets(i, j), h);
    Var out = push(std::move(v), needs(table));
    on_backward(out, [this, table, out, b = std::move(buckets), heads, n, m] {
      Matrix& gt = grad(table);
      const Matrix& g = grad(out);
      for (Eigen::Index h = 0; h < heads; ++h)
        for (Eigen::Index i = 0; i < n; ++i)
          for (Eigen::Index j = 0; j < m; ++j) gt(b(i, j), h) += g(h * n + i, j);
    });
    return out;
  }

  // Multi-head scaled dot-product attention over already-projected q (n x d),
  // k and v (m x d). `mask` is an additive n x m matrix (0 or -inf) shared by
  // all heads; `bias` is an optional learned (heads * n) x m additive term.
  Var attention(Var q, Var k, Var v, int heads, const Matrix* mask, Var bias = {}) {
    const Matrix& Q = value(q);
    const Matrix& K = value(k);
    const Matrix& V = value(v);
    const Eigen::Index n = Q.rows(), m = K.rows(), d = Q.cols();
    if (K.cols() != d || V.cols() != d || V.rows() != m || d % heads != 0) {
      throw std::invalid_argument("attention: shape mismatch");
    }
    const Eigen::Index dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Matrix> probs(static_cast<std::size_t>(heads));
    Matrix outv(n, d);
    for (Eigen::Index h = 0; h < heads; ++h) {
      Matrix s = sc * (Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose());
      if (mask) s += *mask;
      if (bias.valid()) s += value(bias).middleRows(h * n, n);
      for (Eigen::Index r = 0; r < n; ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
      }
      outv.middleCols(h * dh, dh).noalias() = s * V.middleCols(h * dh, dh);
      probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    Var out = push(std::move(outv), needs(q, k, v, bias));
    on_backward(out, [this, q, k, v, bias, out, probs = std::move(probs), heads, n, dh, sc] {
      const Matrix& G = grad(out);
      for (Eigen::Index h = 0; h < heads; ++h) {
        const Matrix& P = probs[static_cast<std::size_t>(h)];
        const auto Gh = G.middleCols(h * dh, dh);
        if (node(v).requires_grad) grad(v).middleCols(h * dh, dh).noalias() += P.transpose() * Gh;
        Matrix dP = Gh * value(v).middleCols(h * dh, dh).transpose();
        Matrix dS = P.cwiseProduct(dP);
        const Eigen::VectorXd rs = dS.rowwise().sum();
        dS -= P.cwiseProduct(rs.replicate(1, P.cols()));
        if (bias.valid() && node(bias).requires_grad) grad(bias).middleRows(h * n, n) += dS;
        if (node(q).requires_grad)
          grad(q).middleCols(h * dh, dh).noalias() += sc * (dS * value(k).middleCols(h * dh, dh));
        if (node(k).requires_grad)
          grad(k).middleCols(h * dh, dh).noalias() += sc * (dS.transpose() * value(q).middleCols(h * dh, dh));
      }
    });
    return out;
  }

  // Sum over rows with target != ignore of -log softmax(logits)[target],
  // multiplied by `weight`. Returns a 1x1 node.
  Var cross_entropy(Var logits, std::vector<int> targets, int ignore, double weight) {
    const Matrix& L = value(logits);
    if (static_cast<Eigen::Index>(targets.size()) != L.rows()) {
      throw std::invalid_argument("cross_entropy: target count mismatch");
    }
    Matrix probs(L.rows(), L.cols());
    double total = 0.0;
    for (Eigen::Index r = 0; r < L.rows(); ++r) {
      const double mx = L.row(r).maxCoeff();
      probs.row(r) = (L.row(r).array() - mx).exp();
      const double z = probs.row(r).sum();
      probs.row(r) /= z;
      const int t = targets[static_cast<std::size_t>(r)];
      if (t == ignore) continue;
      if (t < 0 || t >= L.cols()) throw std::out_of_range("cross_entropy: target out of range");
      total += -(L(r, t) - mx - std::log(z));
    }
    Matrix v(1, 1);
    v(0, 0) = weight * total;
    Var out = push(std::move(v), needs(logits));
    on_backward(out, [this, logits, out, probs = std::move(probs), targets = std::move(targets), ignore, weight] {
      const double g = weight * grad(out)(0, 0);
      Matrix& gl = grad(logits);
      for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        const int t = targets[static_cast<std::size_t>(r)];
        if (t == ignore) continue;
        gl.row(r) += g * probs.row(r);
        gl(r, t) -= g;
      }
    });
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    Matrix* sink = nullptr;
    std::function<void()> backward;
    bool requires_grad = false;
  };

  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  Matrix& grad(Var v) { return node(v).grad; }

  template <class... Vs>
  bool needs(Vs... vs) {
    if (!record_) return false;
    return ((vs.valid() && node(vs).requires_grad) || ...);
  }

  void check_same(Var a, Var b, const char* op) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
  }

  Var push(Matrix value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  template <class F>
  void on_backward(Var out, F&& f) {
    if (node(out).requires_grad) node(out).backward = std::forward<F>(f);
  }

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace maaig::ad
