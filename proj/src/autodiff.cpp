#include "uiim/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "uiim/kernels.hpp"

namespace uiim {

namespace {

kernels::MatrixView view(const Tensor& t) { return {t.data(), t.rows(), t.cols()}; }
kernels::MutableMatrixView mview(Tensor& t) { return {t.data(), t.rows(), t.cols()}; }

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                   shape_string(b.shape()));
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const std::string& why) {
  throw ShapeError(std::string(op) + ": " + why + " (shape " + shape_string(a.shape()) + ")");
}

void check_same_tape(const char* op, Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
}

void check_matrix(const char* op, const Tensor& t) {
  if (t.rank() > 2) shape_fail(op, t, "expected rank <= 2");
}

void check_same_size(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail(op, a, b);
}

Shape matrix_shape(std::size_t r, std::size_t c) { return Shape{r, c}; }

// Applies a unary elementwise op whose derivative is expressed through the
// input x and output y.
template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia}, [ia, deriv](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Tensor& g = t.upstream(self);
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * deriv(xv[i], yv[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(), [&](std::size_t p) { return nodes_[p].requires_grad; });
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor* Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.has_grad ? n.grad : Tensor(n.value.shape());
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw std::invalid_argument("backward: root belongs to another tape");
  const Tensor& rv = value(root.id());
  if (rv.size() != 1)
    throw ShapeError("backward: root must be a scalar, got shape " + shape_string(rv.shape()));
  if (backward_done_) throw std::logic_error("backward: already run on this tape; call zero_grad first");
  backward_done_ = true;
  Tensor* g = grad_buffer(root.id());
  if (!g) return;
  (*g)[0] += 1.0;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      Tensor& pg = n.param->grad;
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  backward_done_ = false;
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  check_same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  check_matrix("matmul", av);
  check_matrix("matmul", bv);
  if (av.cols() != bv.rows()) shape_fail("matmul", av, bv);
  Tensor c(matrix_shape(av.rows(), bv.cols()));
  kernels::gemm_nn(view(av), view(bv), mview(c), false);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(c), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    if (Tensor* ga = t.grad_buffer(ia)) {
      kernels::MutableMatrixView out{ga->data(), t.value(ia).rows(), t.value(ia).cols()};
      kernels::gemm_nt(view(g), view(t.value(ib)), out, true);
    }
    if (Tensor* gb = t.grad_buffer(ib)) {
      kernels::MutableMatrixView out{gb->data(), t.value(ib).rows(), t.value(ib).cols()};
      kernels::gemm_tn(view(t.value(ia)), view(g), out, true);
    }
  });
}

Var bmm(Var a, Var b) {
  check_same_tape("bmm", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.shape()[0] != bv.shape()[0] || av.shape()[2] != bv.shape()[1])
    shape_fail("bmm", av, bv);
  const std::size_t batch = av.shape()[0], m = av.shape()[1], k = av.shape()[2], n = bv.shape()[2];
  Tensor c(Shape{batch, m, n});
  for (std::size_t s = 0; s < batch; ++s)
    kernels::gemm_nn({av.data() + s * m * k, m, k}, {bv.data() + s * k * n, k, n}, {c.data() + s * m * n, m, n},
                     false);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(c), {ia, ib}, [ia, ib, batch, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t s = 0; s < batch; ++s)
        kernels::gemm_nt({g.data() + s * m * n, m, n}, {bv.data() + s * k * n, k, n}, {ga->data() + s * m * k, m, k},
                         true);
    if (Tensor* gb = t.grad_buffer(ib))
      for (std::size_t s = 0; s < batch; ++s)
        kernels::gemm_tn({av.data() + s * m * k, m, k}, {g.data() + s * m * n, m, n}, {gb->data() + s * k * n, k, n},
                         true);
  });
}

namespace {

Tensor swap_last_axes(const Tensor& x) {
  if (x.rank() < 2 || x.rank() > 3) shape_fail("transpose", x, "expected rank 2 or 3");
  const std::size_t batch = x.rank() == 3 ? x.shape()[0] : 1;
  const std::size_t r = x.shape()[x.rank() - 2], c = x.shape()[x.rank() - 1];
  Shape out_shape = x.shape();
  std::swap(out_shape[x.rank() - 2], out_shape[x.rank() - 1]);
  Tensor y(out_shape);
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) y[s * r * c + j * r + i] = x[s * r * c + i * c + j];
  return y;
}

}  // namespace

Var transpose(Var a) {
  const std::size_t ia = a.id();
  return a.tape().record(swap_last_axes(a.value()), {ia}, [ia](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Tensor back = swap_last_axes(t.upstream(self));
    for (std::size_t i = 0; i < back.size(); ++i) (*ga)[i] += back[i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise binary

Var add(Var a, Var b) {
  check_same_tape("add", a, b);
  check_same_size("add", a.value(), b.value());
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    for (std::size_t p : {ia, ib})
      if (Tensor* gp = t.grad_buffer(p))
        for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
  });
}

Var sub(Var a, Var b) {
  check_same_tape("sub", a, b);
  check_same_size("sub", a.value(), b.value());
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = t.grad_buffer(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  check_same_tape("elementwise_mul", a, b);
  check_same_size("elementwise_mul", a.value(), b.value());
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    if (Tensor* ga = t.grad_buffer(ia)) {
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_buffer(ib)) {
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var div(Var a, Var b) {
  check_same_tape("div", a, b);
  check_same_size("div", a.value(), b.value());
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (bv[i] == 0.0) throw DomainError("div: division by zero");
    y[i] /= bv[i];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& bv = t.value(ib);
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / bv[i];
    if (Tensor* gb = t.grad_buffer(ib)) {
      const Tensor& yv = t.value(self);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i] * yv[i] / bv[i];
    }
  });
}

Var add_bias(Var a, Var bias) {
  check_same_tape("add_bias", a, bias);
  const Tensor& bv = bias.value();
  Tensor y = a.value();
  const std::size_t rows = y.rows(), cols = y.cols();
  if (bv.size() != cols) shape_fail("add_bias", y, bv);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] += bv[c];
  const std::size_t ia = a.id(), ib = bias.id();
  return a.tape().record(std::move(y), {ia, ib}, [ia, ib, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    if (Tensor* ga = t.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = t.grad_buffer(ib))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += g[r * cols + c];
  });
}

Var scale(Var a, double s) {
  return unary(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

// ---------------------------------------------------------------------------
// Elementwise unary

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x[i] > 0.0)) {
      std::ostringstream os;
      os << "log: non-positive input " << x[i] << " at index " << i;
      throw DomainError(os.str());
    }
  return unary(
      a, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

// ---------------------------------------------------------------------------
// Row-wise normalizers

Var softmax_rows(Var a) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  const std::size_t rows = x.rows(), cols = x.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= z;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia}, [ia, rows, cols](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Tensor& g = t.upstream(self);
    const Tensor& yv = t.value(self);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += g[r * cols + c] * yv[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) (*ga)[r * cols + c] += yv[r * cols + c] * (g[r * cols + c] - s);
    }
  });
}

Var log_softmax_rows(Var a) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  const std::size_t rows = x.rows(), cols = x.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(xr[c] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) yr[c] = xr[c] - lz;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia}, [ia, rows, cols](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Tensor& g = t.upstream(self);
    const Tensor& yv = t.value(self);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += g[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) (*ga)[r * cols + c] += g[r * cols + c] - std::exp(yv[r * cols + c]) * s;
    }
  });
}

// ---------------------------------------------------------------------------
// Structural

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_last_axis: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    check_same_tape("concat_last_axis", parts[0], p);
    if (p.value().rank() > 2 || p.rows() != rows) shape_fail("concat_last_axis", parts[0].value(), p.value());
    ids.push_back(p.id());
    offsets.push_back(total);
    total += p.cols();
  }
  Tensor y(matrix_shape(rows, total));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    const std::size_t w = v.cols();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.data() + r * w, w, y.data() + r * total + offsets[k]);
  }
  return parts[0].tape().record(std::move(y), ids, [ids, offsets, rows, total](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor* gp = t.grad_buffer(ids[k]);
      if (!gp) continue;
      const std::size_t w = gp->cols();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < w; ++c) (*gp)[r * w + c] += g[r * total + offsets[k] + c];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t total = 0;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    check_same_tape("concat_rows", parts[0], p);
    if (p.value().rank() > 2 || p.cols() != cols) shape_fail("concat_rows", parts[0].value(), p.value());
    ids.push_back(p.id());
    offsets.push_back(total);
    total += p.rows();
  }
  Tensor y(matrix_shape(total, cols));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    std::copy_n(v.data(), v.size(), y.data() + offsets[k] * cols);
  }
  return parts[0].tape().record(std::move(y), ids, [ids, offsets, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor* gp = t.grad_buffer(ids[k]);
      if (!gp) continue;
      const double* src = g.data() + offsets[k] * cols;
      for (std::size_t i = 0; i < gp->size(); ++i) (*gp)[i] += src[i];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  check_matrix("slice", x);
  if (begin >= end || end > x.cols())
    shape_fail("slice", x, "column range [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of bounds");
  const std::size_t rows = x.rows(), cols = x.cols(), w = end - begin;
  Tensor y(matrix_shape(rows, w));
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data() + r * cols + begin, w, y.data() + r * w);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia}, [ia, rows, cols, begin, w](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Tensor& g = t.upstream(self);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) (*ga)[r * cols + begin + c] += g[r * w + c];
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  check_matrix("slice", x);
  if (begin >= end || end > x.rows())
    shape_fail("slice", x, "row range [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of bounds");
  const std::size_t cols = x.cols();
  Tensor y(matrix_shape(end - begin, cols));
  std::copy_n(x.data() + begin * cols, y.size(), y.data());
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia}, [ia, begin, cols](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Tensor& g = t.upstream(self);
    double* dst = ga->data() + begin * cols;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Var gather_rows(Var a, std::vector<std::size_t> ids) {
  const Tensor& x = a.value();
  check_matrix("gather_rows", x);
  const std::size_t cols = x.cols();
  for (std::size_t id : ids)
    if (id >= x.rows())
      shape_fail("gather_rows", x, "row index " + std::to_string(id) + " out of range");
  Tensor y(matrix_shape(ids.size(), cols));
  for (std::size_t i = 0; i < ids.size(); ++i) std::copy_n(x.data() + ids[i] * cols, cols, y.data() + i * cols);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia}, [ia, ids = std::move(ids), cols](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Tensor& g = t.upstream(self);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) (*ga)[ids[i] * cols + c] += g[i * cols + c];
  });
}

Var pick(Var a, std::vector<std::size_t> ids) {
  const Tensor& x = a.value();
  check_matrix("pick", x);
  const std::size_t rows = x.rows(), cols = x.cols();
  if (ids.size() != rows) shape_fail("pick", x, "need one index per row");
  Tensor y(matrix_shape(rows, 1));
  for (std::size_t r = 0; r < rows; ++r) {
    if (ids[r] >= cols) shape_fail("pick", x, "column index " + std::to_string(ids[r]) + " out of range");
    y[r] = x[r * cols + ids[r]];
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia}, [ia, ids = std::move(ids), cols](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Tensor& g = t.upstream(self);
    for (std::size_t r = 0; r < ids.size(); ++r) (*ga)[r * cols + ids[r]] += g[r];
  });
}

Var reshape(Var a, Shape shape) {
  const std::size_t ia = a.id();
  return a.tape().record(a.value().reshaped(std::move(shape)), {ia}, [ia](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Tensor& g = t.upstream(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), {ia}, [ia](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    const double g = t.upstream(self)[0];
    for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var l2_norm(Var a) {
  const Tensor& x = a.value();
  check_matrix("l2_norm", x);
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor y(matrix_shape(rows, 1));
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += x[r * cols + c] * x[r * cols + c];
    y[r] = std::sqrt(s + kNormEpsilon);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {ia}, [ia, rows, cols](Tape& t, std::size_t self) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Tensor& g = t.upstream(self);
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(self);
    for (std::size_t r = 0; r < rows; ++r) {
      const double k = g[r] / yv[r];
      for (std::size_t c = 0; c < cols; ++c) (*ga)[r * cols + c] += k * xv[r * cols + c];
    }
  });
}

Var dot(Var a, Var b) {
  check_same_tape("dot", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  check_matrix("dot", av);
  check_same_size("dot", av, bv);
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor y(matrix_shape(rows, 1));
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += av[r * cols + c] * bv[r * cols + c];
    y[r] = s;
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {ia, ib}, [ia, ib, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    if (Tensor* ga = t.grad_buffer(ia)) {
      const Tensor& bv = t.value(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*ga)[r * cols + c] += g[r] * bv[r * cols + c];
    }
    if (Tensor* gb = t.grad_buffer(ib)) {
      const Tensor& av = t.value(ia);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*gb)[r * cols + c] += g[r] * av[r * cols + c];
    }
  });
}

// ---------------------------------------------------------------------------

GradCheckReport grad_check(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params, double h,
                           double tol, double floor) {
  GradCheckReport report;
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var root = f(tape);
    tape.backward(root);
  }
  auto eval = [&f]() {
    Tape tape;
    return f(tape).value()[0];
  };
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double up = eval();
      p->value[i] = saved - h;
      const double down = eval();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.checked;
      if (!(rel <= report.max_rel_err)) {
        report.max_rel_err = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
        char detail[96];
        std::snprintf(detail, sizeof detail, " analytic=%.6e numeric=%.6e", analytic, numeric);
        report.worst = p->name + "[" + std::to_string(i) + "]" + detail;
      }
    }
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace uiim
