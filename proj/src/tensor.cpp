#include "contrack/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "contrack/kernels.hpp"

namespace contrack {

namespace {

thread_local GradTape* g_active_tape = nullptr;

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw TensorError("negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void check_finite(const TensorNode& n, const char* op) {
  for (double v : n.data)
    if (!std::isfinite(v))
      throw TensorError(std::string("non-finite value produced by ") + op);
}

// Builds the result node, wires autodiff, and runs the finite check.
Tensor make_op(const char* op, std::vector<int> shape, std::vector<double> data,
               std::vector<NodePtr> inputs,
               std::function<void(TensorNode&)> backward_fn) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  check_finite(*n, op);
  bool needs = false;
  for (const auto& in : inputs)
    if (in->requires_grad) needs = true;
  if (needs && g_active_tape) {
    n->requires_grad = true;
    n->on_tape = true;
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward_fn);
    g_active_tape->record(n);
  }
  return Tensor(n);
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw TensorError(std::string(op) + ": shape mismatch " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  while (u1 <= 1e-300) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * M_PI * u2);
  has_spare_ = true;
  return r * std::cos(2.0 * M_PI * u2);
}

Tensor Tensor::zeros(std::vector<int> shape) {
  return full(std::move(shape), 0.0);
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  auto n = std::make_shared<TensorNode>();
  std::size_t sz = shape_size(shape);
  n->shape = std::move(shape);
  n->data.assign(sz, value);
  return Tensor(n);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data) {
  if (shape_size(shape) != data.size())
    throw TensorError("from_data: shape " + shape_str(shape) + " does not match " +
                      std::to_string(data.size()) + " values");
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  check_finite(*n, "from_data");
  return Tensor(n);
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev) {
  std::size_t sz = shape_size(shape);
  std::vector<double> d(sz);
  for (auto& v : d) v = rng.normal() * stddev;
  return from_data(std::move(shape), std::move(d));
}

Tensor Tensor::param(std::vector<int> shape, std::vector<double> data) {
  Tensor t = from_data(std::move(shape), std::move(data));
  t.node()->requires_grad = true;
  t.node()->ensure_grad();
  return t;
}

std::vector<double>& Tensor::grad() {
  node()->ensure_grad();
  return node()->grad;
}

double Tensor::item() const {
  if (size() != 1) throw TensorError("item() on non-scalar tensor " + shape_str(shape()));
  return data()[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const auto& sh = shape();
  if (idx.size() != sh.size()) throw TensorError("at(): rank mismatch");
  std::size_t off = 0;
  auto it = idx.begin();
  for (std::size_t i = 0; i < sh.size(); ++i, ++it)
    off = off * static_cast<std::size_t>(sh[i]) + static_cast<std::size_t>(*it);
  return data()[off];
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<TensorNode>();
  n->shape = shape();
  n->data = data();
  return Tensor(n);
}

GradTape::GradTape() {
  if (g_active_tape) throw TensorError("nested gradient tapes are not supported");
  g_active_tape = this;
}

GradTape::~GradTape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::backward(const Tensor& loss) {
  if (consumed_) throw TensorError("tape already consumed by backward()");
  if (loss.size() != 1) throw TensorError("backward: loss must be a scalar");
  if (!loss.node()->on_tape)
    throw TensorError("backward: loss is detached from the active tape");
  consumed_ = true;
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    TensorNode& n = **it;
    if (!n.backward_fn || n.grad.empty()) continue;
    for (auto& in : n.inputs)
      if (in->requires_grad) in->ensure_grad();
    n.backward_fn(n);
  }
  nodes_.clear();
}

void backward(const Tensor& loss) {
  if (!g_active_tape) throw TensorError("backward: no active tape");
  g_active_tape->backward(loss);
}

// ----- elementwise -----

namespace {

Tensor binary_op(const char* name, const Tensor& a, const Tensor& b,
                 double (*f)(double, double),
                 void (*df)(double, double, double, double&, double&)) {
  same_shape(a, b, name);
  std::vector<double> out(a.size());
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i], bd[i]);
  auto an = a.node_ptr(), bn = b.node_ptr();
  return make_op(name, a.shape(), std::move(out), {an, bn},
                 [an, bn, df](TensorNode& n) {
                   for (std::size_t i = 0; i < n.data.size(); ++i) {
                     double ga = 0.0, gb = 0.0;
                     df(an->data[i], bn->data[i], n.grad[i], ga, gb);
                     if (an->requires_grad) an->grad[i] += ga;
                     if (bn->requires_grad) bn->grad[i] += gb;
                   }
                 });
}

Tensor unary_op(const char* name, const Tensor& x, double (*f)(double),
                double (*dfdx)(double, double) /* (x, y) -> dy/dx */) {
  std::vector<double> out(x.size());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  auto xn = x.node_ptr();
  return make_op(name, x.shape(), std::move(out), {xn},
                 [xn, dfdx](TensorNode& n) {
                   for (std::size_t i = 0; i < n.data.size(); ++i)
                     xn->grad[i] += n.grad[i] * dfdx(xn->data[i], n.data[i]);
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g, double& ga, double& gb) { ga = g; gb = g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g, double& ga, double& gb) { ga = g; gb = -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& ga, double& gb) {
        ga = g * y;
        gb = g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double g, double& ga, double& gb) {
        ga = g / y;
        gb = -g * x / (y * y);
      });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
  auto an = a.node_ptr();
  return make_op("add_scalar", a.shape(), std::move(out), {an},
                 [an](TensorNode& n) {
                   for (std::size_t i = 0; i < n.data.size(); ++i)
                     an->grad[i] += n.grad[i];
                 });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (a.ndim() != 2 || row.ndim() != 1 || a.dim(1) != row.dim(0))
    throw TensorError("add_row: need a[r,c], row[c]");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[i * c + j] = a.data()[i * c + j] + row.data()[j];
  auto an = a.node_ptr(), rn = row.node_ptr();
  return make_op("add_row", a.shape(), std::move(out), {an, rn},
                 [an, rn, r, c](TensorNode& n) {
                   for (int i = 0; i < r; ++i)
                     for (int j = 0; j < c; ++j) {
                       if (an->requires_grad) an->grad[i * c + j] += n.grad[i * c + j];
                       if (rn->requires_grad) rn->grad[j] += n.grad[i * c + j];
                     }
                 });
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  if (a.ndim() != 2 || s.ndim() != 1 || a.dim(0) != s.dim(0))
    throw TensorError("scale_rows: need a[r,c], s[r]");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[i * c + j] = a.data()[i * c + j] * s.data()[i];
  auto an = a.node_ptr(), sn = s.node_ptr();
  return make_op("scale_rows", a.shape(), std::move(out), {an, sn},
                 [an, sn, r, c](TensorNode& n) {
                   for (int i = 0; i < r; ++i) {
                     double acc = 0.0;
                     for (int j = 0; j < c; ++j) {
                       if (an->requires_grad)
                         an->grad[i * c + j] += n.grad[i * c + j] * sn->data[i];
                       acc += n.grad[i * c + j] * an->data[i * c + j];
                     }
                     if (sn->requires_grad) sn->grad[i] += acc;
                   }
                 });
}

Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  auto an = a.node_ptr();
  return make_op("mul_scalar", a.shape(), std::move(out), {an},
                 [an, c](TensorNode& n) {
                   for (std::size_t i = 0; i < n.data.size(); ++i)
                     an->grad[i] += n.grad[i] * c;
                 });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v >= 0.0 ? 1.0 : -1.0; });
}

Tensor custom_op(const char* name, std::vector<int> shape,
                 std::vector<double> data, std::vector<Tensor> inputs,
                 std::function<void(TensorNode&)> backward_fn) {
  std::vector<NodePtr> ins;
  ins.reserve(inputs.size());
  for (const auto& t : inputs) ins.push_back(t.node_ptr());
  return make_op(name, std::move(shape), std::move(data), std::move(ins),
                 std::move(backward_fn));
}

Tensor exp(const Tensor& x) {
  return unary_op(
      "exp", x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(
      "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  auto xn = x.node_ptr();
  return make_op("sum", {}, {acc}, {xn}, [xn](TensorNode& n) {
    for (auto& g : xn->grad) g += n.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw TensorError("mean of empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.size()));
}

// ----- shape ops -----

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (shape_size(shape) != x.size())
    throw TensorError("reshape: " + shape_str(x.shape()) + " -> " +
                      shape_str(shape) + " changes element count");
  auto xn = x.node_ptr();
  return make_op("reshape", std::move(shape), x.data(), {xn},
                 [xn](TensorNode& n) {
                   for (std::size_t i = 0; i < n.data.size(); ++i)
                     xn->grad[i] += n.grad[i];
                 });
}

Tensor flatten(const Tensor& x) {
  return reshape(x, {static_cast<int>(x.size())});
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw TensorError("concat: no inputs");
  const auto& base = xs[0].shape();
  if (axis < 0 || axis >= static_cast<int>(base.size()))
    throw TensorError("concat: bad axis");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(base[i]);
  for (int i = axis + 1; i < static_cast<int>(base.size()); ++i)
    inner *= static_cast<std::size_t>(base[i]);
  int axis_total = 0;
  for (const auto& t : xs) {
    const auto& sh = t.shape();
    if (sh.size() != base.size()) throw TensorError("concat: rank mismatch");
    for (std::size_t i = 0; i < sh.size(); ++i)
      if (static_cast<int>(i) != axis && sh[i] != base[i])
        throw TensorError("concat: shape mismatch on non-concat axis");
    axis_total += sh[axis];
  }
  std::vector<int> out_shape = base;
  out_shape[axis] = axis_total;
  std::vector<double> out(shape_size(out_shape));
  std::size_t row = inner * static_cast<std::size_t>(axis_total);
  std::size_t off_axis = 0;
  std::vector<NodePtr> ins;
  for (const auto& t : xs) {
    std::size_t chunk = inner * static_cast<std::size_t>(t.shape()[axis]);
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * row + off_axis * inner,
                  t.data().data() + o * chunk, chunk * sizeof(double));
    off_axis += static_cast<std::size_t>(t.shape()[axis]);
    ins.push_back(t.node_ptr());
  }
  std::vector<int> sizes;
  for (const auto& t : xs) sizes.push_back(t.shape()[axis]);
  return make_op("concat", std::move(out_shape), std::move(out), ins,
                 [ins, sizes, outer, inner, row](TensorNode& n) {
                   std::size_t off = 0;
                   for (std::size_t t = 0; t < ins.size(); ++t) {
                     std::size_t chunk = inner * static_cast<std::size_t>(sizes[t]);
                     if (ins[t]->requires_grad)
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < chunk; ++i)
                           ins[t]->grad[o * chunk + i] +=
                               n.grad[o * row + off * inner + i];
                     off += static_cast<std::size_t>(sizes[t]);
                   }
                 });
}

Tensor narrow(const Tensor& x, int axis, int start, int len) {
  const auto& sh = x.shape();
  if (axis < 0 || axis >= static_cast<int>(sh.size()))
    throw TensorError("narrow: bad axis");
  if (start < 0 || len < 0 || start + len > sh[axis])
    throw TensorError("narrow: range out of bounds");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(sh[i]);
  for (int i = axis + 1; i < static_cast<int>(sh.size()); ++i)
    inner *= static_cast<std::size_t>(sh[i]);
  std::vector<int> out_shape = sh;
  out_shape[axis] = len;
  std::vector<double> out(outer * static_cast<std::size_t>(len) * inner);
  std::size_t in_row = inner * static_cast<std::size_t>(sh[axis]);
  std::size_t out_row = inner * static_cast<std::size_t>(len);
  for (std::size_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * out_row,
                x.data().data() + o * in_row + static_cast<std::size_t>(start) * inner,
                out_row * sizeof(double));
  auto xn = x.node_ptr();
  return make_op("narrow", std::move(out_shape), std::move(out), {xn},
                 [xn, outer, inner, in_row, out_row, start](TensorNode& n) {
                   for (std::size_t o = 0; o < outer; ++o)
                     for (std::size_t i = 0; i < out_row; ++i)
                       xn->grad[o * in_row + static_cast<std::size_t>(start) * inner + i] +=
                           n.grad[o * out_row + i];
                 });
}

Tensor transpose2d(const Tensor& x) {
  if (x.ndim() != 2) throw TensorError("transpose2d: need 2-d tensor");
  const int r = x.dim(0), c = x.dim(1);
  std::vector<double> out(x.size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[j * r + i] = x.data()[i * c + j];
  auto xn = x.node_ptr();
  return make_op("transpose2d", {c, r}, std::move(out), {xn},
                 [xn, r, c](TensorNode& n) {
                   for (int i = 0; i < r; ++i)
                     for (int j = 0; j < c; ++j)
                       xn->grad[i * c + j] += n.grad[j * r + i];
                 });
}

// ----- linear algebra / neural -----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw TensorError("matmul: incompatible shapes " + shape_str(a.shape()) +
                      " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node_ptr(), bn = b.node_ptr();
  return make_op("matmul", {m, n}, std::move(out), {an, bn},
                 [an, bn, m, k, n](TensorNode& nd) {
                   // dA = dC * B^T, dB = A^T * dC
                   if (an->requires_grad)
                     for (int i = 0; i < m; ++i)
                       for (int h = 0; h < k; ++h) {
                         double acc = 0.0;
                         for (int j = 0; j < n; ++j)
                           acc += nd.grad[i * n + j] * bn->data[h * n + j];
                         an->grad[i * k + h] += acc;
                       }
                   if (bn->requires_grad)
                     for (int h = 0; h < k; ++h)
                       for (int j = 0; j < n; ++j) {
                         double acc = 0.0;
                         for (int i = 0; i < m; ++i)
                           acc += an->data[i * k + h] * nd.grad[i * n + j];
                         bn->grad[h * n + j] += acc;
                       }
                 });
}

Tensor softmax_rows(const Tensor& x) {
  if (x.ndim() != 2) throw TensorError("softmax_rows: need 2-d tensor");
  const int r = x.dim(0), c = x.dim(1);
  std::vector<double> out(x.size());
  for (int i = 0; i < r; ++i) {
    const double* row = x.data().data() + static_cast<std::size_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      z += out[i * c + j];
    }
    for (int j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  auto xn = x.node_ptr();
  return make_op("softmax_rows", x.shape(), std::move(out), {xn},
                 [xn, r, c](TensorNode& n) {
                   for (int i = 0; i < r; ++i) {
                     const double* y = n.data.data() + static_cast<std::size_t>(i) * c;
                     const double* g = n.grad.data() + static_cast<std::size_t>(i) * c;
                     double dot = 0.0;
                     for (int j = 0; j < c; ++j) dot += y[j] * g[j];
                     for (int j = 0; j < c; ++j)
                       xn->grad[i * c + j] += y[j] * (g[j] - dot);
                   }
                 });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride, int pad) {
  if (x.ndim() != 3 || w.ndim() != 4)
    throw TensorError("conv2d: need x[C,H,W], w[Co,C,kh,kw]");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C)
    throw TensorError("conv2d: channel mismatch " + shape_str(x.shape()) +
                      " vs " + shape_str(w.shape()));
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != Co))
    throw TensorError("conv2d: bad bias shape");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0)
    throw TensorError("conv2d: non-positive output size for input " +
                      shape_str(x.shape()) + " kernel " + shape_str(w.shape()));
  std::vector<double> out(static_cast<std::size_t>(Co) * Ho * Wo);
  kernels::conv2d(x.data().data(), w.data().data(),
                  bias.defined() ? bias.data().data() : nullptr, out.data(),
                  C, H, W, Co, kh, kw, stride, pad, Ho, Wo);
  std::vector<NodePtr> ins = {x.node_ptr(), w.node_ptr()};
  if (bias.defined()) ins.push_back(bias.node_ptr());
  auto xn = x.node_ptr();
  auto wn = w.node_ptr();
  NodePtr bn = bias.defined() ? bias.node_ptr() : nullptr;
  return make_op("conv2d", {Co, Ho, Wo}, std::move(out), std::move(ins),
                 [xn, wn, bn, C, H, W, Co, kh, kw, stride, pad, Ho, Wo](TensorNode& n) {
                   kernels::conv2d_backward(
                       xn->data.data(), wn->data.data(), n.grad.data(),
                       xn->requires_grad ? xn->grad.data() : nullptr,
                       wn->requires_grad ? wn->grad.data() : nullptr,
                       (bn && bn->requires_grad) ? bn->grad.data() : nullptr,
                       C, H, W, Co, kh, kw, stride, pad, Ho, Wo);
                 });
}

Tensor avg_pool(const Tensor& x, int stride) {
  if (x.ndim() < 2) throw TensorError("avg_pool: need at least 2 dims");
  if (stride < 1 || (stride & (stride - 1)) != 0)
    throw TensorError("avg_pool: stride must be a positive power of two");
  const int H = x.dim(x.ndim() - 2), W = x.dim(x.ndim() - 1);
  Tensor in = x;
  int Hp = H, Wp = W;
  if (H % stride != 0 || W % stride != 0) {
    // Zero-pad up to the next multiple, then pool.
    Hp = (H + stride - 1) / stride * stride;
    Wp = (W + stride - 1) / stride * stride;
    std::size_t B = x.size() / (static_cast<std::size_t>(H) * W);
    std::vector<double> padded(B * Hp * Wp, 0.0);
    for (std::size_t b = 0; b < B; ++b)
      for (int i = 0; i < H; ++i)
        std::memcpy(padded.data() + (b * Hp + i) * Wp,
                    x.data().data() + (b * H + i) * W, W * sizeof(double));
    std::vector<int> psh = x.shape();
    psh[x.ndim() - 2] = Hp;
    psh[x.ndim() - 1] = Wp;
    auto xn = x.node_ptr();
    in = make_op("pad_for_pool", std::move(psh), std::move(padded), {xn},
                 [xn, H, W, Hp, Wp](TensorNode& n) {
                   std::size_t B = xn->data.size() / (static_cast<std::size_t>(H) * W);
                   for (std::size_t b = 0; b < B; ++b)
                     for (int i = 0; i < H; ++i)
                       for (int j = 0; j < W; ++j)
                         xn->grad[(b * H + i) * W + j] += n.grad[(b * Hp + i) * Wp + j];
                 });
  }
  const int Bo = static_cast<int>(in.size() / (static_cast<std::size_t>(Hp) * Wp));
  std::vector<double> out(in.size() / (static_cast<std::size_t>(stride) * stride));
  kernels::avg_pool(in.data().data(), out.data(), Bo, Hp, Wp, stride);
  std::vector<int> osh = in.shape();
  osh[in.ndim() - 2] = Hp / stride;
  osh[in.ndim() - 1] = Wp / stride;
  auto inn = in.node_ptr();
  const int s = stride;
  return make_op("avg_pool", std::move(osh), std::move(out), {inn},
                 [inn, Bo, Hp, Wp, s](TensorNode& n) {
                   const int Ho = Hp / s, Wo = Wp / s;
                   const double inv = 1.0 / (s * s);
                   for (int b = 0; b < Bo; ++b)
                     for (int oy = 0; oy < Ho; ++oy)
                       for (int ox = 0; ox < Wo; ++ox) {
                         const double g =
                             n.grad[(static_cast<std::size_t>(b) * Ho + oy) * Wo + ox] * inv;
                         for (int dy = 0; dy < s; ++dy)
                           for (int dx = 0; dx < s; ++dx)
                             inn->grad[(static_cast<std::size_t>(b) * Hp + oy * s + dy) * Wp +
                                       ox * s + dx] += g;
                       }
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.ndim() < 1) throw TensorError("layer_norm: need at least 1 dim");
  const int d = x.dim(x.ndim() - 1);
  if (gamma.size() != static_cast<std::size_t>(d) || beta.size() != static_cast<std::size_t>(d))
    throw TensorError("layer_norm: gamma/beta size mismatch");
  const std::size_t rows = x.size() / static_cast<std::size_t>(d);
  std::vector<double> out(x.size()), mu(rows), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double m = 0.0;
    for (int j = 0; j < d; ++j) m += xr[j];
    m /= d;
    double v = 0.0;
    for (int j = 0; j < d; ++j) v += (xr[j] - m) * (xr[j] - m);
    v /= d;
    const double rs = 1.0 / std::sqrt(v + eps);
    mu[r] = m;
    rstd[r] = rs;
    for (int j = 0; j < d; ++j)
      out[r * d + j] = (xr[j] - m) * rs * gamma.data()[j] + beta.data()[j];
  }
  auto xn = x.node_ptr();
  auto gn = gamma.node_ptr();
  auto bn = beta.node_ptr();
  return make_op("layer_norm", x.shape(), std::move(out), {xn, gn, bn},
                 [xn, gn, bn, d, rows, mu, rstd](TensorNode& n) {
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* xr = xn->data.data() + r * d;
                     const double* g = n.grad.data() + r * d;
                     const double rs = rstd[r], m = mu[r];
                     double sum_gy = 0.0, sum_gyxh = 0.0;
                     for (int j = 0; j < d; ++j) {
                       const double xh = (xr[j] - m) * rs;
                       const double gy = g[j] * gn->data[j];
                       sum_gy += gy;
                       sum_gyxh += gy * xh;
                       if (gn->requires_grad) gn->grad[j] += g[j] * xh;
                       if (bn->requires_grad) bn->grad[j] += g[j];
                     }
                     if (xn->requires_grad)
                       for (int j = 0; j < d; ++j) {
                         const double xh = (xr[j] - m) * rs;
                         const double gy = g[j] * gn->data[j];
                         xn->grad[r * d + j] +=
                             rs * (gy - sum_gy / d - xh * sum_gyxh / d);
                       }
                   }
                 });
}

Tensor upsample_bilinear(const Tensor& x, int factor) {
  if (x.ndim() != 3) throw TensorError("upsample_bilinear: need [C,H,W]");
  if (factor < 1) throw TensorError("upsample_bilinear: factor < 1");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Ho = H * factor, Wo = W * factor;
  // Align-corners-false convention: out pixel center maps to (o+0.5)/f - 0.5.
  std::vector<double> out(static_cast<std::size_t>(C) * Ho * Wo);
  std::vector<int> iy0s(Ho), ix0s(Wo);
  std::vector<double> wys(Ho), wxs(Wo);
  auto prep = [&](int n, int N, std::vector<int>& i0, std::vector<double>& wt, int f) {
    for (int o = 0; o < n; ++o) {
      double p = (o + 0.5) / f - 0.5;
      p = std::clamp(p, 0.0, static_cast<double>(N - 1));
      int lo = std::min(static_cast<int>(std::floor(p)), N - 1);
      i0[o] = lo;
      wt[o] = p - lo;
    }
  };
  prep(Ho, H, iy0s, wys, factor);
  prep(Wo, W, ix0s, wxs, factor);
  for (int c = 0; c < C; ++c) {
    const double* xc = x.data().data() + static_cast<std::size_t>(c) * H * W;
    double* oc = out.data() + static_cast<std::size_t>(c) * Ho * Wo;
    for (int oy = 0; oy < Ho; ++oy) {
      const int y0 = iy0s[oy], y1 = std::min(y0 + 1, H - 1);
      const double wy = wys[oy];
      for (int ox = 0; ox < Wo; ++ox) {
        const int x0 = ix0s[ox], x1 = std::min(x0 + 1, W - 1);
        const double wx = wxs[ox];
        oc[oy * Wo + ox] = (1 - wy) * ((1 - wx) * xc[y0 * W + x0] + wx * xc[y0 * W + x1]) +
                           wy * ((1 - wx) * xc[y1 * W + x0] + wx * xc[y1 * W + x1]);
      }
    }
  }
  auto xn = x.node_ptr();
  return make_op("upsample_bilinear", {C, Ho, Wo}, std::move(out), {xn},
                 [xn, C, H, W, Ho, Wo, iy0s, ix0s, wys, wxs](TensorNode& n) {
                   for (int c = 0; c < C; ++c) {
                     double* gx = xn->grad.data() + static_cast<std::size_t>(c) * H * W;
                     const double* g = n.grad.data() + static_cast<std::size_t>(c) * Ho * Wo;
                     for (int oy = 0; oy < Ho; ++oy) {
                       const int y0 = iy0s[oy], y1 = std::min(y0 + 1, H - 1);
                       const double wy = wys[oy];
                       for (int ox = 0; ox < Wo; ++ox) {
                         const int x0 = ix0s[ox], x1 = std::min(x0 + 1, W - 1);
                         const double wx = wxs[ox];
                         const double gv = g[oy * Wo + ox];
                         gx[y0 * W + x0] += gv * (1 - wy) * (1 - wx);
                         gx[y0 * W + x1] += gv * (1 - wy) * wx;
                         gx[y1 * W + x0] += gv * wy * (1 - wx);
                         gx[y1 * W + x1] += gv * wy * wx;
                       }
                     }
                   }
                 });
}

Tensor grid_sample(const Tensor& input, const Tensor& grid) {
  if (input.ndim() != 3 || grid.ndim() != 3 || grid.dim(0) != 2)
    throw TensorError("grid_sample: need input[C,H,W], grid[2,Ho,Wo]");
  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int Ho = grid.dim(1), Wo = grid.dim(2);
  const std::size_t npix = static_cast<std::size_t>(Ho) * Wo;
  std::vector<double> out(static_cast<std::size_t>(C) * npix, 0.0);
  auto for_each_tap = [C, H, W, npix](const std::vector<double>& grid_data,
                                      auto&& visit) {
    const double* gx = grid_data.data();
    const double* gy = grid_data.data() + npix;
    for (std::size_t p = 0; p < npix; ++p) {
      const double sx = gx[p], sy = gy[p];
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      const double w[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      for (int t = 0; t < 4; ++t) {
        if (w[t] == 0.0 || ys[t] < 0 || ys[t] >= H || xs[t] < 0 || xs[t] >= W)
          continue;
        visit(p, ys[t] * W + xs[t], w[t]);
      }
    }
  };
  for_each_tap(grid.data(), [&](std::size_t p, int off, double wgt) {
    for (int c = 0; c < C; ++c)
      out[c * npix + p] += wgt * input.data()[static_cast<std::size_t>(c) * H * W + off];
  });
  auto in_n = input.node_ptr();
  auto grid_n = grid.node_ptr();
  return make_op("grid_sample", {C, Ho, Wo}, std::move(out), {in_n, grid_n},
                 [in_n, grid_n, for_each_tap, C, H, W, npix](TensorNode& n) {
                   if (!in_n->requires_grad) return;
                   for_each_tap(grid_n->data, [&](std::size_t p, int off, double wgt) {
                     for (int c = 0; c < C; ++c)
                       in_n->grad[static_cast<std::size_t>(c) * H * W + off] +=
                           wgt * n.grad[c * npix + p];
                   });
                 });
}

std::string dump_tensor(const Tensor& t) {
  std::ostringstream os;
  os.precision(17);
  os << t.ndim();
  for (int d : t.shape()) os << ' ' << d;
  os << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) os << (i ? " " : "") << t.data()[i];
  os << '\n';
  return os.str();
}

Tensor parse_tensor(const std::string& text) {
  std::istringstream is(text);
  int nd = -1;
  if (!(is >> nd) || nd < 0) throw TensorError("parse_tensor: bad rank");
  std::vector<int> shape(nd);
  for (auto& d : shape)
    if (!(is >> d)) throw TensorError("parse_tensor: bad shape");
  std::vector<double> data(shape_size(shape));
  for (auto& v : data)
    if (!(is >> v)) throw TensorError("parse_tensor: missing values");
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace contrack
