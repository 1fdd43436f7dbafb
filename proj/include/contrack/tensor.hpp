#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace contrack {

struct TensorError : std::runtime_error {
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic RNG. Distributions are hand-rolled on top of mt19937_64 so
// generated streams do not depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return (gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  double normal();
  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, same length as data
  bool requires_grad = false;
  bool on_tape = false;
  std::vector<NodePtr> inputs;
  std::function<void(TensorNode&)> backward_fn;  // accumulates into inputs' grads

  std::size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Handle to a dense row-major float64 array, optionally attached to the
// active gradient tape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data);
  static Tensor scalar(double value) { return from_data({}, {value}); }
  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0);
  // Learnable parameter: requires_grad, persists across tapes.
  static Tensor param(std::vector<int> shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node()->shape; }
  std::size_t size() const { return node()->size(); }
  int dim(int i) const { return node()->shape.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(node()->shape.size()); }

  std::vector<double>& data() { return node()->data; }
  const std::vector<double>& data() const { return node()->data; }
  std::vector<double>& grad();
  bool requires_grad() const { return node()->requires_grad; }

  double item() const;
  double at(std::initializer_list<int> idx) const;

  // Value copy with no tape attachment.
  Tensor detach() const;

  NodePtr node_ptr() const { return node_; }
  TensorNode* node() const {
    if (!node_) throw TensorError("use of undefined tensor");
    return node_.get();
  }

  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

 private:
  NodePtr node_;
};

// Single active tape per thread (define-by-run). Ops record themselves while
// a tape is alive; backward() consumes the recording.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();
  void record(NodePtr n) { nodes_.push_back(std::move(n)); }
  // Reverse-order sweep from a scalar loss.
  void backward(const Tensor& loss);

 private:
  std::vector<NodePtr> nodes_;
  bool consumed_ = false;
};

// --- elementwise / reduction ops ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
// a[r,c] + row[c] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
// a[r,c] with row i scaled by s[i].
Tensor scale_rows(const Tensor& a, const Tensor& s);
Tensor mul_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// --- shape ops ---
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor flatten(const Tensor& x);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor narrow(const Tensor& x, int axis, int start, int len);
Tensor transpose2d(const Tensor& x);

// --- linear algebra / neural ops ---
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x);
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride, int pad);
Tensor avg_pool(const Tensor& x, int stride);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
// Bilinear resize of [C,H,W] by integer factor; values only, no magnitude
// scaling (callers scale flow themselves).
Tensor upsample_bilinear(const Tensor& x, int factor);
// Sample [C,H,W] at absolute (x,y) positions given by grid [2,Ho,Wo].
// Out-of-bounds reads are zero. Differentiable w.r.t. input, not the grid.
Tensor grid_sample(const Tensor& input, const Tensor& grid);

void backward(const Tensor& loss);

// Escape hatch for domain-specific differentiable ops. backward_fn reads the
// result node's grad and accumulates into the inputs' grads.
Tensor custom_op(const char* name, std::vector<int> shape,
                 std::vector<double> data, std::vector<Tensor> inputs,
                 std::function<void(TensorNode&)> backward_fn);

// Dump/parse: shape header line then whitespace-separated values.
std::string dump_tensor(const Tensor& t);
Tensor parse_tensor(const std::string& text);

}  // namespace contrack
