#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace sine {

// Dense row-major f64 array, optionally carrying a gradient buffer of the
// same length. Tensors are created either standalone (parameters) or as the
// output of a Tape operation.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_in, bool with_grad);

  std::size_t size() const { return values.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  void zero_grad();
  bool all_finite() const;
  std::string shape_str() const;
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::vector<std::size_t> shape, bool requires_grad = false);
TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<double> values,
                      bool requires_grad = false);
TensorPtr scalar_tensor(double v, bool requires_grad = false);

// Per-position validity bits for sequence inputs: 1 = real item, 0 = padding.
using Mask = std::vector<std::uint8_t>;

// Define-by-run tape. Records one backward closure per forward operation and
// replays them in exact reverse order. A tape and the tensors it produced are
// confined to one thread; build a fresh tape per forward/backward pass.
class Tape {
 public:
  TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
  TensorPtr transpose(const TensorPtr& a);

  // Row-wise softmax at the given temperature, stabilised by row-max
  // subtraction. An optional mask has one entry per column; masked columns
  // get probability exactly 0 and receive no gradient.
  TensorPtr softmax_rows(const TensorPtr& x, double temperature, const Mask* mask = nullptr);

  // Normalises each row to zero mean / unit variance (population variance
  // over the last axis), then applies elementwise gain and bias.
  TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                       double eps);

  TensorPtr tanh(const TensorPtr& x);
  TensorPtr sigmoid(const TensorPtr& x);
  TensorPtr add(const TensorPtr& a, const TensorPtr& b);
  TensorPtr hadamard(const TensorPtr& a, const TensorPtr& b);
  TensorPtr scale(const TensorPtr& a, double factor);

  // a[r,c] * col[r,0] — a column vector broadcast over the rows of `a`.
  TensorPtr hadamard_col(const TensorPtr& a, const TensorPtr& col);

  // Selected rows in the given order; duplicates allowed. Backward scatters
  // (accumulates) into the selected rows only.
  TensorPtr gather_rows(const TensorPtr& x, const std::vector<std::size_t>& idx);

  TensorPtr concat_rows(const std::vector<TensorPtr>& parts);
  TensorPtr reshape(const TensorPtr& x, std::vector<std::size_t> shape);

  TensorPtr sum(const TensorPtr& x);                            // scalar
  TensorPtr pick(const TensorPtr& x, std::size_t r, std::size_t c);  // scalar

  // -log softmax(scores)[label] over a 1xJ row, with max subtraction.
  // Backward rule: softmax(scores) - onehot(label).
  TensorPtr softmax_xent(const TensorPtr& scores, std::size_t label);

  // Escape hatch for custom operations (used by tests to build negative
  // controls): allocate an output whose requires_grad follows the inputs,
  // then register its backward closure.
  TensorPtr make_output(std::vector<std::size_t> shape, bool requires_grad);
  void record(std::function<void()> backward_fn);

  // Seeds grad(loss) = 1 and runs every recorded rule in reverse order.
  // Calling twice on the same tape is an error.
  void backward(const TensorPtr& loss);

 private:
  std::vector<std::function<void()>> steps_;
  bool backward_done_ = false;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_diff = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_param;
  double worst_rel_err = 0.0;
  std::string worst_param;

  bool pass(double tol) const { return worst_rel_err < tol; }
};

// Builds the scalar loss on the supplied tape. Must be deterministic: called
// repeatedly while parameter entries are nudged for central differences.
using LossFn = std::function<TensorPtr(Tape&)>;

// Compares analytic gradients against central finite differences, per
// parameter entry. rel_err = |a - n| / max(|a|, |n|, denom_floor); the floor
// keeps finite-difference noise on near-zero gradients from dominating.
GradCheckReport grad_check(const LossFn& f,
                           const std::vector<std::pair<std::string, TensorPtr>>& params,
                           double step, double denom_floor = 1e-6);

}  // namespace sine
