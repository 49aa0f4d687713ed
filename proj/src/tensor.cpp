#include "sine/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sine {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t p = 1;
  for (std::size_t d : shape) p *= d;
  return p;
}

void check_finite(const Tensor& t, const char* op) {
#ifndef NDEBUG
  if (!t.all_finite()) {
    throw std::runtime_error(std::string(op) + ": non-finite value in output");
  }
#else
  (void)t;
  (void)op;
#endif
}

void require_2d(const TensorPtr& t, const char* op) {
  if (t->shape.size() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected 2-d tensor, got shape " +
                                t->shape_str());
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_in, bool with_grad)
    : shape(std::move(shape_in)), requires_grad(with_grad) {
  values.assign(shape_product(shape), 0.0);
  if (requires_grad) grad.assign(values.size(), 0.0);
}

std::size_t Tensor::rows() const { return shape.empty() ? 1 : shape[0]; }

std::size_t Tensor::cols() const {
  if (shape.size() < 2) return shape.empty() ? 1 : shape[0];
  return shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

void Tensor::zero_grad() {
  if (requires_grad) std::fill(grad.begin(), grad.end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  return shape.empty() ? "scalar" : os.str();
}

TensorPtr make_tensor(std::vector<std::size_t> shape, bool requires_grad) {
  return std::make_shared<Tensor>(std::move(shape), requires_grad);
}

TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<double> values,
                      bool requires_grad) {
  auto t = std::make_shared<Tensor>(std::move(shape), requires_grad);
  if (values.size() != t->values.size()) {
    throw std::invalid_argument("make_tensor: " + std::to_string(values.size()) +
                                " values for shape " + t->shape_str());
  }
  t->values = std::move(values);
  return t;
}

TensorPtr scalar_tensor(double v, bool requires_grad) {
  auto t = std::make_shared<Tensor>(std::vector<std::size_t>{1}, requires_grad);
  t->values[0] = v;
  return t;
}

TensorPtr Tape::make_output(std::vector<std::size_t> shape, bool requires_grad) {
  return make_tensor(std::move(shape), requires_grad);
}

void Tape::record(std::function<void()> backward_fn) {
  steps_.push_back(std::move(backward_fn));
}

TensorPtr Tape::matmul(const TensorPtr& a, const TensorPtr& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a->shape[0], k = a->shape[1];
  const std::size_t k2 = b->shape[0], p = b->shape[1];
  if (k != k2) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " + a->shape_str() + " vs " +
                                b->shape_str());
  }
  auto out = make_output({m, p}, a->requires_grad || b->requires_grad);
  const double* av = a->values.data();
  const double* bv = b->values.data();
  double* ov = out->values.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      if (aik == 0.0) continue;
      const double* brow = bv + kk * p;
      double* orow = ov + i * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
    }
  }
  check_finite(*out, "matmul");
  if (out->requires_grad) {
    record([a, b, out, m, k, p] {
      const double* g = out->grad.data();
      if (a->requires_grad) {
        // dA = G * B^T
        double* ga = a->grad.data();
        const double* bv = b->values.data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            const double* grow = g + i * p;
            const double* brow = bv + kk * p;
            for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
            ga[i * k + kk] += acc;
          }
        }
      }
      if (b->requires_grad) {
        // dB = A^T * G
        double* gb = b->grad.data();
        const double* av = a->values.data();
        for (std::size_t kk = 0; kk < k; ++kk) {
          for (std::size_t i = 0; i < m; ++i) {
            const double aik = av[i * k + kk];
            if (aik == 0.0) continue;
            const double* grow = g + i * p;
            double* brow = gb + kk * p;
            for (std::size_t j = 0; j < p; ++j) brow[j] += aik * grow[j];
          }
        }
      }
    });
  }
  return out;
}

TensorPtr Tape::transpose(const TensorPtr& a) {
  require_2d(a, "transpose");
  const std::size_t m = a->shape[0], n = a->shape[1];
  auto out = make_output({n, m}, a->requires_grad);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->values[j * m + i] = a->values[i * n + j];
  if (out->requires_grad) {
    record([a, out, m, n] {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) a->grad[i * n + j] += out->grad[j * m + i];
    });
  }
  return out;
}

TensorPtr Tape::softmax_rows(const TensorPtr& x, double temperature, const Mask* mask) {
  require_2d(x, "softmax_rows");
  if (!(temperature > 0.0)) {
    throw std::domain_error("softmax_rows: temperature must be positive, got " +
                            std::to_string(temperature));
  }
  const std::size_t m = x->shape[0], n = x->shape[1];
  if (mask != nullptr) {
    if (mask->size() != n) {
      throw std::invalid_argument("softmax_rows: mask length " + std::to_string(mask->size()) +
                                  " for " + std::to_string(n) + " columns");
    }
    if (std::find(mask->begin(), mask->end(), std::uint8_t{1}) == mask->end()) {
      throw std::domain_error("softmax_rows: all positions masked");
    }
  }
  auto out = make_output({m, n}, x->requires_grad);
  std::vector<std::uint8_t> keep(n, 1);
  if (mask != nullptr) keep.assign(mask->begin(), mask->end());
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = x->values.data() + i * n;
    double* yr = out->values.data() + i * n;
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (keep[j] && xr[j] > row_max) row_max = xr[j];
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (keep[j]) {
        yr[j] = std::exp((xr[j] - row_max) / temperature);
        denom += yr[j];
      } else {
        yr[j] = 0.0;
      }
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= denom;
  }
  check_finite(*out, "softmax_rows");
  if (out->requires_grad) {
    record([x, out, keep, temperature, m, n] {
      // dx_j = y_j * (g_j - sum_k y_k g_k) / temperature, per row.
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = out->values.data() + i * n;
        const double* g = out->grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
        double* gx = x->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
          if (keep[j]) gx[j] += y[j] * (g[j] - dot) / temperature;
        }
      }
    });
  }
  return out;
}

TensorPtr Tape::layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                           double eps) {
  require_2d(x, "layer_norm");
  if (eps < 0.0) throw std::domain_error("layer_norm: eps must be non-negative");
  const std::size_t m = x->shape[0], d = x->shape[1];
  if (gain->size() != d || bias->size() != d) {
    throw std::invalid_argument("layer_norm: gain/bias size must equal last dimension " +
                                std::to_string(d));
  }
  auto out = make_output({m, d}, x->requires_grad || gain->requires_grad || bias->requires_grad);
  // Cache the normalised rows and inverse stddevs for the backward rule.
  auto xhat = std::make_shared<std::vector<double>>(m * d);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = x->values.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double istd = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = istd;
    double* hr = xhat->data() + i * d;
    double* yr = out->values.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mean) * istd;
      yr[j] = gain->values[j] * hr[j] + bias->values[j];
    }
  }
  check_finite(*out, "layer_norm");
  if (out->requires_grad) {
    record([x, gain, bias, out, xhat, inv_std, m, d] {
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = out->grad.data() + i * d;
        const double* h = xhat->data() + i * d;
        if (gain->requires_grad) {
          for (std::size_t j = 0; j < d; ++j) gain->grad[j] += g[j] * h[j];
        }
        if (bias->requires_grad) {
          for (std::size_t j = 0; j < d; ++j) bias->grad[j] += g[j];
        }
        if (x->requires_grad) {
          // dxhat_j = g_j * gain_j;
          // dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[j] * gain->values[j];
            sum_dh += dh;
            sum_dh_h += dh * h[j];
          }
          const double istd = (*inv_std)[i];
          const double inv_d = 1.0 / static_cast<double>(d);
          double* gx = x->grad.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[j] * gain->values[j];
            gx[j] += istd * (dh - sum_dh * inv_d - h[j] * sum_dh_h * inv_d);
          }
        }
      }
    });
  }
  return out;
}

TensorPtr Tape::tanh(const TensorPtr& x) {
  auto out = make_output(x->shape, x->requires_grad);
  for (std::size_t i = 0; i < x->size(); ++i) out->values[i] = std::tanh(x->values[i]);
  check_finite(*out, "tanh");
  if (out->requires_grad) {
    record([x, out] {
      for (std::size_t i = 0; i < x->size(); ++i) {
        const double y = out->values[i];
        x->grad[i] += out->grad[i] * (1.0 - y * y);
      }
    });
  }
  return out;
}

TensorPtr Tape::sigmoid(const TensorPtr& x) {
  auto out = make_output(x->shape, x->requires_grad);
  for (std::size_t i = 0; i < x->size(); ++i) {
    const double v = x->values[i];
    out->values[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  check_finite(*out, "sigmoid");
  if (out->requires_grad) {
    record([x, out] {
      for (std::size_t i = 0; i < x->size(); ++i) {
        const double y = out->values[i];
        x->grad[i] += out->grad[i] * y * (1.0 - y);
      }
    });
  }
  return out;
}

TensorPtr Tape::add(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape != b->shape) {
    throw std::invalid_argument("add: shape mismatch, " + a->shape_str() + " vs " +
                                b->shape_str());
  }
  auto out = make_output(a->shape, a->requires_grad || b->requires_grad);
  for (std::size_t i = 0; i < a->size(); ++i) out->values[i] = a->values[i] + b->values[i];
  check_finite(*out, "add");
  if (out->requires_grad) {
    record([a, b, out] {
      if (a->requires_grad)
        for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
      if (b->requires_grad)
        for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr Tape::hadamard(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape != b->shape) {
    throw std::invalid_argument("hadamard: shape mismatch, " + a->shape_str() + " vs " +
                                b->shape_str());
  }
  auto out = make_output(a->shape, a->requires_grad || b->requires_grad);
  for (std::size_t i = 0; i < a->size(); ++i) out->values[i] = a->values[i] * b->values[i];
  check_finite(*out, "hadamard");
  if (out->requires_grad) {
    record([a, b, out] {
      if (a->requires_grad)
        for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * b->values[i];
      if (b->requires_grad)
        for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i] * a->values[i];
    });
  }
  return out;
}

TensorPtr Tape::scale(const TensorPtr& a, double factor) {
  auto out = make_output(a->shape, a->requires_grad);
  for (std::size_t i = 0; i < a->size(); ++i) out->values[i] = a->values[i] * factor;
  check_finite(*out, "scale");
  if (out->requires_grad) {
    record([a, out, factor] {
      for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * factor;
    });
  }
  return out;
}

TensorPtr Tape::hadamard_col(const TensorPtr& a, const TensorPtr& col) {
  require_2d(a, "hadamard_col");
  const std::size_t m = a->shape[0], n = a->shape[1];
  if (col->size() != m) {
    throw std::invalid_argument("hadamard_col: column length " + std::to_string(col->size()) +
                                " for " + std::to_string(m) + " rows");
  }
  auto out = make_output({m, n}, a->requires_grad || col->requires_grad);
  for (std::size_t i = 0; i < m; ++i) {
    const double c = col->values[i];
    for (std::size_t j = 0; j < n; ++j) out->values[i * n + j] = a->values[i * n + j] * c;
  }
  check_finite(*out, "hadamard_col");
  if (out->requires_grad) {
    record([a, col, out, m, n] {
      for (std::size_t i = 0; i < m; ++i) {
        const double c = col->values[i];
        const double* g = out->grad.data() + i * n;
        if (a->requires_grad) {
          double* ga = a->grad.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) ga[j] += g[j] * c;
        }
        if (col->requires_grad) {
          double acc = 0.0;
          const double* av = a->values.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) acc += g[j] * av[j];
          col->grad[i] += acc;
        }
      }
    });
  }
  return out;
}

TensorPtr Tape::gather_rows(const TensorPtr& x, const std::vector<std::size_t>& idx) {
  require_2d(x, "gather_rows");
  const std::size_t m = x->shape[0], n = x->shape[1];
  for (std::size_t r : idx) {
    if (r >= m) {
      throw std::out_of_range("gather_rows: index " + std::to_string(r) + " out of range [0, " +
                              std::to_string(m) + ")");
    }
  }
  auto out = make_output({idx.size(), n}, x->requires_grad);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double* src = x->values.data() + idx[i] * n;
    std::copy(src, src + n, out->values.data() + i * n);
  }
  if (out->requires_grad) {
    auto index_copy = idx;
    record([x, out, index_copy, n] {
      for (std::size_t i = 0; i < index_copy.size(); ++i) {
        double* dst = x->grad.data() + index_copy[i] * n;
        const double* g = out->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += g[j];
      }
    });
  }
  return out;
}

TensorPtr Tape::concat_rows(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const std::size_t n = parts[0]->cols();
  std::size_t total = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p->shape[1] != n) {
      throw std::invalid_argument("concat_rows: column mismatch, " + std::to_string(n) + " vs " +
                                  std::to_string(p->shape[1]));
    }
    total += p->shape[0];
    needs_grad = needs_grad || p->requires_grad;
  }
  auto out = make_output({total, n}, needs_grad);
  std::size_t row = 0;
  for (const auto& p : parts) {
    std::copy(p->values.begin(), p->values.end(), out->values.data() + row * n);
    row += p->shape[0];
  }
  if (out->requires_grad) {
    auto parts_copy = parts;
    record([parts_copy, out, n] {
      std::size_t row = 0;
      for (const auto& p : parts_copy) {
        if (p->requires_grad) {
          const double* g = out->grad.data() + row * n;
          for (std::size_t i = 0; i < p->size(); ++i) p->grad[i] += g[i];
        }
        row += p->shape[0];
      }
    });
  }
  return out;
}

TensorPtr Tape::reshape(const TensorPtr& x, std::vector<std::size_t> shape) {
  if (shape_product(shape) != x->size()) {
    throw std::invalid_argument("reshape: cannot view " + x->shape_str() + " as " +
                                make_tensor(shape)->shape_str());
  }
  auto out = make_output(std::move(shape), x->requires_grad);
  out->values = x->values;
  if (out->requires_grad) {
    record([x, out] {
      for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr Tape::sum(const TensorPtr& x) {
  auto out = make_output({1}, x->requires_grad);
  out->values[0] = std::accumulate(x->values.begin(), x->values.end(), 0.0);
  check_finite(*out, "sum");
  if (out->requires_grad) {
    record([x, out] {
      const double g = out->grad[0];
      for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += g;
    });
  }
  return out;
}

TensorPtr Tape::pick(const TensorPtr& x, std::size_t r, std::size_t c) {
  require_2d(x, "pick");
  if (r >= x->shape[0] || c >= x->shape[1]) {
    throw std::out_of_range("pick: (" + std::to_string(r) + "," + std::to_string(c) +
                            ") outside " + x->shape_str());
  }
  auto out = make_output({1}, x->requires_grad);
  const std::size_t flat = r * x->shape[1] + c;
  out->values[0] = x->values[flat];
  if (out->requires_grad) {
    record([x, out, flat] { x->grad[flat] += out->grad[0]; });
  }
  return out;
}

TensorPtr Tape::softmax_xent(const TensorPtr& scores, std::size_t label) {
  require_2d(scores, "softmax_xent");
  if (scores->shape[0] != 1) {
    throw std::invalid_argument("softmax_xent: expected a 1xJ row, got " + scores->shape_str());
  }
  const std::size_t j_count = scores->shape[1];
  if (label >= j_count) {
    throw std::out_of_range("softmax_xent: label " + std::to_string(label) + " outside 1x" +
                            std::to_string(j_count));
  }
  const double* s = scores->values.data();
  const double mx = *std::max_element(s, s + j_count);
  double denom = 0.0;
  for (std::size_t j = 0; j < j_count; ++j) denom += std::exp(s[j] - mx);
  auto out = make_output({1}, scores->requires_grad);
  // -log p(label) = log(sum exp(s - mx)) - (s_label - mx)
  out->values[0] = std::log(denom) - (s[label] - mx);
  check_finite(*out, "softmax_xent");
  if (out->requires_grad) {
    record([scores, out, label, mx, denom, j_count] {
      const double g = out->grad[0];
      const double* s = scores->values.data();
      for (std::size_t j = 0; j < j_count; ++j) {
        const double p = std::exp(s[j] - mx) / denom;
        scores->grad[j] += g * (p - (j == label ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

void Tape::backward(const TensorPtr& loss) {
  if (loss->size() != 1) {
    throw std::logic_error("backward: loss must be scalar, got shape " + loss->shape_str());
  }
  if (!loss->requires_grad) {
    throw std::logic_error("backward: loss does not require gradients");
  }
  if (backward_done_) {
    throw std::logic_error("backward: tape already consumed; build a new tape");
  }
  backward_done_ = true;
  loss->grad[0] = 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

GradCheckReport grad_check(const LossFn& f,
                           const std::vector<std::pair<std::string, TensorPtr>>& params,
                           double step, double denom_floor) {
  for (const auto& [name, p] : params) {
    if (!p->requires_grad) {
      throw std::invalid_argument("grad_check: parameter '" + name +
                                  "' does not require gradients");
    }
    p->zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TensorPtr loss = f(tape);
    tape.backward(loss);
  }
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) analytic.push_back(p->grad);

  auto eval = [&f]() {
    Tape tape;
    return f(tape)->values[0];
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& [name, p] = params[pi];
    GradCheckEntry entry;
    entry.name = name;
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = p->values[i];
      p->values[i] = saved + step;
      const double up = eval();
      p->values[i] = saved - step;
      const double down = eval();
      p->values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[pi][i];
      const double diff = std::abs(a - numeric);
      const double rel = diff / std::max({std::abs(a), std::abs(numeric), denom_floor});
      entry.max_abs_diff = std::max(entry.max_abs_diff, diff);
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    if (entry.max_rel_err >= report.worst_rel_err) {
      report.worst_rel_err = entry.max_rel_err;
      report.worst_param = entry.name;
    }
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

}  // namespace sine
