#include "claw/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "claw/types.hpp"

namespace claw {

namespace detail {

std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

namespace {

using detail::TensorData;
using NodePtr = std::shared_ptr<TensorData>;

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

void check_2d(const Tensor& t, const char* op) {
  if (t.shape().size() != 2) {
    throw ShapeError(std::string(op) + ": expects a 2-D tensor, got " + shape_str(t.shape()));
  }
}

}  // namespace

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  s += "]";
  return s;
}

Tensor Tensor::from(std::vector<double> values, std::vector<std::size_t> shape,
                    bool requires_grad) {
  if (shape_product(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  for (std::size_t s : shape) {
    if (s == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<TensorData>();
  t.impl_->shape = std::move(shape);
  t.impl_->values = std::move(values);
  t.impl_->requires_grad = requires_grad;
  t.impl_->seq = detail::next_seq();
  return t;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  std::vector<double> v(shape_product(shape), value);
  return from(std::move(v), std::move(shape), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({value}, {1}, requires_grad);
}

std::size_t Tensor::rows() const {
  check_2d(*this, "rows");
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  check_2d(*this, "cols");
  return impl_->shape[1];
}

double Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item: tensor has shape " + shape_str(shape()) +
                                ", expected a single element");
  }
  return impl_->values[0];
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.assign(impl_->values.size(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor::from(impl_->values, impl_->shape, false);
}

Tensor Tensor::make_node(std::vector<double> values, std::vector<std::size_t> shape,
                         std::vector<NodePtr> parents,
                         std::function<void(const TensorData&)> backprop) {
  Tensor t = Tensor::from(std::move(values), std::move(shape), true);
  t.impl_->parents = std::move(parents);
  t.impl_->backprop = std::move(backprop);
  return t;
}

namespace {

enum class BinKind { add, sub, mul, div };

Tensor binary(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  if (a.shape() != b.shape() && na != 1 && nb != 1) {
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t n = std::max(na, nb);
  const std::size_t sa = (na == 1 && n > 1) ? 0 : 1;
  const std::size_t sb = (nb == 1 && n > 1) ? 0 : 1;
  const std::vector<std::size_t>& out_shape = (na >= nb) ? a.shape() : b.shape();

  const double* av = a.values().data();
  const double* bv = b.values().data();
  std::vector<double> out(n);
  switch (kind) {
    case BinKind::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i * sa] + bv[i * sb];
      break;
    case BinKind::sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i * sa] - bv[i * sb];
      break;
    case BinKind::mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i * sa] * bv[i * sb];
      break;
    case BinKind::div:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i * sa] / bv[i * sb];
      break;
  }

  if (!a.requires_grad() && !b.requires_grad()) {
    return Tensor::from(std::move(out), out_shape);
  }

  NodePtr pa = a.ptr();
  NodePtr pb = b.ptr();
  auto bp = [pa, pb, kind, sa, sb, n](const TensorData& self) {
    if (self.grad.empty()) return;
    const double* g = self.grad.data();
    const double* av = pa->values.data();
    const double* bv = pb->values.data();
    if (pa->requires_grad) {
      auto& ga = pa->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        switch (kind) {
          case BinKind::add:
          case BinKind::sub: d = g[i]; break;
          case BinKind::mul: d = g[i] * bv[i * sb]; break;
          case BinKind::div: d = g[i] / bv[i * sb]; break;
        }
        ga[i * sa] += d;
      }
    }
    if (pb->requires_grad) {
      auto& gb = pb->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        switch (kind) {
          case BinKind::add: d = g[i]; break;
          case BinKind::sub: d = -g[i]; break;
          case BinKind::mul: d = g[i] * av[i * sa]; break;
          case BinKind::div: {
            const double bb = bv[i * sb];
            d = -g[i] * av[i * sa] / (bb * bb);
            break;
          }
        }
        gb[i * sb] += d;
      }
    }
  };
  return Tensor::make_node(std::move(out), out_shape, {pa, pb}, std::move(bp));
}

// f: value map; df: derivative from (input, output).
template <typename F, typename DF>
Tensor unary(const Tensor& a, F&& f, DF&& df) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const double* av = a.values().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i]);
  if (!a.requires_grad()) return Tensor::from(std::move(out), a.shape());

  NodePtr pa = a.ptr();
  auto bp = [pa, df, n](const TensorData& self) {
    if (self.grad.empty() || !pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    const double* g = self.grad.data();
    const double* x = pa->values.data();
    const double* y = self.values.data();
    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * df(x[i], y[i]);
  };
  return Tensor::make_node(std::move(out), a.shape(), {pa}, std::move(bp));
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::div, "div"); }

Tensor add(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
Tensor sub(const Tensor& a, double c) { return sub(a, Tensor::scalar(c)); }
Tensor sub(double c, const Tensor& a) { return sub(Tensor::scalar(c), a); }
Tensor mul(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }
Tensor div(const Tensor& a, double c) { return div(a, Tensor::scalar(c)); }
Tensor div(double c, const Tensor& a) { return div(Tensor::scalar(c), a); }

Tensor neg(const Tensor& a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, [](double x) { return stable_sigmoid(x); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& a) {
  const auto& v = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0)) {
      throw std::domain_error("log: input must be strictly positive, got " +
                              std::to_string(v[i]) + " at index " + std::to_string(i));
    }
  }
  return unary(a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor sqrt(const Tensor& a) {
  const auto& v = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] < 0.0) {
      throw std::domain_error("sqrt: input must be non-negative, got " + std::to_string(v[i]) +
                              " at index " + std::to_string(i));
    }
  }
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor softplus(const Tensor& a) {
  return unary(a, [](double x) { return stable_softplus(x); },
               [](double x, double) { return stable_sigmoid(x); });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  if (!a.requires_grad()) return Tensor::scalar(s);
  NodePtr pa = a.ptr();
  auto bp = [pa](const TensorData& self) {
    if (self.grad.empty() || !pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    const double g = self.grad[0];
    for (double& v : ga) v += g;
  };
  return Tensor::make_node({s}, {1}, {pa}, std::move(bp));
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.values()) s += v;
  s /= n;
  if (!a.requires_grad()) return Tensor::scalar(s);
  NodePtr pa = a.ptr();
  auto bp = [pa, n](const TensorData& self) {
    if (self.grad.empty() || !pa->requires_grad) return;
    auto& ga = pa->ensure_grad();
    const double g = self.grad[0] / n;
    for (double& v : ga) v += g;
  };
  return Tensor::make_node({s}, {1}, {pa}, std::move(bp));
}

namespace {

void check_rowvec(const Tensor& a, const Tensor& v, const char* name) {
  check_2d(a, name);
  if (v.shape().size() != 1 || v.shape()[0] != a.shape()[1]) {
    throw ShapeError(std::string(name) + ": cannot broadcast " + shape_str(v.shape()) +
                     " across rows of " + shape_str(a.shape()));
  }
}

}  // namespace

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  check_rowvec(a, v, "add_rowvec");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  const double* av = a.values().data();
  const double* vv = v.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + vv[j];
  }
  if (!a.requires_grad() && !v.requires_grad()) return Tensor::from(std::move(out), a.shape());

  NodePtr pa = a.ptr();
  NodePtr pv = v.ptr();
  auto bp = [pa, pv, m, n](const TensorData& self) {
    if (self.grad.empty()) return;
    const double* g = self.grad.data();
    if (pa->requires_grad) {
      auto& ga = pa->ensure_grad();
      for (std::size_t i = 0; i < m * n; ++i) ga[i] += g[i];
    }
    if (pv->requires_grad) {
      auto& gv = pv->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
      }
    }
  };
  return Tensor::make_node(std::move(out), a.shape(), {pa, pv}, std::move(bp));
}

Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
  check_rowvec(a, v, "mul_rowvec");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  const double* av = a.values().data();
  const double* vv = v.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] * vv[j];
  }
  if (!a.requires_grad() && !v.requires_grad()) return Tensor::from(std::move(out), a.shape());

  NodePtr pa = a.ptr();
  NodePtr pv = v.ptr();
  auto bp = [pa, pv, m, n](const TensorData& self) {
    if (self.grad.empty()) return;
    const double* g = self.grad.data();
    const double* av = pa->values.data();
    const double* vv = pv->values.data();
    if (pa->requires_grad) {
      auto& ga = pa->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j] * vv[j];
      }
    }
    if (pv->requires_grad) {
      auto& gv = pv->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j] * av[i * n + j];
      }
    }
  };
  return Tensor::make_node(std::move(out), a.shape(), {pa, pv}, std::move(bp));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }

  std::vector<double> out(m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    const double* arow = av + i * k;
    for (std::size_t r = 0; r < k; ++r) {
      const double x = arow[r];
      const double* brow = bv + r * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  }

  if (!a.requires_grad() && !b.requires_grad()) return Tensor::from(std::move(out), {m, n});

  NodePtr pa = a.ptr();
  NodePtr pb = b.ptr();
  auto bp = [pa, pb, m, k, n](const TensorData& self) {
    if (self.grad.empty()) return;
    const double* g = self.grad.data();
    if (pa->requires_grad) {
      // dA = dC * B^T
      auto& ga = pa->ensure_grad();
      const double* bv = pb->values.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        double* garow = ga.data() + i * k;
        for (std::size_t r = 0; r < k; ++r) {
          const double* brow = bv + r * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          garow[r] += s;
        }
      }
    }
    if (pb->requires_grad) {
      // dB = A^T * dC
      auto& gb = pb->ensure_grad();
      const double* av = pa->values.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = av + i * k;
        const double* grow = g + i * n;
        for (std::size_t r = 0; r < k; ++r) {
          const double x = arow[r];
          if (x == 0.0) continue;
          double* gbrow = gb.data() + r * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += x * grow[j];
        }
      }
    }
  };
  return Tensor::make_node(std::move(out), {m, n}, {pa, pb}, std::move(bp));
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check_2d(logits, "softmax_cross_entropy");
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  if (batch == 0) throw std::invalid_argument("softmax_cross_entropy: empty batch");
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(batch));
  }
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                              " at row " + std::to_string(i) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
  }

  const double* z = logits.values().data();
  std::vector<double> probs(batch * classes);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = z + i * classes;
    double mx = row[0];
    for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < classes; ++j) denom += std::exp(row[j] - mx);
    const double lse = std::log(denom) + mx;
    for (std::size_t j = 0; j < classes; ++j) probs[i * classes + j] = std::exp(row[j] - lse);
    loss += lse - row[static_cast<std::size_t>(labels[i])];
  }
  loss /= static_cast<double>(batch);

  if (!logits.requires_grad()) return Tensor::scalar(loss);

  NodePtr pl = logits.ptr();
  auto bp = [pl, probs = std::move(probs), labels, batch, classes](const TensorData& self) {
    if (self.grad.empty() || !pl->requires_grad) return;
    auto& gl = pl->ensure_grad();
    const double g = self.grad[0] / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t y = static_cast<std::size_t>(labels[i]);
      for (std::size_t j = 0; j < classes; ++j) {
        gl[i * classes + j] += g * (probs[i * classes + j] - (j == y ? 1.0 : 0.0));
      }
    }
  };
  return Tensor::make_node({loss}, {1}, {pl}, std::move(bp));
}

std::vector<double> softmax_rows(const Tensor& logits) {
  check_2d(logits, "softmax_rows");
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  const double* z = logits.values().data();
  std::vector<double> probs(batch * classes);
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = z + i * classes;
    double mx = row[0];
    for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < classes; ++j) denom += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < classes; ++j) probs[i * classes + j] = std::exp(row[j] - mx) / denom;
  }
  return probs;
}

void backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1) {
    throw std::invalid_argument("backward: root must be a defined scalar tensor");
  }
  if (!root.requires_grad()) return;

  using detail::TensorData;
  std::vector<TensorData*> nodes;
  std::unordered_set<TensorData*> seen;
  std::vector<TensorData*> stack{root.node()};
  seen.insert(root.node());
  while (!stack.empty()) {
    TensorData* cur = stack.back();
    stack.pop_back();
    nodes.push_back(cur);
    for (const auto& p : cur->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const TensorData* a, const TensorData* b) { return a->seq > b->seq; });

  // Interior buffers are per-sweep scratch; leaves keep accumulating.
  for (TensorData* n : nodes) {
    if (n->backprop) n->grad.assign(n->values.size(), 0.0);
  }
  root.node()->ensure_grad()[0] += 1.0;
  for (TensorData* n : nodes) {
    if (n->backprop) n->backprop(*n);
  }
}

}  // namespace claw
