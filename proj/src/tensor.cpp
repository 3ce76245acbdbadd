#include "aptrack/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace aptrack {

struct Tensor::Node {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
};

namespace {

thread_local int g_no_grad_depth = 0;

using Node = Tensor::Node;

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

void ensure_grad(Node& n) {
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}

// Creates a graph node; parents and backprop are kept only when taping is
// on and some parent needs a gradient.
Tensor make_op(std::vector<std::size_t> shape, std::vector<double> value,
               std::vector<std::shared_ptr<Node>> parents,
               std::function<void(Node&)> backprop) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool need = false;
  if (grad_enabled()) {
    for (const auto& p : parents)
      if (p && p->requires_grad) need = true;
  }
  if (need) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return Tensor(std::move(node));
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::runtime_error(std::string("tensor: ") + op + " shape mismatch " +
                             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void check_rank2(const char* op, const Tensor& a) {
  if (a.rank() != 2)
    throw std::runtime_error(std::string("tensor: ") + op + " requires rank 2, got " +
                             shape_str(a.shape()));
}

// Elementwise binary helper: fv(a,b) -> value, backward supplies
// (da/dout, db/dout) per element.
template <class FwdFn, class BwdFn>
Tensor ew_binary(const char* op, const Tensor& a, const Tensor& b, FwdFn fv, BwdFn partials) {
  check_same_shape(op, a, b);
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fv(av[i], bv[i]);
  Node* an = a.node();
  Node* bn = b.node();
  return make_op(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                 [an, bn, partials](Node& n) {
                   const auto& g = n.grad;
                   ensure_grad(*an);
                   ensure_grad(*bn);
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     auto [da, db] = partials(an->value[i], bn->value[i], n.value[i]);
                     an->grad[i] += da * g[i];
                     bn->grad[i] += db * g[i];
                   }
                 });
}

template <class FwdFn, class BwdFn>
Tensor ew_unary(const Tensor& a, FwdFn fv, BwdFn partial) {
  const auto& av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fv(av[i]);
  Node* an = a.node();
  return make_op(a.shape(), std::move(out), {a.node_ptr()}, [an, partial](Node& n) {
    const auto& g = n.grad;
    ensure_grad(*an);
    for (std::size_t i = 0; i < g.size(); ++i)
      an->grad[i] += partial(an->value[i], n.value[i]) * g[i];
  });
}

}  // namespace

TensorAudit*& tensor_audit() {
  thread_local TensorAudit* audit = nullptr;
  return audit;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw std::runtime_error("tensor: shape " + shape_str(shape) + " does not match data length " +
                             std::to_string(data.size()));
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const std::vector<std::size_t>& shape, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const std::vector<std::size_t>& shape, double value) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

const std::vector<std::size_t>& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::rank() const { return node_->shape.size(); }
std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  check_rank2("rows()", *this);
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  check_rank2("cols()", *this);
  return node_->shape[1];
}

const std::vector<double>& Tensor::data() const { return node_->value; }
std::vector<double>& Tensor::data() { return node_->value; }

double Tensor::value() const {
  if (size() != 1) throw std::runtime_error("tensor: value() requires a scalar");
  return node_->value[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  check_rank2("at()", *this);
  return node_->value[i * node_->shape[1] + j];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

const std::vector<double>& Tensor::grad() const {
  ensure_grad(*node_);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return ew_binary("add", a, b, [](double x, double y) { return x + y; },
                   [](double, double, double) { return std::pair{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return ew_binary("sub", a, b, [](double x, double y) { return x - y; },
                   [](double, double, double) { return std::pair{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return ew_binary("mul", a, b, [](double x, double y) { return x * y; },
                   [](double x, double y, double) { return std::pair{y, x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return ew_binary("div", a, b, [](double x, double y) { return x / y; },
                   [](double x, double y, double) {
                     return std::pair{1.0 / y, -x / (y * y)};
                   });
}

Tensor vmin(const Tensor& a, const Tensor& b) {
  return ew_binary("vmin", a, b, [](double x, double y) { return x <= y ? x : y; },
                   [](double x, double y, double) {
                     return x <= y ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0};
                   });
}

Tensor vmax(const Tensor& a, const Tensor& b) {
  return ew_binary("vmax", a, b, [](double x, double y) { return x >= y ? x : y; },
                   [](double x, double y, double) {
                     return x >= y ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0};
                   });
}

Tensor scale(const Tensor& a, double s) {
  return ew_unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor vabs(const Tensor& a) {
  return ew_unary(a, [](double x) { return std::fabs(x); },
                  [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor vlog(const Tensor& a) {
  return ew_unary(a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
  return ew_unary(a,
                  [](double x) {
                    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                    : std::exp(x) / (1.0 + std::exp(x));
                  },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return ew_unary(a,
                  [=](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
                  [=](double x, double) {
                    double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                    double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                    return cdf + x * pdf;
                  });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return ew_unary(a, [=](double x) { return std::min(hi, std::max(lo, x)); },
                  [=](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// structural

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2("matmul", a);
  check_rank2("matmul", b);
  const std::size_t n = a.rows(), m = a.cols(), p = b.cols();
  if (b.rows() != m)
    throw std::runtime_error("tensor: matmul inner dims " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  const double* av = a.data().data();
  const double* bv = b.data().data();
  std::vector<double> out(n * p, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = av + i * m;
    double* orow = out.data() + i * p;
    for (std::size_t k = 0; k < m; ++k) {
      const double s = arow[k];
      const double* brow = bv + k * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += s * brow[j];
    }
  }
  Node* an = a.node();
  Node* bn = b.node();
  return make_op({n, p}, std::move(out), {a.node_ptr(), b.node_ptr()},
                 [an, bn, n, m, p](Node& nd) {
                   const double* g = nd.grad.data();
                   ensure_grad(*an);
                   ensure_grad(*bn);
                   const double* bv = bn->value.data();
                   double* ga = an->grad.data();
                   // dA[i,k] += dot(dOut row i, B row k)
                   for (std::size_t i = 0; i < n; ++i) {
                     const double* grow = g + i * p;
                     double* garow = ga + i * m;
                     for (std::size_t k = 0; k < m; ++k) {
                       const double* brow = bv + k * p;
                       double s = 0.0;
                       for (std::size_t j = 0; j < p; ++j) s += grow[j] * brow[j];
                       garow[k] += s;
                     }
                   }
                   // dB[k,j] += sum_i A[i,k] * dOut[i,j]
                   const double* avv = an->value.data();
                   double* gb = bn->grad.data();
                   for (std::size_t i = 0; i < n; ++i) {
                     const double* arow = avv + i * m;
                     const double* grow = g + i * p;
                     for (std::size_t k = 0; k < m; ++k) {
                       const double s = arow[k];
                       double* gbrow = gb + k * p;
                       for (std::size_t j = 0; j < p; ++j) gbrow[j] += s * grow[j];
                     }
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  check_rank2("transpose", a);
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(n * m);
  const auto& av = a.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = av[i * m + j];
  Node* an = a.node();
  return make_op({m, n}, std::move(out), {a.node_ptr()}, [an, n, m](Node& nd) {
    ensure_grad(*an);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) an->grad[i * m + j] += nd.grad[j * n + i];
  });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  check_rank2("concat_rows", a);
  check_rank2("concat_rows", b);
  if (a.cols() != b.cols())
    throw std::runtime_error("tensor: concat_rows column mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  Node* an = a.node();
  Node* bn = b.node();
  const std::size_t asz = a.size();
  return make_op({a.rows() + b.rows(), a.cols()}, std::move(out), {a.node_ptr(), b.node_ptr()},
                 [an, bn, asz](Node& nd) {
                   ensure_grad(*an);
                   ensure_grad(*bn);
                   for (std::size_t i = 0; i < asz; ++i) an->grad[i] += nd.grad[i];
                   for (std::size_t i = 0; i < bn->value.size(); ++i)
                     bn->grad[i] += nd.grad[asz + i];
                 });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  check_rank2("concat_cols", a);
  check_rank2("concat_cols", b);
  if (a.rows() != b.rows())
    throw std::runtime_error("tensor: concat_cols row mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  const std::size_t n = a.rows(), ca = a.cols(), cb = b.cols();
  std::vector<double> out(n * (ca + cb));
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * ca, ca, out.data() + i * (ca + cb));
    std::copy_n(b.data().data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
  }
  Node* an = a.node();
  Node* bn = b.node();
  return make_op({n, ca + cb}, std::move(out), {a.node_ptr(), b.node_ptr()},
                 [an, bn, n, ca, cb](Node& nd) {
                   ensure_grad(*an);
                   ensure_grad(*bn);
                   for (std::size_t i = 0; i < n; ++i) {
                     for (std::size_t j = 0; j < ca; ++j)
                       an->grad[i * ca + j] += nd.grad[i * (ca + cb) + j];
                     for (std::size_t j = 0; j < cb; ++j)
                       bn->grad[i * cb + j] += nd.grad[i * (ca + cb) + ca + j];
                   }
                 });
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  check_rank2("slice_rows", a);
  if (r0 > r1 || r1 > a.rows())
    throw std::runtime_error("tensor: slice_rows [" + std::to_string(r0) + "," +
                             std::to_string(r1) + ") out of " + std::to_string(a.rows()));
  const std::size_t c = a.cols();
  std::vector<double> out(a.data().begin() + r0 * c, a.data().begin() + r1 * c);
  Node* an = a.node();
  return make_op({r1 - r0, c}, std::move(out), {a.node_ptr()}, [an, r0, c](Node& nd) {
    ensure_grad(*an);
    for (std::size_t i = 0; i < nd.grad.size(); ++i) an->grad[r0 * c + i] += nd.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  check_rank2("slice_cols", a);
  if (c0 > c1 || c1 > a.cols())
    throw std::runtime_error("tensor: slice_cols [" + std::to_string(c0) + "," +
                             std::to_string(c1) + ") out of " + std::to_string(a.cols()));
  const std::size_t n = a.rows(), c = a.cols(), w = c1 - c0;
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(a.data().data() + i * c + c0, w, out.data() + i * w);
  Node* an = a.node();
  return make_op({n, w}, std::move(out), {a.node_ptr()}, [an, n, c, c0, w](Node& nd) {
    ensure_grad(*an);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) an->grad[i * c + c0 + j] += nd.grad[i * w + j];
  });
}

Tensor sum(const Tensor& a) {
  double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
  Node* an = a.node();
  return make_op({1}, {s}, {a.node_ptr()}, [an](Node& nd) {
    ensure_grad(*an);
    for (double& g : an->grad) g += nd.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  check_rank2("add_rowvec", x);
  if (b.size() != x.cols())
    throw std::runtime_error("tensor: add_rowvec length " + std::to_string(b.size()) +
                             " vs cols " + std::to_string(x.cols()));
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> out(x.data());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b.data()[j];
  Node* xn = x.node();
  Node* bn = b.node();
  return make_op(x.shape(), std::move(out), {x.node_ptr(), b.node_ptr()},
                 [xn, bn, n, c](Node& nd) {
                   ensure_grad(*xn);
                   ensure_grad(*bn);
                   for (std::size_t i = 0; i < n * c; ++i) xn->grad[i] += nd.grad[i];
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < c; ++j) bn->grad[j] += nd.grad[i * c + j];
                 });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// normalized kernels

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw std::runtime_error("tensor: softmax axis " + std::to_string(axis) + " out of rank " +
                             std::to_string(x.rank()));
  for (double v : x.data())
    if (!std::isfinite(v)) throw std::runtime_error("tensor: softmax non-finite input");

  const auto& shape = x.shape();
  const std::size_t n = shape[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double denom = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        denom += e;
      }
      double slice_sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        out[base + j * inner] /= denom;
        slice_sum += out[base + j * inner];
      }
      if (tensor_audit() && tensor_audit()->softmax_slice_sums)
        tensor_audit()->softmax_slice_sums->push_back(slice_sum);
    }
  }

  Node* xn = x.node();
  return make_op(shape, std::move(out), {x.node_ptr()}, [xn, outer, n, inner](Node& nd) {
    ensure_grad(*xn);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          dot += nd.grad[base + j * inner] * nd.value[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          xn->grad[idx] += nd.value[idx] * (nd.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_rank2("layer_norm", x);
  const std::size_t n = x.rows(), c = x.cols();
  if (gamma.size() != c || beta.size() != c)
    throw std::runtime_error("tensor: layer_norm channel mismatch, x has " + std::to_string(c) +
                             " channels, gamma " + std::to_string(gamma.size()) + ", beta " +
                             std::to_string(beta.size()));
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double r = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = (row[j] - mu) * r * gv[j] + bv[j];
  }
  Node* xn = x.node();
  Node* gn = gamma.node();
  Node* bn = beta.node();
  return make_op(x.shape(), std::move(out), {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
                 [xn, gn, bn, n, c, eps](Node& nd) {
                   ensure_grad(*xn);
                   ensure_grad(*gn);
                   ensure_grad(*bn);
                   const double cd = static_cast<double>(c);
                   for (std::size_t i = 0; i < n; ++i) {
                     const double* row = xn->value.data() + i * c;
                     const double* gout = nd.grad.data() + i * c;
                     double mu = 0.0;
                     for (std::size_t j = 0; j < c; ++j) mu += row[j];
                     mu /= cd;
                     double var = 0.0;
                     for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
                     var /= cd;
                     const double r = 1.0 / std::sqrt(var + eps);
                     // gradients through the affine, then the normalization
                     double gm = 0.0, gxm = 0.0;
                     for (std::size_t j = 0; j < c; ++j) {
                       const double xhat = (row[j] - mu) * r;
                       const double gj = gout[j] * gn->value[j];
                       bn->grad[j] += gout[j];
                       gn->grad[j] += gout[j] * xhat;
                       gm += gj;
                       gxm += gj * xhat;
                     }
                     gm /= cd;
                     gxm /= cd;
                     for (std::size_t j = 0; j < c; ++j) {
                       const double xhat = (row[j] - mu) * r;
                       const double gj = gout[j] * gn->value[j];
                       xn->grad[i * c + j] += r * (gj - gm - xhat * gxm);
                     }
                   }
                 });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  check_rank2("attention", q);
  check_rank2("attention", k);
  check_rank2("attention", v);
  if (k.rows() == 0) throw std::runtime_error("tensor: attention empty key set");
  if (k.rows() != v.rows())
    throw std::runtime_error("tensor: attention key/value count mismatch");
  const std::size_t c = q.cols();
  if (k.cols() != c || v.cols() != c)
    throw std::runtime_error("tensor: attention channel mismatch");
  if (heads == 0 || c % heads != 0)
    throw std::runtime_error("tensor: attention channels " + std::to_string(c) +
                             " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dh = c / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = heads == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    if (tensor_audit() && tensor_audit()->attention_score_shapes)
      tensor_audit()->attention_score_shapes->push_back({scores.rows(), scores.cols()});
    Tensor weights = softmax(scores, 1);
    Tensor oh = matmul(weights, vh);
    out = (h == 0) ? oh : concat_cols(out, oh);
  }
  return out;
}

// ---------------------------------------------------------------------------
// backward sweep

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::runtime_error("tensor: backward on undefined tensor");
  if (loss.size() != 1) throw std::runtime_error("tensor: backward requires a scalar loss");
  Node* root = loss.node();
  if (!root->requires_grad) return;  // no trainable leaf reachable

  // iterative post-order over the requires-grad subgraph
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* n;
    std::size_t next;
  };
  std::vector<Frame> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node* p = f.n->parents[f.next++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  ensure_grad(*root);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) {
      ensure_grad(*n);
      n->backprop(*n);
    }
  }
  // release the tape; leaf gradients persist
  for (Node* n : order) {
    if (n->backprop) {
      n->backprop = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

// ---------------------------------------------------------------------------
// params

Tensor& Params::add(const std::string& name, Tensor t, bool trainable) {
  auto [it, inserted] = entries.emplace(name, Entry{std::move(t), trainable});
  if (!inserted) throw std::runtime_error("params: duplicate name '" + name + "'");
  it->second.tensor.node()->requires_grad = trainable;
  return it->second.tensor;
}

Tensor& Params::at(const std::string& name) {
  auto it = entries.find(name);
  if (it == entries.end()) throw std::runtime_error("params: missing name '" + name + "'");
  return it->second.tensor;
}

const Tensor& Params::at(const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end()) throw std::runtime_error("params: missing name '" + name + "'");
  return it->second.tensor;
}

bool Params::has(const std::string& name) const { return entries.count(name) != 0; }

void Params::zero_grad() {
  for (auto& [name, e] : entries) e.tensor.zero_grad();
}

std::size_t Params::trainable_size() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries)
    if (e.trainable) n += e.tensor.size();
  return n;
}

double grad_check(const std::function<Tensor(Params&)>& f, Params& params, double step) {
  params.zero_grad();
  Tensor loss = f(params);
  backward(loss);
  std::map<std::string, std::vector<double>> analytic;
  for (const auto& [name, e] : params.entries)
    if (e.trainable) analytic[name] = e.tensor.grad();

  NoGradGuard no_grad;
  double max_rel = 0.0;
  for (auto& [name, e] : params.entries) {
    if (!e.trainable) continue;
    auto& buf = e.tensor.data();
    const auto& an = analytic[name];
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const double saved = buf[i];
      buf[i] = saved + step;
      const double up = f(params).value();
      buf[i] = saved - step;
      const double dn = f(params).value();
      buf[i] = saved;
      const double fd = (up - dn) / (2.0 * step);
      const double rel = std::fabs(an[i] - fd) / std::max(1.0, std::fabs(fd));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// APTT container

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("tensor: truncated APTT stream");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("tensor: truncated APTT stream");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write("APTT", 4);
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) write_u32(out, static_cast<std::uint32_t>(e));
  for (double v : t.data()) write_f64(out, v);
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "APTT", 4) != 0)
    throw std::runtime_error("tensor: bad APTT magic");
  std::uint32_t rank = read_u32(in);
  std::vector<std::size_t> shape(rank);
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = read_u32(in);
    n *= shape[i];
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = read_f64(in);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("tensor: cannot open '" + path + "' for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("tensor: cannot open '" + path + "'");
  return read_tensor(in);
}

void save_params(const Params& p, const std::string& payload_path,
                 const std::string& manifest_path) {
  std::ofstream payload(payload_path, std::ios::binary);
  if (!payload) throw std::runtime_error("tensor: cannot open '" + payload_path + "'");
  std::ofstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("tensor: cannot open '" + manifest_path + "'");
  for (const auto& [name, e] : p.entries) {
    const auto offset = payload.tellp();
    write_tensor(payload, e.tensor);
    manifest << name << " ";
    const auto& shape = e.tensor.shape();
    for (std::size_t i = 0; i < shape.size(); ++i)
      manifest << (i ? "x" : "") << shape[i];
    manifest << " " << offset << "\n";
  }
}

Params load_params(const std::string& payload_path, const std::string& manifest_path) {
  std::ifstream payload(payload_path, std::ios::binary);
  if (!payload) throw std::runtime_error("tensor: cannot open '" + payload_path + "'");
  std::ifstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("tensor: cannot open '" + manifest_path + "'");
  Params out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, shape_s;
    std::uint64_t offset = 0;
    if (!(ls >> name >> shape_s >> offset))
      throw std::runtime_error("tensor: malformed manifest line '" + line + "'");
    payload.seekg(static_cast<std::streamoff>(offset));
    Tensor t = read_tensor(payload);
    out.add(name, std::move(t));
  }
  return out;
}

}  // namespace aptrack
