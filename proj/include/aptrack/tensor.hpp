#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace aptrack {

// Test instrumentation. When installed via tensor_audit(), softmax records
// the sum of every output slice and attention records the shape of every
// score matrix it materializes.
struct TensorAudit {
  std::vector<double>* softmax_slice_sums = nullptr;
  std::vector<std::pair<std::size_t, std::size_t>>* attention_score_shapes = nullptr;
};

TensorAudit*& tensor_audit();

// Disables graph taping on this thread while alive (inference, finite
// differences).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

/// Dense row-major f64 tensor. Ops tape a reverse-mode graph; backward()
/// propagates into leaf gradients and frees the tape.
class Tensor {
 public:
  struct Node;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data,
         bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(const std::vector<std::size_t>& shape,
                      bool requires_grad = false);
  static Tensor full(const std::vector<std::size_t>& shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t rank() const;
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  const std::vector<double>& data() const;
  std::vector<double>& data();
  double value() const;  // scalar tensors only
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  Node* node() const { return node_.get(); }
  std::shared_ptr<Node> node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Elementwise (shapes must match exactly; no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor vmin(const Tensor& a, const Tensor& b);
Tensor vmax(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor vabs(const Tensor& a);
Tensor vlog(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

// Structural (rank-2).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);

// Reductions / broadcast.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor add_rowvec(const Tensor& x, const Tensor& b);  // b: rank-1 {cols}
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// Normalized kernels.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-6);

/// Scaled dot-product attention, q: Nq x C, k/v: Nk x C, C divisible by
/// heads. Rows of every attention weight matrix sum to 1.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads = 1);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

/// Reverse-mode sweep from a scalar loss. Populates gradients of every
/// reachable leaf and releases the tape.
void backward(const Tensor& loss);

/// Named parameter set. Map order is the deterministic iteration order.
struct Params {
  struct Entry {
    Tensor tensor;
    bool trainable = true;
  };
  std::map<std::string, Entry> entries;

  Tensor& add(const std::string& name, Tensor t, bool trainable = true);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  void zero_grad();
  std::size_t trainable_size() const;
};

/// Max over all trainable entries of |analytic - central difference| /
/// max(1, |central difference|).
double grad_check(const std::function<Tensor(Params&)>& f, Params& params,
                  double step = 1e-5);

// APTT container: magic "APTT", u32 rank, u32 extents, little-endian f64
// payload.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Checkpoint: concatenated APTT blocks plus a text manifest of
// "name shape offset" lines.
void save_params(const Params& p, const std::string& payload_path,
                 const std::string& manifest_path);
Params load_params(const std::string& payload_path,
                   const std::string& manifest_path);

}  // namespace aptrack
