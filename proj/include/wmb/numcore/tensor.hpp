#pragma once

// Dense 2-D float64 arrays with a reverse-mode differentiation tape.
//
// Every array is a matrix [rows, cols]; vectors are [1, n] rows. Binary
// elementwise ops accept equal shapes or broadcast a scalar [1,1], a row
// [1,c] or a column [r,1] against a [r,c] operand. Nothing else broadcasts.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace wmb {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Shape {
    int rows = 0;
    int cols = 0;
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

struct Node {
    Matrix value;
    Matrix grad;  // allocated lazily during backward; empty when untracked
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
};

/// Thread-local switch; while disabled no op records tape entries.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Matrix value, bool requires_grad = false);

    static Tensor zeros(int rows, int cols, bool requires_grad = false);
    static Tensor constant(int rows, int cols, double v, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor row(std::span<const double> values, bool requires_grad = false);
    static Tensor from_rows(const std::vector<std::vector<double>>& rows,
                            bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    Shape shape() const;
    int rows() const { return static_cast<int>(node_->value.rows()); }
    int cols() const { return static_cast<int>(node_->value.cols()); }
    Eigen::Index size() const { return node_->value.size(); }

    const Matrix& value() const { return node_->value; }
    /// Direct write access; only for leaves (parameters, inputs).
    Matrix& mutable_value() { return node_->value; }
    double item() const;
    double at(int r, int c) const { return node_->value(r, c); }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return node_ && node_->grad.size() > 0; }
    const Matrix& grad() const { return node_->grad; }
    void zero_grad();

    /// Backpropagate from a [1,1] tensor. Intermediate gradients of the
    /// reached subgraph are reset first, so several backward calls on one
    /// graph are independent except for leaf accumulation.
    void backward() const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    friend Tensor make_result(Matrix value, std::vector<Tensor> parents,
                              std::function<void(Node&)> fn);
    std::shared_ptr<Node> node_;
};

/// Build an op output. Parents are recorded only when grad mode is on and at
/// least one parent requires grad.
Tensor make_result(Matrix value, std::vector<Tensor> parents, std::function<void(Node&)> fn);

// Linear algebra and structure.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, int begin, int end);
Tensor slice_rows(const Tensor& x, int begin, int end);
Tensor gather_rows(const Tensor& x, std::span<const int> index);
Tensor transpose(const Tensor& x);

// Elementwise (broadcasting as documented above).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor maximum(const Tensor& x, double floor);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor detach(const Tensor& x);

/// a * GELU(b) where [a; b] are the halves of the last dimension.
Tensor geglu(const Tensor& x);
/// Per-row normalization to zero mean / unit variance (no affine).
Tensor layernorm(const Tensor& x, double eps = 1e-5);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_cols(const Tensor& x);   // [r,c] -> [r,1]
Tensor mean_rows(const Tensor& x);  // [r,c] -> [1,c]

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

}  // namespace wmb
