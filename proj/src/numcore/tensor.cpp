#include "wmb/numcore/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace wmb {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_next_id = 1;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

std::string shape_of(const Matrix& m) {
    return Shape{static_cast<int>(m.rows()), static_cast<int>(m.cols())}.str();
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    std::ostringstream os;
    os << op << ": incompatible shapes " << shape_of(a) << " and " << shape_of(b);
    throw std::invalid_argument(os.str());
}

// An empty grad means "no contribution yet"; the first contribution is moved in.
void accumulate(Node& parent, Matrix g) {
    if (!parent.requires_grad) return;
    if (parent.grad.size() == 0)
        parent.grad = std::move(g);
    else
        parent.grad += g;
}

// Reduce a full-size gradient to the (possibly broadcast) operand shape.
Matrix reduce_to(Matrix g, const Matrix& like) {
    if (g.rows() == like.rows() && g.cols() == like.cols()) return g;
    if (like.rows() == 1 && like.cols() == 1) return Matrix::Constant(1, 1, g.sum());
    if (like.rows() == 1) return g.colwise().sum();
    return g.rowwise().sum();
}

// Calls f with m broadcast to [rows, cols] as a lazy array expression.
template <class F>
Matrix with_expanded(const Matrix& m, Eigen::Index rows, Eigen::Index cols, F&& f) {
    if (m.rows() == rows && m.cols() == cols) return f(m.array());
    if (m.rows() == 1 && m.cols() == 1) return f(Matrix::Constant(rows, cols, m(0, 0)).array());
    if (m.rows() == 1) return f(m.replicate(rows, 1).array());
    return f(m.replicate(1, cols).array());
}

template <class Op>
Matrix broadcast_apply(const Matrix& a, const Matrix& b, Eigen::Index rows, Eigen::Index cols, Op op) {
    return with_expanded(a, rows, cols, [&](const auto& x) {
        return with_expanded(b, rows, cols, [&](const auto& y) -> Matrix { return op(x, y).matrix(); });
    });
}

Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
    if (m.rows() == rows && m.cols() == cols) return m;
    if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(rows, cols, m(0, 0));
    if (m.rows() == 1) return m.replicate(rows, 1);
    return m.replicate(1, cols);
}

bool broadcastable(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
    if (m.rows() == rows && m.cols() == cols) return true;
    if (m.rows() == 1 && m.cols() == 1) return true;
    if (m.rows() == 1 && m.cols() == cols) return true;
    if (m.cols() == 1 && m.rows() == rows) return true;
    return false;
}

// Output extent of a broadcasting binary op.
std::pair<Eigen::Index, Eigen::Index> broadcast_shape(const char* op, const Matrix& a,
                                                      const Matrix& b) {
    const Eigen::Index rows = std::max(a.rows(), b.rows());
    const Eigen::Index cols = std::max(a.cols(), b.cols());
    if (!broadcastable(a, rows, cols) || !broadcastable(b, rows, cols)) shape_error(op, a, b);
    return {rows, cols};
}

template <typename F>
Tensor unary(const Tensor& x, Matrix value, F&& local_grad) {
    return make_result(std::move(value), {x}, [lg = std::forward<F>(local_grad)](Node& self) {
        Node& in = *self.parents[0];
        accumulate(in, lg(in.value, self.value, self.grad));
    });
}

// Fills value = gelu(x) and, when wanted, deriv = gelu'(x) sharing one erf per entry.
void gelu_eval(const Matrix& x, Matrix& value, Matrix* deriv) {
    value.resize(x.rows(), x.cols());
    if (deriv) deriv->resize(x.rows(), x.cols());
    const double* in = x.data();
    double* out = value.data();
    double* d = deriv ? deriv->data() : nullptr;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(in[i] * kInvSqrt2));
        out[i] = in[i] * cdf;
        if (d) d[i] = cdf + in[i] * kInvSqrt2Pi * std::exp(-0.5 * in[i] * in[i]);
    }
}

bool needs_grad(const Tensor& x) { return GradMode::enabled() && x.requires_grad(); }

// Adds g into rows [begin, begin + g.rows()) (or columns) of the parent's grad.
void accumulate_rows(Node& parent, Eigen::Index begin, const Matrix& g) {
    if (!parent.requires_grad) return;
    if (parent.grad.size() == 0) parent.grad = Matrix::Zero(parent.value.rows(), parent.value.cols());
    parent.grad.middleRows(begin, g.rows()) += g;
}

void accumulate_cols(Node& parent, Eigen::Index begin, const Matrix& g) {
    if (!parent.requires_grad) return;
    if (parent.grad.size() == 0) parent.grad = Matrix::Zero(parent.value.rows(), parent.value.cols());
    parent.grad.middleCols(begin, g.cols()) += g;
}

}  // namespace

std::string Shape::str() const {
    std::ostringstream os;
    os << "[" << rows << "," << cols << "]";
    return os.str();
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->id = g_next_id++;
}

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
    return Tensor(Matrix::Zero(rows, cols), requires_grad);
}

Tensor Tensor::constant(int rows, int cols, double v, bool requires_grad) {
    return Tensor(Matrix::Constant(rows, cols, v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return constant(1, 1, v, requires_grad); }

Tensor Tensor::row(std::span<const double> values, bool requires_grad) {
    Matrix m(1, static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = values[i];
    return Tensor(std::move(m), requires_grad);
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows, bool requires_grad) {
    if (rows.empty()) throw std::invalid_argument("from_rows: no rows");
    const auto cols = rows.front().size();
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != cols) throw std::invalid_argument("from_rows: ragged rows");
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return Tensor(std::move(m), requires_grad);
}

Shape Tensor::shape() const { return Shape{rows(), cols()}; }

double Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item: tensor of shape " + shape().str());
    return node_->value(0, 0);
}

void Tensor::zero_grad() {
    if (node_->grad.size() > 0) node_->grad.setZero();
}

void Tensor::backward() const {
    if (size() != 1) throw std::invalid_argument("backward: root must be scalar, got " + shape().str());
    if (!node_->requires_grad) return;

    // Post-order DFS: parents precede children in `order`.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    // Intermediate grads start empty (zero); leaves keep what they hold.
    for (Node* n : order)
        if (n->backward_fn || n == node_.get()) n->grad.resize(0, 0);
    node_->grad = Matrix::Constant(1, 1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.size() > 0) n->backward_fn(*n);
    }
    for (Node* n : order)
        if (n->grad.size() == 0) n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
}

Tensor make_result(Matrix value, std::vector<Tensor> parents, std::function<void(Node&)> fn) {
    Tensor out(std::move(value), false);
    if (!GradMode::enabled()) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward_fn = std::move(fn);
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
    Matrix v = a.value() * b.value();
    return make_result(std::move(v), {a, b}, [](Node& self) {
        Node& x = *self.parents[0];
        Node& w = *self.parents[1];
        if (x.requires_grad) accumulate(x, self.grad * w.value.transpose());
        if (w.requires_grad) accumulate(w, x.value.transpose() * self.grad);
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const int rows = parts.front().rows();
    int cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
        cols += p.cols();
    }
    Matrix v(rows, cols);
    int off = 0;
    for (const auto& p : parts) {
        v.middleCols(off, p.cols()) = p.value();
        off += p.cols();
    }
    return make_result(std::move(v), parts, [](Node& self) {
        Eigen::Index o = 0;
        for (auto& p : self.parents) {
            const auto c = p->value.cols();
            if (p->requires_grad) accumulate(*p, self.grad.middleCols(o, c));
            o += c;
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const int cols = parts.front().cols();
    int rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) shape_error("concat_rows", parts.front().value(), p.value());
        rows += p.rows();
    }
    Matrix v(rows, cols);
    int off = 0;
    for (const auto& p : parts) {
        v.middleRows(off, p.rows()) = p.value();
        off += p.rows();
    }
    return make_result(std::move(v), parts, [](Node& self) {
        Eigen::Index o = 0;
        for (auto& p : self.parents) {
            const auto r = p->value.rows();
            if (p->requires_grad) accumulate(*p, self.grad.middleRows(o, r));
            o += r;
        }
    });
}

Tensor slice_cols(const Tensor& x, int begin, int end) {
    if (begin < 0 || end > x.cols() || begin >= end)
        throw std::invalid_argument("slice_cols: range [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") out of " + x.shape().str());
    Matrix v = x.value().middleCols(begin, end - begin);
    return make_result(std::move(v), {x}, [begin](Node& self) {
        accumulate_cols(*self.parents[0], begin, self.grad);
    });
}

Tensor slice_rows(const Tensor& x, int begin, int end) {
    if (begin < 0 || end > x.rows() || begin >= end)
        throw std::invalid_argument("slice_rows: range [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") out of " + x.shape().str());
    Matrix v = x.value().middleRows(begin, end - begin);
    return make_result(std::move(v), {x}, [begin](Node& self) {
        accumulate_rows(*self.parents[0], begin, self.grad);
    });
}

Tensor gather_rows(const Tensor& x, std::span<const int> index) {
    Matrix v(static_cast<Eigen::Index>(index.size()), x.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0 || index[i] >= x.rows())
            throw std::invalid_argument("gather_rows: index " + std::to_string(index[i]) +
                                        " out of " + x.shape().str());
        v.row(static_cast<Eigen::Index>(i)) = x.value().row(index[i]);
    }
    std::vector<int> idx(index.begin(), index.end());
    return make_result(std::move(v), {x}, [idx = std::move(idx)](Node& self) {
        Node& in = *self.parents[0];
        Matrix g = Matrix::Zero(in.value.rows(), in.value.cols());
        for (std::size_t i = 0; i < idx.size(); ++i)
            g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
        accumulate(in, g);
    });
}

Tensor transpose(const Tensor& x) {
    Matrix v = x.value().transpose();
    return make_result(std::move(v), {x},
                       [](Node& self) { accumulate(*self.parents[0], self.grad.transpose()); });
}

Tensor add(const Tensor& a, const Tensor& b) {
    const auto [r, c] = broadcast_shape("add", a.value(), b.value());
    Matrix v = broadcast_apply(a.value(), b.value(), r, c, [](const auto& x, const auto& y) { return x + y; });
    return make_result(std::move(v), {a, b}, [](Node& self) {
        for (auto& p : self.parents)
            if (p->requires_grad) accumulate(*p, reduce_to(self.grad, p->value));
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const auto [r, c] = broadcast_shape("sub", a.value(), b.value());
    Matrix v = broadcast_apply(a.value(), b.value(), r, c, [](const auto& x, const auto& y) { return x - y; });
    return make_result(std::move(v), {a, b}, [](Node& self) {
        Node& x = *self.parents[0];
        Node& y = *self.parents[1];
        if (x.requires_grad) accumulate(x, reduce_to(self.grad, x.value));
        if (y.requires_grad) accumulate(y, reduce_to(-self.grad, y.value));
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const auto [r, c] = broadcast_shape("mul", a.value(), b.value());
    Matrix v = broadcast_apply(a.value(), b.value(), r, c, [](const auto& x, const auto& y) { return x * y; });
    return make_result(std::move(v), {a, b}, [r = r, c = c](Node& self) {
        Node& x = *self.parents[0];
        Node& y = *self.parents[1];
        if (x.requires_grad)
            accumulate(x, reduce_to(broadcast_apply(self.grad, y.value, r, c,
                                                    [](const auto& g, const auto& v) { return g * v; }),
                                    x.value));
        if (y.requires_grad)
            accumulate(y, reduce_to(broadcast_apply(self.grad, x.value, r, c,
                                                    [](const auto& g, const auto& v) { return g * v; }),
                                    y.value));
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    const auto [r, c] = broadcast_shape("div", a.value(), b.value());
    Matrix v = expand(a.value(), r, c).cwiseQuotient(expand(b.value(), r, c));
    return make_result(std::move(v), {a, b}, [r = r, c = c](Node& self) {
        Node& x = *self.parents[0];
        Node& y = *self.parents[1];
        const Matrix yb = expand(y.value, r, c);
        if (x.requires_grad) accumulate(x, reduce_to(self.grad.cwiseQuotient(yb), x.value));
        if (y.requires_grad) {
            const Matrix gy = -self.grad.cwiseProduct(self.value).cwiseQuotient(yb);
            accumulate(y, reduce_to(gy, y.value));
        }
    });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double s) {
    return unary(x, x.value() * s, [s](const Matrix&, const Matrix&, const Matrix& g) -> Matrix {
        return g * s;
    });
}

Tensor add_scalar(const Tensor& x, double s) {
    Matrix v = x.value().array() + s;
    return unary(x, std::move(v),
                 [](const Matrix&, const Matrix&, const Matrix& g) -> Matrix { return g; });
}

Tensor exp(const Tensor& x) {
    Matrix v = x.value().array().exp();
    return unary(x, std::move(v), [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
        return g.cwiseProduct(y);
    });
}

Tensor log(const Tensor& x) {
    Matrix v = x.value().array().log();
    return unary(x, std::move(v), [](const Matrix& in, const Matrix&, const Matrix& g) -> Matrix {
        return g.cwiseQuotient(in);
    });
}

Tensor square(const Tensor& x) {
    Matrix v = x.value().cwiseProduct(x.value());
    return unary(x, std::move(v), [](const Matrix& in, const Matrix&, const Matrix& g) -> Matrix {
        return 2.0 * g.cwiseProduct(in);
    });
}

Tensor sqrt(const Tensor& x) {
    Matrix v = x.value().cwiseSqrt();
    return unary(x, std::move(v), [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
        return 0.5 * g.cwiseQuotient(y);
    });
}

Tensor tanh(const Tensor& x) {
    Matrix v = x.value().array().tanh();
    return unary(x, std::move(v), [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
        return g.array() * (1.0 - y.array().square());
    });
}

Tensor sigmoid(const Tensor& x) {
    Matrix v = x.value().unaryExpr([](double t) {
        if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
        const double e = std::exp(t);
        return e / (1.0 + e);
    });
    return unary(x, std::move(v), [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
        return g.array() * y.array() * (1.0 - y.array());
    });
}

Tensor gelu(const Tensor& x) {
    Matrix v, deriv;
    gelu_eval(x.value(), v, needs_grad(x) ? &deriv : nullptr);
    return make_result(std::move(v), {x}, [deriv = std::move(deriv)](Node& self) {
        accumulate(*self.parents[0], self.grad.cwiseProduct(deriv));
    });
}

Tensor maximum(const Tensor& x, double floor) {
    Matrix v = x.value().cwiseMax(floor);
    return unary(x, std::move(v), [floor](const Matrix& in, const Matrix&, const Matrix& g) -> Matrix {
        return (in.array() > floor).select(g, 0.0);
    });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    Matrix v = x.value().cwiseMax(lo).cwiseMin(hi);
    return unary(x, std::move(v), [lo, hi](const Matrix& in, const Matrix&, const Matrix& g) -> Matrix {
        return (in.array() >= lo && in.array() <= hi).select(g, 0.0);
    });
}

Tensor detach(const Tensor& x) { return Tensor(x.value(), false); }

Tensor geglu(const Tensor& x) {
    if (x.cols() % 2 != 0)
        throw std::invalid_argument("geglu: last dimension must be even, got " + x.shape().str());
    const int half = x.cols() / 2;
    const Matrix b = x.value().rightCols(half);
    Matrix gb, deriv;
    gelu_eval(b, gb, needs_grad(x) ? &deriv : nullptr);
    Matrix v = x.value().leftCols(half).cwiseProduct(gb);
    return make_result(std::move(v), {x}, [half, gb = std::move(gb), deriv = std::move(deriv)](Node& self) {
        Node& in = *self.parents[0];
        Matrix g(in.value.rows(), in.value.cols());
        g.leftCols(half) = self.grad.cwiseProduct(gb);
        g.rightCols(half) = self.grad.cwiseProduct(in.value.leftCols(half)).cwiseProduct(deriv);
        accumulate(in, std::move(g));
    });
}

Tensor layernorm(const Tensor& x, double eps) {
    if (x.cols() < 2)
        throw std::invalid_argument("layernorm: last dimension must be >= 2, got " + x.shape().str());
    const Eigen::Index n = x.cols();
    Matrix centered = x.value().colwise() - x.value().rowwise().mean();
    Eigen::VectorXd inv_std =
        ((centered.array().square().rowwise().sum() / static_cast<double>(n)) + eps).rsqrt();
    Matrix y = centered.array().colwise() * inv_std.array();
    return make_result(std::move(y), {x}, [inv_std](Node& self) {
        Node& in = *self.parents[0];
        const Matrix& y = self.value;
        const Matrix& g = self.grad;
        const Eigen::VectorXd g_mean = g.rowwise().mean();
        const Eigen::VectorXd gy_mean = g.cwiseProduct(y).rowwise().mean();
        Matrix dx = g;
        dx.colwise() -= g_mean;
        dx -= (y.array().colwise() * gy_mean.array()).matrix();
        dx = dx.array().colwise() * inv_std.array();
        accumulate(in, dx);
    });
}

Tensor sum(const Tensor& x) {
    Matrix v = Matrix::Constant(1, 1, x.value().sum());
    return make_result(std::move(v), {x}, [](Node& self) {
        Node& in = *self.parents[0];
        accumulate(in, Matrix::Constant(in.value.rows(), in.value.cols(), self.grad(0, 0)));
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor sum_cols(const Tensor& x) {
    Matrix v = x.value().rowwise().sum();
    return make_result(std::move(v), {x}, [](Node& self) {
        Node& in = *self.parents[0];
        accumulate(in, self.grad.replicate(1, in.value.cols()));
    });
}

Tensor mean_rows(const Tensor& x) {
    Matrix v = x.value().colwise().mean();
    const double inv = 1.0 / static_cast<double>(x.rows());
    return make_result(std::move(v), {x}, [inv](Node& self) {
        Node& in = *self.parents[0];
        accumulate(in, (self.grad * inv).replicate(in.value.rows(), 1));
    });
}

}  // namespace wmb
