#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// Every op allocates a Node holding its value and a closure that pushes the
// node's gradient into its parents. Parameters are long-lived leaf nodes
// shared between graphs; intermediate nodes die with the loss that owns them.

#include "vaal/error.hpp"
#include "vaal/matrix.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

namespace vaal::nn {

struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    bool requires_grad = false;
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Matrix& value() const { return node_->value; }
    Matrix& mutable_value() { return node_->value; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    double scalar() const {
        require(rows() == 1 && cols() == 1, "Var::scalar on non-scalar");
        return node_->value(0, 0);
    }
    const std::shared_ptr<Node>& node() const { return node_; }
    bool defined() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

inline Var constant(Matrix value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

inline Var constant_scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
}

inline Var parameter(Matrix value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
}

/// Same value, cut off from the gradient graph.
inline Var detach(const Var& x) { return constant(x.value()); }

namespace detail {

template <typename Backward>
Var make_op(Matrix value, std::vector<Var> inputs, Backward backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& in : inputs) {
        n->requires_grad = n->requires_grad || in.requires_grad();
        n->parents.push_back(in.node());
    }
    if (n->requires_grad) n->backward = std::move(backward);
    return Var(std::move(n));
}

inline void accumulate(const std::shared_ptr<Node>& p, const Matrix& g) {
    if (p->requires_grad) p->grad += g;
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix out = a.value() * b.value();
    return detail::make_op(std::move(out), {a, b}, [](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        if (pa->requires_grad) pa->grad.noalias() += self.grad * pb->value.transpose();
        if (pb->requires_grad) pb->grad.noalias() += pa->value.transpose() * self.grad;
    });
}

/// x (n x k) plus a 1 x k row broadcast over every row.
inline Var add_row(const Var& x, const Var& row) {
    require(row.rows() == 1 && row.cols() == x.cols(), "add_row: shape mismatch");
    Matrix out = x.value().rowwise() + row.value().row(0);
    return detail::make_op(std::move(out), {x, row}, [](Node& self) {
        detail::accumulate(self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) self.parents[1]->grad += self.grad.colwise().sum();
    });
}

inline Var add(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    return detail::make_op(a.value() + b.value(), {a, b}, [](Node& self) {
        detail::accumulate(self.parents[0], self.grad);
        detail::accumulate(self.parents[1], self.grad);
    });
}

inline Var sub(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    return detail::make_op(a.value() - b.value(), {a, b}, [](Node& self) {
        detail::accumulate(self.parents[0], self.grad);
        detail::accumulate(self.parents[1], -self.grad);
    });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
    Matrix out = a.value().cwiseProduct(b.value());
    return detail::make_op(std::move(out), {a, b}, [](Node& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        if (pa->requires_grad) pa->grad += self.grad.cwiseProduct(pb->value);
        if (pb->requires_grad) pb->grad += self.grad.cwiseProduct(pa->value);
    });
}

inline Var scale(const Var& x, double k) {
    return detail::make_op(x.value() * k, {x}, [k](Node& self) { detail::accumulate(self.parents[0], self.grad * k); });
}

inline Var add_scalar(const Var& x, double k) {
    Matrix out = x.value().array() + k;
    return detail::make_op(std::move(out), {x}, [](Node& self) { detail::accumulate(self.parents[0], self.grad); });
}

inline Var relu(const Var& x) {
    Matrix out = x.value().cwiseMax(0.0);
    return detail::make_op(std::move(out), {x}, [](Node& self) {
        const auto& p = self.parents[0];
        if (p->requires_grad) p->grad.array() += (p->value.array() > 0.0).cast<double>() * self.grad.array();
    });
}

inline Var sigmoid(const Var& x) {
    Matrix out = (1.0 + (-x.value().array()).exp()).inverse().matrix();
    return detail::make_op(std::move(out), {x}, [](Node& self) {
        const auto& p = self.parents[0];
        if (p->requires_grad) p->grad.array() += self.grad.array() * self.value.array() * (1.0 - self.value.array());
    });
}

inline Var tanh(const Var& x) {
    Matrix out = x.value().array().tanh().matrix();
    return detail::make_op(std::move(out), {x}, [](Node& self) {
        const auto& p = self.parents[0];
        if (p->requires_grad) p->grad.array() += self.grad.array() * (1.0 - self.value.array().square());
    });
}

inline Var exp(const Var& x) {
    Matrix out = x.value().array().exp().matrix();
    return detail::make_op(std::move(out), {x}, [](Node& self) {
        const auto& p = self.parents[0];
        if (p->requires_grad) p->grad.array() += self.grad.array() * self.value.array();
    });
}

inline Var log(const Var& x) {
    Matrix out = x.value().array().log().matrix();
    return detail::make_op(std::move(out), {x}, [](Node& self) {
        const auto& p = self.parents[0];
        if (p->requires_grad) p->grad.array() += self.grad.array() / p->value.array();
    });
}

inline Var square(const Var& x) {
    Matrix out = x.value().array().square().matrix();
    return detail::make_op(std::move(out), {x}, [](Node& self) {
        const auto& p = self.parents[0];
        if (p->requires_grad) p->grad.array() += 2.0 * self.grad.array() * p->value.array();
    });
}

/// Clamp into [lo, hi]; gradient passes only where the input was inside.
inline Var clamp(const Var& x, double lo, double hi) {
    Matrix out = x.value().cwiseMax(lo).cwiseMin(hi);
    return detail::make_op(std::move(out), {x}, [lo, hi](Node& self) {
        const auto& p = self.parents[0];
        if (p->requires_grad)
            p->grad.array() += self.grad.array() * ((p->value.array() >= lo) && (p->value.array() <= hi)).cast<double>();
    });
}

inline Var sum(const Var& x) {
    Matrix out(1, 1);
    out(0, 0) = x.value().sum();
    return detail::make_op(std::move(out), {x}, [](Node& self) {
        const auto& p = self.parents[0];
        if (p->requires_grad) p->grad.array() += self.grad(0, 0);
    });
}

inline Var mean(const Var& x) {
    require(x.value().size() > 0, "mean of empty matrix");
    return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

/// Per-row sum, n x 1.
inline Var row_sum(const Var& x) {
    Matrix out = x.value().rowwise().sum();
    return detail::make_op(std::move(out), {x}, [](Node& self) {
        const auto& p = self.parents[0];
        if (p->requires_grad) p->grad.colwise() += self.grad.col(0);
    });
}

/// Columns [start, start + count).
inline Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count) {
    require(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols: out of range");
    Matrix out = x.value().middleCols(start, count);
    return detail::make_op(std::move(out), {x}, [start, count](Node& self) {
        const auto& p = self.parents[0];
        if (p->requires_grad) p->grad.middleCols(start, count) += self.grad;
    });
}

/// Row-wise log-softmax, numerically stabilised by the row max.
inline Var log_softmax(const Var& x) {
    const Matrix& v = x.value();
    Matrix out(v.rows(), v.cols());
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
        const double m = v.row(r).maxCoeff();
        const double lse = m + std::log((v.row(r).array() - m).exp().sum());
        out.row(r) = v.row(r).array() - lse;
    }
    return detail::make_op(std::move(out), {x}, [](Node& self) {
        const auto& p = self.parents[0];
        if (!p->requires_grad) return;
        const Matrix soft = self.value.array().exp().matrix();
        const Eigen::VectorXd gsum = self.grad.rowwise().sum();
        p->grad += self.grad - (soft.array().colwise() * gsum.array()).matrix();
    });
}

/// out(r, 0) = x(r, cols[r]).
inline Var pick(const Var& x, const std::vector<int>& cols) {
    require(static_cast<Eigen::Index>(cols.size()) == x.rows(), "pick: one column per row required");
    Matrix out(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const int c = cols[static_cast<std::size_t>(r)];
        require(c >= 0 && c < x.cols(), "pick: column out of range");
        out(r, 0) = x.value()(r, c);
    }
    return detail::make_op(std::move(out), {x}, [cols](Node& self) {
        const auto& p = self.parents[0];
        if (!p->requires_grad) return;
        for (Eigen::Index r = 0; r < self.value.rows(); ++r) p->grad(r, cols[static_cast<std::size_t>(r)]) += self.grad(r, 0);
    });
}

/// Stack a on top of b.
inline Var concat_rows(const Var& a, const Var& b) {
    require(a.cols() == b.cols(), "concat_rows: column mismatch");
    Matrix out(a.rows() + b.rows(), a.cols());
    out.topRows(a.rows()) = a.value();
    out.bottomRows(b.rows()) = b.value();
    const Eigen::Index split = a.rows();
    return detail::make_op(std::move(out), {a, b}, [split](Node& self) {
        detail::accumulate(self.parents[0], self.grad.topRows(split));
        detail::accumulate(self.parents[1], self.grad.bottomRows(self.grad.rows() - split));
    });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double k, const Var& x) { return scale(x, k); }

/// Gradients of the scalar `loss` with respect to `params`, in order.
/// Parameters the loss does not reach get zero gradients.
inline std::vector<Matrix> gradients(const Var& loss, const std::vector<Var>& params) {
    require(loss.defined() && loss.rows() == 1 && loss.cols() == 1, "gradients: loss must be a scalar node");
    require(loss.requires_grad(), "gradients: loss is detached from every trainable parameter");

    // iterative post-order DFS over the differentiable part of the graph
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
    loss.node()->grad(0, 0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }

    std::vector<Matrix> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        if (visited.contains(p.node().get())) {
            out.push_back(p.node()->grad);
        } else {
            out.push_back(Matrix::Zero(p.rows(), p.cols()));
        }
    }
    // intermediate gradients are not needed past this point
    for (Node* n : order) {
        if (n->parents.empty()) n->grad.resize(0, 0);
    }
    return out;
}

}  // namespace vaal::nn
