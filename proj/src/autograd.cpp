#include "lmmvqa/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "lmmvqa/common.hpp"

namespace lmmvqa::autograd {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

thread_local bool g_grad_enabled = true;

NodePtr make_node(Matrix value, std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        for (const NodePtr& p : parents) node->requires_grad = node->requires_grad || p->requires_grad;
        node->parents = std::move(parents);
    }
    if (node->requires_grad) {
        node->grad = Matrix::Zero(node->value.rows(), node->value.cols());
        node->backward_fn = std::move(backward_fn);
    }
    return node;
}

void check(bool ok, const std::string& what) {
    if (!ok) throw ShapeError("autograd shape mismatch: " + what);
}

}  // namespace

Var Var::constant(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(node);
}

Var Var::leaf(Parameter& param) {
    auto node = std::make_shared<Node>();
    node->value = param.value;
    if (g_grad_enabled) {
        node->grad = Matrix::Zero(param.value.rows(), param.value.cols());
        node->param = &param;
        node->requires_grad = true;
    }
    return Var(node);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
    check(root.rows() == 1 && root.cols() == 1, "backward root must be scalar");
    if (!root.requires_grad()) return;

    // Iterative post-order DFS; reverse gives a valid topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
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

    root.node()->grad(0, 0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
        if (node->param != nullptr) node->param->grad += node->grad;
    }
}

Var matmul(const Var& a, const Var& b) {
    check(a.cols() == b.rows(), "matmul inner dims");
    NodePtr an = a.node(), bn = b.node();
    return Var(make_node(an->value * bn->value, {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) an->grad.noalias() += self.grad * bn->value.transpose();
        if (bn->requires_grad) bn->grad.noalias() += an->value.transpose() * self.grad;
    }));
}

Var add(const Var& a, const Var& b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "add shapes");
    NodePtr an = a.node(), bn = b.node();
    return Var(make_node(an->value + bn->value, {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) an->grad += self.grad;
        if (bn->requires_grad) bn->grad += self.grad;
    }));
}

Var add_rowwise(const Var& a, const Var& bias_row) {
    check(bias_row.rows() == 1 && bias_row.cols() == a.cols(), "rowwise bias width");
    NodePtr an = a.node(), bn = bias_row.node();
    Matrix out = an->value;
    out.rowwise() += bn->value.row(0);
    return Var(make_node(std::move(out), {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) an->grad += self.grad;
        if (bn->requires_grad) bn->grad += self.grad.colwise().sum();
    }));
}

Var subtract(const Var& a, const Var& b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "subtract shapes");
    NodePtr an = a.node(), bn = b.node();
    return Var(make_node(an->value - bn->value, {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) an->grad += self.grad;
        if (bn->requires_grad) bn->grad -= self.grad;
    }));
}

Var cwise_mul(const Var& a, const Var& b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "cwise_mul shapes");
    NodePtr an = a.node(), bn = b.node();
    return Var(make_node(an->value.cwiseProduct(bn->value), {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) an->grad += self.grad.cwiseProduct(bn->value);
        if (bn->requires_grad) bn->grad += self.grad.cwiseProduct(an->value);
    }));
}

Var scale(const Var& a, double factor) {
    NodePtr an = a.node();
    return Var(make_node(an->value * factor, {an}, [an, factor](Node& self) {
        if (an->requires_grad) an->grad += self.grad * factor;
    }));
}

Var transpose(const Var& a) {
    NodePtr an = a.node();
    return Var(make_node(an->value.transpose(), {an}, [an](Node& self) {
        if (an->requires_grad) an->grad += self.grad.transpose();
    }));
}

Var relu(const Var& a) {
    NodePtr an = a.node();
    return Var(make_node(an->value.cwiseMax(0.0), {an}, [an](Node& self) {
        if (!an->requires_grad) return;
        an->grad += self.grad.cwiseProduct((an->value.array() > 0.0).cast<double>().matrix());
    }));
}

Var gelu(const Var& a) {
    NodePtr an = a.node();
    Matrix out = an->value.unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
    return Var(make_node(std::move(out), {an}, [an](Node& self) {
        if (!an->requires_grad) return;
        Matrix d = an->value.unaryExpr([](double x) {
            return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        });
        an->grad += self.grad.cwiseProduct(d);
    }));
}

Var softmax_rows(const Var& a) {
    NodePtr an = a.node();
    Matrix out(an->value.rows(), an->value.cols());
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double m = an->value.row(r).maxCoeff();
        Eigen::RowVectorXd e = (an->value.row(r).array() - m).exp();
        out.row(r) = e / e.sum();
    }
    return Var(make_node(out, {an}, [an, out](Node& self) {
        if (!an->requires_grad) return;
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
            const double dot = self.grad.row(r).dot(out.row(r));
            an->grad.row(r) += out.row(r).cwiseProduct((self.grad.row(r).array() - dot).matrix());
        }
    }));
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    check(gamma.rows() == 1 && gamma.cols() == x.cols(), "layer norm gamma width");
    check(beta.rows() == 1 && beta.cols() == x.cols(), "layer norm beta width");
    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
    const Eigen::Index rows = xn->value.rows(), cols = xn->value.cols();

    Matrix hat(rows, cols);
    Eigen::VectorXd inv_std(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double mu = xn->value.row(r).mean();
        const double var = (xn->value.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        hat.row(r) = (xn->value.row(r).array() - mu) * inv_std(r);
    }
    Matrix out = hat;
    out.array().rowwise() *= gn->value.row(0).array();
    out.rowwise() += bn->value.row(0);

    return Var(make_node(std::move(out), {xn, gn, bn}, [xn, gn, bn, hat, inv_std](Node& self) {
        if (bn->requires_grad) bn->grad += self.grad.colwise().sum();
        if (gn->requires_grad) gn->grad += self.grad.cwiseProduct(hat).colwise().sum();
        if (!xn->requires_grad) return;
        for (Eigen::Index r = 0; r < hat.rows(); ++r) {
            Eigen::RowVectorXd g = self.grad.row(r).cwiseProduct(gn->value.row(0));
            const double mean_g = g.mean();
            const double mean_gh = g.cwiseProduct(hat.row(r)).mean();
            xn->grad.row(r) +=
                inv_std(r) * (g.array() - mean_g - hat.row(r).array() * mean_gh).matrix();
        }
    }));
}

Var concat_rows(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_rows needs input");
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts.front().cols();
    std::vector<NodePtr> parents;
    for (const Var& part : parts) {
        check(part.cols() == cols, "concat_rows widths");
        rows += part.rows();
        parents.push_back(part.node());
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (const NodePtr& p : parents) {
        out.middleRows(at, p->value.rows()) = p->value;
        at += p->value.rows();
    }
    return Var(make_node(std::move(out), parents, [parents](Node& self) {
        Eigen::Index at = 0;
        for (const NodePtr& p : parents) {
            if (p->requires_grad) p->grad += self.grad.middleRows(at, p->value.rows());
            at += p->value.rows();
        }
    }));
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
    check(start >= 0 && count >= 1 && start + count <= a.rows(), "slice_rows range");
    NodePtr an = a.node();
    return Var(make_node(an->value.middleRows(start, count), {an}, [an, start, count](Node& self) {
        if (an->requires_grad) an->grad.middleRows(start, count) += self.grad;
    }));
}

Var concat_cols(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_cols needs input");
    Eigen::Index cols = 0;
    const Eigen::Index rows = parts.front().rows();
    std::vector<NodePtr> parents;
    for (const Var& part : parts) {
        check(part.rows() == rows, "concat_cols heights");
        cols += part.cols();
        parents.push_back(part.node());
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (const NodePtr& p : parents) {
        out.middleCols(at, p->value.cols()) = p->value;
        at += p->value.cols();
    }
    return Var(make_node(std::move(out), parents, [parents](Node& self) {
        Eigen::Index at = 0;
        for (const NodePtr& p : parents) {
            if (p->requires_grad) p->grad += self.grad.middleCols(at, p->value.cols());
            at += p->value.cols();
        }
    }));
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
    check(start >= 0 && count >= 1 && start + count <= a.cols(), "slice_cols range");
    NodePtr an = a.node();
    return Var(make_node(an->value.middleCols(start, count), {an}, [an, start, count](Node& self) {
        if (an->requires_grad) an->grad.middleCols(start, count) += self.grad;
    }));
}

Var mean_rows(const Var& a) {
    NodePtr an = a.node();
    const double inv = 1.0 / static_cast<double>(an->value.rows());
    return Var(make_node(an->value.colwise().mean(), {an}, [an, inv](Node& self) {
        if (an->requires_grad) an->grad += (self.grad * inv).replicate(an->value.rows(), 1);
    }));
}

Var mean_rows_stable(const Var& a) {
    NodePtr an = a.node();
    const Eigen::Index rows = an->value.rows();
    const double inv = 1.0 / static_cast<double>(rows);
    Matrix out(1, an->value.cols());
    std::vector<double> column(static_cast<std::size_t>(rows));
    for (Eigen::Index c = 0; c < an->value.cols(); ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) column[static_cast<std::size_t>(r)] = an->value(r, c);
        std::sort(column.begin(), column.end());
        double sum = 0.0;
        for (double v : column) sum += v;
        out(0, c) = sum * inv;
    }
    return Var(make_node(std::move(out), {an}, [an, inv](Node& self) {
        if (an->requires_grad) an->grad += (self.grad * inv).replicate(an->value.rows(), 1);
    }));
}

Var sum_all(const Var& a) {
    NodePtr an = a.node();
    Matrix out(1, 1);
    out(0, 0) = an->value.sum();
    return Var(make_node(std::move(out), {an}, [an](Node& self) {
        if (an->requires_grad) an->grad.array() += self.grad(0, 0);
    }));
}

Var reshape_rowmajor(const Var& a, Eigen::Index rows, Eigen::Index cols) {
    check(rows * cols == a.rows() * a.cols(), "reshape element count");
    NodePtr an = a.node();
    const Eigen::Index src_cols = an->value.cols();
    Matrix out(rows, cols);
    for (Eigen::Index i = 0; i < rows * cols; ++i)
        out(i / cols, i % cols) = an->value(i / src_cols, i % src_cols);
    return Var(make_node(std::move(out), {an}, [an, rows, cols, src_cols](Node& self) {
        if (!an->requires_grad) return;
        for (Eigen::Index i = 0; i < rows * cols; ++i)
            an->grad(i / src_cols, i % src_cols) += self.grad(i / cols, i % cols);
    }));
}

Var rows_gather(const Var& table, const std::vector<int>& ids) {
    NodePtr tn = table.node();
    Matrix out(static_cast<Eigen::Index>(ids.size()), tn->value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        check(ids[i] >= 0 && ids[i] < tn->value.rows(), "gather index range");
        out.row(static_cast<Eigen::Index>(i)) = tn->value.row(ids[i]);
    }
    return Var(make_node(std::move(out), {tn}, [tn, ids](Node& self) {
        if (!tn->requires_grad) return;
        for (std::size_t i = 0; i < ids.size(); ++i)
            tn->grad.row(ids[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }));
}

Var cross_entropy_mean(const Var& logits, const std::vector<int>& targets) {
    check(static_cast<Eigen::Index>(targets.size()) == logits.rows(), "cross entropy target count");
    check(!targets.empty(), "cross entropy needs targets");
    NodePtr ln = logits.node();
    const Eigen::Index rows = ln->value.rows();

    Matrix softmax(rows, ln->value.cols());
    double total = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) {
        check(targets[static_cast<std::size_t>(r)] >= 0 &&
                  targets[static_cast<std::size_t>(r)] < ln->value.cols(),
              "cross entropy target range");
        const double m = ln->value.row(r).maxCoeff();
        Eigen::RowVectorXd e = (ln->value.row(r).array() - m).exp();
        const double z = e.sum();
        softmax.row(r) = e / z;
        total += (m + std::log(z)) - ln->value(r, targets[static_cast<std::size_t>(r)]);
    }
    Matrix out(1, 1);
    out(0, 0) = total / static_cast<double>(rows);

    return Var(make_node(std::move(out), {ln}, [ln, softmax, targets](Node& self) {
        if (!ln->requires_grad) return;
        const double upstream = self.grad(0, 0) / static_cast<double>(targets.size());
        Matrix d = softmax;
        for (std::size_t i = 0; i < targets.size(); ++i)
            d(static_cast<Eigen::Index>(i), targets[i]) -= 1.0;
        ln->grad += upstream * d;
    }));
}

Matrix log_softmax_rows_value(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
        out.row(r) = logits.row(r).array() - lse;
    }
    return out;
}

}  // namespace lmmvqa::autograd
