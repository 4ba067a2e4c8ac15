#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace lmmvqa::autograd {

using Matrix = Eigen::MatrixXd;

// A named trainable matrix. Gradients accumulate across backward calls until
// zero_grad(); the optimizer consumes them in parameter order.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
        grad = Matrix::Zero(value.rows(), value.cols());
    }
    void zero_grad() { grad.setZero(); }
    Eigen::Index size() const { return value.size(); }
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Matrix value;
    Matrix grad;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;  // scatters this->grad into parents
    Parameter* param = nullptr;
    bool requires_grad = false;
};

// Value-semantic handle on a graph node.
class Var {
public:
    Var() = default;
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    static Var constant(Matrix value);
    static Var leaf(Parameter& param);  // copies the current value, grads flow back

    const Matrix& value() const { return node_->value; }
    const Matrix& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

// Reverse-mode sweep from a 1x1 scalar root. Parameter leaves accumulate
// into Parameter::grad.
void backward(const Var& root);

// While alive, graph construction records values only (no grads, no tape).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);                 // same shape
Var add_rowwise(const Var& a, const Var& bias_row);  // bias_row is 1 x C
Var subtract(const Var& a, const Var& b);
Var cwise_mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var transpose(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);  // exact erf form
Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var mean_rows(const Var& a);  // 1 x C column means
// Column means with order-insensitive summation (values sorted per column),
// so any row permutation gives a bit-identical result.
Var mean_rows_stable(const Var& a);
Var sum_all(const Var& a);    // 1 x 1
Var reshape_rowmajor(const Var& a, Eigen::Index rows, Eigen::Index cols);
Var rows_gather(const Var& table, const std::vector<int>& ids);

// Mean negative log-likelihood of targets under row-wise softmax(logits).
Var cross_entropy_mean(const Var& logits, const std::vector<int>& targets);

// Row-wise log-softmax values (no graph), for inference-time scoring.
Matrix log_softmax_rows_value(const Matrix& logits);

}  // namespace lmmvqa::autograd
