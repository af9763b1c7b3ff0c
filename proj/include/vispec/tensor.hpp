#pragma once
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vispec/rng.hpp"

namespace vispec {

// Dense row-major f64 tensor with optional reverse-mode autodiff.
// Ops record parent links only when some input requires gradients, so
// inference runs tape-free through the same arithmetic.
class Tensor {
public:
    struct Node {
        std::vector<std::size_t> shape;
        std::vector<double> value;
        std::vector<double> grad;            // allocated lazily on backward
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_fn;  // accumulate into parents
        std::string name;                    // set for named parameters
    };

    Tensor() : node_(std::make_shared<Node>()) {}
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double v);
    static Tensor from(std::vector<std::size_t> shape, std::vector<double> data);
    static Tensor scalar(double v) { return from({1}, {v}); }
    static Tensor randn(std::vector<std::size_t> shape, RngStream& rng, double stddev);

    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rows() const { return node_->shape.empty() ? 0 : node_->shape[0]; }
    std::size_t cols() const { return node_->shape.size() < 2 ? 1 : node_->shape[1]; }

    double item() const;
    double at(std::size_t i, std::size_t j) const { return node_->value[i * cols() + j]; }
    double& at(std::size_t i, std::size_t j) { return node_->value[i * cols() + j]; }
    std::span<const double> data() const { return node_->value; }
    std::span<double> mutable_data() { return node_->value; }
    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(node_->value).subspan(i * cols(), cols());
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool rg) { node_->requires_grad = rg; return *this; }
    Tensor& set_name(std::string n) { node_->name = std::move(n); return *this; }
    const std::string& name() const { return node_->name; }

    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    std::shared_ptr<Node> node() const { return node_; }

    // Throws if any entry is NaN/Inf.
    void check_finite(const char* where) const;

private:
    std::shared_ptr<Node> node_;
};

// Named trainable parameters of a model; gradient bookkeeping lives here.
class ParameterStore {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) > 0; }
    void zero_grads();
    const std::map<std::string, Tensor>& all() const { return params_; }
    std::map<std::string, Tensor>& all() { return params_; }

private:
    std::map<std::string, Tensor> params_;
};

// ---- plain (non-autodiff) operations -------------------------------------

// Numerically stable softmax of a logit vector.
std::vector<double> softmax(std::span<const double> logits);

// Unscaled (optionally 1/sqrt(d)-scaled) dense attention. `allowed`, when
// present, lists per query row the key indices it may attend to, in
// summation order; absent means full attention.
Tensor plain_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                       const std::optional<std::vector<std::vector<std::int32_t>>>& allowed = std::nullopt,
                       bool scaled = false);

// ---- autodiff operations -------------------------------------------------
namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);                 // same shape
Tensor add_row_broadcast(const Tensor& mat, const Tensor& row);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);                 // elementwise
Tensor scale(const Tensor& a, double c);
Tensor tanh_op(const Tensor& a);
Tensor gather_rows(const Tensor& table, const std::vector<std::int32_t>& ids);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t len);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor sum(const Tensor& a);

// Fused multi-head attention with per-row allowed key lists (summation order
// fixed by list order, which makes cached/tree evaluation bit-identical to
// the full pass). Scores are q.k per head, times 1/sqrt(d_head) when `scaled`.
Tensor attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                 const std::vector<std::vector<std::int32_t>>& allowed, bool scaled,
                 std::size_t heads = 1);

// Mean over rows of sum_t p(t) * (logsumexp(logits) - logits(t)), with
// per-row weights (rows with weight 0 are skipped). Targets are constants.
Tensor cross_entropy_rows(const Tensor& logits, const Tensor& target_probs,
                          const std::vector<double>& row_weights);

} // namespace ops

// Reverse-mode backward pass from a scalar loss. Populates .grad on every
// reachable tensor that requires gradients.
void backward(const Tensor& loss);

// While alive, ops do not record the tape (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool grad_enabled();

private:
    bool prev_;
};

} // namespace vispec
