#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lorakit/errors.hpp"
#include "lorakit/rng.hpp"

namespace lorakit {

class Tensor;

namespace autograd {

// While a guard is alive, operations run pure: no graph is recorded.
// Used for evaluation passes where gradients are never needed.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool recording_enabled();

}  // namespace autograd

namespace detail {

struct TensorImpl {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty means "absent"

    // Set when the tensor is the output of a recorded operation.
    const char* op_kind = nullptr;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(const TensorImpl& out)> backward_fn;

    bool is_leaf() const { return op_kind == nullptr; }
    std::size_t numel() const { return data.size(); }
};

}  // namespace detail

// Dense tensor of doubles with reverse-mode autodiff. Handle semantics:
// copies share storage. Values are immutable after construction except for
// gradient accumulation and explicit in-place parameter updates during
// training (values_mut). Every operation checks its output for NaN/Inf and
// raises NumericError instead of letting them propagate.
class Tensor {
public:
    using BackwardFn = std::function<void(const Tensor& out, const std::vector<Tensor>& inputs)>;

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor gaussian(std::vector<std::size_t> shape, double mean, double stddev, Rng& rng,
                           bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<std::size_t>& shape() const;
    std::size_t numel() const;
    std::size_t rank() const { return shape().size(); }
    // Matrix accessors; 1-D tensors count as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    const std::vector<double>& values() const;
    double value() const;  // scalar tensors only
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad();

    // Deep copy of values; drops any recorded history.
    Tensor clone() const;
    // In-place access for the optimizer and weight initialization.
    std::vector<double>& values_mut();

    // Accumulate into this tensor's gradient buffer. No-op on leaves with
    // requires_grad == false (frozen parameters never receive gradients).
    void accumulate_grad(std::span<const double> g);

    bool is_leaf() const;
    const char* op_kind() const;

    // Build the output of a custom differentiable operation. `backward`
    // reads out.grad() and must accumulate into the inputs.
    static Tensor from_op(const char* kind, std::vector<std::size_t> shape,
                          std::vector<double> data, std::vector<Tensor> inputs,
                          BackwardFn backward);

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
};

std::string shape_to_string(const std::vector<std::size_t>& shape);

// ---- recorded operations -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);

// C[m×p] = A[m×n] · B[n×p]
Tensor matmul(const Tensor& a, const Tensor& b);
// Y[n×d] = X[n×k] · W[d×k]^T. Weight matrices are stored [out×in].
Tensor linear(const Tensor& x, const Tensor& w);

Tensor silu(const Tensor& x);
Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps);
Tensor softmax_rows(const Tensor& x);
// Row t is a softmax over columns 0..t; columns beyond t are zero.
Tensor causal_softmax(const Tensor& x);

// Rotates consecutive coordinate pairs of each row by position-dependent
// angles theta_base^(-2i/d_head). `rope_apply` uses one position for the
// whole tensor; `rope_sequence` gives row t position start_position + t and
// rotates each of the n_heads blocks of a row independently.
Tensor rope_apply(const Tensor& x, std::size_t position, double theta_base);
Tensor rope_sequence(const Tensor& x, std::size_t n_heads, double theta_base,
                     std::size_t start_position = 0);

// Rows of `table` selected by id; backward scatter-adds into the table.
Tensor embedding_rows(const Tensor& table, std::span<const int> ids);

Tensor row_slice(const Tensor& x, std::size_t start, std::size_t count);
Tensor last_row(const Tensor& x);
Tensor col_slice(const Tensor& x, std::size_t start, std::size_t count);
// Same elements under a new shape; element count must match.
Tensor reshape(const Tensor& x, std::vector<std::size_t> new_shape);
Tensor concat_cols(const std::vector<Tensor>& parts);
// Stacks inputs along rows; 1-D inputs count as single rows.
Tensor concat_rows(const std::vector<Tensor>& parts);

// Inverted dropout on the forward values; identity when p == 0. The mask is
// drawn from `rng`, so training steps that seed their stream are repeatable.
Tensor dropout(const Tensor& x, double p, Rng& rng);

// ---- backward pass ---------------------------------------------------------

// Topologically ordered list of the operations reachable from one output,
// materialized for the backward sweep. Inputs of every node precede it.
class Tape {
public:
    struct Node {
        const char* kind;
        std::shared_ptr<detail::TensorImpl> output;
        std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    };

    static Tape trace(const Tensor& loss);

    const std::vector<Node>& nodes() const { return nodes_; }

    // Runs the reverse sweep, populating grad on every reachable
    // requires_grad leaf. Intermediate gradients are released afterwards.
    void run_backward();

private:
    std::vector<Node> nodes_;
    std::shared_ptr<detail::TensorImpl> root_;
};

/// backward(loss): loss must be a scalar produced by recorded operations.
void backward(const Tensor& loss);

}  // namespace lorakit
