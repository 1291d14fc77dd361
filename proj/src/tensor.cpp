#include "lorakit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace lorakit {

namespace autograd {

namespace {
thread_local int no_grad_depth = 0;
}

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }

bool recording_enabled() { return no_grad_depth == 0; }

}  // namespace autograd

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

void validate_shape(const std::vector<std::size_t>& shape) {
    if (shape.empty()) {
        throw DimensionError("tensor shape must have at least one dimension");
    }
    for (std::size_t d : shape) {
        if (d == 0) {
            throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape));
        }
    }
}

void check_finite(const char* kind, std::span<const double> data) {
    for (double v : data) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(kind) + ": produced a non-finite value");
        }
    }
}

// True when an operation consuming this tensor must be recorded.
bool grad_through(const Tensor& t) {
    return t.is_leaf() ? t.requires_grad() : true;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream out;
    out << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << " x ";
        out << shape[i];
    }
    out << "]";
    return out.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    validate_shape(shape);
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->data.assign(shape_numel(shape), 0.0);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    validate_shape(shape);
    check_finite("full", std::span<const double>(&value, 1));
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->data.assign(shape_numel(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_to_string(shape));
    }
    check_finite("from_data", data);
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::gaussian(std::vector<std::size_t> shape, double mean, double stddev, Rng& rng,
                        bool requires_grad) {
    validate_shape(shape);
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = rng.gaussian(mean, stddev);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

const std::vector<std::size_t>& Tensor::shape() const {
    if (!impl_) throw ContractError("shape() on an undefined tensor");
    return impl_->shape;
}

std::size_t Tensor::numel() const { return shape().empty() ? 0 : shape_numel(shape()); }

std::size_t Tensor::rows() const {
    const auto& s = shape();
    if (s.size() == 1) return 1;
    if (s.size() == 2) return s[0];
    throw ContractError("rows() needs a 1-D or 2-D tensor, got " + shape_to_string(s));
}

std::size_t Tensor::cols() const {
    const auto& s = shape();
    if (s.size() == 1) return s[0];
    if (s.size() == 2) return s[1];
    throw ContractError("cols() needs a 1-D or 2-D tensor, got " + shape_to_string(s));
}

const std::vector<double>& Tensor::values() const {
    if (!impl_) throw ContractError("values() on an undefined tensor");
    return impl_->data;
}

double Tensor::value() const {
    if (numel() != 1) {
        throw ContractError("value() needs a scalar tensor, got shape " + shape_to_string(shape()));
    }
    return impl_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    if (row >= rows() || col >= cols()) {
        throw ContractError("at(" + std::to_string(row) + ", " + std::to_string(col) +
                            ") out of bounds for " + shape_to_string(shape()));
    }
    return impl_->data[row * cols() + col];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    if (!impl_) throw ContractError("set_requires_grad() on an undefined tensor");
    impl_->requires_grad = flag;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) {
        throw ContractError("grad() called but no gradient has been accumulated");
    }
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

Tensor Tensor::clone() const {
    if (!impl_) return Tensor();
    return from_data(impl_->shape, impl_->data, impl_->requires_grad);
}

std::vector<double>& Tensor::values_mut() {
    if (!impl_) throw ContractError("values_mut() on an undefined tensor");
    return impl_->data;
}

void Tensor::accumulate_grad(std::span<const double> g) {
    if (!impl_) throw ContractError("accumulate_grad() on an undefined tensor");
    if (impl_->is_leaf() && !impl_->requires_grad) return;
    if (g.size() != impl_->numel()) {
        throw ContractError("gradient size " + std::to_string(g.size()) +
                            " does not match tensor size " + std::to_string(impl_->numel()));
    }
    if (impl_->grad.empty()) impl_->grad.assign(impl_->numel(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) impl_->grad[i] += g[i];
}

bool Tensor::is_leaf() const { return !impl_ || impl_->is_leaf(); }

const char* Tensor::op_kind() const { return impl_ ? impl_->op_kind : nullptr; }

Tensor Tensor::from_op(const char* kind, std::vector<std::size_t> shape, std::vector<double> data,
                       std::vector<Tensor> inputs, BackwardFn backward) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size()) {
        throw ContractError(std::string(kind) + ": output data length does not match shape");
    }
    check_finite(kind, data);

    bool record = autograd::recording_enabled();
    if (record) {
        record = std::any_of(inputs.begin(), inputs.end(),
                             [](const Tensor& t) { return grad_through(t); });
    }

    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (record) {
        impl->op_kind = kind;
        impl->parents.reserve(inputs.size());
        for (const Tensor& t : inputs) impl->parents.push_back(t.impl());
        impl->backward_fn = [inputs = std::move(inputs),
                             backward = std::move(backward)](const detail::TensorImpl& out) {
            Tensor out_handle(std::const_pointer_cast<detail::TensorImpl>(
                std::shared_ptr<const detail::TensorImpl>(&out, [](const detail::TensorImpl*) {})));
            backward(out_handle, inputs);
        };
    }
    return Tensor(std::move(impl));
}

// ---- elementwise operations ------------------------------------------------

namespace {

void require_same_shape(const char* kind, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(kind) + ": shapes disagree: " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return Tensor::from_op("add", a.shape(), std::move(out), {a, b},
                           [](const Tensor& y, const std::vector<Tensor>& in) {
                               const auto& g = y.grad();
                               Tensor(in[0]).accumulate_grad(g);
                               Tensor(in[1]).accumulate_grad(g);
                           });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return Tensor::from_op("sub", a.shape(), std::move(out), {a, b},
                           [](const Tensor& y, const std::vector<Tensor>& in) {
                               const auto& g = y.grad();
                               Tensor(in[0]).accumulate_grad(g);
                               std::vector<double> neg(g.size());
                               for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
                               Tensor(in[1]).accumulate_grad(neg);
                           });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return Tensor::from_op("mul", a.shape(), std::move(out), {a, b},
                           [](const Tensor& y, const std::vector<Tensor>& in) {
                               const auto& g = y.grad();
                               const auto& av = in[0].values();
                               const auto& bv = in[1].values();
                               std::vector<double> ga(g.size()), gb(g.size());
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   ga[i] = g[i] * bv[i];
                                   gb[i] = g[i] * av[i];
                               }
                               Tensor(in[0]).accumulate_grad(ga);
                               Tensor(in[1]).accumulate_grad(gb);
                           });
}

Tensor scale(const Tensor& a, double factor) {
    if (!std::isfinite(factor)) throw NumericError("scale: factor must be finite");
    std::vector<double> out(a.numel());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
    return Tensor::from_op("scale", a.shape(), std::move(out), {a},
                           [factor](const Tensor& y, const std::vector<Tensor>& in) {
                               const auto& g = y.grad();
                               std::vector<double> ga(g.size());
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * factor;
                               Tensor(in[0]).accumulate_grad(ga);
                           });
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    return Tensor::from_op("sum", {1}, {total}, {a},
                           [](const Tensor& y, const std::vector<Tensor>& in) {
                               double g = y.grad()[0];
                               std::vector<double> ga(in[0].numel(), g);
                               Tensor(in[0]).accumulate_grad(ga);
                           });
}

// ---- matrix operations -----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("matmul: needs 2-D operands, got " + shape_to_string(a.shape()) +
                             " and " + shape_to_string(b.shape()));
    }
    const std::size_t m = a.rows(), n = a.cols(), p = b.cols();
    if (b.rows() != n) {
        throw DimensionError("matmul: inner dimensions disagree: " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
    }
    std::vector<double> out(m * p, 0.0);
    const double* ad = a.values().data();
    const double* bd = b.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = ad[i * n + k];
            const double* brow = bd + k * p;
            double* orow = out.data() + i * p;
            for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
        }
    }
    return Tensor::from_op(
        "matmul", {m, p}, std::move(out), {a, b},
        [m, n, p](const Tensor& y, const std::vector<Tensor>& in) {
            const auto& g = y.grad();
            const double* ad = in[0].values().data();
            const double* bd = in[1].values().data();
            // dA = g · B^T
            std::vector<double> ga(m * n, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t k = 0; k < n; ++k) {
                    double acc = 0.0;
                    const double* grow = g.data() + i * p;
                    const double* brow = bd + k * p;
                    for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
                    ga[i * n + k] = acc;
                }
            }
            // dB = A^T · g
            std::vector<double> gb(n * p, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g.data() + i * p;
                for (std::size_t k = 0; k < n; ++k) {
                    const double aik = ad[i * n + k];
                    double* gbrow = gb.data() + k * p;
                    for (std::size_t j = 0; j < p; ++j) gbrow[j] += aik * grow[j];
                }
            }
            Tensor(in[0]).accumulate_grad(ga);
            Tensor(in[1]).accumulate_grad(gb);
        });
}

Tensor linear(const Tensor& x, const Tensor& w) {
    if (w.rank() != 2) {
        throw DimensionError("linear: weight must be 2-D, got " + shape_to_string(w.shape()));
    }
    if (x.rank() > 2) {
        throw DimensionError("linear: input must be 1-D or 2-D, got " + shape_to_string(x.shape()));
    }
    const std::size_t n = x.rows(), k = x.cols();
    const std::size_t d = w.rows();
    if (w.cols() != k) {
        throw DimensionError("linear: input width " + shape_to_string(x.shape()) +
                             " does not match weight " + shape_to_string(w.shape()));
    }
    std::vector<double> out(n * d, 0.0);
    const double* xd = x.values().data();
    const double* wd = w.values().data();
    for (std::size_t r = 0; r < n; ++r) {
        const double* xrow = xd + r * k;
        for (std::size_t o = 0; o < d; ++o) {
            const double* wrow = wd + o * k;
            double acc = 0.0;
            for (std::size_t i = 0; i < k; ++i) acc += xrow[i] * wrow[i];
            out[r * d + o] = acc;
        }
    }
    std::vector<std::size_t> out_shape =
        x.rank() == 1 ? std::vector<std::size_t>{d} : std::vector<std::size_t>{n, d};
    return Tensor::from_op(
        "linear", std::move(out_shape), std::move(out), {x, w},
        [n, k, d](const Tensor& y, const std::vector<Tensor>& in) {
            const auto& g = y.grad();
            const double* xd = in[0].values().data();
            const double* wd = in[1].values().data();
            // dX = g · W
            std::vector<double> gx(n * k, 0.0);
            for (std::size_t r = 0; r < n; ++r) {
                const double* grow = g.data() + r * d;
                double* gxrow = gx.data() + r * k;
                for (std::size_t o = 0; o < d; ++o) {
                    const double go = grow[o];
                    const double* wrow = wd + o * k;
                    for (std::size_t i = 0; i < k; ++i) gxrow[i] += go * wrow[i];
                }
            }
            // dW = g^T · X
            std::vector<double> gw(d * k, 0.0);
            for (std::size_t r = 0; r < n; ++r) {
                const double* grow = g.data() + r * d;
                const double* xrow = xd + r * k;
                for (std::size_t o = 0; o < d; ++o) {
                    const double go = grow[o];
                    double* gwrow = gw.data() + o * k;
                    for (std::size_t i = 0; i < k; ++i) gwrow[i] += go * xrow[i];
                }
            }
            Tensor(in[0]).accumulate_grad(gx);
            Tensor(in[1]).accumulate_grad(gw);
        });
}

// ---- nonlinearities ---------------------------------------------------------

Tensor silu(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * stable_sigmoid(xv[i]);
    return Tensor::from_op("silu", x.shape(), std::move(out), {x},
                           [](const Tensor& y, const std::vector<Tensor>& in) {
                               const auto& g = y.grad();
                               const auto& xv = in[0].values();
                               std::vector<double> gx(g.size());
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   double s = stable_sigmoid(xv[i]);
                                   gx[i] = g[i] * s * (1.0 + xv[i] * (1.0 - s));
                               }
                               Tensor(in[0]).accumulate_grad(gx);
                           });
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
    if (eps <= 0.0) throw ConfigError("rmsnorm: eps must be positive");
    if (gain.rank() != 1) {
        throw DimensionError("rmsnorm: gain must be 1-D, got " + shape_to_string(gain.shape()));
    }
    if (x.rank() > 2) {
        throw DimensionError("rmsnorm: input must be 1-D or 2-D, got " + shape_to_string(x.shape()));
    }
    const std::size_t d = x.cols();
    if (gain.numel() != d) {
        throw DimensionError("rmsnorm: gain length " + std::to_string(gain.numel()) +
                             " does not match last dimension of " + shape_to_string(x.shape()));
    }
    const std::size_t n = x.rows();
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    const auto& gv = gain.values();
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = xv.data() + r * d;
        double ms = 0.0;
        for (std::size_t i = 0; i < d; ++i) ms += row[i] * row[i];
        ms /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(ms + eps);
        for (std::size_t i = 0; i < d; ++i) out[r * d + i] = gv[i] * row[i] * inv;
    }
    return Tensor::from_op(
        "rmsnorm", x.shape(), std::move(out), {x, gain},
        [n, d, eps](const Tensor& y, const std::vector<Tensor>& in) {
            const auto& g = y.grad();
            const auto& xv = in[0].values();
            const auto& gv = in[1].values();
            std::vector<double> gx(xv.size(), 0.0);
            std::vector<double> ggain(d, 0.0);
            for (std::size_t r = 0; r < n; ++r) {
                const double* row = xv.data() + r * d;
                const double* grow = g.data() + r * d;
                double ms = 0.0;
                for (std::size_t i = 0; i < d; ++i) ms += row[i] * row[i];
                ms /= static_cast<double>(d);
                const double inv = 1.0 / std::sqrt(ms + eps);
                double weighted = 0.0;  // sum_i u_i * gain_i * x_i
                for (std::size_t i = 0; i < d; ++i) weighted += grow[i] * gv[i] * row[i];
                const double inv3_over_d = inv * inv * inv / static_cast<double>(d);
                for (std::size_t i = 0; i < d; ++i) {
                    gx[r * d + i] = grow[i] * gv[i] * inv - weighted * row[i] * inv3_over_d;
                    ggain[i] += grow[i] * row[i] * inv;
                }
            }
            Tensor(in[0]).accumulate_grad(gx);
            Tensor(in[1]).accumulate_grad(ggain);
        });
}

Tensor softmax_rows(const Tensor& x) {
    if (x.rank() > 2) {
        throw DimensionError("softmax_rows: input must be 1-D or 2-D, got " +
                             shape_to_string(x.shape()));
    }
    const std::size_t n = x.rows(), c = x.cols();
    if (c == 0) throw DimensionError("softmax_rows: empty row");
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = xv.data() + r * c;
        double m = row[0];
        for (std::size_t i = 1; i < c; ++i) m = std::max(m, row[i]);
        double z = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
            out[r * c + i] = std::exp(row[i] - m);
            z += out[r * c + i];
        }
        for (std::size_t i = 0; i < c; ++i) out[r * c + i] /= z;
    }
    return Tensor::from_op(
        "softmax_rows", x.shape(), std::move(out), {x},
        [n, c](const Tensor& y, const std::vector<Tensor>& in) {
            const auto& g = y.grad();
            const auto& yv = y.values();
            std::vector<double> gx(g.size());
            for (std::size_t r = 0; r < n; ++r) {
                const double* grow = g.data() + r * c;
                const double* yrow = yv.data() + r * c;
                double dot = 0.0;
                for (std::size_t i = 0; i < c; ++i) dot += grow[i] * yrow[i];
                for (std::size_t i = 0; i < c; ++i) gx[r * c + i] = yrow[i] * (grow[i] - dot);
            }
            Tensor(in[0]).accumulate_grad(gx);
        });
}

Tensor causal_softmax(const Tensor& x) {
    if (x.rank() != 2 || x.rows() != x.cols()) {
        throw DimensionError("causal_softmax: needs a square matrix, got " +
                             shape_to_string(x.shape()));
    }
    const std::size_t n = x.rows();
    std::vector<double> out(x.numel(), 0.0);
    const auto& xv = x.values();
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = xv.data() + r * n;
        double m = row[0];
        for (std::size_t i = 1; i <= r; ++i) m = std::max(m, row[i]);
        double z = 0.0;
        for (std::size_t i = 0; i <= r; ++i) {
            out[r * n + i] = std::exp(row[i] - m);
            z += out[r * n + i];
        }
        for (std::size_t i = 0; i <= r; ++i) out[r * n + i] /= z;
    }
    return Tensor::from_op(
        "causal_softmax", x.shape(), std::move(out), {x},
        [n](const Tensor& y, const std::vector<Tensor>& in) {
            const auto& g = y.grad();
            const auto& yv = y.values();
            std::vector<double> gx(g.size(), 0.0);
            for (std::size_t r = 0; r < n; ++r) {
                const double* grow = g.data() + r * n;
                const double* yrow = yv.data() + r * n;
                double dot = 0.0;
                for (std::size_t i = 0; i <= r; ++i) dot += grow[i] * yrow[i];
                for (std::size_t i = 0; i <= r; ++i) gx[r * n + i] = yrow[i] * (grow[i] - dot);
            }
            Tensor(in[0]).accumulate_grad(gx);
        });
}

// ---- rotary embeddings -------------------------------------------------------

namespace {

// Rotates consecutive pairs of one d-length block in place.
// direction = +1 forward, -1 to rotate a gradient back.
void rotate_block(double* block, std::size_t d, std::size_t position, double theta_base,
                  int direction) {
    for (std::size_t i = 0; 2 * i < d; ++i) {
        double theta = std::pow(theta_base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
        double angle = static_cast<double>(position) * theta * direction;
        double c = std::cos(angle), s = std::sin(angle);
        double a = block[2 * i], b = block[2 * i + 1];
        block[2 * i] = a * c - b * s;
        block[2 * i + 1] = a * s + b * c;
    }
}

void validate_rope(const Tensor& x, std::size_t block_dim, double theta_base) {
    if (theta_base <= 0.0) throw ConfigError("rope: theta_base must be positive");
    if (block_dim % 2 != 0) {
        throw ConfigError("rope: head dimension must be even, got " + std::to_string(block_dim));
    }
    if (x.rank() > 2) {
        throw DimensionError("rope: input must be 1-D or 2-D, got " + shape_to_string(x.shape()));
    }
}

}  // namespace

Tensor rope_apply(const Tensor& x, std::size_t position, double theta_base) {
    const std::size_t d = x.cols();
    validate_rope(x, d, theta_base);
    const std::size_t n = x.rows();
    std::vector<double> out = x.values();
    for (std::size_t r = 0; r < n; ++r) rotate_block(out.data() + r * d, d, position, theta_base, +1);
    return Tensor::from_op(
        "rope_apply", x.shape(), std::move(out), {x},
        [n, d, position, theta_base](const Tensor& y, const std::vector<Tensor>& in) {
            std::vector<double> gx = y.grad();
            for (std::size_t r = 0; r < n; ++r) {
                rotate_block(gx.data() + r * d, d, position, theta_base, -1);
            }
            Tensor(in[0]).accumulate_grad(gx);
        });
}

Tensor rope_sequence(const Tensor& x, std::size_t n_heads, double theta_base,
                     std::size_t start_position) {
    const std::size_t width = x.cols();
    if (n_heads == 0 || width % n_heads != 0) {
        throw ConfigError("rope_sequence: width " + std::to_string(width) +
                          " not divisible into " + std::to_string(n_heads) + " heads");
    }
    const std::size_t d = width / n_heads;
    validate_rope(x, d, theta_base);
    const std::size_t n = x.rows();
    std::vector<double> out = x.values();
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            rotate_block(out.data() + r * width + h * d, d, start_position + r, theta_base, +1);
        }
    }
    return Tensor::from_op(
        "rope_sequence", x.shape(), std::move(out), {x},
        [n, n_heads, d, width, theta_base, start_position](const Tensor& y,
                                                           const std::vector<Tensor>& in) {
            std::vector<double> gx = y.grad();
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t h = 0; h < n_heads; ++h) {
                    rotate_block(gx.data() + r * width + h * d, d, start_position + r, theta_base,
                                 -1);
                }
            }
            Tensor(in[0]).accumulate_grad(gx);
        });
}

// ---- gather / layout ----------------------------------------------------------

Tensor embedding_rows(const Tensor& table, std::span<const int> ids) {
    if (table.rank() != 2) {
        throw DimensionError("embedding_rows: table must be 2-D, got " +
                             shape_to_string(table.shape()));
    }
    if (ids.empty()) throw ContractError("embedding_rows: empty id sequence");
    const std::size_t v = table.rows(), d = table.cols();
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw DataError("embedding_rows: id " + std::to_string(id) +
                            " outside table of size " + std::to_string(v));
        }
    }
    const std::size_t n = ids.size();
    std::vector<double> out(n * d);
    const auto& tv = table.values();
    for (std::size_t r = 0; r < n; ++r) {
        const double* src = tv.data() + static_cast<std::size_t>(ids[r]) * d;
        std::copy(src, src + d, out.data() + r * d);
    }
    std::vector<int> ids_copy(ids.begin(), ids.end());
    return Tensor::from_op(
        "embedding_rows", {n, d}, std::move(out), {table},
        [ids = std::move(ids_copy), v, d](const Tensor& y, const std::vector<Tensor>& in) {
            const auto& g = y.grad();
            std::vector<double> gt(v * d, 0.0);
            for (std::size_t r = 0; r < ids.size(); ++r) {
                double* dst = gt.data() + static_cast<std::size_t>(ids[r]) * d;
                const double* src = g.data() + r * d;
                for (std::size_t i = 0; i < d; ++i) dst[i] += src[i];
            }
            Tensor(in[0]).accumulate_grad(gt);
        });
}

Tensor row_slice(const Tensor& x, std::size_t start, std::size_t count) {
    if (x.rank() != 2) {
        throw DimensionError("row_slice: needs a 2-D tensor, got " + shape_to_string(x.shape()));
    }
    const std::size_t n = x.rows(), c = x.cols();
    if (count == 0 || start + count > n) {
        throw ContractError("row_slice: range [" + std::to_string(start) + ", " +
                            std::to_string(start + count) + ") out of " + std::to_string(n) +
                            " rows");
    }
    std::vector<double> out(x.values().begin() + start * c,
                            x.values().begin() + (start + count) * c);
    return Tensor::from_op("row_slice", {count, c}, std::move(out), {x},
                           [start, count, n, c](const Tensor& y, const std::vector<Tensor>& in) {
                               const auto& g = y.grad();
                               std::vector<double> gx(n * c, 0.0);
                               std::copy(g.begin(), g.end(), gx.begin() + start * c);
                               Tensor(in[0]).accumulate_grad(gx);
                           });
}

Tensor last_row(const Tensor& x) { return row_slice(x, x.rows() - 1, 1); }

Tensor reshape(const Tensor& x, std::vector<std::size_t> new_shape) {
    validate_shape(new_shape);
    if (shape_numel(new_shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                             shape_to_string(new_shape));
    }
    return Tensor::from_op("reshape", std::move(new_shape), x.values(), {x},
                           [](const Tensor& y, const std::vector<Tensor>& in) {
                               Tensor(in[0]).accumulate_grad(y.grad());
                           });
}

Tensor col_slice(const Tensor& x, std::size_t start, std::size_t count) {
    if (x.rank() != 2) {
        throw DimensionError("col_slice: needs a 2-D tensor, got " + shape_to_string(x.shape()));
    }
    const std::size_t n = x.rows(), c = x.cols();
    if (count == 0 || start + count > c) {
        throw ContractError("col_slice: range [" + std::to_string(start) + ", " +
                            std::to_string(start + count) + ") out of " + std::to_string(c) +
                            " columns");
    }
    std::vector<double> out(n * count);
    const auto& xv = x.values();
    for (std::size_t r = 0; r < n; ++r) {
        std::copy(xv.begin() + r * c + start, xv.begin() + r * c + start + count,
                  out.begin() + r * count);
    }
    return Tensor::from_op("col_slice", {n, count}, std::move(out), {x},
                           [start, count, n, c](const Tensor& y, const std::vector<Tensor>& in) {
                               const auto& g = y.grad();
                               std::vector<double> gx(n * c, 0.0);
                               for (std::size_t r = 0; r < n; ++r) {
                                   for (std::size_t i = 0; i < count; ++i) {
                                       gx[r * c + start + i] = g[r * count + i];
                                   }
                               }
                               Tensor(in[0]).accumulate_grad(gx);
                           });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const std::size_t n = parts.front().rows();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.rows() != n) {
            throw DimensionError("concat_cols: row counts disagree");
        }
        total += p.cols();
    }
    std::vector<double> out(n * total);
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t c = p.cols();
        const auto& pv = p.values();
        for (std::size_t r = 0; r < n; ++r) {
            std::copy(pv.begin() + r * c, pv.begin() + (r + 1) * c,
                      out.begin() + r * total + offset);
        }
        offset += c;
    }
    return Tensor::from_op(
        "concat_cols", {n, total}, std::move(out), parts,
        [n, total](const Tensor& y, const std::vector<Tensor>& in) {
            const auto& g = y.grad();
            std::size_t offset = 0;
            for (const Tensor& p : in) {
                const std::size_t c = p.cols();
                std::vector<double> gp(n * c);
                for (std::size_t r = 0; r < n; ++r) {
                    std::copy(g.begin() + r * total + offset, g.begin() + r * total + offset + c,
                              gp.begin() + r * c);
                }
                Tensor(p).accumulate_grad(gp);
                offset += c;
            }
        });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const std::size_t c = parts.front().cols();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() > 2 || p.cols() != c) {
            throw DimensionError("concat_rows: column counts disagree");
        }
        total += p.rows();
    }
    std::vector<double> out;
    out.reserve(total * c);
    for (const Tensor& p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    return Tensor::from_op("concat_rows", {total, c}, std::move(out), parts,
                           [c](const Tensor& y, const std::vector<Tensor>& in) {
                               const auto& g = y.grad();
                               std::size_t offset = 0;
                               for (const Tensor& p : in) {
                                   const std::size_t len = p.numel();
                                   std::vector<double> gp(g.begin() + offset,
                                                          g.begin() + offset + len);
                                   Tensor(p).accumulate_grad(gp);
                                   offset += len;
                               }
                           });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0, 1)");
    if (p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.numel());
    for (double& m : mask) m = rng.bernoulli(p) ? 0.0 : keep_scale;
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
    return Tensor::from_op("dropout", x.shape(), std::move(out), {x},
                           [mask = std::move(mask)](const Tensor& y, const std::vector<Tensor>& in) {
                               const auto& g = y.grad();
                               std::vector<double> gx(g.size());
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * mask[i];
                               Tensor(in[0]).accumulate_grad(gx);
                           });
}

// ---- backward --------------------------------------------------------------

Tape Tape::trace(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: loss must be a defined scalar tensor");
    }
    if (loss.is_leaf()) {
        throw ContractError("backward: loss is not attached to a recorded tape");
    }
    Tape tape;
    tape.root_ = loss.impl();

    // Iterative postorder so deep graphs do not overflow the stack.
    std::unordered_set<const detail::TensorImpl*> visited;
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
    stack.emplace_back(loss.impl().get(), 0);
    visited.insert(loss.impl().get());
    std::vector<detail::TensorImpl*> order;
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            detail::TensorImpl* parent = node->parents[next_child].get();
            ++next_child;
            if (!parent->is_leaf() && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    tape.nodes_.reserve(order.size());
    for (detail::TensorImpl* node : order) {
        Node entry;
        entry.kind = node->op_kind;
        // The root owns the whole graph through parent links; the aliasing
        // constructor ties each node's lifetime to it without a second owner.
        entry.output = std::shared_ptr<detail::TensorImpl>(tape.root_, node);
        entry.inputs = node->parents;
        tape.nodes_.push_back(std::move(entry));
    }
    return tape;
}

void Tape::run_backward() {
    if (nodes_.empty()) throw ContractError("backward: empty tape");
    root_->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        detail::TensorImpl* out = it->output.get();
        if (out->grad.empty()) continue;  // no contribution flowed into this node
        out->backward_fn(*out);
    }
    // Release intermediate gradients; only leaves keep theirs.
    for (auto& node : nodes_) {
        node.output->grad.clear();
    }
}

void backward(const Tensor& loss) {
    Tape tape = Tape::trace(loss);
    tape.run_backward();
}

}  // namespace lorakit
