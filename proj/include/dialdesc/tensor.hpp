#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dialdesc/common.hpp"

namespace dialdesc {

class BackwardContext;

namespace detail {

struct TensorImpl {
    std::vector<std::size_t> shape;
    std::vector<double> data;       // row-major, f64 everywhere
    bool requires_grad = false;
    std::vector<double> grad;       // lazily allocated, accumulated for leaves
    long node = -1;                 // index into the owning tape, -1 for leaves
    std::uint64_t graph_epoch = 0;  // tape generation the node id refers to
};

}  // namespace detail

// Dense f64 tensor participating in a reverse-mode differentiation tape.
// Value-semantic handle; the payload is shared. Data is immutable after an
// operation produces it, except grad accumulation and the explicit
// data_mut() hook used for parameter initialization and optimizer updates.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor uniform(std::vector<std::size_t> shape, double lo, double hi, Rng& rng,
                          bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return impl_->shape[axis]; }
    std::size_t numel() const { return impl_->data.size(); }
    bool requires_grad() const { return impl_ && impl_->requires_grad; }

    std::span<const double> data() const { return impl_->data; }
    // Mutable access for init and optimizer updates; never call on tensors
    // still referenced by a live tape.
    std::span<double> data_mut() { return impl_->data; }

    double value() const;                              // numel()==1 only
    double operator()(std::size_t i) const { return impl_->data[i]; }
    double operator()(std::size_t row, std::size_t col) const;

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    std::span<const double> grad() const;
    std::span<double> grad_mut();
    void zero_grad();

    detail::TensorImpl* impl() const { return impl_.get(); }
    std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

  private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;

    friend Tensor make_op_output(std::vector<std::size_t> shape, std::vector<double> data,
                                 bool track);
};

// Append-only tape of recorded operations. Node inputs always precede the
// node itself, so a reverse sweep visits each node exactly once. One tape
// per thread; workers evaluating examples in parallel each own their own.
class Graph {
  public:
    struct Node {
        const char* tag;
        // Receives the output gradient and accumulates into input gradients
        // resolved through the context. Saved activations live in the closure.
        std::function<void(const double* out_grad, BackwardContext& ctx)> backward;
    };

    static Graph& current();

    long append(Node node);
    const Node& node(long id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return nodes_.size(); }
    std::uint64_t epoch() const { return epoch_; }

    // Frees all recorded nodes (and the activations their closures hold).
    // Tensors produced before the clear can no longer be differentiated.
    void clear();

  private:
    std::vector<Node> nodes_;
    std::uint64_t epoch_ = 0;
};

// Scoped switch disabling tape recording; forward values are unaffected.
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

// Resolves where a node input's gradient accumulates: a per-call buffer for
// op-produced tensors, the persistent grad for requires_grad leaves, or
// nullptr when no gradient is wanted.
class BackwardContext {
  public:
    BackwardContext(std::vector<std::vector<double>>* locals, std::uint64_t epoch)
        : locals_(locals), epoch_(epoch) {}
    double* grad_for(detail::TensorImpl* impl);

  private:
    std::vector<std::vector<double>>* locals_;
    std::uint64_t epoch_;
};

enum class Elementwise { Add, Sub, Mul, Sigmoid, Tanh, Relu, Exp, Log, Negate };

// --- operations ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // 2-d only

// Binary ops require identical shapes; the only broadcast is a single-element
// tensor against any shape. Unary ops take one argument.
Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b = Tensor());
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor negate(const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

// Adds a length-d vector to every row of a [rows x d] tensor.
Tensor add_rowwise(const Tensor& a, const Tensor& bias);

Tensor softmax(const Tensor& a, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);
Tensor embed_lookup(const Tensor& table, const std::vector<int>& ids);

// out[r][index[j]] += a[r][j]; gradients route back through the same map.
Tensor scatter_add_cols(const Tensor& a, const std::vector<int>& col_index,
                        std::size_t out_cols);

Tensor sum(const Tensor& a);   // scalar
Tensor mean(const Tensor& a);  // scalar
Tensor pick(const Tensor& a, std::size_t flat_index);  // scalar, grad routes to the slot
Tensor clamp_min(const Tensor& a, double floor);

// Inverted dropout; identity when rate == 0. Mask drawn from rng.
Tensor dropout(const Tensor& a, double rate, Rng& rng);

// Reverse sweep from a scalar loss. Accumulates d loss / d leaf into every
// requires_grad leaf; repeated calls without zero_grad() keep accumulating.
void backward(const Tensor& loss);

std::string shape_string(const std::vector<std::size_t>& shape);

}  // namespace dialdesc
