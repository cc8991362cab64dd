#include "dialdesc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace dialdesc {

namespace {

thread_local bool g_grad_enabled = true;
thread_local Graph g_graph;

std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor shape has a zero dimension: " + shape_string(shape));
        n *= d;
    }
    return n;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// --- Tensor ------------------------------------------------------------

Tensor make_op_output(std::vector<std::size_t> shape, std::vector<double> data, bool track) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = track;
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    const std::size_t n = checked_numel(shape);
    Tensor t = make_op_output(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    const std::size_t n = checked_numel(shape);
    return make_op_output(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
    if (checked_numel(shape) != data.size()) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string(shape));
    }
    return make_op_output(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return make_op_output({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(std::vector<std::size_t> shape, double lo, double hi, Rng& rng,
                       bool requires_grad) {
    const std::size_t n = checked_numel(shape);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = rng.uniform(lo, hi);
    return make_op_output(std::move(shape), std::move(data), requires_grad);
}

double Tensor::value() const {
    if (numel() != 1) {
        throw ShapeError("value() requires a single-element tensor, got " + shape_string(shape()));
    }
    return impl_->data[0];
}

double Tensor::operator()(std::size_t row, std::size_t col) const {
    return impl_->data[row * impl_->shape.back() + col];
}

std::span<const double> Tensor::grad() const {
    if (!impl_ || impl_->grad.empty()) return {};
    return impl_->grad;
}

std::span<double> Tensor::grad_mut() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_ && !impl_->grad.empty()) {
        std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    }
}

// --- Graph ------------------------------------------------------------

Graph& Graph::current() { return g_graph; }

long Graph::append(Node node) {
    nodes_.push_back(std::move(node));
    return static_cast<long>(nodes_.size()) - 1;
}

void Graph::clear() {
    nodes_.clear();
    ++epoch_;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

double* BackwardContext::grad_for(detail::TensorImpl* impl) {
    if (impl->node >= 0 && impl->graph_epoch == epoch_) {
        auto& buf = (*locals_)[static_cast<std::size_t>(impl->node)];
        if (buf.empty()) buf.assign(impl->data.size(), 0.0);
        return buf.data();
    }
    if (impl->requires_grad) {
        if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
        return impl->grad.data();
    }
    return nullptr;
}

namespace {

bool want_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

void record(const char* tag, Tensor& out,
            std::function<void(const double*, BackwardContext&)> fn) {
    Graph& g = Graph::current();
    out.impl()->node = g.append(Graph::Node{tag, std::move(fn)});
    out.impl()->graph_epoch = g.epoch();
}

}  // namespace

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward: loss must be a scalar tensor");
    }
    detail::TensorImpl* impl = loss.impl();
    if (impl->node < 0) {
        if (impl->requires_grad) {
            if (impl->grad.empty()) impl->grad.assign(1, 0.0);
            impl->grad[0] += 1.0;
        }
        return;
    }
    Graph& g = Graph::current();
    if (impl->graph_epoch != g.epoch() || impl->node >= static_cast<long>(g.size())) {
        throw std::logic_error("backward: loss does not belong to the active graph");
    }
    std::vector<std::vector<double>> locals(g.size());
    locals[static_cast<std::size_t>(impl->node)] = {1.0};
    BackwardContext ctx(&locals, g.epoch());
    for (long i = impl->node; i >= 0; --i) {
        auto& out_grad = locals[static_cast<std::size_t>(i)];
        if (out_grad.empty()) continue;
        g.node(i).backward(out_grad.data(), ctx);
        out_grad.clear();
        out_grad.shrink_to_fit();
    }
}

// --- matmul / transpose -------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul: expected rank-2 tensors, got " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner dimensions disagree: " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            if (av == 0.0) continue;
            const double* brow = pb + kk * n;
            double* orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    const bool track = grad_enabled() && (want_grad(a) || want_grad(b));
    Tensor result = make_op_output({m, n}, std::move(out), track);
    if (track) {
        record("matmul", result,
               [ia = a.impl_ptr(), ib = b.impl_ptr(), m, k, n](const double* g,
                                                               BackwardContext& ctx) {
                   if (double* da = ctx.grad_for(ia.get())) {
                       const double* pb2 = ib->data.data();
                       for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t kk = 0; kk < k; ++kk) {
                               double acc = 0.0;
                               const double* brow = pb2 + kk * n;
                               const double* grow = g + i * n;
                               for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                               da[i * k + kk] += acc;
                           }
                       }
                   }
                   if (double* db = ctx.grad_for(ib.get())) {
                       const double* pa2 = ia->data.data();
                       for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t kk = 0; kk < k; ++kk) {
                               const double av = pa2[i * k + kk];
                               if (av == 0.0) continue;
                               const double* grow = g + i * n;
                               double* drow = db + kk * n;
                               for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
                           }
                       }
                   }
               });
    }
    return result;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) {
        throw ShapeError("transpose: expected rank-2 tensor, got " + shape_string(a.shape()));
    }
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    const double* pa = a.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = pa[i * n + j];
    }
    const bool track = grad_enabled() && want_grad(a);
    Tensor result = make_op_output({n, m}, std::move(out), track);
    if (track) {
        record("transpose", result,
               [ia = a.impl_ptr(), m, n](const double* g, BackwardContext& ctx) {
                   if (double* da = ctx.grad_for(ia.get())) {
                       for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t j = 0; j < n; ++j) da[i * n + j] += g[j * m + i];
                       }
                   }
               });
    }
    return result;
}

// --- elementwise ---------------------------------------------------------

namespace {

Tensor binary_op(const char* tag, const Tensor& a, const Tensor& b,
                 double (*fwd)(double, double), double (*dfa)(double, double),
                 double (*dfb)(double, double)) {
    if (!a.defined() || !b.defined()) {
        throw ShapeError(std::string(tag) + ": binary operation needs two tensors");
    }
    const bool a_scalar = a.numel() == 1;
    const bool b_scalar = b.numel() == 1;
    if (a.shape() != b.shape() && !a_scalar && !b_scalar) {
        throw ShapeError(std::string(tag) + ": shape mismatch: " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
    }
    const Tensor& wide = (a_scalar && !b_scalar) ? b : a;
    const std::size_t n = wide.numel();
    const std::size_t sa = a_scalar ? 0 : 1;
    const std::size_t sb = b_scalar ? 0 : 1;
    std::vector<double> out(n);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(pa[i * sa], pb[i * sb]);
    const bool track = grad_enabled() && (want_grad(a) || want_grad(b));
    Tensor result = make_op_output(wide.shape(), std::move(out), track);
    if (track) {
        record(tag, result,
               [ia = a.impl_ptr(), ib = b.impl_ptr(), n, sa, sb, dfa, dfb](
                   const double* g, BackwardContext& ctx) {
                   const double* pa2 = ia->data.data();
                   const double* pb2 = ib->data.data();
                   if (double* da = ctx.grad_for(ia.get())) {
                       for (std::size_t i = 0; i < n; ++i) {
                           da[i * sa] += g[i] * dfa(pa2[i * sa], pb2[i * sb]);
                       }
                   }
                   if (double* db = ctx.grad_for(ib.get())) {
                       for (std::size_t i = 0; i < n; ++i) {
                           db[i * sb] += g[i] * dfb(pa2[i * sa], pb2[i * sb]);
                       }
                   }
               });
    }
    return result;
}

Tensor unary_op(const char* tag, const Tensor& a, double (*fwd)(double),
                double (*dydx)(double x, double y)) {
    const std::size_t n = a.numel();
    std::vector<double> out(n);
    const double* pa = a.data().data();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(pa[i]);
    const bool track = grad_enabled() && want_grad(a);
    Tensor result = make_op_output(a.shape(), std::move(out), track);
    if (track) {
        record(tag, result,
               [ia = a.impl_ptr(), io = result.impl_ptr(), n, dydx](const double* g,
                                                                    BackwardContext& ctx) {
                   if (double* da = ctx.grad_for(ia.get())) {
                       const double* x = ia->data.data();
                       const double* y = io->data.data();
                       for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * dydx(x[i], y[i]);
                   }
               });
    }
    return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op("sigmoid", a, [](double x) { return stable_sigmoid(x); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
    return unary_op("tanh", a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
    return unary_op("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
    return unary_op("exp", a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    for (double v : a.data()) {
        if (!(v > 0.0)) {
            throw std::domain_error("log: non-positive input value " + std::to_string(v));
        }
    }
    return unary_op("log", a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Tensor negate(const Tensor& a) {
    return unary_op("negate", a, [](double x) { return -x; },
                    [](double, double) { return -1.0; });
}

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b) {
    switch (op) {
        case Elementwise::Add: return add(a, b);
        case Elementwise::Sub: return sub(a, b);
        case Elementwise::Mul: return mul(a, b);
        case Elementwise::Sigmoid: return sigmoid(a);
        case Elementwise::Tanh: return tanh(a);
        case Elementwise::Relu: return relu(a);
        case Elementwise::Exp: return exp(a);
        case Elementwise::Log: return log(a);
        case Elementwise::Negate: return negate(a);
    }
    throw std::logic_error("elementwise: unknown operation");
}

Tensor add_scalar(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }

Tensor mul_scalar(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }

Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
    if (a.rank() < 1) throw ShapeError("add_rowwise: input must have rank >= 1");
    const std::size_t d = a.shape().back();
    if (bias.numel() != d) {
        throw ShapeError("add_rowwise: bias length " + shape_string(bias.shape()) +
                         " does not match row width " + std::to_string(d));
    }
    const std::size_t rows = a.numel() / d;
    std::vector<double> out(a.numel());
    const double* pa = a.data().data();
    const double* pb = bias.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = pa[r * d + j] + pb[j];
    }
    const bool track = grad_enabled() && (want_grad(a) || want_grad(bias));
    Tensor result = make_op_output(a.shape(), std::move(out), track);
    if (track) {
        record("add_rowwise", result,
               [ia = a.impl_ptr(), ib = bias.impl_ptr(), rows, d](const double* g,
                                                                  BackwardContext& ctx) {
                   if (double* da = ctx.grad_for(ia.get())) {
                       for (std::size_t i = 0; i < rows * d; ++i) da[i] += g[i];
                   }
                   if (double* db = ctx.grad_for(ib.get())) {
                       for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < d; ++j) db[j] += g[r * d + j];
                       }
                   }
               });
    }
    return result;
}

// --- softmax / layer_norm -------------------------------------------------

Tensor softmax(const Tensor& a, std::size_t axis) {
    if (axis >= a.rank()) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(a.shape()));
    }
    const std::size_t n = a.dim(axis);
    if (n == 0) throw ShapeError("softmax: empty axis");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);

    std::vector<double> out(a.numel());
    const double* pa = a.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = pa[base];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, pa[base + j * inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double e = std::exp(pa[base + j * inner] - mx);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
        }
    }
    const bool track = grad_enabled() && want_grad(a);
    Tensor result = make_op_output(a.shape(), std::move(out), track);
    if (track) {
        record("softmax", result,
               [ia = a.impl_ptr(), io = result.impl_ptr(), outer, n, inner](
                   const double* g, BackwardContext& ctx) {
                   double* da = ctx.grad_for(ia.get());
                   if (!da) return;
                   const double* y = io->data.data();
                   for (std::size_t o = 0; o < outer; ++o) {
                       for (std::size_t in = 0; in < inner; ++in) {
                           const std::size_t base = o * n * inner + in;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < n; ++j) {
                               dot += g[base + j * inner] * y[base + j * inner];
                           }
                           for (std::size_t j = 0; j < n; ++j) {
                               const std::size_t idx = base + j * inner;
                               da[idx] += y[idx] * (g[idx] - dot);
                           }
                       }
                   }
               });
    }
    return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t d = gain.numel();
    if (x.rank() < 1 || x.shape().back() != d || bias.numel() != d) {
        throw ShapeError("layer_norm: width mismatch: x " + shape_string(x.shape()) + ", gain " +
                         shape_string(gain.shape()) + ", bias " + shape_string(bias.shape()));
    }
    const std::size_t rows = x.numel() / d;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv(rows);
    const double* px = x.data().data();
    const double* pg = gain.data().data();
    const double* pb = bias.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        double mean_v = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean_v += row[j];
        mean_v /= static_cast<double>(d);
        double var_v = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mean_v;
            var_v += c * c;
        }
        var_v /= static_cast<double>(d);
        const double inv_v = 1.0 / std::sqrt(var_v + eps);
        inv[r] = inv_v;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - mean_v) * inv_v;
            xhat[r * d + j] = h;
            out[r * d + j] = pg[j] * h + pb[j];
        }
    }
    const bool track = grad_enabled() && (want_grad(x) || want_grad(gain) || want_grad(bias));
    Tensor result = make_op_output(x.shape(), std::move(out), track);
    if (track) {
        record("layer_norm", result,
               [ix = x.impl_ptr(), ig = gain.impl_ptr(), ib = bias.impl_ptr(),
                xhat = std::move(xhat), inv = std::move(inv), rows, d](const double* g,
                                                                      BackwardContext& ctx) {
                   const double* pg2 = ig->data.data();
                   double* dx = ctx.grad_for(ix.get());
                   double* dg = ctx.grad_for(ig.get());
                   double* db = ctx.grad_for(ib.get());
                   for (std::size_t r = 0; r < rows; ++r) {
                       const double* grow = g + r * d;
                       const double* hrow = xhat.data() + r * d;
                       if (dg) {
                           for (std::size_t j = 0; j < d; ++j) dg[j] += grow[j] * hrow[j];
                       }
                       if (db) {
                           for (std::size_t j = 0; j < d; ++j) db[j] += grow[j];
                       }
                       if (dx) {
                           double sum1 = 0.0, sum2 = 0.0;
                           for (std::size_t j = 0; j < d; ++j) {
                               const double dh = grow[j] * pg2[j];
                               sum1 += dh;
                               sum2 += dh * hrow[j];
                           }
                           const double dd = static_cast<double>(d);
                           for (std::size_t j = 0; j < d; ++j) {
                               const double dh = grow[j] * pg2[j];
                               dx[r * d + j] +=
                                   inv[r] * (dh - sum1 / dd - hrow[j] * sum2 / dd);
                           }
                       }
                   }
               });
    }
    return result;
}

// --- shape ops ------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no parts");
    const Tensor& first = parts.front();
    if (axis >= first.rank()) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(first.shape()));
    }
    std::size_t total_axis = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != first.rank()) {
            throw ShapeError("concat: rank mismatch: " + shape_string(first.shape()) + " vs " +
                             shape_string(p.shape()));
        }
        for (std::size_t i = 0; i < first.rank(); ++i) {
            if (i != axis && p.dim(i) != first.dim(i)) {
                throw ShapeError("concat: non-concat dimensions disagree: " +
                                 shape_string(first.shape()) + " vs " + shape_string(p.shape()));
            }
        }
        total_axis += p.dim(axis);
    }
    std::vector<std::size_t> out_shape = first.shape();
    out_shape[axis] = total_axis;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first.dim(i);
    for (std::size_t i = axis + 1; i < first.rank(); ++i) inner *= first.dim(i);

    std::vector<double> out(outer * total_axis * inner);
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t nk = p.dim(axis);
        const double* pp = p.data().data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::memcpy(out.data() + (o * total_axis + offset) * inner,
                        pp + o * nk * inner, nk * inner * sizeof(double));
        }
        offset += nk;
    }
    bool track = false;
    if (grad_enabled()) {
        for (const Tensor& p : parts) track = track || want_grad(p);
    }
    Tensor result = make_op_output(std::move(out_shape), std::move(out), track);
    if (track) {
        std::vector<std::shared_ptr<detail::TensorImpl>> impls;
        std::vector<std::size_t> sizes;
        impls.reserve(parts.size());
        for (const Tensor& p : parts) {
            impls.push_back(p.impl_ptr());
            sizes.push_back(p.dim(axis));
        }
        record("concat", result,
               [impls = std::move(impls), sizes = std::move(sizes), outer, inner,
                total_axis](const double* g, BackwardContext& ctx) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < impls.size(); ++k) {
                       const std::size_t nk = sizes[k];
                       if (double* dp = ctx.grad_for(impls[k].get())) {
                           for (std::size_t o = 0; o < outer; ++o) {
                               const double* src = g + (o * total_axis + off) * inner;
                               double* dst = dp + o * nk * inner;
                               for (std::size_t i = 0; i < nk * inner; ++i) dst[i] += src[i];
                           }
                       }
                       off += nk;
                   }
               });
    }
    return result;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    if (axis >= a.rank()) {
        throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(a.shape()));
    }
    if (begin >= end || end > a.dim(axis)) {
        throw ShapeError("slice: invalid range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") on axis of size " + std::to_string(a.dim(axis)));
    }
    const std::size_t n = a.dim(axis);
    const std::size_t nk = end - begin;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    std::vector<std::size_t> out_shape = a.shape();
    out_shape[axis] = nk;
    std::vector<double> out(outer * nk * inner);
    const double* pa = a.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        std::memcpy(out.data() + o * nk * inner, pa + (o * n + begin) * inner,
                    nk * inner * sizeof(double));
    }
    const bool track = grad_enabled() && want_grad(a);
    Tensor result = make_op_output(std::move(out_shape), std::move(out), track);
    if (track) {
        record("slice", result,
               [ia = a.impl_ptr(), outer, inner, n, nk, begin](const double* g,
                                                               BackwardContext& ctx) {
                   if (double* da = ctx.grad_for(ia.get())) {
                       for (std::size_t o = 0; o < outer; ++o) {
                           const double* src = g + o * nk * inner;
                           double* dst = da + (o * n + begin) * inner;
                           for (std::size_t i = 0; i < nk * inner; ++i) dst[i] += src[i];
                       }
                   }
               });
    }
    return result;
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
    if (checked_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                         shape_string(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    const bool track = grad_enabled() && want_grad(a);
    Tensor result = make_op_output(std::move(shape), std::move(out), track);
    if (track) {
        record("reshape", result,
               [ia = a.impl_ptr()](const double* g, BackwardContext& ctx) {
                   if (double* da = ctx.grad_for(ia.get())) {
                       for (std::size_t i = 0; i < ia->data.size(); ++i) da[i] += g[i];
                   }
               });
    }
    return result;
}

Tensor embed_lookup(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) {
        throw ShapeError("embed_lookup: table must be rank-2, got " + shape_string(table.shape()));
    }
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw DataError("embed_lookup: vocabulary error: id " + std::to_string(id) +
                            " outside table of size " + std::to_string(vocab));
        }
    }
    std::vector<double> out(ids.size() * d);
    const double* pt = table.data().data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::memcpy(out.data() + i * d, pt + static_cast<std::size_t>(ids[i]) * d,
                    d * sizeof(double));
    }
    const bool track = grad_enabled() && want_grad(table);
    Tensor result = make_op_output({ids.size(), d}, std::move(out), track);
    if (track) {
        record("embed_lookup", result,
               [it = table.impl_ptr(), ids, d](const double* g, BackwardContext& ctx) {
                   if (double* dt = ctx.grad_for(it.get())) {
                       for (std::size_t i = 0; i < ids.size(); ++i) {
                           double* row = dt + static_cast<std::size_t>(ids[i]) * d;
                           const double* src = g + i * d;
                           for (std::size_t j = 0; j < d; ++j) row[j] += src[j];
                       }
                   }
               });
    }
    return result;
}

Tensor scatter_add_cols(const Tensor& a, const std::vector<int>& col_index,
                        std::size_t out_cols) {
    if (a.rank() != 2) {
        throw ShapeError("scatter_add_cols: expected rank-2 input, got " +
                         shape_string(a.shape()));
    }
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    if (col_index.size() != cols) {
        throw ShapeError("scatter_add_cols: index length " + std::to_string(col_index.size()) +
                         " does not match column count " + std::to_string(cols));
    }
    for (int c : col_index) {
        if (c < 0 || static_cast<std::size_t>(c) >= out_cols) {
            throw DataError("scatter_add_cols: target column " + std::to_string(c) +
                            " outside width " + std::to_string(out_cols));
        }
    }
    std::vector<double> out(rows * out_cols, 0.0);
    const double* pa = a.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) {
            out[r * out_cols + static_cast<std::size_t>(col_index[j])] += pa[r * cols + j];
        }
    }
    const bool track = grad_enabled() && want_grad(a);
    Tensor result = make_op_output({rows, out_cols}, std::move(out), track);
    if (track) {
        record("scatter_add_cols", result,
               [ia = a.impl_ptr(), col_index, rows, cols, out_cols](const double* g,
                                                                    BackwardContext& ctx) {
                   if (double* da = ctx.grad_for(ia.get())) {
                       for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < cols; ++j) {
                               da[r * cols + j] +=
                                   g[r * out_cols + static_cast<std::size_t>(col_index[j])];
                           }
                       }
                   }
               });
    }
    return result;
}

// --- reductions -------------------------------------------------------------

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    const bool track = grad_enabled() && want_grad(a);
    Tensor result = make_op_output({1}, {total}, track);
    if (track) {
        record("sum", result, [ia = a.impl_ptr()](const double* g, BackwardContext& ctx) {
            if (double* da = ctx.grad_for(ia.get())) {
                for (std::size_t i = 0; i < ia->data.size(); ++i) da[i] += g[0];
            }
        });
    }
    return result;
}

Tensor mean(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    const double n = static_cast<double>(a.numel());
    const bool track = grad_enabled() && want_grad(a);
    Tensor result = make_op_output({1}, {total / n}, track);
    if (track) {
        record("mean", result, [ia = a.impl_ptr(), n](const double* g, BackwardContext& ctx) {
            if (double* da = ctx.grad_for(ia.get())) {
                for (std::size_t i = 0; i < ia->data.size(); ++i) da[i] += g[0] / n;
            }
        });
    }
    return result;
}

Tensor pick(const Tensor& a, std::size_t flat_index) {
    if (flat_index >= a.numel()) {
        throw DataError("pick: index " + std::to_string(flat_index) + " outside tensor of " +
                        std::to_string(a.numel()) + " elements");
    }
    const bool track = grad_enabled() && want_grad(a);
    Tensor result = make_op_output({1}, {a.data()[flat_index]}, track);
    if (track) {
        record("pick", result,
               [ia = a.impl_ptr(), flat_index](const double* g, BackwardContext& ctx) {
                   if (double* da = ctx.grad_for(ia.get())) da[flat_index] += g[0];
               });
    }
    return result;
}

Tensor clamp_min(const Tensor& a, double floor) {
    const std::size_t n = a.numel();
    std::vector<double> out(n);
    const double* pa = a.data().data();
    for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] >= floor ? pa[i] : floor;
    const bool track = grad_enabled() && want_grad(a);
    Tensor result = make_op_output(a.shape(), std::move(out), track);
    if (track) {
        record("clamp_min", result,
               [ia = a.impl_ptr(), floor, n](const double* g, BackwardContext& ctx) {
                   if (double* da = ctx.grad_for(ia.get())) {
                       const double* x = ia->data.data();
                       for (std::size_t i = 0; i < n; ++i) {
                           if (x[i] >= floor) da[i] += g[i];
                       }
                   }
               });
    }
    return result;
}

Tensor dropout(const Tensor& a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    }
    if (rate == 0.0) return a;
    const std::size_t n = a.numel();
    std::vector<double> mask(n);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < n; ++i) {
        mask[i] = rng.uniform(0.0, 1.0) >= rate ? keep_scale : 0.0;
    }
    std::vector<double> out(n);
    const double* pa = a.data().data();
    for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] * mask[i];
    const bool track = grad_enabled() && want_grad(a);
    Tensor result = make_op_output(a.shape(), std::move(out), track);
    if (track) {
        record("dropout", result,
               [ia = a.impl_ptr(), mask = std::move(mask), n](const double* g,
                                                              BackwardContext& ctx) {
                   if (double* da = ctx.grad_for(ia.get())) {
                       for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * mask[i];
                   }
               });
    }
    return result;
}

}  // namespace dialdesc
