#include "vitssp/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <type_traits>
#include <unordered_set>

#include "vitssp/kernels.hpp"

namespace vitssp {

namespace {

std::atomic<uint64_t> g_seq{1};

thread_local bool t_grad_enabled = true;

template <class F>
decltype(auto) dispatch_dt(DType dt, F&& f) {
    if (dt == DType::F32) return f(std::type_identity<float>{});
    return f(std::type_identity<double>{});
}

std::shared_ptr<Node> make_node(Shape shape, DType dt) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->dtype = dt;
    n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    dispatch_dt(dt, [&](auto ti) {
        using T = typename decltype(ti)::type;
        n->data = std::vector<T>(static_cast<size_t>(n->numel()), T(0));
    });
    return n;
}

template <class T>
std::vector<T>& data_of(Node* n) {
    return std::get<std::vector<T>>(n->data);
}

template <class T>
std::vector<T>& grad_of(Node* n) {
    auto* g = std::get_if<std::vector<T>>(&n->grad);
    if (!g || g->size() != static_cast<size_t>(n->numel())) {
        n->grad = std::vector<T>(static_cast<size_t>(n->numel()), T(0));
        g = std::get_if<std::vector<T>>(&n->grad);
    }
    return *g;
}

// Marks `out` as produced by `fn` from `parents`; no-op when grads are off or
// no parent wants them.
void attach(const std::shared_ptr<Node>& out, std::vector<std::shared_ptr<Node>> parents,
            std::function<void()> fn) {
    if (!t_grad_enabled) return;
    bool need = false;
    for (const auto& p : parents) {
        if (p->requires_grad) {
            need = true;
            break;
        }
    }
    if (!need) return;
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(fn);
}

void check_defined(const Tensor& t, const char* what) {
    if (!t.defined()) throw ContractError(std::string(what) + ": undefined tensor");
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* what) {
    if (a.dtype() != b.dtype())
        throw ContractError(std::string(what) + ": dtype mismatch (" +
                            dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()) + ")");
}

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* what) {
    const size_t nd = std::max(a.size(), b.size());
    Shape out(nd);
    for (size_t i = 0; i < nd; ++i) {
        const int64_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
        const int64_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(what) + ": cannot broadcast " + shape_str(a) +
                             " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Flat index into `in` (right-aligned, stride 0 on broadcast dims) for every
// flat index of `out`.
std::vector<int64_t> broadcast_map(const Shape& out, const Shape& in) {
    const size_t nd = out.size();
    std::vector<int64_t> in_dim(nd, 1);
    for (size_t i = 0; i < in.size(); ++i) in_dim[nd - in.size() + i] = in[i];
    std::vector<int64_t> stride(nd, 0);
    int64_t st = 1;
    for (size_t i = nd; i-- > 0;) {
        stride[i] = in_dim[i] == 1 ? 0 : st;
        st *= in_dim[i];
    }
    const int64_t n = shape_numel(out);
    std::vector<int64_t> map(static_cast<size_t>(n));
    for (int64_t e = 0; e < n; ++e) {
        int64_t rem = e, src = 0;
        for (size_t i = nd; i-- > 0;) {
            src += (rem % out[i]) * stride[i];
            rem /= out[i];
        }
        map[static_cast<size_t>(e)] = src;
    }
    return map;
}

enum class EOp { Add, Sub, Mul, Div };

Tensor ewise(const Tensor& a, const Tensor& b, EOp op, const char* what) {
    check_defined(a, what);
    check_defined(b, what);
    check_same_dtype(a, b, what);
    const bool same = a.shape() == b.shape();
    Shape out_shape = same ? a.shape() : broadcast_shapes(a.shape(), b.shape(), what);
    auto out = make_node(out_shape, a.dtype());
    std::vector<int64_t> ma, mb;
    if (!same) {
        ma = broadcast_map(out_shape, a.shape());
        mb = broadcast_map(out_shape, b.shape());
    }
    const int64_t n = out->numel();
    dispatch_dt(a.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        const auto& av = data_of<T>(a.node.get());
        const auto& bv = data_of<T>(b.node.get());
        auto& yv = data_of<T>(out.get());
        auto run = [&](auto f) {
            if (same) {
                for (int64_t e = 0; e < n; ++e) yv[e] = f(av[e], bv[e]);
            } else {
                for (int64_t e = 0; e < n; ++e) yv[e] = f(av[ma[e]], bv[mb[e]]);
            }
        };
        switch (op) {
            case EOp::Add: run([](T x, T y) { return x + y; }); break;
            case EOp::Sub: run([](T x, T y) { return x - y; }); break;
            case EOp::Mul: run([](T x, T y) { return x * y; }); break;
            case EOp::Div: run([](T x, T y) { return x / y; }); break;
        }
    });
    Node* o = out.get();
    attach(out, {a.node, b.node},
           [a_n = a.node, b_n = b.node, o, op, same, ma = std::move(ma),
            mb = std::move(mb)]() {
               dispatch_dt(o->dtype, [&](auto ti) {
                   using T = typename decltype(ti)::type;
                   const auto& g = std::get<std::vector<T>>(o->grad);
                   const auto& av = data_of<T>(a_n.get());
                   const auto& bv = data_of<T>(b_n.get());
                   const int64_t n = o->numel();
                   if (a_n->requires_grad) {
                       auto& ga = grad_of<T>(a_n.get());
                       for (int64_t e = 0; e < n; ++e) {
                           const int64_t ia = same ? e : ma[e];
                           const int64_t ib = same ? e : mb[e];
                           T c{};
                           switch (op) {
                               case EOp::Add:
                               case EOp::Sub: c = g[e]; break;
                               case EOp::Mul: c = g[e] * bv[ib]; break;
                               case EOp::Div: c = g[e] / bv[ib]; break;
                           }
                           ga[ia] += c;
                       }
                   }
                   if (b_n->requires_grad) {
                       auto& gb = grad_of<T>(b_n.get());
                       for (int64_t e = 0; e < n; ++e) {
                           const int64_t ia = same ? e : ma[e];
                           const int64_t ib = same ? e : mb[e];
                           T c{};
                           switch (op) {
                               case EOp::Add: c = g[e]; break;
                               case EOp::Sub: c = -g[e]; break;
                               case EOp::Mul: c = g[e] * av[ia]; break;
                               case EOp::Div: c = -g[e] * av[ia] / (bv[ib] * bv[ib]); break;
                           }
                           gb[ib] += c;
                       }
                   }
               });
           });
    return Tensor(out);
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor Tensor::zeros(Shape shape, DType dt) { return Tensor(make_node(std::move(shape), dt)); }

Tensor Tensor::ones(Shape shape, DType dt) { return full(std::move(shape), 1.0, dt); }

Tensor Tensor::full(Shape shape, double value, DType dt) {
    Tensor t(make_node(std::move(shape), dt));
    fill_(t, value);
    return t;
}

Tensor Tensor::scalar(double value, DType dt) { return full({}, value, dt); }

Tensor Tensor::from_vector(Shape shape, const std::vector<double>& values, DType dt) {
    Tensor t(make_node(std::move(shape), dt));
    if (static_cast<int64_t>(values.size()) != t.numel())
        throw ShapeError("from_vector: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(t.shape()));
    dispatch_dt(dt, [&](auto ti) {
        using T = typename decltype(ti)::type;
        auto& d = data_of<T>(t.node.get());
        for (size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
    });
    return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double sigma, DType dt) {
    Tensor t(make_node(std::move(shape), dt));
    dispatch_dt(dt, [&](auto ti) {
        using T = typename decltype(ti)::type;
        auto& d = data_of<T>(t.node.get());
        for (auto& v : d) v = static_cast<T>(rng.normal(0.0, sigma));
    });
    return t;
}

Tensor Tensor::trunc_normal(Shape shape, Rng& rng, double sigma, DType dt) {
    Tensor t(make_node(std::move(shape), dt));
    dispatch_dt(dt, [&](auto ti) {
        using T = typename decltype(ti)::type;
        auto& d = data_of<T>(t.node.get());
        for (auto& v : d) v = static_cast<T>(rng.trunc_normal(sigma));
    });
    return t;
}

Tensor& Tensor::set_requires_grad(bool rg) {
    if (rg && !node->is_leaf())
        throw ContractError("set_requires_grad: only leaves can change grad mode");
    node->requires_grad = rg;
    return *this;
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) +
                                          " elements");
    return at(0);
}

double Tensor::at(int64_t flat) const {
    return dispatch_dt(node->dtype, [&](auto ti) -> double {
        using T = typename decltype(ti)::type;
        return static_cast<double>(data_of<T>(node.get())[static_cast<size_t>(flat)]);
    });
}

void Tensor::set(int64_t flat, double value) {
    dispatch_dt(node->dtype, [&](auto ti) {
        using T = typename decltype(ti)::type;
        data_of<T>(node.get())[static_cast<size_t>(flat)] = static_cast<T>(value);
    });
}

std::vector<double> Tensor::to_vector() const {
    std::vector<double> out(static_cast<size_t>(numel()));
    dispatch_dt(node->dtype, [&](auto ti) {
        using T = typename decltype(ti)::type;
        const auto& d = data_of<T>(node.get());
        for (size_t i = 0; i < d.size(); ++i) out[i] = static_cast<double>(d[i]);
    });
    return out;
}

bool Tensor::has_grad() const {
    return dispatch_dt(node->dtype, [&](auto ti) -> bool {
        using T = typename decltype(ti)::type;
        const auto* g = std::get_if<std::vector<T>>(&node->grad);
        return g && g->size() == static_cast<size_t>(numel());
    });
}

double Tensor::grad_at(int64_t flat) const {
    if (!has_grad()) return 0.0;
    return dispatch_dt(node->dtype, [&](auto ti) -> double {
        using T = typename decltype(ti)::type;
        return static_cast<double>(
            std::get<std::vector<T>>(node->grad)[static_cast<size_t>(flat)]);
    });
}

std::vector<double> Tensor::grad_to_vector() const {
    std::vector<double> out(static_cast<size_t>(numel()), 0.0);
    if (!has_grad()) return out;
    dispatch_dt(node->dtype, [&](auto ti) {
        using T = typename decltype(ti)::type;
        const auto& g = std::get<std::vector<T>>(node->grad);
        for (size_t i = 0; i < g.size(); ++i) out[i] = static_cast<double>(g[i]);
    });
    return out;
}

void Tensor::zero_grad() {
    dispatch_dt(node->dtype, [&](auto ti) {
        using T = typename decltype(ti)::type;
        node->grad = std::vector<T>(static_cast<size_t>(numel()), T(0));
    });
}

void Tensor::backward() {
    Node* root = node.get();
    if (!root) throw ContractError("backward: undefined tensor");
    if (root->numel() != 1) throw ContractError("backward: loss must be a scalar");
    if (root->freed) throw ContractError("backward: graph was already freed");
    if (!root->requires_grad)
        throw ContractError("backward: tensor does not require grad");

    // Shared ownership while we walk: clearing a child's parent list below
    // may otherwise destroy a node this very loop still has to visit.
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_set<Node*> seen;
    std::vector<std::shared_ptr<Node>> stack{node};
    seen.insert(root);
    while (!stack.empty()) {
        std::shared_ptr<Node> n = stack.back();
        stack.pop_back();
        if (n->freed) throw ContractError("backward: graph was already freed");
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
        }
    }
    // Children always have larger seq than their parents, so descending seq is
    // a reverse topological order.
    std::sort(order.begin(), order.end(),
              [](const std::shared_ptr<Node>& x, const std::shared_ptr<Node>& y) {
                  return x->seq > y->seq;
              });

    dispatch_dt(root->dtype, [&](auto ti) {
        using T = typename decltype(ti)::type;
        grad_of<T>(root)[0] += T(1);
    });
    for (const auto& n : order) {
        if (n->backward_fn) n->backward_fn();
    }
    for (const auto& n : order) {
        if (!n->is_leaf()) {
            n->backward_fn = nullptr;
            n->parents.clear();
            n->grad = Storage{};
            n->freed = true;
        }
    }
}

Tensor add(const Tensor& a, const Tensor& b) { return ewise(a, b, EOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return ewise(a, b, EOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return ewise(a, b, EOp::Mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return ewise(a, b, EOp::Div, "div"); }

Tensor add_scalar(const Tensor& a, double s) {
    check_defined(a, "add_scalar");
    auto out = make_node(a.shape(), a.dtype());
    dispatch_dt(a.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        const auto& av = data_of<T>(a.node.get());
        auto& yv = data_of<T>(out.get());
        const T sv = static_cast<T>(s);
        for (size_t i = 0; i < av.size(); ++i) yv[i] = av[i] + sv;
    });
    Node* o = out.get();
    attach(out, {a.node}, [a_n = a.node, o]() {
        dispatch_dt(o->dtype, [&](auto ti) {
            using T = typename decltype(ti)::type;
            const auto& g = std::get<std::vector<T>>(o->grad);
            auto& ga = grad_of<T>(a_n.get());
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    });
    return Tensor(out);
}

Tensor mul_scalar(const Tensor& a, double s) {
    check_defined(a, "mul_scalar");
    auto out = make_node(a.shape(), a.dtype());
    dispatch_dt(a.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        const auto& av = data_of<T>(a.node.get());
        auto& yv = data_of<T>(out.get());
        const T sv = static_cast<T>(s);
        for (size_t i = 0; i < av.size(); ++i) yv[i] = av[i] * sv;
    });
    Node* o = out.get();
    attach(out, {a.node}, [a_n = a.node, o, s]() {
        dispatch_dt(o->dtype, [&](auto ti) {
            using T = typename decltype(ti)::type;
            const auto& g = std::get<std::vector<T>>(o->grad);
            auto& ga = grad_of<T>(a_n.get());
            const T sv = static_cast<T>(s);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
        });
    });
    return Tensor(out);
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor sqrt_op(const Tensor& a) {
    check_defined(a, "sqrt");
    auto out = make_node(a.shape(), a.dtype());
    dispatch_dt(a.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        const auto& av = data_of<T>(a.node.get());
        auto& yv = data_of<T>(out.get());
        for (size_t i = 0; i < av.size(); ++i) yv[i] = std::sqrt(av[i]);
    });
    Node* o = out.get();
    attach(out, {a.node}, [a_n = a.node, o]() {
        dispatch_dt(o->dtype, [&](auto ti) {
            using T = typename decltype(ti)::type;
            const auto& g = std::get<std::vector<T>>(o->grad);
            const auto& yv = data_of<T>(o);
            auto& ga = grad_of<T>(a_n.get());
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * T(0.5) / yv[i];
        });
    });
    return Tensor(out);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    check_same_dtype(a, b, "matmul");
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = make_node({m, n}, a.dtype());
    dispatch_dt(a.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        kernels::matmul(data_of<T>(a.node.get()).data(), data_of<T>(b.node.get()).data(),
                        data_of<T>(out.get()).data(), m, k, n);
    });
    Node* o = out.get();
    attach(out, {a.node, b.node}, [a_n = a.node, b_n = b.node, o, m, k, n]() {
        dispatch_dt(o->dtype, [&](auto ti) {
            using T = typename decltype(ti)::type;
            const auto& g = std::get<std::vector<T>>(o->grad);
            if (a_n->requires_grad) {
                std::vector<T> tmp(static_cast<size_t>(m * k));
                kernels::matmul_nt(g.data(), data_of<T>(b_n.get()).data(), tmp.data(), m,
                                   n, k);
                auto& ga = grad_of<T>(a_n.get());
                for (size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
            }
            if (b_n->requires_grad) {
                std::vector<T> tmp(static_cast<size_t>(k * n));
                kernels::matmul_tn(data_of<T>(a_n.get()).data(), g.data(), tmp.data(), k,
                                   m, n);
                auto& gb = grad_of<T>(b_n.get());
                for (size_t i = 0; i < tmp.size(); ++i) gb[i] += tmp[i];
            }
        });
    });
    return Tensor(out);
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    check_defined(a, "bmm");
    check_defined(b, "bmm");
    check_same_dtype(a, b, "bmm");
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    auto out = make_node({bs, m, n}, a.dtype());
    dispatch_dt(a.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        kernels::bmm(data_of<T>(a.node.get()).data(), data_of<T>(b.node.get()).data(),
                     data_of<T>(out.get()).data(), bs, m, k, n);
    });
    Node* o = out.get();
    attach(out, {a.node, b.node}, [a_n = a.node, b_n = b.node, o, bs, m, k, n]() {
        dispatch_dt(o->dtype, [&](auto ti) {
            using T = typename decltype(ti)::type;
            const auto& g = std::get<std::vector<T>>(o->grad);
            if (a_n->requires_grad) {
                std::vector<T> tmp(static_cast<size_t>(bs * m * k));
                kernels::bmm_nt(g.data(), data_of<T>(b_n.get()).data(), tmp.data(), bs, m,
                                n, k);
                auto& ga = grad_of<T>(a_n.get());
                for (size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
            }
            if (b_n->requires_grad) {
                std::vector<T> tmp(static_cast<size_t>(bs * k * n));
                kernels::bmm_tn(data_of<T>(a_n.get()).data(), g.data(), tmp.data(), bs, k,
                                m, n);
                auto& gb = grad_of<T>(b_n.get());
                for (size_t i = 0; i < tmp.size(); ++i) gb[i] += tmp[i];
            }
        });
    });
    return Tensor(out);
}

Tensor softmax(const Tensor& x) {
    check_defined(x, "softmax");
    if (x.ndim() < 1) throw ShapeError("softmax: needs at least one dim");
    const int64_t d = x.dim(x.ndim() - 1);
    const int64_t rows = x.numel() / d;
    auto out = make_node(x.shape(), x.dtype());
    dispatch_dt(x.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        kernels::softmax_rows(data_of<T>(x.node.get()).data(),
                              data_of<T>(out.get()).data(), rows, d);
    });
    Node* o = out.get();
    attach(out, {x.node}, [x_n = x.node, o, rows, d]() {
        dispatch_dt(o->dtype, [&](auto ti) {
            using T = typename decltype(ti)::type;
            const auto& g = std::get<std::vector<T>>(o->grad);
            std::vector<T> tmp(static_cast<size_t>(rows * d));
            kernels::softmax_rows_grad(data_of<T>(o).data(), g.data(), tmp.data(), rows,
                                       d);
            auto& gx = grad_of<T>(x_n.get());
            for (size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
        });
    });
    return Tensor(out);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    check_defined(x, "layer_norm");
    check_defined(gain, "layer_norm");
    check_defined(bias, "layer_norm");
    check_same_dtype(x, gain, "layer_norm");
    check_same_dtype(x, bias, "layer_norm");
    const int64_t d = x.dim(x.ndim() - 1);
    if (gain.numel() != d || bias.numel() != d)
        throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) +
                         " elements");
    const int64_t rows = x.numel() / d;
    auto out = make_node(x.shape(), x.dtype());
    return dispatch_dt(x.dtype(), [&](auto ti) -> Tensor {
        using T = typename decltype(ti)::type;
        auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(rows * d));
        auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
        kernels::layer_norm_rows(data_of<T>(x.node.get()).data(),
                                 data_of<T>(gain.node.get()).data(),
                                 data_of<T>(bias.node.get()).data(),
                                 data_of<T>(out.get()).data(), xhat->data(),
                                 inv_std->data(), rows, d, static_cast<T>(eps));
        Node* o = out.get();
        attach(out, {x.node, gain.node, bias.node},
               [x_n = x.node, g_n = gain.node, b_n = bias.node, o, rows, d, xhat,
                inv_std]() {
                   const auto& g = std::get<std::vector<T>>(o->grad);
                   std::vector<T> gx(static_cast<size_t>(rows * d));
                   std::vector<T> ggain_buf, gbias_buf;
                   T* ggain;
                   T* gbias;
                   if (g_n->requires_grad) {
                       ggain = grad_of<T>(g_n.get()).data();
                   } else {
                       ggain_buf.assign(static_cast<size_t>(d), T(0));
                       ggain = ggain_buf.data();
                   }
                   if (b_n->requires_grad) {
                       gbias = grad_of<T>(b_n.get()).data();
                   } else {
                       gbias_buf.assign(static_cast<size_t>(d), T(0));
                       gbias = gbias_buf.data();
                   }
                   kernels::layer_norm_rows_grad(xhat->data(), inv_std->data(),
                                                 data_of<T>(g_n.get()).data(), g.data(),
                                                 gx.data(), ggain, gbias, rows, d);
                   if (x_n->requires_grad) {
                       auto& gxv = grad_of<T>(x_n.get());
                       for (size_t i = 0; i < gx.size(); ++i) gxv[i] += gx[i];
                   }
               });
        return Tensor(out);
    });
}

Tensor l2_normalize(const Tensor& x, double eps) {
    check_defined(x, "l2_normalize");
    const int64_t d = x.dim(x.ndim() - 1);
    const int64_t rows = x.numel() / d;
    auto out = make_node(x.shape(), x.dtype());
    return dispatch_dt(x.dtype(), [&](auto ti) -> Tensor {
        using T = typename decltype(ti)::type;
        auto inv_norm = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
        kernels::l2norm_rows(data_of<T>(x.node.get()).data(), data_of<T>(out.get()).data(),
                             inv_norm->data(), rows, d, static_cast<T>(eps));
        Node* o = out.get();
        attach(out, {x.node}, [x_n = x.node, o, rows, d, inv_norm]() {
            const auto& g = std::get<std::vector<T>>(o->grad);
            std::vector<T> gx(static_cast<size_t>(rows * d));
            kernels::l2norm_rows_grad(data_of<T>(o).data(), inv_norm->data(), g.data(),
                                      gx.data(), rows, d);
            auto& gxv = grad_of<T>(x_n.get());
            for (size_t i = 0; i < gx.size(); ++i) gxv[i] += gx[i];
        });
        return Tensor(out);
    });
}

Tensor gelu(const Tensor& x) {
    check_defined(x, "gelu");
    auto out = make_node(x.shape(), x.dtype());
    const int64_t n = x.numel();
    dispatch_dt(x.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        kernels::gelu(data_of<T>(x.node.get()).data(), data_of<T>(out.get()).data(), n);
    });
    Node* o = out.get();
    attach(out, {x.node}, [x_n = x.node, o, n]() {
        dispatch_dt(o->dtype, [&](auto ti) {
            using T = typename decltype(ti)::type;
            const auto& g = std::get<std::vector<T>>(o->grad);
            std::vector<T> tmp(static_cast<size_t>(n));
            kernels::gelu_grad(data_of<T>(x_n.get()).data(), g.data(), tmp.data(), n);
            auto& gx = grad_of<T>(x_n.get());
            for (size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
        });
    });
    return Tensor(out);
}

Tensor relu(const Tensor& x) {
    check_defined(x, "relu");
    auto out = make_node(x.shape(), x.dtype());
    const int64_t n = x.numel();
    dispatch_dt(x.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        kernels::relu(data_of<T>(x.node.get()).data(), data_of<T>(out.get()).data(), n);
    });
    Node* o = out.get();
    attach(out, {x.node}, [x_n = x.node, o, n]() {
        dispatch_dt(o->dtype, [&](auto ti) {
            using T = typename decltype(ti)::type;
            const auto& g = std::get<std::vector<T>>(o->grad);
            std::vector<T> tmp(static_cast<size_t>(n));
            kernels::relu_grad(data_of<T>(x_n.get()).data(), g.data(), tmp.data(), n);
            auto& gx = grad_of<T>(x_n.get());
            for (size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
        });
    });
    return Tensor(out);
}

Tensor reshape(const Tensor& x, Shape shape) {
    check_defined(x, "reshape");
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    auto out = make_node(std::move(shape), x.dtype());
    out->data = x.node->data;
    Node* o = out.get();
    attach(out, {x.node}, [x_n = x.node, o]() {
        dispatch_dt(o->dtype, [&](auto ti) {
            using T = typename decltype(ti)::type;
            const auto& g = std::get<std::vector<T>>(o->grad);
            auto& gx = grad_of<T>(x_n.get());
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    });
    return Tensor(out);
}

Tensor permute(const Tensor& x, const std::vector<int>& dims) {
    check_defined(x, "permute");
    const size_t nd = x.node->shape.size();
    if (dims.size() != nd) throw ShapeError("permute: rank mismatch");
    if (nd < 2) return reshape(x, x.shape());
    std::vector<bool> used(nd, false);
    Shape out_shape(nd);
    for (size_t j = 0; j < nd; ++j) {
        const int d = dims[j];
        if (d < 0 || static_cast<size_t>(d) >= nd || used[static_cast<size_t>(d)])
            throw ShapeError("permute: invalid axis order");
        used[static_cast<size_t>(d)] = true;
        out_shape[j] = x.node->shape[static_cast<size_t>(d)];
    }
    auto out = make_node(out_shape, x.dtype());
    // map[e_out] = e_in
    const int64_t n = x.numel();
    auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n));
    std::vector<int64_t> in_stride(nd, 1);
    for (size_t i = nd - 1; i-- > 0;)
        in_stride[i] = in_stride[i + 1] * x.node->shape[i + 1];
    for (int64_t e = 0; e < n; ++e) {
        int64_t rem = e, src = 0;
        for (size_t j = nd; j-- > 0;) {
            const int64_t ix = rem % out_shape[j];
            rem /= out_shape[j];
            src += ix * in_stride[static_cast<size_t>(dims[j])];
        }
        (*map)[static_cast<size_t>(e)] = src;
    }
    dispatch_dt(x.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        const auto& xv = data_of<T>(x.node.get());
        auto& yv = data_of<T>(out.get());
        for (int64_t e = 0; e < n; ++e) yv[e] = xv[(*map)[static_cast<size_t>(e)]];
    });
    Node* o = out.get();
    attach(out, {x.node}, [x_n = x.node, o, map, n]() {
        dispatch_dt(o->dtype, [&](auto ti) {
            using T = typename decltype(ti)::type;
            const auto& g = std::get<std::vector<T>>(o->grad);
            auto& gx = grad_of<T>(x_n.get());
            for (int64_t e = 0; e < n; ++e) gx[(*map)[static_cast<size_t>(e)]] += g[e];
        });
    });
    return Tensor(out);
}

Tensor slice(const Tensor& x, int dim, int64_t start, int64_t len) {
    check_defined(x, "slice");
    if (dim < 0 || dim >= x.ndim()) throw ShapeError("slice: bad dim");
    const int64_t dlen = x.dim(dim);
    if (start < 0 || len <= 0 || start + len > dlen)
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for dim of " +
                         std::to_string(dlen));
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(dim)] = len;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < dim; ++i) outer *= x.dim(i);
    for (int i = dim + 1; i < x.ndim(); ++i) inner *= x.dim(i);
    auto out = make_node(out_shape, x.dtype());
    dispatch_dt(x.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        const auto& xv = data_of<T>(x.node.get());
        auto& yv = data_of<T>(out.get());
        for (int64_t o2 = 0; o2 < outer; ++o2)
            for (int64_t l = 0; l < len; ++l)
                for (int64_t i = 0; i < inner; ++i)
                    yv[(o2 * len + l) * inner + i] =
                        xv[(o2 * dlen + start + l) * inner + i];
    });
    Node* o = out.get();
    attach(out, {x.node}, [x_n = x.node, o, outer, inner, len, dlen, start]() {
        dispatch_dt(o->dtype, [&](auto ti) {
            using T = typename decltype(ti)::type;
            const auto& g = std::get<std::vector<T>>(o->grad);
            auto& gx = grad_of<T>(x_n.get());
            for (int64_t o2 = 0; o2 < outer; ++o2)
                for (int64_t l = 0; l < len; ++l)
                    for (int64_t i = 0; i < inner; ++i)
                        gx[(o2 * dlen + start + l) * inner + i] +=
                            g[(o2 * len + l) * inner + i];
        });
    });
    return Tensor(out);
}

Tensor concat(const std::vector<Tensor>& parts, int dim) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const Tensor& first = parts[0];
    check_defined(first, "concat");
    if (dim < 0 || dim >= first.ndim()) throw ShapeError("concat: bad dim");
    int64_t total = 0;
    for (const auto& p : parts) {
        check_defined(p, "concat");
        check_same_dtype(first, p, "concat");
        if (p.ndim() != first.ndim()) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < first.ndim(); ++i)
            if (i != dim && p.dim(i) != first.dim(i))
                throw ShapeError("concat: shape mismatch at dim " + std::to_string(i));
        total += p.dim(dim);
    }
    Shape out_shape = first.shape();
    out_shape[static_cast<size_t>(dim)] = total;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < dim; ++i) outer *= first.dim(i);
    for (int i = dim + 1; i < first.ndim(); ++i) inner *= first.dim(i);
    auto out = make_node(out_shape, first.dtype());
    std::vector<std::shared_ptr<Node>> parent_nodes;
    std::vector<int64_t> lens, offsets;
    int64_t off = 0;
    for (const auto& p : parts) {
        parent_nodes.push_back(p.node);
        lens.push_back(p.dim(dim));
        offsets.push_back(off);
        off += p.dim(dim);
    }
    dispatch_dt(first.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        auto& yv = data_of<T>(out.get());
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            const auto& xv = data_of<T>(parts[pi].node.get());
            const int64_t len = lens[pi], start = offsets[pi];
            for (int64_t o2 = 0; o2 < outer; ++o2)
                for (int64_t l = 0; l < len; ++l)
                    for (int64_t i = 0; i < inner; ++i)
                        yv[(o2 * total + start + l) * inner + i] =
                            xv[(o2 * len + l) * inner + i];
        }
    });
    Node* o = out.get();
    attach(out, parent_nodes,
           [parent_nodes, o, outer, inner, total, lens, offsets]() {
               dispatch_dt(o->dtype, [&](auto ti) {
                   using T = typename decltype(ti)::type;
                   const auto& g = std::get<std::vector<T>>(o->grad);
                   for (size_t pi = 0; pi < parent_nodes.size(); ++pi) {
                       if (!parent_nodes[pi]->requires_grad) continue;
                       auto& gx = grad_of<T>(parent_nodes[pi].get());
                       const int64_t len = lens[pi], start = offsets[pi];
                       for (int64_t o2 = 0; o2 < outer; ++o2)
                           for (int64_t l = 0; l < len; ++l)
                               for (int64_t i = 0; i < inner; ++i)
                                   gx[(o2 * len + l) * inner + i] +=
                                       g[(o2 * total + start + l) * inner + i];
                   }
               });
           });
    return Tensor(out);
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
    check_defined(x, "broadcast_to");
    const Shape joint = broadcast_shapes(x.shape(), shape, "broadcast_to");
    if (joint != shape)
        throw ShapeError("broadcast_to: cannot expand " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
    auto out = make_node(shape, x.dtype());
    auto map = std::make_shared<std::vector<int64_t>>(broadcast_map(shape, x.shape()));
    const int64_t n = out->numel();
    dispatch_dt(x.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        const auto& xv = data_of<T>(x.node.get());
        auto& yv = data_of<T>(out.get());
        for (int64_t e = 0; e < n; ++e) yv[e] = xv[(*map)[static_cast<size_t>(e)]];
    });
    Node* o = out.get();
    attach(out, {x.node}, [x_n = x.node, o, map, n]() {
        dispatch_dt(o->dtype, [&](auto ti) {
            using T = typename decltype(ti)::type;
            const auto& g = std::get<std::vector<T>>(o->grad);
            auto& gx = grad_of<T>(x_n.get());
            for (int64_t e = 0; e < n; ++e) gx[(*map)[static_cast<size_t>(e)]] += g[e];
        });
    });
    return Tensor(out);
}

Tensor sum_all(const Tensor& x) {
    check_defined(x, "sum_all");
    auto out = make_node({}, x.dtype());
    dispatch_dt(x.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        const auto& xv = data_of<T>(x.node.get());
        T acc = 0;
        for (const T v : xv) acc += v;
        data_of<T>(out.get())[0] = acc;
    });
    Node* o = out.get();
    attach(out, {x.node}, [x_n = x.node, o]() {
        dispatch_dt(o->dtype, [&](auto ti) {
            using T = typename decltype(ti)::type;
            const T g = std::get<std::vector<T>>(o->grad)[0];
            auto& gx = grad_of<T>(x_n.get());
            for (auto& v : gx) v += g;
        });
    });
    return Tensor(out);
}

Tensor mean_all(const Tensor& x) {
    return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(const Tensor& x, int axis) {
    check_defined(x, "sum_axis");
    if (axis < 0 || axis >= x.ndim()) throw ShapeError("sum_axis: bad axis");
    const int64_t len = x.dim(axis);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);
    Shape out_shape;
    for (int i = 0; i < x.ndim(); ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    auto out = make_node(out_shape, x.dtype());
    dispatch_dt(x.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        const auto& xv = data_of<T>(x.node.get());
        auto& yv = data_of<T>(out.get());
        for (int64_t o2 = 0; o2 < outer; ++o2) {
            for (int64_t i = 0; i < inner; ++i) {
                T acc = 0;
                for (int64_t l = 0; l < len; ++l) acc += xv[(o2 * len + l) * inner + i];
                yv[o2 * inner + i] = acc;
            }
        }
    });
    Node* o = out.get();
    attach(out, {x.node}, [x_n = x.node, o, outer, inner, len]() {
        dispatch_dt(o->dtype, [&](auto ti) {
            using T = typename decltype(ti)::type;
            const auto& g = std::get<std::vector<T>>(o->grad);
            auto& gx = grad_of<T>(x_n.get());
            for (int64_t o2 = 0; o2 < outer; ++o2)
                for (int64_t l = 0; l < len; ++l)
                    for (int64_t i = 0; i < inner; ++i)
                        gx[(o2 * len + l) * inner + i] += g[o2 * inner + i];
        });
    });
    return Tensor(out);
}

Tensor mean_axis(const Tensor& x, int axis) {
    return mul_scalar(sum_axis(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
    check_defined(x, "dropout");
    if (p < 0.0 || p >= 1.0)
        throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(p));
    if (!training || p == 0.0) return x;
    auto out = make_node(x.shape(), x.dtype());
    return dispatch_dt(x.dtype(), [&](auto ti) -> Tensor {
        using T = typename decltype(ti)::type;
        const auto& xv = data_of<T>(x.node.get());
        auto& yv = data_of<T>(out.get());
        auto mask = std::make_shared<std::vector<T>>(xv.size());
        const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
        for (size_t i = 0; i < xv.size(); ++i) {
            const T m = rng.uniform() >= p ? keep_scale : T(0);
            (*mask)[i] = m;
            yv[i] = xv[i] * m;
        }
        Node* o = out.get();
        attach(out, {x.node}, [x_n = x.node, o, mask]() {
            const auto& g = std::get<std::vector<T>>(o->grad);
            auto& gx = grad_of<T>(x_n.get());
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
        });
        return Tensor(out);
    });
}

Tensor cross_entropy_weighted(const Tensor& logits, const std::vector<int>& labels,
                              const std::vector<double>& class_weights) {
    check_defined(logits, "cross_entropy");
    if (logits.ndim() != 2)
        throw ShapeError("cross_entropy: logits must be [n,classes], got " +
                         shape_str(logits.shape()));
    const int64_t n = logits.dim(0), k = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != n)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
    if (static_cast<int64_t>(class_weights.size()) != k)
        throw ShapeError("cross_entropy: weight vector must have one entry per class");
    for (const int y : labels)
        if (y < 0 || y >= k)
            throw DataError("cross_entropy: label " + std::to_string(y) +
                            " out of range for " + std::to_string(k) + " classes");
    auto out = make_node({}, logits.dtype());
    return dispatch_dt(logits.dtype(), [&](auto ti) -> Tensor {
        using T = typename decltype(ti)::type;
        const auto& z = data_of<T>(logits.node.get());
        auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(n * k));
        double wsum = 0.0, loss = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const T* zr = z.data() + i * k;
            T mx = zr[0];
            for (int64_t j = 1; j < k; ++j) mx = zr[j] > mx ? zr[j] : mx;
            T denom = 0;
            for (int64_t j = 0; j < k; ++j) {
                const T e = std::exp(zr[j] - mx);
                (*probs)[static_cast<size_t>(i * k + j)] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (int64_t j = 0; j < k; ++j) (*probs)[static_cast<size_t>(i * k + j)] *= inv;
            const double lse = static_cast<double>(mx) + std::log(static_cast<double>(denom));
            const double w = class_weights[static_cast<size_t>(labels[static_cast<size_t>(i)])];
            wsum += w;
            loss += w * (lse - static_cast<double>(zr[labels[static_cast<size_t>(i)]]));
        }
        if (wsum <= 0.0) throw ContractError("cross_entropy: batch weight sum is zero");
        data_of<T>(out.get())[0] = static_cast<T>(loss / wsum);
        Node* o = out.get();
        attach(out, {logits.node},
               [x_n = logits.node, o, probs, labels, class_weights, wsum, n, k]() {
                   const T g = std::get<std::vector<T>>(o->grad)[0];
                   auto& gx = grad_of<T>(x_n.get());
                   const T inv_w = static_cast<T>(1.0 / wsum);
                   for (int64_t i = 0; i < n; ++i) {
                       const int y = labels[static_cast<size_t>(i)];
                       const T w = static_cast<T>(class_weights[static_cast<size_t>(y)]);
                       for (int64_t j = 0; j < k; ++j) {
                           T p = (*probs)[static_cast<size_t>(i * k + j)];
                           if (j == y) p -= T(1);
                           gx[i * k + j] += g * w * p * inv_w;
                       }
                   }
               });
        return Tensor(out);
    });
}

Tensor patchify(const Tensor& images, int64_t patch) {
    check_defined(images, "patchify");
    if (images.ndim() != 4)
        throw ShapeError("patchify: expected [n,c,h,w], got " + shape_str(images.shape()));
    const int64_t n = images.dim(0), c = images.dim(1), h = images.dim(2),
                  w = images.dim(3);
    if (patch <= 0 || h % patch != 0 || w % patch != 0)
        throw ShapeError("patchify: patch " + std::to_string(patch) +
                         " does not tile " + std::to_string(h) + "x" + std::to_string(w));
    const int64_t gh = h / patch, gw = w / patch;
    auto out = make_node({n, gh * gw, c * patch * patch}, images.dtype());
    dispatch_dt(images.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        kernels::patchify(data_of<T>(images.node.get()).data(),
                          data_of<T>(out.get()).data(), n, c, h, w, patch);
    });
    Node* o = out.get();
    attach(out, {images.node}, [x_n = images.node, o, n, c, h, w, patch, gh, gw]() {
        dispatch_dt(o->dtype, [&](auto ti) {
            using T = typename decltype(ti)::type;
            const auto& g = std::get<std::vector<T>>(o->grad);
            auto& gx = grad_of<T>(x_n.get());
            const T* src = g.data();
            for (int64_t img = 0; img < n; ++img)
                for (int64_t py = 0; py < gh; ++py)
                    for (int64_t px = 0; px < gw; ++px)
                        for (int64_t ch = 0; ch < c; ++ch)
                            for (int64_t y = 0; y < patch; ++y)
                                for (int64_t x = 0; x < patch; ++x)
                                    gx[((img * c + ch) * h + py * patch + y) * w +
                                       px * patch + x] += *src++;
        });
    });
    return Tensor(out);
}

Tensor detach(const Tensor& x) {
    check_defined(x, "detach");
    auto out = make_node(x.shape(), x.dtype());
    out->data = x.node->data;
    return Tensor(out);
}

Tensor clone(const Tensor& x) { return detach(x); }

void fill_(Tensor& t, double value) {
    dispatch_dt(t.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        auto& d = data_of<T>(t.node.get());
        std::fill(d.begin(), d.end(), static_cast<T>(value));
    });
}

namespace {
void check_inplace_pair(const Tensor& a, const Tensor& b, const char* what) {
    check_defined(a, what);
    check_defined(b, what);
    check_same_dtype(a, b, what);
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}
}  // namespace

void copy_(Tensor& dst, const Tensor& src) {
    check_inplace_pair(dst, src, "copy_");
    dst.node->data = src.node->data;
}

void axpy_(Tensor& y, double alpha, const Tensor& x) {
    check_inplace_pair(y, x, "axpy_");
    dispatch_dt(y.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        auto& yv = data_of<T>(y.node.get());
        const auto& xv = data_of<T>(x.node.get());
        const T a = static_cast<T>(alpha);
        for (size_t i = 0; i < yv.size(); ++i) yv[i] += a * xv[i];
    });
}

void scale_(Tensor& t, double alpha) {
    dispatch_dt(t.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        auto& d = data_of<T>(t.node.get());
        const T a = static_cast<T>(alpha);
        for (auto& v : d) v *= a;
    });
}

void ema_(Tensor& target, const Tensor& online, double m) {
    check_inplace_pair(target, online, "ema_");
    dispatch_dt(target.dtype(), [&](auto ti) {
        using T = typename decltype(ti)::type;
        auto& tv = data_of<T>(target.node.get());
        const auto& ov = data_of<T>(online.node.get());
        const T mm = static_cast<T>(m), om = static_cast<T>(1.0 - m);
        for (size_t i = 0; i < tv.size(); ++i) tv[i] = mm * tv[i] + om * ov[i];
    });
}

bool all_finite(const Tensor& t) {
    return dispatch_dt(t.dtype(), [&](auto ti) -> bool {
        using T = typename decltype(ti)::type;
        for (const T v : data_of<T>(t.node.get()))
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    });
}

void assert_finite(const Tensor& t, const std::string& what) {
    if (!all_finite(t)) throw NumericError(what + ": non-finite values");
}

}  // namespace vitssp
