#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "vitssp/dtype.hpp"
#include "vitssp/error.hpp"
#include "vitssp/rng.hpp"

namespace vitssp {

using Storage = std::variant<std::vector<float>, std::vector<double>>;

// One vertex of the autodiff tape. Nodes are append-only: every op creates a
// fresh node whose `seq` is larger than its parents', so sorting reachable
// nodes by descending seq is a valid reverse-topological order.
struct Node {
    Shape shape;
    DType dtype = DType::F64;
    Storage data;
    Storage grad;  // empty until first needed; leaves keep it across backwards
    bool requires_grad = false;
    bool freed = false;  // backward already consumed the subgraph rooted here
    uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;

    int64_t numel() const { return shape_numel(shape); }
    bool is_leaf() const { return !backward_fn; }
};

// Disables graph construction in scope; ops run under it produce constant
// results even when inputs require grad.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node(std::move(n)) {}

    static Tensor zeros(Shape shape, DType dt = default_dtype());
    static Tensor ones(Shape shape, DType dt = default_dtype());
    static Tensor full(Shape shape, double value, DType dt = default_dtype());
    static Tensor scalar(double value, DType dt = default_dtype());
    static Tensor from_vector(Shape shape, const std::vector<double>& values,
                              DType dt = default_dtype());
    static Tensor randn(Shape shape, Rng& rng, double sigma = 1.0,
                        DType dt = default_dtype());
    static Tensor trunc_normal(Shape shape, Rng& rng, double sigma,
                               DType dt = default_dtype());

    bool defined() const { return node != nullptr; }
    const Shape& shape() const { return node->shape; }
    int ndim() const { return static_cast<int>(node->shape.size()); }
    int64_t dim(int i) const { return node->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return node->numel(); }
    DType dtype() const { return node->dtype; }

    bool requires_grad() const { return node->requires_grad; }
    Tensor& set_requires_grad(bool rg);
    bool is_leaf() const { return node->is_leaf(); }

    double item() const;
    double at(int64_t flat) const;
    void set(int64_t flat, double value);
    std::vector<double> to_vector() const;

    bool has_grad() const;
    double grad_at(int64_t flat) const;
    std::vector<double> grad_to_vector() const;
    void zero_grad();

    // Runs reverse-mode accumulation from this scalar, then frees the graph.
    // Leaf grads add up across calls; a second backward through the same
    // graph throws ContractError.
    void backward();

    template <class T>
    std::vector<T>& raw() {
        return std::get<std::vector<T>>(node->data);
    }
    template <class T>
    const std::vector<T>& raw() const {
        return std::get<std::vector<T>>(node->data);
    }
    template <class T>
    std::vector<T>& raw_grad() {
        return std::get<std::vector<T>>(node->grad);
    }
    template <class T>
    const std::vector<T>& raw_grad() const {
        return std::get<std::vector<T>>(node->grad);
    }

    std::shared_ptr<Node> node;
};

// Elementwise with NumPy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor sqrt_op(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n]
Tensor bmm(const Tensor& a, const Tensor& b);     // [b,m,k]x[b,k,n]

Tensor softmax(const Tensor& x);  // last dim
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& dims);
Tensor slice(const Tensor& x, int dim, int64_t start, int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int dim);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis);
Tensor mean_axis(const Tensor& x, int axis);

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

// Class-weighted cross entropy over logits [n,K]; labels index rows of the
// weight vector. Normalized by the summed weights of the batch.
Tensor cross_entropy_weighted(const Tensor& logits, const std::vector<int>& labels,
                              const std::vector<double>& class_weights);

// [n,C,H,W] -> [n, (H/p)*(W/p), C*p*p]; rows are patches in raster order,
// each flattened channel-major.
Tensor patchify(const Tensor& images, int64_t patch);

Tensor detach(const Tensor& x);
Tensor clone(const Tensor& x);

// In-place parameter updates, outside the graph. Same shape and dtype only.
void fill_(Tensor& t, double value);
void copy_(Tensor& dst, const Tensor& src);
void axpy_(Tensor& y, double alpha, const Tensor& x);  // y += alpha*x
void scale_(Tensor& t, double alpha);
void ema_(Tensor& target, const Tensor& online, double m);  // t = m*t + (1-m)*o

bool all_finite(const Tensor& t);
void assert_finite(const Tensor& t, const std::string& what);

}  // namespace vitssp
