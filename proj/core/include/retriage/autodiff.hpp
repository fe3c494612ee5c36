#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace retriage::autodiff {

class Graph;

namespace detail {
struct TensorImpl {
    std::vector<int> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;

    std::size_t numel() const { return data.size(); }
    void ensure_grad();
};
}  // namespace detail

/// N-dimensional 32-bit float array. Value-semantics handle sharing its
/// storage; participates in the active Graph's tape when one is installed
/// and any operand requires gradients.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, bool requires_grad = false);
    Tensor(std::vector<int> shape, std::vector<float> data, bool requires_grad = false);

    static Tensor scalar(float v, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float v, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    std::size_t numel() const { return impl_->numel(); }

    std::span<float> data() { return impl_->data; }
    std::span<const float> data() const { return impl_->data; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<float> grad() { return impl_->grad; }
    std::span<const float> grad() const { return impl_->grad; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }
    void zero_grad();

    /// Value of a single-element tensor.
    float item() const;

    /// Deep copy of shape/data (grad not copied).
    Tensor clone() const;

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
    friend class Graph;
};

/// Reverse-mode tape. Primitives record their backward rules on the
/// innermost installed Graph; backward() replays them once in reverse
/// recording order (a valid reverse topological order of the DAG).
///
/// A Graph and the tensors recorded on it belong to one logical execution
/// context; distinct graphs may run on distinct threads.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Seeds d(out)/d(out) = 1 and accumulates gradients into every
    /// requires_grad tensor that contributed to `out`.
    /// Throws ContractError if `out` is not a scalar.
    void backward(const Tensor& out);

    std::size_t node_count() const { return nodes_.size(); }

    /// Installs this graph as the recording target for the current thread.
    class Scope {
    public:
        explicit Scope(Graph& g);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Graph* prev_;
    };

    static Graph* current();

    void record(std::function<void()> backward_fn);

private:
    std::vector<std::function<void()>> nodes_;
};

/// Number of primitives recorded on any graph by this thread since start.
/// Lets callers assert that inference paths build no training-graph state.
std::size_t recorded_primitive_count();

// ---- Primitives ------------------------------------------------------
// Elementwise ops broadcast in the usual trailing-alignment way: shapes are
// right-aligned and each dimension pair must match or one of them must be 1
// (missing leading dimensions count as 1).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// [M,K] x [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);

/// input [N,Cin,H,W], kernel [Cout,Cin/groups,kh,kw] -> [N,Cout,Ho,Wo].
/// Zero padding only. groups must divide both channel counts;
/// groups == Cin == Cout realizes a depthwise convolution.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad, int groups = 1);

Tensor relu6(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

/// Spatial mean: [N,C,H,W] -> [N,C].
Tensor global_mean(const Tensor& x);

Tensor reshape(const Tensor& x, std::vector<int> new_shape);
Tensor scalar_mul(const Tensor& x, float s);

// ---- Finite-difference oracle ----------------------------------------
//
// The checked scalar is <w, f(x)> for a fixed random sign vector w; both
// sides use the same w. The backward side runs the tape; the difference
// side forms (f(x+eps e) - f(x-eps e)) element-wise, reduces in double
// against w and divides by the realized float32 step. Reducing in double
// keeps the float32 quantization of a large scalar out of the oracle, so
// the comparison measures the backward rules rather than rounding.

struct FiniteDiffOptions {
    float eps = 1e-3f;
    /// When nonzero, check at most this many randomly chosen coordinates
    /// per input instead of every element.
    std::size_t max_coords_per_input = 0;
    /// Seeds both the cotangent signs and the coordinate subsampling.
    std::uint64_t seed = 0;
};

/// Gradients of <w, f(x)> via the tape, where f may return any shape.
std::vector<std::vector<double>> backward_gradients(
    const std::function<Tensor(std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
    const FiniteDiffOptions& opt = {});

/// Central-difference gradients of <w, f(x)>; independent of every
/// backward rule. Coordinates skipped by subsampling report NaN.
std::vector<std::vector<double>> finite_diff_gradients(
    const std::function<Tensor(std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
    const FiniteDiffOptions& opt = {});

/// max over elements of |a-b| / max(|a|, |b|, 0.01). Pairs with a NaN are
/// skipped (unchecked coordinates); infinities report as a large error.
double max_relative_error(const std::vector<std::vector<double>>& a,
                          const std::vector<std::vector<double>>& b);

/// Compares backward gradients of `f` against central finite differences
/// and returns the max relative error over all checked coordinates.
double finite_diff_check(const std::function<Tensor(std::vector<Tensor>&)>& f,
                         std::vector<Tensor> inputs, const FiniteDiffOptions& opt = {});

// ---- Non-recorded helpers (leaf construction, plumbing) ---------------

std::string shape_str(const std::vector<int>& shape);
std::size_t shape_numel(const std::vector<int>& shape);

}  // namespace retriage::autodiff
