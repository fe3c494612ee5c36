#include "retriage/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "retriage/error.hpp"
#include "retriage/rng.hpp"

namespace retriage::autodiff {

namespace {

thread_local Graph* tls_graph = nullptr;
thread_local std::size_t tls_recorded = 0;

using Impl = detail::TensorImpl;
using ImplPtr = std::shared_ptr<Impl>;

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!tls_graph) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

void record_node(std::function<void()> fn) {
    ++tls_recorded;
    tls_graph->record(std::move(fn));
}

// Right-aligned broadcast of two shapes; throws naming the primitive.
std::vector<int> broadcast_shape(const char* op, const std::vector<int>& a,
                                 const std::vector<int>& b) {
    const int rank = static_cast<int>(std::max(a.size(), b.size()));
    std::vector<int> out(rank);
    for (int d = 0; d < rank; ++d) {
        int ad = d < rank - static_cast<int>(a.size()) ? 1 : a[d - (rank - a.size())];
        int bd = d < rank - static_cast<int>(b.size()) ? 1 : b[d - (rank - b.size())];
        if (ad != bd && ad != 1 && bd != 1)
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) +
                             " with " + shape_str(b));
        out[d] = std::max(ad, bd);
    }
    return out;
}

// Per-dimension element strides of `shape` aligned to `out`, 0 where broadcast.
std::vector<std::size_t> broadcast_strides(const std::vector<int>& shape,
                                           const std::vector<int>& out) {
    const int rank = static_cast<int>(out.size());
    const int off = rank - static_cast<int>(shape.size());
    std::vector<std::size_t> strides(rank, 0);
    std::size_t s = 1;
    for (int d = static_cast<int>(shape.size()) - 1; d >= 0; --d) {
        strides[d + off] = shape[d] == 1 ? 0 : s;
        s *= static_cast<std::size_t>(shape[d]);
    }
    return strides;
}

// Walks every output index of `out_shape`, handing the linear output index
// and the two broadcast-mapped input offsets to `fn`, in row-major order.
template <typename F>
void for_each_broadcast(const std::vector<int>& out_shape, const std::vector<int>& a_shape,
                        const std::vector<int>& b_shape, F&& fn) {
    const std::size_t n = shape_numel(out_shape);
    const int rank = static_cast<int>(out_shape.size());
    if (rank == 0) {
        if (n) fn(0, 0, 0);
        return;
    }
    const auto astr = broadcast_strides(a_shape, out_shape);
    const auto bstr = broadcast_strides(b_shape, out_shape);
    std::vector<int> idx(rank, 0);
    std::size_t ao = 0, bo = 0;
    for (std::size_t o = 0; o < n; ++o) {
        fn(o, ao, bo);
        for (int d = rank - 1; d >= 0; --d) {
            ++idx[d];
            ao += astr[d];
            bo += bstr[d];
            if (idx[d] < out_shape[d]) break;
            ao -= astr[d] * static_cast<std::size_t>(out_shape[d]);
            bo -= bstr[d] * static_cast<std::size_t>(out_shape[d]);
            idx[d] = 0;
        }
    }
}

Tensor make_output(std::vector<int> shape, bool requires_grad) {
    Tensor t(std::move(shape));
    t.set_requires_grad(requires_grad);
    return t;
}

// Elementwise binary op with broadcasting. fwd(a,b) -> out value;
// bwd_a / bwd_b give the local partials as functions of the saved operands.
template <typename Fwd, typename BwdA, typename BwdB>
Tensor broadcast_binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                        BwdA bwd_a, BwdB bwd_b) {
    auto out_shape = broadcast_shape(name, a.shape(), b.shape());
    const bool rec = should_record({&a, &b});
    Tensor out = make_output(out_shape, rec);

    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();
    for_each_broadcast(out_shape, ai->shape, bi->shape,
                       [&](std::size_t o, std::size_t ao, std::size_t bo) {
                           oi->data[o] = fwd(ai->data[ao], bi->data[bo]);
                       });

    if (rec) {
        record_node([ai, bi, oi, bwd_a, bwd_b]() {
            if (oi->grad.empty()) return;
            const bool need_a = ai->requires_grad;
            const bool need_b = bi->requires_grad;
            if (need_a) ai->ensure_grad();
            if (need_b) bi->ensure_grad();
            for_each_broadcast(oi->shape, ai->shape, bi->shape,
                               [&](std::size_t o, std::size_t ao, std::size_t bo) {
                                   const float g = oi->grad[o];
                                   if (need_a) ai->grad[ao] += g * bwd_a(ai->data[ao], bi->data[bo]);
                                   if (need_b) bi->grad[bo] += g * bwd_b(ai->data[ao], bi->data[bo]);
                               });
        });
    }
    return out;
}

// Elementwise unary op. bwd(x, y) gives the local derivative.
template <typename Fwd, typename Bwd>
Tensor elementwise_unary(const Tensor& x, Fwd fwd, Bwd bwd) {
    const bool rec = should_record({&x});
    Tensor out = make_output(x.shape(), rec);
    ImplPtr xi = x.impl(), oi = out.impl();
    for (std::size_t i = 0; i < xi->data.size(); ++i) oi->data[i] = fwd(xi->data[i]);
    if (rec) {
        record_node([xi, oi, bwd]() {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < xi->data.size(); ++i)
                xi->grad[i] += oi->grad[i] * bwd(xi->data[i], oi->data[i]);
        });
    }
    return out;
}

float stable_sigmoid(float x) {
    if (x >= 0.0f) {
        return 1.0f / (1.0f + std::exp(-x));
    }
    const float e = std::exp(x);
    return e / (1.0f + e);
}

}  // namespace

// ---- TensorImpl / Tensor ----------------------------------------------

void detail::TensorImpl::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, bool requires_grad) {
    for (int d : shape)
        if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    impl_ = std::make_shared<Impl>();
    impl_->data.assign(shape_numel(shape), 0.0f);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw ShapeError("tensor data size " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    impl_ = std::make_shared<Impl>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(float v, bool requires_grad) {
    return Tensor({1}, {v}, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, float v, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), v);
    return t;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

float Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

Tensor Tensor::clone() const {
    return Tensor(impl_->shape, impl_->data, impl_->requires_grad);
}

// ---- Graph -------------------------------------------------------------

Graph::Scope::Scope(Graph& g) : prev_(tls_graph) { tls_graph = &g; }
Graph::Scope::~Scope() { tls_graph = prev_; }

Graph* Graph::current() { return tls_graph; }

void Graph::record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
}

void Graph::backward(const Tensor& out) {
    if (out.numel() != 1)
        throw ContractError("backward requires a scalar output, got shape " +
                            shape_str(out.shape()));
    out.impl()->ensure_grad();
    out.impl()->grad[0] = 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

std::size_t recorded_primitive_count() { return tls_recorded; }

// ---- Primitives --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        "add", a, b, [](float x, float y) { return x + y; },
        [](float, float) { return 1.0f; }, [](float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        "sub", a, b, [](float x, float y) { return x - y; },
        [](float, float) { return 1.0f; }, [](float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        "mul", a, b, [](float x, float y) { return x * y; },
        [](float, float y) { return y; }, [](float x, float) { return x; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    const bool rec = should_record({&a, &b});
    Tensor out = make_output({m, n}, rec);
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();

    const float* pa = ai->data.data();
    const float* pb = bi->data.data();
    float* po = oi->data.data();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t)
                acc += static_cast<double>(pa[i * k + t]) * pb[t * n + j];
            po[i * n + j] = static_cast<float>(acc);
        }
    }

    if (rec) {
        record_node([ai, bi, oi, m, k, n]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int t = 0; t < k; ++t) {
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j)
                            acc += static_cast<double>(go[i * n + j]) * bi->data[t * n + j];
                        ai->grad[i * k + t] += static_cast<float>(acc);
                    }
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (int t = 0; t < k; ++t)
                    for (int j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (int i = 0; i < m; ++i)
                            acc += static_cast<double>(ai->data[i * k + t]) * go[i * n + j];
                        bi->grad[t * n + j] += static_cast<float>(acc);
                    }
            }
        });
    }
    return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad, int groups) {
    const auto& is = input.shape();
    const auto& ks = kernel.shape();
    if (is.size() != 4 || ks.size() != 4)
        throw ShapeError("conv2d: expected 4-D input and kernel, got " + shape_str(is) +
                         " and " + shape_str(ks));
    const int nb = is[0], cin = is[1], h = is[2], w = is[3];
    const int cout = ks[0], cpg = ks[1], kh = ks[2], kw = ks[3];
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
    if (groups < 1 || cin % groups != 0 || cout % groups != 0)
        throw ShapeError("conv2d: groups " + std::to_string(groups) +
                         " must divide input channels " + std::to_string(cin) +
                         " and output channels " + std::to_string(cout));
    if (cpg != cin / groups)
        throw ShapeError("conv2d: kernel " + shape_str(ks) + " expects " +
                         std::to_string(cpg * groups) + " input channels, input has " +
                         std::to_string(cin));
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (w + 2 * pad - kw) / stride + 1;
    if (kh > h + 2 * pad || kw > w + 2 * pad || ho < 1 || wo < 1)
        throw ShapeError("conv2d: kernel " + shape_str(ks) + " does not fit input " +
                         shape_str(is) + " with pad " + std::to_string(pad));

    const bool rec = should_record({&input, &kernel});
    Tensor out = make_output({nb, cout, ho, wo}, rec);
    ImplPtr xi = input.impl(), ki = kernel.impl(), oi = out.impl();

    const int copg = cout / groups;
    const float* px = xi->data.data();
    const float* pk = ki->data.data();
    float* po = oi->data.data();

    for (int n = 0; n < nb; ++n) {
        for (int oc = 0; oc < cout; ++oc) {
            const int g = oc / copg;
            const float* kbase = pk + static_cast<std::size_t>(oc) * cpg * kh * kw;
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = 0.0;
                    for (int ic = 0; ic < cpg; ++ic) {
                        const float* xc = px + ((static_cast<std::size_t>(n) * cin) +
                                                g * cpg + ic) * h * w;
                        const float* kc = kbase + static_cast<std::size_t>(ic) * kh * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= h) continue;
                            const float* xrow = xc + static_cast<std::size_t>(iy) * w;
                            const float* krow = kc + static_cast<std::size_t>(ky) * kw;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= w) continue;
                                acc += static_cast<double>(xrow[ix]) * krow[kx];
                            }
                        }
                    }
                    po[((static_cast<std::size_t>(n) * cout + oc) * ho + oy) * wo + ox] =
                        static_cast<float>(acc);
                }
            }
        }
    }

    if (rec) {
        record_node([xi, ki, oi, nb, cin, h, w, cout, cpg, kh, kw, stride, pad, copg]() {
            if (oi->grad.empty()) return;
            const int ho = oi->shape[2], wo = oi->shape[3];
            const bool need_x = xi->requires_grad;
            const bool need_k = ki->requires_grad;
            if (need_x) xi->ensure_grad();
            if (need_k) ki->ensure_grad();
            const float* go = oi->grad.data();
            // Transposed-correlation identities, scatter form, fixed row-major order.
            for (int n = 0; n < nb; ++n) {
                for (int oc = 0; oc < cout; ++oc) {
                    const int g = oc / copg;
                    for (int oy = 0; oy < ho; ++oy) {
                        for (int ox = 0; ox < wo; ++ox) {
                            const float gv =
                                go[((static_cast<std::size_t>(n) * cout + oc) * ho + oy) * wo + ox];
                            if (gv == 0.0f) continue;
                            for (int ic = 0; ic < cpg; ++ic) {
                                const std::size_t xoff =
                                    ((static_cast<std::size_t>(n) * cin) + g * cpg + ic) * h * w;
                                const std::size_t koff =
                                    (static_cast<std::size_t>(oc) * cpg + ic) * kh * kw;
                                for (int ky = 0; ky < kh; ++ky) {
                                    const int iy = oy * stride - pad + ky;
                                    if (iy < 0 || iy >= h) continue;
                                    for (int kx = 0; kx < kw; ++kx) {
                                        const int ix = ox * stride - pad + kx;
                                        if (ix < 0 || ix >= w) continue;
                                        const std::size_t xidx = xoff + static_cast<std::size_t>(iy) * w + ix;
                                        const std::size_t kidx = koff + static_cast<std::size_t>(ky) * kw + kx;
                                        if (need_x) xi->grad[xidx] += gv * ki->data[kidx];
                                        if (need_k) ki->grad[kidx] += gv * xi->data[xidx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor relu6(const Tensor& x) {
    return elementwise_unary(
        x, [](float v) { return std::min(std::max(v, 0.0f), 6.0f); },
        [](float v, float) { return (v > 0.0f && v < 6.0f) ? 1.0f : 0.0f; });
}

Tensor sigmoid(const Tensor& x) {
    return elementwise_unary(x, [](float v) { return stable_sigmoid(v); },
                             [](float, float y) { return y * (1.0f - y); });
}

Tensor exp(const Tensor& x) {
    return elementwise_unary(x, [](float v) { return std::exp(v); },
                             [](float, float y) { return y; });
}

Tensor log(const Tensor& x) {
    return elementwise_unary(x, [](float v) { return std::log(v); },
                             [](float v, float) { return 1.0f / v; });
}

Tensor global_mean(const Tensor& x) {
    const auto& s = x.shape();
    if (s.size() != 4)
        throw ShapeError("global_mean: expected 4-D input, got " + shape_str(s));
    const int nb = s[0], c = s[1], h = s[2], w = s[3];
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const bool rec = should_record({&x});
    Tensor out = make_output({nb, c}, rec);
    ImplPtr xi = x.impl(), oi = out.impl();

    for (int n = 0; n < nb; ++n)
        for (int ch = 0; ch < c; ++ch) {
            const float* base = xi->data.data() + (static_cast<std::size_t>(n) * c + ch) * hw;
            double acc = 0.0;
            for (std::size_t i = 0; i < hw; ++i) acc += base[i];
            oi->data[static_cast<std::size_t>(n) * c + ch] = static_cast<float>(acc / static_cast<double>(hw));
        }

    if (rec) {
        record_node([xi, oi, nb, c, hw]() {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            const float inv = 1.0f / static_cast<float>(hw);
            for (int n = 0; n < nb; ++n)
                for (int ch = 0; ch < c; ++ch) {
                    const float g = oi->grad[static_cast<std::size_t>(n) * c + ch] * inv;
                    float* base = xi->grad.data() + (static_cast<std::size_t>(n) * c + ch) * hw;
                    for (std::size_t i = 0; i < hw; ++i) base[i] += g;
                }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    const bool rec = should_record({&x});
    Tensor out(std::move(new_shape), std::vector<float>(x.data().begin(), x.data().end()), rec);
    ImplPtr xi = x.impl(), oi = out.impl();
    if (rec) {
        record_node([xi, oi]() {
            if (oi->grad.empty()) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

Tensor scalar_mul(const Tensor& x, float s) {
    return elementwise_unary(x, [s](float v) { return v * s; },
                             [s](float, float) { return s; });
}

// ---- Finite differences --------------------------------------------------

namespace {

// Sign cotangent shared by the backward and difference sides.
std::vector<float> cotangent_signs(std::size_t n, std::uint64_t seed) {
    Rng rng(Rng::mix(seed, 0xC07A17ULL));
    std::vector<float> w(n);
    for (auto& v : w) v = rng.next_below(2) ? 1.0f : -1.0f;
    return w;
}

std::vector<std::size_t> pick_coords(std::size_t numel, const FiniteDiffOptions& opt,
                                     std::size_t input_index) {
    std::vector<std::size_t> coords(numel);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coords_per_input == 0 || opt.max_coords_per_input >= numel) return coords;
    Rng rng(Rng::mix(opt.seed, input_index + 1));
    for (std::size_t i = 0; i < opt.max_coords_per_input; ++i) {
        const std::size_t j = i + rng.next_below(numel - i);
        std::swap(coords[i], coords[j]);
    }
    coords.resize(opt.max_coords_per_input);
    return coords;
}

}  // namespace

std::vector<std::vector<double>> backward_gradients(
    const std::function<Tensor(std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
    const FiniteDiffOptions& opt) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Graph g;
    {
        Graph::Scope scope(g);
        Tensor out = f(inputs);
        const int n = static_cast<int>(out.numel());
        Tensor w(out.shape(), cotangent_signs(out.numel(), opt.seed));
        Tensor y = scalar_mul(
            reshape(global_mean(reshape(mul(out, w), {1, 1, 1, n})), {1}), static_cast<float>(n));
        g.backward(y);
    }
    std::vector<std::vector<double>> grads;
    grads.reserve(inputs.size());
    for (auto& t : inputs) {
        std::vector<double> gi(t.numel(), 0.0);
        if (t.has_grad())
            for (std::size_t i = 0; i < t.numel(); ++i) gi[i] = t.grad()[i];
        grads.push_back(std::move(gi));
    }
    return grads;
}

std::vector<std::vector<double>> finite_diff_gradients(
    const std::function<Tensor(std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
    const FiniteDiffOptions& opt) {
    std::vector<float> w;  // sized after the first evaluation
    std::vector<std::vector<double>> grads;
    grads.reserve(inputs.size());
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        std::vector<double> gi(inputs[ti].numel(), std::numeric_limits<double>::quiet_NaN());
        for (std::size_t j : pick_coords(inputs[ti].numel(), opt, ti)) {
            float& slot = inputs[ti].data()[j];
            const float orig = slot;
            const float xp = orig + opt.eps;
            const float xm = orig - opt.eps;
            slot = xp;
            const Tensor out_plus = f(inputs).clone();  // copy: f may return an input
            slot = xm;
            const Tensor out_minus = f(inputs).clone();
            slot = orig;
            if (w.empty()) w = cotangent_signs(out_plus.numel(), opt.seed);
            const double h = static_cast<double>(xp) - static_cast<double>(xm);
            double acc = 0.0;
            auto p = out_plus.data();
            auto m = out_minus.data();
            for (std::size_t i = 0; i < p.size(); ++i)
                acc += static_cast<double>(w[i]) *
                       (static_cast<double>(p[i]) - static_cast<double>(m[i]));
            gi[j] = acc / h;
        }
        grads.push_back(std::move(gi));
    }
    return grads;
}

double max_relative_error(const std::vector<std::vector<double>>& a,
                          const std::vector<std::vector<double>>& b) {
    double worst = 0.0;
    for (std::size_t t = 0; t < a.size() && t < b.size(); ++t) {
        // Scale floor: a tenth of the tensor's largest gradient magnitude.
        // Near-cancelled coordinates are then judged against the tensor's
        // own gradient scale instead of their (noise-dominated) selves.
        double scale = 0.0;
        for (std::size_t i = 0; i < a[t].size() && i < b[t].size(); ++i) {
            if (!std::isnan(a[t][i]) && std::isfinite(a[t][i]))
                scale = std::max(scale, std::abs(a[t][i]));
            if (!std::isnan(b[t][i]) && std::isfinite(b[t][i]))
                scale = std::max(scale, std::abs(b[t][i]));
        }
        for (std::size_t i = 0; i < a[t].size() && i < b[t].size(); ++i) {
            const double x = a[t][i], y = b[t][i];
            if (std::isnan(x) || std::isnan(y)) continue;  // unchecked coordinate
            if (std::isinf(x) || std::isinf(y)) return 1e30;
            const double denom = std::max({std::abs(x), std::abs(y), 0.1 * scale, 1e-12});
            worst = std::max(worst, std::abs(x - y) / denom);
        }
    }
    return worst;
}

double finite_diff_check(const std::function<Tensor(std::vector<Tensor>&)>& f,
                         std::vector<Tensor> inputs, const FiniteDiffOptions& opt) {
    const auto ad = backward_gradients(f, inputs, opt);
    const auto fd = finite_diff_gradients(f, inputs, opt);
    return max_relative_error(ad, fd);
}

// ---- Helpers ------------------------------------------------------------

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

}  // namespace retriage::autodiff
