#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "imlsp/error.hpp"
#include "imlsp/tensor.hpp"

namespace imlsp {

// Trainable tensor with a persistent gradient accumulator. Parameters live
// outside the tape and survive across forward passes; each backward pass
// adds into `grad` until reset_grad() is called.
struct Parameter {
    Tensor value;
    Tensor grad;
    std::uint64_t id;

    explicit Parameter(Tensor v)
        : value(std::move(v)), grad(value.shape()), id(next_id()) {}

    void reset_grad() { grad.fill(0.0); }

    static std::uint64_t next_id() {
        static std::atomic<std::uint64_t> counter{0};
        return counter.fetch_add(1);
    }
};

enum class OpKind : std::uint8_t {
    Input,
    ParameterLeaf,
    Dense,
    Conv3d,
    Relu,
    GlobalAvgPool,
    Concat,
    SuffixSum,
    AppendZero,
    Pick,
    LogSumExpTail,
    SquareNorm,
    DotConst,
    ReduceSum,
    AffineCombine,
};

// Reverse-mode tape, rebuilt per forward pass (define-by-run). Nodes are
// recorded in creation order, which is a topological order by construction:
// an input id always precedes its consumer. backward() sweeps the record in
// reverse exactly once, so replaying the same tape is bit-deterministic.
class Tape {
public:
    using NodeId = std::int32_t;

    struct BackwardOptions {
        // Guided backpropagation: ReLU adjoints pass only positions with
        // positive forward activation AND positive incoming gradient.
        bool guided_relu = false;
        // Accumulate leaf gradients into Parameter::grad. Off for
        // visualization passes that must not disturb training state.
        bool into_parameters = true;
    };

    NodeId input(Tensor value) {
        Node n;
        n.kind = OpKind::Input;
        n.value = std::move(value);
        return push(std::move(n));
    }

    NodeId parameter(Parameter& p) {
        Node n;
        n.kind = OpKind::ParameterLeaf;
        n.value = p.value;
        n.param = &p;
        return push(std::move(n));
    }

    // y = x W + b. x is [n,d_in] or rank-1 [d_in] (treated as one row, the
    // result keeping rank 1). W is [d_in,d_out], b is [d_out].
    NodeId dense(NodeId x, NodeId w, NodeId b) {
        const Tensor& xv = value(x);
        const Tensor& wv = value(w);
        const Tensor& bv = value(b);
        if (wv.rank() != 2)
            throw ShapeError("dense: weights must be rank 2, got " + wv.shape_str());
        const std::size_t d_in = wv.extent(0);
        const std::size_t d_out = wv.extent(1);
        const bool batched = xv.rank() == 2;
        if ((batched ? xv.extent(1) : xv.size()) != d_in || xv.rank() > 2)
            throw ShapeError("dense: input " + xv.shape_str() +
                             " does not conform to weights " + wv.shape_str());
        if (bv.rank() != 1 || bv.extent(0) != d_out)
            throw ShapeError("dense: bias " + bv.shape_str() +
                             " does not conform to weights " + wv.shape_str());
        const std::size_t rows = batched ? xv.extent(0) : 1;

        Tensor out(batched ? std::vector<std::size_t>{rows, d_out}
                           : std::vector<std::size_t>{d_out});
        for (std::size_t i = 0; i < rows; ++i) {
            const double* xr = xv.data() + i * d_in;
            double* yr = out.data() + i * d_out;
            for (std::size_t j = 0; j < d_out; ++j) {
                double acc = bv[j];
                for (std::size_t k = 0; k < d_in; ++k)
                    acc += xr[k] * wv.at2(k, j);
                yr[j] = acc;
            }
        }
        Node n;
        n.kind = OpKind::Dense;
        n.inputs = {x, w, b};
        n.value = std::move(out);
        return push(std::move(n));
    }

    // 3D cross-correlation. input [c_in,X,Y,Z], kernels [c_out,c_in,k,k,k]
    // with k odd, bias [c_out]. Direct loops; correctness over speed.
    NodeId conv3d(NodeId x, NodeId kernels, NodeId bias, int stride, int padding) {
        const Tensor& xv = value(x);
        const Tensor& kv = value(kernels);
        const Tensor& bv = value(bias);
        if (xv.rank() != 4)
            throw ShapeError("conv3d: input must be [c,X,Y,Z], got " + xv.shape_str());
        if (kv.rank() != 5)
            throw ShapeError("conv3d: kernels must be [c_out,c_in,k,k,k], got " +
                             kv.shape_str());
        const std::size_t c_out = kv.extent(0);
        const std::size_t c_in = kv.extent(1);
        const std::size_t k = kv.extent(2);
        if (kv.extent(3) != k || kv.extent(4) != k || k % 2 == 0)
            throw ConfigError("conv3d: kernel must be cubic with odd side, got " +
                              kv.shape_str());
        if (xv.extent(0) != c_in)
            throw ShapeError("conv3d: input channels " + xv.shape_str() +
                             " do not match kernels " + kv.shape_str());
        if (bv.rank() != 1 || bv.extent(0) != c_out)
            throw ShapeError("conv3d: bias " + bv.shape_str() + " must be [" +
                             std::to_string(c_out) + "]");
        if (stride < 1 || padding < 0)
            throw ConfigError("conv3d: stride must be >= 1 and padding >= 0");

        const auto out_extent = [&](std::size_t in) -> std::size_t {
            const std::int64_t e =
                (static_cast<std::int64_t>(in) + 2 * padding -
                 static_cast<std::int64_t>(k)) / stride + 1;
            if (e < 1)
                throw ConfigError(
                    "conv3d: non-positive output extent for input " + xv.shape_str() +
                    ", kernel " + std::to_string(k) + ", stride " +
                    std::to_string(stride) + ", padding " + std::to_string(padding));
            return static_cast<std::size_t>(e);
        };
        const std::size_t ox = out_extent(xv.extent(1));
        const std::size_t oy = out_extent(xv.extent(2));
        const std::size_t oz = out_extent(xv.extent(3));

        Tensor out({c_out, ox, oy, oz});
        conv3d_forward(xv, kv, bv, stride, padding, out);

        Node n;
        n.kind = OpKind::Conv3d;
        n.inputs = {x, kernels, bias};
        n.value = std::move(out);
        n.stride = stride;
        n.padding = padding;
        return push(std::move(n));
    }

    NodeId relu(NodeId x) {
        Node n;
        n.kind = OpKind::Relu;
        n.inputs = {x};
        n.value = value(x);
        for (auto& v : n.value.values()) v = v > 0.0 ? v : 0.0;
        return push(std::move(n));
    }

    // [c,X,Y,Z] -> per-channel mean [c].
    NodeId global_avg_pool(NodeId x) {
        const Tensor& xv = value(x);
        if (xv.rank() != 4)
            throw ShapeError("global_avg_pool: input must be [c,X,Y,Z], got " +
                             xv.shape_str());
        const std::size_t c = xv.extent(0);
        const std::size_t vol = xv.extent(1) * xv.extent(2) * xv.extent(3);
        Tensor out({c});
        for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            const double* p = xv.data() + ch * vol;
            for (std::size_t i = 0; i < vol; ++i) acc += p[i];
            out[ch] = acc / static_cast<double>(vol);
        }
        Node n;
        n.kind = OpKind::GlobalAvgPool;
        n.inputs = {x};
        n.value = std::move(out);
        return push(std::move(n));
    }

    // Rank-1 concatenation, a followed by b.
    NodeId concat(NodeId a, NodeId b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (av.rank() != 1 || bv.rank() != 1)
            throw ShapeError("concat: both inputs must be rank 1, got " +
                             av.shape_str() + " and " + bv.shape_str());
        std::vector<double> data;
        data.reserve(av.size() + bv.size());
        data.insert(data.end(), av.values().begin(), av.values().end());
        data.insert(data.end(), bv.values().begin(), bv.values().end());
        Node n;
        n.kind = OpKind::Concat;
        n.inputs = {a, b};
        n.value = Tensor::vector1d(std::move(data));
        return push(std::move(n));
    }

    // y_i = sum_{j >= i} x_j on a rank-1 tensor.
    NodeId suffix_sum(NodeId x) {
        const Tensor& xv = value(x);
        require_rank1(xv, "suffix_sum");
        Tensor out({xv.size()});
        double acc = 0.0;
        for (std::size_t i = xv.size(); i-- > 0;) {
            acc += xv[i];
            out[i] = acc;
        }
        Node n;
        n.kind = OpKind::SuffixSum;
        n.inputs = {x};
        n.value = std::move(out);
        return push(std::move(n));
    }

    // [x_0..x_{n-1}] -> [x_0..x_{n-1}, 0].
    NodeId append_zero(NodeId x) {
        const Tensor& xv = value(x);
        require_rank1(xv, "append_zero");
        std::vector<double> data(xv.values());
        data.push_back(0.0);
        Node n;
        n.kind = OpKind::AppendZero;
        n.inputs = {x};
        n.value = Tensor::vector1d(std::move(data));
        return push(std::move(n));
    }

    // Scalar y = x[i].
    NodeId pick(NodeId x, std::size_t i) {
        const Tensor& xv = value(x);
        if (i >= xv.size())
            throw UsageError("pick: index " + std::to_string(i) +
                             " out of range for " + xv.shape_str());
        Node n;
        n.kind = OpKind::Pick;
        n.inputs = {x};
        n.index = i;
        n.value = Tensor::scalar(xv[i]);
        return push(std::move(n));
    }

    // Scalar y = log sum_{i >= lo} exp(x_i), stabilized by the tail maximum.
    NodeId logsumexp_tail(NodeId x, std::size_t lo) {
        const Tensor& xv = value(x);
        require_rank1(xv, "logsumexp_tail");
        if (lo >= xv.size())
            throw UsageError("logsumexp_tail: start " + std::to_string(lo) +
                             " out of range for " + xv.shape_str());
        double m = xv[lo];
        for (std::size_t i = lo + 1; i < xv.size(); ++i) m = std::max(m, xv[i]);
        double acc = 0.0;
        for (std::size_t i = lo; i < xv.size(); ++i) acc += std::exp(xv[i] - m);
        Node n;
        n.kind = OpKind::LogSumExpTail;
        n.inputs = {x};
        n.index = lo;
        n.value = Tensor::scalar(m + std::log(acc));
        return push(std::move(n));
    }

    // Scalar y = sum_i x_i^2.
    NodeId square_norm(NodeId x) {
        const Tensor& xv = value(x);
        double acc = 0.0;
        for (double v : xv.values()) acc += v * v;
        Node n;
        n.kind = OpKind::SquareNorm;
        n.inputs = {x};
        n.value = Tensor::scalar(acc);
        return push(std::move(n));
    }

    // Scalar y = <x, c> with a constant vector c.
    NodeId dot_const(NodeId x, std::vector<double> c) {
        const Tensor& xv = value(x);
        if (xv.size() != c.size())
            throw ShapeError("dot_const: " + xv.shape_str() + " vs constant [" +
                             std::to_string(c.size()) + "]");
        double acc = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) acc += xv[i] * c[i];
        Node n;
        n.kind = OpKind::DotConst;
        n.inputs = {x};
        n.coeffs = std::move(c);
        n.value = Tensor::scalar(acc);
        return push(std::move(n));
    }

    // Scalar y = sum of all elements.
    NodeId reduce_sum(NodeId x) {
        const Tensor& xv = value(x);
        double acc = 0.0;
        for (double v : xv.values()) acc += v;
        Node n;
        n.kind = OpKind::ReduceSum;
        n.inputs = {x};
        n.value = Tensor::scalar(acc);
        return push(std::move(n));
    }

    // Scalar y = bias + sum_i w_i * x_i over scalar nodes x_i.
    NodeId affine_combine(std::span<const NodeId> xs, std::span<const double> ws,
                          double bias = 0.0) {
        if (xs.size() != ws.size())
            throw UsageError("affine_combine: " + std::to_string(xs.size()) +
                             " nodes vs " + std::to_string(ws.size()) + " weights");
        double acc = bias;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (!is_scalar(value(xs[i])))
                throw UsageError("affine_combine: input " + std::to_string(i) +
                                 " is not scalar");
            acc += ws[i] * value(xs[i])[0];
        }
        Node n;
        n.kind = OpKind::AffineCombine;
        n.inputs.assign(xs.begin(), xs.end());
        n.coeffs.assign(ws.begin(), ws.end());
        n.value = Tensor::scalar(acc);
        return push(std::move(n));
    }

    NodeId affine_combine(std::initializer_list<NodeId> xs,
                          std::initializer_list<double> ws, double bias = 0.0) {
        return affine_combine(std::span<const NodeId>(xs.begin(), xs.size()),
                              std::span<const double>(ws.begin(), ws.size()), bias);
    }

    const Tensor& value(NodeId id) const { return nodes_[check(id)].value; }

    std::size_t node_count() const { return nodes_.size(); }

    void backward(NodeId seed) { backward(seed, BackwardOptions{}); }

    // Reverse sweep from a scalar seed. Gradients for every node reachable
    // from the seed are retained and readable via gradient(); parameter leaf
    // gradients are added into their Parameter accumulators.
    void backward(NodeId seed, const BackwardOptions& opts) {
        if (!is_scalar(value(seed)))
            throw UsageError("backward: seed node must be scalar, got " +
                             value(seed).shape_str());
        grads_.assign(nodes_.size(), Tensor());
        reachable_.assign(nodes_.size(), 0);
        mark_reachable(seed);

        grads_[seed] = Tensor::scalar(1.0);
        for (NodeId id = seed; id >= 0; --id) {
            if (!reachable_[id]) continue;
            if (grads_[id].size() == 0) continue;  // reachable but never seeded
            propagate(id, opts);
        }
    }

    // Gradient of the last backward seed w.r.t. the given node. Zero tensor
    // if the node did not participate.
    const Tensor& gradient(NodeId id) {
        check(id);
        if (grads_.size() != nodes_.size()) grads_.resize(nodes_.size());
        if (grads_[id].size() == 0) grads_[id] = Tensor(nodes_[id].value.shape());
        return grads_[id];
    }

private:
    struct Node {
        OpKind kind;
        std::vector<NodeId> inputs;
        Tensor value;
        Parameter* param = nullptr;
        int stride = 1;
        int padding = 0;
        std::size_t index = 0;        // Pick / LogSumExpTail
        std::vector<double> coeffs;   // DotConst / AffineCombine
    };

    NodeId push(Node&& n) {
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    NodeId check(NodeId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
            throw UsageError("invalid tape node id " + std::to_string(id));
        return id;
    }

    static void require_rank1(const Tensor& t, const char* op) {
        if (t.rank() != 1)
            throw ShapeError(std::string(op) + ": input must be rank 1, got " +
                             t.shape_str());
    }

    void mark_reachable(NodeId seed) {
        std::vector<NodeId> stack{seed};
        while (!stack.empty()) {
            const NodeId id = stack.back();
            stack.pop_back();
            if (reachable_[id]) continue;
            reachable_[id] = 1;
            for (NodeId in : nodes_[id].inputs)
                if (!reachable_[in]) stack.push_back(in);
        }
    }

    Tensor& grad_buffer(NodeId id) {
        if (grads_[id].size() == 0) grads_[id] = Tensor(nodes_[id].value.shape());
        return grads_[id];
    }

    static void conv3d_forward(const Tensor& x, const Tensor& k, const Tensor& b,
                               int stride, int padding, Tensor& out) {
        const std::int64_t X = static_cast<std::int64_t>(x.extent(1));
        const std::int64_t Y = static_cast<std::int64_t>(x.extent(2));
        const std::int64_t Z = static_cast<std::int64_t>(x.extent(3));
        const std::size_t c_out = out.extent(0);
        const std::size_t c_in = x.extent(0);
        const std::size_t ks = k.extent(2);
        for (std::size_t co = 0; co < c_out; ++co)
            for (std::size_t ox = 0; ox < out.extent(1); ++ox)
                for (std::size_t oy = 0; oy < out.extent(2); ++oy)
                    for (std::size_t oz = 0; oz < out.extent(3); ++oz) {
                        double acc = b[co];
                        for (std::size_t ci = 0; ci < c_in; ++ci)
                            for (std::size_t dx = 0; dx < ks; ++dx) {
                                const std::int64_t ix =
                                    static_cast<std::int64_t>(ox) * stride - padding +
                                    static_cast<std::int64_t>(dx);
                                if (ix < 0 || ix >= X) continue;
                                for (std::size_t dy = 0; dy < ks; ++dy) {
                                    const std::int64_t iy =
                                        static_cast<std::int64_t>(oy) * stride -
                                        padding + static_cast<std::int64_t>(dy);
                                    if (iy < 0 || iy >= Y) continue;
                                    for (std::size_t dz = 0; dz < ks; ++dz) {
                                        const std::int64_t iz =
                                            static_cast<std::int64_t>(oz) * stride -
                                            padding + static_cast<std::int64_t>(dz);
                                        if (iz < 0 || iz >= Z) continue;
                                        acc += x.at4(ci, static_cast<std::size_t>(ix),
                                                     static_cast<std::size_t>(iy),
                                                     static_cast<std::size_t>(iz)) *
                                               k.data()[(((co * c_in + ci) * ks + dx) *
                                                             ks + dy) * ks + dz];
                                    }
                                }
                            }
                        out.at4(co, ox, oy, oz) = acc;
                    }
    }

    void propagate(NodeId id, const BackwardOptions& opts) {
        Node& n = nodes_[id];
        const Tensor& g = grads_[id];
        switch (n.kind) {
            case OpKind::Input:
                break;
            case OpKind::ParameterLeaf:
                if (opts.into_parameters && n.param) {
                    for (std::size_t i = 0; i < g.size(); ++i)
                        n.param->grad[i] += g[i];
                }
                break;
            case OpKind::Dense: {
                const Tensor& xv = nodes_[n.inputs[0]].value;
                const Tensor& wv = nodes_[n.inputs[1]].value;
                Tensor& gx = grad_buffer(n.inputs[0]);
                Tensor& gw = grad_buffer(n.inputs[1]);
                Tensor& gb = grad_buffer(n.inputs[2]);
                const std::size_t d_in = wv.extent(0);
                const std::size_t d_out = wv.extent(1);
                const std::size_t rows = xv.rank() == 2 ? xv.extent(0) : 1;
                for (std::size_t i = 0; i < rows; ++i) {
                    const double* xr = xv.data() + i * d_in;
                    const double* gr = g.data() + i * d_out;
                    double* gxr = gx.data() + i * d_in;
                    for (std::size_t j = 0; j < d_out; ++j) {
                        const double gj = gr[j];
                        gb[j] += gj;
                        for (std::size_t k = 0; k < d_in; ++k) {
                            gxr[k] += gj * wv.at2(k, j);
                            gw.at2(k, j) += gj * xr[k];
                        }
                    }
                }
                break;
            }
            case OpKind::Conv3d: {
                const Tensor& xv = nodes_[n.inputs[0]].value;
                const Tensor& kv = nodes_[n.inputs[1]].value;
                Tensor& gx = grad_buffer(n.inputs[0]);
                Tensor& gk = grad_buffer(n.inputs[1]);
                Tensor& gb = grad_buffer(n.inputs[2]);
                const std::int64_t X = static_cast<std::int64_t>(xv.extent(1));
                const std::int64_t Y = static_cast<std::int64_t>(xv.extent(2));
                const std::int64_t Z = static_cast<std::int64_t>(xv.extent(3));
                const std::size_t c_out = n.value.extent(0);
                const std::size_t c_in = xv.extent(0);
                const std::size_t ks = kv.extent(2);
                for (std::size_t co = 0; co < c_out; ++co)
                    for (std::size_t ox = 0; ox < n.value.extent(1); ++ox)
                        for (std::size_t oy = 0; oy < n.value.extent(2); ++oy)
                            for (std::size_t oz = 0; oz < n.value.extent(3); ++oz) {
                                const double go = g.at4(co, ox, oy, oz);
                                if (go == 0.0) continue;
                                gb[co] += go;
                                for (std::size_t ci = 0; ci < c_in; ++ci)
                                    for (std::size_t dx = 0; dx < ks; ++dx) {
                                        const std::int64_t ix =
                                            static_cast<std::int64_t>(ox) * n.stride -
                                            n.padding + static_cast<std::int64_t>(dx);
                                        if (ix < 0 || ix >= X) continue;
                                        for (std::size_t dy = 0; dy < ks; ++dy) {
                                            const std::int64_t iy =
                                                static_cast<std::int64_t>(oy) * n.stride -
                                                n.padding + static_cast<std::int64_t>(dy);
                                            if (iy < 0 || iy >= Y) continue;
                                            for (std::size_t dz = 0; dz < ks; ++dz) {
                                                const std::int64_t iz =
                                                    static_cast<std::int64_t>(oz) * n.stride -
                                                    n.padding + static_cast<std::int64_t>(dz);
                                                if (iz < 0 || iz >= Z) continue;
                                                const std::size_t xi = xv.index4(
                                                    ci, static_cast<std::size_t>(ix),
                                                    static_cast<std::size_t>(iy),
                                                    static_cast<std::size_t>(iz));
                                                const std::size_t ki =
                                                    (((co * c_in + ci) * ks + dx) * ks +
                                                     dy) * ks + dz;
                                                gx[xi] += go * kv[ki];
                                                gk[ki] += go * xv[xi];
                                            }
                                        }
                                    }
                            }
                break;
            }
            case OpKind::Relu: {
                // Subgradient 0 at exactly 0. Guided mode additionally
                // requires a positive incoming gradient.
                const Tensor& xv = nodes_[n.inputs[0]].value;
                Tensor& gx = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (xv[i] <= 0.0) continue;
                    if (opts.guided_relu && g[i] <= 0.0) continue;
                    gx[i] += g[i];
                }
                break;
            }
            case OpKind::GlobalAvgPool: {
                const Tensor& xv = nodes_[n.inputs[0]].value;
                Tensor& gx = grad_buffer(n.inputs[0]);
                const std::size_t c = xv.extent(0);
                const std::size_t vol = xv.extent(1) * xv.extent(2) * xv.extent(3);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double share = g[ch] / static_cast<double>(vol);
                    double* p = gx.data() + ch * vol;
                    for (std::size_t i = 0; i < vol; ++i) p[i] += share;
                }
                break;
            }
            case OpKind::Concat: {
                Tensor& ga = grad_buffer(n.inputs[0]);
                Tensor& gb2 = grad_buffer(n.inputs[1]);
                const std::size_t na = ga.size();
                for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
                for (std::size_t i = 0; i < gb2.size(); ++i) gb2[i] += g[na + i];
                break;
            }
            case OpKind::SuffixSum: {
                // Adjoint of a suffix sum is a prefix sum.
                Tensor& gx = grad_buffer(n.inputs[0]);
                double acc = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    acc += g[i];
                    gx[i] += acc;
                }
                break;
            }
            case OpKind::AppendZero: {
                Tensor& gx = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                break;
            }
            case OpKind::Pick: {
                grad_buffer(n.inputs[0])[n.index] += g[0];
                break;
            }
            case OpKind::LogSumExpTail: {
                const Tensor& xv = nodes_[n.inputs[0]].value;
                Tensor& gx = grad_buffer(n.inputs[0]);
                const double y = n.value[0];
                for (std::size_t i = n.index; i < xv.size(); ++i)
                    gx[i] += g[0] * std::exp(xv[i] - y);
                break;
            }
            case OpKind::SquareNorm: {
                const Tensor& xv = nodes_[n.inputs[0]].value;
                Tensor& gx = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < xv.size(); ++i)
                    gx[i] += 2.0 * g[0] * xv[i];
                break;
            }
            case OpKind::DotConst: {
                Tensor& gx = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < gx.size(); ++i)
                    gx[i] += g[0] * n.coeffs[i];
                break;
            }
            case OpKind::ReduceSum: {
                Tensor& gx = grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
                break;
            }
            case OpKind::AffineCombine: {
                for (std::size_t i = 0; i < n.inputs.size(); ++i)
                    grad_buffer(n.inputs[i])[0] += g[0] * n.coeffs[i];
                break;
            }
        }
    }

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<char> reachable_;
};

// Max relative error between the tape gradient and central finite
// differences of a scalar function of one tensor input. `build` receives a
// fresh tape and the input node and must return a scalar node.
template <class BuildFn>
double grad_check(BuildFn&& build, const Tensor& point, double h = 1e-5) {
    Tape tape;
    const Tape::NodeId x = tape.input(point);
    const Tape::NodeId out = build(tape, x);
    tape.backward(out);
    const Tensor analytic = tape.gradient(x);

    double worst = 0.0;
    Tensor probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        probe[i] = point[i] + h;
        Tape tp;
        const double fp = tp.value(build(tp, tp.input(probe)))[0];
        probe[i] = point[i] - h;
        Tape tm;
        const double fm = tm.value(build(tm, tm.input(probe)))[0];
        probe[i] = point[i];
        const double numeric = (fp - fm) / (2.0 * h);
        const double err = std::abs(analytic[i] - numeric) /
                           std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

// Same check against the gradients already accumulated in a set of
// Parameters: `f` re-evaluates the scalar objective from current parameter
// values. Used to validate full training losses end to end.
inline double grad_check_params(const std::function<double()>& f,
                                std::span<Parameter* const> params,
                                double h = 1e-5) {
    double worst = 0.0;
    for (Parameter* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + h;
            const double fp = f();
            p->value[i] = saved - h;
            const double fm = f();
            p->value[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double err = std::abs(p->grad[i] - numeric) /
                               std::max(1.0, std::abs(p->grad[i]));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace imlsp
