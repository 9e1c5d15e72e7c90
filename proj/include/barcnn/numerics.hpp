#pragma once

// Minimal reverse-mode differentiation over dense row-major float64 arrays.
//
// Every operation records a node holding its value, its inputs and a closure
// that pushes the node's gradient back to those inputs. Calling backward() on
// a scalar result walks the recorded graph in reverse topological order.
// Leaves (parameters, differentiable inputs) accumulate gradients across
// backward passes until cleared.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "barcnn/error.hpp"

namespace barcnn::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
    bool requires_grad = false;

    std::vector<double>& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

/// Differentiable multi-dimensional array. Copies share the underlying node.
class DiffArray {
public:
    DiffArray() = default;

    /// Array that does not participate in differentiation.
    static DiffArray constant(Shape shape, std::vector<double> values) {
        return make(std::move(shape), std::move(values), false);
    }

    /// Leaf whose gradient is accumulated by backward passes.
    static DiffArray variable(Shape shape, std::vector<double> values) {
        return make(std::move(shape), std::move(values), true);
    }

    static DiffArray zeros(Shape shape, bool requires_grad = false) {
        const auto n = element_count(shape);
        return make(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static DiffArray scalar(double v, bool requires_grad = false) {
        return make({}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const double> values() const { return node_->value; }
    /// Direct write access; only meaningful for leaves between graph builds.
    std::span<double> mutable_values() { return node_->value; }
    double item() const {
        if (size() != 1) throw ShapeError("item() on non-scalar array " + to_string(shape()));
        return node_->value[0];
    }

    /// Gradient buffer; empty span until a backward pass reaches this array.
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

    /// Back-propagates d(this)/d(leaf) into every reachable leaf.
    void backward() const;

    detail::Node& node() const { return *node_; }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    /// Builds a non-leaf result node. `backward` receives the result node,
    /// whose `inputs` are in the order given here.
    static DiffArray from_op(Shape shape, std::vector<double> values,
                             std::vector<DiffArray> inputs,
                             std::function<void(detail::Node&)> backward) {
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->value = std::move(values);
        for (auto& in : inputs) node->requires_grad = node->requires_grad || in.requires_grad();
        if (node->requires_grad) {
            node->inputs.reserve(inputs.size());
            for (auto& in : inputs) node->inputs.push_back(in.node_);
            node->backward = std::move(backward);
        }
        return DiffArray(std::move(node));
    }

private:
    explicit DiffArray(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    static DiffArray make(Shape shape, std::vector<double> values, bool requires_grad) {
        if (values.size() != element_count(shape)) {
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape " + to_string(shape));
        }
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->value = std::move(values);
        node->requires_grad = requires_grad;
        return DiffArray(std::move(node));
    }

    std::shared_ptr<detail::Node> node_;
};

inline void DiffArray::backward() const {
    if (size() != 1) throw ShapeError("backward() requires a scalar, got " + to_string(shape()));
    if (!requires_grad()) return;

    // Iterative post-order DFS gives a topological order without recursion.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* n : order) {
        if (n->backward) n->grad.assign(n->value.size(), 0.0);
    }
    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

namespace detail {

inline void require_same_shape(const DiffArray& a, const DiffArray& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
}

inline void accumulate(Node& target, std::span<const double> delta) {
    if (!target.requires_grad) return;
    auto& g = target.ensure_grad();
    for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline DiffArray add(const DiffArray& a, const DiffArray& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return DiffArray::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        detail::accumulate(*self.inputs[0], self.grad);
        detail::accumulate(*self.inputs[1], self.grad);
    });
}

inline DiffArray scale(const DiffArray& a, double factor) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto& v : out) v *= factor;
    return DiffArray::from_op(a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
        auto& in = *self.inputs[0];
        auto& g = in.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
}

/// Adds a per-channel bias along the last axis.
inline DiffArray bias_add(const DiffArray& x, const DiffArray& bias) {
    if (x.rank() == 0 || bias.rank() != 1 || bias.dim(0) != x.shape().back()) {
        throw ShapeError("bias_add: bias " + to_string(bias.shape()) + " does not match " +
                         to_string(x.shape()));
    }
    const std::size_t channels = bias.dim(0);
    std::vector<double> out(x.values().begin(), x.values().end());
    const auto bv = bias.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % channels];
    return DiffArray::from_op(x.shape(), std::move(out), {x, bias}, [channels](detail::Node& self) {
        detail::accumulate(*self.inputs[0], self.grad);
        auto& b = *self.inputs[1];
        if (!b.requires_grad) return;
        auto& g = b.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % channels] += self.grad[i];
    });
}

inline DiffArray relu(const DiffArray& x) {
    std::vector<double> out(x.size());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    return DiffArray::from_op(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        auto& in = *self.inputs[0];
        auto& g = in.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (in.value[i] > 0.0) g[i] += self.grad[i];
        }
    });
}

inline DiffArray sigmoid(const DiffArray& x) {
    std::vector<double> out(x.size());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(xv[i]);
    return DiffArray::from_op(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = self.value[i];
            g[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

/// Elementwise product; `b` may be a constant mask.
inline DiffArray multiply(const DiffArray& a, const DiffArray& b) {
    detail::require_same_shape(a, b, "multiply");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return DiffArray::from_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        auto& a_node = *self.inputs[0];
        auto& b_node = *self.inputs[1];
        if (a_node.requires_grad) {
            auto& g = a_node.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b_node.value[i];
        }
        if (b_node.requires_grad) {
            auto& g = b_node.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a_node.value[i];
        }
    });
}

inline DiffArray sum(const DiffArray& x) {
    double total = 0.0;
    for (double v : x.values()) total += v;
    return DiffArray::from_op({}, {total}, {x}, [](detail::Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

inline DiffArray reshape(const DiffArray& x, Shape shape) {
    if (element_count(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    return DiffArray::from_op(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
        detail::accumulate(*self.inputs[0], self.grad);
    });
}

/// Channels [begin, begin+count) of the last axis.
inline DiffArray slice_last(const DiffArray& x, std::size_t begin, std::size_t count) {
    if (x.rank() == 0 || begin + count > x.shape().back() || count == 0) {
        throw ShapeError("slice_last: range out of bounds for " + to_string(x.shape()));
    }
    const std::size_t channels = x.shape().back();
    const std::size_t rows = x.size() / channels;
    Shape shape = x.shape();
    shape.back() = count;
    std::vector<double> out(rows * count);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(x.values().begin() + r * channels + begin, count, out.begin() + r * count);
    }
    return DiffArray::from_op(std::move(shape), std::move(out), {x},
                              [channels, rows, begin, count](detail::Node& self) {
                                  auto& g = self.inputs[0]->ensure_grad();
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      for (std::size_t c = 0; c < count; ++c) {
                                          g[r * channels + begin + c] += self.grad[r * count + c];
                                      }
                                  }
                              });
}

// ---------------------------------------------------------------------------
// Spatial operations on [H, W, C] arrays
// ---------------------------------------------------------------------------

enum class Padding { same, valid };

/// Cross-correlation of an [H,W,Cin] input with a [k,k,Cin,Cout] kernel.
/// No bias term. "same" pads k/2 on every side, giving ceil(H/stride) rows.
inline DiffArray conv2d(const DiffArray& input, const DiffArray& kernel, std::size_t stride,
                        Padding padding) {
    if (input.rank() != 3 || kernel.rank() != 4) {
        throw ShapeError("conv2d: expected [H,W,C] input and [k,k,Cin,Cout] kernel, got " +
                         to_string(input.shape()) + " and " + to_string(kernel.shape()));
    }
    const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
    const std::size_t k = kernel.dim(0), cout = kernel.dim(3);
    if (kernel.dim(1) != k || k % 2 == 0) throw ShapeError("conv2d: kernel must be square with odd size");
    if (kernel.dim(2) != cin) {
        throw ShapeError("conv2d: channel mismatch, input has " + std::to_string(cin) +
                         " channels but kernel expects " + std::to_string(kernel.dim(2)));
    }
    if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
    const std::ptrdiff_t pad = padding == Padding::same ? static_cast<std::ptrdiff_t>(k / 2) : 0;
    if (padding == Padding::valid && (h < k || w < k)) throw ShapeError("conv2d: input smaller than kernel");
    const std::size_t oh = (h + 2 * pad - k) / stride + 1;
    const std::size_t ow = (w + 2 * pad - k) / stride + 1;

    const double* in = input.values().data();
    const double* ker = kernel.values().data();
    std::vector<double> out(oh * ow * cout, 0.0);

    // Visits every (output pixel, kernel tap) pair that lands inside the input.
    auto for_each_tap = [=](auto&& fn) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ky = 0; ky < k; ++ky) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        fn((oy * ow + ox) * cout, (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin,
                           (ky * k + kx) * cin * cout);
                    }
                }
            }
        }
    };

    for_each_tap([&](std::size_t o, std::size_t i, std::size_t kk) {
        double* dst = out.data() + o;
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const double v = in[i + ci];
            const double* kp = ker + kk + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) dst[co] += v * kp[co];
        }
    });

    return DiffArray::from_op(
        {oh, ow, cout}, std::move(out), {input, kernel}, [for_each_tap, cin, cout](detail::Node& self) {
            auto& in_node = *self.inputs[0];
            auto& ker_node = *self.inputs[1];
            const double* gout = self.grad.data();
            if (in_node.requires_grad) {
                double* gin = in_node.ensure_grad().data();
                const double* kv = ker_node.value.data();
                for_each_tap([&](std::size_t o, std::size_t i, std::size_t kk) {
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const double* kp = kv + kk + ci * cout;
                        double acc = 0.0;
                        for (std::size_t co = 0; co < cout; ++co) acc += gout[o + co] * kp[co];
                        gin[i + ci] += acc;
                    }
                });
            }
            if (ker_node.requires_grad) {
                double* gk = ker_node.ensure_grad().data();
                const double* iv = in_node.value.data();
                for_each_tap([&](std::size_t o, std::size_t i, std::size_t kk) {
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const double v = iv[i + ci];
                        double* dst = gk + kk + ci * cout;
                        for (std::size_t co = 0; co < cout; ++co) dst[co] += v * gout[o + co];
                    }
                });
            }
        });
}

/// 2x2 max pooling with stride 2; H and W must be even. Ties pick the first
/// element in row-major window order.
inline DiffArray max_pool2(const DiffArray& x) {
    if (x.rank() != 3 || x.dim(0) % 2 != 0 || x.dim(1) % 2 != 0) {
        throw ShapeError("max_pool2: expected [H,W,C] with even H and W, got " + to_string(x.shape()));
    }
    const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const std::size_t oh = h / 2, ow = w / 2;
    std::vector<double> out(oh * ow * c);
    std::vector<std::size_t> argmax(out.size());
    const auto xv = x.values();
    for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                std::size_t best = ((2 * oy) * w + 2 * ox) * c + ch;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if (xv[idx] > xv[best]) best = idx;
                    }
                }
                const std::size_t o = (oy * ow + ox) * c + ch;
                out[o] = xv[best];
                argmax[o] = best;
            }
        }
    }
    return DiffArray::from_op({oh, ow, c}, std::move(out), {x},
                              [argmax = std::move(argmax)](detail::Node& self) {
                                  auto& g = self.inputs[0]->ensure_grad();
                                  for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
                              });
}

/// Nearest-neighbour resize of a constant [H0,W0,C] raster. Output pixel
/// (i,j) copies source pixel (floor(i*H0/H), floor(j*W0/W)).
inline DiffArray resize_nearest(const DiffArray& input, std::size_t target_h, std::size_t target_w) {
    if (input.rank() != 3) throw ShapeError("resize_nearest: expected [H,W,C], got " + to_string(input.shape()));
    if (target_h == 0 || target_w == 0) throw ShapeError("resize_nearest: target size must be positive");
    const std::size_t h0 = input.dim(0), w0 = input.dim(1), c = input.dim(2);
    std::vector<double> out(target_h * target_w * c);
    const auto src = input.values();
    for (std::size_t i = 0; i < target_h; ++i) {
        const std::size_t si = i * h0 / target_h;
        for (std::size_t j = 0; j < target_w; ++j) {
            const std::size_t sj = j * w0 / target_w;
            std::copy_n(src.begin() + (si * w0 + sj) * c, c, out.begin() + (i * target_w + j) * c);
        }
    }
    return DiffArray::constant({target_h, target_w, c}, std::move(out));
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct SigmoidLossOptions {
    /// Replace plain BCE with the focal variant.
    bool focal = false;
    double gamma = 2.0;
    double alpha = 0.25;
};

/// Weighted mean of per-element sigmoid cross-entropy:
/// sum(w * bce(sigmoid(logit), target)) / sum(w). Without weights every
/// element counts once. Returns 0 when the total weight is zero.
inline DiffArray sigmoid_multilabel_loss(const DiffArray& logits, std::span<const double> targets,
                                         std::span<const double> weights = {},
                                         SigmoidLossOptions options = {}) {
    if (targets.size() != logits.size() || (!weights.empty() && weights.size() != logits.size())) {
        throw ShapeError("sigmoid_multilabel_loss: targets/weights do not match logits " +
                         to_string(logits.shape()));
    }
    const auto x = logits.values();
    const std::size_t n = x.size();
    double total_weight = 0.0;
    for (std::size_t i = 0; i < n; ++i) total_weight += weights.empty() ? 1.0 : weights[i];

    std::vector<double> dloss(n, 0.0);
    double loss = 0.0;
    if (total_weight > 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
            const double wi = weights.empty() ? 1.0 : weights[i];
            if (wi == 0.0) continue;
            const double t = targets[i];
            if (!options.focal) {
                // max(x,0) - x*t + log(1 + exp(-|x|))
                loss += wi * (std::max(x[i], 0.0) - x[i] * t + std::log1p(std::exp(-std::abs(x[i]))));
                dloss[i] = wi * (sigmoid(x[i]) - t) / total_weight;
            } else {
                const double sign = t > 0.5 ? 1.0 : -1.0;
                const double z = sign * x[i];
                const double q = sigmoid(z);
                const double log_q = -(std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z))));
                const double a = t > 0.5 ? options.alpha : 1.0 - options.alpha;
                const double mod = std::pow(1.0 - q, options.gamma);
                loss += wi * (-a * mod * log_q);
                const double dz = a * mod * (options.gamma * q * log_q - (1.0 - q));
                dloss[i] = wi * sign * dz / total_weight;
            }
        }
        loss /= total_weight;
    }
    return DiffArray::from_op({}, {loss}, {logits}, [dloss = std::move(dloss)](detail::Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * dloss[i];
    });
}

/// Weighted mean of smooth-L1 (Huber) distance with transition point `beta`.
inline DiffArray smooth_l1_loss(const DiffArray& pred, std::span<const double> targets,
                                std::span<const double> weights, double beta) {
    if (targets.size() != pred.size() || weights.size() != pred.size()) {
        throw ShapeError("smooth_l1_loss: targets/weights do not match " + to_string(pred.shape()));
    }
    const auto p = pred.values();
    double total_weight = 0.0;
    for (double w : weights) total_weight += w;
    std::vector<double> dloss(p.size(), 0.0);
    double loss = 0.0;
    if (total_weight > 0.0) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (weights[i] == 0.0) continue;
            const double d = p[i] - targets[i];
            const double ad = std::abs(d);
            if (ad < beta) {
                loss += weights[i] * 0.5 * d * d / beta;
                dloss[i] = weights[i] * d / beta / total_weight;
            } else {
                loss += weights[i] * (ad - 0.5 * beta);
                dloss[i] = weights[i] * (d > 0 ? 1.0 : -1.0) / total_weight;
            }
        }
        loss /= total_weight;
    }
    return DiffArray::from_op({}, {loss}, {pred}, [dloss = std::move(dloss)](detail::Node& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * dloss[i];
    });
}

// ---------------------------------------------------------------------------
// Parameters and optimization
// ---------------------------------------------------------------------------

/// Named trainable array plus its momentum buffer.
struct Parameter {
    std::string name;
    DiffArray array;
    std::vector<double> momentum_buffer;

    Parameter(std::string n, Shape shape, std::vector<double> values)
        : name(std::move(n)), array(DiffArray::variable(std::move(shape), std::move(values))),
          momentum_buffer(array.size(), 0.0) {}

    // Copies are deep: the new parameter owns its own values and gradient.
    Parameter(const Parameter& other)
        : name(other.name),
          array(DiffArray::variable(other.array.shape(),
                                    {other.array.values().begin(), other.array.values().end()})),
          momentum_buffer(other.momentum_buffer) {}
    Parameter& operator=(const Parameter& other) {
        if (this != &other) *this = Parameter(other);
        return *this;
    }
    Parameter(Parameter&&) noexcept = default;
    Parameter& operator=(Parameter&&) noexcept = default;

    void zero_grad() { array.zero_grad(); }
};

/// buffer <- momentum * buffer + grad; value <- value - lr * buffer; grad <- 0.
inline void sgd_momentum_step(std::span<Parameter> params, double learning_rate, double momentum) {
    for (auto& p : params) {
        auto values = p.array.mutable_values();
        const auto grad = p.array.grad();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grad.empty() ? 0.0 : grad[i];
            p.momentum_buffer[i] = momentum * p.momentum_buffer[i] + g;
            values[i] -= learning_rate * p.momentum_buffer[i];
        }
        p.zero_grad();
    }
}

/// Worst elementwise relative error between reverse-mode gradients of `f` and
/// central finite differences, with denominator max(|a|, |b|, 1e-8).
/// `f` must rebuild its graph from the given inputs on every call.
inline double grad_check(const std::function<DiffArray()>& f, std::span<DiffArray> inputs, double step) {
    for (auto& in : inputs) in.zero_grad();
    f().backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) {
        const auto g = in.grad();
        analytic.emplace_back(g.begin(), g.end());
        analytic.back().resize(in.size(), 0.0);
    }

    double worst = 0.0;
    for (std::size_t a = 0; a < inputs.size(); ++a) {
        auto values = inputs[a].mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            values[i] = original + step;
            const double plus = f().item();
            values[i] = original - step;
            const double minus = f().item();
            values[i] = original;
            const double numeric = (plus - minus) / (2.0 * step);
            const double exact = analytic[a][i];
            const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(exact - numeric) / denom);
        }
    }
    for (auto& in : inputs) in.zero_grad();
    return worst;
}

}  // namespace barcnn::nn
