#pragma once

// Finite-difference checks for every differentiable operation and for the
// full detector loss. Linear operations are probed with a unit step, where
// central differences are exact up to rounding; the rest use a small step on
// inputs kept away from kinks.
//
// The relative error floors its denominator at 1e-8, so a gradient that is
// exactly zero still fails once rounding in the loss exceeds about 1e-12 per
// unit step. Fixtures avoid such exact cancellations (e.g. the model check
// uses a single positive anchor, whose regression terms cannot cancel).

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "barcnn/attention.hpp"
#include "barcnn/model.hpp"
#include "barcnn/numerics.hpp"
#include "barcnn/training.hpp"

namespace barcnn {

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kLinearGradTolerance = 1e-9;

struct GradCheckResult {
    std::string op;
    bool linear = false;
    double error = 0.0;

    double tolerance() const { return linear ? kLinearGradTolerance : kGradTolerance; }
    bool passed() const { return error < tolerance(); }
};

namespace detail {

class GradFixture {
public:
    explicit GradFixture(std::uint64_t seed) : rng_(seed) {}

    std::vector<double> normal(std::size_t n, double scale = 1.0) {
        std::normal_distribution<double> d(0.0, scale);
        std::vector<double> v(n);
        for (auto& x : v) x = d(rng_);
        return v;
    }

    /// Values with magnitude in [0.1, 1.1] and random sign, clear of relu kinks.
    std::vector<double> away_from_zero(std::size_t n) {
        std::uniform_real_distribution<double> mag(0.1, 1.1);
        std::bernoulli_distribution sign(0.5);
        std::vector<double> v(n);
        for (auto& x : v) x = sign(rng_) ? mag(rng_) : -mag(rng_);
        return v;
    }

    /// Distinct values spaced 0.05 apart in random order, so pooling windows
    /// never tie.
    std::vector<double> distinct(std::size_t n) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = -1.0 + 0.05 * static_cast<double>(i);
        std::shuffle(v.begin(), v.end(), rng_);
        return v;
    }

    std::vector<double> uniform(std::size_t n, double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        std::vector<double> v(n);
        for (auto& x : v) x = d(rng_);
        return v;
    }

    std::mt19937_64& rng() { return rng_; }

private:
    std::mt19937_64 rng_;
};

/// sum(x * r) for a fixed random r, turning any array into a scalar.
inline nn::DiffArray project(const nn::DiffArray& x, const std::vector<double>& r) {
    return nn::sum(nn::multiply(x, nn::DiffArray::constant(x.shape(), r)));
}

/// Distance of the backbone from its non-differentiable points: the smallest
/// |relu input| and the smallest gap between the two largest positive values
/// of any pooling window.
inline double kink_margin(const ConditionedDetector& model, const Image& image, const AttentionMap& attention) {
    const auto params = model.parameters();
    const auto& config = model.config();
    double margin = std::numeric_limits<double>::infinity();
    nn::DiffArray x = image.as_array();
    for (std::size_t b = 0; b < config.block_channels.size(); ++b) {
        auto u = nn::conv2d(x, params[3 * b].array, 1, nn::Padding::same);
        const auto resized = nn::resize_nearest(attention.as_array(), u.dim(0), u.dim(1));
        u = nn::bias_add(nn::add(u, nn::conv2d(resized, params[3 * b + 2].array, 1, nn::Padding::same)),
                         params[3 * b + 1].array);
        for (double v : u.values()) margin = std::min(margin, std::abs(v));
        const auto r = nn::relu(u);
        const std::size_t h = r.dim(0), w = r.dim(1), c = r.dim(2);
        const auto rv = r.values();
        for (std::size_t i = 0; i + 1 < h; i += 2) {
            for (std::size_t j = 0; j + 1 < w; j += 2) {
                for (std::size_t k = 0; k < c; ++k) {
                    std::array<double, 4> win{rv[(i * w + j) * c + k], rv[(i * w + j + 1) * c + k],
                                              rv[((i + 1) * w + j) * c + k], rv[((i + 1) * w + j + 1) * c + k]};
                    std::sort(win.begin(), win.end(), std::greater<>());
                    if (win[0] > 0.0) margin = std::min(margin, win[0] - win[1]);
                }
            }
        }
        x = nn::max_pool2(r);
    }
    return margin;
}

}  // namespace detail

/// Smallest accepted kink margin for the model fixture.
inline constexpr double kKinkMargin = 1e-2;

/// Runs one round of the suite; `seed` picks shapes-independent random data.
inline std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed) {
    using nn::DiffArray;
    detail::GradFixture fx(seed);
    std::vector<GradCheckResult> out;
    constexpr double kSmall = 1e-5;
    constexpr double kModelStep = 1e-4;
    constexpr double kUnit = 1.0;

    auto check_step = [&](const std::string& name, bool linear, std::vector<DiffArray> inputs, double step, auto&& f) {
        out.push_back({name, linear, nn::grad_check(f, inputs, step)});
    };
    auto check = [&](const std::string& name, bool linear, std::vector<DiffArray> inputs, auto&& f) {
        check_step(name, linear, std::move(inputs), linear ? kUnit : kSmall, f);
    };

    {
        auto x = DiffArray::variable({5, 6, 2}, fx.normal(60));
        auto k = DiffArray::variable({3, 3, 2, 3}, fx.normal(54));
        const auto r_same = fx.normal(5 * 6 * 3), r_valid = fx.normal(3 * 4 * 3), r_stride = fx.normal(3 * 3 * 3);
        check("conv2d_same", true, {x, k}, [&] { return detail::project(nn::conv2d(x, k, 1, nn::Padding::same), r_same); });
        check("conv2d_valid", true, {x, k},
              [&] { return detail::project(nn::conv2d(x, k, 1, nn::Padding::valid), r_valid); });
        check("conv2d_stride2", true, {x, k},
              [&] { return detail::project(nn::conv2d(x, k, 2, nn::Padding::same), r_stride); });
    }
    {
        auto x = DiffArray::variable({3, 4, 2}, fx.normal(24));
        auto b = DiffArray::variable({2}, fx.normal(2));
        const auto r = fx.normal(24);
        check("bias_add", true, {x, b}, [&] { return detail::project(nn::bias_add(x, b), r); });
    }
    {
        auto a = DiffArray::variable({4, 3}, fx.normal(12));
        auto b = DiffArray::variable({4, 3}, fx.normal(12));
        const auto r = fx.normal(12);
        check("add", true, {a, b}, [&] { return detail::project(nn::add(a, b), r); });
        check("multiply", true, {a, b}, [&] { return nn::sum(nn::multiply(a, b)); });
        check("scale", true, {a}, [&] { return detail::project(nn::scale(a, -1.7), r); });
        check("sum", true, {a}, [&] { return nn::sum(a); });
        check("reshape", true, {a}, [&] { return detail::project(nn::reshape(a, {2, 6}), r); });
    }
    {
        auto x = DiffArray::variable({2, 3, 5}, fx.normal(30));
        const auto r = fx.normal(12);
        check("slice_last", true, {x}, [&] { return detail::project(nn::slice_last(x, 1, 2), r); });
    }
    {
        auto x = DiffArray::variable({4, 5}, fx.away_from_zero(20));
        const auto r = fx.normal(20);
        check("relu", false, {x}, [&] { return detail::project(nn::relu(x), r); });
        check("sigmoid", false, {x}, [&] { return detail::project(nn::sigmoid(x), r); });
    }
    {
        auto x = DiffArray::variable({4, 6, 2}, fx.distinct(48));
        const auto r = fx.normal(12);
        check("max_pool2", false, {x}, [&] { return detail::project(nn::max_pool2(x), r); });
    }
    {
        auto logits = DiffArray::variable({3, 4}, fx.normal(12));
        std::vector<double> targets(12), weights = fx.uniform(12, 0.0, 1.0);
        std::bernoulli_distribution coin(0.5);
        for (auto& t : targets) t = coin(fx.rng()) ? 1.0 : 0.0;
        weights[3] = 0.0;
        check("sigmoid_loss", false, {logits},
              [&] { return nn::sigmoid_multilabel_loss(logits, targets, weights); });
        check("sigmoid_focal_loss", false, {logits},
              [&] { return nn::sigmoid_multilabel_loss(logits, targets, weights, {true, 2.0, 0.25}); });
    }
    {
        // Residuals kept clear of the +-beta transition points.
        constexpr double beta = 0.11;
        auto pred = DiffArray::variable({8}, fx.normal(8));
        auto gaps = fx.away_from_zero(8);
        std::vector<double> targets(8);
        const auto p = pred.values();
        for (std::size_t i = 0; i < 8; ++i) {
            const double d = i % 2 == 0 ? 0.08 * gaps[i] : 2.0 * gaps[i];
            targets[i] = p[i] - d;
        }
        const auto weights = fx.uniform(8, 0.5, 1.5);
        check("smooth_l1_loss", false, {pred}, [&] { return nn::smooth_l1_loss(pred, targets, weights, beta); });
    }
    {
        auto u = DiffArray::variable({4, 4, 3}, fx.normal(48));
        ConditioningSite site("site", 3);
        std::copy_n(fx.normal(81).begin(), 81, site.kernel.array.mutable_values().begin());
        const auto box = Box(0.1, 0.2, 0.6, 0.9);
        const auto m = encode(box, 8, 8);
        const auto r = fx.normal(48);
        check("condition", true, {u, site.kernel.array}, [&] { return detail::project(condition(u, m, site), r); });
    }
    {
        ModelConfig config;
        config.input_height = config.input_width = 8;
        config.block_channels = {2, 3};
        config.grid_height = config.grid_width = 2;
        config.num_object_classes = 2;
        config.num_predicates = 2;
        TrainingSample sample;
        sample.subject_mode = false;
        sample.subject_index = 0;
        sample.subject_box = Box(0.0, 0.0, 0.5, 0.5);
        sample.targets.push_back({Box(0.5, 0.5, 0.9, 1.0), 1, {0}});
        const auto attention = sample.attention(8, 8);

        // Redraw until no relu input, pooling winner or regression residual sits
        // within reach of the step.
        std::optional<ConditionedDetector> model;
        Image image(8, 8);
        std::uint64_t target_seed = 0;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            model.emplace(config, fx.rng()());
            // Non-zero attention kernels and a lifted head so every parameter carries gradient.
            for (std::size_t b = 0; b < config.block_channels.size(); ++b) {
                auto v = model->attention_kernel(b).array.mutable_values();
                const auto n = fx.normal(v.size(), 0.3);
                std::copy(n.begin(), n.end(), v.begin());
            }
            // The head bias is redrawn too: at its prior value the negative
            // logits saturate and their gradients sink below the rounding floor.
            for (std::size_t i = model->parameters().size() - 2; i < model->parameters().size(); ++i) {
                auto& head = model->parameters()[i];
                const auto hn = fx.normal(head.array.size(), 0.3);
                std::copy(hn.begin(), hn.end(), head.array.mutable_values().begin());
            }
            const auto pixels = fx.uniform(8 * 8 * 3, 0.0, 1.0);
            std::copy(pixels.begin(), pixels.end(), image.pixels.begin());
            target_seed = fx.rng()();
            double margin = detail::kink_margin(*model, image, attention);
            // Smooth-L1 switches from quadratic to linear at |residual| = beta,
            // and a residual near zero leaves gradients below the rounding floor.
            std::mt19937_64 rng(target_seed);
            const auto targets = build_targets(config, sample, rng);
            const auto deltas = model->forward(image, attention).box_deltas.values();
            for (std::size_t i = 0; i < deltas.size(); ++i) {
                if (targets.box_weights[i] == 0.0) continue;
                const double residual = std::abs(deltas[i] - targets.box_targets[i]);
                margin = std::min({margin, residual, std::abs(residual - LossOptions{}.box_beta)});
            }
            if (margin > kKinkMargin) break;
        }

        std::vector<DiffArray> inputs;
        for (auto& p : model->parameters()) inputs.push_back(p.array);
        check_step("model_loss", false, inputs, kModelStep, [&] {
            std::mt19937_64 rng(target_seed);
            return sample_loss(*model, image, sample, rng);
        });
    }
    return out;
}

}  // namespace barcnn
