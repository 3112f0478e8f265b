// SPDX-License-Identifier: Apache-2.0

#include "pdwn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "pdwn/ops.hpp"
#include "pdwn/warp.hpp"

namespace pdwn::gradcheck {

namespace {

using Fn = std::function<Tensord(const std::vector<Tensord>&)>;

Tensord uniform(Shape s, double lo, double hi, std::mt19937_64& rng, bool grad = true) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(s.numel()));
    for (double& x : v) x = d(rng);
    return Tensord(s, std::move(v), grad);
}

// Values bounded away from zero, for ops with a kink at the origin.
Tensord away_from_zero(Shape s, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> mag(0.05, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(static_cast<std::size_t>(s.numel()));
    for (double& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
    return Tensord(s, std::move(v), true);
}

// Distinct values with gaps far above the difference step (no pooling ties).
Tensord distinct(Shape s, std::mt19937_64& rng) {
    std::vector<double> v(static_cast<std::size_t>(s.numel()));
    std::iota(v.begin(), v.end(), 0.0);
    std::shuffle(v.begin(), v.end(), rng);
    for (double& x : v) x = 0.01 * x - 0.2;
    return Tensord(s, std::move(v), true);
}

// Displacements whose fractional part stays in [0.15, 0.85], so sampling
// never lands near an integer grid line.
Tensord fractional_offsets(Shape s, int max_int, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> whole(-max_int, max_int - 1);
    std::uniform_real_distribution<double> frac(0.15, 0.85);
    std::vector<double> v(static_cast<std::size_t>(s.numel()));
    for (double& x : v) x = whole(rng) + frac(rng);
    return Tensord(s, std::move(v), true);
}

using CheckFn = std::function<std::vector<Result>(const Options&)>;

const std::vector<std::pair<std::string, CheckFn>>& registry() {
    static const std::vector<std::pair<std::string, CheckFn>> checks = [] {
        std::vector<std::pair<std::string, CheckFn>> r;
        auto rng_for = [](const Options& o, std::uint64_t salt) { return std::mt19937_64(o.seed * 1000003ULL + salt); };

        r.emplace_back("conv2d", [rng_for](const Options& o) {
            auto rng = rng_for(o, 1);
            auto a = check(
                "conv2d", [](const std::vector<Tensord>& in) { return conv2d(in[0], in[1], in[2], 1, 1); },
                {uniform({2, 2, 5, 5}, -1, 1, rng), uniform({3, 2, 3, 3}, -1, 1, rng), uniform({1, 1, 1, 3}, -1, 1, rng)},
                {"input", "weight", "bias"}, o);
            auto b = check(
                "conv2d", [](const std::vector<Tensord>& in) { return conv2d(in[0], in[1], in[2], 2, 0); },
                {uniform({1, 2, 7, 6}, -1, 1, rng), uniform({2, 2, 3, 3}, -1, 1, rng), uniform({1, 1, 1, 2}, -1, 1, rng)},
                {"input(stride2)", "weight(stride2)", "bias(stride2)"}, o);
            a.insert(a.end(), b.begin(), b.end());
            return a;
        });
        r.emplace_back("leaky_relu", [rng_for](const Options& o) {
            auto rng = rng_for(o, 2);
            return check(
                "leaky_relu", [](const std::vector<Tensord>& in) { return leaky_relu(in[0], 0.1); },
                {away_from_zero({1, 3, 4, 4}, rng)}, {"input"}, o);
        });
        r.emplace_back("max_pool2", [rng_for](const Options& o) {
            auto rng = rng_for(o, 3);
            auto a = check(
                "max_pool2", [](const std::vector<Tensord>& in) { return max_pool2(in[0]); },
                {distinct({1, 2, 6, 6}, rng)}, {"input"}, o);
            auto b = check(
                "max_pool2", [](const std::vector<Tensord>& in) { return max_pool2(in[0]); },
                {distinct({1, 2, 5, 7}, rng)}, {"input(odd)"}, o);
            a.insert(a.end(), b.begin(), b.end());
            return a;
        });
        r.emplace_back("bilinear_resize", [rng_for](const Options& o) {
            auto rng = rng_for(o, 4);
            auto a = check(
                "bilinear_resize", [](const std::vector<Tensord>& in) { return bilinear_resize(in[0], 10, 8); },
                {uniform({1, 2, 5, 4}, -1, 1, rng)}, {"input(up)"}, o);
            auto b = check(
                "bilinear_resize", [](const std::vector<Tensord>& in) { return bilinear_resize(in[0], 3, 5); },
                {uniform({1, 2, 7, 9}, -1, 1, rng)}, {"input(down)"}, o);
            a.insert(a.end(), b.begin(), b.end());
            return a;
        });
        r.emplace_back("sigmoid", [rng_for](const Options& o) {
            auto rng = rng_for(o, 5);
            return check(
                "sigmoid", [](const std::vector<Tensord>& in) { return sigmoid(in[0]); },
                {uniform({1, 3, 4, 4}, -4, 4, rng)}, {"input"}, o);
        });
        r.emplace_back("softmax_channels", [rng_for](const Options& o) {
            auto rng = rng_for(o, 6);
            return check(
                "softmax_channels", [](const std::vector<Tensord>& in) { return softmax_channels(in[0]); },
                {uniform({2, 3, 3, 4}, -3, 3, rng)}, {"input"}, o);
        });
        r.emplace_back("add", [rng_for](const Options& o) {
            auto rng = rng_for(o, 7);
            return check(
                "add", [](const std::vector<Tensord>& in) { return add(in[0], in[1]); },
                {uniform({1, 2, 3, 3}, -1, 1, rng), uniform({1, 2, 3, 3}, -1, 1, rng)}, {"a", "b"}, o);
        });
        r.emplace_back("sub", [rng_for](const Options& o) {
            auto rng = rng_for(o, 8);
            return check(
                "sub", [](const std::vector<Tensord>& in) { return sub(in[0], in[1]); },
                {uniform({1, 2, 3, 3}, -1, 1, rng), uniform({1, 2, 3, 3}, -1, 1, rng)}, {"a", "b"}, o);
        });
        r.emplace_back("mul", [rng_for](const Options& o) {
            auto rng = rng_for(o, 9);
            return check(
                "mul", [](const std::vector<Tensord>& in) { return mul(in[0], in[1]); },
                {uniform({1, 2, 3, 3}, -1, 1, rng), uniform({1, 2, 3, 3}, -1, 1, rng)}, {"a", "b"}, o);
        });
        r.emplace_back("scale", [rng_for](const Options& o) {
            auto rng = rng_for(o, 10);
            return check(
                "scale", [](const std::vector<Tensord>& in) { return scale(in[0], -2.5); },
                {uniform({1, 2, 3, 3}, -1, 1, rng)}, {"input"}, o);
        });
        r.emplace_back("concat", [rng_for](const Options& o) {
            auto rng = rng_for(o, 11);
            return check(
                "concat", [](const std::vector<Tensord>& in) { return concat(in); },
                {uniform({2, 1, 3, 3}, -1, 1, rng), uniform({2, 3, 3, 3}, -1, 1, rng)}, {"first", "second"}, o);
        });
        r.emplace_back("slice_channels", [rng_for](const Options& o) {
            auto rng = rng_for(o, 12);
            return check(
                "slice_channels", [](const std::vector<Tensord>& in) { return slice_channels(in[0], 1, 2); },
                {uniform({2, 4, 3, 3}, -1, 1, rng)}, {"input"}, o);
        });
        r.emplace_back("sum", [rng_for](const Options& o) {
            auto rng = rng_for(o, 13);
            return check(
                "sum", [](const std::vector<Tensord>& in) { return sum(in[0]); },
                {uniform({1, 2, 3, 3}, -1, 1, rng)}, {"input"}, o);
        });
        r.emplace_back("alpha_blend", [rng_for](const Options& o) {
            auto rng = rng_for(o, 14);
            return check(
                "alpha_blend", [](const std::vector<Tensord>& in) { return alpha_blend(in[0], in[1], in[2]); },
                {uniform({2, 3, 3, 3}, -1, 1, rng), uniform({2, 3, 3, 3}, -1, 1, rng), uniform({2, 1, 3, 3}, 0, 1, rng)},
                {"a", "b", "alpha"}, o);
        });
        r.emplace_back("l1_loss", [rng_for](const Options& o) {
            auto rng = rng_for(o, 15);
            auto pred = uniform({1, 3, 4, 4}, -1, 1, rng);
            auto gap = away_from_zero({1, 3, 4, 4}, rng);
            auto target = add(pred, gap).detach();
            target.set_requires_grad(true);
            return check(
                "l1_loss", [](const std::vector<Tensord>& in) { return l1_loss(in[0], in[1]); }, {pred, target},
                {"pred", "target"}, o);
        });
        r.emplace_back("deformable_warp", [rng_for](const Options& o) {
            auto rng = rng_for(o, 16);
            auto f = [](const std::vector<Tensord>& in) {
                return deformable_warp(in[0], OffsetField<double>{in[1], in[2]}, GlobalFilter<double>{in[3]});
            };
            auto a = check("deformable_warp", f,
                           {uniform({2, 2, 5, 5}, -1, 1, rng), fractional_offsets({2, 18, 5, 5}, 2, rng),
                            uniform({2, 9, 5, 5}, 0, 1, rng), uniform({3, 2, 3, 3}, -1, 1, rng)},
                           {"feature", "offsets", "modulation", "filter"}, o);
            // Single-tap configuration.
            auto b = check("deformable_warp", f,
                           {uniform({1, 2, 4, 6}, -1, 1, rng), fractional_offsets({1, 2, 4, 6}, 2, rng),
                            uniform({1, 1, 4, 6}, 0, 1, rng), uniform({2, 2, 1, 1}, -1, 1, rng)},
                           {"feature(1x1)", "offsets(1x1)", "modulation(1x1)", "filter(1x1)"}, o);
            a.insert(a.end(), b.begin(), b.end());
            return a;
        });
        r.emplace_back("flow_warp", [rng_for](const Options& o) {
            auto rng = rng_for(o, 17);
            return check(
                "flow_warp", [](const std::vector<Tensord>& in) { return flow_warp(in[0], in[1]); },
                {uniform({2, 3, 5, 6}, -1, 1, rng), fractional_offsets({2, 2, 5, 6}, 2, rng)}, {"feature", "flow"}, o);
        });
        r.emplace_back("cost_volume", [rng_for](const Options& o) {
            auto rng = rng_for(o, 18);
            auto a = check(
                "cost_volume", [](const std::vector<Tensord>& in) { return cost_volume(in[0], in[1], 2); },
                {uniform({2, 3, 5, 5}, -1, 1, rng), uniform({2, 3, 5, 5}, -1, 1, rng)}, {"left", "right"}, o);
            auto b = check(
                "cost_volume",
                [](const std::vector<Tensord>& in) {
                    return cost_volume(in[0], in[1], 1, CostNormalization::feature_dim);
                },
                {uniform({1, 2, 4, 5}, -1, 1, rng), uniform({1, 2, 4, 5}, -1, 1, rng)},
                {"left(feature_dim)", "right(feature_dim)"}, o);
            a.insert(a.end(), b.begin(), b.end());
            return a;
        });
        r.emplace_back("learnt_cost", [rng_for](const Options& o) {
            auto rng = rng_for(o, 19);
            return check(
                "learnt_cost",
                [](const std::vector<Tensord>& in) {
                    LearntCostNet<double> net{in[2], in[3], in[4], in[5], 0.1};
                    return learnt_cost(in[0], in[1], net);
                },
                {uniform({1, 2, 5, 5}, -1, 1, rng), uniform({1, 2, 5, 5}, -1, 1, rng), uniform({3, 4, 3, 3}, -1, 1, rng),
                 uniform({1, 1, 1, 3}, -1, 1, rng), uniform({9, 3, 3, 3}, -1, 1, rng), uniform({1, 1, 1, 9}, -1, 1, rng)},
                {"left", "right", "w1", "b1", "w2", "b2"}, o);
        });
        return r;
    }();
    return checks;
}

}  // namespace

std::vector<Result> check(std::string_view op, const Fn& f, std::vector<Tensord> inputs,
                          const std::vector<std::string>& names, const Options& options) {
    PDWN_CHECK(names.size() == inputs.size(), "gradcheck: " << names.size() << " names for " << inputs.size() << " inputs");
    std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);

    Tensord probe;
    auto objective = [&](const std::vector<Tensord>& in) {
        auto out = f(in);
        if (!probe.defined()) probe = uniform(out.shape(), -1, 1, rng, false);
        return sum(mul(out, probe));
    };

    for (auto& t : inputs) t.zero_grad();
    auto loss = objective(inputs);
    loss.backward();

    std::vector<Result> results;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        Result r;
        r.op = std::string(op);
        r.wrt = names[i];
        std::vector<double> analytic(inputs[i].grad().begin(), inputs[i].grad().end());
        if (analytic.empty()) analytic.assign(static_cast<std::size_t>(inputs[i].numel()), 0.0);

        NoGradGuard no_grad;
        auto values = inputs[i].data();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double saved = values[j];
            values[j] = saved + options.step;
            const double up = objective(inputs).item();
            values[j] = saved - options.step;
            const double down = objective(inputs).item();
            values[j] = saved;
            const double numeric = (up - down) / (2.0 * options.step);
            const double denom = std::max({std::abs(numeric), std::abs(analytic[j]), options.floor});
            r.max_rel_error = std::max(r.max_rel_error, std::abs(numeric - analytic[j]) / denom);
            ++r.checked;
        }
        r.passed = r.max_rel_error < options.tolerance;
        results.push_back(r);
    }
    return results;
}

std::vector<Result> run_op(std::string_view op, const Options& options) {
    for (const auto& [name, fn] : registry())
        if (name == op) return fn(options);
    throw std::invalid_argument("gradcheck: no check registered for op '" + std::string(op) + "'");
}

std::vector<Result> run_all(const Options& options) {
    std::vector<Result> all;
    for (const auto& [name, fn] : registry()) {
        auto r = fn(options);
        all.insert(all.end(), r.begin(), r.end());
    }
    return all;
}

std::vector<std::string> registered_ops() {
    std::vector<std::string> names;
    for (const auto& entry : registry()) names.push_back(entry.first);
    return names;
}

std::vector<std::string> missing_checks() {
    std::vector<std::string> missing;
    const auto names = registered_ops();
    for (auto op : kDifferentiableOps)
        if (std::find(names.begin(), names.end(), op) == names.end()) missing.emplace_back(op);
    return missing;
}

}  // namespace pdwn::gradcheck
