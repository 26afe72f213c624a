#pragma once

// Adversarial example generation against any model exposing
// `Tensor<T> forward(const Tensor<T>&, ParamUse) const`. Attacks only read
// the model; gradients are taken with respect to the input alone.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vfd/losses.hpp"
#include "vfd/models.hpp"

namespace vfd {

enum class AttackKind { fgsm, pgd, cw_l2, trades_inner };
enum class Norm { linf, l2 };

inline std::string to_string(AttackKind k)
{
    switch (k) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::pgd: return "pgd";
    case AttackKind::cw_l2: return "cw_l2";
    case AttackKind::trades_inner: return "trades_inner";
    }
    return "?";
}

inline AttackKind parse_attack_kind(const std::string& s)
{
    if (s == "fgsm")
        return AttackKind::fgsm;
    if (s == "pgd")
        return AttackKind::pgd;
    if (s == "cw" || s == "cw_l2")
        return AttackKind::cw_l2;
    if (s == "trades" || s == "trades_inner")
        return AttackKind::trades_inner;
    throw ConfigError("unknown attack '" + s + "'");
}

inline std::string to_string(Norm n) { return n == Norm::linf ? "linf" : "l2"; }

inline Norm parse_norm(const std::string& s)
{
    if (s == "linf" || s == "inf")
        return Norm::linf;
    if (s == "l2")
        return Norm::l2;
    throw ConfigError("unknown norm '" + s + "'");
}

struct AttackSpec {
    AttackKind kind = AttackKind::pgd;
    Norm norm = Norm::linf;
    double epsilon = 8.0 / 255.0;  // cw_l2: 0 means unbounded
    int steps = 20;
    double step_size = 2.0 / 255.0;
    bool random_start = true;
    double kappa = 0.0;  // cw_l2
    double lr = 0.01;    // cw_l2 (Adam)
    double c = 1.0;      // cw_l2 margin weight, fixed (no binary search)
    double clamp_lo = 0.0;
    double clamp_hi = 1.0;

    static AttackSpec fgsm(double eps = 8.0 / 255.0)
    {
        AttackSpec s;
        s.kind = AttackKind::fgsm;
        s.epsilon = eps;
        s.steps = 1;
        s.step_size = eps;
        s.random_start = false;
        return s;
    }

    /// Step size defaults to eps / 4.
    static AttackSpec pgd(double eps = 8.0 / 255.0, int steps = 20, double step = -1, bool random_start = true)
    {
        AttackSpec s;
        s.kind = AttackKind::pgd;
        s.epsilon = eps;
        s.steps = steps;
        s.step_size = step > 0 ? step : eps / 4.0;
        s.random_start = random_start;
        return s;
    }

    static AttackSpec cw(double kappa = 0.0, int steps = 1000, double lr = 0.01)
    {
        AttackSpec s;
        s.kind = AttackKind::cw_l2;
        s.norm = Norm::l2;
        s.epsilon = 0.0;
        s.steps = steps;
        s.step_size = lr;
        s.random_start = false;
        s.kappa = kappa;
        s.lr = lr;
        return s;
    }

    static AttackSpec trades(double eps = 8.0 / 255.0, int steps = 10, double step = -1, bool random_start = true)
    {
        AttackSpec s = pgd(eps, steps, step, random_start);
        s.kind = AttackKind::trades_inner;
        return s;
    }
};

inline void validate(const AttackSpec& s)
{
    if (!(s.epsilon >= 0.0))
        throw ConfigError("attack: epsilon must be >= 0");
    if (!(s.clamp_hi > s.clamp_lo))
        throw ConfigError("attack: clamp range is empty");
    if (s.norm == Norm::linf && s.epsilon > s.clamp_hi - s.clamp_lo)
        throw ConfigError("attack: epsilon exceeds the clamp width");
    if (s.steps < 1)
        throw ConfigError("attack: steps must be >= 1");
    if (s.kind == AttackKind::cw_l2) {
        if (!(s.lr > 0.0))
            throw ConfigError("attack: cw lr must be > 0");
        if (s.kappa < 0.0)
            throw ConfigError("attack: kappa must be >= 0");
        if (s.norm != Norm::l2)
            throw ConfigError("attack: cw_l2 is an l2 attack");
        return;
    }
    if (!(s.step_size > 0.0) && s.epsilon > 0.0)
        throw ConfigError("attack: step size must be > 0");
    if (s.kind == AttackKind::fgsm && (s.steps != 1 || s.step_size != s.epsilon))
        throw ConfigError("attack: fgsm requires steps == 1 and step size == epsilon");
}

namespace detail {

/// Projects `v` onto the norm ball around `x` and then onto the clamp box,
/// example by example (`d` values per example).
template <class T>
void project(std::span<T> v, std::span<const T> x, std::size_t d, const AttackSpec& s)
{
    const T eps = static_cast<T>(s.epsilon);
    const T lo = static_cast<T>(s.clamp_lo), hi = static_cast<T>(s.clamp_hi);
    if (s.norm == Norm::linf) {
        for (std::size_t i = 0; i < v.size(); ++i)
            v[i] = std::clamp(std::min(std::max(v[i], x[i] - eps), x[i] + eps), lo, hi);
        return;
    }
    for (std::size_t b = 0; b * d < v.size(); ++b) {
        T n2{0};
        for (std::size_t i = b * d; i < (b + 1) * d; ++i)
            n2 += (v[i] - x[i]) * (v[i] - x[i]);
        const T n = std::sqrt(n2);
        const T f = (s.epsilon > 0 && n > eps) ? eps / n : T{1};
        for (std::size_t i = b * d; i < (b + 1) * d; ++i)
            v[i] = std::clamp(f == T{1} ? v[i] : x[i] + (v[i] - x[i]) * f, lo, hi);
    }
}

template <class T, class Rng>
void random_start(std::span<T> v, std::span<const T> x, std::size_t d, const AttackSpec& s, Rng& rng)
{
    if (s.norm == Norm::linf) {
        std::uniform_real_distribution<double> u(-s.epsilon, s.epsilon);
        for (std::size_t i = 0; i < v.size(); ++i)
            v[i] = x[i] + static_cast<T>(u(rng));
    } else {
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (std::size_t b = 0; b * d < v.size(); ++b) {
            std::vector<double> dir(d);
            double n2 = 0;
            for (auto& g : dir) {
                g = normal(rng);
                n2 += g * g;
            }
            const double r = s.epsilon * std::pow(u(rng), 1.0 / static_cast<double>(d)) / std::sqrt(n2);
            for (std::size_t i = 0; i < d; ++i)
                v[b * d + i] = x[b * d + i] + static_cast<T>(r * dir[i]);
        }
    }
    project(v, x, d, s);
}

/// Shared ascent loop: `objective(x_adv)` returns a scalar to maximize.
template <class T, class Objective, class Rng>
Tensor<T> ascend(const Tensor<T>& x, const AttackSpec& s, Objective&& objective, Rng* rng)
{
    const std::size_t d = x.dim(0) ? x.numel() / x.dim(0) : 0;
    Tensor<T> cur = x.detach();
    if (s.epsilon == 0.0)
        return cur;
    if (s.random_start && rng)
        random_start(cur.mutable_data(), x.data(), d, s, *rng);
    const T alpha = static_cast<T>(s.step_size);
    for (int t = 0; t < s.steps; ++t) {
        Tensor<T> probe = cur.detach();
        probe.set_requires_grad(true);
        Tensor<T> loss = objective(probe);
        if (loss.requires_grad())
            backward(loss);
        const std::vector<T> g = probe.grad();
        auto v = cur.mutable_data();
        if (s.norm == Norm::linf) {
            for (std::size_t i = 0; i < v.size(); ++i) {
                const T sg = g[i] > T{0} ? T{1} : (g[i] < T{0} ? T{-1} : T{0});
                v[i] = v[i] + alpha * sg;
            }
        } else {
            for (std::size_t b = 0; b * d < v.size(); ++b) {
                T n2{0};
                for (std::size_t i = b * d; i < (b + 1) * d; ++i)
                    n2 += g[i] * g[i];
                if (n2 == T{0})
                    continue;
                const T f = alpha / std::sqrt(n2);
                for (std::size_t i = b * d; i < (b + 1) * d; ++i)
                    v[i] += f * g[i];
            }
        }
        project(v, x.data(), d, s);
    }
    return cur;
}

template <class T>
Tensor<T> summed_ce(const Tensor<T>& logits, std::span<const std::size_t> y)
{
    return scale(sum(pick(log_softmax(logits), y)), T{-1});
}

}  // namespace detail

/// Iterated sign-gradient (l_inf) or normalized-gradient (l2) ascent on the
/// summed cross-entropy, projected onto the epsilon ball and clamp box.
template <class Model, class T, class Rng>
Tensor<T> pgd(const Model& model, const Tensor<T>& x, std::span<const std::size_t> y, const AttackSpec& spec, Rng& rng)
{
    validate(spec);
    return detail::ascend<T>(
        x, spec, [&](const Tensor<T>& xa) { return detail::summed_ce(model.forward(xa, ParamUse::constant), y); },
        &rng);
}

/// One full-size step from the clean point: clamp(x + eps * sign(grad)).
template <class Model, class T>
Tensor<T> fgsm(const Model& model, const Tensor<T>& x, std::span<const std::size_t> y, const AttackSpec& spec)
{
    AttackSpec s = spec;
    s.steps = 1;
    s.step_size = spec.epsilon;
    s.random_start = false;
    if (spec.epsilon < 0.0)
        throw ConfigError("attack: epsilon must be >= 0");
    if (spec.epsilon == 0.0)
        return x.detach();
    validate(s);
    std::mt19937_64* none = nullptr;
    return detail::ascend<T>(
        x, s, [&](const Tensor<T>& xa) { return detail::summed_ce(model.forward(xa, ParamUse::constant), y); }, none);
}

/// TRADES inner maximization: ascent on KL(softmax(F(x)) || softmax(F(x_adv))).
template <class Model, class T, class Rng>
Tensor<T> trades_inner(const Model& model, const Tensor<T>& x, const AttackSpec& spec, Rng& rng)
{
    validate(spec);
    const Tensor<T> clean_logits = model.forward(x, ParamUse::constant).detach();
    const T n = static_cast<T>(x.dim(0));
    return detail::ascend<T>(
        x, spec,
        [&](const Tensor<T>& xa) { return scale(kl_to_target(clean_logits, model.forward(xa, ParamUse::constant)), n); },
        &rng);
}

/// Carlini-Wagner l2 with fixed constant c and Adam on the tanh-space
/// variable. Minimizes ||delta||^2 + c * max(Z_y - max_{j != y} Z_j, -kappa).
/// Returns, per example, the smallest-norm successful iterate seen (the clean
/// input itself counts), else the final iterate. With epsilon > 0 only
/// iterates inside the ball count as successful and the fallback is projected.
template <class Model, class T>
Tensor<T> cw_l2(const Model& model, const Tensor<T>& x, std::span<const std::size_t> y, const AttackSpec& spec)
{
    validate(spec);
    const std::size_t N = x.dim(0), d = N ? x.numel() / N : 0;
    const T lo = static_cast<T>(spec.clamp_lo), hi = static_cast<T>(spec.clamp_hi);
    const T half = (hi - lo) / T{2};
    const T kappa = static_cast<T>(spec.kappa), c = static_cast<T>(spec.c);
    const double eps2 = spec.epsilon * spec.epsilon;

    std::vector<T> best(x.data().begin(), x.data().end());
    std::vector<double> best_dist(N, std::numeric_limits<double>::infinity());
    auto consider = [&](std::span<const T> cand, std::span<const T> margin) {
        for (std::size_t b = 0; b < N; ++b) {
            const T m = margin[b];
            if (!(m < T{0} && m <= -kappa))
                continue;
            double dist = 0;
            for (std::size_t i = b * d; i < (b + 1) * d; ++i)
                dist += static_cast<double>(cand[i] - x.data()[i]) * static_cast<double>(cand[i] - x.data()[i]);
            if (spec.epsilon > 0 && dist > eps2)
                continue;
            if (dist < best_dist[b]) {
                best_dist[b] = dist;
                std::copy(cand.begin() + static_cast<std::ptrdiff_t>(b * d),
                          cand.begin() + static_cast<std::ptrdiff_t>((b + 1) * d),
                          best.begin() + static_cast<std::ptrdiff_t>(b * d));
            }
        }
    };
    consider(x.data(), class_margin(model.forward(x, ParamUse::constant), y).data());

    std::vector<T> w0(x.numel());
    constexpr double limit = 1.0 - 1e-6;
    for (std::size_t i = 0; i < w0.size(); ++i) {
        const double t = std::clamp(static_cast<double>((x.data()[i] - lo) / half) - 1.0, -limit, limit);
        w0[i] = static_cast<T>(std::atanh(t));
    }
    Tensor<T> w(x.shape(), std::move(w0));
    std::vector<T> m1(x.numel(), T{0}), m2(x.numel(), T{0});
    const T b1 = T(0.9), b2 = T(0.999), lr = static_cast<T>(spec.lr), tiny = T(1e-8);
    const Tensor<T> x_const = x.detach();

    auto image = [&](const Tensor<T>& wt) { return add_scalar(scale(add_scalar(tanh(wt), T{1}), half), lo); };
    Tensor<T> final_iterate;
    for (int t = 0; t <= spec.steps; ++t) {
        Tensor<T> wt = w.detach();
        wt.set_requires_grad(t < spec.steps);
        const Tensor<T> xa = image(wt);
        const Tensor<T> margin = class_margin(model.forward(xa, ParamUse::constant), y);
        consider(xa.data(), margin.data());
        if (t == spec.steps) {
            final_iterate = xa.detach();
            break;
        }
        const Tensor<T> delta = flatten(sub(xa, x_const));
        const Tensor<T> dist = row_sum(mul(delta, delta));
        const Tensor<T> hinge = add_scalar(relu(add_scalar(margin, kappa)), -kappa);
        backward(sum(add(dist, scale(hinge, c))));
        const auto g = wt.grad();
        auto wv = w.mutable_data();
        const T c1 = T{1} - static_cast<T>(std::pow(0.9, t + 1)), c2 = T{1} - static_cast<T>(std::pow(0.999, t + 1));
        for (std::size_t i = 0; i < wv.size(); ++i) {
            m1[i] = b1 * m1[i] + (T{1} - b1) * g[i];
            m2[i] = b2 * m2[i] + (T{1} - b2) * g[i] * g[i];
            wv[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + tiny);
        }
    }

    auto fin = final_iterate.mutable_data();
    for (std::size_t b = 0; b < N; ++b)
        if (std::isinf(best_dist[b]))
            std::copy(fin.begin() + static_cast<std::ptrdiff_t>(b * d),
                      fin.begin() + static_cast<std::ptrdiff_t>((b + 1) * d),
                      best.begin() + static_cast<std::ptrdiff_t>(b * d));
    for (auto& v : best)
        v = std::clamp(v, lo, hi);
    if (spec.epsilon > 0)
        detail::project(std::span<T>(best), x.data(), d, spec);
    return Tensor<T>(x.shape(), std::move(best));
}

/// Dispatch on spec.kind. The TRADES inner step ignores labels.
template <class Model, class T, class Rng>
Tensor<T> run_attack(const Model& model, const Tensor<T>& x, std::span<const std::size_t> y, const AttackSpec& spec,
                     Rng& rng)
{
    switch (spec.kind) {
    case AttackKind::fgsm: return fgsm(model, x, y, spec);
    case AttackKind::pgd: return pgd(model, x, y, spec, rng);
    case AttackKind::cw_l2: return cw_l2(model, x, y, spec);
    case AttackKind::trades_inner: return trades_inner(model, x, spec, rng);
    }
    throw ConfigError("unsupported attack kind");
}

}  // namespace vfd
