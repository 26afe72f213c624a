#pragma once

// Attack oracles shared by the unit tests and the acceptance runner.

#include <cmath>
#include <random>

#include "support/oracles.hpp"
#include "vfd/attacks.hpp"
#include "vfd/data.hpp"
#include "vfd/losses.hpp"
#include "vfd/models.hpp"
#include "vfd/trainer.hpp"

namespace vfd::testing {

struct BallReport {
    std::size_t checked = 0;
    std::size_t violations = 0;
    double worst_excess = 0;  // max(norm - eps), over all checks
    bool fgsm_matches_one_step_pgd = true;
};

/// Distance of each example of `adv` from `x` in the given norm.
inline std::vector<double> distances(const Tensor<double>& adv, const Tensor<double>& x, Norm norm)
{
    const std::size_t n = x.dim(0), d = x.numel() / n;
    std::vector<double> out(n, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = b * d; i < (b + 1) * d; ++i) {
            const double e = std::abs(adv.data()[i] - x.data()[i]);
            out[b] = norm == Norm::linf ? std::max(out[b], e) : out[b] + e * e;
        }
    if (norm == Norm::l2)
        for (auto& v : out)
            v = std::sqrt(v);
    return out;
}

/// Generates at least `total` adversarials with every attack kind against
/// random small models and inputs (a share of them pinned to 0 or 1) and
/// checks the norm bound (+1e-9) and the [0, 1] box. Also compares FGSM with
/// one-step PGD (step = eps, no random start) for bit equality.
inline BallReport attack_ball_property(std::size_t total, std::uint64_t seed)
{
    BallReport r;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    std::size_t round = 0;
    while (r.checked < total) {
        ArchDescriptor desc;
        desc.arch = round % 2 ? "cnn-small" : "mlp-small";
        desc.input = round % 2 ? Shape{1, 8, 8} : Shape{6};
        desc.num_classes = 2 + round % 3;
        const auto model = TappedModel<double>::build(desc, seed + round);
        const std::size_t n = 40, d = numel_of(desc.input);
        std::vector<double> v(n * d);
        for (auto& e : v) {
            const double p = u(rng);
            e = p < 0.15 ? 0.0 : (p < 0.3 ? 1.0 : u(rng));
        }
        Shape s = model.batch_shape(n);
        const Tensor<double> x(s, v);
        const auto y = random_labels(n, desc.num_classes, rng);
        const double eps = 0.01 + 0.2 * u(rng);
        const std::vector<AttackSpec> specs = [&] {
            AttackSpec l2 = AttackSpec::pgd(eps * 4, 7);
            l2.norm = Norm::l2;
            AttackSpec cw = AttackSpec::cw(0.0, 30, 0.05);
            cw.epsilon = eps * 3;
            return std::vector<AttackSpec>{AttackSpec::fgsm(eps), AttackSpec::pgd(eps, 7), l2,
                                           AttackSpec::trades(eps, 5), cw};
        }();
        for (const auto& spec : specs) {
            const auto adv = run_attack(model, x, y, spec, rng);
            const auto dist = distances(adv, x, spec.norm);
            for (std::size_t b = 0; b < n; ++b) {
                bool ok = dist[b] <= spec.epsilon + 1e-9;
                for (std::size_t i = b * d; i < (b + 1) * d; ++i)
                    ok = ok && adv.data()[i] >= 0.0 && adv.data()[i] <= 1.0;
                r.worst_excess = std::max(r.worst_excess, dist[b] - spec.epsilon);
                r.violations += !ok;
                ++r.checked;
            }
        }
        const auto f = fgsm(model, x, y, AttackSpec::fgsm(eps));
        const auto p = pgd(model, x, y, AttackSpec::pgd(eps, 1, eps, false), rng);
        r.fgsm_matches_one_step_pgd =
            r.fgsm_matches_one_step_pgd && std::equal(f.data().begin(), f.data().end(), p.data().begin());
        ++round;
    }
    return r;
}

/// Two-class linear model with logits (u . x + b, 0).
inline TappedModel<double> linear_model(const std::vector<double>& u, double b)
{
    ArchDescriptor desc;
    desc.arch = "linear";
    desc.input = {u.size()};
    desc.num_classes = 2;
    auto m = TappedModel<double>::skeleton(desc);
    auto w = m.params().at("logits.weight").mutable_data();
    for (std::size_t i = 0; i < u.size(); ++i) {
        w[i * 2] = u[i];
        w[i * 2 + 1] = 0.0;
    }
    m.params().at("logits.bias").mutable_data()[0] = b;
    return m;
}

/// Trains a linear classifier on two Gaussian blobs, attacks it with PGD and
/// compares the achieved mean cross-entropy with the closed-form maximizer
/// clamp(x - eps * sign(w_y - w_other)). Returns the largest gap over `runs`.
inline double linear_pgd_gap(std::size_t runs, std::uint64_t seed)
{
    double worst = 0;
    for (std::size_t r = 0; r < runs; ++r) {
        SynthSpec spec;
        spec.kind = SynthKind::gaussian_blobs;
        spec.num_classes = 2;
        spec.per_class = 100;
        spec.dim = 5;
        spec.noise = 0.15;
        spec.separation = 0.4;
        spec.seed = seed + r;
        const auto data = synthesize<double>(spec);
        ArchDescriptor desc;
        desc.arch = "linear";
        desc.input = {5};
        desc.num_classes = 2;
        TrainConfig cfg;
        cfg.method = Method::vanilla;
        cfg.epochs = 5;
        cfg.seed = seed + r;
        const auto ck = train_vanilla(desc, data, cfg);
        const auto& W = ck.model.params().at("logits.weight");
        const double eps = 8.0 / 255.0;
        auto [x, y] = data.slice(0, data.size());
        std::vector<double> star(x.data().begin(), x.data().end());
        for (std::size_t b = 0; b < y.size(); ++b)
            for (std::size_t i = 0; i < 5; ++i) {
                const double diff = W.data()[i * 2 + y[b]] - W.data()[i * 2 + (1 - y[b])];
                const double sg = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
                if (sg != 0.0)
                    star[b * 5 + i] = std::clamp(x.data()[b * 5 + i] - eps * sg, 0.0, 1.0);
            }
        const Tensor<double> x_star(x.shape(), star);
        std::mt19937_64 rng(seed + 100 + r);
        const auto adv = pgd(ck.model, x, y, AttackSpec::pgd(eps, 20), rng);
        const double want = cross_entropy(ck.model.forward(x_star, ParamUse::constant), y).item();
        const double got = cross_entropy(ck.model.forward(adv, ParamUse::constant), y).item();
        worst = std::max(worst, std::abs(want - got));
    }
    return worst;
}

/// C&W l2 against random two-class linear models whose decision boundary is
/// reachable inside the box; returns the worst relative error between the
/// attack's perturbation norm and the exact point-to-hyperplane distance.
inline double cw_hyperplane_error(std::size_t instances, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    std::normal_distribution<double> normal(0, 1);
    double worst = 0;
    std::size_t made = 0;
    while (made < instances) {
        const std::size_t D = 2 + made % 9;
        std::vector<double> x(D), dir(D);
        for (auto& e : x)
            e = 0.3 + 0.4 * u(rng);
        double n2 = 0;
        for (auto& e : dir) {
            e = normal(rng);
            n2 += e * e;
        }
        const double norm_u = 2.0 + 4.0 * u(rng), dist = 0.05 + 0.25 * u(rng);
        std::vector<double> w(D);
        double dot = 0;
        for (std::size_t i = 0; i < D; ++i) {
            w[i] = norm_u * dir[i] / std::sqrt(n2);
            dot += w[i] * x[i];
        }
        // margin u.x + b equals dist * |u|; the foot of the perpendicular must sit inside the box
        const double b = dist * norm_u - dot;
        bool inside = true;
        for (std::size_t i = 0; i < D; ++i) {
            const double foot = x[i] - dist * w[i] / norm_u;
            inside = inside && foot > 0.02 && foot < 0.98;
        }
        // the fixed-constant objective reaches the boundary when c |u|^2 / 2 exceeds the margin
        if (!inside || norm_u * norm_u / 2.0 < 1.5 * dist * norm_u)
            continue;
        const auto model = linear_model(w, b);
        const Tensor<double> xt({1, D}, x);
        const std::vector<std::size_t> y{0};
        const auto adv = cw_l2(model, xt, y, AttackSpec::cw(0.0, 1000, 0.01));
        const double got = distances(adv, xt, Norm::l2)[0];
        worst = std::max(worst, std::abs(got - dist) / dist);
        ++made;
    }
    return worst;
}

}  // namespace vfd::testing
