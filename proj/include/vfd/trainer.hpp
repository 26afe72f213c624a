#pragma once

// Vanilla (clean-only) training and the feature-distillation adversarial
// training loop. Per batch of the adversarial loop:
//
//   1. teacher features f_t = F_van^k(x)                (frozen teacher)
//   2. x_adv = inner maximization against the current student
//   3. student forward on x and x_adv, keeping the tap-k features
//   4. total = CE(x) + beta * phi(x_adv) + lambda * kd
//   5. one SGD step on the student
//
// Batches are drawn in a seeded per-epoch shuffle. The model, shuffle and
// attack random streams are all derived from TrainConfig::seed.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "vfd/attacks.hpp"
#include "vfd/checkpoint.hpp"
#include "vfd/data.hpp"
#include "vfd/losses.hpp"
#include "vfd/models.hpp"
#include "vfd/optim.hpp"

namespace vfd {

enum class Method { vanilla, alp, trades, alp_vfd, trades_vfd };

inline std::string to_string(Method m)
{
    switch (m) {
    case Method::vanilla: return "vanilla";
    case Method::alp: return "alp";
    case Method::trades: return "trades";
    case Method::alp_vfd: return "alp+vfd";
    case Method::trades_vfd: return "trades+vfd";
    }
    return "?";
}

inline Method parse_method(const std::string& s)
{
    if (s == "vanilla")
        return Method::vanilla;
    if (s == "alp")
        return Method::alp;
    if (s == "trades")
        return Method::trades;
    if (s == "alp+vfd")
        return Method::alp_vfd;
    if (s == "trades+vfd")
        return Method::trades_vfd;
    throw ConfigError("unknown method '" + s + "' (vanilla, alp, trades, alp+vfd, trades+vfd)");
}

inline bool uses_distillation(Method m) { return m == Method::alp_vfd || m == Method::trades_vfd; }

inline RobustTerm robust_term_of(Method m)
{
    return (m == Method::alp || m == Method::alp_vfd) ? RobustTerm::alp_ce : RobustTerm::trades_kl;
}

struct TrainConfig {
    Method method = Method::trades_vfd;
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    SgdConfig sgd{0.05, 0.9, 0.0};
    AttackSpec attack = AttackSpec::pgd(8.0 / 255.0, 10);  // inner maximization
    LossSpec loss;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
    std::optional<std::string> vanilla_ckpt;
    std::size_t lr_decay_every = 0;  // 0: constant learning rate
    double lr_decay_factor = 0.1;
};

inline void validate(const TrainConfig& cfg)
{
    if (cfg.batch_size == 0)
        throw ConfigError("train: batch_size must be positive");
    validate(cfg.sgd);
    validate(cfg.loss);
    if (cfg.method != Method::vanilla) {
        validate(cfg.attack);
        if (cfg.attack.kind == AttackKind::cw_l2)
            throw ConfigError("train: cw_l2 is not supported as the inner maximization");
        if (robust_term_of(cfg.method) != cfg.loss.phi)
            throw ConfigError("train: method " + to_string(cfg.method) + " conflicts with robustness term " +
                              to_string(cfg.loss.phi));
    }
    if (!uses_distillation(cfg.method) && cfg.loss.lambda > 0)
        throw ConfigError("train: lambda > 0 requires a +vfd method");
}

struct EpochLog {
    std::size_t epoch = 0;
    double l_clean = 0, l_adv = 0, l_kd = 0, l_total = 0;
};

inline std::string log_header() { return "epoch,l_clean,l_adv,l_kd,l_total"; }

inline std::string to_csv_row(const EpochLog& e)
{
    return std::to_string(e.epoch) + "," + io::format_double(e.l_clean) + "," + io::format_double(e.l_adv) + "," +
           io::format_double(e.l_kd) + "," + io::format_double(e.l_total);
}

/// Key/value snapshot of a training configuration.
inline std::vector<std::pair<std::string, std::string>> describe(const TrainConfig& cfg)
{
    using io::format_double;
    return {
        {"train.method", to_string(cfg.method)},
        {"train.epochs", std::to_string(cfg.epochs)},
        {"train.batch_size", std::to_string(cfg.batch_size)},
        {"train.lr", format_double(cfg.sgd.learning_rate)},
        {"train.momentum", format_double(cfg.sgd.momentum)},
        {"train.weight_decay", format_double(cfg.sgd.weight_decay)},
        {"train.seed", std::to_string(cfg.seed)},
        {"train.lr_decay_every", std::to_string(cfg.lr_decay_every)},
        {"train.lr_decay_factor", format_double(cfg.lr_decay_factor)},
        {"loss.beta", format_double(cfg.loss.beta)},
        {"loss.lambda", format_double(cfg.loss.lambda)},
        {"loss.phi", to_string(cfg.loss.phi)},
        {"loss.tap", cfg.loss.tap},
        {"attack.kind", to_string(cfg.attack.kind)},
        {"attack.norm", to_string(cfg.attack.norm)},
        {"attack.eps", format_double(cfg.attack.epsilon)},
        {"attack.steps", std::to_string(cfg.attack.steps)},
        {"attack.step_size", format_double(cfg.attack.step_size)},
        {"attack.random_start", cfg.attack.random_start ? "true" : "false"},
    };
}

template <class T>
using EpochCallback = std::function<void(const Checkpoint<T>&)>;

namespace detail {

template <class T>
Checkpoint<T> snapshot(const TappedModel<T>& model, const TrainConfig& cfg, std::size_t epoch,
                       const std::vector<EpochLog>& log)
{
    Checkpoint<T> ck{model.clone(), cfg.seed, epoch, describe(cfg), {}};
    for (const auto& e : log)
        ck.log_tail.push_back(to_csv_row(e));
    return ck;
}

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t which)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(which)};
    return std::mt19937_64(seq);
}

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, std::mt19937_64& rng)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < n; b += batch)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch)));
    return out;
}

inline double scheduled_lr(const TrainConfig& cfg, std::size_t epoch)
{
    double lr = cfg.sgd.learning_rate;
    if (cfg.lr_decay_every > 0)
        for (std::size_t e = cfg.lr_decay_every; e <= epoch; e += cfg.lr_decay_every)
            lr *= cfg.lr_decay_factor;
    return lr;
}

}  // namespace detail

/// Clean-only training (the teacher). Only the clean term of cfg.loss is used.
template <class T>
Checkpoint<T> train_vanilla(const ArchDescriptor& desc, const Dataset<T>& data, const TrainConfig& cfg,
                            const EpochCallback<T>& on_checkpoint = {})
{
    if (data.size() == 0)
        throw ConfigError("train_vanilla: empty dataset");
    if (cfg.batch_size == 0)
        throw ConfigError("train: batch_size must be positive");
    validate(cfg.sgd);
    TrainConfig vcfg = cfg;
    vcfg.method = Method::vanilla;
    auto model = TappedModel<T>::build(desc, cfg.seed);
    Sgd<T> opt(cfg.sgd);
    auto shuffle = detail::stream(cfg.seed, 1);
    std::vector<EpochLog> log;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        opt.set_learning_rate(detail::scheduled_lr(cfg, epoch - 1));
        EpochLog row{epoch};
        const auto batches = detail::epoch_batches(data.size(), cfg.batch_size, shuffle);
        for (const auto& idx : batches) {
            auto [x, y] = data.gather(idx);
            auto loss = clean_loss(model.forward(x), y);
            if (!std::isfinite(static_cast<double>(loss.item())))
                throw TrainingAbort("non-finite l_clean at epoch " + std::to_string(epoch));
            row.l_clean += static_cast<double>(loss.item());
            backward(loss);
            opt.step(model.params());
        }
        row.l_clean /= static_cast<double>(batches.size());
        row.l_total = row.l_clean;
        log.push_back(row);
        if (on_checkpoint && cfg.checkpoint_every && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs)
            on_checkpoint(detail::snapshot(model, vcfg, epoch, log));
    }
    return detail::snapshot(model, vcfg, cfg.epochs, log);
}

/// Adversarial training with optional feature distillation from a frozen
/// teacher. `teacher` may be null when lambda == 0; when present it must
/// share the student's architecture. The teacher is never modified.
template <class T>
Checkpoint<T> train_adversarial(const std::type_identity_t<TappedModel<T>>* teacher, const ArchDescriptor& desc, const Dataset<T>& data,
                                const TrainConfig& cfg, const EpochCallback<T>& on_checkpoint = {})
{
    validate(cfg);
    if (cfg.method == Method::vanilla)
        throw ConfigError("train_adversarial: method vanilla has no adversarial term");
    if (data.size() == 0)
        throw ConfigError("train_adversarial: empty dataset");
    if (cfg.loss.lambda > 0 && !teacher)
        throw ConfigError("train_adversarial: lambda > 0 needs a vanilla checkpoint");

    auto model = TappedModel<T>::build(desc, cfg.seed);
    const std::string& tap = cfg.loss.tap;
    std::uint64_t teacher_sum = 0;
    if (teacher) {
        if (!(teacher->descriptor() == model.descriptor()))
            throw ConfigError("teacher architecture " + teacher->descriptor().arch + " differs from student " +
                              model.descriptor().arch);
        if (!teacher->params().frozen())
            throw ConfigError("teacher parameters must be frozen");
        if (!model.has_tap(tap))
            throw ConfigError("unknown feature tap '" + tap + "'");
        if (teacher->tap_shape(tap) != model.tap_shape(tap))
            throw ConfigError("teacher/student tap '" + tap + "' shapes differ");
        teacher_sum = teacher->params().checksum();
    }

    Sgd<T> opt(cfg.sgd);
    auto shuffle = detail::stream(cfg.seed, 1);
    auto attack_rng = detail::stream(cfg.seed, 2);
    const std::set<std::string> taps = teacher ? std::set<std::string>{tap} : std::set<std::string>{};
    std::vector<EpochLog> log;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        opt.set_learning_rate(detail::scheduled_lr(cfg, epoch - 1));
        EpochLog row{epoch};
        const auto batches = detail::epoch_batches(data.size(), cfg.batch_size, shuffle);
        for (std::size_t b = 0; b < batches.size(); ++b) {
            auto [x, y] = data.gather(batches[b]);
            Tensor<T> f_teacher;
            if (teacher)
                f_teacher = teacher->forward_tapped(x, taps, ParamUse::constant).features.at(tap);

            const Tensor<T> x_adv = run_attack(model, x, y, cfg.attack, attack_rng);

            const auto clean = model.forward_tapped(x, taps);
            const auto adv = model.forward_tapped(x_adv, taps);
            const Tensor<T> l_clean = clean_loss(clean.logits, y);
            const Tensor<T> l_adv = adv_loss_from_logits(adv.logits, clean.logits, y, cfg.loss.phi);
            const Tensor<T> l_kd = teacher ? vfd_loss(adv.features.at(tap), clean.features.at(tap), f_teacher)
                                           : Tensor<T>::scalar(T{0});
            Tensor<T> total;
            try {
                total = total_loss(l_clean, l_adv, l_kd, cfg.loss);
                if (!std::isfinite(static_cast<double>(total.item())))
                    throw TrainingAbort("non-finite l_total");
            } catch (const TrainingAbort& e) {
                throw TrainingAbort(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(b + 1));
            }
            row.l_clean += static_cast<double>(l_clean.item());
            row.l_adv += static_cast<double>(l_adv.item());
            row.l_kd += static_cast<double>(l_kd.item());
            row.l_total += static_cast<double>(total.item());
            backward(total);
            opt.step(model.params());
        }
        const double nb = static_cast<double>(batches.size());
        row.l_clean /= nb;
        row.l_adv /= nb;
        row.l_kd /= nb;
        row.l_total /= nb;
        log.push_back(row);
        if (teacher && teacher->params().checksum() != teacher_sum)
            throw ContractViolation("teacher parameters changed during epoch " + std::to_string(epoch));
        if (on_checkpoint && cfg.checkpoint_every && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs)
            on_checkpoint(detail::snapshot(model, cfg, epoch, log));
    }
    return detail::snapshot(model, cfg, cfg.epochs, log);
}

/// Dispatches on cfg.method. A teacher is loaded from cfg.vanilla_ckpt when
/// `teacher` is null and the path is set.
template <class T>
Checkpoint<T> train(const ArchDescriptor& desc, const Dataset<T>& data, const TrainConfig& cfg,
                    const std::type_identity_t<TappedModel<T>>* teacher = nullptr, const EpochCallback<T>& on_checkpoint = {})
{
    if (cfg.method == Method::vanilla)
        return train_vanilla(desc, data, cfg, on_checkpoint);
    std::optional<TappedModel<T>> loaded;
    if (!teacher && cfg.vanilla_ckpt) {
        loaded.emplace(load_checkpoint<T>(*cfg.vanilla_ckpt, desc.arch).model);
        loaded->freeze();
        teacher = &*loaded;
    }
    return train_adversarial(teacher, desc, data, cfg, on_checkpoint);
}

/// Mean over examples of ||f_a(x) - f_b(x)||_2 at one tap.
template <class T>
double mean_feature_distance(const TappedModel<T>& a, const TappedModel<T>& b, const Dataset<T>& data,
                             const std::string& tap, std::size_t batch = 256)
{
    double total = 0;
    for (std::size_t s = 0; s < data.size(); s += batch) {
        auto [x, y] = data.slice(s, std::min(data.size(), s + batch));
        const auto fa = flatten(a.forward_tapped(x, {tap}, ParamUse::constant).features.at(tap));
        const auto fb = flatten(b.forward_tapped(x, {tap}, ParamUse::constant).features.at(tap));
        for (T v : row_norm(sub(fa, fb)).data())
            total += static_cast<double>(v);
    }
    return total / static_cast<double>(data.size());
}

}  // namespace vfd
