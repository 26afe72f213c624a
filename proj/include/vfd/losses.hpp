#pragma once

// Training objective:
//
//   total = clean + beta * adv + lambda * kd
//
//   clean = mean_i CE(F(x_i), y_i)
//   adv   = mean_i CE(F(x_adv_i), y_i)                          (alp_ce)
//         = mean_i KL(softmax(F(x_i)) || softmax(F(x_adv_i)))   (trades_kl)
//   kd    = mean_i ||f_s(x_adv_i) - f_t(x_i)||_2 + ||f_s(x_i) - f_t(x_i)||_2
//
// where f_s / f_t are student / frozen-teacher features at one tap, flattened
// per example.

#include <cmath>
#include <span>
#include <string>

#include "vfd/ops.hpp"

namespace vfd {

enum class RobustTerm { alp_ce, trades_kl };

inline std::string to_string(RobustTerm t) { return t == RobustTerm::alp_ce ? "alp_ce" : "trades_kl"; }

inline RobustTerm parse_robust_term(const std::string& s)
{
    if (s == "alp_ce" || s == "ce")
        return RobustTerm::alp_ce;
    if (s == "trades_kl" || s == "kl")
        return RobustTerm::trades_kl;
    throw ConfigError("unknown robustness term '" + s + "'");
}

struct LossSpec {
    double beta = 6.0;
    double lambda = 0.0;
    RobustTerm phi = RobustTerm::trades_kl;
    std::string tap = "block2";
};

inline void validate(const LossSpec& spec)
{
    if (!(spec.beta >= 0.0) || !(spec.lambda >= 0.0))
        throw ConfigError("loss: beta and lambda must be >= 0");
}

/// Mean cross-entropy of logits (N, C) against class indices.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> y)
{
    return scale(mean(pick(log_softmax(logits), y)), T{-1});
}

template <class T>
Tensor<T> clean_loss(const Tensor<T>& logits, std::span<const std::size_t> y)
{
    return cross_entropy(logits, y);
}

/// Mean KL(softmax(target_logits) || softmax(logits)). `target_logits` is
/// treated as a constant.
template <class T>
Tensor<T> kl_to_target(const Tensor<T>& target_logits, const Tensor<T>& logits)
{
    detail::require_same_shape("kl_to_target", target_logits, logits);
    const std::size_t N = logits.dim(0);
    const Tensor<T> log_p = log_softmax(target_logits.detach());
    std::vector<T> p(log_p.numel());
    T entropy_term{0};  // sum p log p
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(log_p.data()[i]);
        if (p[i] > T{0})
            entropy_term += p[i] * log_p.data()[i];
    }
    const Tensor<T> target(logits.shape(), std::move(p));
    // sum p (log p - log q) = sum p log p - sum p log q
    const Tensor<T> cross = sum(mul(target, log_softmax(logits)));
    return scale(add_scalar(scale(cross, T{-1}), entropy_term), T{1} / static_cast<T>(N));
}

/// Mean KL(softmax(p_logits) || softmax(q_logits)), differentiable in both.
template <class T>
Tensor<T> kl_div(const Tensor<T>& p_logits, const Tensor<T>& q_logits)
{
    detail::require_same_shape("kl_div", p_logits, q_logits);
    const Tensor<T> log_p = log_softmax(p_logits);
    const Tensor<T> terms = mul(softmax(p_logits), sub(log_p, log_softmax(q_logits)));
    return scale(sum(terms), T{1} / static_cast<T>(p_logits.dim(0)));
}

/// Robustness term from already-computed logits.
template <class T>
Tensor<T> adv_loss_from_logits(const Tensor<T>& adv_logits, const Tensor<T>& clean_logits,
                               std::span<const std::size_t> y, RobustTerm phi)
{
    if (phi == RobustTerm::alp_ce)
        return cross_entropy(adv_logits, y);
    return kl_div(clean_logits, adv_logits);
}

/// Robustness term evaluated through `model` (anything with forward(x)).
template <class Model, class T>
Tensor<T> adv_loss(const Model& model, const Tensor<T>& x_adv, const Tensor<T>& x, std::span<const std::size_t> y,
                   const LossSpec& spec)
{
    const auto adv_logits = model.forward(x_adv);
    if (spec.phi == RobustTerm::alp_ce)
        return cross_entropy(adv_logits, y);
    return kl_div(model.forward(x), adv_logits);
}

/// Feature-distillation distance. All three batches must share one shape;
/// spatial features are flattened per example.
template <class T>
Tensor<T> vfd_loss(const Tensor<T>& student_on_adv, const Tensor<T>& student_on_clean,
                   const Tensor<T>& teacher_on_clean)
{
    if (student_on_adv.shape() != teacher_on_clean.shape() || student_on_clean.shape() != teacher_on_clean.shape())
        throw ContractViolation("vfd_loss: feature shapes differ: student(adv) " + to_string(student_on_adv.shape()) +
                                ", student(clean) " + to_string(student_on_clean.shape()) + ", teacher " +
                                to_string(teacher_on_clean.shape()));
    const Tensor<T> target = flatten(teacher_on_clean.detach());
    const Tensor<T> d_adv = row_norm(sub(flatten(student_on_adv), target));
    const Tensor<T> d_clean = row_norm(sub(flatten(student_on_clean), target));
    return mean(add(d_adv, d_clean));
}

/// clean + beta * adv + lambda * kd, with beta and lambda as scalar tensors so
/// their gradients can be read off the tape.
template <class T>
Tensor<T> weighted_total(const Tensor<T>& l_clean, const Tensor<T>& l_adv, const Tensor<T>& l_kd,
                         const Tensor<T>& beta, const Tensor<T>& lambda)
{
    return add(l_clean, add(mul(beta, l_adv), mul(lambda, l_kd)));
}

template <class T>
Tensor<T> total_loss(const Tensor<T>& l_clean, const Tensor<T>& l_adv, const Tensor<T>& l_kd, const LossSpec& spec)
{
    const std::pair<const char*, const Tensor<T>*> terms[] = {{"l_clean", &l_clean}, {"l_adv", &l_adv}, {"l_kd", &l_kd}};
    for (const auto& [name, t] : terms) {
        if (t->numel() != 1)
            throw ContractViolation(std::string("total_loss: ") + name + " is not a scalar");
        if (!std::isfinite(static_cast<double>(t->item())))
            throw TrainingAbort(std::string("non-finite ") + name);
    }
    return add(l_clean, add(scale(l_adv, static_cast<T>(spec.beta)), scale(l_kd, static_cast<T>(spec.lambda))));
}

}  // namespace vfd
