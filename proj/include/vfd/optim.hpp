#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "vfd/tensor.hpp"

namespace vfd {

/// FNV-1a over raw bytes. Used for parameter checksums in tests and logs.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL)
{
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Named parameter tensors in insertion order.
template <class T>
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
    };

    ParameterSet() = default;
    ParameterSet(ParameterSet&&) noexcept = default;
    ParameterSet& operator=(ParameterSet&&) noexcept = default;
    // Tensors are shared handles; copies go through clone().
    ParameterSet(const ParameterSet&) = delete;
    ParameterSet& operator=(const ParameterSet&) = delete;

    Tensor<T>& add(std::string name, Tensor<T> tensor)
    {
        for (const auto& e : entries_)
            if (e.name == name)
                throw ContractViolation("duplicate parameter name '" + name + "'");
        tensor.set_requires_grad(!frozen_);
        entries_.push_back({std::move(name), std::move(tensor)});
        return entries_.back().tensor;
    }

    std::size_t size() const { return entries_.size(); }
    Entry& operator[](std::size_t i) { return entries_.at(i); }
    const Entry& operator[](std::size_t i) const { return entries_.at(i); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    const Tensor<T>& at(const std::string& name) const
    {
        for (const auto& e : entries_)
            if (e.name == name)
                return e.tensor;
        throw ContractViolation("no parameter named '" + name + "'");
    }

    Tensor<T>& at(const std::string& name)
    {
        return const_cast<Tensor<T>&>(std::as_const(*this).at(name));
    }

    bool frozen() const { return frozen_; }

    /// Frozen parameters stop requiring gradients and reject optimizer steps.
    void freeze()
    {
        frozen_ = true;
        for (auto& e : entries_) {
            e.tensor.set_requires_grad(false);
            e.tensor.zero_grad();
        }
    }

    std::size_t total_values() const
    {
        std::size_t n = 0;
        for (const auto& e : entries_)
            n += e.tensor.numel();
        return n;
    }

    std::uint64_t checksum() const
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& e : entries_) {
            h = fnv1a(e.name.data(), e.name.size(), h);
            h = fnv1a(e.tensor.data().data(), e.tensor.numel() * sizeof(T), h);
        }
        return h;
    }

    void zero_grad()
    {
        for (auto& e : entries_)
            e.tensor.zero_grad();
    }

    /// Deep copy with the same frozen state.
    ParameterSet clone() const
    {
        ParameterSet out;
        for (const auto& e : entries_)
            out.add(e.name, e.tensor.detach());
        if (frozen_)
            out.freeze();
        return out;
    }

private:
    std::vector<Entry> entries_;
    bool frozen_ = false;
};

struct SgdConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
};

inline void validate(const SgdConfig& cfg)
{
    if (!(cfg.learning_rate > 0.0))
        throw ConfigError("sgd: learning_rate must be > 0");
    if (cfg.momentum < 0.0 || cfg.weight_decay < 0.0)
        throw ConfigError("sgd: momentum and weight_decay must be >= 0");
}

/// Classical momentum SGD:
///   v <- momentum * v + (grad + weight_decay * p)
///   p <- p - lr * v
template <class T>
class Sgd {
public:
    explicit Sgd(SgdConfig cfg) : cfg_(cfg) { validate(cfg_); }

    const SgdConfig& config() const { return cfg_; }
    void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

    void step(ParameterSet<T>& params)
    {
        if (params.frozen())
            throw ContractViolation("sgd step on a frozen parameter set");
        if (velocity_.size() != params.size()) {
            velocity_.clear();
            for (const auto& e : params)
                velocity_.emplace_back(e.tensor.numel(), T{0});
        }
        const T lr = static_cast<T>(cfg_.learning_rate);
        const T mom = static_cast<T>(cfg_.momentum);
        const T wd = static_cast<T>(cfg_.weight_decay);
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& t = params[k].tensor;
            if (!t.has_grad())
                continue;
            auto p = t.mutable_data();
            auto g = t.mutable_grad();
            auto& v = velocity_[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                T d = g[i];
                if (wd != T{0})
                    d += wd * p[i];
                if (mom != T{0})
                    d = v[i] = mom * v[i] + d;
                p[i] -= lr * d;
            }
        }
        params.zero_grad();
    }

private:
    SgdConfig cfg_;
    std::vector<std::vector<T>> velocity_;
};

}  // namespace vfd
