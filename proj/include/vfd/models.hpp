#pragma once

// Small classifiers built from named blocks. Every block output is a feature
// tap; the last block is always "logits". Taps are read after the block's
// final activation (and pooling, where the block pools).
//
//   linear     logits: flatten, dense
//   mlp-small  block1: flatten, dense, relu | block2: dense, relu | logits: dense
//   cnn-small  block1: conv3x3, relu, maxpool2 | block2: conv3x3, relu, maxpool2 | logits
//   cnn-mid    block1: conv3x3, relu | block2: conv3x3, relu, maxpool2
//              block3: conv3x3, relu | block4: conv3x3, relu, maxpool2 | logits

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "vfd/ops.hpp"
#include "vfd/optim.hpp"

namespace vfd {

struct ArchDescriptor {
    std::string arch = "cnn-small";
    Shape input{1, 8, 8};  // per-example shape: (C, H, W) or (D)
    std::size_t num_classes = 3;
    std::vector<std::size_t> widths;  // empty: architecture defaults

    bool operator==(const ArchDescriptor&) const = default;
};

inline const std::vector<std::string>& known_architectures()
{
    static const std::vector<std::string> ids{"linear", "mlp-small", "cnn-small", "cnn-mid"};
    return ids;
}

inline std::vector<std::size_t> default_widths(const std::string& arch)
{
    if (arch == "linear")
        return {};
    if (arch == "mlp-small")
        return {32, 32};
    if (arch == "cnn-small")
        return {8, 16};
    if (arch == "cnn-mid")
        return {8, 8, 16, 16};
    throw ConfigError("unknown architecture id '" + arch + "'");
}

/// Whether a model forward lets gradients reach the parameters. Attacks and
/// evaluation use `constant`.
enum class ParamUse { train, constant };

template <class T>
struct TappedOutput {
    Tensor<T> logits;
    std::map<std::string, Tensor<T>> features;
};

template <class T = double>
class TappedModel {
public:
    struct Dense {
        std::size_t weight, bias;
    };
    struct Conv {
        std::size_t weight, bias;
        std::size_t padding;
    };
    struct Relu {};
    struct MaxPool {
        std::size_t window;
    };
    struct Flatten {};
    using Layer = std::variant<Dense, Conv, Relu, MaxPool, Flatten>;

    struct Block {
        std::string name;
        std::vector<Layer> layers;
    };

    TappedModel(TappedModel&&) noexcept = default;
    TappedModel& operator=(TappedModel&&) noexcept = default;

    /// Deterministic He-style initialization: weights ~ N(0, 2 / fan_in), biases 0.
    static TappedModel build(const ArchDescriptor& desc, std::uint64_t seed)
    {
        TappedModel m(desc);
        std::mt19937_64 rng(seed);
        m.expand(&rng);
        return m;
    }

    /// Same block structure with zero-filled parameters (checkpoint loading).
    static TappedModel skeleton(const ArchDescriptor& desc)
    {
        TappedModel m(desc);
        m.expand(nullptr);
        return m;
    }

    TappedModel clone() const
    {
        TappedModel m(desc_);
        m.blocks_ = blocks_;
        m.params_ = params_.clone();
        return m;
    }

    const ArchDescriptor& descriptor() const { return desc_; }
    std::size_t num_classes() const { return desc_.num_classes; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }
    const std::vector<Block>& blocks() const { return blocks_; }

    std::vector<std::string> tap_names() const
    {
        std::vector<std::string> names;
        for (const auto& b : blocks_)
            names.push_back(b.name);
        return names;
    }

    bool has_tap(const std::string& name) const
    {
        for (const auto& b : blocks_)
            if (b.name == name)
                return true;
        return false;
    }

    void freeze() { params_.freeze(); }

    Tensor<T> forward(const Tensor<T>& x, ParamUse use = ParamUse::train) const
    {
        return forward_tapped(x, {}, use).logits;
    }

    TappedOutput<T> forward_tapped(const Tensor<T>& x, const std::set<std::string>& taps,
                                   ParamUse use = ParamUse::train) const
    {
        for (const auto& t : taps)
            if (!has_tap(t))
                throw ConfigError("unknown feature tap '" + t + "' for architecture " + desc_.arch);
        check_input(x);
        std::vector<Tensor<T>> local;
        if (use == ParamUse::constant || params_.frozen())
            for (const auto& e : params_)
                local.push_back(e.tensor.detach());
        auto param = [&](std::size_t i) -> const Tensor<T>& {
            return local.empty() ? params_[i].tensor : local[i];
        };

        TappedOutput<T> out;
        Tensor<T> h = x;
        for (const auto& block : blocks_) {
            for (const auto& layer : block.layers)
                h = apply(layer, h, param);
            if (taps.count(block.name))
                out.features.emplace(block.name, h);
        }
        out.logits = h;
        return out;
    }

    /// Output shape of a tap for a batch of one.
    Shape tap_shape(const std::string& name) const
    {
        auto x = Tensor<T>::zeros(batch_shape(1));
        return forward_tapped(x, {name}, ParamUse::constant).features.at(name).shape();
    }

    Shape batch_shape(std::size_t n) const
    {
        Shape s{n};
        s.insert(s.end(), desc_.input.begin(), desc_.input.end());
        return s;
    }

private:
    explicit TappedModel(ArchDescriptor desc) : desc_(std::move(desc))
    {
        if (desc_.widths.empty())
            desc_.widths = default_widths(desc_.arch);
        if (desc_.num_classes < 2)
            throw ConfigError("num_classes must be >= 2");
    }

    void check_input(const Tensor<T>& x) const
    {
        if (x.rank() != desc_.input.size() + 1 ||
            !std::equal(desc_.input.begin(), desc_.input.end(), x.shape().begin() + 1))
            throw ContractViolation("model " + desc_.arch + " expects input (N)" + to_string(desc_.input) +
                                    ", got " + to_string(x.shape()));
    }

    template <class ParamFn>
    static Tensor<T> apply(const Layer& layer, const Tensor<T>& h, ParamFn&& param)
    {
        return std::visit(
            [&](const auto& l) -> Tensor<T> {
                using L = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<L, Dense>)
                    return add_bias(matmul(h, param(l.weight)), param(l.bias));
                else if constexpr (std::is_same_v<L, Conv>)
                    return conv2d(h, param(l.weight), param(l.bias), Conv2dOptions{1, l.padding});
                else if constexpr (std::is_same_v<L, Relu>)
                    return relu(h);
                else if constexpr (std::is_same_v<L, MaxPool>)
                    return max_pool2d(h, l.window);
                else
                    return flatten(h);
            },
            layer);
    }

    // Builds blocks and parameters. `rng == nullptr` leaves parameters zero.
    void expand(std::mt19937_64* rng)
    {
        const auto& w = desc_.widths;
        const auto& in = desc_.input;
        auto need = [&](std::size_t n) {
            if (w.size() != n)
                throw ConfigError(desc_.arch + " needs " + std::to_string(n) + " widths, got " +
                                  std::to_string(w.size()));
        };
        auto dense = [&](const std::string& prefix, std::size_t fan_in, std::size_t fan_out) -> Layer {
            const auto wi = add_param(prefix + ".weight", {fan_in, fan_out}, fan_in, rng);
            const auto bi = add_param(prefix + ".bias", {fan_out}, 0, rng);
            return Dense{wi, bi};
        };
        auto conv = [&](const std::string& prefix, std::size_t cin, std::size_t cout) -> Layer {
            const auto wi = add_param(prefix + ".weight", {cout, cin, 3, 3}, cin * 9, rng);
            const auto bi = add_param(prefix + ".bias", {cout}, 0, rng);
            return Conv{wi, bi, 1};
        };
        const std::size_t flat_in = numel_of(in);

        if (desc_.arch == "linear") {
            need(0);
            blocks_.push_back({"logits", {Flatten{}, dense("logits", flat_in, desc_.num_classes)}});
        } else if (desc_.arch == "mlp-small") {
            need(2);
            blocks_.push_back({"block1", {Flatten{}, dense("block1.dense", flat_in, w[0]), Relu{}}});
            blocks_.push_back({"block2", {dense("block2.dense", w[0], w[1]), Relu{}}});
            blocks_.push_back({"logits", {dense("logits", w[1], desc_.num_classes)}});
        } else if (desc_.arch == "cnn-small" || desc_.arch == "cnn-mid") {
            if (in.size() != 3)
                throw ConfigError(desc_.arch + " needs a (C, H, W) input shape, got " + to_string(in));
            const bool mid = desc_.arch == "cnn-mid";
            need(mid ? 4 : 2);
            std::size_t c = in[0], h = in[1], wd = in[2];
            for (std::size_t b = 0; b < w.size(); ++b) {
                const bool pool = !mid || b % 2 == 1;
                const std::string name = "block" + std::to_string(b + 1);
                Block block{name, {conv(name + ".conv", c, w[b]), Relu{}}};
                if (pool) {
                    if (h < 2 || wd < 2)
                        throw ConfigError(desc_.arch + ": input " + to_string(in) + " too small to pool");
                    block.layers.push_back(MaxPool{2});
                    h /= 2;
                    wd /= 2;
                }
                blocks_.push_back(std::move(block));
                c = w[b];
            }
            blocks_.push_back({"logits", {Flatten{}, dense("logits", c * h * wd, desc_.num_classes)}});
        } else {
            throw ConfigError("unknown architecture id '" + desc_.arch + "'");
        }
    }

    std::size_t add_param(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64* rng)
    {
        std::vector<T> v(numel_of(shape), T{0});
        if (rng && fan_in > 0) {
            std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
            for (auto& x : v)
                x = static_cast<T>(normal(*rng));
        }
        params_.add(name, Tensor<T>(std::move(shape), std::move(v)));
        return params_.size() - 1;
    }

    ArchDescriptor desc_;
    std::vector<Block> blocks_;
    ParameterSet<T> params_;
};

}  // namespace vfd
