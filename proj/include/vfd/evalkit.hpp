#pragma once

// Clean / robust accuracy under white-box and transfer (black-box) attacks,
// hyperparameter sweeps, and feature export.

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <type_traits>
#include <vector>

#include "vfd/attacks.hpp"
#include "vfd/data.hpp"
#include "vfd/models.hpp"
#include "vfd/trainer.hpp"

namespace vfd {

/// Reduces a decimal to a small-denominator fraction when one matches to
/// within a relative 1e-6 ("8/255"); empty otherwise.
inline std::string as_fraction(double v, long max_den = 1024)
{
    if (v == 0.0)
        return "0";
    if (!(v > 0.0) || !std::isfinite(v))
        return "";
    // continued-fraction convergents
    long h0 = 0, h1 = 1, k0 = 1, k1 = 0;
    double x = v;
    for (int it = 0; it < 32; ++it) {
        const double a = std::floor(x);
        const long ai = static_cast<long>(a);
        const long h2 = ai * h1 + h0, k2 = ai * k1 + k0;
        if (k2 > max_den)
            break;
        h0 = h1;
        h1 = h2;
        k0 = k1;
        k1 = k2;
        if (std::abs(static_cast<double>(h1) / static_cast<double>(k1) - v) <= 1e-6 * v)
            return std::to_string(h1) + "/" + std::to_string(k1);
        const double frac = x - a;
        if (frac < 1e-15)
            break;
        x = 1.0 / frac;
    }
    return "";
}

/// Parses a non-negative "0.0313" or "8/255".
inline double parse_epsilon(const std::string& text)
{
    auto number = [&](std::string_view part) {
        double v = 0;
        const auto [end, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (part.empty() || ec != std::errc() || end != part.data() + part.size() || !std::isfinite(v))
            throw ConfigError("cannot parse '" + text + "' as a number");
        return v;
    };
    const auto slash = text.find('/');
    double v = 0;
    if (slash == std::string::npos) {
        v = number(text);
    } else {
        const double den = number(std::string_view(text).substr(slash + 1));
        if (den == 0.0)
            throw ConfigError("zero denominator in '" + text + "'");
        v = number(std::string_view(text).substr(0, slash)) / den;
    }
    if (v < 0.0)
        throw ConfigError("'" + text + "' must be >= 0");
    return v;
}

inline std::string format_accuracy(std::size_t correct, std::size_t total)
{
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << (total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0);
    return os.str();
}

template <class T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const std::size_t> y)
{
    const std::size_t N = logits.dim(0), C = logits.dim(1);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const auto row = logits.data().subspan(i * C, C);
        const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        ok += pred == y[i];
    }
    return ok;
}

template <class T>
double accuracy(const TappedModel<T>& model, const Dataset<T>& data, std::size_t batch = 256)
{
    std::size_t ok = 0;
    for (std::size_t s = 0; s < data.size(); s += batch) {
        auto [x, y] = data.slice(s, std::min(data.size(), s + batch));
        ok += count_correct(model.forward(x, ParamUse::constant), y);
    }
    return static_cast<double>(ok) / static_cast<double>(data.size());
}

struct AttackResult {
    AttackSpec spec;
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct EvalReport {
    std::string model_id;
    std::string dataset_id;
    std::uint64_t seed = 0;
    bool black_box = false;
    std::string surrogate_id;
    std::size_t clean_correct = 0;
    std::size_t total = 0;
    std::vector<AttackResult> attacks;

    double clean_accuracy() const
    {
        return total ? static_cast<double>(clean_correct) / static_cast<double>(total) : 0.0;
    }
    std::string threat() const { return black_box ? "black-box(" + surrogate_id + ")" : "white-box"; }
};

/// Robust accuracy of `victim` on adversarials crafted against `surrogate`
/// (black-box) or against the victim itself (white-box). Attack randomness
/// depends only on (seed, attack index, batch index), never on the threat model.
template <class T>
EvalReport evaluate(const TappedModel<T>& victim, const Dataset<T>& data, const std::vector<AttackSpec>& attacks,
                    const std::type_identity_t<TappedModel<T>>* surrogate, std::uint64_t seed, std::string model_id = "model",
                    std::string surrogate_id = "surrogate", std::size_t batch = 256)
{
    if (data.size() == 0)
        throw ConfigError("evaluate: empty dataset");
    if (surrogate && surrogate->descriptor().input != victim.descriptor().input)
        throw ConfigError("surrogate input shape " + to_string(surrogate->descriptor().input) +
                          " differs from victim " + to_string(victim.descriptor().input));
    if (surrogate && surrogate->descriptor().num_classes != victim.descriptor().num_classes)
        throw ConfigError("surrogate and victim disagree on the number of classes");
    for (const auto& a : attacks)
        validate(a);
    EvalReport r;
    r.model_id = std::move(model_id);
    r.dataset_id = data.id;
    r.seed = seed;
    r.black_box = surrogate != nullptr;
    if (surrogate)
        r.surrogate_id = std::move(surrogate_id);
    r.total = data.size();
    for (const auto& a : attacks)
        r.attacks.push_back({a, 0, data.size()});
    const TappedModel<T>& source = surrogate ? *surrogate : victim;
    std::size_t bi = 0;
    for (std::size_t s = 0; s < data.size(); s += batch, ++bi) {
        auto [x, y] = data.slice(s, std::min(data.size(), s + batch));
        r.clean_correct += count_correct(victim.forward(x, ParamUse::constant), y);
        for (std::size_t a = 0; a < attacks.size(); ++a) {
            std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                              static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(bi)};
            std::mt19937_64 rng(seq);
            const auto x_adv = run_attack(source, x, y, attacks[a], rng);
            r.attacks[a].correct += count_correct(victim.forward(x_adv, ParamUse::constant), y);
        }
    }
    return r;
}

inline std::string report_csv_header() { return "defense,threat,attack,epsilon,epsilon_frac,steps,robust_acc,clean_acc,seed"; }

inline void write_report_rows(std::ostream& os, const EvalReport& r)
{
    for (const auto& a : r.attacks)
        os << r.model_id << ',' << r.threat() << ',' << to_string(a.spec.kind) << ','
           << io::format_double(a.spec.epsilon) << ',' << as_fraction(a.spec.epsilon) << ',' << a.spec.steps << ','
           << format_accuracy(a.correct, a.total) << ',' << format_accuracy(r.clean_correct, r.total) << ','
           << r.seed << '\n';
}

inline std::string report_csv(const std::vector<EvalReport>& reports)
{
    std::ostringstream os;
    os << report_csv_header() << '\n';
    for (const auto& r : reports)
        write_report_rows(os, r);
    return os.str();
}

/// Plain-text table: one row per defense, black-box attack columns, then
/// white-box attack columns, then clean accuracy.
inline std::string report_table(const std::vector<EvalReport>& reports)
{
    std::vector<std::string> defenses;
    std::vector<std::string> attack_names;
    std::map<std::string, std::map<std::string, std::string>> cell;
    std::map<std::string, std::string> clean;
    for (const auto& r : reports) {
        if (std::find(defenses.begin(), defenses.end(), r.model_id) == defenses.end())
            defenses.push_back(r.model_id);
        clean[r.model_id] = format_accuracy(r.clean_correct, r.total);
        for (const auto& a : r.attacks) {
            std::string name = to_string(a.spec.kind);
            if (std::find(attack_names.begin(), attack_names.end(), name) == attack_names.end())
                attack_names.push_back(name);
            cell[r.model_id][(r.black_box ? "BB " : "WB ") + name] = format_accuracy(a.correct, a.total);
        }
    }
    std::vector<std::string> cols;
    for (const char* side : {"BB ", "WB "})
        for (const auto& n : attack_names)
            cols.push_back(side + n);
    std::ostringstream os;
    os << std::left << std::setw(16) << "defense";
    for (const auto& c : cols)
        os << std::setw(14) << c;
    os << "ACC\n";
    for (const auto& d : defenses) {
        os << std::setw(16) << d;
        for (const auto& c : cols) {
            auto it = cell[d].find(c);
            os << std::setw(14) << (it == cell[d].end() ? "-" : it->second);
        }
        os << clean[d] << '\n';
    }
    os << "\nattacks:\n";
    std::vector<std::string> seen;
    for (const auto& r : reports)
        for (const auto& a : r.attacks) {
            const std::string k = to_string(a.spec.kind);
            if (std::find(seen.begin(), seen.end(), k) != seen.end())
                continue;
            seen.push_back(k);
            const std::string frac = as_fraction(a.spec.epsilon);
            os << "  " << k << ": norm=" << to_string(a.spec.norm) << " eps=" << io::format_double(a.spec.epsilon);
            if (!frac.empty())
                os << " (" << frac << ")";
            os << " steps=" << a.spec.steps << " step_size=" << io::format_double(a.spec.step_size)
               << " random_start=" << (a.spec.random_start ? "true" : "false");
            if (a.spec.kind == AttackKind::cw_l2)
                os << " kappa=" << io::format_double(a.spec.kappa) << " lr=" << io::format_double(a.spec.lr)
                   << " c=" << io::format_double(a.spec.c) << " (fixed, no binary search)";
            os << '\n';
        }
    return os.str();
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepParam { beta, lambda, tap };

inline std::string to_string(SweepParam p)
{
    switch (p) {
    case SweepParam::beta: return "beta";
    case SweepParam::lambda: return "lambda";
    case SweepParam::tap: return "tap";
    }
    return "?";
}

inline SweepParam parse_sweep_param(const std::string& s)
{
    if (s == "beta")
        return SweepParam::beta;
    if (s == "lambda")
        return SweepParam::lambda;
    if (s == "tap")
        return SweepParam::tap;
    throw ConfigError("unknown sweep parameter '" + s + "' (beta, lambda, tap)");
}

/// "start:stop:step" (inclusive of stop) or a comma list. Values are rounded
/// to 12 decimals so 0:0.04:0.005 yields 0.015 rather than 0.015000000000000001.
inline std::vector<std::string> parse_grid(const std::string& text, SweepParam param)
{
    std::vector<std::string> out;
    if (param != SweepParam::tap && std::count(text.begin(), text.end(), ':') == 2) {
        const auto a = text.find(':'), b = text.find(':', a + 1);
        const double start = parse_epsilon(text.substr(0, a));
        const double stop = parse_epsilon(text.substr(a + 1, b - a - 1));
        const double step = parse_epsilon(text.substr(b + 1));
        if (!(step > 0) || stop < start)
            throw ConfigError("grid '" + text + "' needs step > 0 and stop >= start");
        const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
        for (std::size_t i = 0; i < n; ++i)
            out.push_back(io::format_double(std::round((start + static_cast<double>(i) * step) * 1e12) / 1e12));
    } else {
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty())
                out.push_back(param == SweepParam::tap ? item : io::format_double(parse_epsilon(item)));
    }
    if (out.empty())
        throw ConfigError("empty sweep grid");
    return out;
}

struct SweepPoint {
    std::string value;
    double clean_acc = 0;
    double robust_acc = 0;
    std::uint64_t checksum = 0;
};

struct SweepResult {
    std::string param;
    std::vector<SweepPoint> points;
    std::vector<std::pair<std::string, std::string>> fixed;
};

inline std::string sweep_csv(const SweepResult& r)
{
    std::ostringstream os;
    os << "param,value,clean_acc,robust_acc\n";
    for (const auto& p : r.points)
        os << r.param << ',' << p.value << ',' << std::fixed << std::setprecision(6) << p.clean_acc << ','
           << p.robust_acc << '\n';
    return os.str();
}

/// Trains one fresh model per grid value and evaluates it white-box with
/// `eval_attack`. Grid points run on up to `jobs` threads; results do not
/// depend on `jobs`.
template <class T>
SweepResult sweep(SweepParam param, const std::vector<std::string>& grid, const ArchDescriptor& desc,
                  const TrainConfig& base, const Dataset<T>& train_set, const Dataset<T>& test_set,
                  const std::type_identity_t<TappedModel<T>>* teacher, const AttackSpec& eval_attack, std::uint64_t eval_seed,
                  std::size_t jobs = 1,
                  const std::function<void(std::size_t, const Checkpoint<T>&)>& on_point = {})
{
    if (grid.empty())
        throw ConfigError("sweep: grid must be non-empty");
    std::vector<TrainConfig> cfgs;
    if (param == SweepParam::tap) {
        const auto names = TappedModel<T>::skeleton(desc).tap_names();
        long last = -1;
        for (const auto& g : grid) {
            const auto it = std::find(names.begin(), names.end(), g);
            if (it == names.end())
                throw ConfigError("sweep: unknown tap '" + g + "'");
            const long pos = it - names.begin();
            if (pos <= last)
                throw ConfigError("sweep: tap grid must follow the model's block order");
            last = pos;
            cfgs.push_back(base);
            cfgs.back().loss.tap = g;
        }
    } else {
        double last = -std::numeric_limits<double>::infinity();
        for (const auto& g : grid) {
            const double v = parse_epsilon(g);
            if (!(v > last))
                throw ConfigError("sweep: grid must be strictly increasing");
            last = v;
            cfgs.push_back(base);
            (param == SweepParam::beta ? cfgs.back().loss.beta : cfgs.back().loss.lambda) = v;
        }
    }
    for (const auto& c : cfgs)
        validate(c);

    SweepResult result;
    result.param = to_string(param);
    result.fixed = describe(base);
    result.points.resize(grid.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    auto worker = [&] {
        for (std::size_t i = next++; i < grid.size(); i = next++) {
            try {
                auto ck = train(desc, train_set, cfgs[i], teacher);
                const auto rep = evaluate(ck.model, test_set, {eval_attack}, nullptr, eval_seed);
                result.points[i] = {grid[i], rep.clean_accuracy(), rep.attacks[0].accuracy(),
                                    ck.model.params().checksum()};
                if (on_point) {
                    std::lock_guard lock(mu);
                    on_point(i, ck);
                }
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure)
                    failure = std::current_exception();
            }
        }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(jobs, grid.size()));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n; ++t)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }
    if (failure)
        std::rethrow_exception(failure);
    return result;
}

// ---------------------------------------------------------------------------
// Feature export

/// Writes a header row then one row per example: id, label, adversarial flag
/// and the flattened tap features. The first `max_per_class` examples of each
/// class (dataset order) are exported clean, then again after `attack`.
template <class T>
std::size_t export_features(const TappedModel<T>& model, const Dataset<T>& data, const std::string& tap,
                            std::size_t max_per_class, const AttackSpec& attack, std::uint64_t seed, std::ostream& out)
{
    if (!model.has_tap(tap))
        throw ConfigError("unknown feature tap '" + tap + "'");
    std::vector<std::size_t> taken(data.num_classes, 0), pick_idx;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (taken[data.labels[i]] < max_per_class) {
            ++taken[data.labels[i]];
            pick_idx.push_back(i);
        }
    const std::size_t dim = numel_of(model.tap_shape(tap));
    out << "id,label,adversarial";
    for (std::size_t j = 0; j < dim; ++j)
        out << ",f" << j;
    out << '\n';
    std::size_t rows = 0;
    constexpr std::size_t batch = 256;
    for (int adversarial = 0; adversarial < 2; ++adversarial) {
        std::mt19937_64 rng(seed);
        for (std::size_t s = 0; s < pick_idx.size(); s += batch) {
            std::span<const std::size_t> idx(pick_idx.data() + s, std::min(batch, pick_idx.size() - s));
            auto [x, y] = data.gather(idx);
            if (adversarial)
                x = run_attack(model, x, y, attack, rng);
            const auto f = flatten(model.forward_tapped(x, {tap}, ParamUse::constant).features.at(tap));
            for (std::size_t r = 0; r < idx.size(); ++r, ++rows) {
                out << idx[r] << ',' << y[r] << ',' << adversarial;
                for (std::size_t j = 0; j < dim; ++j)
                    out << ',' << io::format_double(static_cast<double>(f.data()[r * dim + j]));
                out << '\n';
            }
        }
    }
    return rows;
}

}  // namespace vfd
