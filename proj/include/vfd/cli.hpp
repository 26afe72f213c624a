#pragma once

// Command-line front end: train-vanilla, train, attack, eval, sweep and
// export-features, driven by an INI run-config plus flag overrides.
//
// Resolution order: built-in defaults, then --config, then flags. The fully
// resolved configuration is written to <out>/config.ini before any work, and
// re-running with `--config <out>/config.ini` reproduces every artifact.

#include <CLI11.hpp>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vfd/vfd.hpp"

namespace vfd::cli {

enum class Kind { text, real, count, flag };

struct Key {
    const char* name;
    const char* value;
    Kind kind;
    const char* help;
};

// Desk-scale presets.
inline const std::vector<Key>& keys()
{
    static const std::vector<Key> k{
        {"data.source", "synth", Kind::text, "synth | idx | cifar10 | cifar100 | container"},
        {"data.paths", "", Kind::text, "comma-separated input files for non-synthetic sources"},
        {"data.classes", "0", Kind::count, "class count for idx files (0: infer from labels)"},
        {"synth.kind", "rasterized-blobs", Kind::text, "gaussian-blobs | ring-classes | rasterized-blobs"},
        {"synth.classes", "3", Kind::count, ""},
        {"synth.per_class", "400", Kind::count, ""},
        {"synth.noise", "1.4", Kind::real, "blob jitter (pixels for rasterized-blobs)"},
        {"synth.separation", "1.5", Kind::real, ""},
        {"synth.texture", "0.025", Kind::real, "class texture amplitude (rasterized-blobs)"},
        {"synth.pixel_noise", "0.05", Kind::real, ""},
        {"synth.side", "8", Kind::count, ""},
        {"synth.dim", "2", Kind::count, "feature count (gaussian-blobs)"},
        {"synth.seed", "0", Kind::count, ""},
        {"split.train", "5", Kind::real, "train parts of the train:test ratio"},
        {"split.test", "1", Kind::real, "test parts of the train:test ratio"},
        {"split.seed", "0", Kind::count, ""},
        {"model.arch", "cnn-small", Kind::text, "linear | mlp-small | cnn-small | cnn-mid"},
        {"model.widths", "", Kind::text, "comma-separated widths (empty: architecture default)"},
        {"train.method", "trades+vfd", Kind::text, "vanilla | alp | trades | alp+vfd | trades+vfd"},
        {"train.epochs", "20", Kind::count, ""},
        {"train.batch_size", "64", Kind::count, ""},
        {"train.lr", "0.02", Kind::real, ""},
        {"train.momentum", "0.9", Kind::real, ""},
        {"train.weight_decay", "0", Kind::real, ""},
        {"train.seed", "0", Kind::count, ""},
        {"train.checkpoint_every", "0", Kind::count, "also save every N epochs (0: final only)"},
        {"train.lr_decay_every", "0", Kind::count, "step decay period in epochs (0: constant)"},
        {"train.lr_decay_factor", "0.1", Kind::real, ""},
        {"train.vanilla", "", Kind::text, "frozen teacher checkpoint for +vfd methods"},
        {"loss.beta", "6", Kind::real, ""},
        {"loss.lambda", "0", Kind::real, ""},
        {"loss.tap", "block2", Kind::text, "feature tap distilled from the teacher"},
        {"attack.kind", "pgd", Kind::text, "training inner maximization: pgd | trades | fgsm"},
        {"attack.norm", "linf", Kind::text, ""},
        {"attack.eps", "0.031372549019607843", Kind::real, "input-scale epsilon (8/255)"},
        {"attack.steps", "5", Kind::count, ""},
        {"attack.step_size", "0", Kind::real, "0: eps / 4"},
        {"attack.random_start", "true", Kind::flag, ""},
        {"eval.attacks", "pgd,fgsm,cw", Kind::text, "comma-separated: pgd, fgsm, cw, trades"},
        {"eval.eps", "0.031372549019607843", Kind::real, ""},
        {"eval.norm", "linf", Kind::text, ""},
        {"eval.steps", "20", Kind::count, "pgd / trades steps"},
        {"eval.step_size", "0", Kind::real, "0: eps / 4"},
        {"eval.random_start", "true", Kind::flag, ""},
        {"eval.kappa", "0", Kind::real, "cw confidence"},
        {"eval.cw_steps", "1000", Kind::count, ""},
        {"eval.cw_lr", "0.01", Kind::real, ""},
        {"eval.cw_eps", "0", Kind::real, "cw l2 bound (0: unbounded)"},
        {"eval.seed", "0", Kind::count, ""},
        {"eval.checkpoint", "", Kind::text, "model to attack / evaluate / export"},
        {"eval.surrogate", "", Kind::text, "black-box surrogate checkpoint"},
        {"eval.name", "", Kind::text, "defense name in reports (empty: training method)"},
        {"sweep.param", "lambda", Kind::text, "beta | lambda | tap"},
        {"sweep.grid", "0:0.04:0.005", Kind::text, "start:stop:step or comma list"},
        {"sweep.jobs", "1", Kind::count, ""},
        {"export.tap", "block2", Kind::text, ""},
        {"export.max_per_class", "500", Kind::count, ""},
    };
    return k;
}

inline const Key* find_key(const std::string& name)
{
    for (const auto& k : keys())
        if (name == k.name)
            return &k;
    return nullptr;
}

class RunConfig {
public:
    RunConfig()
    {
        for (const auto& k : keys())
            values_[k.name] = canonical(k, k.value);
    }

    void set(const std::string& name, const std::string& raw)
    {
        const Key* k = find_key(name);
        if (!k)
            throw ConfigError("unknown configuration key '" + name + "'");
        values_[name] = canonical(*k, raw);
    }

    const std::string& text(const std::string& name) const
    {
        const auto it = values_.find(name);
        if (it == values_.end())
            throw ConfigError("unknown configuration key '" + name + "'");
        return it->second;
    }
    double real(const std::string& name) const { return parse_epsilon(text(name)); }
    std::size_t count(const std::string& name) const { return std::stoull(text(name)); }
    bool flag(const std::string& name) const { return text(name) == "true"; }

    void merge_file(const std::string& path)
    {
        namespace pt = boost::property_tree;
        pt::ptree tree;
        try {
            std::istringstream in(io::read_file(path));
            pt::read_ini(in, tree);
        } catch (const pt::ini_parser_error& e) {
            throw ConfigError(path + ": " + e.message() + " at line " + std::to_string(e.line()));
        }
        for (const auto& [section, body] : tree) {
            if (body.empty())
                throw ConfigError(path + ": key '" + section + "' outside a section");
            for (const auto& [key, value] : body)
                set(section + "." + key, value.get_value<std::string>());
        }
    }

    /// INI text in key-table order.
    std::string render() const
    {
        std::ostringstream os;
        os << "; resolved run configuration\n";
        std::string section;
        for (const auto& k : keys()) {
            const std::string name = k.name;
            const auto dot = name.find('.');
            if (name.substr(0, dot) != section) {
                section = name.substr(0, dot);
                os << "\n[" << section << "]\n";
            }
            os << name.substr(dot + 1) << " = " << values_.at(name) << '\n';
        }
        return os.str();
    }

private:
    static std::string canonical(const Key& k, const std::string& raw)
    {
        switch (k.kind) {
        case Kind::text: return raw;
        case Kind::real: return io::format_double(parse_epsilon(raw));
        case Kind::count:
            if (raw.empty() || raw.find_first_not_of("0123456789") != std::string::npos)
                throw ConfigError(std::string("'") + k.name + "' expects a non-negative integer, got '" + raw + "'");
            return std::to_string(std::stoull(raw));
        case Kind::flag:
            if (raw == "true" || raw == "1" || raw == "yes")
                return "true";
            if (raw == "false" || raw == "0" || raw == "no")
                return "false";
            throw ConfigError(std::string("'") + k.name + "' expects true/false, got '" + raw + "'");
        }
        return raw;
    }

    std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Config -> library objects

inline std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty())
            out.push_back(item);
    return out;
}

inline std::pair<Dataset<double>, Dataset<double>> load_data(const RunConfig& c)
{
    const std::string source = c.text("data.source");
    const auto paths = split_list(c.text("data.paths"));
    Dataset<double> full;
    if (source == "synth") {
        SynthSpec s;
        s.kind = parse_synth_kind(c.text("synth.kind"));
        s.num_classes = c.count("synth.classes");
        s.per_class = c.count("synth.per_class");
        s.noise = c.real("synth.noise");
        s.separation = c.real("synth.separation");
        s.texture = c.real("synth.texture");
        s.pixel_noise = c.real("synth.pixel_noise");
        s.side = c.count("synth.side");
        s.dim = c.count("synth.dim");
        s.seed = c.count("synth.seed");
        full = synthesize<double>(s);
    } else if (source == "container") {
        if (paths.size() == 2) {
            auto train = load_dataset<double>(paths[0]);
            auto test = load_dataset<double>(paths[1]);
            return {std::move(train), std::move(test)};
        }
        if (paths.size() != 1)
            throw ConfigError("data.paths: container source takes one file (split here) or two (train,test)");
        full = load_dataset<double>(paths[0]);
    } else {
        if (paths.empty())
            throw ConfigError("data.paths is required for source '" + source + "'");
        full = load_standard<double>(paths, parse_standard_format(source), c.count("data.classes"));
    }
    full.validate();
    return split(full, c.real("split.train"), c.real("split.test"), c.count("split.seed"));
}

inline ArchDescriptor arch_for(const RunConfig& c, const Dataset<double>& data)
{
    ArchDescriptor d;
    d.arch = c.text("model.arch");
    d.input = data.example_shape();
    d.num_classes = data.num_classes;
    d.widths = io::parse_shape(c.text("model.widths"));
    return d;
}

inline AttackSpec training_attack(const RunConfig& c)
{
    const AttackKind kind = parse_attack_kind(c.text("attack.kind"));
    const double eps = c.real("attack.eps"), step = c.real("attack.step_size");
    AttackSpec s = kind == AttackKind::fgsm ? AttackSpec::fgsm(eps)
                                            : AttackSpec::pgd(eps, static_cast<int>(c.count("attack.steps")),
                                                              step > 0 ? step : -1, c.flag("attack.random_start"));
    if (kind == AttackKind::trades_inner)
        s.kind = kind;
    if (kind == AttackKind::cw_l2)
        s.kind = kind;  // rejected by TrainConfig validation with a clear message
    s.norm = parse_norm(c.text("attack.norm"));
    return s;
}

inline TrainConfig train_config(const RunConfig& c)
{
    TrainConfig t;
    t.method = parse_method(c.text("train.method"));
    t.epochs = c.count("train.epochs");
    t.batch_size = c.count("train.batch_size");
    t.sgd = {c.real("train.lr"), c.real("train.momentum"), c.real("train.weight_decay")};
    t.seed = c.count("train.seed");
    t.checkpoint_every = c.count("train.checkpoint_every");
    t.lr_decay_every = c.count("train.lr_decay_every");
    t.lr_decay_factor = c.real("train.lr_decay_factor");
    t.attack = training_attack(c);
    t.loss.beta = c.real("loss.beta");
    t.loss.lambda = c.real("loss.lambda");
    t.loss.phi = robust_term_of(t.method);
    t.loss.tap = c.text("loss.tap");
    if (!c.text("train.vanilla").empty())
        t.vanilla_ckpt = c.text("train.vanilla");
    return t;
}

inline std::vector<AttackSpec> eval_attacks(const RunConfig& c)
{
    std::vector<AttackSpec> out;
    const double eps = c.real("eval.eps"), step = c.real("eval.step_size");
    const int steps = static_cast<int>(c.count("eval.steps"));
    for (const auto& name : split_list(c.text("eval.attacks"))) {
        const AttackKind kind = parse_attack_kind(name);
        AttackSpec s;
        switch (kind) {
        case AttackKind::fgsm: s = AttackSpec::fgsm(eps); break;
        case AttackKind::pgd: s = AttackSpec::pgd(eps, steps, step > 0 ? step : -1, c.flag("eval.random_start")); break;
        case AttackKind::trades_inner:
            s = AttackSpec::trades(eps, steps, step > 0 ? step : -1, c.flag("eval.random_start"));
            break;
        case AttackKind::cw_l2:
            s = AttackSpec::cw(c.real("eval.kappa"), static_cast<int>(c.count("eval.cw_steps")), c.real("eval.cw_lr"));
            s.epsilon = c.real("eval.cw_eps");
            break;
        }
        if (kind != AttackKind::cw_l2)
            s.norm = parse_norm(c.text("eval.norm"));
        validate(s);
        out.push_back(s);
    }
    if (out.empty())
        throw ConfigError("eval.attacks lists no attack");
    return out;
}

inline std::string eps_both(double eps)
{
    const std::string frac = as_fraction(eps);
    return io::format_double(eps) + (frac.empty() ? "" : " (" + frac + ")");
}

inline std::string hex(std::uint64_t v)
{
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline Checkpoint<double> load_model(const std::string& path, const char* key)
{
    if (path.empty())
        throw ConfigError(std::string(key) + " is required");
    return load_checkpoint<double>(path);
}

inline std::string model_name(const RunConfig& c, const Checkpoint<double>& ck)
{
    if (!c.text("eval.name").empty())
        return c.text("eval.name");
    for (const auto& [k, v] : ck.config)
        if (k == "train.method")
            return v;
    return ck.model.descriptor().arch;
}

// ---------------------------------------------------------------------------
// Subcommands

struct Context {
    RunConfig config;
    std::filesystem::path out;
    std::ostream& log;

    std::string path(const std::string& name) const { return (out / name).string(); }
};

inline void write_train_outputs(const Context& ctx, const Checkpoint<double>& ck)
{
    save_checkpoint(ck, ctx.path("model.ckpt"));
    std::string csv = log_header() + "\n";
    for (const auto& row : ck.log_tail)
        csv += row + "\n";
    io::write_file(ctx.path("train_log.csv"), csv);
    ctx.log << "model " << ctx.path("model.ckpt") << "\nchecksum " << hex(ck.model.params().checksum()) << '\n';
}

inline void cmd_train(Context& ctx, bool vanilla_only)
{
    if (vanilla_only)
        ctx.config.set("train.method", "vanilla");
    const auto [train_set, test_set] = load_data(ctx.config);
    const auto desc = arch_for(ctx.config, train_set);
    const auto cfg = train_config(ctx.config);
    validate(cfg);
    auto on_epoch = [&](const Checkpoint<double>& ck) {
        save_checkpoint(ck, ctx.path("epoch-" + std::to_string(ck.epoch) + ".ckpt"));
    };
    const auto ck = train<double>(desc, train_set, cfg, nullptr, on_epoch);
    write_train_outputs(ctx, ck);
    ctx.log << "test clean accuracy " << format_accuracy(static_cast<std::size_t>(std::llround(
                                                             accuracy(ck.model, test_set) * test_set.size())),
                                                         test_set.size())
            << '\n';
}

inline void cmd_attack(Context& ctx)
{
    const auto [train_set, test_set] = load_data(ctx.config);
    const auto ck = load_model(ctx.config.text("eval.checkpoint"), "eval.checkpoint");
    const auto attacks = eval_attacks(ctx.config);
    if (attacks.size() != 1)
        throw ConfigError("attack runs exactly one attack (use --method)");
    const AttackSpec& spec = attacks[0];
    const auto report = evaluate(ck.model, test_set, attacks, nullptr, ctx.config.count("eval.seed"),
                                 model_name(ctx.config, ck));
    // regenerate the adversarial set with the same per-batch seeding as the report
    Dataset<double> adv = test_set;
    adv.split = "adversarial";
    std::vector<double> values;
    constexpr std::size_t batch = 256;
    std::size_t bi = 0;
    for (std::size_t s = 0; s < test_set.size(); s += batch, ++bi) {
        auto [x, y] = test_set.slice(s, std::min(test_set.size(), s + batch));
        const std::uint64_t seed = ctx.config.count("eval.seed");
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0u,
                          static_cast<std::uint32_t>(bi)};
        std::mt19937_64 rng(seq);
        const auto xa = run_attack(ck.model, x, y, spec, rng);
        values.insert(values.end(), xa.data().begin(), xa.data().end());
    }
    adv.inputs = Tensor<double>(test_set.inputs.shape(), std::move(values));
    save_dataset(adv, ctx.path("adversarial.vfd"));
    io::write_file(ctx.path("attack_report.csv"), report_csv({report}));
    ctx.log << "attack " << to_string(spec.kind) << " norm=" << to_string(spec.norm) << " eps=" << eps_both(spec.epsilon)
            << " steps=" << spec.steps << '\n'
            << "clean_acc " << format_accuracy(report.clean_correct, report.total) << "\nrobust_acc "
            << format_accuracy(report.attacks[0].correct, report.attacks[0].total) << '\n';
}

inline void cmd_eval(Context& ctx)
{
    const auto [train_set, test_set] = load_data(ctx.config);
    const auto victim = load_model(ctx.config.text("eval.checkpoint"), "eval.checkpoint");
    const auto attacks = eval_attacks(ctx.config);
    const std::uint64_t seed = ctx.config.count("eval.seed");
    const std::string name = model_name(ctx.config, victim);
    std::vector<EvalReport> reports;
    if (!ctx.config.text("eval.surrogate").empty()) {
        const auto surrogate = load_model(ctx.config.text("eval.surrogate"), "eval.surrogate");
        const std::string sid = surrogate.model.descriptor().arch + "/seed" + std::to_string(surrogate.seed);
        reports.push_back(evaluate(victim.model, test_set, attacks, &surrogate.model, seed, name, sid));
    }
    reports.push_back(evaluate(victim.model, test_set, attacks, nullptr, seed, name));
    io::write_file(ctx.path("report.csv"), report_csv(reports));
    const std::string table = report_table(reports);
    io::write_file(ctx.path("report.txt"), table);
    ctx.log << table;
}

inline void cmd_sweep(Context& ctx)
{
    const auto [train_set, test_set] = load_data(ctx.config);
    const auto desc = arch_for(ctx.config, train_set);
    const auto base = train_config(ctx.config);
    const auto param = parse_sweep_param(ctx.config.text("sweep.param"));
    const auto grid = parse_grid(ctx.config.text("sweep.grid"), param);
    const auto attacks = eval_attacks(ctx.config);
    std::optional<Checkpoint<double>> teacher;
    if (base.vanilla_ckpt) {
        teacher.emplace(load_checkpoint<double>(*base.vanilla_ckpt, desc.arch));
        teacher->model.freeze();
    }
    ctx.log << "sweep " << to_string(param) << " over " << grid.size() << " points:";
    for (const auto& g : grid)
        ctx.log << ' ' << g;
    ctx.log << '\n';
    std::filesystem::create_directories(ctx.out / "points");
    const auto result = sweep<double>(param, grid, desc, base, train_set, test_set,
                                      teacher ? &teacher->model : nullptr, attacks[0], ctx.config.count("eval.seed"),
                                      ctx.config.count("sweep.jobs"), [&](std::size_t i, const Checkpoint<double>& ck) {
                                          save_checkpoint(ck, (ctx.out / "points" /
                                                               (to_string(param) + "=" + grid[i] + ".ckpt"))
                                                                  .string());
                                      });
    const std::string csv = sweep_csv(result);
    io::write_file(ctx.path("sweep.csv"), csv);
    ctx.log << csv;
}

inline void cmd_export(Context& ctx)
{
    const auto [train_set, test_set] = load_data(ctx.config);
    const auto ck = load_model(ctx.config.text("eval.checkpoint"), "eval.checkpoint");
    const auto attacks = eval_attacks(ctx.config);
    std::ostringstream os;
    const auto rows = export_features(ck.model, test_set, ctx.config.text("export.tap"),
                                      ctx.config.count("export.max_per_class"), attacks[0],
                                      ctx.config.count("eval.seed"), os);
    io::write_file(ctx.path("features.csv"), os.str());
    ctx.log << "features " << ctx.path("features.csv") << " rows " << rows << '\n';
}

// ---------------------------------------------------------------------------
// Entry point

inline int exit_code(const Error& e)
{
    const std::string c = e.category();
    if (c == "config")
        return 3;
    if (c == "io")
        return 4;
    if (c == "ingestion")
        return 5;
    if (c == "checkpoint")
        return 6;
    if (c == "contract")
        return 7;
    if (c == "training")
        return 8;
    return 1;
}

inline std::string one_line(std::string s)
{
    for (auto& ch : s)
        if (ch == '\n' || ch == '\r')
            ch = ' ';
    return s;
}

/// Runs one invocation; returns the process exit status. Errors are reported
/// as a single "error: <category>: <message>" line on `err`.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"Adversarial training with vanilla feature distillation"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags;  // config key -> raw value
    std::optional<std::string> eps_frac;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "INI run-config file");
        sub->add_option("--out", out_dir, "output directory (default: $VFDADV_OUT or ./vfdadv-out)");
        sub->add_option("--set", sets, "override any key: section.key=value")->allow_extra_args(false);
    };
    auto bind = [&](CLI::App* sub, const std::string& flag, std::vector<std::string> targets, const std::string& help) {
        sub->add_option_function<std::string>(
            flag,
            [&flags, targets](const std::string& v) {
                for (const auto& t : targets)
                    flags[t] = v;
            },
            help);
    };
    auto data_flags = [&](CLI::App* sub) {
        bind(sub, "--data", {"data.source"}, "dataset source");
        bind(sub, "--data-paths", {"data.paths"}, "comma-separated dataset files");
    };
    auto train_flags = [&](CLI::App* sub, bool adversarial) {
        bind(sub, "--arch", {"model.arch"}, "architecture id");
        bind(sub, "--widths", {"model.widths"}, "comma-separated widths");
        bind(sub, "--epochs", {"train.epochs"}, "");
        bind(sub, "--batch-size", {"train.batch_size"}, "");
        bind(sub, "--lr", {"train.lr"}, "");
        bind(sub, "--seed", {"train.seed"}, "training seed");
        bind(sub, "--checkpoint-every", {"train.checkpoint_every"}, "");
        if (adversarial) {
            bind(sub, "--method", {"train.method"}, "alp | trades | alp+vfd | trades+vfd");
            bind(sub, "--beta", {"loss.beta"}, "");
            bind(sub, "--lambda", {"loss.lambda"}, "");
            bind(sub, "--tap", {"loss.tap"}, "");
            bind(sub, "--vanilla", {"train.vanilla"}, "frozen teacher checkpoint");
            bind(sub, "--attack", {"attack.kind"}, "inner maximization: pgd | trades | fgsm");
            bind(sub, "--steps", {"attack.steps"}, "inner maximization steps");
        }
    };
    auto eval_flags = [&](CLI::App* sub) {
        bind(sub, "--checkpoint", {"eval.checkpoint"}, "model checkpoint");
        bind(sub, "--eval-seed", {"eval.seed"}, "");
        bind(sub, "--name", {"eval.name"}, "defense name in reports");
    };

    CLI::App* tv = app.add_subcommand("train-vanilla", "train the clean (teacher) model");
    common(tv);
    data_flags(tv);
    train_flags(tv, false);

    CLI::App* tr = app.add_subcommand("train", "adversarial training, optionally with feature distillation");
    common(tr);
    data_flags(tr);
    train_flags(tr, true);
    bind(tr, "--eps", {"attack.eps"}, "input-scale epsilon");
    tr->add_option("--eps-frac", eps_frac, "epsilon as a fraction, e.g. 8/255");

    CLI::App* at = app.add_subcommand("attack", "craft adversarials for the test split and report robust accuracy");
    common(at);
    data_flags(at);
    eval_flags(at);
    bind(at, "--method", {"eval.attacks"}, "pgd | fgsm | cw | trades");
    bind(at, "--eps", {"eval.eps"}, "input-scale epsilon");
    at->add_option("--eps-frac", eps_frac, "epsilon as a fraction, e.g. 8/255");
    bind(at, "--steps", {"eval.steps", "eval.cw_steps"}, "");
    bind(at, "--norm", {"eval.norm"}, "linf | l2");
    bind(at, "--kappa", {"eval.kappa"}, "");

    CLI::App* ev = app.add_subcommand("eval", "white-box and black-box robustness report");
    common(ev);
    data_flags(ev);
    eval_flags(ev);
    bind(ev, "--surrogate", {"eval.surrogate"}, "black-box surrogate checkpoint");
    bind(ev, "--attacks", {"eval.attacks"}, "comma-separated attacks");
    bind(ev, "--eps", {"eval.eps"}, "input-scale epsilon");
    ev->add_option("--eps-frac", eps_frac, "epsilon as a fraction, e.g. 8/255");

    CLI::App* sw = app.add_subcommand("sweep", "train and evaluate one model per grid value");
    common(sw);
    data_flags(sw);
    train_flags(sw, true);
    bind(sw, "--param", {"sweep.param"}, "beta | lambda | tap");
    bind(sw, "--grid", {"sweep.grid"}, "start:stop:step or comma list");
    bind(sw, "--jobs", {"sweep.jobs"}, "parallel grid points");
    bind(sw, "--eps", {"attack.eps", "eval.eps"}, "input-scale epsilon (training and evaluation)");
    sw->add_option("--eps-frac", eps_frac, "epsilon as a fraction, e.g. 8/255");

    CLI::App* ex = app.add_subcommand("export-features", "write tap features of clean and adversarial test inputs");
    common(ex);
    data_flags(ex);
    eval_flags(ex);
    bind(ex, "--tap", {"export.tap"}, "");
    bind(ex, "--max-per-class", {"export.max_per_class"}, "");
    bind(ex, "--attack", {"eval.attacks"}, "attack for the adversarial rows");

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: usage: " << one_line(e.what()) << '\n';
        return 2;
    }

    CLI::App* chosen = app.get_subcommands().front();
    const std::string name = chosen->get_name();
    try {
        RunConfig config;
        if (!config_path.empty())
            config.merge_file(config_path);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos)
                throw ConfigError("--set expects section.key=value, got '" + s + "'");
            config.set(s.substr(0, eq), s.substr(eq + 1));
        }
        for (const auto& [k, v] : flags)
            config.set(k, v);
        if (eps_frac) {
            const double eps = parse_epsilon(*eps_frac);
            for (const char* k : name == "train"   ? std::vector<const char*>{"attack.eps"}
                                 : name == "sweep" ? std::vector<const char*>{"attack.eps", "eval.eps"}
                                                   : std::vector<const char*>{"eval.eps"})
                config.set(k, io::format_double(eps));
        }
        if (out_dir.empty()) {
            const char* env = std::getenv("VFDADV_OUT");
            out_dir = env && *env ? env : "vfdadv-out";
        }
        Context ctx{config, out_dir, out};
        std::filesystem::create_directories(ctx.out);
        io::write_file(ctx.path("config.ini"), ctx.config.render());
        if (name == "train-vanilla")
            cmd_train(ctx, true);
        else if (name == "train")
            cmd_train(ctx, false);
        else if (name == "attack")
            cmd_attack(ctx);
        else if (name == "eval")
            cmd_eval(ctx);
        else if (name == "sweep")
            cmd_sweep(ctx);
        else
            cmd_export(ctx);
        return 0;
    } catch (const Error& e) {
        err << "error: " << e.category() << ": " << one_line(e.what()) << '\n';
        return exit_code(e);
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: io: " << one_line(e.what()) << '\n';
        return 4;
    } catch (const std::exception& e) {
        err << "error: internal: " << one_line(e.what()) << '\n';
        return 1;
    }
}

inline int run(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args);
}

}  // namespace vfd::cli
