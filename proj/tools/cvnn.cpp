// cvnn: data generation, training, evaluation, gradient checks and variant
// comparisons from the command line.
//
// Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O error,
// 4 numerical divergence.

#include "cvnn/data.hpp"
#include "cvnn/gradcheck.hpp"
#include "cvnn/kernels.hpp"
#include "cvnn/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace cvnn;

namespace {

enum Exit { kOk = 0, kVerify = 1, kUsage = 2, kIo = 3, kDiverged = 4 };

/// Shortest round-trip decimal, so CSV values compare exactly with the JSON log.
std::string num(double v)
{
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

struct UsageError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Options shared by train and compare.

struct ModelFlags {
    std::string model = "cvgg";
    double width_mult = 1.0;
    std::string pool = "area";
    std::string activation = "crelu";
    std::string readout = "modulus";
    bool amplitude_only = false;
    std::size_t input_size = 0;  // 0: use the stored slice size
    std::string data_dir;
    TrainConfig train;
};

void add_model_flags(CLI::App* app, ModelFlags& f)
{
    app->add_option("--model", f.model, "cvgg or cvnet5")->check(CLI::IsMember({"cvgg", "cvnet5"}));
    app->add_option("--width-mult", f.width_mult, "channel width multiplier")->check(CLI::PositiveNumber);
    app->add_option("--pool", f.pool, "real-split, amplitude or area")
        ->check(CLI::IsMember({"real-split", "amplitude", "area"}));
    app->add_option("--activation", f.activation, "crelu, ctanh, celu or cprelu")
        ->check(CLI::IsMember({"crelu", "ctanh", "celu", "cprelu"}));
    app->add_option("--readout", f.readout, "modulus, real or squared-modulus")
        ->check(CLI::IsMember({"modulus", "real", "squared-modulus"}));
    app->add_flag("--amplitude-only", f.amplitude_only, "phase-blind ablation");
    app->add_option("--input-size", f.input_size, "crop/pad slices to this size (0 keeps stored size)");
    app->add_option("--data-dir", f.data_dir, "directory with train.tsv, test.tsv, classes.txt")->required();
    app->add_option("--epochs", f.train.epochs)->check(CLI::PositiveNumber);
    app->add_option("--batch-size", f.train.batch_size)->check(CLI::PositiveNumber);
    app->add_option("--lr", f.train.learning_rate)->check(CLI::NonNegativeNumber);
    app->add_option("--seed", f.train.seed);
}

ModelSpec spec_from(const ModelFlags& f, std::size_t num_classes, std::size_t input_size)
{
    const auto act = parse_activation(f.activation);
    const auto pool = parse_pool_variant(f.pool);
    ModelSpec spec;
    try {
        spec = f.model == "cvgg" ? cvggnet_spec(num_classes, act, pool, f.width_mult, input_size)
                                 : cvnet5_spec(num_classes, act, pool, f.width_mult, input_size);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    spec.readout = parse_readout(f.readout);
    spec.amplitude_only = f.amplitude_only;
    return spec;
}

std::pair<Dataset, Dataset> load_splits(const ModelFlags& f)
{
    auto train = load_dataset(f.data_dir, "train", f.input_size);
    auto test = load_dataset(f.data_dir, "test", f.input_size);
    if (train.records.empty() || test.records.empty())
        throw UsageError("data directory " + f.data_dir + " has an empty split");
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// key=value configuration files. File values are injected ahead of the
// command-line arguments; every option keeps its last value, so flags win.

std::vector<std::string> config_args(const fs::path& path, CLI::App* sub)
{
    std::ifstream in(path);
    if (!in)
        throw IoError(IoErrc::Open, "cannot open config file " + path.string());
    std::vector<std::string> args;
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        const CLI::Option* opt = key == "config" ? nullptr : sub->get_option_no_throw("--" + key);
        if (!opt)
            throw UsageError(path.string() + ":" + std::to_string(lineno) + ": unknown key '" + key + "' for " +
                             sub->get_name());
        args.push_back("--" + key + "=" + value);
    }
    return args;
}

std::string resolved_config(const CLI::App* sub)
{
    std::ostringstream os;
    for (const CLI::Option* opt : sub->get_options()) {
        if (opt->get_lnames().empty())
            continue;
        const std::string& name = opt->get_lnames().front();
        if (name == "help" || name == "config")
            continue;
        std::string value;
        if (opt->count()) {
            value = opt->results().back();
        } else {
            value = opt->get_default_str();
            if (value.empty() && opt->get_expected_max() == 0)
                value = "false";
        }
        os << name << '=' << value << '\n';
    }
    return os.str();
}

void log_config(const CLI::App* sub)
{
    std::cerr << "# " << sub->get_name() << " resolved config (kernels: " << kernels::isa_name(kernels::active_isa())
              << ")\n";
    std::istringstream lines(resolved_config(sub));
    for (std::string line; std::getline(lines, line);)
        std::cerr << "#   " << line << '\n';
}

// ---------------------------------------------------------------------------
// Commands

struct GenFlags {
    PhaseDatasetConfig cfg;
    std::string out_dir;
};

int cmd_gen_data(const GenFlags& f)
{
    if (f.cfg.num_classes < 2)
        throw UsageError("--classes must be at least 2");
    if (f.cfg.size < 8)
        throw UsageError("--size must be at least 8");
    if (f.cfg.samples_per_class < 2)
        throw UsageError("--per-class must be at least 2");
    if (f.cfg.noise_sigma < 0)
        throw UsageError("--noise-sigma must be non-negative");
    try {
        phase_frequencies(f.cfg.num_classes, f.cfg.size);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    const auto ds = write_phase_dataset(f.cfg, f.out_dir);
    std::cout << "wrote " << ds.train.size() << " train + " << ds.test.size() << " test records, "
              << f.cfg.num_classes << " classes, " << f.cfg.size << "x" << f.cfg.size << ", to " << f.out_dir << '\n';
    return kOk;
}

nlohmann::json to_json(const MetricsRecord& r, bool wall_time)
{
    nlohmann::json j = {{"epoch", r.epoch},
                        {"train_loss", r.train_loss},
                        {"train_accuracy", r.train_accuracy},
                        {"test_accuracy", r.test_accuracy},
                        {"per_class_accuracy", r.per_class_accuracy}};
    if (wall_time)
        j["wall_time"] = r.wall_time;
    return j;
}

struct TrainFlags {
    ModelFlags m;
    std::string out;
    bool wall_time = false;
};

int cmd_train(const TrainFlags& f)
{
    auto [train_set, test_set] = load_splits(f.m);
    const auto spec = spec_from(f.m, train_set.num_classes(), train_set.image_size());
    Model<float> model(spec, f.m.train.seed);
    fs::create_directories(f.out);
    std::ofstream metrics(fs::path(f.out) / "metrics.jsonl", std::ios::trunc);
    if (!metrics)
        throw IoError(IoErrc::Open, "cannot write " + (fs::path(f.out) / "metrics.jsonl").string());

    const auto result = train(model, train_set, test_set, f.m.train, [&](const MetricsRecord& r) {
        metrics << to_json(r, f.wall_time).dump() << '\n';
        metrics.flush();
        std::fprintf(stderr, "epoch %zu/%zu loss %.6f train_acc %.4f test_acc %.4f (%.1fs)\n", r.epoch,
                     f.m.train.epochs, r.train_loss, r.train_accuracy, r.test_accuracy, r.wall_time);
    });
    save_checkpoint(fs::path(f.out) / "checkpoint.cvck", model, result.optimizer);

    const auto& last = result.history.back();
    std::ofstream csv(fs::path(f.out) / "summary.csv", std::ios::trunc);
    csv << "model,width_mult,pool,activation,amplitude_only,epochs,seed,train_loss,train_accuracy,test_accuracy\n";
    csv << spec.name << ',' << num(f.m.width_mult) << ',' << f.m.pool << ',' << f.m.activation << ','
        << (f.m.amplitude_only ? 1 : 0) << ',' << f.m.train.epochs << ',' << f.m.train.seed << ','
        << num(last.train_loss) << ',' << num(last.train_accuracy) << ',' << num(last.test_accuracy) << '\n';
    if (!metrics || !csv)
        throw IoError(IoErrc::Write, "failed writing outputs under " + f.out);
    std::cout << "test_accuracy " << num(last.test_accuracy) << '\n';
    return kOk;
}

struct EvalFlags {
    std::string checkpoint;
    std::string data_dir;
    std::string split = "test";
    std::size_t input_size = 0;
};

int cmd_eval(const EvalFlags& f)
{
    if (!fs::exists(f.checkpoint))
        throw IoError(IoErrc::Open, "checkpoint not found: " + f.checkpoint);
    auto ck = load_checkpoint(f.checkpoint);
    const auto data = load_dataset(f.data_dir, f.split, f.input_size);
    if (data.num_classes() != ck.model->spec().num_classes)
        throw UsageError("dataset has " + std::to_string(data.num_classes()) + " classes, checkpoint expects " +
                         std::to_string(ck.model->spec().num_classes));
    const auto r = evaluate(*ck.model, data);
    std::cout << "accuracy," << num(r.accuracy) << "\n\nclass,accuracy\n";
    for (std::size_t c = 0; c < r.per_class_accuracy.size(); ++c)
        std::cout << data.class_names[c] << ',' << num(r.per_class_accuracy[c]) << '\n';
    std::cout << "\ntrue\\predicted";
    for (const auto& name : data.class_names)
        std::cout << ',' << name;
    std::cout << '\n';
    for (std::size_t c = 0; c < r.confusion.size(); ++c) {
        std::cout << data.class_names[c];
        for (auto n : r.confusion[c])
            std::cout << ',' << n;
        std::cout << '\n';
    }
    return kOk;
}

struct GradFlags {
    std::string scope = "all";
    bool precision_check = false;
    std::uint64_t seed = 2024;
    std::string inject_fault;
};

int cmd_gradcheck(const GradFlags& f)
{
    GradcheckSuiteOptions opts;
    opts.scope = parse_gradcheck_scope(f.scope);
    opts.seed = f.seed;
    opts.precision_check = f.precision_check;
    opts.inject_fault = f.inject_fault;
    if (!f.inject_fault.empty()) {
        const auto ops = gradcheck_ops(opts.scope);
        if (std::find(ops.begin(), ops.end(), f.inject_fault) == ops.end())
            throw UsageError("--inject-fault: no op named '" + f.inject_fault + "' in scope " + f.scope);
    }
    const auto results = run_gradcheck_suite(opts);
    std::printf("op,checked,straddled,max_rel_error,precision_rel_error,status\n");
    bool ok = true;
    for (const auto& c : results) {
        const bool pass = passed(c);
        ok = ok && pass;
        char prec[32] = "-";
        if (c.precision_rel >= 0)
            std::snprintf(prec, sizeof prec, "%.3e", c.precision_rel);
        std::printf("%s,%zu,%zu,%.3e,%s,%s\n", c.op.c_str(), c.report.checked, c.report.straddled,
                    c.report.max_rel_error, prec, pass ? "pass" : "FAIL");
    }
    for (const auto& c : results) {
        if (passed(c))
            continue;
        if (c.report.failures.empty() && c.report.checked == 0)
            std::fprintf(stderr, "FAIL %s: no coordinate could be checked\n", c.op.c_str());
        for (const auto& x : c.report.failures) {
            std::fprintf(stderr, "FAIL %s: %s[%zu].%s analytic=%.9e numeric=%.9e rel=%.3e\n", c.op.c_str(),
                         x.param.c_str(), x.index, x.imag ? "im" : "re", x.analytic, x.numeric, x.rel_error);
            break;
        }
        if (c.report.passed)
            std::fprintf(stderr, "FAIL %s: float32/float64 gradient mismatch %.3e\n", c.op.c_str(), c.precision_rel);
    }
    return ok ? kOk : kVerify;
}

struct CompareFlags {
    ModelFlags m;
    std::string axis = "pooling";
    std::size_t repeats = 3;
    std::size_t threads = 1;
    std::string out;
};

int cmd_compare(const CompareFlags& f)
{
    auto [train_set, test_set] = load_splits(f.m);
    if (f.repeats < 1)
        throw UsageError("--repeats must be at least 1");
    const auto spec = spec_from(f.m, train_set.num_classes(), train_set.image_size());
    const auto results =
        compare_variants(spec, parse_compare_axis(f.axis), train_set, test_set, f.m.train, f.repeats, f.threads);
    std::ostringstream ranked, seeds;
    ranked << "variant,mean,std\n";
    seeds << "variant,seed,test_accuracy\n";
    for (const auto& r : results) {
        ranked << r.variant << ',' << num(r.mean) << ',' << num(r.std) << '\n';
        for (std::size_t i = 0; i < r.accuracies.size(); ++i)
            seeds << r.variant << ',' << r.seeds[i] << ',' << num(r.accuracies[i]) << '\n';
    }
    std::cout << ranked.str() << '\n' << seeds.str();
    if (!f.out.empty()) {
        fs::create_directories(f.out);
        std::ofstream(fs::path(f.out) / "ranking.csv") << ranked.str();
        std::ofstream(fs::path(f.out) / "per_seed.csv") << seeds.str();
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"complex-valued CNN experiments"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    GenFlags gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic phase-encoded dataset");
    gen_cmd->add_option("--classes", gen.cfg.num_classes);
    gen_cmd->add_option("--per-class", gen.cfg.samples_per_class);
    gen_cmd->add_option("--size", gen.cfg.size);
    gen_cmd->add_flag("--amp-discriminable", gen.cfg.amplitude_discriminable,
                      "class-dependent speckle scale (control condition)");
    gen_cmd->add_option("--noise-sigma", gen.cfg.noise_sigma);
    gen_cmd->add_option("--seed", gen.cfg.seed);
    gen_cmd->add_option("--out-dir", gen.out_dir)->required();

    TrainFlags tr;
    auto* train_cmd = app.add_subcommand("train", "train a model and write metrics and a checkpoint");
    add_model_flags(train_cmd, tr.m);
    train_cmd->add_option("--out", tr.out, "output directory")->required();
    train_cmd->add_flag("--wall-time", tr.wall_time, "include wall-clock seconds in metrics.jsonl");

    EvalFlags ev;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
    eval_cmd->add_option("--data-dir", ev.data_dir)->required();
    eval_cmd->add_option("--split", ev.split)->check(CLI::IsMember({"train", "test"}));
    eval_cmd->add_option("--input-size", ev.input_size);

    GradFlags gc;
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    grad_cmd->add_option("--scope", gc.scope)->check(CLI::IsMember({"layers", "model", "all"}));
    grad_cmd->add_flag("--precision-check", gc.precision_check, "also compare float32 against float64 gradients");
    grad_cmd->add_option("--seed", gc.seed);
    grad_cmd->add_option("--inject-fault", gc.inject_fault)->group("");  // negative-control fixture

    CompareFlags cmp;
    auto* cmp_cmd = app.add_subcommand("compare", "rank activation or pooling variants");
    add_model_flags(cmp_cmd, cmp.m);
    cmp_cmd->add_option("--axis", cmp.axis)->check(CLI::IsMember({"activation", "pooling"}));
    cmp_cmd->add_option("--repeats", cmp.repeats)->check(CLI::PositiveNumber);
    cmp_cmd->add_option("--threads", cmp.threads)->check(CLI::PositiveNumber);
    cmp_cmd->add_option("--out", cmp.out, "directory for ranking.csv and per_seed.csv");

    std::vector<CLI::App*> subs{gen_cmd, train_cmd, eval_cmd, grad_cmd, cmp_cmd};
    for (auto* s : subs)
        s->add_option("--config", "key=value file; command-line flags override it");

    try {
        // Splice config-file values in front of the command-line flags.
        std::vector<std::string> args(argv + 1, argv + argc);
        if (!args.empty()) {
            CLI::App* sub = nullptr;
            for (auto* s : subs)
                if (s->get_name() == args[0])
                    sub = s;
            for (std::size_t i = 1; sub && i < args.size(); ++i) {
                std::string path;
                if (args[i] == "--config" && i + 1 < args.size())
                    path = args[i + 1];
                else if (args[i].rfind("--config=", 0) == 0)
                    path = args[i].substr(9);
                if (path.empty())
                    continue;
                auto extra = config_args(path, sub);
                args.insert(args.begin() + 1, extra.begin(), extra.end());
                break;
            }
        }
        std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
        try {
            app.parse(args);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e);
            return code == 0 ? kOk : kUsage;
        }

        for (auto* s : subs)
            if (s->parsed())
                log_config(s);
        if (gen_cmd->parsed())
            return cmd_gen_data(gen);
        if (train_cmd->parsed())
            return cmd_train(tr);
        if (eval_cmd->parsed())
            return cmd_eval(ev);
        if (grad_cmd->parsed())
            return cmd_gradcheck(gc);
        return cmd_compare(cmp);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const IoError& e) {
        std::cerr << "I/O error (" << to_string(e.code()) << "): " << e.what() << '\n';
        return kIo;
    } catch (const DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << '\n';
        return kDiverged;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    }
}
