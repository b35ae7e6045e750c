#include "cvnn/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <mutex>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

namespace cvnn {

void TrainConfig::validate() const
{
    if (batch_size < 1)
        throw Error("train: batch size must be at least 1");
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate))
        throw Error("train: learning rate must be finite and non-negative");
    if (epochs < 1)
        throw Error("train: epochs must be at least 1");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0))
        throw Error("train: Adam betas must lie in [0,1) and eps must be positive");
}

void check_dataset(const Model<float>& model, const Dataset& data, const char* what)
{
    if (data.records.empty())
        throw Error(std::string(what) + ": dataset is empty");
    const auto& spec = model.spec();
    for (const auto& r : data.records) {
        if (r.label < 0 || std::size_t(r.label) >= spec.num_classes)
            throw Error(std::string(what) + ": label " + std::to_string(r.label) + " of " + r.id +
                        " is outside [0, " + std::to_string(spec.num_classes) + ")");
        const auto& s = r.image.shape();
        if (s.size() != 3 || s[0] != spec.in_channels || s[1] != spec.input_size || s[2] != spec.input_size)
            throw ShapeError(std::string(what) + ": image " + r.id + " has shape " + to_string(s) + ", model expects " +
                             std::to_string(spec.input_size) + "x" + std::to_string(spec.input_size));
    }
}

namespace {

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::vector<int> argmax_rows(const ComplexTensor<float>& logits)
{
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = logits.re().subspan(i * k, k);
        out[i] = int(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

}  // namespace

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, const TrainConfig& config, std::size_t epoch)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (config.shuffle) {
        std::mt19937_64 rng(splitmix64(config.seed ^ splitmix64(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += config.batch_size)
        batches.emplace_back(order.begin() + std::ptrdiff_t(i),
                             order.begin() + std::ptrdiff_t(std::min(n, i + config.batch_size)));
    if (batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back().front());
        batches.pop_back();
    }
    return batches;
}

EvalResult score_predictions(std::span<const int> predicted, std::span<const int> truth, std::size_t k)
{
    if (predicted.size() != truth.size())
        throw ShapeError("score_predictions: " + std::to_string(predicted.size()) + " predictions for " +
                         std::to_string(truth.size()) + " labels");
    if (truth.empty())
        throw Error("score_predictions: no samples");
    EvalResult r;
    r.total = truth.size();
    r.confusion.assign(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || std::size_t(truth[i]) >= k || predicted[i] < 0 || std::size_t(predicted[i]) >= k)
            throw Error("score_predictions: label outside [0, " + std::to_string(k) + ")");
        ++r.confusion[std::size_t(truth[i])][std::size_t(predicted[i])];
    }
    std::size_t correct = 0;
    r.per_class_accuracy.assign(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t row = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t(0));
        correct += r.confusion[c][c];
        r.per_class_accuracy[c] = row ? double(r.confusion[c][c]) / double(row) : 0.0;
    }
    r.accuracy = double(correct) / double(r.total);
    return r;
}

EvalResult evaluate(Model<float>& model, const Dataset& data, std::size_t batch_size)
{
    check_dataset(model, data, "evaluate");
    std::vector<int> predicted, truth;
    std::vector<std::size_t> idx;
    std::vector<int> labels;
    for (std::size_t i = 0; i < data.size(); i += batch_size) {
        idx.resize(std::min(batch_size, data.size() - i));
        std::iota(idx.begin(), idx.end(), i);
        const auto pred = model.predict(data.batch<float>(idx, &labels));
        predicted.insert(predicted.end(), pred.begin(), pred.end());
        truth.insert(truth.end(), labels.begin(), labels.end());
    }
    return score_predictions(predicted, truth, model.spec().num_classes);
}

double dataset_loss(Model<float>& model, const Dataset& data, std::size_t batch_size)
{
    check_dataset(model, data, "dataset_loss");
    double total = 0;
    std::vector<std::size_t> idx;
    std::vector<int> labels;
    for (std::size_t i = 0; i < data.size(); i += batch_size) {
        idx.resize(std::min(batch_size, data.size() - i));
        std::iota(idx.begin(), idx.end(), i);
        Tape<float> tape(false);
        const auto batch = data.batch<float>(idx, &labels);
        total += double(model.loss(tape, batch, labels, false).value().re()[0]) * double(idx.size());
    }
    return total / double(data.size());
}

TrainResult train(Model<float>& model, const Dataset& train_set, const Dataset& test_set, const TrainConfig& config,
                  EpochCallback on_epoch)
{
    return train(model, train_set, test_set, config, AdamState<float>::zeros_for(model.parameters()),
                 std::move(on_epoch));
}

TrainResult train(Model<float>& model, const Dataset& train_set, const Dataset& test_set, const TrainConfig& config,
                  AdamState<float> optimizer, EpochCallback on_epoch)
{
    config.validate();
    check_dataset(model, train_set, "train");
    check_dataset(model, test_set, "train (test set)");
    TrainResult result;
    result.optimizer = std::move(optimizer);
    auto& params = model.parameters();
    const auto adam = config.adam();
    const auto start = std::chrono::steady_clock::now();
    std::vector<int> labels;
    // A zero step size freezes the whole model, running statistics included,
    // so that evaluation after training matches the initial model.
    std::vector<std::vector<float>> frozen_buffers;
    if (config.learning_rate == 0)
        for (const auto& b : model.buffers())
            frozen_buffers.emplace_back(b.data.begin(), b.data.end());

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        double loss_sum = 0;
        std::size_t correct = 0;
        for (const auto& idx : epoch_batches(train_set.size(), config, epoch)) {
            const auto batch = train_set.batch<float>(idx, &labels);
            zero_grads(params);
            Tape<float> tape;
            const auto logits = model.forward(tape, batch, true);
            const auto loss = op::cross_entropy(tape, logits, labels);
            const float value = loss.value().re()[0];
            if (!std::isfinite(value))
                throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + " (value " +
                                      std::to_string(value) + ")");
            tape.backward(loss);
            adam_step(params, result.optimizer, adam);
            if (!frozen_buffers.empty()) {
                const auto buffers = model.buffers();
                for (std::size_t i = 0; i < buffers.size(); ++i)
                    std::copy(frozen_buffers[i].begin(), frozen_buffers[i].end(), buffers[i].data.begin());
            }
            loss_sum += double(value) * double(idx.size());
            const auto pred = argmax_rows(logits.value());
            for (std::size_t j = 0; j < pred.size(); ++j)
                correct += pred[j] == labels[j];
        }
        MetricsRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / double(train_set.size());
        rec.train_accuracy = double(correct) / double(train_set.size());
        const auto eval = evaluate(model, test_set);
        rec.test_accuracy = eval.accuracy;
        rec.per_class_accuracy = eval.per_class_accuracy;
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.history.push_back(rec);
        if (on_epoch)
            on_epoch(rec);
    }
    return result;
}

const char* to_string(CompareAxis axis)
{
    return axis == CompareAxis::Activation ? "activation" : "pooling";
}

CompareAxis parse_compare_axis(const std::string& name)
{
    if (name == "activation")
        return CompareAxis::Activation;
    if (name == "pooling")
        return CompareAxis::Pooling;
    throw Error("unknown comparison axis '" + name + "' (expected activation or pooling)");
}

std::vector<VariantResult> compare_variants(const ModelSpec& base, CompareAxis axis, const Dataset& train_set,
                                            const Dataset& test_set, const TrainConfig& config, std::size_t repeats,
                                            std::size_t threads)
{
    if (repeats < 1)
        throw Error("compare_variants: repeats must be at least 1");
    config.validate();

    std::vector<ModelSpec> specs;
    std::vector<VariantResult> results;
    if (axis == CompareAxis::Activation) {
        for (auto a : {ActivationKind::CReLU, ActivationKind::CTanh, ActivationKind::CELU, ActivationKind::CPReLU}) {
            specs.push_back(base);
            specs.back().activation = a;
            results.push_back({to_string(a), 0, 0, {}, {}});
        }
    } else {
        for (auto p : {PoolVariant::Area, PoolVariant::Amplitude, PoolVariant::RealSplit}) {
            specs.push_back(base);
            specs.back().pool = p;
            results.push_back({to_string(p), 0, 0, {}, {}});
        }
    }
    for (auto& r : results) {
        r.accuracies.assign(repeats, 0.0);
        for (std::size_t i = 0; i < repeats; ++i)
            r.seeds.push_back(config.seed + i);
    }

    // Jobs share nothing mutable, so their order of execution does not matter.
    const std::size_t jobs = specs.size() * repeats;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t j; (j = next++) < jobs;) {
            const std::size_t v = j / repeats, rep = j % repeats;
            try {
                TrainConfig cfg = config;
                cfg.seed = config.seed + rep;
                Model<float> model(specs[v], cfg.seed);
                const auto history = train(model, train_set, test_set, cfg).history;
                results[v].accuracies[rep] = history.back().test_accuracy;
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
                next = jobs;
            }
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, jobs);
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);

    for (auto& r : results) {
        const double n = double(repeats);
        r.mean = std::accumulate(r.accuracies.begin(), r.accuracies.end(), 0.0) / n;
        double ss = 0;
        for (double a : r.accuracies)
            ss += (a - r.mean) * (a - r.mean);
        r.std = repeats > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
    }
    std::stable_sort(results.begin(), results.end(),
                     [](const VariantResult& a, const VariantResult& b) { return a.mean > b.mean; });
    return results;
}

}  // namespace cvnn
