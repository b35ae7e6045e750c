#pragma once

#include "cvnn/data.hpp"
#include "cvnn/model.hpp"
#include "cvnn/optim.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cvnn {

struct TrainConfig {
    std::size_t batch_size = 32;
    double learning_rate = 1e-4;
    std::size_t epochs = 100;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    bool shuffle = true;

    /// Throws Error on batch_size < 1, learning_rate < 0 or epochs < 1.
    void validate() const;
    AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_eps}; }
};

struct MetricsRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0;
    double train_accuracy = 0;  // training-mode predictions seen during the epoch
    double test_accuracy = 0;
    std::vector<double> per_class_accuracy;  // on the test set
    double wall_time = 0;                    // seconds since training started
};

struct EvalResult {
    double accuracy = 0;
    std::vector<double> per_class_accuracy;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    std::size_t total = 0;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Accuracy, per-class accuracy and confusion matrix from predicted and true labels.
EvalResult score_predictions(std::span<const int> predicted, std::span<const int> truth, std::size_t num_classes);

/// Evaluation mode (BN running statistics).
EvalResult evaluate(Model<float>& model, const Dataset& data, std::size_t batch_size = 128);

/// Mean loss over the dataset in evaluation mode.
double dataset_loss(Model<float>& model, const Dataset& data, std::size_t batch_size = 128);

/// Checks that `data` is non-empty, matches the model's input size and has
/// labels below num_classes.
void check_dataset(const Model<float>& model, const Dataset& data, const char* what);

struct TrainResult {
    std::vector<MetricsRecord> history;
    AdamState<float> optimizer;
};

using EpochCallback = std::function<void(const MetricsRecord&)>;

/// Mini-batch Adam. Each epoch reshuffles with a seed derived from
/// (config.seed, epoch). A trailing batch of one sample joins the previous
/// batch because batch statistics of a single sample are degenerate.
TrainResult train(Model<float>& model, const Dataset& train_set, const Dataset& test_set, const TrainConfig& config,
                  EpochCallback on_epoch = {});

/// Continues from an existing optimizer state.
TrainResult train(Model<float>& model, const Dataset& train_set, const Dataset& test_set, const TrainConfig& config,
                  AdamState<float> optimizer, EpochCallback on_epoch = {});

/// Batch index order of one epoch.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, const TrainConfig& config, std::size_t epoch);

enum class CompareAxis { Activation, Pooling };

const char* to_string(CompareAxis axis);
CompareAxis parse_compare_axis(const std::string& name);

struct VariantResult {
    std::string variant;
    double mean = 0;
    double std = 0;  // sample standard deviation, 0 for one repeat
    std::vector<double> accuracies;
    std::vector<std::uint64_t> seeds;
};

/// Trains every value of `axis` once per repeat. Repeat r uses seed
/// config.seed + r for both initialization and shuffling, shared across
/// variants so that repeats are paired. Results are sorted by mean accuracy,
/// descending, ties kept in axis order.
std::vector<VariantResult> compare_variants(const ModelSpec& base, CompareAxis axis, const Dataset& train_set,
                                            const Dataset& test_set, const TrainConfig& config, std::size_t repeats,
                                            std::size_t threads = 1);

}  // namespace cvnn
