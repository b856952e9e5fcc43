#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "poisoncap/features.hpp"

// A small from-scratch feedforward classifier over flow-feature rows.
// ReLU hidden layers, a logistic or softmax head, Adam, per-feature
// standardization learned from the training split and baked into the model.
// All arithmetic is sequential double math: the same seed gives bit-identical
// weights on any platform.

namespace poisoncap {

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class LossKind { BinaryCrossEntropy, CategoricalCrossEntropy };

struct TrainConfig {
    std::vector<int> hidden = {64, 32, 16};
    LossKind loss = LossKind::BinaryCrossEntropy;
    int epochs = 60;
    int batch = 256;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;
    bool verbose = false; // per-epoch loss lines on stderr
};

// Rows in row-major storage; y holds class ids into `classes`.
// Class id 0 is always "benign" when that label is present.
struct Dataset {
    std::size_t dim = 0;
    std::vector<double> x; // n * dim
    std::vector<int> y;
    std::vector<std::string> classes;

    std::size_t size() const { return y.size(); }
    const double* row(std::size_t i) const { return x.data() + i * dim; }
    void push_row(const std::vector<double>& values, int label);
};

// Builds a dataset from labeled feature rows. Label -> class id mapping:
// "benign" is class 0 if present; remaining labels sorted lexicographically.
// With binarize = true every non-benign label collapses into class 1
// ("attack"). Mixed row widths throw TrainingError.
Dataset make_dataset(const std::vector<FeatureVector>& rows, bool binarize);

struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::size_t> counts; // actual * classes + predicted

    std::size_t at(std::size_t actual, std::size_t predicted) const {
        return counts[actual * classes + predicted];
    }
    std::string to_text(const std::vector<std::string>& names) const;
};

struct Evaluation {
    double accuracy = 0.0;
    ConfusionMatrix confusion;
};

class IdsModel {
public:
    // Layer sizes including input and output units; the output layer has 1
    // unit for the logistic head, class-count units for softmax.
    std::vector<int> dims;
    LossKind loss = LossKind::BinaryCrossEntropy;
    std::vector<std::vector<double>> weights; // per layer, row-major out x in
    std::vector<std::vector<double>> biases;
    std::vector<double> feat_mean; // standardization, learned at train time
    std::vector<double> feat_std;  // constant features get std 1
    std::vector<std::string> classes;

    std::size_t input_dim() const { return dims.empty() ? 0 : dims.front(); }
    std::size_t class_count() const { return classes.size(); }

    // Probability per class (sums to 1). A zero-weight binary model answers
    // exactly 0.5 / 0.5.
    std::vector<double> predict_proba(const double* row) const;
    std::vector<double> predict_proba(const std::vector<double>& row) const;
    // Arg-max class id, ties resolved toward the lower id.
    int predict_class(const double* row) const;

    // Post-ReLU activations of the last hidden layer, one row per input row.
    // (n x last_hidden_width, row-major).
    std::vector<double> hidden_activations(const Dataset& data) const;
    std::size_t last_hidden_width() const { return dims[dims.size() - 2]; }

    // Versioned binary container, doubles stored bit-exactly.
    void save(const std::string& path) const;
    static IdsModel load(const std::string& path);
};

// Trains on the dataset. Throws TrainingError on NaN/non-finite loss (the
// message names the epoch and batch), on empty data, and on width mismatch.
// A single-class dataset trains degenerately and warns on stderr.
IdsModel train(const Dataset& data, const TrainConfig& cfg);

Evaluation evaluate(const IdsModel& model, const Dataset& data);

// Mean loss over the batch plus d(loss)/d(param) for every weight and bias,
// ordered [W0, b0, W1, b1, ...]. This is the training-time gradient path,
// exposed so tests can difference it against the forward pass.
std::pair<double, std::vector<double>> loss_and_gradients(
    const IdsModel& model, const Dataset& data,
    const std::vector<std::size_t>& batch_rows);

} // namespace poisoncap
