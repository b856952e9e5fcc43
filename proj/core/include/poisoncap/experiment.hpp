#pragma once

// End-to-end experiment orchestration: corpus generation, poisoned training
// set assembly at a chosen percentage, clean-label training, attack-phase
// evaluation (trigger success rate), a label-flipping baseline for
// comparison, and grid sweeps over burst/delay/percentage/feature-set.
//
// Seeding: one master seed drives everything. Component seeds are derived
// from it with stable tags (corpus, injection, split, training, baseline),
// so any run is reproducible bit for bit from the master seed alone.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "poisoncap/features.hpp"
#include "poisoncap/inject.hpp"
#include "poisoncap/model.hpp"
#include "poisoncap/synth.hpp"

namespace poisoncap {

class ExperimentError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    SynthConfig synth;       // synth.seed is overridden from the master seed
    TriggerConfig trigger;   // poison-phase knobs; seed/allowlist set per run
    std::size_t attacker_device = 0; // device whose capture gets poisoned
    double backdoor_percentage = 2.0; // % of the clean training rows
    FeatureSet feature_set = FeatureSet::All;
    TrainConfig train;       // train.seed is overridden from the master seed
    double train_fraction = 0.8;

    // Sweep axes; an empty axis means "the single configured value above".
    std::vector<std::uint32_t> sweep_burst;
    std::vector<std::uint64_t> sweep_delay_usec;
    std::vector<double> sweep_percentage;
    std::vector<FeatureSet> sweep_feature_sets;
};

// Key = value text file, '#' comments. Unknown keys are errors.
ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config(const std::string& text);
std::string config_to_text(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Training-set assembly

struct AssembledData {
    Dataset train; // binary labels; clean rows followed by the poisoned rows
    Dataset test;  // clean rows only
    std::size_t clean_train_rows = 0;
    std::size_t poison_rows = 0;
    // Rows of `train` that came from the poisoned pool (always labeled benign).
    std::vector<std::size_t> poison_train_indices;
};

// Stratified seeded split of the clean rows into train/test by label, then
// floor(backdoor_percentage% of the clean training rows) rows seeded-sampled
// from the poisoned pool are appended to the training set. Poisoned rows are
// labeled benign unconditionally — there is no code path that gives them an
// attack label. The test set never contains poisoned rows. Errors if the
// pool is too small for the requested percentage (reporting the achievable
// maximum).
AssembledData assemble_training_set(const std::vector<FeatureVector>& clean,
                                    const std::vector<FeatureVector>& poisoned_benign,
                                    double backdoor_percentage,
                                    std::uint64_t seed,
                                    double train_fraction = 0.8);

// ---------------------------------------------------------------------------
// Attack evaluation

struct EvalReport {
    // Provenance.
    std::uint64_t seed = 0;
    double backdoor_percentage = 0.0;
    std::uint32_t burst = 0;
    std::uint64_t delay_usec = 0;
    FeatureSet feature_set = FeatureSet::All;
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
    std::size_t poison_rows = 0;

    // Clean-test behavior of the (possibly backdoored) model.
    double clean_accuracy = 0.0;
    ConfusionMatrix confusion;
    std::vector<std::string> class_names;

    // Attack-phase behavior.
    double asr = 0.0;                        // trigger rows predicted benign
    std::size_t trigger_rows = 0;            // crafted rows in the attack capture
    double poisoned_attack_miss_rate = 0.0;  // all rows of the poisoned capture
    double unpoisoned_attack_miss_rate = 0.0;

    // Baseline comparison (filled when the label-flip search ran).
    std::optional<double> baseline_flip_percentage; // >100 = unreachable
    std::optional<std::size_t> baseline_flipped_rows;

    double data_modified_percentage() const {
        return train_rows ? 100.0 * static_cast<double>(poison_rows) /
                                static_cast<double>(train_rows)
                          : 0.0;
    }
    std::string to_text() const;
};

struct AttackEvaluation {
    double asr = 0.0;
    std::size_t trigger_rows = 0;
    std::size_t attack_rows = 0; // rows in the poisoned capture
    double poisoned_attack_miss_rate = 0.0;
    double unpoisoned_attack_miss_rate = 0.0;
    // Extraction of the poisoned attack capture plus per-row trigger tags,
    // for activation-clustering runs. Cleared when keep_rows is false.
    Dataset poisoned_rows;
    std::vector<bool> injected;
};

// Attack phase: inject triggers into every eligible packet of the clean
// attack capture (selection ratio forced to 1, allowlist cleared), extract
// features, and measure how the model classifies the result. The trigger
// success rate counts crafted rows the model calls benign; the miss rates
// count benign predictions over all rows of the poisoned and of the original
// capture.
AttackEvaluation evaluate_attack(const IdsModel& model, const Trace& clean_attack,
                                 const TriggerConfig& trigger, FeatureSet fs,
                                 bool keep_rows = true);

// ---------------------------------------------------------------------------
// Label-flipping baseline

struct BaselineReport {
    double flip_percentage = 0.0;
    std::size_t flipped_rows = 0;
    double attack_miss_rate = 0.0; // attack test rows predicted benign
    double clean_accuracy = 0.0;   // accuracy over the whole test set
    std::string to_text() const;
};

// Flip flip_percentage% of the attack-labeled training rows to benign
// (seeded choice), train, and measure the attack miss rate on the clean test
// split.
BaselineReport run_label_flip_baseline(const Dataset& train, const Dataset& test,
                                       double flip_percentage,
                                       const TrainConfig& tcfg, std::uint64_t seed);

struct BaselineSearch {
    double target_miss_rate = 0.0;
    // Smallest flip percentage (to within 5 points) whose miss rate reaches
    // the target; 101 when even flipping everything falls short.
    double required_flip_percentage = 0.0;
    std::size_t flipped_rows = 0;
    std::vector<BaselineReport> probes;
};

// Bisection over the flip percentage (0..100, resolution 5 points).
BaselineSearch find_label_flip_equivalent(const Dataset& train, const Dataset& test,
                                          double target_miss_rate,
                                          const TrainConfig& tcfg,
                                          std::uint64_t seed);

// ---------------------------------------------------------------------------
// Full pipeline

struct ExperimentArtifacts {
    AssembledData data;
    InjectionReport poison_report; // injection stats on the observed device's capture
    IdsModel model;                // trained on the poisoned training set
    EvalReport report;
    AttackEvaluation attack;       // row-level attack data (for the defense)
    std::optional<IdsModel> clean_model; // poison-free counterpart, on request
    double clean_model_accuracy = 0.0;
};

// corpus generation -> device sub-capture -> trigger injection -> feature
// extraction -> poisoned assembly -> training -> clean-test + attack-phase
// evaluation. With train_clean_counterpart a second model is trained on the
// same split without the poisoned rows (for the accuracy-drop comparison).
ExperimentArtifacts run_experiment(const ExperimentConfig& cfg,
                                   bool train_clean_counterpart,
                                   bool run_baseline_search);

// Rows of `candidates` the model predicts benign, tags kept aligned.
std::pair<Dataset, std::vector<bool>> benign_predicted_rows(
    const IdsModel& model, const Dataset& candidates,
    const std::vector<bool>& triggered);

// ---------------------------------------------------------------------------
// Sweeps

struct SweepCell {
    std::uint32_t burst = 0;
    std::uint64_t delay_usec = 0;
    double backdoor_percentage = 0.0;
    FeatureSet feature_set = FeatureSet::All;
    bool failed = false;
    std::string error;
    EvalReport report;
};

// Grid over {burst} x {delay} x {percentage} x {feature set}. The corpus is
// generated once from the master seed and shared; each cell runs the full
// poison/train/evaluate pipeline. A failing cell is recorded and the sweep
// continues.
std::vector<SweepCell> run_sweep(const ExperimentConfig& cfg);

// One row per cell, tab-separated, deterministic formatting (no wallclock).
std::string sweep_table(const std::vector<SweepCell>& cells);
void write_sweep_table(const std::string& path, const std::vector<SweepCell>& cells);

} // namespace poisoncap
