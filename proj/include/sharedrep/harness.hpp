#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sharedrep/data.hpp"
#include "sharedrep/model.hpp"
#include "sharedrep/optim.hpp"

namespace sharedrep {

enum class SplitMode {
    Auto,   // fixed when every record carries a split tag, cv otherwise
    CV,     // k-fold: fold f is the test set, fold f+1 validation, the rest train
    Fixed,  // train/val/test split tags
};

enum class NoiseScope { Train, Test, Both };

const char* to_string(SplitMode m) noexcept;
const char* to_string(NoiseScope s) noexcept;
NoiseScope parse_noise_scope(const std::string& s);

struct ExperimentConfig {
    Task task = Task::Binary;
    Variant variant = Variant::SR;

    std::size_t epochs = 5;
    std::size_t batch_size = 8;
    double base_lr = 1e-4;
    double clip = 2.0;
    ClipMode clip_mode = ClipMode::Norm;
    double warmup_frac = 0.20;
    double final_frac = 0.10;
    AdamWConfig adamw;

    std::size_t folds = 5;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<int> levels{100, 90, 70, 50, 30, 10, 0};
    SplitMode split_mode = SplitMode::Auto;
    std::uint64_t mask_seed = 0x5EEDULL;

    std::size_t hidden1 = 512;
    std::size_t hidden2 = 256;
    double dropout = 0.2;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
    BnPooling bn_pooling = BnPooling::Pooled;

    /// Probability of hiding a training row's text (off by default).
    double modality_dropout = 0.0;
    /// Text availability applied to the validation set during checkpoint
    /// selection; 100 means full modality.
    int val_level = 100;
    bool l2_normalize = false;
    NoiseScope noise_scope = NoiseScope::Both;

    std::size_t threads = 1;

    void validate() const;
    ModelDims dims(std::size_t embed_dim, std::size_t classes) const;

    std::string to_json() const;
    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig load(const std::string& path);
    /// Hash of the canonical JSON form, excluding the thread count.
    std::string hash() const;
};

/// Primary metric: harmful-class F1 for the binary task, macro F1 otherwise.
double task_f1(Task task, std::span<const int> preds, std::span<const int> labels, std::size_t classes);

// ---------------------------------------------------------------------------
// Training

struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;
    bool clipped = false;
    bool skipped = false;  // non-finite gradient, no update applied
};

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double val_f1 = 0.0;
};

struct TrainResult {
    Model best;
    std::size_t best_epoch = 0;
    double best_val_f1 = -1.0;
    std::size_t total_steps = 0;
    ScheduleSpec schedule;
    std::vector<StepRecord> history;
    std::vector<EpochRecord> epochs;
};

/// Number of batches per epoch. A trailing batch of a single row is merged
/// into the previous one because train-mode batch norm needs two rows.
std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size);

/// Schedule used for a run of `total_steps` optimizer steps: the last step
/// (index total_steps - 1) receives final_frac * base_lr.
ScheduleSpec training_schedule(const ExperimentConfig& config, std::size_t total_steps);

/// Trains one model; returns the epoch checkpoint with the best validation F1
/// (the last epoch when `val` is empty).
TrainResult train(const ExperimentConfig& config, const Dataset& train_set, const Dataset& val,
                  std::uint64_t seed);

// ---------------------------------------------------------------------------
// Evaluation

struct SweepPoint {
    int level = 100;
    double f1 = 0.0;
    double f1_macro = 0.0;
    std::size_t text_present = 0;
    std::size_t n = 0;
};

double evaluate(const Model& model, const Dataset& test, Task task, const AvailabilityMask* mask);

std::vector<SweepPoint> evaluate_sweep(const Model& model, const Dataset& test,
                                       const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
    Task task = Task::Binary;
    Variant variant = Variant::SR;
    int level = 100;
    std::size_t fold = 0;
    std::uint64_t seed = 0;
    double f1 = 0.0;
    double f1_macro = 0.0;
    std::size_t text_present = 0;
    std::size_t n = 0;

    friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct Aggregate {
    Task task = Task::Binary;
    Variant variant = Variant::SR;
    int level = 100;
    std::size_t count = 0;
    double mean = 0.0;
    double std = 0.0;  // sample (n - 1) standard deviation
    double macro_mean = 0.0;
    double macro_std = 0.0;

    friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

/// Append-only result table.
class EvalReport {
public:
    std::string config_hash;
    std::string dataset_hash;
    std::string timestamp;

    /// Rejects a row whose (task, variant, level, fold, seed) already exists.
    void append(const ReportRow& row);
    void merge(const EvalReport& other);
    const std::vector<ReportRow>& rows() const noexcept { return rows_; }
    bool empty() const noexcept { return rows_.empty(); }

    /// Cells in first-appearance order of (task, variant, level).
    std::vector<Aggregate> aggregates() const;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;

private:
    std::vector<ReportRow> rows_;
};

std::string format_report_jsonl(const EvalReport& report, bool include_timestamp = true);

struct ParsedReport {
    EvalReport report;
    std::vector<Aggregate> aggregates;  // as written in the file
};

ParsedReport parse_report_jsonl(const std::string& text);

/// Plain-text table: one line per (task, variant), one column per level,
/// mean ± std of F1 in percent.
std::string format_report_table(const EvalReport& report);

/// Availability-vs-F1 curve, one polyline per variant.
std::string format_report_svg(const EvalReport& report);

enum ReportFormat : unsigned { kReportJsonl = 1, kReportTable = 2, kReportSvg = 4 };

/// Writes <dir>/<stem>.jsonl, .txt and/or .svg; returns the written paths.
std::vector<std::string> emit_report(const EvalReport& report, const std::string& dir,
                                     const std::string& stem = "report",
                                     unsigned formats = kReportJsonl | kReportTable);

// ---------------------------------------------------------------------------

struct Substitution {
    Dataset data;
    std::size_t replaced = 0;
};

/// Replaces the text embedding of every record whose id appears in `noisy`
/// with the noisy record's text (which may be absent).
Substitution substitute_noisy_text(Dataset ds, const Dataset& noisy);

/// Trains and sweeps every seed x fold cell for `config.variant`. With
/// `noisy`, text is substituted in the partitions chosen by
/// config.noise_scope. Cells may run in parallel; rows are appended in
/// (seed, fold) order regardless.
EvalReport run_experiment(const ExperimentConfig& config, const Dataset& dataset,
                          const Dataset* noisy = nullptr);

/// run_experiment for SR then FR under the same config.
EvalReport run_ablation(const ExperimentConfig& config, const Dataset& dataset,
                        const Dataset* noisy = nullptr);

/// Timestamp in UTC, ISO 8601.
std::string utc_timestamp();

}  // namespace sharedrep
