#include "sharedrep/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "binary_io.hpp"
#include "json.hpp"
#include "sharedrep/metrics.hpp"

namespace sharedrep {

using nlohmann::json;

const char* to_string(SplitMode m) noexcept {
    switch (m) {
        case SplitMode::Auto: return "auto";
        case SplitMode::CV: return "cv";
        case SplitMode::Fixed: return "fixed-split";
    }
    return "?";
}

const char* to_string(NoiseScope s) noexcept {
    switch (s) {
        case NoiseScope::Train: return "train";
        case NoiseScope::Test: return "test";
        case NoiseScope::Both: return "both";
    }
    return "?";
}

NoiseScope parse_noise_scope(const std::string& s) {
    if (s == "train") return NoiseScope::Train;
    if (s == "test") return NoiseScope::Test;
    if (s == "both") return NoiseScope::Both;
    throw ConfigError("unknown noise scope '" + s + "' (expected train, test or both)");
}

namespace {

SplitMode parse_split_mode(const std::string& s) {
    if (s == "auto") return SplitMode::Auto;
    if (s == "cv") return SplitMode::CV;
    if (s == "fixed-split" || s == "fixed") return SplitMode::Fixed;
    throw ConfigError("unknown split mode '" + s + "'");
}

const char* pooling_name(BnPooling p) { return p == BnPooling::Pooled ? "pooled" : "per-modality"; }

BnPooling parse_pooling(const std::string& s) {
    if (s == "pooled") return BnPooling::Pooled;
    if (s == "per-modality") return BnPooling::PerModality;
    throw ConfigError("unknown bn pooling '" + s + "'");
}

const char* clip_mode_name(ClipMode m) { return m == ClipMode::Norm ? "norm" : "value"; }

ClipMode parse_clip_mode(const std::string& s) {
    if (s == "norm") return ClipMode::Norm;
    if (s == "value") return ClipMode::Value;
    throw ConfigError("unknown clip mode '" + s + "' (expected norm or value)");
}

json config_json(const ExperimentConfig& c, bool with_threads) {
    json j = {
        {"task", to_string(c.task)},
        {"variant", to_string(c.variant)},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"base_lr", c.base_lr},
        {"clip", c.clip},
        {"clip_mode", clip_mode_name(c.clip_mode)},
        {"warmup_frac", c.warmup_frac},
        {"final_frac", c.final_frac},
        {"adamw",
         {{"beta1", c.adamw.beta1},
          {"beta2", c.adamw.beta2},
          {"eps", c.adamw.eps},
          {"weight_decay", c.adamw.weight_decay}}},
        {"folds", c.folds},
        {"seeds", c.seeds},
        {"levels", c.levels},
        {"split_mode", to_string(c.split_mode)},
        {"mask_seed", c.mask_seed},
        {"hidden1", c.hidden1},
        {"hidden2", c.hidden2},
        {"dropout", c.dropout},
        {"bn_eps", c.bn_eps},
        {"bn_momentum", c.bn_momentum},
        {"bn_pooling", pooling_name(c.bn_pooling)},
        {"modality_dropout", c.modality_dropout},
        {"val_level", c.val_level},
        {"l2_normalize", c.l2_normalize},
        {"noise_scope", to_string(c.noise_scope)},
    };
    if (with_threads) j["threads"] = c.threads;
    return j;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (batch norm)");
    if (!(base_lr > 0)) throw ConfigError("base_lr must be positive");
    if (!(clip > 0)) throw ConfigError("clip must be positive");
    ScheduleSpec{base_lr, 1, warmup_frac, final_frac}.validate();
    if (folds < 2) throw ConfigError("folds must be at least 2");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (levels.empty()) throw ConfigError("at least one availability level is required");
    for (int l : levels)
        if (!is_supported_level(l))
            throw ConfigError("availability level " + std::to_string(l) +
                              " not in {100, 90, 70, 50, 30, 10, 0}");
    if (!is_supported_level(val_level)) throw ConfigError("val_level must be a supported level");
    if (hidden1 == 0 || hidden2 == 0) throw ConfigError("hidden sizes must be positive");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
    if (!(modality_dropout >= 0 && modality_dropout < 1))
        throw ConfigError("modality_dropout must be in [0, 1)");
    if (!(bn_eps > 0) || !(bn_momentum > 0 && bn_momentum <= 1))
        throw ConfigError("invalid batch norm constants");
    if (threads == 0) throw ConfigError("threads must be positive");
}

ModelDims ExperimentConfig::dims(std::size_t embed_dim, std::size_t classes) const {
    ModelDims d;
    d.embed_dim = embed_dim;
    d.hidden1 = hidden1;
    d.hidden2 = hidden2;
    d.classes = classes;
    d.dropout = static_cast<Scalar>(dropout);
    d.bn_eps = static_cast<Scalar>(bn_eps);
    d.bn_momentum = static_cast<Scalar>(bn_momentum);
    return d;
}

std::string ExperimentConfig::to_json() const { return config_json(*this, true).dump(2); }

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    ExperimentConfig c;
    try {
        const json j = json::parse(text);
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        static const std::set<std::string> known = {
            "task", "variant", "epochs", "batch_size", "base_lr", "clip", "clip_mode",
            "warmup_frac", "final_frac", "adamw", "folds", "seeds", "levels", "split_mode",
            "mask_seed", "hidden1", "hidden2", "dropout", "bn_eps", "bn_momentum", "bn_pooling",
            "modality_dropout", "val_level", "l2_normalize", "noise_scope", "threads"};
        for (const auto& [key, _] : j.items())
            if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
        if (j.contains("task")) c.task = parse_task(j["task"].get<std::string>());
        if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.base_lr = j.value("base_lr", c.base_lr);
        c.clip = j.value("clip", c.clip);
        if (j.contains("clip_mode")) c.clip_mode = parse_clip_mode(j["clip_mode"].get<std::string>());
        c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
        c.final_frac = j.value("final_frac", c.final_frac);
        if (j.contains("adamw")) {
            const json& a = j["adamw"];
            c.adamw.beta1 = a.value("beta1", c.adamw.beta1);
            c.adamw.beta2 = a.value("beta2", c.adamw.beta2);
            c.adamw.eps = a.value("eps", c.adamw.eps);
            c.adamw.weight_decay = a.value("weight_decay", c.adamw.weight_decay);
        }
        c.folds = j.value("folds", c.folds);
        if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
        if (j.contains("levels")) c.levels = j["levels"].get<std::vector<int>>();
        if (j.contains("split_mode")) c.split_mode = parse_split_mode(j["split_mode"].get<std::string>());
        c.mask_seed = j.value("mask_seed", c.mask_seed);
        c.hidden1 = j.value("hidden1", c.hidden1);
        c.hidden2 = j.value("hidden2", c.hidden2);
        c.dropout = j.value("dropout", c.dropout);
        c.bn_eps = j.value("bn_eps", c.bn_eps);
        c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
        if (j.contains("bn_pooling")) c.bn_pooling = parse_pooling(j["bn_pooling"].get<std::string>());
        c.modality_dropout = j.value("modality_dropout", c.modality_dropout);
        c.val_level = j.value("val_level", c.val_level);
        c.l2_normalize = j.value("l2_normalize", c.l2_normalize);
        if (j.contains("noise_scope")) c.noise_scope = parse_noise_scope(j["noise_scope"].get<std::string>());
        c.threads = j.value("threads", c.threads);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    return from_json(detail::read_file(path));
}

std::string ExperimentConfig::hash() const {
    return detail::hex64(detail::fnv1a64(config_json(*this, false).dump()));
}

double task_f1(Task task, std::span<const int> preds, std::span<const int> labels, std::size_t classes) {
    return task == Task::Binary ? f1_binary(preds, labels, 1) : f1_macro(preds, labels, classes);
}

// ---------------------------------------------------------------------------

std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size) {
    if (n < 2) throw ConfigError("training needs at least 2 records");
    std::size_t steps = (n + batch_size - 1) / batch_size;
    if (n % batch_size == 1) --steps;
    return steps;
}

ScheduleSpec training_schedule(const ExperimentConfig& config, std::size_t total_steps) {
    if (total_steps == 0) throw ConfigError("schedule over zero steps");
    return ScheduleSpec{config.base_lr, total_steps - 1, config.warmup_frac, config.final_frac};
}

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        if (end - start == 1 && !batches.empty()) {
            batches.back().push_back(order[start]);
        } else {
            batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
        }
    }
    return batches;
}

std::size_t class_count_for(const ExperimentConfig& config, const Dataset& ds) {
    const std::size_t classes = ds.scheme.num_classes();
    if (config.task == Task::Binary && classes != 2)
        throw ConfigError("binary task on a " + std::to_string(classes) + "-class dataset");
    return classes;
}

}  // namespace

TrainResult train(const ExperimentConfig& config, const Dataset& train_set, const Dataset& val,
                  std::uint64_t seed) {
    config.validate();
    if (train_set.records.empty()) throw ConfigError("empty training set");
    const std::size_t classes = class_count_for(config, train_set);
    const std::size_t n = train_set.size();
    const std::size_t per_epoch = steps_per_epoch(n, config.batch_size);

    TrainResult result;
    result.total_steps = config.epochs * per_epoch;
    result.schedule = training_schedule(config, result.total_steps);

    Rng init_rng = Rng::stream(seed, 0);
    Rng dropout_rng = Rng::stream(seed, 2);
    Rng modality_rng = Rng::stream(seed, 3);
    Model model = Model::create(config.variant, config.dims(train_set.dim, classes), init_rng);
    std::vector<ParamRef> params = model.stack.parameters();
    AdamW optimizer(config.adamw, params);

    std::optional<AvailabilityMask> val_mask;
    if (!val.records.empty() && config.val_level != 100)
        val_mask = apply_availability_mask(std::span<const EmbeddingRecord>(val.records),
                                           config.val_level, config.mask_seed);

    result.best = model;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng = Rng::stream(seed, 100 + epoch);
        const auto batches = epoch_batches(n, config.batch_size, shuffle_rng);
        double loss_sum = 0.0;
        for (const auto& idx : batches) {
            ModalBatch batch = make_batch(train_set.records, idx);
            if (config.modality_dropout > 0) {
                for (std::size_t i = 0; i < batch.size(); ++i)
                    if (batch.text_present[i] && modality_rng.uniform() < config.modality_dropout)
                        batch.text_present[i] = false;
            }
            if (config.bn_pooling == BnPooling::PerModality && batch.text_count() == 1)
                std::fill(batch.text_present.begin(), batch.text_present.end(), false);

            StepRecord rec;
            rec.step = step;
            rec.epoch = epoch;
            rec.lr = lr_at(result.schedule, step);

            StackGrads grads;
            if (config.variant == Variant::SR) {
                SrForward fwd = sr_forward(model.stack, batch, Mode::Train, &dropout_rng, config.bn_pooling);
                LossResult loss = softmax_cross_entropy(fwd.fused, batch.labels);
                rec.loss = loss.loss;
                if (std::isfinite(loss.loss)) grads = sr_backward(model.stack, fwd.tape, loss.dlogits);
            } else {
                StackForward fwd = fr_forward(model.stack, batch, Mode::Train, &dropout_rng);
                LossResult loss = softmax_cross_entropy(fwd.logits, batch.labels);
                rec.loss = loss.loss;
                if (std::isfinite(loss.loss)) grads = stack_backward(model.stack, fwd.tape, loss.dlogits);
            }
            if (!std::isfinite(rec.loss))
                throw NumericError("training loss diverged at step " + std::to_string(step));

            auto grad_spans = grads.spans();
            try {
                const ClipResult clip = config.clip_mode == ClipMode::Norm
                                            ? clip_global_norm(grad_spans, config.clip)
                                            : clip_by_value(grad_spans, config.clip);
                rec.grad_norm = clip.norm;
                rec.clipped = clip.clipped;
            } catch (const NumericError&) {
                rec.skipped = true;
                rec.grad_norm = std::numeric_limits<double>::quiet_NaN();
            }
            if (!rec.skipped) {
                std::vector<std::span<const Scalar>> const_grads(grad_spans.begin(), grad_spans.end());
                optimizer.step(params, const_grads, rec.lr);
            }
            loss_sum += rec.loss;
            result.history.push_back(rec);
            ++step;
        }

        EpochRecord er;
        er.epoch = epoch;
        er.mean_loss = loss_sum / static_cast<double>(batches.size());
        if (!val.records.empty()) {
            er.val_f1 = evaluate(model, val, config.task, val_mask ? &*val_mask : nullptr);
            if (er.val_f1 > result.best_val_f1) {
                result.best_val_f1 = er.val_f1;
                result.best_epoch = epoch;
                result.best = model;
            }
        }
        result.epochs.push_back(er);
    }
    if (val.records.empty()) {
        result.best = model;
        result.best_epoch = config.epochs - 1;
    }
    return result;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<int> predictions(const Model& model, const Dataset& test, const AvailabilityMask* mask) {
    return predict(infer_logits(model, make_batch(test.records, mask)));
}

}  // namespace

double evaluate(const Model& model, const Dataset& test, Task task, const AvailabilityMask* mask) {
    const auto preds = predictions(model, test, mask);
    const auto labels = test.labels();
    return task_f1(task, preds, labels, model.stack.classes());
}

std::vector<SweepPoint> evaluate_sweep(const Model& model, const Dataset& test,
                                       const ExperimentConfig& config) {
    if (model.variant != config.variant)
        throw ConfigError(std::string("checkpoint variant ") + to_string(model.variant) +
                          " does not match config variant " + to_string(config.variant));
    if (test.records.empty()) throw UsageError("evaluation on an empty test set");
    const auto labels = test.labels();
    const std::size_t classes = model.stack.classes();
    std::vector<SweepPoint> out;
    for (int level : config.levels) {
        const AvailabilityMask mask =
            apply_availability_mask(std::span<const EmbeddingRecord>(test.records), level, config.mask_seed);
        const auto preds = predictions(model, test, &mask);
        SweepPoint p;
        p.level = level;
        p.f1 = task_f1(config.task, preds, labels, classes);
        p.f1_macro = f1_macro(preds, labels, classes);
        p.text_present = mask.count();
        p.n = test.size();
        out.push_back(p);
    }
    return out;
}

// ---------------------------------------------------------------------------

void EvalReport::append(const ReportRow& row) {
    for (const auto& r : rows_)
        if (r.task == row.task && r.variant == row.variant && r.level == row.level &&
            r.fold == row.fold && r.seed == row.seed)
            throw UsageError("report already holds a row for this (task, variant, level, fold, seed)");
    rows_.push_back(row);
}

void EvalReport::merge(const EvalReport& other) {
    for (const auto& r : other.rows()) append(r);
}

std::vector<Aggregate> EvalReport::aggregates() const {
    using Key = std::tuple<Task, Variant, int>;
    std::vector<Key> order;
    std::map<Key, std::vector<const ReportRow*>> cells;
    for (const auto& r : rows_) {
        Key k{r.task, r.variant, r.level};
        auto [it, inserted] = cells.try_emplace(k);
        if (inserted) order.push_back(k);
        it->second.push_back(&r);
    }
    const auto mean_std = [](const std::vector<double>& v) {
        const double n = static_cast<double>(v.size());
        double s = 0.0;
        for (double x : v) s += x;
        const double mean = s / n;
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        const double sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        return std::pair{mean, sd};
    };
    std::vector<Aggregate> out;
    for (const auto& k : order) {
        const auto& members = cells[k];
        std::vector<double> f1, macro;
        for (const auto* r : members) {
            f1.push_back(r->f1);
            macro.push_back(r->f1_macro);
        }
        Aggregate a;
        std::tie(a.task, a.variant, a.level) = k;
        a.count = members.size();
        std::tie(a.mean, a.std) = mean_std(f1);
        std::tie(a.macro_mean, a.macro_std) = mean_std(macro);
        out.push_back(a);
    }
    return out;
}

std::string format_report_jsonl(const EvalReport& report, bool include_timestamp) {
    std::ostringstream out;
    json meta = {{"kind", "meta"},
                 {"config_hash", report.config_hash},
                 {"dataset_hash", report.dataset_hash}};
    if (include_timestamp) meta["timestamp"] = report.timestamp;
    out << meta.dump() << '\n';
    for (const auto& r : report.rows()) {
        json j = {{"kind", "row"},          {"task", to_string(r.task)},
                  {"variant", to_string(r.variant)}, {"level", r.level},
                  {"fold", r.fold},         {"seed", r.seed},
                  {"f1", r.f1},             {"f1_macro", r.f1_macro},
                  {"text_present", r.text_present}, {"n", r.n}};
        out << j.dump() << '\n';
    }
    for (const auto& a : report.aggregates()) {
        json j = {{"kind", "aggregate"},     {"task", to_string(a.task)},
                  {"variant", to_string(a.variant)}, {"level", a.level},
                  {"count", a.count},        {"mean", a.mean},
                  {"std", a.std},            {"macro_mean", a.macro_mean},
                  {"macro_std", a.macro_std}};
        out << j.dump() << '\n';
    }
    return out.str();
}

ParsedReport parse_report_jsonl(const std::string& text) {
    ParsedReport parsed;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            const std::string kind = j.at("kind").get<std::string>();
            if (kind == "meta") {
                parsed.report.config_hash = j.value("config_hash", "");
                parsed.report.dataset_hash = j.value("dataset_hash", "");
                parsed.report.timestamp = j.value("timestamp", "");
            } else if (kind == "row") {
                ReportRow r;
                r.task = parse_task(j.at("task").get<std::string>());
                r.variant = parse_variant(j.at("variant").get<std::string>());
                r.level = j.at("level").get<int>();
                r.fold = j.at("fold").get<std::size_t>();
                r.seed = j.at("seed").get<std::uint64_t>();
                r.f1 = j.at("f1").get<double>();
                r.f1_macro = j.at("f1_macro").get<double>();
                r.text_present = j.at("text_present").get<std::size_t>();
                r.n = j.at("n").get<std::size_t>();
                parsed.report.append(r);
            } else if (kind == "aggregate") {
                Aggregate a;
                a.task = parse_task(j.at("task").get<std::string>());
                a.variant = parse_variant(j.at("variant").get<std::string>());
                a.level = j.at("level").get<int>();
                a.count = j.at("count").get<std::size_t>();
                a.mean = j.at("mean").get<double>();
                a.std = j.at("std").get<double>();
                a.macro_mean = j.at("macro_mean").get<double>();
                a.macro_std = j.at("macro_std").get<double>();
                parsed.aggregates.push_back(a);
            } else {
                throw DataError("unknown record kind '" + kind + "'");
            }
        } catch (const json::exception& e) {
            throw LoadError("report line " + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw LoadError("report line " + std::to_string(line_no) + ": " + e.what());
        } catch (const ConfigError& e) {
            throw LoadError("report line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return parsed;
}

namespace {

std::vector<int> report_levels(const std::vector<Aggregate>& aggs) {
    std::vector<int> levels;
    for (const auto& a : aggs)
        if (std::find(levels.begin(), levels.end(), a.level) == levels.end()) levels.push_back(a.level);
    std::sort(levels.rbegin(), levels.rend());
    return levels;
}

}  // namespace

std::string format_report_table(const EvalReport& report) {
    const auto aggs = report.aggregates();
    const auto levels = report_levels(aggs);
    std::vector<std::pair<Task, Variant>> lines;
    for (const auto& a : aggs)
        if (std::find(lines.begin(), lines.end(), std::pair{a.task, a.variant}) == lines.end())
            lines.emplace_back(a.task, a.variant);

    std::ostringstream out;
    char buf[64];
    out << "F1 (%) by text availability; mean ± sample std over runs\n";
    out << "task        variant";
    for (int l : levels) {
        std::snprintf(buf, sizeof buf, "%14s", (std::to_string(l) + "%").c_str());
        out << buf;
    }
    out << '\n';
    for (const auto& [task, variant] : lines) {
        std::snprintf(buf, sizeof buf, "%-11s %-7s", to_string(task), to_string(variant));
        out << buf;
        for (int l : levels) {
            auto it = std::find_if(aggs.begin(), aggs.end(), [&](const Aggregate& a) {
                return a.task == task && a.variant == variant && a.level == l;
            });
            if (it == aggs.end()) {
                std::snprintf(buf, sizeof buf, "%14s", "-");
            } else {
                std::snprintf(buf, sizeof buf, "%8.1f ±%4.1f", 100.0 * it->mean, 100.0 * it->std);
            }
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

std::string format_report_svg(const EvalReport& report) {
    const auto aggs = report.aggregates();
    const auto levels = report_levels(aggs);
    constexpr double width = 480, height = 320, margin = 48;
    const double plot_w = width - 2 * margin, plot_h = height - 2 * margin;
    const auto x_of = [&](std::size_t i) {
        return levels.size() < 2 ? margin + plot_w / 2
                                 : margin + plot_w * static_cast<double>(i) / double(levels.size() - 1);
    };
    const auto y_of = [&](double f1) { return margin + plot_h * (1.0 - f1); };
    static constexpr const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << margin << "\" y1=\"" << margin + plot_h << "\" x2=\"" << margin + plot_w
        << "\" y2=\"" << margin + plot_h << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
        << margin + plot_h << "\" stroke=\"black\"/>\n";
    for (std::size_t i = 0; i < levels.size(); ++i)
        out << "<text x=\"" << x_of(i) << "\" y=\"" << margin + plot_h + 16
            << "\" text-anchor=\"middle\">" << levels[i] << "%</text>\n";
    for (int t = 0; t <= 4; ++t)
        out << "<text x=\"" << margin - 6 << "\" y=\"" << y_of(t / 4.0) + 4
            << "\" text-anchor=\"end\">" << t * 25 << "</text>\n";
    out << "<text x=\"" << margin + plot_w / 2 << "\" y=\"" << height - 8
        << "\" text-anchor=\"middle\">text availability</text>\n";

    std::vector<std::pair<Task, Variant>> series;
    for (const auto& a : aggs)
        if (std::find(series.begin(), series.end(), std::pair{a.task, a.variant}) == series.end())
            series.emplace_back(a.task, a.variant);
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = colors[s % 4];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < levels.size(); ++i)
            for (const auto& a : aggs)
                if (a.task == series[s].first && a.variant == series[s].second && a.level == levels[i])
                    out << x_of(i) << ',' << y_of(a.mean) << ' ';
        out << "\"/>\n";
        out << "<text x=\"" << margin + plot_w - 4 << "\" y=\"" << margin + 14 * double(s + 1)
            << "\" text-anchor=\"end\" fill=\"" << color << "\">" << to_string(series[s].second)
            << " (" << to_string(series[s].first) << ")</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

std::vector<std::string> emit_report(const EvalReport& report, const std::string& dir,
                                     const std::string& stem, unsigned formats) {
    if (report.empty()) throw UsageError("refusing to emit an empty report");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
    std::vector<std::string> written;
    const auto base = std::filesystem::path(dir) / stem;
    const auto emit = [&](const char* ext, const std::string& body) {
        const std::string path = base.string() + ext;
        detail::write_file(path, body);
        written.push_back(path);
    };
    if (formats & kReportJsonl) emit(".jsonl", format_report_jsonl(report));
    if (formats & kReportTable) emit(".txt", format_report_table(report));
    if (formats & kReportSvg) emit(".svg", format_report_svg(report));
    return written;
}

// ---------------------------------------------------------------------------

Substitution substitute_noisy_text(Dataset ds, const Dataset& noisy) {
    std::map<std::string, const EmbeddingRecord*> by_id;
    for (const auto& r : noisy.records) {
        if (r.text && r.text->size() != ds.dim)
            throw DataError("noisy record '" + r.id + "': text length " +
                            std::to_string(r.text->size()) + " != d " + std::to_string(ds.dim));
        by_id[r.id] = &r;
    }
    Substitution out;
    for (auto& r : ds.records) {
        auto it = by_id.find(r.id);
        if (it == by_id.end()) continue;
        r.text = it->second->text;
        ++out.replaced;
    }
    out.data = std::move(ds);
    return out;
}

namespace {

Dataset prepare(const ExperimentConfig& config, Dataset ds) {
    ds.validate();
    if (config.l2_normalize) ds = l2_normalized(std::move(ds));
    if (config.task == Task::Binary && ds.scheme.kind == LabelScheme::Kind::Multiclass)
        ds = to_binary_labels(std::move(ds));
    class_count_for(config, ds);
    return ds;
}

struct Cell {
    std::uint64_t seed = 0;
    std::size_t fold = 0;
    std::vector<std::size_t> train, val, test;
};

std::vector<std::size_t> with_split(const Dataset& ds, Split s) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.records[i].split == s) out.push_back(i);
    return out;
}

std::vector<Cell> plan_cells(const ExperimentConfig& config, const Dataset& ds) {
    SplitMode mode = config.split_mode;
    if (mode == SplitMode::Auto) mode = ds.has_split_tags() ? SplitMode::Fixed : SplitMode::CV;
    std::vector<Cell> cells;
    if (mode == SplitMode::Fixed) {
        const auto tr = with_split(ds, Split::Train), va = with_split(ds, Split::Val),
                   te = with_split(ds, Split::Test);
        if (tr.empty() || te.empty())
            throw ConfigError("fixed-split mode needs records tagged train and test");
        for (auto seed : config.seeds) cells.push_back({seed, 0, tr, va, te});
        return cells;
    }
    const auto labels = ds.labels();
    for (auto seed : config.seeds) {
        const auto split = kfold_split(labels, config.folds, seed);
        const std::size_t k = split.folds.size();
        for (std::size_t f = 0; f < k; ++f) {
            Cell c{seed, f, {}, split.folds[(f + 1) % k].validation, split.folds[f].validation};
            for (std::size_t g = 0; g < k; ++g)
                if (g != f && g != (f + 1) % k)
                    c.train.insert(c.train.end(), split.folds[g].validation.begin(),
                                   split.folds[g].validation.end());
            std::sort(c.train.begin(), c.train.end());
            cells.push_back(std::move(c));
        }
    }
    return cells;
}

}  // namespace

EvalReport run_experiment(const ExperimentConfig& config, const Dataset& dataset, const Dataset* noisy) {
    config.validate();
    const Dataset clean = prepare(config, dataset);
    Dataset noisy_full;
    if (noisy) {
        Dataset n = *noisy;
        if (config.l2_normalize) n = l2_normalized(std::move(n));
        noisy_full = substitute_noisy_text(clean, n).data;
    }
    const bool noisy_train = noisy && config.noise_scope != NoiseScope::Test;
    const bool noisy_test = noisy && config.noise_scope != NoiseScope::Train;
    const Dataset& train_source = noisy_train ? noisy_full : clean;
    const Dataset& test_source = noisy_test ? noisy_full : clean;

    const auto cells = plan_cells(config, clean);
    std::vector<std::vector<ReportRow>> cell_rows(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());

    const long count = static_cast<long>(cells.size());
#pragma omp parallel for schedule(dynamic) num_threads(static_cast<int>(config.threads))
    for (long ci = 0; ci < count; ++ci) {
        try {
            const Cell& cell = cells[static_cast<std::size_t>(ci)];
            const std::uint64_t train_seed = splitmix64(cell.seed * 0x10001ULL + cell.fold);
            const TrainResult tr = train(config, subset(train_source, cell.train),
                                         subset(train_source, cell.val), train_seed);
            const Dataset test = subset(test_source, cell.test);
            for (const SweepPoint& p : evaluate_sweep(tr.best, test, config)) {
                cell_rows[static_cast<std::size_t>(ci)].push_back(
                    {config.task, config.variant, p.level, cell.fold, cell.seed, p.f1, p.f1_macro,
                     p.text_present, p.n});
            }
        } catch (...) {
            errors[static_cast<std::size_t>(ci)] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    EvalReport report;
    report.config_hash = config.hash();
    report.dataset_hash = detail::hex64(dataset_fingerprint(clean));
    report.timestamp = utc_timestamp();
    for (const auto& rows : cell_rows)
        for (const auto& r : rows) report.append(r);
    return report;
}

EvalReport run_ablation(const ExperimentConfig& config, const Dataset& dataset, const Dataset* noisy) {
    ExperimentConfig sr = config;
    sr.variant = Variant::SR;
    ExperimentConfig fr = config;
    fr.variant = Variant::FR;
    EvalReport report = run_experiment(sr, dataset, noisy);
    report.merge(run_experiment(fr, dataset, noisy));
    return report;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace sharedrep
