// Command-line front end: synthetic data, training, availability sweeps,
// SR/FR ablation, report rendering and OCR text metrics.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sharedrep/data.hpp"
#include "sharedrep/harness.hpp"
#include "sharedrep/metrics.hpp"

using namespace sharedrep;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    std::size_t threads = 1;
};

ExperimentConfig resolve_config(const Globals& g) {
    ExperimentConfig c = g.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(g.config_path);
    if (g.seed) c.seeds = {*g.seed};
    c.threads = g.threads;
    c.validate();
    return c;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

/// Train/validation partition for a single `train` run: split tags when
/// present, otherwise fold 0 of the cv plan (fold 1 validates).
std::pair<Dataset, Dataset> single_run_partition(const ExperimentConfig& config, const Dataset& ds,
                                                 std::uint64_t seed) {
    const bool fixed = config.split_mode == SplitMode::Fixed ||
                       (config.split_mode == SplitMode::Auto && ds.has_split_tags());
    std::vector<std::size_t> tr, va;
    if (fixed) {
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (ds.records[i].split == Split::Train) tr.push_back(i);
            if (ds.records[i].split == Split::Val) va.push_back(i);
        }
    } else {
        const auto split = kfold_split(ds.labels(), config.folds, seed);
        va = split.folds[1].validation;
        for (std::size_t g = 2; g < split.folds.size(); ++g)
            tr.insert(tr.end(), split.folds[g].validation.begin(), split.folds[g].validation.end());
        std::sort(tr.begin(), tr.end());
    }
    return {subset(ds, tr), subset(ds, va)};
}

Dataset task_dataset(const ExperimentConfig& config, Dataset ds) {
    if (config.l2_normalize) ds = l2_normalized(std::move(ds));
    if (config.task == Task::Binary && ds.scheme.kind == LabelScheme::Kind::Multiclass)
        ds = to_binary_labels(std::move(ds));
    return ds;
}

std::vector<int> parse_levels(const std::string& s) {
    std::vector<int> levels;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) levels.push_back(std::stoi(item));
    return levels;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Shared-representation multimodal classifier toolkit"};
    app.fallthrough();  // global options may follow the subcommand
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "Experiment config (JSON)");
    app.add_option("--seed", g.seed, "Seed; overrides the config's seed list");
    app.add_option("--out-dir", g.out_dir, "Output directory");
    app.add_option("--threads", g.threads, "Worker threads for seed x fold cells")->check(CLI::PositiveNumber);

    // synth
    SynthSpec synth;
    std::string synth_out;
    std::string synth_split;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic embedding dataset");
    synth_cmd->add_option("--classes", synth.classes)->capture_default_str();
    synth_cmd->add_option("--per-class", synth.per_class)->capture_default_str();
    synth_cmd->add_option("--dim", synth.dim)->capture_default_str();
    synth_cmd->add_option("--rho-text", synth.rho_text)->capture_default_str();
    synth_cmd->add_option("--rho-image", synth.rho_image)->capture_default_str();
    synth_cmd->add_option("--sigma", synth.sigma)->capture_default_str();
    synth_cmd->add_option("--out", synth_out, "Output prefix: writes PREFIX.json and PREFIX.mreb")->required();
    synth_cmd->add_option("--split", synth_split, "Tag splits, e.g. 0.7,0.1 (train,val; rest test)");

    // train
    std::string data_path;
    std::string variant_name;
    auto* train_cmd = app.add_subcommand("train", "Train one model and save the best checkpoint");
    train_cmd->add_option("--data", data_path, "Dataset manifest")->required();
    train_cmd->add_option("--variant", variant_name, "SR or FR (overrides config)");

    // eval
    std::string checkpoint_path;
    std::string levels_arg;
    std::optional<std::uint64_t> mask_seed;
    std::string eval_split = "test";
    auto* eval_cmd = app.add_subcommand("eval", "Availability sweep of a saved checkpoint");
    eval_cmd->add_option("--checkpoint", checkpoint_path)->required();
    eval_cmd->add_option("--data", data_path, "Dataset manifest")->required();
    eval_cmd->add_option("--levels", levels_arg, "Comma-separated availability levels");
    eval_cmd->add_option("--mask-seed", mask_seed);
    eval_cmd->add_option("--split", eval_split, "Records to score: test, val, train or all")->capture_default_str();

    // sweep / ablate
    std::string noisy_path;
    std::string scope_name;
    auto* sweep_cmd = app.add_subcommand("sweep", "Train and sweep every seed x fold cell for one variant");
    auto* ablate_cmd = app.add_subcommand("ablate", "Run the sweep for SR and FR under one config");
    for (auto* cmd : {sweep_cmd, ablate_cmd}) {
        cmd->add_option("--data", data_path, "Dataset manifest")->required();
        cmd->add_option("--noisy", noisy_path, "Manifest of replacement (noisy) text embeddings");
        cmd->add_option("--scope", scope_name, "Noisy text scope: train, test or both");
    }
    sweep_cmd->add_option("--variant", variant_name, "SR or FR (overrides config)");

    // report
    std::string report_in;
    bool report_svg = false;
    auto* report_cmd = app.add_subcommand("report", "Render a structured report as a table");
    report_cmd->add_option("--in", report_in, "Structured report (.jsonl)")->required();
    report_cmd->add_flag("--svg", report_svg, "Also write an availability curve into --out-dir");

    // metrics
    std::string ref_path, hyp_path;
    auto* metrics_cmd = app.add_subcommand("metrics", "Text similarity of line-aligned files");
    metrics_cmd->require_subcommand(1);
    auto* wer_cmd = metrics_cmd->add_subcommand("wer", "Corpus word error rate");
    auto* bleu_cmd = metrics_cmd->add_subcommand("bleu", "Corpus BLEU-4");
    for (auto* cmd : {wer_cmd, bleu_cmd}) {
        cmd->add_option("--ref", ref_path)->required();
        cmd->add_option("--hyp", hyp_path)->required();
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth_cmd) {
            synth.seed = g.seed.value_or(0);
            Dataset ds = synth_generate(synth);
            if (!synth_split.empty()) {
                const auto comma = synth_split.find(',');
                if (comma == std::string::npos) throw ConfigError("--split expects TRAIN,VAL fractions");
                ds = with_split_tags(std::move(ds), std::stod(synth_split.substr(0, comma)),
                                     std::stod(synth_split.substr(comma + 1)), synth.seed);
            }
            write_dataset(ds, synth_out + ".json", synth_out + ".mreb");
            std::cout << json{{"manifest", synth_out + ".json"}, {"records", ds.size()}, {"dim", ds.dim}}.dump()
                      << '\n';
        } else if (*train_cmd) {
            ExperimentConfig config = resolve_config(g);
            if (!variant_name.empty()) config.variant = parse_variant(variant_name);
            const std::uint64_t seed = g.seed.value_or(config.seeds.front());
            const Dataset ds = task_dataset(config, load_dataset(data_path));
            auto [tr, va] = single_run_partition(config, ds, seed);
            const TrainResult result = train(config, tr, va, seed);
            ensure_dir(g.out_dir);
            const std::string ckpt = (fs::path(g.out_dir) / "model.ckpt").string();
            save_checkpoint(ckpt, result.best);
            std::ofstream hist(fs::path(g.out_dir) / "history.csv");
            hist << "step,epoch,lr,loss,grad_norm,clipped,skipped\n";
            hist.precision(17);
            for (const auto& s : result.history)
                hist << s.step << ',' << s.epoch << ',' << s.lr << ',' << s.loss << ',' << s.grad_norm
                     << ',' << s.clipped << ',' << s.skipped << '\n';
            std::cout << json{{"checkpoint", ckpt},
                              {"variant", to_string(config.variant)},
                              {"steps", result.total_steps},
                              {"best_epoch", result.best_epoch},
                              {"best_val_f1", result.best_val_f1}}
                             .dump()
                      << '\n';
        } else if (*eval_cmd) {
            ExperimentConfig config = resolve_config(g);
            const Checkpoint ck = load_checkpoint(checkpoint_path);
            if (g.config_path.empty()) config.variant = ck.model.variant;
            if (!levels_arg.empty()) config.levels = parse_levels(levels_arg);
            if (mask_seed) config.mask_seed = *mask_seed;
            config.validate();
            const Dataset ds = task_dataset(config, load_dataset(data_path));
            std::vector<std::size_t> idx;
            for (std::size_t i = 0; i < ds.size(); ++i) {
                const auto& s = ds.records[i].split;
                if (eval_split == "all" || !s || to_string(*s) == eval_split) idx.push_back(i);
            }
            const Dataset test = subset(ds, idx);
            for (const SweepPoint& p : evaluate_sweep(ck.model, test, config))
                std::cout << json{{"variant", to_string(ck.model.variant)},
                                  {"level", p.level},
                                  {"f1", p.f1},
                                  {"f1_macro", p.f1_macro},
                                  {"text_present", p.text_present},
                                  {"n", p.n}}
                                 .dump()
                          << '\n';
        } else if (*sweep_cmd || *ablate_cmd) {
            ExperimentConfig config = resolve_config(g);
            if (!variant_name.empty()) config.variant = parse_variant(variant_name);
            if (!scope_name.empty()) config.noise_scope = parse_noise_scope(scope_name);
            const Dataset ds = load_dataset(data_path);
            std::optional<Dataset> noisy;
            if (!noisy_path.empty()) noisy = load_dataset(noisy_path);
            const EvalReport report = *sweep_cmd ? run_experiment(config, ds, noisy ? &*noisy : nullptr)
                                                 : run_ablation(config, ds, noisy ? &*noisy : nullptr);
            const auto files = emit_report(report, g.out_dir, "report", kReportJsonl | kReportTable | kReportSvg);
            std::cout << format_report_table(report);
            for (const auto& f : files) std::cerr << "wrote " << f << '\n';
        } else if (*report_cmd) {
            std::ifstream in(report_in);
            if (!in) throw IoError("cannot open " + report_in);
            std::stringstream ss;
            ss << in.rdbuf();
            const ParsedReport parsed = parse_report_jsonl(ss.str());
            std::cout << format_report_table(parsed.report);
            if (report_svg) emit_report(parsed.report, g.out_dir, "report", kReportSvg);
        } else if (*metrics_cmd) {
            const auto refs = read_lines(ref_path);
            const auto hyps = read_lines(hyp_path);
            if (refs.size() != hyps.size())
                throw UsageError("reference and hypothesis files differ in line count");
            if (*wer_cmd) {
                std::vector<TextPair> pairs;
                for (std::size_t i = 0; i < refs.size(); ++i) pairs.push_back(TextPair::from_text(refs[i], hyps[i]));
                std::cout << json{{"metric", "wer"}, {"value", corpus_wer(pairs)}, {"pairs", pairs.size()}}.dump()
                          << '\n';
            } else {
                std::vector<Tokens> r, h;
                for (std::size_t i = 0; i < refs.size(); ++i) {
                    r.push_back(tokenize(refs[i]));
                    h.push_back(tokenize(hyps[i]));
                }
                std::cout << json{{"metric", "bleu"}, {"value", bleu(r, h)}, {"pairs", r.size()}}.dump() << '\n';
            }
        }
    } catch (const Error& e) {
        std::cerr << json{{"error", {{"kind", e.kind()}, {"message", e.what()}}}}.dump() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump() << '\n';
        return 2;
    }
    return 0;
}
