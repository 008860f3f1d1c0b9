#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qaf/config.hpp"
#include "qaf/experiment.hpp"
#include "qaf/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace qaf;

namespace {

std::map<std::string, std::string> parse_overrides(const std::vector<std::string>& sets) {
    std::map<std::string, std::string> kv;
    for (const auto& s : sets) {
        std::size_t eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--set expects key=value, got '" + s + "'");
        kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    return kv;
}

std::vector<FeatureSequence> pooled_latents(const std::vector<Trial>& trials) {
    std::vector<FeatureSequence> latents;
    latents.reserve(trials.size());
    for (const auto& t : trials) latents.push_back(t.codec_latent);
    return latents;
}

int cmd_data_gen(const std::string& config_path, const std::string& out_dir,
                 const std::vector<std::string>& sets) {
    RunConfig cfg;
    cfg.apply(parse_kv_file(config_path));
    cfg.apply(parse_overrides(sets));
    cfg.validate();

    fs::create_directories(out_dir);
    Dataset ds = gen_dataset(cfg.synth);
    write_trials(ds.train, out_dir + "/train.qaf1");
    write_trials(ds.dev, out_dir + "/dev.qaf1");
    write_trials(ds.eval, out_dir + "/eval.qaf1");
    save_stack(ds.truth_stack, out_dir + "/truth_stack.qaf1");
    write_synth_manifest(cfg.synth, out_dir + "/manifest.txt");
    std::printf("wrote %s/{train,dev,eval}.qaf1 (%zu/%zu/%zu trials), truth_stack.qaf1, manifest.txt\n",
                out_dir.c_str(), ds.train.size(), ds.dev.size(), ds.eval.size());
    return 0;
}

int cmd_codec_train(const std::string& data_path, std::size_t q, std::size_t k, std::size_t iters,
                    std::uint64_t seed, bool no_zero, const std::string& out_path) {
    std::vector<Trial> trials = read_trials(data_path);
    QuantizerStack stack = train_codebooks(pooled_latents(trials), q, k, iters, seed, !no_zero);
    save_stack(stack, out_path);
    std::printf("trained %zu-level stack (K=%zu, D=%zu) on %zu trials -> %s\n", stack.num_levels(),
                stack.codebook_size(), stack.dim(), trials.size(), out_path.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_path, const std::string& stack_path,
              const std::string& method, const std::string& codec,
              const std::vector<std::string>& sets) {
    RunConfig cfg;
    cfg.apply(parse_kv_file(config_path));
    cfg.apply(parse_overrides(sets));
    if (!method.empty()) cfg.apply({{"method", method}});
    if (!codec.empty()) cfg.apply({{"codec", codec}});
    cfg.validate();

    std::string stack_file = stack_path.empty() ? data_dir + "/stack.qaf1" : stack_path;
    QuantizerStack stack = load_stack(stack_file);
    std::vector<Trial> train_trials = read_trials(data_dir + "/train.qaf1");
    std::vector<Trial> dev_trials = read_trials(data_dir + "/dev.qaf1");

    TrainResult result = run_training(cfg, stack, train_trials, dev_trials);
    save_detector(result.model, out_path);
    write_model_manifest(result.model, out_path + ".manifest.txt");
    write_train_report_csv(result.report, out_path + ".report.csv");
    write_train_report_summary(result.report, cfg.train, out_path + ".summary.txt");
    std::printf("trained %s (%s): epochs=%zu best_epoch=%zu best_dev_eer=%.4f%% -> %s\n",
                to_string(cfg.train.method).c_str(),
                cfg.train.codec_trainable ? "codecT" : "codecF", result.report.epochs.size(),
                result.report.best_epoch, 100.0 * result.report.best_dev_eer, out_path.c_str());
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path,
             const std::string& roc_path) {
    DetectorModel model = load_detector(model_path);
    std::vector<Trial> trials = read_trials(data_path);
    std::vector<PreparedTrial> prepared = prepare_trials(trials, model.stack);
    std::vector<RocPoint> roc;
    EerResult eer = evaluate(model, prepared, &roc);
    write_roc_csv(roc, roc_path);
    std::printf("EER%% = %.4f\n", 100.0 * eer.eer);
    return 0;
}

int cmd_inspect_alpha(const std::string& model_path, const std::string& out_path) {
    DetectorModel model = load_detector(model_path);
    AlphaMatrix alpha;
    if (model.method == AggMethod::QafStatic) {
        alpha = qaf_alpha(model.qaf);
    } else {
        // Mean pooling is uniform by definition.
        alpha = Matrix(model.num_levels(), model.d_codec,
                       1.0 / static_cast<double>(model.num_levels()));
    }
    write_alpha_csv(alpha, out_path);
    std::printf("wrote %s (%zu quantizers x %zu dims)\n", out_path.c_str(), alpha.rows(),
                alpha.cols());
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t rounds) {
    std::vector<GradCheckGroup> groups = run_gradcheck(seed, rounds);
    bool ok = true;
    for (const auto& g : groups) {
        std::printf("%-14s max_rel_err=%.3e (%zu checks)\n", g.name.c_str(), g.max_rel_err,
                    g.checked);
        if (!(g.max_rel_err < kGradCheckTolerance)) ok = false;
    }
    if (!ok) {
        std::fprintf(stderr, "gradcheck: tolerance %.0e exceeded\n", kGradCheckTolerance);
        return 3;
    }
    std::printf("gradcheck: all groups below %.0e\n", kGradCheckTolerance);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchy-aware RVQ feature aggregation and spoof detection"};
    app.require_subcommand(1);

    std::string config_path, out_path, data_path, stack_path, model_path;
    std::string method, codec, roc_path = "roc.csv";
    std::vector<std::string> sets;
    std::size_t q = 4, k = 8, iters = 25, rounds = 20;
    std::uint64_t seed = 1;
    bool no_zero = false;

    auto* gen = app.add_subcommand("data-gen", "Generate the synthetic trial splits");
    gen->add_option("--config", config_path, "key=value config file")->required();
    gen->add_option("--out", out_path, "output directory")->required();
    gen->add_option("--set", sets, "override config keys (key=value)");

    auto* ct = app.add_subcommand("codec-train", "Train the residual quantizer stack");
    ct->add_option("--data", data_path, "trials file providing the latents")->required();
    ct->add_option("--q", q, "number of levels");
    ct->add_option("--k", k, "codebook size");
    ct->add_option("--iters", iters, "k-means iterations per level");
    ct->add_option("--seed", seed, "k-means init seed");
    ct->add_flag("--no-zero-codeword", no_zero, "do not pin codeword 0 to the zero vector");
    ct->add_option("--out", out_path, "stack output file")->required();

    auto* tr = app.add_subcommand("train", "Train the detector");
    tr->add_option("--config", config_path, "key=value config file")->required();
    tr->add_option("--data", data_path, "dataset directory (train.qaf1, dev.qaf1)")->required();
    tr->add_option("--out", out_path, "model output file")->required();
    tr->add_option("--stack", stack_path, "stack file (default <data>/stack.qaf1)");
    tr->add_option("--method", method, "mean_pool | qaf");
    tr->add_option("--codec", codec, "frozen | trainable");
    tr->add_option("--set", sets, "override config keys (key=value)");

    auto* ev = app.add_subcommand("eval", "Score a trials file and print EER");
    ev->add_option("--model", model_path, "model file")->required();
    ev->add_option("--data", data_path, "trials file")->required();
    ev->add_option("--roc-out", roc_path, "ROC CSV output path");

    auto* ia = app.add_subcommand("inspect-alpha", "Dump quantizer weights as CSV");
    ia->add_option("--model", model_path, "model file")->required();
    ia->add_option("--out", out_path, "CSV output path")->required();

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of all backward passes");
    gc->add_option("--seed", seed, "base seed");
    gc->add_option("--rounds", rounds, "random instances per check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) return cmd_data_gen(config_path, out_path, sets);
        if (*ct) return cmd_codec_train(data_path, q, k, iters, seed, no_zero, out_path);
        if (*tr) return cmd_train(config_path, data_path, out_path, stack_path, method, codec, sets);
        if (*ev) return cmd_eval(model_path, data_path, roc_path);
        if (*ia) return cmd_inspect_alpha(model_path, out_path);
        if (*gc) return cmd_gradcheck(seed, rounds);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
