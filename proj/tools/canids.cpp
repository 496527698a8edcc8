#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "canids/can_log.hpp"
#include "canids/eval.hpp"
#include "canids/framing.hpp"
#include "canids/losses.hpp"
#include "canids/model.hpp"
#include "canids/traffic_synth.hpp"
#include "canids/train.hpp"
#include "canids/transfer.hpp"

using namespace canids;

namespace {

constexpr int kExitData = 2;
constexpr int kExitDiverged = 3;

void print_histogram(const FrameSet& set) {
    std::vector<int64_t> hist = set.class_histogram();
    std::printf("%lld windows, stride %d\n", static_cast<long long>(set.size()), set.stride);
    for (size_t c = 0; c < hist.size(); ++c)
        std::printf("  %-12s %lld\n", set.labels.names[c].c_str(),
                    static_cast<long long>(hist[c]));
}

std::string sibling_path(const std::string& base, const std::string& suffix) {
    return base + suffix;
}

Network load_network(const std::string& path, int parts) {
    std::optional<LabelSpace> labels = checkpoint_labels(path);
    if (!labels)
        throw ModelError(path + ": no label metadata; was the classifier stage saved?");
    Network net(*labels);
    init_network(net, 0);
    load_checkpoint(net, path, parts, /*strict=*/true);
    return net;
}

// ----------------------------------------------------------------- preprocess

struct PreprocessArgs {
    std::vector<std::string> inputs;  // path:class
    std::string labels_csv;
    std::string out;
    int stride = kDefaultStrideSource;
    bool strict = false;
};

int run_preprocess(const PreprocessArgs& a) {
    LabelSpace labels;
    {
        std::string cur;
        for (char c : a.labels_csv) {
            if (c == ',') {
                labels.names.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        labels.names.push_back(cur);
    }
    labels.validate();

    FrameSet all;
    all.labels = labels;
    all.stride = a.stride;

    for (const std::string& arg : a.inputs) {
        size_t colon = arg.rfind(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 == arg.size())
            throw std::invalid_argument("--input expects path:class, got '" + arg + "'");
        std::string path = arg.substr(0, colon);
        std::string cls = arg.substr(colon + 1);
        int attack_class = labels.index_of(cls);

        ParseResult parsed = parse_hcrl_csv_file(path, a.strict);
        std::printf("%s: %llu lines (%llu normal, %llu injected, %llu skipped)\n", path.c_str(),
                    static_cast<unsigned long long>(parsed.stats.total),
                    static_cast<unsigned long long>(parsed.stats.normal),
                    static_cast<unsigned long long>(parsed.stats.injected),
                    static_cast<unsigned long long>(parsed.stats.skipped));

        FrameSet frames = build_frames(parsed.records, a.stride, attack_class, labels, path);
        if (frames.frames.empty())
            std::fprintf(stderr, "warning: %s yields no windows (fewer than %d records)\n",
                         path.c_str(), kWindow);
        merge_framesets(all, frames);
    }

    print_histogram(all);
    pack_frames_file(all, a.out);
    std::printf("wrote %s\n", a.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------- synth

struct SynthArgs {
    std::string scenario = "source";
    std::string out_dir = ".";
    uint64_t seed = 42;
    double duration = 0.0;
};

int run_synth(const SynthArgs& a) {
    std::vector<ScenarioCapture> captures = synth_scenario(a.scenario, a.seed, a.duration);
    for (const ScenarioCapture& cap : captures) {
        std::string path = a.out_dir + "/" + cap.file_name;
        std::ofstream out(path);
        if (!out) throw std::invalid_argument("cannot open " + path + " for writing");
        serialize_csv(cap.records, out);
        if (!out) throw std::invalid_argument("write failed: " + path);
        std::printf("%s: %zu records, attack class %s\n", path.c_str(), cap.records.size(),
                    cap.class_name.c_str());
    }
    return 0;
}

// ---------------------------------------------------------------------- train

struct TrainArgs {
    std::string frames;
    std::string mode = "supcon";
    std::string config;
    std::string out;
};

int run_train(const TrainArgs& a) {
    FrameSet set = unpack_frames_file(a.frames);
    std::printf("loaded %s\n", a.frames.c_str());
    print_histogram(set);

    Network net(set.labels);
    TrainConfig base = a.mode == "supcon" ? supcon_defaults() : ce_defaults();
    TrainConfig cfg = a.config.empty() ? base : load_train_config(a.config, base);
    init_network(net, cfg.seed);

    if (a.mode == "supcon") {
        std::printf("contrastive encoder stage (%d epochs, batch %d, lr %g, tau %g)\n",
                    cfg.epochs, cfg.batch_size, cfg.lr, cfg.tau);
        TrainLog enc_log = train_supcon_encoder(net, set, cfg);
        enc_log.write_csv(sibling_path(a.out, ".encoder.csv"));
        std::printf("encoder loss %.4f -> %.4f\n", enc_log.first_loss(), enc_log.last_loss());

        TrainConfig head = classifier_defaults();
        head.seed = cfg.seed;
        std::printf("classifier stage (%d epochs, batch %d, lr %g)\n", head.epochs,
                    head.batch_size, head.lr);
        TrainLog head_log = train_linear_classifier(net, set, head);
        head_log.write_csv(sibling_path(a.out, ".head.csv"));
        std::printf("classifier loss %.4f -> %.4f\n", head_log.first_loss(),
                    head_log.last_loss());
    } else {
        std::printf("cross-entropy stage (%d epochs, batch %d, lr %g)\n", cfg.epochs,
                    cfg.batch_size, cfg.lr);
        TrainLog log = train_ce_baseline(net, set, cfg);
        log.write_csv(sibling_path(a.out, ".train.csv"));
        std::printf("loss %.4f -> %.4f\n", log.first_loss(), log.last_loss());
    }

    {
        std::ofstream cfg_out(sibling_path(a.out, ".config"));
        cfg_out << train_config_to_string(cfg);
    }
    save_checkpoint(net, a.out, kPartEncoder | kPartProjector | kPartClassifier);
    std::printf("wrote %s\n", a.out.c_str());
    return 0;
}

// ------------------------------------------------------------------- transfer

struct TransferArgs {
    std::string frames;
    std::string supcon_ckpt;
    std::string ce_ckpt;
    std::string pretrained = "all";
    int runs = 5;
    uint64_t seed = 7;
    double train_fraction = 0.7;
    int head_epochs = 0;      // 0 keeps the default
    int finetune_epochs = 0;
    int scratch_epochs = 0;
};

int run_transfer(const TransferArgs& a) {
    FrameSet target = unpack_frames_file(a.frames);
    std::printf("loaded %s\n", a.frames.c_str());
    print_histogram(target);

    TransferConfig cfg = transfer_defaults();
    if (a.head_epochs > 0) cfg.head.epochs = a.head_epochs;
    if (a.finetune_epochs > 0) cfg.finetune.epochs = a.finetune_epochs;
    cfg.scratch.epochs = a.scratch_epochs > 0 ? a.scratch_epochs
                                              : cfg.head.epochs + cfg.finetune.epochs;

    if (a.pretrained == "all") {
        if (a.supcon_ckpt.empty() || a.ce_ckpt.empty())
            throw std::invalid_argument("--pretrained all needs both --supcon and --ce");
        TransferComparison cmp = compare_transfer_modes(target, a.supcon_ckpt, a.ce_ckpt, cfg,
                                                        a.runs, a.seed, a.train_fraction);
        std::fputs(cmp.to_table().c_str(), stdout);
        return 0;
    }

    PretrainMode mode;
    if (a.pretrained == "random")
        mode = PretrainMode::Random;
    else if (a.pretrained == "ce")
        mode = PretrainMode::CrossEntropy;
    else if (a.pretrained == "supcon")
        mode = PretrainMode::SupCon;
    else
        throw std::invalid_argument("--pretrained must be supcon, ce, random or all");

    std::string ckpt = mode == PretrainMode::SupCon ? a.supcon_ckpt : a.ce_ckpt;
    if (mode != PretrainMode::Random && ckpt.empty())
        throw std::invalid_argument(std::string("--pretrained ") + a.pretrained +
                                    " needs --" + a.pretrained);

    MultiRunResult result = multi_run_protocol(
        [&](uint64_t seed) {
            auto [train, test] = split_train_test(target, a.train_fraction, seed);
            Network net(target.labels);
            init_network(net, seed);
            if (mode == PretrainMode::Random) {
                TrainConfig c = cfg.scratch;
                c.seed = seed;
                train_ce_baseline(net, train, c);
            } else {
                load_checkpoint(net, ckpt, kPartEncoder, /*strict=*/true);
                TransferConfig c = cfg;
                c.head.seed = seed;
                c.finetune.seed = seed + 1;
                transfer_finetune(net, train, c);
            }
            return evaluate_model(net, test);
        },
        a.runs, a.seed);

    std::printf("%s encoder, %d runs (seeds %llu..%llu)\n", pretrain_mode_name(mode), a.runs,
                static_cast<unsigned long long>(a.seed),
                static_cast<unsigned long long>(a.seed + a.runs - 1));
    std::fputs(result.averaged.to_table().c_str(), stdout);
    return 0;
}

// ----------------------------------------------------------------------- eval

struct EvalArgs {
    std::string model;
    std::string frames;
    std::string out;
    std::string confusion;
};

int run_eval(const EvalArgs& a) {
    Network net = load_network(a.model, kPartEncoder | kPartProjector | kPartClassifier);
    FrameSet test = unpack_frames_file(a.frames);
    EvalReport report = evaluate_model(net, test);
    std::fputs(report.to_table().c_str(), stdout);
    if (!a.out.empty()) {
        std::ofstream out(a.out);
        if (!out) throw std::invalid_argument("cannot open " + a.out + " for writing");
        report.to_csv(out);
        std::printf("wrote %s\n", a.out.c_str());
    }
    if (!a.confusion.empty()) {
        std::ofstream out(a.confusion);
        if (!out) throw std::invalid_argument("cannot open " + a.confusion + " for writing");
        confusion_to_csv(report.confusion, report.class_names, out);
        std::printf("wrote %s\n", a.confusion.c_str());
    }
    return 0;
}

// ---------------------------------------------------------------------- bench

struct BenchArgs {
    std::string model;
    int warmup = 50;
    int reps = 200;
    uint64_t seed = 42;
};

int run_bench(const BenchArgs& a) {
    Network net = [&]() {
        if (a.model.empty()) {
            Network n(source_label_space());
            init_network(n, a.seed);
            return n;
        }
        std::optional<LabelSpace> labels = checkpoint_labels(a.model);
        Network n(labels ? *labels : source_label_space());
        init_network(n, a.seed);
        int parts = kPartEncoder | (labels ? kPartClassifier : 0);
        load_checkpoint(n, a.model, parts, /*strict=*/true);
        return n;
    }();
    BenchResult r = benchmark_inference(net, a.warmup, a.reps, a.seed);
    std::printf("%s\n", r.to_string().c_str());
    return 0;
}

// -------------------------------------------------------------------- monitor

struct MonitorArgs {
    std::string model;
    std::string input = "-";
    int stride = 1;
    int dedup = 0;  // suppress repeated alerts of one class for N windows
};

int run_monitor(const MonitorArgs& a) {
    Network net = load_network(a.model, kPartEncoder | kPartClassifier);

    ParseResult parsed;
    if (a.input == "-")
        parsed = parse_hcrl_csv(std::cin, /*strict=*/false);
    else
        parsed = parse_hcrl_csv_file(a.input, /*strict=*/false);
    const std::vector<CanRecord>& rec = parsed.records;
    if (parsed.stats.skipped)
        std::fprintf(stderr, "warning: skipped %llu malformed lines\n",
                     static_cast<unsigned long long>(parsed.stats.skipped));

    Tensor x({1, 1, kWindow, kWindow});
    Frame frame;
    std::vector<int> last_alert(net.labels.names.size(), -1);
    int64_t window_index = 0;
    int64_t alerts = 0;

    for (size_t start = 0; start + kWindow <= rec.size(); start += a.stride, ++window_index) {
        for (int row = 0; row < kWindow; ++row) {
            IdBits bits = encode_id_29bit(rec[start + row].can_id);
            for (int col = 0; col < kWindow; ++col) frame.set(row, col, bits[col] != 0);
        }
        frame_to_floats(frame, x.data());
        const Tensor& logits = net.forward_logits(x, /*train=*/false);

        const float* row = logits.row(0);
        int k = logits.dim(1);
        int best = 0;
        for (int c = 1; c < k; ++c)
            if (row[c] > row[best]) best = c;
        double denom = 0.0;
        for (int c = 0; c < k; ++c) denom += std::exp(static_cast<double>(row[c] - row[best]));
        double score = 1.0 / denom;

        if (best == 0) continue;
        if (a.dedup > 0) {
            int last = last_alert[static_cast<size_t>(best)];
            last_alert[static_cast<size_t>(best)] = static_cast<int>(window_index);
            if (last >= 0 && window_index - last < a.dedup) continue;
        }
        ++alerts;
        std::printf("ALERT,%.6f,%.6f,%s,%.4f\n", rec[start].timestamp,
                    rec[start + kWindow - 1].timestamp, net.labels.names[best].c_str(), score);
    }
    std::fprintf(stderr, "%lld windows, %lld alerts\n", static_cast<long long>(window_index),
                 static_cast<long long>(alerts));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CAN bus intrusion detection: data prep, training, transfer, evaluation"};
    app.require_subcommand(1);

    PreprocessArgs pre;
    CLI::App* cmd_pre = app.add_subcommand("preprocess", "Frame CAN logs into a window file");
    cmd_pre->add_option("--input", pre.inputs, "Capture as path:class, repeatable")->required();
    cmd_pre->add_option("--labels", pre.labels_csv, "Comma-separated class names, first = normal")
        ->required();
    cmd_pre->add_option("--out", pre.out, "Output window file")->required();
    cmd_pre->add_option("--stride", pre.stride, "Window stride in messages");
    cmd_pre->add_flag("--strict", pre.strict, "Abort on the first malformed line");

    SynthArgs synth;
    CLI::App* cmd_synth = app.add_subcommand("synth", "Generate synthetic captures");
    cmd_synth->add_option("--scenario", synth.scenario, "source or target")
        ->check(CLI::IsMember({"source", "target"}));
    cmd_synth->add_option("--out-dir", synth.out_dir, "Directory for the CSV files");
    cmd_synth->add_option("--seed", synth.seed, "Generator seed");
    cmd_synth->add_option("--duration", synth.duration, "Capture length in seconds, 0 = preset");

    TrainArgs train;
    CLI::App* cmd_train = app.add_subcommand("train", "Train a detector on a window file");
    cmd_train->add_option("--frames", train.frames, "Training window file")->required();
    cmd_train->add_option("--mode", train.mode, "supcon or ce")
        ->check(CLI::IsMember({"supcon", "ce"}));
    cmd_train->add_option("--config", train.config, "key=value training config");
    cmd_train->add_option("--out", train.out, "Output checkpoint")->required();

    TransferArgs transfer;
    CLI::App* cmd_transfer =
        app.add_subcommand("transfer", "Fine-tune pretrained encoders on a second bus");
    cmd_transfer->add_option("--frames", transfer.frames, "Target window file")->required();
    cmd_transfer->add_option("--supcon", transfer.supcon_ckpt, "Contrastive source checkpoint");
    cmd_transfer->add_option("--ce", transfer.ce_ckpt, "Cross-entropy source checkpoint");
    cmd_transfer->add_option("--pretrained", transfer.pretrained, "supcon, ce, random or all")
        ->check(CLI::IsMember({"supcon", "ce", "random", "all"}));
    cmd_transfer->add_option("--runs", transfer.runs, "Repetitions with derived seeds");
    cmd_transfer->add_option("--seed", transfer.seed, "Base seed");
    cmd_transfer->add_option("--train-fraction", transfer.train_fraction,
                             "Target split used for adaptation");
    cmd_transfer->add_option("--head-epochs", transfer.head_epochs, "Stage-1 epochs");
    cmd_transfer->add_option("--finetune-epochs", transfer.finetune_epochs, "Stage-2 epochs");
    cmd_transfer->add_option("--scratch-epochs", transfer.scratch_epochs,
                             "Epochs for the random baseline");

    EvalArgs eval;
    CLI::App* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a window file");
    cmd_eval->add_option("--model", eval.model, "Checkpoint")->required();
    cmd_eval->add_option("--frames", eval.frames, "Evaluation window file")->required();
    cmd_eval->add_option("--out", eval.out, "Write the metric table as CSV");
    cmd_eval->add_option("--confusion", eval.confusion, "Write the confusion matrix as CSV");

    BenchArgs bench;
    CLI::App* cmd_bench = app.add_subcommand("bench", "Measure single-window latency");
    cmd_bench->add_option("--model", bench.model, "Checkpoint, random weights when omitted");
    cmd_bench->add_option("--warmup", bench.warmup, "Untimed repetitions");
    cmd_bench->add_option("--reps", bench.reps, "Timed repetitions");
    cmd_bench->add_option("--seed", bench.seed, "Input generator seed");

    MonitorArgs monitor;
    CLI::App* cmd_monitor = app.add_subcommand("monitor", "Scan a capture and print alerts");
    cmd_monitor->add_option("--model", monitor.model, "Checkpoint")->required();
    cmd_monitor->add_option("--input", monitor.input, "Capture CSV, - for stdin");
    cmd_monitor->add_option("--stride", monitor.stride, "Window stride in messages")
        ->check(CLI::PositiveNumber);
    cmd_monitor->add_option("--dedup-window", monitor.dedup,
                            "Suppress repeat alerts of a class for N windows");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_pre->parsed()) return run_preprocess(pre);
        if (cmd_synth->parsed()) return run_synth(synth);
        if (cmd_train->parsed()) return run_train(train);
        if (cmd_transfer->parsed()) return run_transfer(transfer);
        if (cmd_eval->parsed()) return run_eval(eval);
        if (cmd_bench->parsed()) return run_bench(bench);
        if (cmd_monitor->parsed()) return run_monitor(monitor);
    } catch (const TrainingDivergence& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitDiverged;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
    return 0;
}
