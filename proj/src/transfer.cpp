#include "canids/transfer.hpp"

#include <cstdio>
#include <sstream>

namespace canids {

TransferConfig transfer_defaults() {
    TransferConfig cfg;
    cfg.head = classifier_defaults();
    cfg.finetune = cfg.head;
    cfg.finetune.lr = cfg.head.lr / 10.0;
    cfg.finetune.epochs = 20;
    cfg.scratch = ce_defaults();
    cfg.scratch.epochs = cfg.head.epochs + cfg.finetune.epochs;
    return cfg;
}

TransferResult transfer_finetune(Network& net, const FrameSet& target_train,
                                 const TransferConfig& cfg) {
    cfg.head.validate();
    if (cfg.finetune.epochs != 0) cfg.finetune.validate();
    if (target_train.frames.empty()) throw std::invalid_argument("empty target training set");
    if (!(net.labels == target_train.labels))
        throw std::invalid_argument("label spaces of model and target data differ");

    if (cfg.reestimate_bn) {
        // Replace the source-bus batch-norm statistics with target-bus ones:
        // momentum 1/t turns the running update into a plain average over the
        // batches of one pass. Trainable parameters never receive a step here.
        std::vector<BatchNorm2d*> bns = net.encoder.batchnorms();
        Tensor x;
        std::vector<int64_t> idx;
        int64_t n = target_train.size();
        int t = 0;
        for (int64_t start = 0; start < n; start += cfg.head.batch_size) {
            int b = static_cast<int>(std::min<int64_t>(cfg.head.batch_size, n - start));
            idx.resize(static_cast<size_t>(b));
            for (int i = 0; i < b; ++i) idx[static_cast<size_t>(i)] = start + i;
            frames_to_input(target_train, idx.data(), b, x);
            ++t;
            for (BatchNorm2d* bn : bns) bn->momentum = 1.0f / static_cast<float>(t);
            net.forward_repr(x, /*train=*/true);
        }
        for (BatchNorm2d* bn : bns) bn->momentum = 0.1f;
    }

    TransferResult result;
    result.stage1 = train_linear_classifier(net, target_train, cfg.head);
    if (cfg.finetune.epochs != 0)
        result.stage2 = train_ce_baseline(net, target_train, cfg.finetune);
    return result;
}

const char* pretrain_mode_name(PretrainMode mode) {
    switch (mode) {
        case PretrainMode::Random: return "random";
        case PretrainMode::CrossEntropy: return "ce";
        case PretrainMode::SupCon: return "supcon";
    }
    return "?";
}

std::string TransferComparison::to_table() const {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-8s %10s %10s %10s %10s  (mean of %d runs)\n", "encoder",
                  "FNR", "recall", "precision", "F1", runs);
    os << buf;
    for (PretrainMode m :
         {PretrainMode::Random, PretrainMode::CrossEntropy, PretrainMode::SupCon}) {
        const ClassMetrics& o = of(m).averaged.overall;
        std::snprintf(buf, sizeof(buf), "%-8s %10.4f %10.4f %10.4f %10.4f\n",
                      pretrain_mode_name(m), o.fnr, o.recall, o.precision, o.f1);
        os << buf;
    }
    return os.str();
}

TransferComparison compare_transfer_modes(const FrameSet& target_all,
                                          const std::string& supcon_checkpoint,
                                          const std::string& ce_checkpoint,
                                          const TransferConfig& cfg, int runs,
                                          uint64_t base_seed, double train_fraction) {
    if (runs < 1) throw std::invalid_argument("need at least one run");
    if (target_all.frames.empty()) throw std::invalid_argument("empty target set");

    auto run_mode = [&](PretrainMode mode) {
        return multi_run_protocol(
            [&, mode](uint64_t seed) {
                // The same seed yields the same split for every mode, so the
                // three encoders see identical train/test data per run.
                auto [train, test] = split_train_test(target_all, train_fraction, seed);

                Network net(target_all.labels);
                init_network(net, seed);
                if (mode == PretrainMode::Random) {
                    TrainConfig c = cfg.scratch;
                    c.seed = seed;
                    train_ce_baseline(net, train, c);
                } else {
                    const std::string& path = mode == PretrainMode::SupCon ? supcon_checkpoint
                                                                           : ce_checkpoint;
                    load_checkpoint(net, path, kPartEncoder, /*strict=*/true);
                    TransferConfig c = cfg;
                    c.head.seed = seed;
                    c.finetune.seed = seed + 1;
                    transfer_finetune(net, train, c);
                }
                return evaluate_model(net, test);
            },
            runs, base_seed);
    };

    TransferComparison cmp;
    cmp.runs = runs;
    cmp.modes[static_cast<size_t>(PretrainMode::Random)] = run_mode(PretrainMode::Random);
    cmp.modes[static_cast<size_t>(PretrainMode::CrossEntropy)] =
        run_mode(PretrainMode::CrossEntropy);
    cmp.modes[static_cast<size_t>(PretrainMode::SupCon)] = run_mode(PretrainMode::SupCon);
    return cmp;
}

}  // namespace canids
