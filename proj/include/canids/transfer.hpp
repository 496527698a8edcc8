#pragma once

#include <array>
#include <string>

#include "canids/eval.hpp"
#include "canids/framing.hpp"
#include "canids/model.hpp"
#include "canids/train.hpp"

namespace canids {

// Two-stage transfer of a pretrained encoder to a new bus:
//   stage 1: encoder frozen, batch-norm running statistics re-estimated on
//            the target data, linear classifier trained on top;
//   stage 2: everything unfrozen and fine-tuned end to end at a tenth of the
//            stage-1 learning rate.

struct TransferConfig {
    TrainConfig head;      // stage 1; classifier_defaults()
    TrainConfig finetune;  // stage 2; lr head.lr/10, 20 epochs
    TrainConfig scratch;   // random-init baseline; ce recipe, matched epoch budget
    bool reestimate_bn = true;
};

TransferConfig transfer_defaults();

struct TransferResult {
    TrainLog stage1;
    TrainLog stage2;
};

// net must already hold the pretrained encoder (e.g. loaded from a source
// checkpoint) and a freshly initialized classifier for the target labels.
// During stage 1 the encoder's trainable parameters stay bitwise identical;
// only its running statistics move (when reestimate_bn is set). Setting
// finetune.epochs to zero skips stage 2, leaving a pure linear probe.
TransferResult transfer_finetune(Network& net, const FrameSet& target_train,
                                 const TransferConfig& cfg);

enum class PretrainMode { Random = 0, CrossEntropy = 1, SupCon = 2 };
const char* pretrain_mode_name(PretrainMode mode);

struct TransferComparison {
    std::array<MultiRunResult, 3> modes;  // indexed by PretrainMode
    int runs = 0;

    const MultiRunResult& of(PretrainMode m) const {
        return modes[static_cast<size_t>(m)];
    }
    std::string to_table() const;
};

// For each mode and each run, draws a fresh 70/30 target split with a
// derived seed (shared across modes for a given run index), trains per the
// protocol and evaluates on the held-out part. Pretrained modes read the
// encoder from the given checkpoints; Random trains from scratch with the
// scratch recipe over the same total epoch budget.
TransferComparison compare_transfer_modes(const FrameSet& target_all,
                                          const std::string& supcon_checkpoint,
                                          const std::string& ce_checkpoint,
                                          const TransferConfig& cfg, int runs,
                                          uint64_t base_seed, double train_fraction = 0.7);

}  // namespace canids
