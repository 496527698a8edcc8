#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "canids/framing.hpp"
#include "canids/model.hpp"

namespace canids {

// Optimization stages. All of them run plain SGD with momentum and L2 weight
// decay; the learning rate follows a per-epoch cosine schedule by default.
// Every stage is deterministic for a fixed config seed and kernel selection.

struct TrainConfig {
    int batch_size = 256;
    double lr = 0.01;
    int epochs = 20;
    double tau = 0.07;  // contrastive temperature, unused by the CE stages
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::string lr_schedule = "cosine";  // cosine | constant
    uint64_t seed = 42;

    void validate() const;
};

// Stage presets: contrastive encoder training, the linear evaluation head,
// and the plain cross-entropy baseline.
TrainConfig supcon_defaults();     // batch 512, lr 0.05, 150 epochs, tau 0.07
TrainConfig classifier_defaults(); // batch 256, lr 0.01, 20 epochs
TrainConfig ce_defaults();         // batch 256, lr 0.001, 150 epochs

// Plain-text key=value config files ('#' starts a comment). Unknown keys are
// an error; keys not present keep the values of base.
TrainConfig load_train_config(const std::string& path, TrainConfig base);
std::string train_config_to_string(const TrainConfig& cfg);

struct TrainLog {
    struct Epoch {
        int epoch = 0;  // 1-based
        double loss = 0.0;
        double lr = 0.0;
        double seconds = 0.0;
    };
    std::vector<Epoch> epochs;

    void to_csv(std::ostream& out) const;
    void write_csv(const std::string& path) const;
    double first_loss() const { return epochs.front().loss; }
    double last_loss() const { return epochs.back().loss; }
};

// Raised when a stage produces a non-finite loss.
class TrainingDivergence : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

double scheduled_lr(const TrainConfig& cfg, int epoch_index);  // 0-based epoch

class Sgd {
public:
    Sgd(double lr, double momentum, double weight_decay)
        : lr(lr), momentum(momentum), weight_decay(weight_decay) {}
    void step(const std::vector<ParamRef>& params);

    double lr, momentum, weight_decay;

private:
    std::vector<Tensor> velocity_;
};

// Contrastive pretraining of encoder+projector. Batches with fewer than two
// samples are dropped (a single anchor has no positives or negatives). The
// logged loss is the per-anchor mean; gradients are scaled the same way.
TrainLog train_supcon_encoder(Network& net, const FrameSet& train, const TrainConfig& cfg);

// Linear head on a frozen encoder. The encoder runs once in eval mode to
// cache representations, then only the classifier trains; encoder parameters
// and running statistics are untouched, bit for bit.
TrainLog train_linear_classifier(Network& net, const FrameSet& train, const TrainConfig& cfg);

// End-to-end supervised training of encoder+classifier (also the second
// transfer stage).
TrainLog train_ce_baseline(Network& net, const FrameSet& train, const TrainConfig& cfg);

// Shared inner loop: classifier over fixed feature rows.
TrainLog train_linear_on_features(Linear& head, const Tensor& features,
                                  const std::vector<int>& labels, const TrainConfig& cfg);

}  // namespace canids
