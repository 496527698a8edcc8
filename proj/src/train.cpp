#include "canids/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "canids/losses.hpp"
#include "canids/rng.hpp"
#include "canids/simd/kernels.hpp"

namespace canids {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_finite(double loss, const char* stage) {
    if (!std::isfinite(loss))
        throw TrainingDivergence(std::string(stage) + ": loss is not finite");
}

std::vector<int64_t> epoch_order(Rng& rng, int64_t n) { return rng.permutation(n); }

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
    if (!(tau > 0.0 && tau <= 10.0)) throw std::invalid_argument("tau must lie in (0, 10]");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw std::invalid_argument("momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
    if (lr_schedule != "cosine" && lr_schedule != "constant")
        throw std::invalid_argument("lr_schedule must be cosine or constant");
}

TrainConfig supcon_defaults() {
    TrainConfig cfg;
    cfg.batch_size = 512;
    cfg.lr = 0.05;
    cfg.epochs = 150;
    cfg.tau = 0.07;
    return cfg;
}

TrainConfig classifier_defaults() {
    TrainConfig cfg;
    cfg.batch_size = 256;
    cfg.lr = 0.01;
    cfg.epochs = 20;
    return cfg;
}

TrainConfig ce_defaults() {
    TrainConfig cfg;
    cfg.batch_size = 256;
    cfg.lr = 0.001;
    cfg.epochs = 150;
    return cfg;
}

TrainConfig load_train_config(const std::string& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        size_t e = line.find_last_not_of(" \t\r");
        std::string body = line.substr(b, e - b + 1);
        size_t eq = body.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                        ": expected key=value");
        std::string key = body.substr(0, eq);
        std::string value = body.substr(eq + 1);
        auto strip = [](std::string& s) {
            size_t x = s.find_first_not_of(" \t");
            size_t y = s.find_last_not_of(" \t");
            s = x == std::string::npos ? "" : s.substr(x, y - x + 1);
        };
        strip(key);
        strip(value);
        try {
            if (key == "batch_size")
                base.batch_size = std::stoi(value);
            else if (key == "lr")
                base.lr = std::stod(value);
            else if (key == "epochs")
                base.epochs = std::stoi(value);
            else if (key == "tau")
                base.tau = std::stod(value);
            else if (key == "momentum")
                base.momentum = std::stod(value);
            else if (key == "weight_decay")
                base.weight_decay = std::stod(value);
            else if (key == "lr_schedule")
                base.lr_schedule = value;
            else if (key == "seed")
                base.seed = std::stoull(value);
            else
                throw std::invalid_argument("unknown key " + key);
        } catch (const std::invalid_argument&) {
            throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": bad entry '" +
                                        body + "'");
        }
    }
    base.validate();
    return base;
}

std::string train_config_to_string(const TrainConfig& cfg) {
    std::ostringstream os;
    os << "batch_size=" << cfg.batch_size << "\n"
       << "lr=" << cfg.lr << "\n"
       << "epochs=" << cfg.epochs << "\n"
       << "tau=" << cfg.tau << "\n"
       << "momentum=" << cfg.momentum << "\n"
       << "weight_decay=" << cfg.weight_decay << "\n"
       << "lr_schedule=" << cfg.lr_schedule << "\n"
       << "seed=" << cfg.seed << "\n";
    return os.str();
}

void TrainLog::to_csv(std::ostream& out) const {
    out << "epoch,loss,lr,seconds\n";
    char buf[128];
    for (const Epoch& e : epochs) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.3f\n", e.epoch, e.loss, e.lr, e.seconds);
        out << buf;
    }
}

void TrainLog::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("cannot open " + path + " for writing");
    to_csv(out);
}

double scheduled_lr(const TrainConfig& cfg, int epoch_index) {
    if (cfg.lr_schedule == "constant") return cfg.lr;
    return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch_index) /
                                          static_cast<double>(cfg.epochs)));
}

void Sgd::step(const std::vector<ParamRef>& params) {
    if (velocity_.size() != params.size()) {
        velocity_.clear();
        velocity_.reserve(params.size());
        for (const auto& p : params) velocity_.emplace_back(p.value->shape());
    }
    float flr = static_cast<float>(lr);
    float fmom = static_cast<float>(momentum);
    float fwd = static_cast<float>(weight_decay);
    for (size_t i = 0; i < params.size(); ++i) {
        float* w = params[i].value->data();
        const float* g = params[i].grad->data();
        float* v = velocity_[i].data();
        int64_t n = params[i].value->numel();
        for (int64_t j = 0; j < n; ++j) {
            float grad = g[j] + fwd * w[j];
            v[j] = fmom * v[j] + grad;
            w[j] -= flr * v[j];
        }
    }
}

TrainLog train_supcon_encoder(Network& net, const FrameSet& train, const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.batch_size < 2)
        throw std::invalid_argument("contrastive training needs batch_size >= 2");
    if (train.frames.empty()) throw std::invalid_argument("empty training set");

    std::vector<ParamRef> params = select_parameters(net, kPartEncoder | kPartProjector);
    Sgd opt(cfg.lr, cfg.momentum, cfg.weight_decay);
    Rng rng(cfg.seed);

    Tensor x;
    std::vector<int> yb;
    TrainLog log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = Clock::now();
        opt.lr = scheduled_lr(cfg, epoch);
        std::vector<int64_t> order = epoch_order(rng, train.size());

        double loss_sum = 0.0;
        int64_t anchors = 0;
        for (int64_t start = 0; start < train.size(); start += cfg.batch_size) {
            int b = static_cast<int>(std::min<int64_t>(cfg.batch_size, train.size() - start));
            if (b < 2) break;  // a lone sample has no pairs to contrast
            frames_to_input(train, order.data() + start, b, x);
            labels_to_vector(train, order.data() + start, b, yb);

            net.zero_grads();
            const Tensor& z = net.forward_embedding(x, /*train=*/true);
            SupConResult res = supcon_loss(z, yb, cfg.tau);
            check_finite(res.loss, "supcon");

            // per-anchor mean, so the step size does not scale with batch size
            float inv = 1.0f / static_cast<float>(b);
            simd::kernels().scale_shift(res.grad.data(), inv, 0.0f, res.grad.data(),
                                        static_cast<int>(res.grad.numel()));
            net.backward_from_embedding(x, res.grad);
            opt.step(params);

            loss_sum += res.loss;
            anchors += b;
        }
        if (anchors == 0) throw std::invalid_argument("training set smaller than two samples");
        log.epochs.push_back(
            {epoch + 1, loss_sum / static_cast<double>(anchors), opt.lr, seconds_since(t0)});
    }
    return log;
}

TrainLog train_linear_on_features(Linear& head, const Tensor& features,
                                  const std::vector<int>& labels, const TrainConfig& cfg) {
    cfg.validate();
    int64_t n = features.dim(0);
    if (n < 1) throw std::invalid_argument("empty feature set");

    std::vector<ParamRef> params{{"head.w", &head.w, &head.gw, true},
                                 {"head.b", &head.b, &head.gb, true}};
    Sgd opt(cfg.lr, cfg.momentum, cfg.weight_decay);
    Rng rng(cfg.seed);
    int D = features.dim(1);

    Tensor xb, logits;
    std::vector<int> yb;
    TrainLog log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = Clock::now();
        opt.lr = scheduled_lr(cfg, epoch);
        std::vector<int64_t> order = epoch_order(rng, n);

        double loss_sum = 0.0;
        int64_t seen = 0;
        for (int64_t start = 0; start < n; start += cfg.batch_size) {
            int b = static_cast<int>(std::min<int64_t>(cfg.batch_size, n - start));
            xb.resize({b, D});
            yb.resize(static_cast<size_t>(b));
            for (int i = 0; i < b; ++i) {
                int64_t src = order[static_cast<size_t>(start + i)];
                std::memcpy(xb.row(i), features.row(static_cast<int>(src)),
                            static_cast<size_t>(D) * sizeof(float));
                yb[static_cast<size_t>(i)] = labels[static_cast<size_t>(src)];
            }
            head.gw.fill(0.0f);
            head.gb.fill(0.0f);
            head.forward(xb, logits);
            CeResult res = cross_entropy_loss(logits, yb);
            check_finite(res.loss, "classifier");
            head.backward(xb, res.grad, nullptr);
            opt.step(params);
            loss_sum += res.loss * b;
            seen += b;
        }
        log.epochs.push_back(
            {epoch + 1, loss_sum / static_cast<double>(seen), opt.lr, seconds_since(t0)});
    }
    return log;
}

TrainLog train_linear_classifier(Network& net, const FrameSet& train, const TrainConfig& cfg) {
    cfg.validate();
    if (train.frames.empty()) throw std::invalid_argument("empty training set");
    if (!(net.labels == train.labels))
        throw std::invalid_argument("label spaces of model and data differ");

    // Frozen encoder: run it once in eval mode and train on cached features.
    int64_t n = train.size();
    Tensor features({static_cast<int>(n), Encoder::kReprDim});
    std::vector<int> labels(static_cast<size_t>(n));
    Tensor x;
    std::vector<int64_t> idx;
    constexpr int kChunk = 256;
    for (int64_t start = 0; start < n; start += kChunk) {
        int b = static_cast<int>(std::min<int64_t>(kChunk, n - start));
        idx.resize(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) idx[static_cast<size_t>(i)] = start + i;
        frames_to_input(train, idx.data(), b, x);
        const Tensor& r = net.forward_repr(x, /*train=*/false);
        std::memcpy(features.row(static_cast<int>(start)), r.data(),
                    static_cast<size_t>(r.numel()) * sizeof(float));
    }
    for (int64_t i = 0; i < n; ++i)
        labels[static_cast<size_t>(i)] = train.frames[static_cast<size_t>(i)].label;

    return train_linear_on_features(net.classifier, features, labels, cfg);
}

TrainLog train_ce_baseline(Network& net, const FrameSet& train, const TrainConfig& cfg) {
    cfg.validate();
    if (train.frames.empty()) throw std::invalid_argument("empty training set");
    if (!(net.labels == train.labels))
        throw std::invalid_argument("label spaces of model and data differ");

    std::vector<ParamRef> params = select_parameters(net, kPartEncoder | kPartClassifier);
    Sgd opt(cfg.lr, cfg.momentum, cfg.weight_decay);
    Rng rng(cfg.seed);

    Tensor x;
    std::vector<int> yb;
    TrainLog log;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = Clock::now();
        opt.lr = scheduled_lr(cfg, epoch);
        std::vector<int64_t> order = epoch_order(rng, train.size());

        double loss_sum = 0.0;
        int64_t seen = 0;
        for (int64_t start = 0; start < train.size(); start += cfg.batch_size) {
            int b = static_cast<int>(std::min<int64_t>(cfg.batch_size, train.size() - start));
            frames_to_input(train, order.data() + start, b, x);
            labels_to_vector(train, order.data() + start, b, yb);

            net.zero_grads();
            const Tensor& logits = net.forward_logits(x, /*train=*/true);
            CeResult res = cross_entropy_loss(logits, yb);
            check_finite(res.loss, "cross-entropy");
            net.backward_from_logits(x, res.grad, /*through_encoder=*/true);
            opt.step(params);
            loss_sum += res.loss * b;
            seen += b;
        }
        log.epochs.push_back(
            {epoch + 1, loss_sum / static_cast<double>(seen), opt.lr, seconds_since(t0)});
    }
    return log;
}

}  // namespace canids
