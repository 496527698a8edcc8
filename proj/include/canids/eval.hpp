#pragma once

#include <cstdint>
#include <functional>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "canids/framing.hpp"
#include "canids/model.hpp"

namespace canids {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<uint64_t> counts;  // row: true class, column: predicted class

    explicit ConfusionMatrix(int n = 0)
        : num_classes(n), counts(static_cast<size_t>(n) * static_cast<size_t>(n), 0) {}

    uint64_t& at(int t, int p) { return counts[static_cast<size_t>(t) * num_classes + p]; }
    uint64_t at(int t, int p) const { return counts[static_cast<size_t>(t) * num_classes + p]; }
    uint64_t total() const;
    uint64_t diagonal() const;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& labels, const std::vector<int>& preds,
                                 int num_classes);
void confusion_to_csv(const ConfusionMatrix& m, const std::vector<std::string>& names,
                      std::ostream& out);

// One-vs-rest metrics. A metric whose denominator is zero is flagged
// undefined rather than reported as zero; FNR and recall always sum to one
// where defined.
struct ClassMetrics {
    double support = 0.0;  // TP + FN
    double fnr = 0.0;
    double recall = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
    bool recall_defined = false;     // also covers fnr
    bool precision_defined = false;
    bool f1_defined = false;
};

struct EvalReport {
    std::vector<std::string> class_names;
    std::vector<ClassMetrics> per_class;
    ClassMetrics overall;     // macro average over classes where defined
    double micro_accuracy = 0.0;
    int runs = 1;
    ConfusionMatrix confusion;

    std::string to_table() const;
    void to_csv(std::ostream& out) const;
    static EvalReport from_csv(std::istream& in);  // metrics only, no confusion
};

EvalReport metrics_from_confusion(const ConfusionMatrix& m,
                                  const std::vector<std::string>& names);

// Averages per-run metric values (as the result tables do), summing the
// confusion counts. All runs must share a class list.
EvalReport average_reports(const std::vector<EvalReport>& runs);

// Eval-mode predictions, argmax with ties to the lowest index. Splits work
// across worker_count() threads; per-sample results are identical regardless
// of batching or thread count.
std::vector<int> predict(Network& net, const FrameSet& set, int batch_size = 256);

EvalReport evaluate_model(Network& net, const FrameSet& test);

struct MultiRunResult {
    std::vector<uint64_t> seeds;
    std::vector<EvalReport> runs;
    EvalReport averaged;
};

class MultiRunError : public std::runtime_error {
public:
    MultiRunError(const std::string& what, MultiRunResult partial)
        : std::runtime_error(what), partial(std::move(partial)) {}
    MultiRunResult partial;  // completed runs, preserved on abort
};

// Runs run_once with seeds base_seed, base_seed+1, ... and averages the
// reports. A failing run aborts with the completed runs attached.
MultiRunResult multi_run_protocol(const std::function<EvalReport(uint64_t)>& run_once, int runs,
                                  uint64_t base_seed);

struct BenchResult {
    int reps = 0;
    double mean_ms = 0.0;
    double median_ms = 0.0;
    double p95_ms = 0.0;
    double min_ms = 0.0;
    double max_ms = 0.0;
    int64_t total_params = 0;     // encoder + projector + classifier
    int64_t deployed_params = 0;  // encoder + classifier, what monitoring runs
    double frames_per_sec = 0.0;
    double bus_msgs_per_sec = 0.0;  // frames/s * 29, non-overlapping coverage

    std::string to_string() const;
};

// Single-thread batch-1 latency of the deployed forward pass over random
// frames.
BenchResult benchmark_inference(Network& net, int warmup, int reps, uint64_t seed);

// Worker threads for data-parallel evaluation: CANIDS_THREADS when set (>=1),
// otherwise the hardware concurrency.
int worker_count();

}  // namespace canids
