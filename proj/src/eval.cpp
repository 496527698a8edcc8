#include "canids/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <sstream>
#include <thread>

#include "canids/rng.hpp"

namespace canids {
namespace {

using Clock = std::chrono::steady_clock;

double parse_double(const std::string& s, const char* what) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw EvalError(std::string("bad ") + what + " value '" + s + "'");
    }
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

void append_metrics_row(std::string& out, const std::string& name, const ClassMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d,%d\n", name.c_str(),
                  m.support, m.fnr, m.recall, m.precision, m.f1, m.recall_defined ? 1 : 0,
                  m.precision_defined ? 1 : 0, m.f1_defined ? 1 : 0);
    out += buf;
}

ClassMetrics parse_metrics_row(const std::vector<std::string>& f) {
    ClassMetrics m;
    m.support = parse_double(f[1], "support");
    m.fnr = parse_double(f[2], "fnr");
    m.recall = parse_double(f[3], "recall");
    m.precision = parse_double(f[4], "precision");
    m.f1 = parse_double(f[5], "f1");
    m.recall_defined = f[6] == "1";
    m.precision_defined = f[7] == "1";
    m.f1_defined = f[8] == "1";
    return m;
}

constexpr char kCsvHeader[] =
    "name,support,fnr,recall,precision,f1,recall_defined,precision_defined,f1_defined";

std::string format_metric(double v, bool defined) {
    if (!defined) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

uint64_t ConfusionMatrix::total() const {
    uint64_t s = 0;
    for (uint64_t c : counts) s += c;
    return s;
}

uint64_t ConfusionMatrix::diagonal() const {
    uint64_t s = 0;
    for (int c = 0; c < num_classes; ++c) s += at(c, c);
    return s;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& labels, const std::vector<int>& preds,
                                 int num_classes) {
    if (labels.size() != preds.size())
        throw EvalError("labels and predictions differ in length");
    if (num_classes < 1) throw EvalError("need at least one class");
    ConfusionMatrix m(num_classes);
    for (size_t i = 0; i < labels.size(); ++i) {
        int t = labels[i];
        int p = preds[i];
        if (t < 0 || t >= num_classes) throw EvalError("label out of range");
        if (p < 0 || p >= num_classes) throw EvalError("prediction out of range");
        ++m.at(t, p);
    }
    return m;
}

void confusion_to_csv(const ConfusionMatrix& m, const std::vector<std::string>& names,
                      std::ostream& out) {
    if (static_cast<int>(names.size()) != m.num_classes)
        throw EvalError("class name count does not match matrix size");
    out << "true\\pred";
    for (const auto& n : names) out << ',' << n;
    out << '\n';
    for (int t = 0; t < m.num_classes; ++t) {
        out << names[static_cast<size_t>(t)];
        for (int p = 0; p < m.num_classes; ++p) out << ',' << m.at(t, p);
        out << '\n';
    }
}

EvalReport metrics_from_confusion(const ConfusionMatrix& m,
                                  const std::vector<std::string>& names) {
    if (static_cast<int>(names.size()) != m.num_classes)
        throw EvalError("class name count does not match matrix size");
    EvalReport rep;
    rep.class_names = names;
    rep.confusion = m;
    rep.per_class.resize(names.size());

    for (int c = 0; c < m.num_classes; ++c) {
        uint64_t tp = m.at(c, c);
        uint64_t fn = 0, fp = 0;
        for (int k = 0; k < m.num_classes; ++k) {
            if (k == c) continue;
            fn += m.at(c, k);
            fp += m.at(k, c);
        }
        ClassMetrics& cm = rep.per_class[static_cast<size_t>(c)];
        cm.support = static_cast<double>(tp + fn);
        if (tp + fn > 0) {
            cm.recall_defined = true;
            cm.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
            cm.fnr = static_cast<double>(fn) / static_cast<double>(tp + fn);
        }
        if (tp + fp > 0) {
            cm.precision_defined = true;
            cm.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        }
        if (cm.recall_defined && cm.precision_defined && cm.recall + cm.precision > 0.0) {
            cm.f1_defined = true;
            cm.f1 = 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall);
        }
    }

    // macro average over the classes where each metric is defined
    ClassMetrics& o = rep.overall;
    int nr = 0, np = 0, nf = 0;
    for (const ClassMetrics& cm : rep.per_class) {
        o.support += cm.support;
        if (cm.recall_defined) {
            o.recall += cm.recall;
            o.fnr += cm.fnr;
            ++nr;
        }
        if (cm.precision_defined) {
            o.precision += cm.precision;
            ++np;
        }
        if (cm.f1_defined) {
            o.f1 += cm.f1;
            ++nf;
        }
    }
    if (nr > 0) {
        o.recall /= nr;
        o.fnr /= nr;
        o.recall_defined = true;
    }
    if (np > 0) {
        o.precision /= np;
        o.precision_defined = true;
    }
    if (nf > 0) {
        o.f1 /= nf;
        o.f1_defined = true;
    }
    uint64_t total = m.total();
    rep.micro_accuracy =
        total > 0 ? static_cast<double>(m.diagonal()) / static_cast<double>(total) : 0.0;
    return rep;
}

std::string EvalReport::to_table() const {
    std::ostringstream os;
    size_t w = 8;
    for (const auto& n : class_names) w = std::max(w, n.size());
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-*s %10s %8s %8s %9s %8s\n", static_cast<int>(w), "class",
                  "support", "FNR", "recall", "precision", "F1");
    os << buf;
    for (size_t c = 0; c < class_names.size(); ++c) {
        const ClassMetrics& m = per_class[c];
        std::snprintf(buf, sizeof(buf), "%-*s %10.0f %8s %8s %9s %8s\n", static_cast<int>(w),
                      class_names[c].c_str(), m.support,
                      format_metric(m.fnr, m.recall_defined).c_str(),
                      format_metric(m.recall, m.recall_defined).c_str(),
                      format_metric(m.precision, m.precision_defined).c_str(),
                      format_metric(m.f1, m.f1_defined).c_str());
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-*s %10.0f %8s %8s %9s %8s\n", static_cast<int>(w),
                  "overall", overall.support, format_metric(overall.fnr, overall.recall_defined).c_str(),
                  format_metric(overall.recall, overall.recall_defined).c_str(),
                  format_metric(overall.precision, overall.precision_defined).c_str(),
                  format_metric(overall.f1, overall.f1_defined).c_str());
    os << buf;
    std::snprintf(buf, sizeof(buf), "accuracy %.4f over %llu samples, %d run%s\n", micro_accuracy,
                  static_cast<unsigned long long>(confusion.total()), runs, runs == 1 ? "" : "s");
    os << buf;
    return os.str();
}

void EvalReport::to_csv(std::ostream& out) const {
    for (const auto& n : class_names)
        if (n.empty() || n.front() == '(' || n.find(',') != std::string::npos)
            throw EvalError("class name '" + n + "' cannot be serialized");
    std::string s;
    s += kCsvHeader;
    s += '\n';
    for (size_t c = 0; c < class_names.size(); ++c)
        append_metrics_row(s, class_names[c], per_class[c]);
    append_metrics_row(s, "(overall)", overall);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "(accuracy),%.17g,0,0,0,0,0,0,0\n", micro_accuracy);
    s += buf;
    std::snprintf(buf, sizeof(buf), "(runs),%d,0,0,0,0,0,0,0\n", runs);
    s += buf;
    out << s;
}

EvalReport EvalReport::from_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw EvalError("empty metrics csv");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCsvHeader) throw EvalError("unrecognized metrics csv header");
    EvalReport rep;
    bool saw_overall = false, saw_accuracy = false, saw_runs = false;
    while (std::getline(in, line)) {
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        std::vector<std::string> f = split_csv_line(line);
        if (f.size() != 9) throw EvalError("metrics csv row with wrong field count");
        if (f[0] == "(overall)") {
            rep.overall = parse_metrics_row(f);
            saw_overall = true;
        } else if (f[0] == "(accuracy)") {
            rep.micro_accuracy = parse_double(f[1], "accuracy");
            saw_accuracy = true;
        } else if (f[0] == "(runs)") {
            rep.runs = static_cast<int>(parse_double(f[1], "runs"));
            saw_runs = true;
        } else {
            rep.class_names.push_back(f[0]);
            rep.per_class.push_back(parse_metrics_row(f));
        }
    }
    if (rep.class_names.empty() || !saw_overall || !saw_accuracy || !saw_runs)
        throw EvalError("incomplete metrics csv");
    rep.confusion = ConfusionMatrix(static_cast<int>(rep.class_names.size()));
    return rep;
}

EvalReport average_reports(const std::vector<EvalReport>& runs) {
    if (runs.empty()) throw EvalError("no reports to average");
    const std::vector<std::string>& names = runs.front().class_names;
    for (const EvalReport& r : runs)
        if (r.class_names != names) throw EvalError("reports have different class lists");

    EvalReport avg;
    avg.class_names = names;
    avg.per_class.resize(names.size());
    avg.confusion = ConfusionMatrix(static_cast<int>(names.size()));
    avg.runs = 0;

    auto fold = [](ClassMetrics& acc, int& nr, int& np, int& nf, const ClassMetrics& m) {
        acc.support += m.support;
        if (m.recall_defined) {
            acc.recall += m.recall;
            acc.fnr += m.fnr;
            ++nr;
        }
        if (m.precision_defined) {
            acc.precision += m.precision;
            ++np;
        }
        if (m.f1_defined) {
            acc.f1 += m.f1;
            ++nf;
        }
    };
    auto finish = [](ClassMetrics& acc, int nr, int np, int nf, int n) {
        acc.support /= n;
        if (nr > 0) {
            acc.recall /= nr;
            acc.fnr /= nr;
            acc.recall_defined = true;
        }
        if (np > 0) {
            acc.precision /= np;
            acc.precision_defined = true;
        }
        if (nf > 0) {
            acc.f1 /= nf;
            acc.f1_defined = true;
        }
    };

    std::vector<int> nr(names.size(), 0), np(names.size(), 0), nf(names.size(), 0);
    int onr = 0, onp = 0, onf = 0;
    for (const EvalReport& r : runs) {
        for (size_t c = 0; c < names.size(); ++c)
            fold(avg.per_class[c], nr[c], np[c], nf[c], r.per_class[c]);
        fold(avg.overall, onr, onp, onf, r.overall);
        avg.micro_accuracy += r.micro_accuracy;
        avg.runs += r.runs;
        if (r.confusion.num_classes == avg.confusion.num_classes)
            for (size_t i = 0; i < r.confusion.counts.size(); ++i)
                avg.confusion.counts[i] += r.confusion.counts[i];
    }
    int n = static_cast<int>(runs.size());
    for (size_t c = 0; c < names.size(); ++c)
        finish(avg.per_class[c], nr[c], np[c], nf[c], n);
    finish(avg.overall, onr, onp, onf, n);
    avg.micro_accuracy /= n;
    return avg;
}

namespace {

void predict_range(Network& net, const FrameSet& set, int64_t begin, int64_t end, int batch_size,
                   std::vector<int>& preds) {
    Tensor x;
    std::vector<int64_t> idx;
    for (int64_t start = begin; start < end; start += batch_size) {
        int b = static_cast<int>(std::min<int64_t>(batch_size, end - start));
        idx.resize(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) idx[static_cast<size_t>(i)] = start + i;
        frames_to_input(set, idx.data(), b, x);
        const Tensor& logits = net.forward_logits(x, /*train=*/false);
        int k = logits.dim(1);
        for (int i = 0; i < b; ++i) {
            const float* row = logits.row(i);
            int best = 0;
            for (int c = 1; c < k; ++c)
                if (row[c] > row[best]) best = c;
            preds[static_cast<size_t>(start + i)] = best;
        }
    }
}

}  // namespace

std::vector<int> predict(Network& net, const FrameSet& set, int batch_size) {
    if (batch_size < 1) throw EvalError("batch_size must be at least 1");
    int64_t n = set.size();
    std::vector<int> preds(static_cast<size_t>(n), 0);
    if (n == 0) return preds;

    int workers = worker_count();
    int64_t min_chunk = batch_size;  // below this, threads cost more than they save
    int64_t max_workers = std::max<int64_t>(1, n / std::max<int64_t>(1, min_chunk));
    workers = static_cast<int>(std::min<int64_t>(workers, max_workers));

    if (workers <= 1) {
        predict_range(net, set, 0, n, batch_size, preds);
        return preds;
    }

    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    int64_t per = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        int64_t begin = static_cast<int64_t>(w) * per;
        int64_t end = std::min<int64_t>(n, begin + per);
        if (begin >= end) break;
        pool.emplace_back([&, w, begin, end]() {
            try {
                Network local(net);  // private forward caches per thread
                predict_range(local, set, begin, end, batch_size, preds);
            } catch (...) {
                errors[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return preds;
}

EvalReport evaluate_model(Network& net, const FrameSet& test) {
    if (!(net.labels == test.labels))
        throw EvalError("label spaces of model and data differ");
    if (test.frames.empty()) throw EvalError("empty evaluation set");
    std::vector<int> preds = predict(net, test);
    std::vector<int> labels(test.frames.size());
    for (size_t i = 0; i < test.frames.size(); ++i) labels[i] = test.frames[i].label;
    ConfusionMatrix m = confusion_matrix(labels, preds, net.labels.size());
    return metrics_from_confusion(m, net.labels.names);
}

MultiRunResult multi_run_protocol(const std::function<EvalReport(uint64_t)>& run_once, int runs,
                                  uint64_t base_seed) {
    if (runs < 1) throw EvalError("need at least one run");
    MultiRunResult result;
    for (int i = 0; i < runs; ++i) {
        uint64_t seed = base_seed + static_cast<uint64_t>(i);
        try {
            result.runs.push_back(run_once(seed));
            result.seeds.push_back(seed);
        } catch (const std::exception& e) {
            throw MultiRunError("run with seed " + std::to_string(seed) + " failed: " + e.what(),
                                std::move(result));
        }
    }
    result.averaged = average_reports(result.runs);
    return result;
}

std::string BenchResult::to_string() const {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "latency over %d reps: mean %.3f ms, median %.3f ms, p95 %.3f ms, "
                  "min %.3f ms, max %.3f ms\n"
                  "parameters: %lld total, %lld deployed\n"
                  "throughput: %.0f windows/s, %.0f bus messages/s",
                  reps, mean_ms, median_ms, p95_ms, min_ms, max_ms,
                  static_cast<long long>(total_params), static_cast<long long>(deployed_params),
                  frames_per_sec, bus_msgs_per_sec);
    return buf;
}

BenchResult benchmark_inference(Network& net, int warmup, int reps, uint64_t seed) {
    if (reps < 1) throw EvalError("need at least one timed repetition");
    if (warmup < 0) throw EvalError("warmup cannot be negative");

    Rng rng(seed);
    Tensor x({1, 1, kWindow, kWindow});
    auto randomize = [&]() {
        float* p = x.data();
        for (int64_t i = 0; i < x.numel(); ++i) p[i] = rng.uniform() < 0.5 ? 0.0f : 1.0f;
    };

    for (int i = 0; i < warmup; ++i) {
        randomize();
        net.forward_logits(x, /*train=*/false);
    }

    std::vector<double> ms(static_cast<size_t>(reps));
    for (int i = 0; i < reps; ++i) {
        randomize();
        auto t0 = Clock::now();
        net.forward_logits(x, /*train=*/false);
        ms[static_cast<size_t>(i)] = std::chrono::duration<double, std::milli>(Clock::now() - t0)
                                         .count();
    }

    std::vector<double> sorted = ms;
    std::sort(sorted.begin(), sorted.end());
    BenchResult r;
    r.reps = reps;
    double sum = 0.0;
    for (double v : ms) sum += v;
    r.mean_ms = sum / reps;
    r.median_ms = reps % 2 == 1 ? sorted[static_cast<size_t>(reps / 2)]
                                : 0.5 * (sorted[static_cast<size_t>(reps / 2 - 1)] +
                                         sorted[static_cast<size_t>(reps / 2)]);
    size_t p95_idx = static_cast<size_t>(std::ceil(0.95 * reps)) - 1;
    r.p95_ms = sorted[std::min(p95_idx, sorted.size() - 1)];
    r.min_ms = sorted.front();
    r.max_ms = sorted.back();

    auto count_part = [&](int parts) {
        int64_t n = 0;
        for (const ParamRef& p : select_parameters(net, parts)) n += p.value->numel();
        return n;
    };
    r.total_params = count_part(kPartEncoder | kPartProjector | kPartClassifier);
    r.deployed_params = count_part(kPartEncoder | kPartClassifier);
    r.frames_per_sec = r.mean_ms > 0.0 ? 1000.0 / r.mean_ms : 0.0;
    r.bus_msgs_per_sec = r.frames_per_sec * kWindow;
    return r;
}

int worker_count() {
    if (const char* env = std::getenv("CANIDS_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end && *end == '\0' && v >= 1) return static_cast<int>(v);
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace canids
