#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

#include "canids/losses.hpp"
#include "canids/model.hpp"
#include "canids/rng.hpp"
#include "canids/serialize.hpp"
#include "doctest.h"

using namespace canids;

namespace {

LabelSpace five_classes() { return LabelSpace{{"normal", "dos", "fuzzy", "gear", "rpm"}}; }
LabelSpace four_classes() { return LabelSpace{{"normal", "dos", "fuzzy", "malfunction"}}; }

Tensor random_frames(int n, uint64_t seed) {
    Rng rng(seed);
    Tensor x({n, 1, kWindow, kWindow});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform() < 0.12 ? 1.0f : 0.0f;
    return x;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * sizeof(float)) == 0;
}

std::string temp_path(const char* name) {
    return std::string("/tmp/canids_model_test_") + name;
}

}  // namespace

TEST_CASE("initialization is deterministic in the seed") {
    Network a(five_classes()), b(five_classes()), c(five_classes());
    init_network(a, 42);
    init_network(b, 42);
    init_network(c, 43);

    auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    REQUIRE(pa.size() == pb.size());
    bool all_equal_ab = true, all_equal_ac = true;
    for (size_t i = 0; i < pa.size(); ++i) {
        all_equal_ab &= tensors_equal(*pa[i].value, *pb[i].value);
        all_equal_ac &= tensors_equal(*pa[i].value, *pc[i].value);
    }
    CHECK(all_equal_ab);
    CHECK_FALSE(all_equal_ac);
}

TEST_CASE("spatial shapes shrink 29 -> 15 -> 8 -> 4") {
    auto chain = Encoder::shape_chain();
    CHECK(chain[0] == std::array<int, 3>{16, 29, 29});
    CHECK(chain[1] == std::array<int, 3>{16, 29, 29});
    CHECK(chain[2] == std::array<int, 3>{32, 15, 15});
    CHECK(chain[3] == std::array<int, 3>{64, 8, 8});
    CHECK(chain[4] == std::array<int, 3>{128, 4, 4});
}

TEST_CASE("parameter counts") {
    Network net(five_classes());
    CHECK(net.encoder.param_count() == 699888);
    CHECK(net.projector.param_count() == 33024);
    CHECK(net.classifier.param_count() == 645);
    CHECK(net.count_parameters() == 733557);

    int64_t deployed = 0;
    for (const ParamRef& p : select_parameters(net, kPartEncoder | kPartClassifier))
        deployed += p.value->numel();
    CHECK(deployed == 700533);

    // the full model stays in the intended sub-million envelope
    CHECK(net.count_parameters() >= 665000);
    CHECK(net.count_parameters() <= 735000);
}

TEST_CASE("eval forward is pure and batch-independent") {
    Network net(five_classes());
    init_network(net, 7);
    Tensor x = random_frames(6, 100);

    Tensor first = net.forward_logits(x, false);
    Tensor second = net.forward_logits(x, false);
    CHECK(tensors_equal(first, second));

    // each sample alone gives bitwise the same row as inside the batch
    for (int i = 0; i < 6; ++i) {
        Tensor one({1, 1, kWindow, kWindow});
        std::memcpy(one.data(), x.data() + static_cast<size_t>(i) * kFrameBits,
                    sizeof(float) * kFrameBits);
        const Tensor& row = net.forward_logits(one, false);
        CHECK(std::memcmp(row.data(), first.data() + static_cast<size_t>(i) * 5,
                          5 * sizeof(float)) == 0);
    }
}

TEST_CASE("eval forward commutes with row permutation") {
    Network net(five_classes());
    init_network(net, 8);
    Tensor x = random_frames(5, 101);
    Tensor logits = net.forward_logits(x, false);

    int perm[5] = {3, 0, 4, 2, 1};
    Tensor xp({5, 1, kWindow, kWindow});
    for (int i = 0; i < 5; ++i)
        std::memcpy(xp.data() + static_cast<size_t>(i) * kFrameBits,
                    x.data() + static_cast<size_t>(perm[i]) * kFrameBits,
                    sizeof(float) * kFrameBits);
    Tensor lp = net.forward_logits(xp, false);
    for (int i = 0; i < 5; ++i)
        CHECK(std::memcmp(lp.data() + static_cast<size_t>(i) * 5,
                          logits.data() + static_cast<size_t>(perm[i]) * 5,
                          5 * sizeof(float)) == 0);
}

TEST_CASE("training and eval modes differ while statistics adapt") {
    Network net(five_classes());
    init_network(net, 9);
    Tensor x = random_frames(8, 102);

    Tensor eval_before = net.forward_repr(x, false);
    net.forward_repr(x, true);  // moves the running statistics
    Tensor eval_after = net.forward_repr(x, false);
    CHECK_FALSE(tensors_equal(eval_before, eval_after));
}

TEST_CASE("projector emits unit rows and keeps zero at zero") {
    Projector proj;
    Rng rng(3);
    proj.init(rng);

    Tensor r({4, Encoder::kReprDim});
    for (int64_t i = 0; i < r.numel(); ++i) r[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (int c = 0; c < Encoder::kReprDim; ++c) r.at(2, c) = 0.0f;  // a dead representation

    const Tensor& z = proj.forward(r);
    for (int i = 0; i < 4; ++i) {
        double n = 0.0;
        for (int c = 0; c < Encoder::kReprDim; ++c)
            n += static_cast<double>(z.at(i, c)) * static_cast<double>(z.at(i, c));
        if (i == 2)
            CHECK(n == 0.0);
        else
            CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("row normalization helper") {
    Tensor x({3, 4});
    float vals[12] = {3, 4, 0, 0, 0, 0, 0, 0, 1, -1, 1, -1};
    std::memcpy(x.data(), vals, sizeof(vals));
    Tensor y, norms;
    l2_normalize_rows(x, y, norms, /*safe=*/true);
    CHECK(y.at(0, 0) == doctest::Approx(0.6));
    CHECK(y.at(0, 1) == doctest::Approx(0.8));
    for (int c = 0; c < 4; ++c) CHECK(y.at(1, c) == 0.0f);  // zero row passes through
    CHECK(y.at(2, 0) == doctest::Approx(0.5));

    // backward against central differences on a quadratic readout
    Rng rng(5);
    Tensor x2({2, 6});
    for (int64_t i = 0; i < x2.numel(); ++i) x2[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    Tensor w({2, 6});
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<float>(rng.uniform(-1.0, 1.0));

    auto readout = [&](const Tensor& input) {
        Tensor yy, nn;
        l2_normalize_rows(input, yy, nn, true);
        double s = 0.0;
        for (int64_t i = 0; i < yy.numel(); ++i)
            s += static_cast<double>(yy[i]) * static_cast<double>(w[i]);
        return s;
    };

    Tensor y2, n2;
    l2_normalize_rows(x2, y2, n2, true);
    Tensor dx;
    l2_normalize_rows_backward(y2, n2, w, dx);

    for (int64_t i = 0; i < x2.numel(); i += 3) {
        float keep = x2[i];
        float h = 1e-3f;
        x2[i] = keep + h;
        double up = readout(x2);
        x2[i] = keep - h;
        double dn = readout(x2);
        x2[i] = keep;
        double num = (up - dn) / (2.0 * static_cast<double>(h));
        CHECK(static_cast<double>(dx[i]) == doctest::Approx(num).epsilon(5e-3));
    }
}

TEST_CASE("a residual block with a silenced main path is the identity on relu-land") {
    ResidualBlock block(32, 32, 1);
    Rng rng(4);
    block.init(rng);
    block.bn2.gamma.fill(0.0f);
    block.bn2.beta.fill(0.0f);

    Workspace ws;
    Tensor x({2, 32, 7, 7});
    for (int64_t i = 0; i < x.numel(); ++i)
        x[i] = std::max(0.0f, static_cast<float>(rng.uniform(-1.0, 1.0)));

    const Tensor& y = block.forward(x, /*train=*/false, ws);
    REQUIRE(y.shape() == x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("network gradients match central differences") {
    Network net(five_classes());
    init_network(net, 11);
    Tensor x = random_frames(4, 103);
    std::vector<int> labels{0, 2, 1, 4};

    auto loss_of = [&]() {
        const Tensor& logits = net.forward_logits(x, /*train=*/true);
        return cross_entropy_loss(logits, labels, /*with_grad=*/false).loss;
    };

    net.zero_grads();
    const Tensor& logits = net.forward_logits(x, true);
    CeResult res = cross_entropy_loss(logits, labels);
    net.backward_from_logits(x, res.grad, /*through_encoder=*/true);

    // Single-coordinate differences drown in float forward noise for the deep
    // tensors (the loss delta drops to ~1e-4), so probe each tensor along its
    // own gradient direction instead: stepping theta by +-h*g/|g| must change
    // the loss at rate |g|.
    const char* names[] = {
        "encoder.stem.conv.w",   "encoder.stem.bn.gamma", "encoder.s1.b0.conv1.w",
        "encoder.s2.b0.proj.w",  "encoder.s3.b1.conv2.w", "encoder.s4.b0.bn1.beta",
        "encoder.s4.b1.conv1.w", "classifier.fc.w",       "classifier.fc.b",
    };

    auto params = net.parameters();
    for (const char* name : names) {
        ParamRef* ref = nullptr;
        for (auto& p : params)
            if (p.name == name) ref = &p;
        REQUIRE_MESSAGE(ref != nullptr, name);

        Tensor& w = *ref->value;
        const Tensor& g = *ref->grad;
        std::vector<float> keep(w.data(), w.data() + w.numel());

        double gn = 0.0;
        for (int64_t i = 0; i < g.numel(); ++i) gn += static_cast<double>(g[i]) * g[i];
        gn = std::sqrt(gn);
        REQUIRE_MESSAGE(gn > 0.0, name);

        double h = std::clamp(0.025 / gn, 1e-3, 0.25);
        for (int64_t i = 0; i < w.numel(); ++i)
            w[i] = static_cast<float>(keep[static_cast<size_t>(i)] + h * g[i] / gn);
        double up = loss_of();
        for (int64_t i = 0; i < w.numel(); ++i)
            w[i] = static_cast<float>(keep[static_cast<size_t>(i)] - h * g[i] / gn);
        double dn = loss_of();
        std::copy(keep.begin(), keep.end(), w.data());

        double num = (up - dn) / (2.0 * h);
        double tol = 4e-2 * std::max(gn, 1e-3);
        CHECK_MESSAGE(std::abs(num - gn) <= tol, name << ": directional " << num << " |g| " << gn);
    }
}

TEST_CASE("projector gradients match central differences through the embedding") {
    Network net(five_classes());
    init_network(net, 12);
    Tensor x = random_frames(4, 104);
    std::vector<int> labels{0, 0, 1, 1};
    double tau = 0.2;

    auto loss_of = [&]() {
        const Tensor& z = net.forward_embedding(x, /*train=*/true);
        return supcon_loss(z, labels, tau, /*with_grad=*/false).loss;
    };

    net.zero_grads();
    const Tensor& z = net.forward_embedding(x, true);
    SupConResult res = supcon_loss(z, labels, tau);
    net.backward_from_embedding(x, res.grad);

    auto params = net.parameters();
    const char* names[] = {"projector.fc1.w", "projector.fc2.w", "projector.fc2.b",
                           "encoder.s4.b1.conv2.w"};
    int64_t indices[] = {1000, 500, 7, 1234};
    for (int k = 0; k < 4; ++k) {
        ParamRef* ref = nullptr;
        for (auto& p : params)
            if (p.name == names[k]) ref = &p;
        REQUIRE_MESSAGE(ref != nullptr, names[k]);

        float& w = (*ref->value)[indices[k]];
        float keep = w;
        float h = 1e-2f;
        w = keep + h;
        double up = loss_of();
        w = keep - h;
        double dn = loss_of();
        w = keep;

        double num = (up - dn) / (static_cast<double>(keep + h) - static_cast<double>(keep - h));
        double ana = static_cast<double>((*ref->grad)[indices[k]]);
        double tol = 2e-2 * std::max({1e-3, std::abs(num), std::abs(ana)});
        CHECK_MESSAGE(std::abs(num - ana) <= tol,
                      names[k] << ": num " << num << " ana " << ana);
    }
}

TEST_CASE("checkpoints round-trip parameters and running statistics") {
    std::string path = temp_path("roundtrip.canw");
    Network net(five_classes());
    init_network(net, 21);
    Tensor x = random_frames(8, 105);
    net.forward_repr(x, true);  // perturb the running statistics

    save_checkpoint(net, path, kPartEncoder | kPartProjector | kPartClassifier);

    Network back(five_classes());
    init_network(back, 99);
    std::optional<LabelSpace> labels =
        load_checkpoint(back, path, kPartEncoder | kPartProjector | kPartClassifier);
    REQUIRE(labels.has_value());
    CHECK(*labels == five_classes());

    auto pa = net.parameters(), pb = back.parameters();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(tensors_equal(*pa[i].value, *pb[i].value));
    auto ba = net.buffers(), bb = back.buffers();
    for (size_t i = 0; i < ba.size(); ++i) CHECK(tensors_equal(*ba[i].value, *bb[i].value));

    CHECK(checkpoint_fingerprint(path) == io::fnv1a64(Encoder::arch_string()));
    std::optional<LabelSpace> meta = checkpoint_labels(path);
    REQUIRE(meta.has_value());
    CHECK(*meta == five_classes());
    std::remove(path.c_str());
}

TEST_CASE("partial checkpoints load only their parts") {
    std::string enc_path = temp_path("encoder.canw");
    Network net(five_classes());
    init_network(net, 22);
    save_checkpoint(net, enc_path, kPartEncoder);

    CHECK_FALSE(checkpoint_labels(enc_path).has_value());

    Network back(five_classes());
    init_network(back, 23);
    Tensor clf_before = back.classifier.w;
    load_checkpoint(back, enc_path, kPartEncoder);
    CHECK(tensors_equal(back.encoder.stem.w, net.encoder.stem.w));
    CHECK(tensors_equal(back.classifier.w, clf_before));  // untouched

    // asking for parts the file lacks is an error in strict mode only
    CHECK_THROWS_AS(load_checkpoint(back, enc_path, kPartEncoder | kPartProjector, true),
                    ModelError);
    CHECK_NOTHROW(load_checkpoint(back, enc_path, kPartEncoder | kPartProjector, false));
    std::remove(enc_path.c_str());
}

TEST_CASE("corrupted checkpoints are rejected") {
    std::string path = temp_path("corrupt.canw");
    Network net(five_classes());
    init_network(net, 24);
    save_checkpoint(net, path, kPartEncoder | kPartProjector | kPartClassifier);

    SUBCASE("payload byte flip") {
        FILE* f = std::fopen(path.c_str(), "r+b");
        REQUIRE(f);
        std::fseek(f, -5, SEEK_END);
        int c = std::fgetc(f);
        std::fseek(f, -1, SEEK_CUR);
        std::fputc(c ^ 0xff, f);
        std::fclose(f);

        Network back(five_classes());
        CHECK_THROWS_WITH_AS(
            load_checkpoint(back, path, kPartEncoder, true),
            doctest::Contains("checksum"), ModelError);
    }
    SUBCASE("wrong magic") {
        FILE* f = std::fopen(path.c_str(), "r+b");
        REQUIRE(f);
        std::fputc('X', f);
        std::fclose(f);
        Network back(five_classes());
        CHECK_THROWS_AS(load_checkpoint(back, path, kPartEncoder, true), ModelError);
    }
    SUBCASE("classifier width mismatch") {
        Network target(four_classes());
        init_network(target, 25);
        CHECK_THROWS_AS(load_checkpoint(target, path, kPartClassifier, true), ModelError);
        CHECK_NOTHROW(load_checkpoint(target, path, kPartEncoder, true));
    }
    std::remove(path.c_str());
}

TEST_CASE("frame batches expand to the network input layout") {
    std::vector<CanRecord> rec(40);
    Rng rng(6);
    for (size_t i = 0; i < rec.size(); ++i) {
        rec[i].timestamp = 0.001 * static_cast<double>(i);
        rec[i].can_id = rng.next_u32() & kMaxCanId;
    }
    FrameSet set = build_frames(rec, 10, 1, LabelSpace{{"normal", "dos"}});
    REQUIRE(set.size() == 2);

    int64_t idx[2] = {1, 0};
    Tensor x;
    frames_to_input(set, idx, 2, x);
    CHECK(x.shape() == std::vector<int>{2, 1, kWindow, kWindow});
    for (int r = 0; r < kWindow; ++r)
        for (int c = 0; c < kWindow; ++c) {
            CHECK(x.at(0, 0, r, c) == (set.frames[1].get(r, c) ? 1.0f : 0.0f));
            CHECK(x.at(1, 0, r, c) == (set.frames[0].get(r, c) ? 1.0f : 0.0f));
        }
}

TEST_CASE("architecture string pins the layout") {
    CHECK(Encoder::arch_string() ==
          "canids-enc-v1:in1x29x29;stem16k3s1p1;widths16,32,64,128;blocks2,2,2,2;repr128");
}
