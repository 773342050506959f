#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "partseg/error.hpp"
#include "partseg/nnet.hpp"

using namespace partseg;

namespace {

void check_mask_rows(const NetworkOutput& out) {
    for (std::size_t i = 0; i < out.mask_probabilities.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < out.mask_probabilities.cols(); ++j) s += out.mask_probabilities(i, j);
        CHECK(std::abs(s - 1.0) <= 1e-6);
    }
    for (double c : out.confidences) {
        CHECK(c >= 0.0);
        CHECK(c <= 1.0);
    }
}

double max_abs(const std::vector<DenseArray>& g, Layer l) {
    double m = 0.0;
    for (double v : g[static_cast<std::size_t>(l)].data) m = std::max(m, std::abs(v));
    return m;
}

std::vector<TrainingSample> tiny_dataset(std::size_t shapes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<TrainingSample> out;
    for (std::size_t s = 0; s < shapes; ++s)
        out.push_back({fixtures::random_cloud(rng, 24, "s" + std::to_string(s)),
                       fixtures::random_labels(rng, 24, 3, 3), {}});
    return out;
}

TrainConfig tiny_train_config() {
    TrainConfig c;
    c.network = fixtures::small_config();
    c.k_masks = 4;
    c.batch = 2;
    c.epochs = 3;
    c.lr = 0.01;
    return c;
}

}  // namespace

TEST_CASE("forward shapes and invariants") {
    std::mt19937_64 rng(1);
    const auto params = init_params(fixtures::small_config(), 5);
    const auto cloud = fixtures::random_cloud(rng, 30);
    const auto out = forward(params, cloud);
    CHECK(out.semantic_logits.shape == std::vector<std::size_t>{30, 3});
    CHECK(out.mask_probabilities.shape == std::vector<std::size_t>{30, 5});
    CHECK(out.confidences.size() == 4);
    check_mask_rows(out);

    CHECK(forward(params, cloud).semantic_logits == out.semantic_logits);

    auto broken = params;
    broken.config.semantic_labels = 4;
    CHECK_THROWS_AS(forward(broken, cloud), ConfigError);

    NetworkConfig no_heads = fixtures::small_config();
    no_heads.k_masks = 0;
    const auto plain = forward(init_params(no_heads, 1), cloud);
    CHECK(plain.mask_probabilities.size() == 0);
    CHECK(plain.confidences.empty());
}

TEST_CASE("extreme weights keep mask rows normalized") {
    std::mt19937_64 rng(8);
    auto params = init_params(fixtures::small_config(), 2);
    for (auto& v : params[Layer::MaskW].data) v *= 200.0;
    const auto out = forward(params, fixtures::random_cloud(rng, 50));
    check_mask_rows(out);
}

TEST_CASE("permutation equivariance and duplicate points") {
    std::mt19937_64 rng(3);
    const auto params = init_params(fixtures::small_config(), 11);
    const auto cloud = fixtures::random_cloud(rng, 20);
    std::vector<std::size_t> perm(20);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto a = forward_cached(params, cloud);
    const auto b = forward_cached(params, cloud.select(perm));
    CHECK(a.global == b.global);
    CHECK(a.output.confidences == b.output.confidences);
    for (std::size_t i = 0; i < 20; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            CHECK(b.output.mask_probabilities(i, j) == a.output.mask_probabilities(perm[i], j));

    const auto gt = fixtures::random_labels(rng, 20, 3, 3);
    LevelLabels permuted = gt;
    for (std::size_t i = 0; i < 20; ++i) {
        permuted.semantic[i] = gt.semantic[perm[i]];
        permuted.instance[i] = gt.instance[perm[i]];
    }
    const LossWeights w;
    CHECK(compute_loss(b.output, permuted, w).total ==
          doctest::Approx(compute_loss(a.output, gt, w).total).epsilon(1e-12));

    std::vector<std::size_t> dup(20);
    std::iota(dup.begin(), dup.end(), std::size_t{0});
    dup.push_back(7);
    CHECK(forward_cached(params, cloud.select(dup)).global == a.global);
}

TEST_CASE("closed-form loss values") {
    const std::size_t n = 6;
    LevelLabels gt;
    gt.semantic = {1, 1, 2, 2, 0, 0};
    gt.instance = {1, 1, 2, 2, 0, 0};
    gt.instance_semantics = {{1, 1}, {2, 2}};

    NetworkOutput out;
    out.semantic_logits = DenseArray({n, 3}, 0.25);
    out.mask_probabilities = DenseArray({n, 4});
    for (std::size_t i = 0; i < 2; ++i) out.mask_probabilities(i, 1) = 1.0;
    for (std::size_t i = 2; i < 4; ++i) out.mask_probabilities(i, 0) = 1.0;
    for (std::size_t i = 4; i < 6; ++i) out.mask_probabilities(i, 3) = 1.0;
    out.confidences = {1.0, 1.0, 0.0};

    const auto b = compute_loss(out, gt, LossWeights{});
    CHECK(b.l_sem == doctest::Approx(std::log(3.0)).epsilon(1e-14));
    CHECK(b.l_ins == doctest::Approx(-1.0));
    CHECK(b.l_other == doctest::Approx(-1.0));
    CHECK(b.l_conf == doctest::Approx(0.0));
    CHECK(b.matching.assignment.mapping == std::vector<std::size_t>{1, 0});
    const double l21 = (std::sqrt(2.0) * 3.0) / std::sqrt(6.0);
    CHECK(b.l_l21 == doctest::Approx(l21));
    CHECK(std::abs(b.total - (b.l_sem + b.l_ins + b.l_other + b.l_conf + 0.1 * b.l_l21)) <= 1e-10);

    out.confidences = {0.5, 0.5, 0.5};
    LossWeights matched_only;
    matched_only.regress_unmatched_confidence = false;
    CHECK(compute_loss(out, gt, matched_only).l_conf == doctest::Approx(0.25));
    CHECK(compute_loss(out, gt, LossWeights{}).l_conf == doctest::Approx(0.25 + 0.25));

    LevelLabels too_many = gt;
    too_many.instance = {1, 2, 3, 4, 0, 0};
    too_many.instance_semantics = {{1, 1}, {2, 1}, {3, 2}, {4, 2}};
    CHECK_THROWS_AS(compute_loss(out, too_many, LossWeights{}), CapacityError);
}

TEST_CASE("multi-label logit loss") {
    DenseArray logits({2, 4}, 0.0);
    std::vector<std::vector<std::size_t>> targets{{0, 2}, {}};
    DenseArray grad;
    CHECK(multi_label_logit_loss(logits, targets, &grad) == doctest::Approx(2.0 * std::log(4.0)));
    CHECK(grad(1, 0) == 0.0);
    CHECK(grad(0, 0) == doctest::Approx(-0.5));
    CHECK(grad(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("loss decomposition holds on random inputs") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const auto params = init_params(fixtures::small_config(), trial);
        const auto cloud = fixtures::random_cloud(rng, 16);
        const auto gt = fixtures::random_labels(rng, 16, 3, 1 + trial % 4);
        LossWeights w{0.5 + trial, 0.3, 2.0, 0.7, trial % 2 == 0};
        const auto b = compute_loss(forward(params, cloud), gt, w);
        CHECK(std::abs(b.total - (b.l_sem + w.ins * b.l_ins + w.other * b.l_other +
                                  w.conf * b.l_conf + w.l21 * b.l_l21)) <= 1e-10);
    }
}

TEST_CASE("gradients match finite differences") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 3; ++trial) {
        const auto params = fixtures::random_params(rng, fixtures::small_config());
        const auto cloud = fixtures::random_cloud(rng, 16);
        const auto gt = fixtures::random_labels(rng, 16, 3, 1 + trial);
        const auto r = fixtures::check_gradient(params, cloud, gt, LossWeights{});
        CHECK(r.failures == 0);
        CHECK(r.checked == params.parameter_count());
    }
}

TEST_CASE("zero-weight terms contribute nothing") {
    std::mt19937_64 rng(6);
    const auto params = init_params(fixtures::small_config(), 9);
    const auto cloud = fixtures::random_cloud(rng, 16);
    const auto gt = fixtures::random_labels(rng, 16, 3, 2);
    const auto g = loss_gradient(params, cloud, gt, LossWeights{0.0, 0.0, 0.0, 0.0, true});
    CHECK(max_abs(g, Layer::MaskW) == 0.0);
    CHECK(max_abs(g, Layer::MaskB) == 0.0);
    CHECK(max_abs(g, Layer::ConfW) == 0.0);
    CHECK(max_abs(g, Layer::ConfB) == 0.0);
    CHECK(max_abs(g, Layer::SemW) > 0.0);
}

TEST_CASE("l21 subgradient at a zero channel is zero") {
    LevelLabels gt;
    gt.semantic = {1, 1};
    gt.instance = {1, 1};
    gt.instance_semantics = {{1, 1}};
    NetworkOutput out;
    out.semantic_logits = DenseArray({2, 1});
    out.mask_probabilities = DenseArray({2, 3});
    out.mask_probabilities(0, 0) = out.mask_probabilities(1, 0) = 1.0;
    out.confidences = {1.0, 0.0};
    OutputGradient g;
    LossWeights only_l21{0.0, 0.0, 0.0, 1.0, true};
    compute_loss(out, gt, only_l21, nullptr, &g);
    for (double v : g.mask_logits.data) CHECK(std::isfinite(v));
    CHECK(g.mask_logits(0, 1) == 0.0);
    CHECK(g.mask_logits(0, 2) == 0.0);
}

TEST_CASE("binarize reproduces one-hot masks") {
    NetworkOutput out;
    out.semantic_logits = DenseArray({5, 2});
    out.semantic_logits(0, 1) = out.semantic_logits(1, 1) = 4.0;
    out.semantic_logits(2, 0) = out.semantic_logits(3, 0) = 4.0;
    out.mask_probabilities = DenseArray({5, 4});
    out.mask_probabilities(0, 2) = out.mask_probabilities(1, 2) = 1.0;
    out.mask_probabilities(2, 0) = out.mask_probabilities(3, 0) = 1.0;
    out.mask_probabilities(4, 3) = 1.0;
    out.confidences = {0.25, 0.5, 0.75};
    const auto p = binarize(out);
    REQUIRE(p.masks.size() == 2);
    CHECK(p.masks[0] == PredictedMask{{2, 3}, 0.25, 1});
    CHECK(p.masks[1] == PredictedMask{{0, 1}, 0.75, 2});
    CHECK(binarize(out, 3).masks.empty());
}

TEST_CASE("training is deterministic and resumable") {
    const auto data = tiny_dataset(5, 1);
    auto config = tiny_train_config();
    const auto a = train(data, {}, config, Objective::Instance);
    const auto b = train(data, {}, config, Objective::Instance);
    CHECK(a.params == b.params);
    CHECK(a.optimizer == b.optimizer);
    CHECK(a.epochs_done == 3);

    config.epochs = 2;
    const auto partial = train(data, {}, config, Objective::Instance);
    const auto path = std::filesystem::temp_directory_path() / "partseg_resume.pskw";
    save_checkpoint(partial, path);
    config.epochs = 3;
    const auto resumed = train(data, {}, config, Objective::Instance, nullptr, {}, load_checkpoint(path));
    CHECK(resumed.params == a.params);
    CHECK(resumed.optimizer == a.optimizer);

    CHECK_THROWS_AS(train({}, {}, config, Objective::Instance), InvalidArgument);
}

TEST_CASE("checkpoint round trip") {
    const auto params = init_params(fixtures::small_config(), 3);
    const auto path = std::filesystem::temp_directory_path() / "partseg_params.pskw";
    save_checkpoint({params, {}, 0}, path, false);
    const auto back = load_checkpoint(path);
    CHECK(back.params == params);
    CHECK(back.optimizer.m.empty());

    std::filesystem::resize_file(path, 40);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
}

TEST_CASE("single-shape loss trends down") {
    const auto data = tiny_dataset(1, 5);
    auto config = tiny_train_config();
    config.epochs = 50;
    config.batch = 1;
    config.lr = 0.005;
    std::vector<EpochLog> log;
    train(data, {}, config, Objective::Instance, &log);
    REQUIRE(log.size() == 50);
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        first += log[i].total;
        last += log[40 + i].total;
    }
    CHECK(last < first);
    for (const auto& e : log)
        CHECK(std::abs(e.total - (e.l_sem + e.l_ins + e.l_other + e.l_conf + 0.1 * e.l_l21)) <= 1e-10);
}

TEST_CASE("early stopping restores the best parameters") {
    const auto data = tiny_dataset(4, 2);
    const auto val = tiny_dataset(2, 3);
    auto config = tiny_train_config();
    config.epochs = 40;
    config.patience = 2;
    config.lr = 0.05;
    std::vector<EpochLog> log;
    const auto s = train(data, val, config, Objective::Instance, &log);
    double best = 1e300;
    for (const auto& e : log) best = std::min(best, *e.validation_loss);
    CHECK(evaluate_loss(s.params, val, config, Objective::Instance).total == doctest::Approx(best));
}

TEST_CASE("l21 alone shrinks the total mask norm") {
    std::mt19937_64 rng(13);
    auto params = init_params(fixtures::small_config(), 4);
    const auto cloud = fixtures::random_cloud(rng, 16);
    const auto gt = fixtures::random_labels(rng, 16, 3, 2);
    const LossWeights only{0.0, 0.0, 0.0, 0.1, true};
    double prev = compute_loss(forward(params, cloud), gt, only).l_l21;
    for (int step = 0; step < 100; ++step) {
        const auto g = loss_gradient(params, cloud, gt, only);
        for (std::size_t t = 0; t < g.size(); ++t)
            for (std::size_t e = 0; e < g[t].size(); ++e) params.tensors[t].data[e] -= 0.001 * g[t].data[e];
        const double now = compute_loss(forward(params, cloud), gt, only).l_l21;
        CHECK(now <= prev + 1e-12);
        CHECK(now >= 1.0 - 1e-12);
        prev = now;
    }
}

TEST_CASE("config parsing") {
    const auto c = parse_train_config("# desk\nseed = 7\nepochs=12\nlr=0.002\nk_masks=16\n");
    CHECK(c.seed == 7);
    CHECK(c.epochs == 12);
    CHECK(c.lr == 0.002);
    CHECK(c.k_masks == 16);
    const std::string resolved = resolved_config(TrainConfig{});
    CHECK(resolved.find("lambda_ins=1\n") != std::string::npos);
    CHECK(resolved.find("lambda_l21=0.1\n") != std::string::npos);
    CHECK(parse_train_config(resolved).lr == 0.001);

    try {
        parse_train_config("seed=1\nwidth=3\n");
        FAIL("unknown key accepted");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_train_config("lr=fast\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("batch=0\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("seed=1\nseed=2\n"), ConfigError);

    const auto switches = parse_train_config("normalize=false\nconf_unmatched=0\noverflow=keep_largest\n");
    CHECK(!switches.normalize);
    CHECK(!switches.weights.regress_unmatched_confidence);
    CHECK(switches.overflow == OverflowPolicy::KeepLargest);
    const auto round = parse_train_config(resolved_config(switches));
    CHECK(!round.normalize);
    CHECK(round.overflow == OverflowPolicy::KeepLargest);
    CHECK(resolved.find("overflow=fail\n") != std::string::npos);
    CHECK_THROWS_AS(parse_train_config("overflow=drop\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("normalize=maybe\n"), ConfigError);
}
