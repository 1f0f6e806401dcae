#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pot/training.hpp"
#include "support.hpp"

using namespace pot;

namespace {

// Naive scalar-loop versions of the three objectives.
double loop_stage1(const Tensor& yp, const Tensor& yt) {
    double acc = 0;
    for (int i = 0; i < yp.dim(0); ++i) {
        double n2 = 0;
        for (int c = 0; c < 3; ++c) {
            const double d = yp.at(i, c) - yt.at(i, c);
            n2 += d * d;
        }
        acc += n2;
    }
    return acc / yp.dim(0);
}

double loop_sigma(const Tensor& yp, const Tensor& yt, const Tensor& sigma) {
    double acc = 0;
    for (int i = 0; i < yp.dim(0); ++i) {
        double n2 = 0, s2 = 0;
        for (int c = 0; c < 3; ++c) {
            const double s = std::max(static_cast<double>(sigma.at(i, c)),
                                      static_cast<double>(kSigmaFloor));
            const double r = (yp.at(i, c) - yt.at(i, c)) / s;
            n2 += r * r;
            s2 += s * s;
        }
        acc += n2 + std::log(s2);
    }
    return acc / yp.dim(0);
}

double loop_stage2(const Tensor& yr, const Tensor& yt, const Tensor& yp, const Tensor& sigma,
                   double lambda) {
    return loop_stage1(yr, yt) + lambda * loop_sigma(yp, yt, sigma);
}

std::vector<PoseSample> tiny_dataset(int count, std::uint64_t seed, double scale = 1.0) {
    SynthConfig sc;
    sc.count = count;
    sc.seed = seed;
    for (real& b : sc.bone_lengths_mm) b *= static_cast<real>(scale);
    return synth_generate(sc);
}

struct Models {
    PotModel pot;
    UgrnModel ugrn;
};

Models desk_models(std::uint64_t seed) {
    ModelConfig mc = ModelConfig::desk();
    mc.pot_layers = 2;
    mc.ugrn_layers = 1;
    mc.channels = 16;
    mc.heads = 2;
    Skeleton sk = canonical_skeleton();
    Rng r1 = Rng(seed).split(kStreamInitPot), r2 = Rng(seed).split(kStreamInitUgrn);
    return {PotModel::init(mc, sk, r1), UgrnModel::init(mc, sk, r2)};
}

}  // namespace

TEST_CASE("stage-one loss: exact cases and the loop oracle", "[training]") {
    Tensor y = Tensor::from({1, 3}, {1, 2, 3});
    CHECK(stage1_loss(y, y).item() == 0.0);
    Tensor off = Tensor::from({1, 3}, {4, 2, 3});  // residual (3,0,0)
    CHECK(stage1_loss(off, y).item() == 9.0);

    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor yp = support::random_tensor({17, 3}, rng, 50);
        Tensor yt = support::random_tensor({17, 3}, rng, 50);
        CHECK(std::fabs(static_cast<double>(stage1_loss(yp, yt).item()) - loop_stage1(yp, yt)) <
              1e-12 * std::max(1.0, loop_stage1(yp, yt)));
    }
    CHECK_THROWS_AS(stage1_loss(Tensor::zeros({2, 3}), Tensor::zeros({3, 3})), ShapeMismatch);
}

TEST_CASE("uncertainty loss: exact cases, barrier, and the loop oracle", "[training]") {
    Tensor y = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor ones = Tensor::full({2, 3}, 1);
    // zero residual, unit sigma: log(3) per joint
    CHECK(sigma_loss(y, y, ones).item() == Catch::Approx(std::log(3.0)).margin(1e-12));

    // growing sigma with zero residual raises the loss
    CHECK(sigma_loss(y, y, Tensor::full({2, 3}, 2)).item() >
          static_cast<double>(sigma_loss(y, y, ones).item()));

    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor yp = support::random_tensor({2, 3}, rng);
        Tensor yt = support::random_tensor({2, 3}, rng);
        Tensor sg = support::random_tensor({2, 3}, rng);
        for (real& v : sg.raw()) v = std::fabs(v) + real(0.05);
        const double want = loop_sigma(yp, yt, sg);
        CHECK(std::fabs(static_cast<double>(sigma_loss(yp, yt, sg).item()) - want) <=
              1e-12 * std::max(1.0, std::fabs(want)));
    }

    CHECK_THROWS_AS(sigma_loss(y, y, Tensor::full({2, 3}, -1)), NonPositiveSigma);

    // gradient goes to sigma only, never to the prediction
    Tensor yp = support::random_tensor({2, 3}, rng);
    yp.set_requires_grad();
    Tensor sg = Tensor::full({2, 3}, real(0.5));
    sg.set_requires_grad();
    Tape tape;
    Tensor loss;
    {
        Tape::Scope s(tape);
        loss = sigma_loss(yp, y, sg);
    }
    GradMap g = tape.backward(loss);
    CHECK(g.count(yp.node().get()) == 0);
    REQUIRE(g.count(sg.node().get()) == 1);
}

TEST_CASE("stage-two loss composition", "[training]") {
    Rng rng(7);
    Tensor yt = support::random_tensor({4, 3}, rng);
    Tensor yr = support::random_tensor({4, 3}, rng);
    Tensor yp = support::random_tensor({4, 3}, rng);
    Tensor sg = Tensor::full({4, 3}, 1);

    // lambda = 0 leaves the refinement term alone
    CHECK(stage2_loss(yr, yt, yp, sg, 0).item() == stage1_loss(yr, yt).item());
    // perfect predictions, unit sigma: lambda * log 3
    CHECK(stage2_loss(yt, yt, yt, sg, real(0.001)).item() ==
          Catch::Approx(0.001 * std::log(3.0)).margin(1e-15));

    for (int trial = 0; trial < 100; ++trial) {
        Tensor a = support::random_tensor({4, 3}, rng);
        Tensor b = support::random_tensor({4, 3}, rng);
        Tensor c = support::random_tensor({4, 3}, rng);
        Tensor s = support::random_tensor({4, 3}, rng);
        for (real& v : s.raw()) v = std::fabs(v) + real(0.05);
        const double want = loop_stage2(a, b, c, s, 0.001);
        CHECK(std::fabs(static_cast<double>(stage2_loss(a, b, c, s, real(0.001)).item()) - want) <=
              1e-12 * std::max(1.0, std::fabs(want)));
    }
}

TEST_CASE("ug_sample: eval identity, floor behaviour, draw statistics", "[training]") {
    Rng rng(11);
    Tensor y = support::random_tensor({3, 3}, rng);
    Tensor sigma = Tensor::full({3, 3}, real(0.5));

    Rng r(1);
    Tensor eval_draw = ug_sample(y, sigma, r, false);
    CHECK(eval_draw.raw() == y.raw());  // bit-exact identity

    Tensor zero_sigma = Tensor::zeros({3, 3});
    Rng r2(2);
    Tensor near = ug_sample(y, zero_sigma, r2, true);
    CHECK(support::max_abs_diff(near, y) <= 4 * kSigmaFloor);  // clamped at the floor

    CHECK_THROWS_AS(ug_sample(y, Tensor::full({3, 3}, -1), r2, true), NonPositiveSigma);

    // moment check over 1e5 draws, one coordinate at a time
    Tensor mu = Tensor::from({1, 3}, {1.0, -2.0, 0.5});
    Tensor sd = Tensor::from({1, 3}, {0.2, 1.5, 3.0});
    const int draws = 100000;
    std::vector<double> sum(3, 0), sum2(3, 0);
    Rng r3(13);
    for (int n = 0; n < draws; ++n) {
        Tensor s = ug_sample(mu, sd, r3, true);
        for (int c = 0; c < 3; ++c) {
            sum[static_cast<std::size_t>(c)] += s.at(0, c);
            sum2[static_cast<std::size_t>(c)] += s.at(0, c) * s.at(0, c);
        }
    }
    for (int c = 0; c < 3; ++c) {
        const double mean = sum[static_cast<std::size_t>(c)] / draws;
        const double var = sum2[static_cast<std::size_t>(c)] / draws - mean * mean;
        const double want_sd = sd.at(0, c);
        CHECK(std::fabs(mean - mu.at(0, c)) < 4 * want_sd / std::sqrt(static_cast<double>(draws)));
        CHECK(std::fabs(std::sqrt(var) - want_sd) < 0.02 * want_sd);
    }
}

TEST_CASE("reparameterized draw carries gradient to sigma", "[training]") {
    Tensor y = Tensor::from({1, 3}, {0, 0, 0});
    Tensor sigma = Tensor::from({1, 3}, {0.5, 1.0, 2.0});
    sigma.set_requires_grad();
    Tape tape;
    Tensor loss;
    Tensor eps;
    {
        Tape::Scope s(tape);
        Rng r(3);
        Tensor draw = ug_sample(y, sigma, r, true);
        Rng r_replay(3);
        eps = gaussian(r_replay, {1, 3});
        loss = sum_all(draw);
    }
    GradMap g = tape.backward(loss);
    const Tensor& gs = g.at(sigma.node().get());
    for (int c = 0; c < 3; ++c) CHECK(gs.at(0, c) == eps.at(0, c));  // d(mu + s*e)/ds = e
}

TEST_CASE("learning-rate schedule is the exact closed form", "[training]") {
    TrainConfig cfg;
    CHECK(lr_at(0, cfg) == real(0.001));
    CHECK(lr_at(3, cfg) == real(0.001));
    CHECK(lr_at(4, cfg) == Catch::Approx(0.00096).margin(1e-18));
    CHECK(lr_at(24, cfg) == Catch::Approx(0.001 * std::pow(0.96, 6)).margin(1e-18));
    for (int e = 0; e <= 100; ++e) {
        CHECK(static_cast<double>(lr_at(e, cfg)) == 0.001 * std::pow(0.96, e / 4));
        if (e % 4 != 0) CHECK(lr_at(e, cfg) == lr_at(e - 1, cfg));  // piecewise constant
    }
}

TEST_CASE("adam: zero grads are a no-op, one step matches hand arithmetic, rows project",
          "[training]") {
    TrainConfig cfg;
    cfg.maxnorm_cap = 1.0;

    // zero gradient leaves the value untouched
    Tensor w = Tensor::scalar(0.7);
    w.set_requires_grad();
    std::vector<ParamRef> params = {{"w", w, false}};
    AdamState st;
    adam_step(params, {}, st, real(0.001), cfg);
    CHECK(w.item() == 0.7);

    // single scalar, one step, hand-computed update
    Tensor v = Tensor::scalar(1.0);
    v.set_requires_grad();
    std::vector<ParamRef> vp = {{"v", v, false}};
    GradMap g;
    Tensor gv = Tensor::scalar(0.4);
    g.emplace(v.node().get(), gv);
    AdamState st2;
    adam_step(vp, g, st2, real(0.01), cfg);
    // m = 0.1*0.4, v2 = 0.001*0.16; mhat = 0.4, vhat = 0.16
    const double want = 1.0 - 0.01 * 0.4 / (std::sqrt(0.16) + 1e-8);
    CHECK(static_cast<double>(v.item()) == Catch::Approx(want).margin(1e-12));

    // a row at twice the cap is rescaled onto it
    Tensor m = Tensor::from({2, 2}, {2, 0, 0.3, 0.4});
    m.set_requires_grad();
    std::vector<ParamRef> mp = {{"m", m, true}};
    AdamState st3;
    adam_step(mp, {}, st3, real(0.001), cfg);
    CHECK(std::sqrt(m.at(0, 0) * m.at(0, 0) + m.at(0, 1) * m.at(0, 1)) ==
          Catch::Approx(1.0).margin(1e-9));
    CHECK(m.at(1, 0) == Catch::Approx(0.3));  // row below the cap untouched

    GradMap bad;
    Tensor wrong = Tensor::zeros({3});
    bad.emplace(m.node().get(), wrong);
    CHECK_THROWS_AS(adam_step(mp, bad, st3, real(0.001), cfg), ShapeMismatch);
}

TEST_CASE("stage-one training reduces the loss and leaves the refiner untouched", "[training]") {
    auto data = tiny_dataset(16, 3, 0.2);
    Models m = desk_models(5);
    TrainConfig cfg = TrainConfig::desk();
    cfg.epochs_per_stage = 30;
    cfg.batch_size = 16;
    cfg.seed = 5;

    const std::uint64_t ugrn_before = param_bytes_hash(m.ugrn.parameters());
    const std::uint64_t unc_before = param_bytes_hash(m.pot.uncertainty_parameters());
    TrainLog log = train_stage1(m.pot, data, cfg);
    REQUIRE(log.size() == 30);
    CHECK(log.back().loss < log.front().loss);
    CHECK(param_bytes_hash(m.ugrn.parameters()) == ugrn_before);
    CHECK(param_bytes_hash(m.pot.uncertainty_parameters()) == unc_before);

    CHECK_THROWS_AS(train_stage1(m.pot, {}, cfg), EmptyDataset);
}

TEST_CASE("identical seeds give bit-identical early loss sequences", "[training]") {
    auto data = tiny_dataset(16, 7, 0.2);
    TrainConfig cfg = TrainConfig::desk();
    cfg.epochs_per_stage = 10;
    cfg.batch_size = 8;
    cfg.seed = 11;

    auto run = [&]() {
        Models m = desk_models(11);
        return train_stage1(m.pot, data, cfg);
    };
    TrainLog a = run(), b = run();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < std::min<std::size_t>(a.size(), 10); ++i)
        CHECK(a[i].loss == b[i].loss);
}

TEST_CASE("stage two trains the refiner against frozen first-stage weights", "[training]") {
    auto data = tiny_dataset(16, 13, 0.2);
    Models m = desk_models(17);
    TrainConfig cfg = TrainConfig::desk();
    cfg.epochs_per_stage = 25;
    cfg.batch_size = 16;
    cfg.seed = 17;

    train_stage1(m.pot, data, cfg);
    const std::uint64_t pot_before = param_bytes_hash(m.pot.stage1_parameters());
    const std::uint64_t unc_before = param_bytes_hash(m.pot.uncertainty_parameters());
    const std::uint64_t ugrn_before = param_bytes_hash(m.ugrn.parameters());

    TrainLog log = train_stage2(m.pot, m.ugrn, data, cfg);
    REQUIRE(!log.empty());
    CHECK(log.back().stage == 2);
    CHECK(param_bytes_hash(m.pot.stage1_parameters()) == pot_before);  // frozen
    CHECK(param_bytes_hash(m.pot.uncertainty_parameters()) != unc_before);
    CHECK(param_bytes_hash(m.ugrn.parameters()) != ugrn_before);
    CHECK(log.back().loss < log.front().loss);
}

TEST_CASE("stage-two gradient map never contains first-stage keys", "[training]") {
    auto data = tiny_dataset(4, 19, 0.2);
    Models m = desk_models(19);
    TrainConfig cfg = TrainConfig::desk();

    Tape tape;
    Tensor loss;
    Rng rng(3);
    {
        Tape::Scope scope(tape);
        PotOutput frozen;
        {
            Tape::Pause off;
            Rng fr(0);
            frozen = pot_forward(m.pot, data[0].joints_2d, fr, false);
        }
        Tensor sigma = uncertainty(m.pot, frozen.features);
        Tensor y_bar = ug_sample(frozen.pose, sigma, rng, true);
        Tensor y_hat = ugrn_forward(m.ugrn, data[0].joints_2d, y_bar, sigma, rng, true);
        loss = stage2_loss(y_hat, data[0].joints_3d, frozen.pose, sigma, cfg.lambda_sigma);
    }
    GradMap g = tape.backward(loss);
    for (const ParamRef& p : m.pot.stage1_parameters())
        CHECK(g.count(p.tensor.node().get()) == 0);
    // while the refiner and the uncertainty head are all present
    for (const ParamRef& p : m.ugrn.parameters()) CHECK(g.count(p.tensor.node().get()) == 1);
    for (const ParamRef& p : m.pot.uncertainty_parameters())
        CHECK(g.count(p.tensor.node().get()) == 1);
}

TEST_CASE("train log serializes to the line-oriented csv", "[training]") {
    TrainLog log = {{0, 0, 1, real(0.001), real(2.5), real(140)},
                    {1, 1, 2, real(0.00096), real(1.25), real(70)}};
    const std::string csv = train_log_csv(log);
    CHECK(csv.rfind("epoch,step,stage,lr,loss,mpjpe\n", 0) == 0);
    CHECK(csv.find("0,0,1,0.001,2.5,140\n") != std::string::npos);
    CHECK(csv.find("1,1,2,0.00096,1.25,70\n") != std::string::npos);
}
