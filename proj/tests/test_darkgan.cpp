#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "darksynth/darkgan.hpp"
#include "darksynth/error.hpp"

using namespace darksynth;
using Catch::Matchers::WithinAbs;

namespace {

GanArchitecture tiny_arch(int K = 3, int P = 4) {
    GanArchitecture a;
    a.num_attributes = K;
    a.num_pitches = P;
    a.latent_dim = 5;
    a.feature_maps = {4, 3, 2};
    a.width_divisor = 1;
    a.seed_frames = 2;
    a.seed_bins = 4;
    a.frames = 8;
    a.bins = 16;
    return a;
}

template <typename S>
nn::Tensor<S> random_tensor(int n, int c, int h, int w, std::mt19937_64& rng, double scale = 1.0) {
    nn::Tensor<S> t(n, c, h, w);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (S& v : t.data) v = static_cast<S>(u(rng));
    return t;
}

HeadTargets random_targets(int n, int K, int P, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 0.95);
    std::uniform_int_distribution<int> pitch(0, P - 1);
    HeadTargets t;
    for (int i = 0; i < n; ++i) {
        std::vector<double> a(static_cast<std::size_t>(K));
        for (double& v : a) v = u(rng);
        t.attributes.push_back(a);
        t.pitch.push_back(pitch(rng));
    }
    return t;
}

bool close_rel(double analytic, double numeric, double rel = 1e-4, double abs_floor = 1e-7) {
    return std::abs(analytic - numeric) <= rel * std::max(std::abs(analytic), std::abs(numeric)) + abs_floor;
}

// Central differences over randomly chosen parameter coordinates.
template <typename Params, typename Loss>
int check_param_gradient(Params params, const Loss& loss, std::mt19937_64& rng, int coordinates, double h = 1e-6) {
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t b = 0; b < params.size(); ++b)
        for (std::size_t i = 0; i < params[b].value.size(); ++i) coords.emplace_back(b, i);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(std::min<std::size_t>(coords.size(), static_cast<std::size_t>(coordinates)));
    int failures = 0;
    for (auto [b, i] : coords) {
        double& v = params[b].value[i];
        const double analytic = params[b].grad[i];
        const double saved = v;
        v = saved + h;
        const double up = loss();
        v = saved - h;
        const double down = loss();
        v = saved;
        const double numeric = (up - down) / (2 * h);
        if (!close_rel(analytic, numeric)) {
            ++failures;
            UNSCOPED_INFO("block " << b << " index " << i << " analytic " << analytic << " numeric " << numeric);
        }
    }
    return failures;
}

}  // namespace

TEST_CASE("distillation loss hand value", "[darkgan]") {
    const std::vector<double> z = {0.0}, p = {0.5};
    CHECK_THAT(distillation_loss(z, p, 1.0), WithinAbs(std::log(2.0), 1e-9));
}

TEST_CASE("distillation loss gradient matches central differences", "[darkgan]") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 3.0);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    int checked = 0;
    for (double T : {1.0, 1.5, 2.0, 3.0, 5.0}) {
        for (int trial = 0; trial < 4; ++trial) {
            std::vector<double> z(8), p(8), g(8);
            for (auto& v : z) v = n(rng);
            for (auto& v : p) v = u(rng);
            distillation_loss(z, p, T, g);
            for (std::size_t i = 0; i < z.size(); ++i) {
                const double h = 1e-5, saved = z[i];
                z[i] = saved + h;
                const double up = distillation_loss(z, p, T);
                z[i] = saved - h;
                const double down = distillation_loss(z, p, T);
                z[i] = saved;
                CHECK(close_rel(g[i], (up - down) / (2 * h), 1e-4, 1e-10));
                ++checked;
            }
        }
    }
    CHECK(checked >= 100);
}

TEST_CASE("distillation loss is minimized where the student matches the teacher", "[darkgan]") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.02, 0.98);
    for (double T : {1.0, 2.0, 5.0}) {
        std::vector<double> p(3), z(3), g(3);
        for (auto& v : p) v = u(rng);
        for (std::size_t i = 0; i < 3; ++i) z[i] = logit(p[i]) * T;
        const double at_min = distillation_loss(z, p, T, g);
        double entropy = 0.0;
        for (double v : p) entropy -= v * std::log(v) + (1 - v) * std::log(1 - v);
        CHECK_THAT(at_min, WithinAbs(entropy / 3.0, 1e-12));
        for (double v : g) CHECK(std::abs(v) < 1e-12);
        std::normal_distribution<double> step(0.0, 0.5);
        for (int k = 0; k < 50; ++k) {
            auto moved = z;
            for (auto& v : moved) v += step(rng);
            CHECK(distillation_loss(moved, p, T) >= at_min);
        }
    }
}

TEST_CASE("distillation loss rejects targets outside the open interval", "[darkgan]") {
    const std::vector<double> z = {0.0, 1.0};
    CHECK_THROWS_AS(distillation_loss(z, std::vector<double>{0.0, 0.5}, 1.0), Error);
    CHECK_THROWS_AS(distillation_loss(z, std::vector<double>{0.5, 1.0}, 1.0), Error);
    CHECK_THROWS_AS(distillation_loss(z, std::vector<double>{0.5, 0.5}, 0.0), Error);
}

TEST_CASE("pitch loss uniform and peaked limits", "[darkgan]") {
    for (int P : {2, 26, 27}) {
        std::vector<double> logits(static_cast<std::size_t>(P), 0.7), onehot(static_cast<std::size_t>(P), 0.0);
        onehot[1] = 1.0;
        CHECK_THAT(pitch_loss(logits, onehot), WithinAbs(std::log(P), 1e-12));
        logits[1] = 60.0;
        CHECK(pitch_loss(logits, onehot) < 1e-20);
    }
}

TEST_CASE("pitch loss gradient matches central differences", "[darkgan]") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> z(27), onehot(27, 0.0), g(27);
        for (auto& v : z) v = n(rng);
        onehot[static_cast<std::size_t>(trial)] = 1.0;
        pitch_loss(z, onehot, g);
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double h = 1e-5, saved = z[i];
            z[i] = saved + h;
            const double up = pitch_loss(z, onehot);
            z[i] = saved - h;
            const double down = pitch_loss(z, onehot);
            z[i] = saved;
            CHECK(close_rel(g[i], (up - down) / (2 * h), 1e-4, 1e-10));
        }
    }
}

TEST_CASE("gradient penalty of a linear critic", "[darkgan]") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t dim : {1u, 4u, 100u, 2048u}) {
        std::vector<std::vector<double>> real(8, std::vector<double>(dim)), fake = real;
        for (auto& r : real)
            for (auto& v : r) v = n(rng);
        for (auto& f : fake)
            for (auto& v : f) v = n(rng);
        std::vector<double> eps(8);
        for (auto& e : eps) e = std::uniform_real_distribution<double>(0, 1)(rng);
        const auto sum_grad = [](std::span<const double> x) { return std::vector<double>(x.size(), 1.0); };
        const double expected = (std::sqrt(static_cast<double>(dim)) - 1.0) * (std::sqrt(static_cast<double>(dim)) - 1.0);
        CHECK_THAT(gradient_penalty(sum_grad, real, fake, eps), WithinAbs(expected, 1e-6));
    }
}

TEST_CASE("gradient penalty of a unit-gradient critic is zero", "[darkgan]") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<std::vector<double>> real(6, std::vector<double>(50)), fake = real;
    for (auto& r : real)
        for (auto& v : r) v = n(rng);
    for (auto& f : fake)
        for (auto& v : f) v = n(rng) + 3.0;
    const std::vector<double> eps = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    // D(x) = ||x||, whose gradient x / ||x|| has unit norm away from the origin.
    const auto norm_grad = [](std::span<const double> x) {
        double s = 0;
        for (double v : x) s += v * v;
        std::vector<double> g(x.begin(), x.end());
        for (auto& v : g) v /= std::sqrt(s);
        return g;
    };
    CHECK_THAT(gradient_penalty(norm_grad, real, fake, eps), WithinAbs(0.0, 1e-8));
}

TEST_CASE("gradient penalty is non-negative", "[darkgan][property]") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<double>> real(4, std::vector<double>(10)), fake = real;
        std::vector<double> w(10);
        for (auto& v : w) v = n(rng) * 0.3;
        for (auto& r : real)
            for (auto& v : r) v = n(rng);
        for (auto& f : fake)
            for (auto& v : f) v = n(rng);
        const auto grad = [&](std::span<const double> x) {
            std::vector<double> g(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) g[i] = w[i] * std::cos(x[i]);
            return g;
        };
        CHECK(gradient_penalty(grad, real, fake, std::vector<double>(4, 0.5)) >= 0.0);
    }
}

TEST_CASE("box upsampling and average pooling have matching adjoints", "[darkgan][nn]") {
    std::mt19937_64 rng(5);
    const auto x = random_tensor<double>(2, 3, 4, 2, rng);
    const auto y = random_tensor<double>(2, 3, 8, 8, rng);
    nn::Tensor<double> ux, aty;
    nn::upsample(x, 2, 4, ux);
    nn::upsample_adjoint(y, 2, 4, aty);
    CHECK_THAT(std::inner_product(ux.data.begin(), ux.data.end(), y.data.begin(), 0.0),
               WithinAbs(std::inner_product(x.data.begin(), x.data.end(), aty.data.begin(), 0.0), 1e-12));
    nn::avg_pool(y, 2, 4, aty);
    nn::avg_pool_adjoint(x, 2, 4, ux);
    CHECK_THAT(std::inner_product(aty.data.begin(), aty.data.end(), x.data.begin(), 0.0),
               WithinAbs(std::inner_product(y.data.begin(), y.data.end(), ux.data.begin(), 0.0), 1e-12));
}

TEST_CASE("convolution gradients match central differences", "[darkgan][nn]") {
    std::mt19937_64 rng(6);
    for (int k : {1, 3}) {
        nn::Conv2d<double> conv(3, 4, k, rng);
        for (auto& b : conv.bias) b = 0.1;
        auto x = random_tensor<double>(2, 3, 5, 7, rng);
        const auto r = random_tensor<double>(2, 4, 5, 7, rng);
        auto loss = [&] {
            nn::Tensor<double> y;
            conv.forward(x, y);
            return std::inner_product(y.data.begin(), y.data.end(), r.data.begin(), 0.0);
        };
        nn::Tensor<double> dx;
        conv.backward(x, r, &dx, true);
        CHECK(check_param_gradient(conv.params(), loss, rng, 200) == 0);
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const double saved = x.data[i], h = 1e-6;
            x.data[i] = saved + h;
            const double up = loss();
            x.data[i] = saved - h;
            const double down = loss();
            x.data[i] = saved;
            CHECK(close_rel(dx.data[i], (up - down) / (2 * h)));
        }
    }
}

TEST_CASE("critic input gradient matches central differences", "[darkgan][nn]") {
    std::mt19937_64 rng(7);
    const auto a = tiny_arch();
    Critic<double> critic(a, 11);
    auto x = random_tensor<double>(1, 2, a.frames, a.bins, rng);
    typename Critic<double>::Cache cache;
    const auto out = critic.forward(x, &cache);
    nn::MatR<double> dscore = nn::MatR<double>::Zero(1, out.cols());
    dscore(0, 0) = 1.0;
    nn::Tensor<double> dx;
    critic.backward(cache, dscore, &dx, false);
    int failures = 0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double saved = x.data[i], h = 1e-6;
        x.data[i] = saved + h;
        const double up = critic.forward(x)(0, 0);
        x.data[i] = saved - h;
        const double down = critic.forward(x)(0, 0);
        x.data[i] = saved;
        failures += !close_rel(dx.data[i], (up - down) / (2 * h));
    }
    CHECK(failures == 0);
}

TEST_CASE("network gradient penalty parameter gradient matches central differences", "[darkgan][nn]") {
    std::mt19937_64 rng(12);
    const auto a = tiny_arch();
    Critic<double> critic(a, 13);
    const auto real = random_tensor<double>(3, 2, a.frames, a.bins, rng);
    const auto fake = random_tensor<double>(3, 2, a.frames, a.bins, rng);
    const std::vector<double> eps = {0.2, 0.5, 0.9};
    critic.zero_grad();
    critic_gradient_penalty(critic, real, fake, eps, 1.0, true);
    auto loss = [&] { return critic_gradient_penalty(critic, real, fake, eps, 1.0, false); };
    CHECK(check_param_gradient(critic.params(), loss, rng, 150) == 0);
}

TEST_CASE("critic objective gradient matches central differences", "[darkgan][nn]") {
    std::mt19937_64 rng(14);
    const auto a = tiny_arch();
    Critic<double> critic(a, 15);
    const int n = 4;
    const auto real = random_tensor<double>(n, 2, a.frames, a.bins, rng);
    const auto fake = random_tensor<double>(n, 2, a.frames, a.bins, rng);
    const auto rt = random_targets(n, a.num_attributes, a.num_pitches, rng);
    const auto ft = random_targets(n, a.num_attributes, a.num_pitches, rng);
    const std::vector<double> eps = {0.1, 0.4, 0.6, 0.95};
    const LossWeights w{2.0, 10.0, 1.0, 1.0};
    critic.zero_grad();
    critic_objective(critic, real, rt, fake, ft, eps, w, true);
    auto loss = [&] { return critic_objective(critic, real, rt, fake, ft, eps, w, false).total; };
    CHECK(check_param_gradient(critic.params(), loss, rng, 150) == 0);
}

TEST_CASE("generator objective gradient matches central differences", "[darkgan][nn]") {
    std::mt19937_64 rng(16);
    const auto a = tiny_arch();
    Generator<double> gen(a, 17);
    Critic<double> critic(a, 18);
    const int n = 3;
    std::vector<double> cond(static_cast<std::size_t>(n * a.input_channels()));
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : cond) v = nd(rng);
    const auto t = random_targets(n, a.num_attributes, a.num_pitches, rng);
    const LossWeights w{3.0, 10.0, 1.0, 1.0};
    nn::Tensor<double> fake;
    gen.zero_grad();
    generator_objective(gen, critic, cond, t, w, true, fake);
    auto loss = [&] { return generator_objective(gen, critic, cond, t, w, false, fake).total; };
    CHECK(check_param_gradient(gen.params(), loss, rng, 150) == 0);
}

TEST_CASE("architecture derives the upsampling schedule", "[darkgan]") {
    GanArchitecture a;
    a.num_attributes = 32;
    const auto f = a.stage_factors();
    REQUIRE(f.size() == 5);
    int t = a.seed_frames, b = a.seed_bins;
    for (auto [ft, ff] : f) {
        t *= ft;
        b *= ff;
        CHECK(ff == 2);
    }
    CHECK(t == 32);
    CHECK(b == 1024);
    CHECK(f[0].first == 2);
    CHECK(f[3].first == 1);
    CHECK(a.input_channels() == 32 + 32 + 27);
    CHECK(a.channels() == std::vector<int>{16, 8, 8, 8, 8, 4});
    a.bins = 1000;
    CHECK_THROWS_AS(a.validate(), Error);
    a.bins = 1024;
    a.seed_bins = 48;
    CHECK_THROWS_AS(a.validate(), Error);
}

namespace {

SpectralConfig tiny_spectral() {
    SpectralConfig s;
    s.fft_size = 32;
    s.hop = 8;
    s.sample_rate = 16000;
    s.duration = 56.0 / 16000.0;  // 1 + 56 / 8 = 8 frames, 16 bins
    return s;
}

TrainingSet synthetic_set(int n, int K, std::uint64_t seed) {
    TrainingSet s;
    s.spectral = tiny_spectral();
    s.pitch_range = {60, 4};
    s.frames = 8;
    s.bins = 16;
    for (int k = 0; k < K; ++k) s.attribute_names.push_back("attr" + std::to_string(k));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (int i = 0; i < n; ++i) {
        const int p = i % 4;
        for (int c = 0; c < 2; ++c)
            for (int t = 0; t < 8; ++t)
                for (int b = 0; b < 16; ++b) s.data.push_back(static_cast<float>(std::sin(0.3 * b * (p + 1) + t) * 0.5 + 0.1 * c));
        std::vector<double> alpha(static_cast<std::size_t>(K));
        for (auto& v : alpha) v = u(rng);
        s.alphas.push_back(alpha);
        s.pitch_index.push_back(p);
        s.waveshapes.push_back(Waveshape::Fm);
        s.clip_ids.push_back("c" + std::to_string(i));
    }
    return s;
}

TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.feature_maps = {4, 3, 2};
    cfg.width_divisor = 1;
    cfg.batch_size = 4;
    cfg.steps = 30;
    cfg.seed = 21;
    cfg.temperature = 2.0;
    return cfg;
}

GanArchitecture tiny_train_arch(int K) {
    auto a = tiny_arch(K, 4);
    a.latent_dim = kLatentDim;
    a.seed_frames = 4;
    return a;
}

}  // namespace

TEST_CASE("tiny spectral config has the tiny tensor shape", "[darkgan]") {
    CHECK(tiny_spectral().frames() == 8);
    CHECK(tiny_spectral().bins() == 16);
}

TEST_CASE("generate is deterministic, shaped and bounded", "[darkgan]") {
    const auto ts = synthetic_set(16, 3, 1);
    auto cfg = tiny_train_config();
    const auto g = initial_generator(ts, nullptr, cfg);
    std::mt19937_64 rng(4);
    const auto c = ConditioningBundle::make({0.2, 0.5, 0.9}, 2, 4, rng);
    const auto a = generate(g, c);
    const auto b = generate(g, c);
    CHECK(a.mag == b.mag);
    CHECK(a.ifreq == b.ifreq);
    CHECK(a.frames == 8);
    CHECK(a.bins == 16);
    for (float v : a.mag) CHECK((v >= -1.0f && v <= 1.0f));

    const auto other = ConditioningBundle::make({0.2, 0.5, 0.9}, 2, 4, rng);
    const auto d = generate(g, other);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.mag.size(); ++i) diff += std::abs(a.mag[i] - d.mag[i]) + std::abs(a.ifreq[i] - d.ifreq[i]);
    CHECK(diff / (2.0 * a.mag.size()) > 0.0);

    const std::vector<ConditioningBundle> batch = {c, other};
    const auto both = generate(g, batch);
    CHECK(both[0].mag == a.mag);
    CHECK(both[1].mag == d.mag);
}

TEST_CASE("generate rejects mismatched conditioning", "[darkgan]") {
    const auto ts = synthetic_set(16, 3, 1);
    const auto g = initial_generator(ts, nullptr, tiny_train_config());
    std::mt19937_64 rng(4);
    CHECK_THROWS_AS(generate(g, ConditioningBundle::make({0.2, 0.5}, 2, 4, rng)), Error);
    CHECK_THROWS_AS(generate(g, ConditioningBundle::make({0.2, 0.5, 0.1}, 1, 5, rng)), Error);
    auto c = ConditioningBundle::make({0.2, 0.5, 0.1}, 1, 4, rng);
    c.pitch[0] = 1.0;
    CHECK_THROWS_AS(generate(g, c), Error);
    c = ConditioningBundle::make({0.2, 3.5, 0.1}, 1, 4, rng);
    CHECK(c.validate(g.arch()) == std::vector<std::size_t>{1});
    CHECK_NOTHROW(generate(g, c));
}

TEST_CASE("criticize reports head dimensions", "[darkgan]") {
    Critic<float> d(tiny_train_arch(3), 5);
    const auto x = MagIFTensor::filled(tiny_spectral(), 0.1f, 0.0f);
    const auto out = criticize(d, x);
    CHECK(out.attribute_logits.size() == 3);
    CHECK(out.pitch_logits.size() == 4);
    CHECK(std::isfinite(out.score));
    SpectralConfig other = tiny_spectral();
    other.duration *= 2;
    CHECK_THROWS_AS(criticize(d, MagIFTensor::filled(other, 0.0f, 0.0f)), Error);
}

TEST_CASE("training is seed-reproducible and logs every step", "[darkgan]") {
    const auto ts = synthetic_set(24, 3, 2);
    const auto cfg = tiny_train_config();
    const auto a = train(ts, nullptr, cfg);
    const auto b = train(ts, nullptr, cfg);
    REQUIRE(a.log.steps.size() == 30);
    CHECK(a.log.steps == b.log.steps);
    for (const auto& s : a.log.steps) {
        CHECK(std::isfinite(s.critic_loss));
        CHECK(std::isfinite(s.generator_loss));
        CHECK(s.gradient_penalty >= 0.0);
    }
    CHECK(encode_checkpoint(a.generator) == encode_checkpoint(b.generator));
    auto c = cfg;
    c.seed = 22;
    CHECK_FALSE(train(ts, nullptr, c).log.steps == a.log.steps);
}

TEST_CASE("baseline trains without attributes", "[darkgan]") {
    const auto ts = synthetic_set(24, 0, 2);
    const auto r = train(ts, nullptr, tiny_train_config());
    CHECK(r.generator.arch().num_attributes == 0);
    for (const auto& s : r.log.steps) CHECK(s.critic_distill == 0.0);
}

TEST_CASE("non-finite training data is reported as divergence", "[darkgan]") {
    auto ts = synthetic_set(4, 3, 2);
    std::fill(ts.data.begin(), ts.data.end(), std::numeric_limits<float>::quiet_NaN());
    try {
        train(ts, nullptr, tiny_train_config());
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Divergence);
        CHECK_THAT(std::string(e.what()), Catch::Matchers::ContainsSubstring("step 0"));
    }
}

TEST_CASE("invalid training config is rejected", "[darkgan]") {
    const auto ts = synthetic_set(8, 3, 2);
    auto cfg = tiny_train_config();
    cfg.temperature = 0.0;
    CHECK_THROWS_AS(train(ts, nullptr, cfg), Error);
    cfg = tiny_train_config();
    cfg.gp_weight = -1.0;
    CHECK_THROWS_AS(train(ts, nullptr, cfg), Error);
}

TEST_CASE("checkpoint round trip preserves parameters and metadata", "[darkgan]") {
    const auto ts = synthetic_set(16, 3, 5);
    const auto val = synthetic_set(9, 3, 6);
    auto cfg = tiny_train_config();
    cfg.steps = 3;
    const auto r = train(ts, &val, cfg);
    const auto path = std::filesystem::temp_directory_path() / "darksynth_test_ckpt" / "g.ckpt";
    save_checkpoint(r.generator, path);
    const auto back = load_checkpoint(path);
    CHECK(encode_checkpoint(back) == encode_checkpoint(r.generator));
    CHECK(back.attribute_names == ts.attribute_names);
    CHECK(back.trained_temperature == 2.0);
    CHECK(back.spectral == ts.spectral);
    REQUIRE(back.defaults.size() == 3);
    std::vector<double> col;
    for (const auto& a : val.alphas) col.push_back(a[1]);
    std::sort(col.begin(), col.end());
    CHECK(back.defaults[1] == col[4]);
    std::mt19937_64 rng(1);
    const auto c = ConditioningBundle::make({0.1, 0.2, 0.3}, 0, 4, rng);
    CHECK(generate(back, c).mag == generate(r.generator, c).mag);

    std::string bytes = encode_checkpoint(r.generator);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 4)), Error);
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bytes), Error);
    CHECK_THROWS_AS(load_checkpoint(path.parent_path() / "absent.ckpt"), Error);
}
