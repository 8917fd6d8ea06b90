#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "darksynth/error.hpp"
#include "darksynth/evalkit.hpp"

using namespace darksynth;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("darksynth_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

nn::Matrix gaussian(int n, int d, std::uint64_t seed, double mean = 0.0, double sd = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(mean, sd);
    nn::Matrix m(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

EmbeddingSet set_of(nn::Matrix m) { return {std::move(m), "test", "v"}; }

nn::Matrix random_probabilities(int n, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> e(1.0);
    nn::Matrix p(n, c);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) p(i, j) = e(rng);
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

// Direct evaluation of exp(1/n sum_i sum_j p_ij log(p_ij / pbar_j)) in long double.
double oracle_inception(const nn::Matrix& p) {
    const auto n = p.rows(), c = p.cols();
    std::vector<long double> bar(static_cast<std::size_t>(c), 0.0L);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) bar[static_cast<std::size_t>(j)] += p(i, j);
    }
    for (auto& b : bar) b /= static_cast<long double>(n);
    long double total = 0.0L;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) {
            const long double v = p(i, j);
            if (v > 0) total += v * std::log(v / bar[static_cast<std::size_t>(j)]);
        }
    }
    return static_cast<double>(std::exp(total / static_cast<long double>(n)));
}

struct EvalFixture {
    DatasetManifest manifest;
    FeatureTable features;
    SoftLabelSet labels;
    EmbeddingClassifier classifier;
};

const EvalFixture& fixture() {
    static const EvalFixture fx = [] {
        BuildConfig cfg;
        cfg.n_clips = 540;
        cfg.seed = 11;
        cfg.out_dir = scratch("evalkit_ds");
        EvalFixture f;
        f.manifest = build_dataset(cfg);
        DatasetReader reader(f.manifest, 0);
        f.features = compute_features(reader);
        for (std::size_t i = 0; i < f.features.entries.size(); ++i) f.features.entries[i] = &f.manifest.entries[i];
        f.labels.attribute_names = f.manifest.attribute_names;
        for (const auto& e : f.manifest.entries) {
            f.labels.clip_ids.push_back(e.clip_id);
            std::vector<double> row;
            for (double v : e.ground_truth) row.push_back(std::clamp(v, 1e-3, 1.0 - 1e-3));
            f.labels.values.push_back(row);
        }
        ClassifierConfig cc;
        cc.epochs = 60;
        f.classifier = train_embedding_classifier(f.manifest, f.features, cc);
        return f;
    }();
    return fx;
}

GeneratorModel untrained_model(const DatasetManifest& m, std::uint64_t seed) {
    GanArchitecture a;
    a.num_attributes = 4;
    a.num_pitches = m.pitch_range.count;
    GeneratorModel g;
    g.net = Generator<float>(a, seed);
    g.spectral = m.spectral_config;
    g.pitch_range = m.pitch_range;
    g.attribute_names.assign(m.attribute_names.begin(), m.attribute_names.begin() + 4);
    g.defaults.assign(4, 0.5);
    g.observed_ranges.assign(4, {});
    return g;
}

}  // namespace

TEST_CASE("inception score of confident uniform coverage equals the class count") {
    for (int c : {2, 5, 27}) {
        const nn::Matrix p = nn::Matrix::Identity(c, c);
        CHECK_THAT(inception_score(p), WithinRel(static_cast<double>(c), 1e-12));
    }
}

TEST_CASE("inception score of uniform rows is one") {
    const nn::Matrix p = nn::Matrix::Constant(40, 7, 1.0 / 7.0);
    CHECK_THAT(inception_score(p), WithinAbs(1.0, 1e-12));
}

TEST_CASE("inception score matches direct evaluation and stays in [1, C]") {
    const nn::Matrix p = random_probabilities(50, 5, 4);
    CHECK_THAT(inception_score(p), WithinRel(oracle_inception(p), 1e-12));
    for (std::uint64_t s = 0; s < 30; ++s) {
        const nn::Matrix q = random_probabilities(3 + static_cast<int>(s), 2 + static_cast<int>(s % 6), 100 + s);
        const double is = inception_score(q);
        CHECK(is >= 1.0 - 1e-12);
        CHECK(is <= static_cast<double>(q.cols()) + 1e-12);
    }
}

TEST_CASE("inception score rejects rows that are not distributions") {
    nn::Matrix p = random_probabilities(4, 3, 1);
    p(2, 0) += 1e-3;
    CHECK_THROWS_AS(inception_score(p), Error);
    p = random_probabilities(4, 3, 1);
    p(1, 0) = -0.1;
    p(1, 1) += 0.1;
    CHECK_THROWS_AS(inception_score(p), Error);
}

TEST_CASE("kid on two point masses matches the four-point kernel sums") {
    // a = {0, 0}, b = {d e1, d e1} in E dims: the off-diagonal means are k(0,0) = 1 and
    // k(v,v) = (d^2/E + 1)^3, the cross mean is k(0,v) = 1.
    const int E = 4;
    const double d = 2.0;
    nn::Matrix a = nn::Matrix::Zero(2, E), b = nn::Matrix::Zero(2, E);
    b(0, 0) = b(1, 0) = d;
    const double expected = std::pow(d * d / E + 1.0, 3) + 1.0 - 2.0;
    CHECK_THAT(kid(set_of(a), set_of(b)).value, WithinAbs(expected, 1e-12));
    CHECK_THAT(expected, WithinAbs(7.0, 1e-12));
}

TEST_CASE("kid is exactly symmetric") {
    const auto a = set_of(gaussian(30, 8, 1)), b = set_of(gaussian(45, 8, 2, 0.3));
    const auto ab = kid(a, b), ba = kid(b, a);
    CHECK(ab.value == ba.value);
    CHECK(ab.standard_error == ba.standard_error);
}

TEST_CASE("kid of draws from one distribution is within three standard errors of zero") {
    const auto a = set_of(gaussian(512, 8, 21)), b = set_of(gaussian(512, 8, 22));
    const auto k = kid(a, b);
    CHECK(k.standard_error > 0.0);
    CHECK(std::abs(k.value) < 3.0 * k.standard_error);
}

TEST_CASE("kid of a set with itself is the small negative diagonal correction") {
    // With b == a the within-set means skip the diagonal and the cross mean
    // keeps it, leaving 2 S_off / (n (n - 1)) - 2 (S_off + S_diag) / n^2.
    const nn::Matrix x = gaussian(64, 6, 8);
    const double n = static_cast<double>(x.rows()), E = static_cast<double>(x.cols());
    double off = 0.0, diag = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.rows(); ++j) {
            const double k = std::pow(x.row(i).dot(x.row(j)) / E + 1.0, 3);
            (i == j ? diag : off) += k;
        }
    }
    const double expected = 2.0 * off / (n * (n - 1.0)) - 2.0 * (off + diag) / (n * n);
    const auto same = kid(set_of(x), set_of(x));
    CHECK(same.value <= 0.0);
    CHECK_THAT(same.value, WithinRel(expected, 1e-9));
}

TEST_CASE("kid separates shifted distributions") {
    const auto a = set_of(gaussian(256, 8, 5)), b = set_of(gaussian(256, 8, 6, 1.0));
    const auto k = kid(a, b);
    CHECK(k.value > 3.0 * k.standard_error);
}

TEST_CASE("kid rejects mismatched or tiny sets") {
    CHECK_THROWS_AS(kid(set_of(gaussian(10, 4, 1)), set_of(gaussian(10, 5, 2))), Error);
    CHECK_THROWS_AS(kid(set_of(gaussian(1, 4, 1)), set_of(gaussian(10, 4, 2))), Error);
}

TEST_CASE("fad of a set with itself is zero") {
    const auto a = set_of(gaussian(300, 16, 9));
    CHECK(fad(a, a) < 1e-8);
}

TEST_CASE("univariate Frechet distance for unit-variance normals one apart is one") {
    const nn::Vector m0 = nn::Vector::Constant(1, 0.0), m1 = nn::Vector::Constant(1, 1.0);
    const nn::Matrix one = nn::Matrix::Identity(1, 1);
    CHECK_THAT(frechet_distance(m0, one, m1, one), WithinAbs(1.0, 1e-6));
}

TEST_CASE("diagonal covariances match the coordinate-wise closed form") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.2, 3.0), m(-2.0, 2.0);
    for (int trial = 0; trial < 10; ++trial) {
        const int E = 1 + trial;
        nn::Vector ma(E), mb(E);
        nn::Matrix ca = nn::Matrix::Zero(E, E), cb = nn::Matrix::Zero(E, E);
        double expected = 0.0;
        for (int j = 0; j < E; ++j) {
            ma(j) = m(rng);
            mb(j) = m(rng);
            const double sa = u(rng), sb = u(rng);
            ca(j, j) = sa * sa;
            cb(j, j) = sb * sb;
            // Standard deviations of the regularized covariances.
            const double ra = std::sqrt(sa * sa + kFadRegularization), rb = std::sqrt(sb * sb + kFadRegularization);
            expected += (ma(j) - mb(j)) * (ma(j) - mb(j)) + (ra - rb) * (ra - rb);
        }
        CHECK_THAT(frechet_distance(ma, ca, mb, cb), WithinAbs(expected, 1e-6));
    }
}

TEST_CASE("fad is symmetric and non-negative") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto a = set_of(gaussian(200, 6, 10 + s)), b = set_of(gaussian(150, 6, 20 + s, 0.5, 1.5));
        const double ab = fad(a, b), ba = fad(b, a);
        CHECK(ab >= 0.0);
        CHECK_THAT(ab, WithinAbs(ba, 1e-8));
    }
}

TEST_CASE("Frechet distance reports covariances that are not positive semi-definite") {
    nn::Matrix bad = nn::Matrix::Identity(2, 2);
    bad(1, 1) = -1.0;
    const nn::Vector z = nn::Vector::Zero(2);
    try {
        frechet_distance(z, bad, z, nn::Matrix::Identity(2, 2));
        FAIL("expected a numerical error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Numerical);
        CHECK(std::string(e.what()).find("min eigenvalue") != std::string::npos);
    }
}

TEST_CASE("embedding cache round trips and checks the classifier version") {
    const auto dir = scratch("embcache");
    std::filesystem::create_directories(dir);
    EmbeddingSet e{gaussian(12, 5, 4), "real", "abc123"};
    save_embeddings(e, dir / "real.bin");
    const auto back = load_embeddings(dir / "real.bin", "abc123");
    CHECK(back.data == e.data);
    CHECK(back.source == "real");
    const auto meta = nlohmann::json::parse(std::ifstream(dir / "real.bin.json"));
    CHECK(meta.at("n") == 12);
    CHECK(meta.at("E") == 5);
    CHECK(meta.at("classifier_version") == "abc123");
    try {
        load_embeddings(dir / "real.bin", "other");
        FAIL("expected a compatibility error");
    } catch (const Error& err) {
        CHECK(err.kind() == ErrorKind::Compatibility);
    }
    std::filesystem::resize_file(dir / "real.bin", 40);
    CHECK_THROWS_AS(load_embeddings(dir / "real.bin"), Error);
}

TEST_CASE("embedding classifier reaches the held-out accuracy targets") {
    const auto& f = fixture();
    CHECK(f.classifier.pitch_accuracy >= 0.9);
    CHECK(f.classifier.waveshape_accuracy >= 0.8);
    CHECK(f.classifier.embedding_dim() == 128);
    const nn::Matrix emb = f.classifier.embed(f.features.descriptors);
    CHECK(emb.allFinite());
    const nn::Matrix pp = f.classifier.pitch_probabilities(f.features.descriptors.topRows(5));
    CHECK(pp.cols() == f.manifest.pitch_range.count);
    CHECK_THAT(pp.row(0).sum(), WithinAbs(1.0, 1e-12));
}

TEST_CASE("embedding classifier round trips through JSON") {
    const auto& f = fixture();
    const auto dir = scratch("clf");
    std::filesystem::create_directories(dir);
    save_classifier(f.classifier, dir / "clf.json");
    const auto back = load_classifier(dir / "clf.json");
    CHECK(back.version() == f.classifier.version());
    CHECK(back.embed(f.features.descriptors.topRows(3)) == f.classifier.embed(f.features.descriptors.topRows(3)));
}

TEST_CASE("embedding classifier needs both splits") {
    const auto& f = fixture();
    DatasetManifest m = f.manifest;
    FeatureTable t = f.features;
    for (auto& e : m.entries) e.split = Split::Train;
    for (std::size_t i = 0; i < t.entries.size(); ++i) t.entries[i] = &m.entries[i];
    CHECK_THROWS_AS(train_embedding_classifier(m, t, {}), Error);
}

TEST_CASE("evaluate_model reports bounded, reproducible metrics") {
    const auto& f = fixture();
    const auto g = untrained_model(f.manifest, 5);
    const auto src = make_eval_source(f.manifest, f.features, f.labels, g.attribute_names, Split::Val);
    const auto r = evaluate_model(g, f.classifier, src, 64, 9);
    CHECK(r.n_samples == 64);
    CHECK(r.pis >= 1.0);
    CHECK(r.pis <= f.manifest.pitch_range.count);
    CHECK(r.iis >= 1.0);
    CHECK(r.iis <= kWaveshapeCount);
    CHECK(r.fad >= 0.0);
    CHECK(std::isfinite(r.kid));
    CHECK(r.to_json().at("split") == "val");

    const auto again = evaluate_model(g, f.classifier, src, 64, 9);
    CHECK(again.to_json() == r.to_json());
    CHECK_THROWS_AS(evaluate_model(g, f.classifier, src, 63, 9), Error);
}

TEST_CASE("real clips are closer to each other than to untrained output") {
    const auto& f = fixture();
    const auto g = untrained_model(f.manifest, 5);
    const auto tr = make_eval_source(f.manifest, f.features, f.labels, g.attribute_names, Split::Train);
    const auto val = make_eval_source(f.manifest, f.features, f.labels, g.attribute_names, Split::Val);
    const EmbeddingSet a{f.classifier.embed(tr.descriptors), "real", ""};
    const EmbeddingSet b{f.classifier.embed(val.descriptors), "real", ""};
    std::mt19937_64 rng(1);
    const auto cond = sample_conditioning(val, g.arch(), 64, rng);
    const EmbeddingSet c{f.classifier.embed(describe_generated(g, cond)), "generated", ""};
    CHECK(fad(a, b) < fad(b, c));
    CHECK(kid(a, b).value < kid(b, c).value);
}
