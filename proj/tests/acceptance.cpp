// Acceptance run: one PASS/FAIL line per criterion. Pass criterion keys as
// arguments to run a subset. Slow criteria share an artifact home that is
// rebuilt on every run.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "darksynth/consistency.hpp"
#include "darksynth/error.hpp"
#include "darksynth/experiment.hpp"
#include "darksynth/io.hpp"
#include "darksynth/service.hpp"
#include "httplib.h"

using namespace darksynth;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and budgets.
constexpr double kRoundTripSnrDb = 25.0;
constexpr double kRoundTripSeconds = 30.0;
constexpr double kBceHandTol = 1e-9;
constexpr double kBceGradRelTol = 1e-4;
constexpr double kGpLinearTol = 1e-6;
constexpr double kGpUnitTol = 1e-8;
constexpr double kRankTol = 1e-12;
constexpr double kIsRelTol = 1e-12;
constexpr double kFadSelfTol = 1e-8;
constexpr double kFadClosedFormTol = 1e-6;
constexpr double kConsistencyRhoTol = 1e-12;
constexpr double kIncrementSlopeTol = 1e-6;
constexpr double kDeltaTol = 1e-12;
constexpr int kSmokeSteps = 2000;
constexpr double kSmokeBudgetSeconds = 3 * 3600.0;
constexpr int kReproSteps = 50;
constexpr std::size_t kMetricSamples = 256;
constexpr std::size_t kCorrelationSamples = 1000;
constexpr int kGridSteps = 200;
constexpr double kP95Ms = 2000.0;
constexpr double kPitchAccuracy = 0.60;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DARKSYNTH_CLI) + " " + args;
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Dataset, teacher, labels and ranking at desk scale, made with the CLI.
const fs::path& home() {
    static const fs::path h = [] {
        const auto p = fs::temp_directory_path() / "darksynth_acceptance";
        fs::remove_all(p);
        fs::create_directories(p);
        const std::string base = "--home " + p.string() + " -q ";
        for (const char* step : {"dataset build", "teacher train", "teacher label", "teacher rank"})
            if (run_cli(base + step + " > /dev/null") != 0) throw Error(ErrorKind::Io, std::string("setup step failed: ") + step);
        return p;
    }();
    return h;
}

Outcome spectral_round_trip() {
    const SpectralConfig cfg;
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> pitch(44, 70);
    std::vector<Waveform> notes;
    for (int i = 0; i < 100; ++i) notes.push_back(synth_note(random_note_spec(pitch(rng), rng)));
    const auto t0 = Clock::now();
    double worst = INFINITY;
    for (const auto& w : notes) worst = std::min(worst, snr_db(w.samples, synthesize(analyze(w, cfg), cfg).samples));
    const double secs = seconds_since(t0);
    return {worst >= kRoundTripSnrDb && secs < kRoundTripSeconds,
            "min SNR " + fmt(worst) + " dB over 100 notes in " + fmt(secs, 3) + " s"};
}

Outcome temperature_sigmoid() {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 3.0);
    const std::vector<double> temps = {1.0, 1.5, 2.0, 3.0, 5.0};
    auto argsort = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        return idx;
    };
    int order_failures = 0, compression_failures = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> z(32);
        for (auto& v : z) v = n(rng);
        const auto order = argsort(z);
        std::vector<double> prev;
        for (double t : temps) {
            const auto q = tempered_sigmoid(z, t);
            if (argsort(q) != order) ++order_failures;
            if (!prev.empty())
                for (std::size_t i = 0; i < q.size(); ++i)
                    if (std::abs(q[i] - 0.5) > std::abs(prev[i] - 0.5)) ++compression_failures;
            prev = q;
        }
    }
    return {order_failures == 0 && compression_failures == 0,
            "1000 vectors x 5 temperatures: " + std::to_string(order_failures) + " order changes, " +
                std::to_string(compression_failures) + " compression violations"};
}

Outcome distillation_bce() {
    const std::vector<double> z0 = {0.0}, p0 = {0.5};
    const double hand = std::abs(distillation_loss(z0, p0, 1.0) - std::log(2.0));

    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 3.0);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    std::uniform_int_distribution<int> pick_t(0, 4);
    const double temps[] = {1.0, 1.5, 2.0, 3.0, 5.0};
    double worst = 0.0;
    for (int c = 0; c < 100; ++c) {
        std::vector<double> z(10), p(10), g(10);
        for (auto& v : z) v = n(rng);
        for (auto& v : p) v = u(rng);
        const double t = temps[pick_t(rng)];
        distillation_loss(z, p, t, g);
        const std::size_t i = static_cast<std::size_t>(c % 10);
        const double h = 1e-5, saved = z[i];
        z[i] = saved + h;
        const double up = distillation_loss(z, p, t);
        z[i] = saved - h;
        const double down = distillation_loss(z, p, t);
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max({std::abs(g[i]), std::abs(numeric), 1e-6});
        worst = std::max(worst, std::abs(g[i] - numeric) / scale);
    }
    return {hand <= kBceHandTol && worst <= kBceGradRelTol,
            "|L - log 2| = " + fmt(hand, 3) + ", worst relative gradient error " + fmt(worst, 3) + " on 100 coordinates"};
}

Outcome gradient_penalty_check() {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_linear = 0.0;
    for (std::size_t dim : {1u, 16u, 400u, 4096u}) {
        std::vector<std::vector<double>> real(8, std::vector<double>(dim)), fake = real;
        for (auto& r : real)
            for (auto& v : r) v = n(rng);
        for (auto& f : fake)
            for (auto& v : f) v = n(rng);
        std::vector<double> eps(8);
        for (auto& e : eps) e = u(rng);
        // D(x) = sum(x): gradient is all ones.
        const auto ones = [](std::span<const double> x) { return std::vector<double>(x.size(), 1.0); };
        const double expected = std::pow(std::sqrt(static_cast<double>(dim)) - 1.0, 2);
        worst_linear = std::max(worst_linear, std::abs(gradient_penalty(ones, real, fake, eps) - expected));
    }
    std::vector<std::vector<double>> real(8, std::vector<double>(64)), fake = real;
    for (auto& r : real)
        for (auto& v : r) v = n(rng) + 2.0;
    for (auto& f : fake)
        for (auto& v : f) v = n(rng) + 2.0;
    std::vector<double> eps(8);
    for (auto& e : eps) e = u(rng);
    // D(x) = <w, x> with unit w.
    std::vector<double> w(64);
    for (auto& v : w) v = n(rng);
    const double norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
    for (auto& v : w) v /= norm;
    const auto unit = [&](std::span<const double>) { return w; };
    const double gp_unit = gradient_penalty(unit, real, fake, eps);
    return {worst_linear <= kGpLinearTol && std::abs(gp_unit) <= kGpUnitTol,
            "linear critic worst error " + fmt(worst_linear, 3) + ", unit-gradient critic " + fmt(gp_unit, 3)};
}

// p90 with linear interpolation, order statistics found by counting.
double oracle_p90(const std::vector<double>& v) {
    const double pos = 0.9 * static_cast<double>(v.size() - 1);
    auto kth = [&](std::size_t k) {
        for (double x : v) {
            std::size_t less = 0, equal = 0;
            for (double y : v) {
                less += y < x;
                equal += y == x;
            }
            if (less <= k && k < less + equal) return x;
        }
        return std::nan("");
    };
    const auto lo = static_cast<std::size_t>(pos);
    const double f = pos - static_cast<double>(lo);
    return f == 0.0 ? kth(lo) : kth(lo) * (1 - f) + kth(lo + 1) * f;
}

Outcome attribute_ranking() {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int mismatches = 0, tie_instances = 0;
    double worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
        std::vector<std::vector<double>> cols(10, std::vector<double>(200));
        for (auto& c : cols)
            for (double& v : c) v = u(rng);
        std::vector<double> acc(10);
        for (double& a : acc) a = 0.5 + 0.5 * u(rng);
        if (inst % 5 == 0) {
            // Exact ties: duplicated columns with equal accuracy.
            cols[7] = cols[2];
            acc[7] = acc[2];
            cols[9] = cols[4];
            acc[9] = acc[4];
            ++tie_instances;
        }
        SoftLabelSet s;
        for (std::size_t a = 0; a < 10; ++a) s.attribute_names.push_back("a" + std::to_string(a));
        for (std::size_t i = 0; i < 200; ++i) {
            s.clip_ids.push_back("c" + std::to_string(i));
            std::vector<double> row;
            for (const auto& c : cols) row.push_back(c[i]);
            s.values.push_back(row);
        }
        const auto r = rank_attributes(s, acc);

        std::vector<double> score(10);
        for (std::size_t a = 0; a < 10; ++a) score[a] = std::sqrt(oracle_p90(cols[a]) * acc[a]);
        // Descending score, ties by ascending attribute index.
        std::vector<std::size_t> order(10);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
        for (std::size_t k = 0; k < 10; ++k) {
            if (r.ranked[k].index != order[k]) ++mismatches;
            worst = std::max(worst, std::abs(r.ranked[k].score - score[order[k]]));
        }
    }
    return {mismatches == 0 && worst <= kRankTol,
            "50 instances (" + std::to_string(tie_instances) + " with exact ties): " + std::to_string(mismatches) +
                " order mismatches, worst score error " + fmt(worst, 3)};
}

nn::Matrix gaussian(int n, int d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    nn::Matrix m(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

Outcome metric_oracles() {
    std::vector<std::string> failed;
    double worst_is = 0.0;
    for (int c : {2, 10, 27})
        worst_is = std::max(worst_is, std::abs(inception_score(nn::Matrix::Identity(c, c)) / c - 1.0));
    worst_is = std::max(worst_is, std::abs(inception_score(nn::Matrix::Constant(50, 9, 1.0 / 9.0)) - 1.0));
    if (worst_is > kIsRelTol) failed.push_back("IS");

    const EmbeddingSet a{gaussian(512, 16, 1), "t", "v"}, b{gaussian(512, 16, 2), "t", "v"};
    const auto k = kid(a, b);
    if (!(std::abs(k.value) < 3.0 * k.standard_error)) failed.push_back("KID same distribution");
    const double self = fad(a, a);
    if (!(self < kFadSelfTol)) failed.push_back("FAD(a,a)");

    const nn::Matrix one = nn::Matrix::Identity(1, 1);
    const double uni = frechet_distance(nn::Vector::Constant(1, 0.0), one, nn::Vector::Constant(1, 1.0), one);
    if (std::abs(uni - 1.0) > kFadClosedFormTol) failed.push_back("1-D FAD");

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> sd(0.2, 3.0), mu(-2.0, 2.0);
    double worst_diag = 0.0;
    for (int E = 1; E <= 12; ++E) {
        nn::Vector ma(E), mb(E);
        nn::Matrix ca = nn::Matrix::Zero(E, E), cb = nn::Matrix::Zero(E, E);
        double expected = 0.0;
        for (int j = 0; j < E; ++j) {
            ma(j) = mu(rng);
            mb(j) = mu(rng);
            const double sa = sd(rng), sb = sd(rng);
            ca(j, j) = sa * sa;
            cb(j, j) = sb * sb;
            const double ra = std::sqrt(sa * sa + kFadRegularization), rb = std::sqrt(sb * sb + kFadRegularization);
            expected += (ma(j) - mb(j)) * (ma(j) - mb(j)) + (ra - rb) * (ra - rb);
        }
        worst_diag = std::max(worst_diag, std::abs(frechet_distance(ma, ca, mb, cb) - expected));
    }
    if (worst_diag > kFadClosedFormTol) failed.push_back("diagonal FAD");

    std::string detail = "IS relative error " + fmt(worst_is, 3) + ", KID " + fmt(k.value, 3) + " +- " + fmt(k.standard_error, 3) + ", FAD(a,a) " + fmt(self, 3) +
                         ", 1-D FAD " + fmt(uni, 12) + ", diagonal worst " + fmt(worst_diag, 3);
    for (const auto& f : failed) detail += "; failed: " + f;
    return {failed.empty(), detail};
}

Outcome consistency_procedures() {
    constexpr int pitches = 27;
    const std::size_t K = 8;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < K; ++i) names.push_back("attr" + std::to_string(i));
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ConditioningBundle> batch;
    for (std::size_t j = 0; j < 200; ++j) {
        std::vector<double> a(K);
        for (auto& v : a) v = u(rng);
        batch.push_back(ConditioningBundle::make(a, static_cast<int>(j % pitches), pitches, rng));
    }
    const PredictionPipeline identity = [](std::span<const ConditioningBundle> b) {
        nn::Matrix out(static_cast<Eigen::Index>(b.size()), static_cast<Eigen::Index>(b.front().alpha.size()));
        for (std::size_t j = 0; j < b.size(); ++j)
            for (std::size_t i = 0; i < b[j].alpha.size(); ++i)
                out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = b[j].alpha[i];
        return out;
    };

    double worst_rho = 0.0;
    const auto corr = attribute_correlation(identity, batch, names);
    for (const auto& r : corr.rho) worst_rho = std::max(worst_rho, r ? std::abs(*r - 1.0) : INFINITY);

    double worst_sweep = 0.0;
    const auto sweep = ood_correlation_sweep(identity, batch, corr.positive(), names);
    for (const auto& p : sweep.curve) worst_sweep = std::max(worst_sweep, p.mean_rho ? std::abs(*p.mean_rho - 1.0) : INFINITY);

    const auto top = corr.top(5);
    long double slope = 0;
    for (std::size_t i : top) {
        long double m = 0, v = 0;
        for (const auto& b : batch) m += b.alpha[i];
        m /= batch.size();
        for (const auto& b : batch) v += (b.alpha[i] - m) * (b.alpha[i] - m);
        slope += 1.0L / std::sqrt(v / batch.size());
    }
    slope /= top.size();
    const auto inc = increment_consistency(identity, batch, top, names);
    double worst_inc = 0.0;
    for (int k = 0; k < kIncrementSteps; ++k)
        worst_inc = std::max(worst_inc, std::abs(inc.curve[static_cast<std::size_t>(k)].mean_change -
                                                 static_cast<double>(slope * k / 5.0L)));

    const double d0 = std::abs(delta_l(0) - 0.001), d50 = std::abs(delta_l(50) - std::pow(10.0, 0.6));
    const bool ok = worst_rho <= kConsistencyRhoTol && sweep.curve.size() == kOodSteps &&
                    worst_sweep <= kConsistencyRhoTol && inc.curve.size() == kIncrementSteps &&
                    worst_inc <= kIncrementSlopeTol && d0 <= kDeltaTol && d50 <= kDeltaTol;
    return {ok, "rho error " + fmt(worst_rho, 3) + ", sweep error " + fmt(worst_sweep, 3) + " over " +
                    std::to_string(sweep.curve.size()) + " steps, increment slope error " + fmt(worst_inc, 3) +
                    ", delta endpoints " + fmt(d0, 3) + " / " + fmt(d50, 3)};
}

Outcome smoke_training() {
    const auto& h = home();
    DatasetReader reader(load_manifest(h / "dataset" / "manifest.json"), 0);
    const auto labels = load_soft_labels(h / "labels.jsonl");
    const auto ranking = AttributeRanking::from_json(read_json(h / "ranking.json"));
    const auto teacher = load_teacher(h / "teacher.json");
    const auto names = selected_attributes(ranking, 128);
    const auto ts = make_training_set(reader, labels, names, Split::Train);
    const auto vs = make_training_set(reader, labels, names, Split::Val);

    TrainConfig cfg;
    cfg.steps = kSmokeSteps;
    const auto trained = train(ts, &vs, cfg);
    save_checkpoint(trained.generator, h / "smoke" / "checkpoint.bin");
    const auto untrained = initial_generator(ts, &vs, cfg);

    const auto features = compute_features(reader);
    const auto clf = train_embedding_classifier(reader.manifest(), features, {}, &labels);
    const auto src = make_eval_source(reader.manifest(), features, labels, names, Split::Val);
    const double fad_trained = evaluate_model(trained.generator, clf, src, kMetricSamples, 1).fad;
    const double fad_untrained = evaluate_model(untrained, clf, src, kMetricSamples, 1).fad;

    std::mt19937_64 rng(7);
    const auto batch = sample_conditioning(src, trained.generator.arch(), kCorrelationSamples, rng);
    std::vector<std::size_t> top10(std::min<std::size_t>(10, names.size()));
    std::iota(top10.begin(), top10.end(), 0);
    const auto rho_trained = attribute_correlation(teacher_pipeline(trained.generator, teacher), batch, names).mean(top10);
    const auto rho_untrained = attribute_correlation(teacher_pipeline(untrained, teacher), batch, names).mean(top10);

    TrainConfig short_cfg = cfg;
    short_cfg.steps = kReproSteps;
    const auto a = train(ts, &vs, short_cfg);
    const auto b = train(ts, &vs, short_cfg);
    const bool same_bytes = encode_checkpoint(a.generator) == encode_checkpoint(b.generator);
    const bool same_log = a.log.steps == b.log.steps &&
                          std::equal(a.log.steps.begin(), a.log.steps.end(), trained.log.steps.begin());

    const bool rho_ok = rho_trained && (!rho_untrained || *rho_trained > *rho_untrained);
    const bool ok = fad_trained < fad_untrained && rho_ok && same_bytes && same_log &&
                    trained.log.seconds <= kSmokeBudgetSeconds;
    return {ok, std::to_string(kSmokeSteps) + " steps in " + fmt(trained.log.seconds, 4) + " s; FAD " +
                    fmt(fad_trained) + " vs untrained " + fmt(fad_untrained) + "; top-10 mean rho " +
                    (rho_trained ? fmt(*rho_trained) : "undefined") + " vs untrained " +
                    (rho_untrained ? fmt(*rho_untrained) : "undefined") + "; reproducible " +
                    (same_bytes && same_log ? "yes" : "no")};
}

// Needs the checkpoint written by the smoke run.
Outcome pitch_conditioning() {
    const auto& h = home();
    const auto ckpt = h / "smoke" / "checkpoint.bin";
    if (!fs::exists(ckpt)) return {false, "no smoke checkpoint at " + ckpt.string()};
    const auto g = load_checkpoint(ckpt);
    DatasetReader reader(load_manifest(h / "dataset" / "manifest.json"), 0);
    const auto labels = load_soft_labels(h / "labels.jsonl");
    const auto features = compute_features(reader);
    const auto clf = train_embedding_classifier(reader.manifest(), features, {}, &labels);
    const auto src = make_eval_source(reader.manifest(), features, labels, g.attribute_names, Split::Val);
    std::mt19937_64 rng(11);
    const auto batch = sample_conditioning(src, g.arch(), kMetricSamples, rng);
    const auto probs = clf.pitch_probabilities(describe_generated(g, batch));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        Eigen::Index predicted = 0;
        probs.row(static_cast<Eigen::Index>(i)).maxCoeff(&predicted);
        const auto& onehot = batch[i].pitch;
        hits += static_cast<std::size_t>(std::max_element(onehot.begin(), onehot.end()) - onehot.begin()) ==
                static_cast<std::size_t>(predicted);
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(batch.size());
    return {acc >= kPitchAccuracy, fmt(100.0 * acc, 3) + "% of " + std::to_string(batch.size()) +
                                       " generated notes classified at their conditioned pitch (real val " +
                                       fmt(100.0 * clf.pitch_accuracy, 3) + "%)"};
}

Outcome experiment_grid() {
    const auto& h = home();
    const auto out = h / "grid";
    const auto t0 = Clock::now();
    const int code = run_cli("--home " + h.string() + " -q experiment grid --steps " + std::to_string(kGridSteps) +
                             " --out " + out.string() + " > /dev/null 2>&1");
    const double secs = seconds_since(t0);
    if (code != 0) return {false, "experiment grid exited with " + std::to_string(code)};

    const auto report = read_json(out / "report.json");
    const std::vector<std::string> expected_models = {"real data",     "baseline",      "DarkGAN T=1.0", "DarkGAN T=1.5",
                                                      "DarkGAN T=2.0", "DarkGAN T=3.0", "DarkGAN T=5.0"};
    std::vector<std::string> models;
    int non_finite = 0;
    for (const auto& row : report.at("rows")) {
        models.push_back(row.at("model"));
        for (const char* split : {"tr", "val"})
            for (const char* m : {"pis", "iis", "kid", "fad"}) {
                const auto& v = row.at(split).at(m);
                if (!v.is_number() || !std::isfinite(v.get<double>())) ++non_finite;
            }
    }
    std::ifstream in(out / "table.md");
    std::string header;
    std::getline(in, header);
    const bool shaped = header == "| Model | PIS tr | PIS val | IIS tr | IIS val | KID tr | KID val | FAD tr | FAD val |";
    return {models == expected_models && non_finite == 0 && shaped,
            std::to_string(models.size()) + " rows x 8 metric columns, " + std::to_string(non_finite) +
                " non-finite cells, " + std::to_string(kGridSteps) + " steps per model, " + fmt(secs, 4) + " s"};
}

Outcome service_contracts() {
    const auto ckpt = home() / "smoke" / "checkpoint.bin";
    GeneratorModel model;
    if (fs::exists(ckpt)) {
        model = load_checkpoint(ckpt);
    } else {
        GanArchitecture arch;
        arch.num_attributes = 4;
        arch.num_pitches = 27;
        model.net = Generator<float>(arch, 1);
        model.attribute_names = {"a0", "a1", "a2", "a3"};
        model.defaults.assign(4, 0.5);
        model.observed_ranges.assign(4, {0.0, 1.0});
    }
    const std::string attr = model.attribute_names.front();

    ServiceConfig cfg;
    cfg.port = 0;
    SynthService service(cfg);
    httplib::Client client("127.0.0.1", service.start());
    client.set_read_timeout(std::chrono::seconds(30));
    std::vector<std::string> failed;

    const std::string req = R"({"pitch_midi": 60, "seed": 42, "attributes": {")" + attr + R"(": 0.8}})";
    auto r = client.Post("/generate", req, "application/json");
    if (!r || r->status != 503) failed.push_back("503 without model");

    service.load(ServedModel::make(std::move(model)));
    const auto first = client.Post("/generate", req, "application/json");
    const auto second = client.Post("/generate", req, "application/json");
    const auto other = client.Post("/generate", R"({"pitch_midi": 60, "seed": 43})", "application/json");
    if (!first || !second || !other || first->status != 200 || second->status != 200)
        failed.push_back("generate status");
    else if (first->body != second->body || first->body == other->body)
        failed.push_back("byte determinism");

    for (const std::string& bad : {std::string("not json"), std::string(R"({"pitch_midi": 10})"),
                                  R"({"pitch_midi": 60, "attributes": {")" + attr + R"(": 4.5}})",
                                  std::string(R"({"pitch_midi": 60, "unknown": 1})")}) {
        r = client.Post("/generate", bad, "application/json");
        if (!r || r->status != 400) failed.push_back("400 for " + bad);
    }

    std::vector<double> ms;
    for (int i = 0; i < 40; ++i) {
        const auto t0 = Clock::now();
        r = client.Post("/generate", R"({"pitch_midi": )" + std::to_string(48 + i % 20) + R"(, "seed": )" +
                                         std::to_string(i) + "}",
                        "application/json");
        ms.push_back(seconds_since(t0) * 1000.0);
        if (!r || r->status != 200) failed.push_back("latency request status");
    }
    std::sort(ms.begin(), ms.end());
    const double p95 = ms[static_cast<std::size_t>(0.95 * (ms.size() - 1))];
    if (!(p95 < kP95Ms)) failed.push_back("p95");

    service.unload();
    r = client.Post("/generate", req, "application/json");
    if (!r || r->status != 503) failed.push_back("503 after unload");
    service.stop();

    std::string detail = "p95 " + fmt(p95) + " ms over 40 requests";
    for (const auto& f : failed) detail += "; failed: " + f;
    return {failed.empty(), detail};
}

struct Criterion {
    std::string key, title;
    std::function<Outcome()> check;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {"spectral", "Spectral round trip", spectral_round_trip},
        {"sigmoid", "Temperature sigmoid", temperature_sigmoid},
        {"bce", "Distillation BCE", distillation_bce},
        {"gp", "Gradient penalty", gradient_penalty_check},
        {"ranking", "Attribute ranking", attribute_ranking},
        {"metrics", "Metrics oracles", metric_oracles},
        {"consistency", "Consistency procedures", consistency_procedures},
        {"smoke", "Smoke training", smoke_training},
        {"pitch", "Pitch conditioning", pitch_conditioning},
        {"grid", "Experiment grid", experiment_grid},
        {"service", "Service", service_contracts},
    };
    std::vector<std::string> only(argv + 1, argv + argc);
    int failures = 0;
    for (const auto& c : all) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.key) == only.end()) continue;
        Outcome o;
        const auto t0 = Clock::now();
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << c.title << ": " << o.detail << " [" << fmt(seconds_since(t0), 3)
                  << " s]" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
