#include "darksynth/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "darksynth/descriptors.hpp"
#include "darksynth/io.hpp"

namespace darksynth {

namespace {

constexpr int kClassifierFormat = 1;
constexpr double kRowSumTolerance = 1e-5;

nn::Matrix softmax_rows(const nn::Matrix& z) {
    nn::Matrix p(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double m = z.row(i).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index j = 0; j < z.cols(); ++j) sum += (p(i, j) = std::exp(z(i, j) - m));
        p.row(i) /= sum;
    }
    return p;
}

int argmax_row(const nn::Matrix& m, Eigen::Index i) {
    Eigen::Index best = 0;
    m.row(i).maxCoeff(&best);
    return static_cast<int>(best);
}

void require_finite(const nn::Matrix& m, const std::string& what) {
    if (!m.allFinite()) throw invalid_input(what + " contains non-finite values");
}

}  // namespace

int EmbeddingClassifier::embedding_dim() const {
    // The embedding is the trunk's last hidden layer.
    return static_cast<int>(net.hidden(nn::Matrix::Zero(1, net.input_dim())).cols());
}

std::string EmbeddingClassifier::version() const { return hex64(fnv1a64(net.to_json().dump())); }

nn::Matrix EmbeddingClassifier::embed(const nn::Matrix& descriptors) const {
    return net.hidden(scaler.apply(descriptors));
}

nn::Matrix EmbeddingClassifier::pitch_probabilities(const nn::Matrix& descriptors) const {
    return softmax_rows(net.forward(scaler.apply(descriptors)).leftCols(num_pitches));
}

nn::Matrix EmbeddingClassifier::waveshape_probabilities(const nn::Matrix& descriptors) const {
    return softmax_rows(net.forward(scaler.apply(descriptors)).middleCols(num_pitches, num_waveshapes));
}

nn::Matrix EmbeddingClassifier::attribute_probabilities(const nn::Matrix& descriptors) const {
    const nn::Matrix z = net.forward(scaler.apply(descriptors));
    const auto K = static_cast<Eigen::Index>(attribute_names.size());
    return z.rightCols(K).unaryExpr([](double v) { return tempered_sigmoid(v, 1.0); });
}

nlohmann::json EmbeddingClassifier::to_json() const {
    return {{"format", kClassifierFormat},
            {"net", net.to_json()},
            {"scaler", scaler.to_json()},
            {"num_pitches", num_pitches},
            {"num_waveshapes", num_waveshapes},
            {"attribute_names", attribute_names},
            {"input_spec", input_spec},
            {"pitch_range", {{"low", pitch_range.low}, {"count", pitch_range.count}}},
            {"pitch_accuracy", pitch_accuracy},
            {"waveshape_accuracy", waveshape_accuracy}};
}

EmbeddingClassifier EmbeddingClassifier::from_json(const nlohmann::json& j) {
    if (j.value("format", 0) != kClassifierFormat) throw compatibility_error("unsupported classifier format");
    EmbeddingClassifier c;
    c.net = nn::Mlp::from_json(j.at("net"));
    c.scaler = nn::Standardizer::from_json(j.at("scaler"));
    c.num_pitches = j.at("num_pitches").get<int>();
    c.num_waveshapes = j.at("num_waveshapes").get<int>();
    c.attribute_names = j.at("attribute_names").get<std::vector<std::string>>();
    c.input_spec = j.at("input_spec").get<SpectralConfig>();
    c.pitch_range.low = j.at("pitch_range").at("low").get<int>();
    c.pitch_range.count = j.at("pitch_range").at("count").get<int>();
    c.pitch_accuracy = j.at("pitch_accuracy").get<double>();
    c.waveshape_accuracy = j.at("waveshape_accuracy").get<double>();
    const int outputs = c.num_pitches + c.num_waveshapes + static_cast<int>(c.attribute_names.size());
    if (c.net.output_dim() != outputs) throw compatibility_error("classifier heads do not match its metadata");
    return c;
}

void save_classifier(const EmbeddingClassifier& c, const std::filesystem::path& path) {
    write_json_atomic(path, c.to_json());
}

EmbeddingClassifier load_classifier(const std::filesystem::path& path) {
    return EmbeddingClassifier::from_json(read_json(path));
}

EmbeddingClassifier train_embedding_classifier(const DatasetManifest& manifest, const FeatureTable& features,
                                               const ClassifierConfig& cfg, const SoftLabelSet* labels) {
    const int P = manifest.pitch_range.count;
    const int W = kWaveshapeCount;
    const std::vector<std::string>& names = labels ? labels->attribute_names : manifest.attribute_names;
    const int K = static_cast<int>(names.size());
    if (features.entries.size() != static_cast<std::size_t>(features.descriptors.rows())) {
        throw invalid_input("feature table rows do not match its entries");
    }

    std::vector<std::size_t> fit, held;
    for (std::size_t i = 0; i < features.entries.size(); ++i) {
        (features.entries[i]->split == Split::Train ? fit : held).push_back(i);
    }
    if (fit.size() < 10 || held.size() < 10) {
        throw invalid_input("insufficient data for classifier training: " + std::to_string(fit.size()) + " train / " +
                            std::to_string(held.size()) + " validation clips (need >= 10 each)");
    }

    const auto D = features.descriptors.cols();
    auto rows_of = [&](const std::vector<std::size_t>& rows) {
        nn::Matrix x(static_cast<Eigen::Index>(rows.size()), D);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            x.row(static_cast<Eigen::Index>(r)) = features.descriptors.row(static_cast<Eigen::Index>(rows[r]));
        }
        return x;
    };
    auto pitch_of = [&](std::size_t i) { return manifest.pitch_range.index_of(features.entries[i]->pitch_midi); };
    auto shape_of = [&](std::size_t i) { return static_cast<int>(features.entries[i]->spec.timbre.waveshape); };
    auto attributes_of = [&](std::size_t i) -> const std::vector<double>& {
        const auto* e = features.entries[i];
        const auto& v = labels ? labels->at(e->clip_id) : e->ground_truth;
        if (v.size() != static_cast<std::size_t>(K)) throw invalid_input("clip " + e->clip_id + " has the wrong attribute count");
        return v;
    };

    EmbeddingClassifier c;
    c.num_pitches = P;
    c.num_waveshapes = W;
    c.attribute_names = names;
    c.input_spec = manifest.spectral_config;
    c.pitch_range = manifest.pitch_range;

    const nn::Matrix x_raw = rows_of(fit);
    c.scaler = nn::Standardizer::fit(x_raw);
    const nn::Matrix x = c.scaler.apply(x_raw);
    std::vector<int> widths = {static_cast<int>(D)};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(cfg.embedding_dim);
    widths.push_back(P + W + K);
    std::mt19937_64 rng(cfg.seed);
    c.net = nn::Mlp(widths, rng());
    nn::Adam<double> opt(c.net.params(), {.lr = cfg.learning_rate});

    std::vector<std::size_t> order(fit.size());
    std::iota(order.begin(), order.end(), 0);
    nn::Mlp::Trace trace;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const auto n = static_cast<Eigen::Index>(end - start);
            nn::Matrix xb(n, D);
            for (Eigen::Index r = 0; r < n; ++r) xb.row(r) = x.row(static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(r)]));
            const nn::Matrix z = c.net.forward(xb, &trace);
            // Cross-entropy for both classifiers plus mean BCE over attributes.
            nn::Matrix grad(n, z.cols());
            grad.leftCols(P) = softmax_rows(z.leftCols(P));
            grad.middleCols(P, W) = softmax_rows(z.middleCols(P, W));
            for (Eigen::Index r = 0; r < n; ++r) {
                const std::size_t i = fit[order[start + static_cast<std::size_t>(r)]];
                grad(r, pitch_of(i)) -= 1.0;
                grad(r, P + shape_of(i)) -= 1.0;
                const auto& y = attributes_of(i);
                for (int k = 0; k < K; ++k) {
                    grad(r, P + W + k) = (tempered_sigmoid(z(r, P + W + k), 1.0) - y[static_cast<std::size_t>(k)]) / K;
                }
            }
            grad /= static_cast<double>(n);
            opt.zero_grad();
            c.net.backward(trace, grad);
            opt.step();
        }
    }

    const nn::Matrix xh = rows_of(held);
    const nn::Matrix pp = c.pitch_probabilities(xh);
    const nn::Matrix wp = c.waveshape_probabilities(xh);
    int pitch_hits = 0, shape_hits = 0;
    for (std::size_t r = 0; r < held.size(); ++r) {
        pitch_hits += argmax_row(pp, static_cast<Eigen::Index>(r)) == pitch_of(held[r]);
        shape_hits += argmax_row(wp, static_cast<Eigen::Index>(r)) == shape_of(held[r]);
    }
    c.pitch_accuracy = static_cast<double>(pitch_hits) / static_cast<double>(held.size());
    c.waveshape_accuracy = static_cast<double>(shape_hits) / static_cast<double>(held.size());
    return c;
}

void EmbeddingSet::validate() const {
    if (data.rows() < 2) throw invalid_input("an embedding set needs at least 2 rows, got " + std::to_string(data.rows()));
    if (data.cols() < 1) throw invalid_input("embedding dimension must be positive");
    require_finite(data, "embedding set");
}

void save_embeddings(const EmbeddingSet& e, const std::filesystem::path& path) {
    e.validate();
    std::string bytes(static_cast<std::size_t>(e.data.size()) * sizeof(double), '\0');
    std::memcpy(bytes.data(), e.data.data(), bytes.size());
    write_file_atomic(path, bytes);
    write_json_atomic(path.string() + ".json", {{"n", e.data.rows()},
                                                {"E", e.data.cols()},
                                                {"classifier_version", e.classifier_version},
                                                {"source", e.source}});
}

EmbeddingSet load_embeddings(const std::filesystem::path& path, const std::string& expected_version) {
    const auto meta = read_json(path.string() + ".json");
    EmbeddingSet e;
    e.classifier_version = meta.at("classifier_version").get<std::string>();
    e.source = meta.value("source", std::string{});
    if (!expected_version.empty() && e.classifier_version != expected_version) {
        throw compatibility_error("cached embeddings at " + path.string() + " come from classifier " +
                                  e.classifier_version + ", expected " + expected_version);
    }
    const auto n = meta.at("n").get<Eigen::Index>();
    const auto E = meta.at("E").get<Eigen::Index>();
    const std::string bytes = read_file(path);
    if (bytes.size() != static_cast<std::size_t>(n * E) * sizeof(double)) {
        throw io_error("embedding file " + path.string() + " has " + std::to_string(bytes.size()) +
                       " bytes, sidecar says " + std::to_string(n) + "x" + std::to_string(E));
    }
    e.data.resize(n, E);
    std::memcpy(e.data.data(), bytes.data(), bytes.size());
    e.validate();
    return e;
}

double inception_score(const nn::Matrix& probs) {
    if (probs.rows() < 1 || probs.cols() < 1) throw invalid_input("inception score needs a non-empty probability matrix");
    require_finite(probs, "class probabilities");
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        if (probs.row(i).minCoeff() < 0.0) throw invalid_input("row " + std::to_string(i) + " has negative probabilities");
        const double s = probs.row(i).sum();
        if (std::abs(s - 1.0) > kRowSumTolerance) {
            throw invalid_input("row " + std::to_string(i) + " sums to " + std::to_string(s) + ", not 1");
        }
    }
    const Eigen::RowVectorXd marginal = probs.colwise().mean();
    double kl = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        for (Eigen::Index j = 0; j < probs.cols(); ++j) {
            const double p = probs(i, j);
            if (p > 0.0) kl += p * (std::log(p) - std::log(marginal(j)));
        }
    }
    return std::exp(kl / static_cast<double>(probs.rows()));
}

namespace {

// Unbiased MMD^2 from precomputed kernel matrices over index multisets.
double mmd_unbiased(const nn::Matrix& kxx, const nn::Matrix& kyy, const nn::Matrix& kxy, const std::vector<int>& ix,
                    const std::vector<int>& iy) {
    const auto m = static_cast<double>(ix.size());
    const auto n = static_cast<double>(iy.size());
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t a = 0; a < ix.size(); ++a) {
        for (std::size_t b = 0; b < ix.size(); ++b) {
            if (a != b) sxx += kxx(ix[a], ix[b]);
        }
    }
    for (std::size_t a = 0; a < iy.size(); ++a) {
        for (std::size_t b = 0; b < iy.size(); ++b) {
            if (a != b) syy += kyy(iy[a], iy[b]);
        }
    }
    for (int a : ix) {
        for (int b : iy) sxy += kxy(a, b);
    }
    return sxx / (m * (m - 1.0)) + syy / (n * (n - 1.0)) - 2.0 * sxy / (m * n);
}

// A fixed order for the two arguments, so kid(a, b) and kid(b, a) evaluate
// the same arithmetic.
bool canonical_first(const nn::Matrix& a, const nn::Matrix& b) {
    if (a.rows() != b.rows()) return a.rows() < b.rows();
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size()) ||
           std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace

KidEstimate kid(const EmbeddingSet& a, const EmbeddingSet& b, int resamples, std::uint64_t seed) {
    a.validate();
    b.validate();
    if (a.data.cols() != b.data.cols()) {
        throw invalid_input("embedding dimensions differ: " + std::to_string(a.data.cols()) + " vs " +
                            std::to_string(b.data.cols()));
    }
    if (resamples < 2) throw invalid_input("kid needs at least 2 bootstrap resamples");
    const nn::Matrix& x = canonical_first(a.data, b.data) ? a.data : b.data;
    const nn::Matrix& y = &x == &a.data ? b.data : a.data;
    const double E = static_cast<double>(x.cols());
    auto kernel = [E](const nn::Matrix& p, const nn::Matrix& q) {
        nn::Matrix k = p * q.transpose();
        return k.unaryExpr([E](double v) { return std::pow(v / E + 1.0, 3); }).eval();
    };
    const nn::Matrix kxx = kernel(x, x), kyy = kernel(y, y), kxy = kernel(x, y);

    std::vector<int> ix(static_cast<std::size_t>(x.rows())), iy(static_cast<std::size_t>(y.rows()));
    std::iota(ix.begin(), ix.end(), 0);
    std::iota(iy.begin(), iy.end(), 0);
    KidEstimate r;
    r.value = mmd_unbiased(kxx, kyy, kxy, ix, iy);

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> px(0, static_cast<int>(x.rows()) - 1), py(0, static_cast<int>(y.rows()) - 1);
    std::vector<double> boot;
    for (int s = 0; s < resamples; ++s) {
        for (int& v : ix) v = px(rng);
        for (int& v : iy) v = py(rng);
        boot.push_back(mmd_unbiased(kxx, kyy, kxy, ix, iy));
    }
    const double mean = std::accumulate(boot.begin(), boot.end(), 0.0) / static_cast<double>(boot.size());
    double var = 0.0;
    for (double v : boot) var += (v - mean) * (v - mean);
    r.standard_error = std::sqrt(var / static_cast<double>(boot.size() - 1));
    return r;
}

namespace {

Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& m, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw numerical_error(std::string("eigendecomposition failed for ") + what);
    const Eigen::VectorXd ev = es.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    if (ev.minCoeff() < -1e-9 * scale) {
        throw numerical_error(std::string(what) + " is not positive semi-definite after regularization: min eigenvalue " +
                              std::to_string(ev.minCoeff()) + ", max " + std::to_string(ev.maxCoeff()));
    }
    const Eigen::VectorXd root = ev.cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const nn::Vector& mu_a, const nn::Matrix& cov_a, const nn::Vector& mu_b, const nn::Matrix& cov_b) {
    const auto E = mu_a.size();
    if (mu_b.size() != E || cov_a.rows() != E || cov_a.cols() != E || cov_b.rows() != E || cov_b.cols() != E) {
        throw invalid_input("Frechet distance: mean and covariance dimensions disagree");
    }
    const Eigen::MatrixXd reg = kFadRegularization * Eigen::MatrixXd::Identity(E, E);
    const Eigen::MatrixXd sa = 0.5 * (cov_a + cov_a.transpose()) + reg;
    const Eigen::MatrixXd sb = 0.5 * (cov_b + cov_b.transpose()) + reg;
    // Tr((Sa Sb)^1/2) = Tr((Sa^1/2 Sb Sa^1/2)^1/2), which keeps everything symmetric.
    const Eigen::MatrixXd ra = symmetric_sqrt(sa, "covariance a");
    symmetric_sqrt(sb, "covariance b");
    Eigen::MatrixXd inner = ra * sb * ra;
    inner = 0.5 * (inner + inner.transpose());
    const double cross = symmetric_sqrt(inner, "covariance product").trace();
    const double d = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross;
    return std::max(0.0, d);
}

namespace {

void moments(const nn::Matrix& x, nn::Vector& mu, nn::Matrix& cov) {
    mu = x.colwise().mean().transpose();
    const nn::Matrix c = x.rowwise() - mu.transpose();
    cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

}  // namespace

double fad(const EmbeddingSet& a, const EmbeddingSet& b) {
    a.validate();
    b.validate();
    if (a.data.cols() != b.data.cols()) {
        throw invalid_input("embedding dimensions differ: " + std::to_string(a.data.cols()) + " vs " +
                            std::to_string(b.data.cols()));
    }
    nn::Vector ma, mb;
    nn::Matrix ca, cb;
    moments(a.data, ma, ca);
    moments(b.data, mb, cb);
    return frechet_distance(ma, ca, mb, cb);
}

EvalSource make_eval_source(const DatasetManifest& manifest, const FeatureTable& features, const SoftLabelSet& labels,
                            const std::vector<std::string>& attributes, Split split) {
    if (labels.temperature != 1.0) throw invalid_input("conditioning labels must be at T = 1");
    std::vector<std::size_t> columns;
    for (const auto& name : attributes) {
        const auto it = std::find(labels.attribute_names.begin(), labels.attribute_names.end(), name);
        if (it == labels.attribute_names.end()) throw invalid_input("soft labels lack attribute '" + name + "'");
        columns.push_back(static_cast<std::size_t>(it - labels.attribute_names.begin()));
    }
    EvalSource s;
    s.split = split;
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < features.entries.size(); ++i) {
        const auto* e = features.entries[i];
        if (e->split != split) continue;
        rows.push_back(static_cast<Eigen::Index>(i));
        const auto& v = labels.at(e->clip_id);
        std::vector<double> alpha;
        for (std::size_t c : columns) alpha.push_back(v[c]);
        s.alphas.push_back(std::move(alpha));
        s.pitch_index.push_back(manifest.pitch_range.index_of(e->pitch_midi));
    }
    if (rows.size() < 2) throw invalid_input("split " + to_string(split) + " has fewer than 2 clips");
    s.descriptors.resize(static_cast<Eigen::Index>(rows.size()), features.descriptors.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) s.descriptors.row(static_cast<Eigen::Index>(r)) = features.descriptors.row(rows[r]);
    return s;
}

std::vector<ConditioningBundle> sample_conditioning(const EvalSource& src, const GanArchitecture& arch, std::size_t n,
                                                    std::mt19937_64& rng) {
    if (src.alphas.empty()) throw invalid_input("no clips to sample conditioning from");
    std::uniform_int_distribution<std::size_t> pick(0, src.alphas.size() - 1);
    std::vector<ConditioningBundle> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = pick(rng);
        out.push_back(ConditioningBundle::make(src.alphas[j], src.pitch_index[j], arch.num_pitches, rng, arch.latent_dim));
    }
    return out;
}

nn::Matrix describe_generated(const GeneratorModel& g, std::span<const ConditioningBundle> batch) {
    constexpr std::size_t kChunk = 16;
    nn::Matrix out(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(descriptor_size()));
    for (std::size_t start = 0; start < batch.size(); start += kChunk) {
        const auto chunk = batch.subspan(start, std::min(kChunk, batch.size() - start));
        const auto tensors = generate(g, chunk);
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            const MagIFTensor t = analyze(synthesize(tensors[i], g.spectral), g.spectral);
            const auto d = audio_descriptors(t, g.spectral);
            out.row(static_cast<Eigen::Index>(start + i)) = Eigen::Map<const Eigen::RowVectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
        }
    }
    return out;
}

nlohmann::json MetricReport::to_json() const {
    return {{"pis", pis},   {"iis", iis},       {"kid", kid},   {"kid_stderr", kid_stderr},
            {"fad", fad},   {"n_samples", n_samples}, {"split", to_string(split)}, {"config", config}};
}

MetricReport evaluate_model(const GeneratorModel& g, const EmbeddingClassifier& clf, const EvalSource& src,
                            std::size_t n, std::uint64_t seed) {
    if (n < 64) throw invalid_input("evaluation needs n >= 64 samples, got " + std::to_string(n));
    if (!(clf.input_spec == g.spectral)) throw compatibility_error("classifier and generator use different spectral configs");
    if (clf.num_pitches != g.arch().num_pitches) throw compatibility_error("classifier and generator pitch counts differ");
    std::mt19937_64 rng(seed);
    const auto cond = sample_conditioning(src, g.arch(), n, rng);
    const nn::Matrix gen = describe_generated(g, cond);

    MetricReport r;
    r.n_samples = n;
    r.split = src.split;
    r.pis = inception_score(clf.pitch_probabilities(gen));
    r.iis = inception_score(clf.waveshape_probabilities(gen));
    const EmbeddingSet real{clf.embed(src.descriptors), "real", clf.version()};
    const EmbeddingSet fake{clf.embed(gen), "generated", clf.version()};
    const auto k = kid(real, fake, 100, seed);
    r.kid = k.value;
    r.kid_stderr = k.standard_error;
    r.fad = fad(real, fake);
    r.config = {{"n", n}, {"seed", seed}, {"split", to_string(src.split)}, {"classifier_version", clf.version()},
                {"real_clips", src.descriptors.rows()}};
    return r;
}

}  // namespace darksynth
