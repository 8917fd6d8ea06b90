#include "darksynth/consistency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "darksynth/descriptors.hpp"
#include "darksynth/error.hpp"

namespace darksynth {

namespace {

std::vector<double> column(const nn::Matrix& m, std::size_t c) {
    std::vector<double> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(r)] = m(r, static_cast<Eigen::Index>(c));
    return out;
}

std::vector<double> alpha_column(std::span<const ConditioningBundle> batch, std::size_t c) {
    std::vector<double> out(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j) out[j] = batch[j].alpha[c];
    return out;
}

std::size_t check_batch(std::span<const ConditioningBundle> batch, std::span<const std::string> names,
                        std::size_t min_rows) {
    if (names.empty()) throw invalid_input("the model has no attribute conditioning");
    if (batch.size() < min_rows)
        throw invalid_input("need at least " + std::to_string(min_rows) + " samples, got " + std::to_string(batch.size()));
    for (const auto& b : batch)
        if (b.alpha.size() != names.size())
            throw invalid_input("conditioning has " + std::to_string(b.alpha.size()) + " attributes, expected " +
                                std::to_string(names.size()));
    return names.size();
}

nn::Matrix run(const PredictionPipeline& f, std::span<const ConditioningBundle> batch, std::size_t k) {
    nn::Matrix p = f(batch);
    if (p.rows() != static_cast<Eigen::Index>(batch.size()) || p.cols() != static_cast<Eigen::Index>(k))
        throw invalid_input("pipeline returned " + std::to_string(p.rows()) + "x" + std::to_string(p.cols()) +
                            " predictions, expected " + std::to_string(batch.size()) + "x" + std::to_string(k));
    if (!p.allFinite()) throw numerical_error("pipeline returned non-finite predictions");
    return p;
}

bool constant(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

double population_std(std::span<const double> v) {
    if (constant(v)) return 0.0;
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / n);
}

std::string fmt_delta(double d) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", d);
    return buf;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

PredictionPipeline teacher_pipeline(const GeneratorModel& g, const TeacherModel& teacher) {
    if (!(teacher.input_spec == g.spectral)) throw compatibility_error("teacher and generator use different spectral configs");
    std::vector<Eigen::Index> cols;
    for (const auto& name : g.attribute_names) {
        const auto it = std::find(teacher.attribute_names.begin(), teacher.attribute_names.end(), name);
        if (it == teacher.attribute_names.end()) throw compatibility_error("teacher does not predict attribute '" + name + "'");
        cols.push_back(it - teacher.attribute_names.begin());
    }
    return [&g, &teacher, cols](std::span<const ConditioningBundle> batch) {
        const nn::Matrix z = teacher.logits_from_descriptors(describe_generated(g, batch));
        nn::Matrix out(z.rows(), static_cast<Eigen::Index>(cols.size()));
        for (Eigen::Index r = 0; r < z.rows(); ++r)
            for (std::size_t c = 0; c < cols.size(); ++c)
                out(r, static_cast<Eigen::Index>(c)) = tempered_sigmoid(z(r, cols[c]), 1.0);
        return out;
    };
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw invalid_input("correlation inputs differ in length");
    if (x.size() < 2) throw invalid_input("correlation needs at least two points");
    if (constant(x) || constant(y)) return std::nullopt;
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double delta_l(int l) {
    if (l < 0 || l >= kOodSteps) throw invalid_input("delta_l index must be in [0, 50], got " + std::to_string(l));
    return std::pow(10.0, -3.0 + l * 3.6 / 50.0);
}

double delta_k(int k) {
    if (k < 0 || k >= kIncrementSteps) throw invalid_input("delta_k index must be in [0, 25], got " + std::to_string(k));
    return k / 5.0;
}

std::vector<ConditioningBundle> increment_attribute(std::span<const ConditioningBundle> batch, std::size_t attribute,
                                                    double delta) {
    std::vector<ConditioningBundle> out(batch.begin(), batch.end());
    for (auto& b : out) {
        if (attribute >= b.alpha.size()) throw invalid_input("attribute index out of range");
        b.alpha[attribute] += delta;
    }
    return out;
}

std::vector<std::size_t> CorrelationResult::positive() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rho.size(); ++i)
        if (rho[i] && *rho[i] > 0.0) out.push_back(i);
    return out;
}

std::vector<std::size_t> CorrelationResult::top(std::size_t n) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < rho.size(); ++i)
        if (rho[i]) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return *rho[a] > *rho[b]; });
    if (idx.size() > n) idx.resize(n);
    return idx;
}

std::optional<double> CorrelationResult::mean(std::span<const std::size_t> attributes) const {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i : attributes) {
        if (i < rho.size() && rho[i]) {
            sum += *rho[i];
            ++count;
        }
    }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
}

CorrelationResult attribute_correlation(const PredictionPipeline& f, std::span<const ConditioningBundle> batch,
                                        std::span<const std::string> names) {
    const std::size_t k = check_batch(batch, names, 30);
    const nn::Matrix pred = run(f, batch, k);
    CorrelationResult r;
    r.rho.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        r.rho[i] = pearson(alpha_column(batch, i), column(pred, i));
        if (!r.rho[i]) r.warnings.push_back("correlation undefined for '" + names[i] + "': zero variance");
    }
    return r;
}

OodResult ood_correlation_sweep(const PredictionPipeline& f, std::span<const ConditioningBundle> batch,
                                std::span<const std::size_t> positive, std::span<const std::string> names) {
    const std::size_t k = check_batch(batch, names, 30);
    if (positive.empty())
        throw Error(ErrorKind::EmptySet,
                    "no attribute has a positive correlation; run the attribute correlation test first");
    for (std::size_t i : positive)
        if (i >= k) throw invalid_input("attribute index out of range");

    OodResult r;
    for (int l = 0; l < kOodSteps; ++l) {
        OodPoint p;
        p.delta = delta_l(l);
        double sum = 0.0;
        for (std::size_t i : positive) {
            const auto moved = increment_attribute(batch, i, p.delta);
            const nn::Matrix pred = run(f, moved, k);
            const auto rho = pearson(alpha_column(moved, i), column(pred, i));
            if (!rho) {
                r.warnings.push_back("correlation undefined for '" + names[i] + "' at delta " + fmt_delta(p.delta) +
                                     ": zero variance");
                continue;
            }
            sum += *rho;
            ++p.attributes;
        }
        if (p.attributes > 0) p.mean_rho = sum / static_cast<double>(p.attributes);
        r.curve.push_back(p);
    }
    return r;
}

IncrementResult increment_consistency(const PredictionPipeline& f, std::span<const ConditioningBundle> batch,
                                      std::span<const std::size_t> attributes, std::span<const std::string> names) {
    const std::size_t k = check_batch(batch, names, 2);
    if (attributes.empty()) throw Error(ErrorKind::EmptySet, "no attributes selected for the increment test");
    const nn::Matrix base = run(f, batch, k);

    IncrementResult r;
    std::vector<double> scale;
    for (std::size_t i : attributes) {
        if (i >= k) throw invalid_input("attribute index out of range");
        const double s = population_std(column(base, i));
        if (s <= 0.0) {
            r.warnings.push_back("increment test skips '" + names[i] + "': zero prediction std");
            continue;
        }
        r.attributes.push_back(i);
        scale.push_back(s);
    }
    if (r.attributes.empty()) throw Error(ErrorKind::EmptySet, "every selected attribute has zero prediction std");

    const double denom = static_cast<double>(r.attributes.size()) * static_cast<double>(batch.size());
    for (int step = 0; step < kIncrementSteps; ++step) {
        IncrementPoint p;
        p.delta = delta_k(step);
        double sum = 0.0;
        for (std::size_t a = 0; a < r.attributes.size(); ++a) {
            const std::size_t i = r.attributes[a];
            const nn::Matrix pred = run(f, increment_attribute(batch, i, p.delta), k);
            const auto c = static_cast<Eigen::Index>(i);
            sum += (pred.col(c) - base.col(c)).sum() / scale[a];
        }
        p.mean_change = sum / denom;
        r.curve.push_back(p);
    }
    return r;
}

void ConsistencyConfig::validate() const {
    if (correlation_samples < 30) throw invalid_input("correlation_samples must be >= 30");
    if (run_ood && ood_samples < 30) throw invalid_input("ood_samples must be >= 30");
    if (run_increment && increment_samples < 2) throw invalid_input("increment_samples must be >= 2");
    if (run_increment && increment_attributes == 0) throw invalid_input("increment_attributes must be >= 1");
}

void to_json(nlohmann::json& j, const ConsistencyConfig& c) {
    j = {{"correlation_samples", c.correlation_samples},
         {"ood_samples", c.ood_samples},
         {"increment_samples", c.increment_samples},
         {"increment_attributes", c.increment_attributes},
         {"run_ood", c.run_ood},
         {"run_increment", c.run_increment},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ConsistencyConfig& c) {
    c = ConsistencyConfig{};
    if (j.contains("correlation_samples")) j.at("correlation_samples").get_to(c.correlation_samples);
    if (j.contains("ood_samples")) j.at("ood_samples").get_to(c.ood_samples);
    if (j.contains("increment_samples")) j.at("increment_samples").get_to(c.increment_samples);
    if (j.contains("increment_attributes")) j.at("increment_attributes").get_to(c.increment_attributes);
    if (j.contains("run_ood")) j.at("run_ood").get_to(c.run_ood);
    if (j.contains("run_increment")) j.at("run_increment").get_to(c.run_increment);
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
}

nlohmann::json ConsistencyReport::to_json() const {
    nlohmann::json rho = nlohmann::json::object();
    nlohmann::json missing = nlohmann::json::array();
    for (std::size_t i = 0; i < attribute_names.size() && i < correlation.rho.size(); ++i) {
        rho[attribute_names[i]] = optional_json(correlation.rho[i]);
        if (!correlation.rho[i]) missing.push_back(attribute_names[i]);
    }
    nlohmann::json ood = nlohmann::json::array();
    for (const auto& p : ood_curve)
        ood.push_back({{"delta", p.delta}, {"mean_rho", optional_json(p.mean_rho)}, {"attributes", p.attributes}});
    nlohmann::json inc = nlohmann::json::array();
    for (const auto& p : increment.curve) inc.push_back({{"delta", p.delta}, {"mean_change", p.mean_change}});
    nlohmann::json inc_names = nlohmann::json::array();
    for (std::size_t i : increment.attributes) inc_names.push_back(attribute_names.at(i));
    nlohmann::json positive = nlohmann::json::array();
    for (std::size_t i : correlation.positive()) positive.push_back(attribute_names.at(i));

    return {{"attribute_names", attribute_names},
            {"rho", rho},
            {"missing", missing},
            {"positive_set", positive},
            {"mean_rho", optional_json(correlation.mean(correlation.top(attribute_names.size())))},
            {"ood_curve", ood},
            {"increment_curve", inc},
            {"increment_attributes", inc_names},
            {"n_samples",
             {{"correlation", config.correlation_samples},
              {"ood", config.run_ood ? config.ood_samples : 0},
              {"increment", config.run_increment ? config.increment_samples : 0}}},
            {"seed", config.seed},
            {"split", to_string(split)},
            {"config", config},
            {"warnings", warnings}};
}

ConsistencyReport run_consistency(const PredictionPipeline& f, const EvalSource& src, const GanArchitecture& arch,
                                  std::span<const std::string> names, const ConsistencyConfig& cfg) {
    cfg.validate();
    ConsistencyReport r;
    r.attribute_names.assign(names.begin(), names.end());
    r.config = cfg;
    r.split = src.split;

    std::mt19937_64 seeds(cfg.seed);
    const std::uint64_t s1 = seeds(), s2 = seeds(), s3 = seeds();

    std::mt19937_64 rng(s1);
    const auto batch1 = sample_conditioning(src, arch, cfg.correlation_samples, rng);
    r.correlation = attribute_correlation(f, batch1, names);
    r.warnings = r.correlation.warnings;

    if (cfg.run_ood) {
        rng.seed(s2);
        const auto batch2 = sample_conditioning(src, arch, cfg.ood_samples, rng);
        auto ood = ood_correlation_sweep(f, batch2, r.correlation.positive(), names);
        r.ood_curve = std::move(ood.curve);
        r.warnings.insert(r.warnings.end(), ood.warnings.begin(), ood.warnings.end());
    }
    if (cfg.run_increment) {
        rng.seed(s3);
        const auto batch3 = sample_conditioning(src, arch, cfg.increment_samples, rng);
        const auto top = r.correlation.top(std::min(cfg.increment_attributes, names.size()));
        r.increment = increment_consistency(f, batch3, top, names);
        r.warnings.insert(r.warnings.end(), r.increment.warnings.begin(), r.increment.warnings.end());
    }
    return r;
}

}  // namespace darksynth
