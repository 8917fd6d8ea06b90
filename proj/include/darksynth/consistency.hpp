#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "darksynth/darkgan.hpp"
#include "darksynth/evalkit.hpp"
#include "darksynth/teacher.hpp"

namespace darksynth {

/// Maps generator conditioning to per-attribute predictions F, one row per
/// bundle and one column per conditioned attribute.
using PredictionPipeline = std::function<nn::Matrix(std::span<const ConditioningBundle>)>;

/// G -> audio -> re-analysis -> teacher probabilities at T = 1, with teacher
/// columns matched to the model's attributes by name.
PredictionPipeline teacher_pipeline(const GeneratorModel& g, const TeacherModel& teacher);

/// Pearson correlation; empty when either side has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

/// 10^(-3 + 3.6 l / 50) for l in [0, 50].
double delta_l(int l);
/// k / 5 for k in [0, 25].
double delta_k(int k);

inline constexpr int kOodSteps = 51;
inline constexpr int kIncrementSteps = 26;

/// Copies of the bundles with alpha[attribute] raised by delta. Nothing else changes.
std::vector<ConditioningBundle> increment_attribute(std::span<const ConditioningBundle> batch, std::size_t attribute,
                                                    double delta);

struct CorrelationResult {
    std::vector<std::optional<double>> rho;  // per attribute, empty when undefined
    std::vector<std::string> warnings;

    /// Attributes with rho > 0.
    std::vector<std::size_t> positive() const;
    /// Up to n attributes by descending rho, ties by index; undefined ones skipped.
    std::vector<std::size_t> top(std::size_t n) const;
    /// Mean over the given attributes that have a value; empty if none do.
    std::optional<double> mean(std::span<const std::size_t> attributes) const;
};

CorrelationResult attribute_correlation(const PredictionPipeline& f, std::span<const ConditioningBundle> batch,
                                        std::span<const std::string> names);

struct OodPoint {
    double delta = 0.0;
    std::optional<double> mean_rho;
    std::size_t attributes = 0;  // members of S with a defined correlation at this delta
};

struct OodResult {
    std::vector<OodPoint> curve;
    std::vector<std::string> warnings;
};

/// For every l and every i in `positive`, raises attribute i by delta_l across
/// the batch and correlates F^i with the raised column; averages over i.
/// alpha is never clipped.
OodResult ood_correlation_sweep(const PredictionPipeline& f, std::span<const ConditioningBundle> batch,
                                std::span<const std::size_t> positive, std::span<const std::string> names);

struct IncrementPoint {
    double delta = 0.0;
    double mean_change = 0.0;  // in standard deviations of the unmodified predictions
};

struct IncrementResult {
    std::vector<IncrementPoint> curve;
    std::vector<std::size_t> attributes;  // those actually averaged over
    std::vector<std::string> warnings;
};

/// Mean over attributes i and bundles j of (F^i(alpha_j + delta_k e_i) - F^i(alpha_j)) / std_i,
/// std_i being the population std of F^i over the unmodified batch.
IncrementResult increment_consistency(const PredictionPipeline& f, std::span<const ConditioningBundle> batch,
                                      std::span<const std::size_t> attributes, std::span<const std::string> names);

struct ConsistencyConfig {
    std::size_t correlation_samples = 1000;
    std::size_t ood_samples = 200;
    std::size_t increment_samples = 50;
    std::size_t increment_attributes = 50;
    bool run_ood = true;
    bool run_increment = true;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const ConsistencyConfig& c);
void from_json(const nlohmann::json& j, ConsistencyConfig& c);

struct ConsistencyReport {
    std::vector<std::string> attribute_names;
    CorrelationResult correlation;
    std::vector<OodPoint> ood_curve;
    IncrementResult increment;
    ConsistencyConfig config;
    Split split = Split::Val;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

/// Runs the three procedures with conditioning drawn from src. Each test
/// draws its own batch from a seed derived from config.seed.
ConsistencyReport run_consistency(const PredictionPipeline& f, const EvalSource& src, const GanArchitecture& arch,
                                  std::span<const std::string> names, const ConsistencyConfig& cfg);

}  // namespace darksynth
