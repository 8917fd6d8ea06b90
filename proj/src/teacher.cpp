#include "darksynth/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "darksynth/descriptors.hpp"
#include "darksynth/error.hpp"
#include "darksynth/io.hpp"

namespace darksynth {

namespace {

// Soft labels are kept strictly inside (0, 1) so their log terms stay finite.
constexpr double kProbEps = 1e-7;

double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

void require_temperature(double t) {
    if (!(t > 0.0) || !std::isfinite(t)) {
        throw invalid_input("temperature must be > 0, got " + std::to_string(t));
    }
}

std::string join(const std::vector<std::string>& items, std::size_t limit = 20) {
    std::string out;
    for (std::size_t i = 0; i < items.size() && i < limit; ++i) {
        if (i) out += ", ";
        out += items[i];
    }
    if (items.size() > limit) out += ", ... (" + std::to_string(items.size()) + " total)";
    return out;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    return out;
}

}  // namespace

double tempered_sigmoid(double z, double temperature) {
    require_temperature(temperature);
    const double x = z / temperature;
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::vector<double> tempered_sigmoid(std::span<const double> logits, double temperature) {
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = tempered_sigmoid(logits[i], temperature);
    return out;
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

double retemper(double p, double from, double to) {
    require_temperature(from);
    require_temperature(to);
    return tempered_sigmoid(logit(p) * from, to);
}

std::optional<std::size_t> SoftLabelSet::index_of(const std::string& clip_id) const {
    for (std::size_t i = 0; i < clip_ids.size(); ++i) {
        if (clip_ids[i] == clip_id) return i;
    }
    return std::nullopt;
}

const std::vector<double>& SoftLabelSet::at(const std::string& clip_id) const {
    const auto i = index_of(clip_id);
    if (!i) throw validation_error("no soft labels for clip " + clip_id);
    return values[*i];
}

SoftLabelSet SoftLabelSet::retempered(double to) const {
    SoftLabelSet out = *this;
    out.temperature = to;
    for (auto& row : out.values) {
        for (double& v : row) v = clamp_prob(retemper(v, temperature, to));
    }
    return out;
}

void save_soft_labels(const SoftLabelSet& s, const std::filesystem::path& path) {
    std::string text;
    for (std::size_t i = 0; i < s.size(); ++i) {
        nlohmann::json labels = nlohmann::json::object();
        for (std::size_t a = 0; a < s.attribute_names.size(); ++a) labels[s.attribute_names[a]] = s.values[i][a];
        // Attribute order is not recoverable from a JSON object, so the first
        // record also carries it.
        nlohmann::json rec = {{"clip_id", s.clip_ids[i]}, {"T", s.temperature}, {"labels", labels}};
        if (i == 0) rec["attribute_order"] = s.attribute_names;
        text += rec.dump() + "\n";
    }
    write_file_atomic(path, text);
}

SoftLabelSet load_soft_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open soft-label file " + path.string());
    SoftLabelSet s;
    std::string line;
    std::size_t lineno = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw validation_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!rec.contains("clip_id") || !rec.contains("T") || !rec.contains("labels")) {
            throw validation_error(path.string() + ":" + std::to_string(lineno) + ": record needs clip_id, T and labels");
        }
        const auto& labels = rec.at("labels");
        if (first) {
            s.temperature = rec.at("T").get<double>();
            if (rec.contains("attribute_order")) {
                s.attribute_names = rec.at("attribute_order").get<std::vector<std::string>>();
            } else {
                for (const auto& [k, _] : labels.items()) s.attribute_names.push_back(k);
            }
            first = false;
        } else if (rec.at("T").get<double>() != s.temperature) {
            throw validation_error(path.string() + ":" + std::to_string(lineno) + ": mixed temperatures in one file");
        }
        std::vector<double> row;
        for (const auto& name : s.attribute_names) {
            if (!labels.contains(name)) {
                throw validation_error(path.string() + ":" + std::to_string(lineno) + ": missing label '" + name + "'");
            }
            row.push_back(labels.at(name).get<double>());
        }
        s.clip_ids.push_back(rec.at("clip_id").get<std::string>());
        s.values.push_back(std::move(row));
    }
    return s;
}

SoftLabelSet import_external_labels(const std::filesystem::path& path,
                                    const std::vector<std::string>& attribute_names,
                                    const std::vector<std::string>* expected_clip_ids) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open external label file " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw validation_error("external label file is empty: " + path.string());
    const auto header = split_csv(line);
    if (header.empty() || header[0] != "clip_id") {
        throw validation_error("schema mismatch: first column must be clip_id");
    }
    std::vector<std::string> missing_cols;
    std::vector<std::size_t> col_of(attribute_names.size());
    for (std::size_t a = 0; a < attribute_names.size(); ++a) {
        const auto it = std::find(header.begin() + 1, header.end(), attribute_names[a]);
        if (it == header.end()) missing_cols.push_back(attribute_names[a]);
        else col_of[a] = static_cast<std::size_t>(it - header.begin());
    }
    std::vector<std::string> unknown_cols;
    for (std::size_t c = 1; c < header.size(); ++c) {
        if (std::find(attribute_names.begin(), attribute_names.end(), header[c]) == attribute_names.end()) {
            unknown_cols.push_back(header[c]);
        }
    }
    if (!missing_cols.empty() || !unknown_cols.empty()) {
        std::string msg = "schema mismatch:";
        if (!missing_cols.empty()) msg += " missing columns [" + join(missing_cols) + "]";
        if (!unknown_cols.empty()) msg += " unknown columns [" + join(unknown_cols) + "]";
        throw validation_error(msg);
    }

    SoftLabelSet s;
    s.temperature = 1.0;
    s.attribute_names = attribute_names;
    std::vector<std::string> bad_values;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size()) {
            throw validation_error("schema mismatch: line " + std::to_string(lineno) + " has " +
                                   std::to_string(cells.size()) + " cells, header has " + std::to_string(header.size()));
        }
        std::vector<double> row(attribute_names.size());
        for (std::size_t a = 0; a < attribute_names.size(); ++a) {
            const auto& cell = cells[col_of[a]];
            double v = std::numeric_limits<double>::quiet_NaN();
            try {
                std::size_t used = 0;
                v = std::stod(cell, &used);
                if (used != cell.size()) v = std::numeric_limits<double>::quiet_NaN();
            } catch (const std::exception&) {
            }
            if (!(v > 0.0 && v < 1.0)) bad_values.push_back(cells[0] + "/" + attribute_names[a] + "=" + cell);
            row[a] = v;
        }
        s.clip_ids.push_back(cells[0]);
        s.values.push_back(std::move(row));
    }
    if (!bad_values.empty()) {
        throw validation_error("probabilities outside (0, 1): " + join(bad_values));
    }
    if (expected_clip_ids) {
        const std::set<std::string> have(s.clip_ids.begin(), s.clip_ids.end());
        std::vector<std::string> missing;
        for (const auto& id : *expected_clip_ids) {
            if (!have.contains(id)) missing.push_back(id);
        }
        const std::set<std::string> want(expected_clip_ids->begin(), expected_clip_ids->end());
        std::vector<std::string> extra;
        for (const auto& id : s.clip_ids) {
            if (!want.contains(id)) extra.push_back(id);
        }
        if (!missing.empty()) throw validation_error("missing clip_ids: " + join(missing));
        if (!extra.empty()) throw validation_error("unknown clip_ids: " + join(extra));
        if (s.size() != expected_clip_ids->size()) {
            throw validation_error("row count " + std::to_string(s.size()) + " != dataset size " +
                                   std::to_string(expected_clip_ids->size()) + " (duplicate clip_ids?)");
        }
    }
    return s;
}

double TeacherModel::mean_auc() const {
    double sum = 0.0;
    int n = 0;
    for (double a : per_attribute_auc) {
        if (std::isfinite(a)) {
            sum += a;
            ++n;
        }
    }
    return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

nn::Matrix TeacherModel::logits_from_descriptors(const nn::Matrix& descriptors) const {
    return net.forward(scaler.apply(descriptors));
}

std::vector<double> TeacherModel::logits(const MagIFTensor& t) const {
    const auto d = audio_descriptors(t, input_spec);
    nn::Matrix x(1, static_cast<Eigen::Index>(d.size()));
    for (std::size_t i = 0; i < d.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = d[i];
    const nn::Matrix z = logits_from_descriptors(x);
    return {z.data(), z.data() + z.size()};
}

nlohmann::json TeacherModel::to_json() const {
    auto nan_to_null = [](const std::vector<double>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (double x : v) a.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json());
        return a;
    };
    return {{"kind", "toy_teacher"},
            {"version", kSchemaVersion},
            {"attribute_names", attribute_names},
            {"per_attribute_accuracy", per_attribute_accuracy},
            {"per_attribute_auc", nan_to_null(per_attribute_auc)},
            {"input_spec", input_spec},
            {"pitch_range", {{"low", pitch_range.low}, {"count", pitch_range.count}}},
            {"scaler", scaler.to_json()},
            {"net", net.to_json()}};
}

TeacherModel TeacherModel::from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<int>() != kSchemaVersion) throw compatibility_error("unsupported teacher version");
        TeacherModel m;
        j.at("attribute_names").get_to(m.attribute_names);
        j.at("per_attribute_accuracy").get_to(m.per_attribute_accuracy);
        for (const auto& a : j.at("per_attribute_auc")) {
            m.per_attribute_auc.push_back(a.is_null() ? std::numeric_limits<double>::quiet_NaN() : a.get<double>());
        }
        m.input_spec = j.at("input_spec").get<SpectralConfig>();
        m.pitch_range = {j.at("pitch_range").at("low").get<int>(), j.at("pitch_range").at("count").get<int>()};
        m.scaler = nn::Standardizer::from_json(j.at("scaler"));
        m.net = nn::Mlp::from_json(j.at("net"));
        if (m.net.output_dim() != static_cast<int>(m.attribute_names.size()) ||
            m.per_attribute_accuracy.size() != m.attribute_names.size()) {
            throw validation_error("teacher output dimensionality does not match its attribute list");
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw validation_error(std::string("malformed teacher file: ") + e.what());
    }
}

void save_teacher(const TeacherModel& m, const std::filesystem::path& path) { write_json_atomic(path, m.to_json()); }

TeacherModel load_teacher(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw io_error("teacher file not found: " + path.string());
    return TeacherModel::from_json(read_json(path));
}

FeatureTable compute_features(const DatasetReader& reader) {
    const auto& m = reader.manifest();
    FeatureTable table;
    table.descriptors.resize(static_cast<Eigen::Index>(m.entries.size()), static_cast<Eigen::Index>(descriptor_size()));
    DatasetReader ordered(m, 0);
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        const auto clip = ordered.at(i);
        const auto d = audio_descriptors(analyze(clip.wave, m.spectral_config), m.spectral_config);
        for (std::size_t c = 0; c < d.size(); ++c) table.descriptors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = d[c];
        table.entries.push_back(&reader.manifest().entries[i]);
    }
    return table;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Mann-Whitney U with average ranks for ties.
    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + j - 1) + 1.0;
        for (std::size_t k = i; k < j; ++k) {
            if (labels[idx[k]]) {
                rank_sum_pos += avg_rank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();
    const double np = static_cast<double>(n_pos);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double balanced_accuracy(std::span<const double> probabilities, std::span<const int> labels) {
    double tp = 0, tn = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool pred = probabilities[i] >= 0.5;
        if (labels[i]) {
            ++pos;
            if (pred) ++tp;
        } else {
            ++neg;
            if (!pred) ++tn;
        }
    }
    if (pos == 0) return tn / neg;
    if (neg == 0) return tp / pos;
    return 0.5 * (tp / pos + tn / neg);
}

TeacherModel train_toy_teacher(const DatasetManifest& manifest, const FeatureTable& features,
                               const TeacherConfig& cfg) {
    const std::size_t K = manifest.attribute_names.size();
    if (K == 0) throw invalid_input("dataset has no ground-truth attributes");
    std::vector<std::size_t> train_rows;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        if (manifest.entries[i].split == Split::Train) train_rows.push_back(i);
        if (manifest.entries[i].ground_truth.size() != K) throw invalid_input("clip missing ground-truth attributes");
    }
    std::mt19937_64 rng(cfg.seed);
    std::shuffle(train_rows.begin(), train_rows.end(), rng);
    const auto n_hold = static_cast<std::size_t>(std::lround(cfg.holdout_fraction * static_cast<double>(train_rows.size())));
    const std::vector<std::size_t> hold(train_rows.begin(), train_rows.begin() + static_cast<long>(n_hold));
    const std::vector<std::size_t> fit(train_rows.begin() + static_cast<long>(n_hold), train_rows.end());
    if (fit.size() < 10 || hold.size() < 10) {
        throw invalid_input("insufficient data for teacher training: " + std::to_string(fit.size()) +
                            " fit / " + std::to_string(hold.size()) + " holdout clips (need >= 10 each)");
    }

    const auto D = features.descriptors.cols();
    auto gather = [&](const std::vector<std::size_t>& rows) {
        nn::Matrix x(static_cast<Eigen::Index>(rows.size()), D);
        for (std::size_t r = 0; r < rows.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = features.descriptors.row(static_cast<Eigen::Index>(rows[r]));
        return x;
    };
    std::vector<std::size_t> target_rows = fit;
    if (cfg.shuffle_labels) std::shuffle(target_rows.begin(), target_rows.end(), rng);
    nn::Matrix y(static_cast<Eigen::Index>(fit.size()), static_cast<Eigen::Index>(K));
    for (std::size_t r = 0; r < fit.size(); ++r) {
        for (std::size_t a = 0; a < K; ++a) y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(a)) = manifest.entries[target_rows[r]].ground_truth[a];
    }

    TeacherModel model;
    model.attribute_names = manifest.attribute_names;
    model.input_spec = manifest.spectral_config;
    model.pitch_range = manifest.pitch_range;
    const nn::Matrix x_raw = gather(fit);
    model.scaler = nn::Standardizer::fit(x_raw);
    const nn::Matrix x = model.scaler.apply(x_raw);

    std::vector<int> widths = {static_cast<int>(D)};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(static_cast<int>(K));
    model.net = nn::Mlp(widths, rng());
    nn::Adam<double> opt(model.net.params(), {.lr = cfg.learning_rate});

    std::vector<std::size_t> order(fit.size());
    std::iota(order.begin(), order.end(), 0);
    nn::Mlp::Trace trace;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const auto n = static_cast<Eigen::Index>(end - start);
            nn::Matrix xb(n, D), yb(n, static_cast<Eigen::Index>(K));
            for (Eigen::Index r = 0; r < n; ++r) {
                xb.row(r) = x.row(static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(r)]));
                yb.row(r) = y.row(static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(r)]));
            }
            const nn::Matrix z = model.net.forward(xb, &trace);
            // Mean binary cross-entropy over clips and attributes.
            const nn::Matrix q = z.unaryExpr([](double v) { return tempered_sigmoid(v, 1.0); });
            const nn::Matrix grad = (q - yb) / static_cast<double>(n * static_cast<Eigen::Index>(K));
            opt.zero_grad();
            model.net.backward(trace, grad);
            opt.step();
        }
    }

    const nn::Matrix z_hold = model.logits_from_descriptors(gather(hold));
    for (std::size_t a = 0; a < K; ++a) {
        std::vector<double> probs(hold.size());
        std::vector<int> labels(hold.size());
        for (std::size_t r = 0; r < hold.size(); ++r) {
            probs[r] = tempered_sigmoid(z_hold(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(a)), 1.0);
            labels[r] = manifest.entries[hold[r]].ground_truth[a] >= 0.5 ? 1 : 0;
        }
        model.per_attribute_auc.push_back(roc_auc(probs, labels));
        model.per_attribute_accuracy.push_back(balanced_accuracy(probs, labels));
    }
    return model;
}

TeacherModel train_toy_teacher(const DatasetReader& reader, const TeacherConfig& cfg) {
    return train_toy_teacher(reader.manifest(), compute_features(reader), cfg);
}

SoftLabelVector tag(const TeacherModel& model, const Waveform& w, double temperature) {
    require_temperature(temperature);
    const auto z = model.logits(analyze(w, model.input_spec));
    SoftLabelVector out;
    out.temperature = temperature;
    out.values = tempered_sigmoid(z, temperature);
    for (double& v : out.values) v = clamp_prob(v);
    return out;
}

SoftLabelSet label_dataset(const TeacherModel& model, const DatasetManifest& manifest,
                           const FeatureTable& features, double temperature) {
    require_temperature(temperature);
    if (!(model.input_spec == manifest.spectral_config)) {
        throw compatibility_error("teacher input spectral config does not match the dataset's");
    }
    SoftLabelSet s;
    s.temperature = temperature;
    s.attribute_names = model.attribute_names;
    const nn::Matrix z = model.logits_from_descriptors(features.descriptors);
    for (std::size_t i = 0; i < features.entries.size(); ++i) {
        s.clip_ids.push_back(features.entries[i]->clip_id);
        std::vector<double> row(model.num_attributes());
        for (std::size_t a = 0; a < row.size(); ++a) {
            row[a] = clamp_prob(tempered_sigmoid(z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)), temperature));
        }
        s.values.push_back(std::move(row));
    }
    return s;
}

SoftLabelSet label_dataset(const TeacherModel& model, const DatasetReader& reader, double temperature) {
    if (!(model.input_spec == reader.manifest().spectral_config)) {
        throw compatibility_error("teacher input spectral config does not match the dataset's");
    }
    return label_dataset(model, reader.manifest(), compute_features(reader), temperature);
}

double percentile_linear(std::vector<double> values, double q) {
    if (values.empty()) throw invalid_input("percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<std::size_t> AttributeRanking::top_indices(std::size_t k) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ranked.size() && i < k; ++i) out.push_back(ranked[i].index);
    return out;
}

nlohmann::json AttributeRanking::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : ranked) {
        arr.push_back({{"index", r.index}, {"name", r.name}, {"p90", r.p90}, {"acc", r.accuracy}, {"score", r.score}});
    }
    return {{"ranked", arr}, {"selected_top_k", selected_top_k}};
}

AttributeRanking AttributeRanking::from_json(const nlohmann::json& j) {
    AttributeRanking r;
    try {
        for (const auto& a : j.at("ranked")) {
            r.ranked.push_back({a.at("index").get<std::size_t>(), a.at("name").get<std::string>(), a.at("p90").get<double>(),
                                a.at("acc").get<double>(), a.at("score").get<double>()});
        }
        r.selected_top_k = j.at("selected_top_k").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw validation_error(std::string("malformed attribute ranking: ") + e.what());
    }
    return r;
}

AttributeRanking rank_attributes(const SoftLabelSet& labels, std::span<const double> accuracies, std::size_t top_k) {
    const std::size_t K = labels.attribute_names.size();
    if (labels.size() == 0 || K == 0) throw invalid_input("cannot rank attributes of an empty label set");
    if (accuracies.size() != K) throw invalid_input("accuracy vector length does not match attribute count");
    AttributeRanking r;
    std::vector<double> product(K);
    for (std::size_t a = 0; a < K; ++a) {
        std::vector<double> column(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) column[i] = labels.values[i][a];
        RankedAttribute ra;
        ra.index = a;
        ra.name = labels.attribute_names[a];
        ra.p90 = percentile_linear(std::move(column), 0.9);
        ra.accuracy = accuracies[a];
        product[a] = ra.p90 * ra.accuracy;
        ra.score = std::sqrt(product[a]);
        r.ranked.push_back(ra);
    }
    // Sorting on the product keeps ties exact where sqrt could merge neighbours.
    std::stable_sort(r.ranked.begin(), r.ranked.end(), [&](const RankedAttribute& x, const RankedAttribute& y) {
        return product[x.index] > product[y.index];
    });
    r.selected_top_k = std::min(top_k, K);
    return r;
}

}  // namespace darksynth
