#include "darksynth/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "darksynth/error.hpp"
#include "darksynth/io.hpp"

namespace darksynth {

std::vector<std::string> selected_attributes(const AttributeRanking& ranking, std::size_t k) {
    std::vector<std::string> out;
    k = std::min(k, ranking.selected_top_k);
    for (std::size_t i = 0; i < ranking.ranked.size() && i < k; ++i) out.push_back(ranking.ranked[i].name);
    return out;
}

MetricReport evaluate_real(const EmbeddingClassifier& clf, const EvalSource& src, std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(src.descriptors.rows());
    if (n < 4) throw invalid_input("real-data row needs at least 4 clips");
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t half = n / 2;
    nn::Matrix a(static_cast<Eigen::Index>(half), src.descriptors.cols());
    nn::Matrix b(static_cast<Eigen::Index>(n - half), src.descriptors.cols());
    for (std::size_t i = 0; i < n; ++i) {
        if (i < half) a.row(static_cast<Eigen::Index>(i)) = src.descriptors.row(order[i]);
        else b.row(static_cast<Eigen::Index>(i - half)) = src.descriptors.row(order[i]);
    }
    MetricReport r;
    r.n_samples = n;
    r.split = src.split;
    r.pis = inception_score(clf.pitch_probabilities(src.descriptors));
    r.iis = inception_score(clf.waveshape_probabilities(src.descriptors));
    const EmbeddingSet ea{clf.embed(a), "real", clf.version()};
    const EmbeddingSet eb{clf.embed(b), "real", clf.version()};
    const auto k = kid(ea, eb, 100, seed);
    r.kid = k.value;
    r.kid_stderr = k.standard_error;
    r.fad = fad(ea, eb);
    r.config = {{"n", n}, {"seed", seed}, {"split", to_string(src.split)}, {"classifier_version", clf.version()},
                {"reference", "split halves"}};
    return r;
}

void GridConfig::validate() const {
    if (temperatures.empty() && !baseline) throw invalid_input("the grid has no models to train");
    for (double t : temperatures)
        if (!(t > 0.0)) throw invalid_input("temperatures must be > 0");
    if (eval_samples < 64) throw invalid_input("eval_samples must be >= 64");
    if (attributes == 0) throw invalid_input("attributes must be >= 1");
    train.validate();
}

void to_json(nlohmann::json& j, const GridConfig& c) {
    j = {{"temperatures", c.temperatures},
         {"baseline", c.baseline},
         {"real_row", c.real_row},
         {"train", c.train},
         {"attributes", c.attributes},
         {"eval_samples", c.eval_samples},
         {"eval_seed", c.eval_seed},
         {"classifier", {{"epochs", c.classifier.epochs}, {"seed", c.classifier.seed}}}};
}

void from_json(const nlohmann::json& j, GridConfig& c) {
    c = GridConfig{};
    if (j.contains("temperatures")) j.at("temperatures").get_to(c.temperatures);
    if (j.contains("baseline")) j.at("baseline").get_to(c.baseline);
    if (j.contains("real_row")) j.at("real_row").get_to(c.real_row);
    if (j.contains("train")) j.at("train").get_to(c.train);
    if (j.contains("attributes")) j.at("attributes").get_to(c.attributes);
    if (j.contains("eval_samples")) j.at("eval_samples").get_to(c.eval_samples);
    if (j.contains("eval_seed")) j.at("eval_seed").get_to(c.eval_seed);
    if (j.contains("classifier")) {
        const auto& k = j.at("classifier");
        if (k.contains("epochs")) k.at("epochs").get_to(c.classifier.epochs);
        if (k.contains("seed")) k.at("seed").get_to(c.classifier.seed);
    }
}

namespace {

bool finite(const MetricReport& m) {
    return std::isfinite(m.pis) && std::isfinite(m.iis) && std::isfinite(m.kid) && std::isfinite(m.fad);
}

std::string cell_name(std::optional<double> t) {
    if (!t) return "baseline";
    char buf[32];
    std::snprintf(buf, sizeof buf, "T%g", *t);
    return buf;
}

std::string num(double v, int precision) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

TrainingSet without_attributes(TrainingSet s) {
    s.attribute_names.clear();
    for (auto& a : s.alphas) a.clear();
    return s;
}

}  // namespace

bool GridReport::all_finite() const {
    return std::all_of(rows.begin(), rows.end(), [](const GridRow& r) { return finite(r.tr) && finite(r.val); });
}

nlohmann::json GridReport::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
        arr.push_back({{"model", r.model},
                       {"temperature", r.temperature ? nlohmann::json(*r.temperature) : nlohmann::json(nullptr)},
                       {"tr", r.tr.to_json()},
                       {"val", r.val.to_json()},
                       {"train_seconds", r.train_seconds},
                       {"checkpoint", r.checkpoint}});
    }
    return {{"rows", arr}, {"config", config}, {"all_finite", all_finite()}};
}

std::string GridReport::table() const {
    std::ostringstream s;
    s << "| Model | PIS tr | PIS val | IIS tr | IIS val | KID tr | KID val | FAD tr | FAD val |\n";
    s << "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        s << "| " << r.model << " | " << num(r.tr.pis, 2) << " | " << num(r.val.pis, 2) << " | " << num(r.tr.iis, 2)
          << " | " << num(r.val.iis, 2) << " | " << num(r.tr.kid, 3) << " | " << num(r.val.kid, 3) << " | "
          << num(r.tr.fad, 2) << " | " << num(r.val.fad, 2) << " |\n";
    }
    return s.str();
}

GridReport run_grid(const DatasetReader& reader, const FeatureTable& features, const SoftLabelSet& labels,
                    const AttributeRanking& ranking, const GridConfig& cfg, const std::filesystem::path& out_dir,
                    const GridLog& log) {
    cfg.validate();
    auto say = [&](const std::string& m) {
        if (log) log(m);
    };
    const auto& manifest = reader.manifest();
    const auto names = selected_attributes(ranking, cfg.attributes);
    std::filesystem::create_directories(out_dir);

    GridReport report;
    report.config = cfg;
    report.config["attribute_names"] = names;

    say("training evaluation classifier");
    const auto clf = train_embedding_classifier(manifest, features, cfg.classifier, &labels);
    save_classifier(clf, out_dir / "classifier.json");

    const auto src_tr = make_eval_source(manifest, features, labels, names, Split::Train);
    const auto src_val = make_eval_source(manifest, features, labels, names, Split::Val);

    if (cfg.real_row) {
        GridRow row;
        row.model = "real data";
        row.tr = evaluate_real(clf, src_tr, cfg.eval_seed);
        row.val = evaluate_real(clf, src_val, cfg.eval_seed);
        report.rows.push_back(std::move(row));
    }

    say("analyzing training clips");
    const TrainingSet train_set = make_training_set(reader, labels, names, Split::Train);
    const TrainingSet val_set = make_training_set(reader, labels, names, Split::Val);

    std::vector<std::optional<double>> cells;
    if (cfg.baseline) cells.push_back(std::nullopt);
    for (double t : cfg.temperatures) cells.push_back(t);

    for (const auto& t : cells) {
        const std::string cell = cell_name(t);
        const auto dir = out_dir / cell;
        std::filesystem::create_directories(dir);
        TrainConfig tc = cfg.train;
        tc.temperature = t.value_or(1.0);

        const TrainingSet* ts = &train_set;
        const TrainingSet* vs = &val_set;
        TrainingSet base_train, base_val;
        if (!t) {
            base_train = without_attributes(train_set);
            base_val = without_attributes(val_set);
            ts = &base_train;
            vs = &base_val;
        }

        GridRow row;
        row.model = t ? "DarkGAN T=" + num(*t, 1) : "baseline";
        row.temperature = t;
        row.checkpoint = cell + "/checkpoint.bin";

        std::optional<GeneratorModel> g;
        const auto ckpt = dir / "checkpoint.bin";
        if (std::filesystem::exists(ckpt)) {
            auto existing = load_checkpoint(ckpt);
            if (existing.train_config == nlohmann::json(tc) && existing.attribute_names == ts->attribute_names) {
                say(cell + ": reusing checkpoint");
                g = std::move(existing);
                if (std::filesystem::exists(dir / "train_log.json"))
                    row.train_seconds = read_json(dir / "train_log.json").value("seconds", 0.0);
            }
        }
        if (!g) {
            say(cell + ": training " + std::to_string(tc.steps) + " steps");
            auto result = train(*ts, vs, tc);
            row.train_seconds = result.log.seconds;
            save_checkpoint(result.generator, ckpt);
            write_json_atomic(dir / "train_log.json", result.log.to_json());
            g = std::move(result.generator);
        }

        say(cell + ": evaluating");
        const auto tr_src = t ? src_tr : make_eval_source(manifest, features, labels, {}, Split::Train);
        const auto val_src = t ? src_val : make_eval_source(manifest, features, labels, {}, Split::Val);
        row.tr = evaluate_model(*g, clf, tr_src, cfg.eval_samples, cfg.eval_seed);
        row.val = evaluate_model(*g, clf, val_src, cfg.eval_samples, cfg.eval_seed);
        write_json_atomic(dir / "metrics.json", {{"tr", row.tr.to_json()}, {"val", row.val.to_json()}});
        report.rows.push_back(std::move(row));
    }

    write_json_atomic(out_dir / "report.json", report.to_json());
    write_file_atomic(out_dir / "table.md", report.table());
    return report;
}

}  // namespace darksynth
