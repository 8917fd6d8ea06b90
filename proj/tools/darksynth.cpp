// darksynth: dataset -> teacher -> labels -> ranking -> GAN -> evaluation.
// Stages talk only through files under the artifact home.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "darksynth/consistency.hpp"
#include "darksynth/error.hpp"
#include "darksynth/experiment.hpp"
#include "darksynth/io.hpp"
#include "darksynth/service.hpp"
#include "darksynth/wav.hpp"

using namespace darksynth;
namespace fs = std::filesystem;

namespace {

/// JSON config files for CLI11. Nested objects address subcommands:
/// {"seed": 1, "gan": {"train": {"steps": 500}}}. Flags given on the command
/// line win over the file.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App* app, bool defaults, bool, std::string) const override {
        return dump(app, defaults).dump();
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
        std::vector<CLI::ConfigItem> items;
        flatten(j, {}, items);
        return items;
    }

    static nlohmann::json dump(const CLI::App* app, bool defaults) {
        nlohmann::json j = nlohmann::json::object();
        for (const CLI::Option* o : app->get_options()) {
            if (o->get_lnames().empty() || !o->get_configurable()) continue;
            const std::string name = o->get_lnames().front();
            if (name == "help" || name == "config") continue;
            if (o->count() > 0) {
                const auto& r = o->results();
                j[name] = r.size() == 1 ? nlohmann::json(r.front()) : nlohmann::json(r);
            } else if (defaults && !o->get_default_str().empty()) {
                j[name] = o->get_default_str();
            }
        }
        for (const CLI::App* sub : app->get_subcommands()) j[sub->get_name()] = dump(sub, defaults);
        return j;
    }

private:
    static std::string scalar(const nlohmann::json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        return v.dump();
    }

    static void flatten(const nlohmann::json& j, const std::vector<std::string>& parents,
                        std::vector<CLI::ConfigItem>& out) {
        for (const auto& [key, v] : j.items()) {
            if (v.is_object()) {
                auto p = parents;
                p.push_back(key);
                flatten(v, p, out);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (v.is_array())
                for (const auto& e : v) item.inputs.push_back(scalar(e));
            else
                item.inputs.push_back(scalar(v));
            out.push_back(std::move(item));
        }
    }
};

struct Globals {
    std::string home;
    bool quiet = false;
};

fs::path home_dir(const Globals& g) {
    if (!g.home.empty()) return g.home;
    if (const char* env = std::getenv("DARKSYNTH_HOME"); env && *env) return env;
    return "darksynth-home";
}

std::string or_default(const std::string& value, const fs::path& fallback) {
    return value.empty() ? fallback.string() : value;
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw io_error(what + " not found: " + path);
}

Split parse_split(const std::string& s) {
    if (s == "tr" || s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    throw validation_error("split must be tr or val, got '" + s + "'");
}

std::vector<double> parse_temperatures(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const double t = std::stod(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            if (!(t > 0.0)) throw validation_error("temperatures must be > 0, got " + item);
            out.push_back(t);
        } catch (const std::logic_error&) {
            throw validation_error("cannot parse temperature '" + item + "'");
        }
    }
    if (out.empty()) throw validation_error("no temperatures given");
    return out;
}

std::map<std::string, double> parse_assignments(const std::vector<std::string>& items) {
    std::map<std::string, double> out;
    for (const auto& s : items) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw validation_error("expected name=value, got '" + s + "'");
        try {
            std::size_t used = 0;
            const auto value = s.substr(eq + 1);
            out[s.substr(0, eq)] = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
        } catch (const std::logic_error&) {
            throw validation_error("cannot parse value in '" + s + "'");
        }
    }
    return out;
}

/// Header names of an external label CSV, clip_id column excluded.
std::vector<std::string> csv_attribute_names(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path.string());
    std::string header;
    std::getline(in, header);
    if (!header.empty() && header.back() == '\r') header.pop_back();
    std::vector<std::string> names;
    std::stringstream ss(header);
    std::string cell;
    bool first = true;
    while (std::getline(ss, cell, ',')) {
        if (first) {
            first = false;
            continue;
        }
        names.push_back(cell);
    }
    return names;
}

DatasetReader open_dataset(const std::string& manifest) {
    require_file(manifest, "manifest");
    return DatasetReader(load_manifest(manifest), 0);
}

void emit(const nlohmann::json& j) { std::cout << j.dump() << std::endl; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-distilled conditional audio synthesis on a toy instrument set", "darksynth"};
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON file with option values; command-line flags take precedence");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--home", g.home, "Artifact root (default: $DARKSYNTH_HOME, else ./darksynth-home)");
    app.add_flag("-q,--quiet", g.quiet, "No progress output on stderr");
    auto log = [&](const std::string& m) {
        if (!g.quiet) std::cerr << m << std::endl;
    };

    // dataset build
    auto* dataset = app.add_subcommand("dataset", "Toy dataset")->require_subcommand(1);
    auto* ds_build = dataset->add_subcommand("build", "Render clips and write the manifest");
    BuildConfig bc;
    std::string ds_out;
    ds_build->add_option("--n-clips", bc.n_clips, "Number of clips")->capture_default_str();
    ds_build->add_option("--seed", bc.seed, "Random seed")->capture_default_str();
    ds_build->add_option("--out", ds_out, "Output directory (default: <home>/dataset)");
    ds_build->add_option("--pitch-low", bc.pitch_range.low, "Lowest MIDI pitch")->capture_default_str();
    ds_build->add_option("--pitch-count", bc.pitch_range.count, "Number of pitch classes")->capture_default_str();

    // teacher train|label|rank
    auto* teacher = app.add_subcommand("teacher", "Toy tagging teacher")->require_subcommand(1);
    auto* t_train = teacher->add_subcommand("train", "Train the tagger on ground-truth attributes");
    TeacherConfig tcfg;
    std::string t_manifest, t_out;
    t_train->add_option("--manifest", t_manifest, "Dataset manifest (default: <home>/dataset/manifest.json)");
    t_train->add_option("--out", t_out, "Teacher file (default: <home>/teacher.json)");
    t_train->add_option("--epochs", tcfg.epochs)->capture_default_str();
    t_train->add_option("--seed", tcfg.seed)->capture_default_str();
    t_train->add_option("--hidden", tcfg.hidden, "Hidden layer widths")->capture_default_str();
    t_train->add_flag("--shuffle-labels", tcfg.shuffle_labels, "Sanity control: permute targets across clips");

    auto* t_label = teacher->add_subcommand("label", "Write soft labels for every clip");
    std::string l_teacher, l_manifest, l_out, l_import;
    double l_temperature = 1.0;
    t_label->add_option("--teacher", l_teacher, "Teacher file (default: <home>/teacher.json)");
    t_label->add_option("--manifest", l_manifest, "Dataset manifest (default: <home>/dataset/manifest.json)");
    t_label->add_option("--temperature", l_temperature, "Tagging temperature")->capture_default_str();
    t_label->add_option("--import", l_import, "Ingest externally produced labels from this CSV instead of tagging");
    t_label->add_option("--out", l_out, "Soft-label file (default: <home>/labels.jsonl)");

    auto* t_rank = teacher->add_subcommand("rank", "Rank attributes by sqrt(p90 * accuracy)");
    std::string r_labels, r_teacher, r_out;
    std::size_t r_top = 128;
    bool r_uniform = false;
    t_rank->add_option("--labels", r_labels, "Soft labels at T = 1 (default: <home>/labels.jsonl)");
    t_rank->add_option("--teacher", r_teacher, "Teacher providing accuracies (default: <home>/teacher.json)");
    t_rank->add_flag("--uniform-accuracy", r_uniform, "Use accuracy 1 for every attribute (external labels)");
    t_rank->add_option("--top-k", r_top, "Attributes to select")->capture_default_str();
    t_rank->add_option("--out", r_out, "Ranking file (default: <home>/ranking.json)");

    // gan train|generate
    auto* gan = app.add_subcommand("gan", "Conditional generator")->require_subcommand(1);
    auto* g_train = gan->add_subcommand("train", "Train the generator with attribute distillation");
    TrainConfig gcfg;
    std::string gt_manifest, gt_labels, gt_ranking, gt_out;
    std::size_t gt_attributes = 128;
    bool gt_baseline = false;
    int gt_every = 100;
    g_train->add_option("--manifest", gt_manifest, "Dataset manifest (default: <home>/dataset/manifest.json)");
    g_train->add_option("--labels", gt_labels, "Soft labels at T = 1 (default: <home>/labels.jsonl)");
    g_train->add_option("--ranking", gt_ranking, "Attribute ranking (default: <home>/ranking.json)");
    g_train->add_option("--attributes", gt_attributes, "Conditioned attributes, top of the ranking")->capture_default_str();
    g_train->add_flag("--baseline", gt_baseline, "Pitch-only conditioning, no distillation");
    g_train->add_option("--temperature", gcfg.temperature, "Distillation temperature")->capture_default_str();
    g_train->add_option("--steps", gcfg.steps)->capture_default_str();
    g_train->add_option("--batch-size", gcfg.batch_size)->capture_default_str();
    g_train->add_option("--critic-steps", gcfg.critic_steps)->capture_default_str();
    g_train->add_option("--lr", gcfg.optimizer.lr)->capture_default_str();
    g_train->add_option("--gp-weight", gcfg.gp_weight)->capture_default_str();
    g_train->add_option("--distill-weight", gcfg.distill_weight)->capture_default_str();
    g_train->add_option("--pitch-weight", gcfg.pitch_weight)->capture_default_str();
    g_train->add_option("--width-divisor", gcfg.width_divisor, "Divides the feature-map schedule")->capture_default_str();
    g_train->add_option("--seed", gcfg.seed)->capture_default_str();
    g_train->add_option("--log-every", gt_every, "Progress interval in steps")->capture_default_str();
    g_train->add_option("--out", gt_out, "Checkpoint (default: <home>/gan/checkpoint.bin)");

    auto* g_gen = gan->add_subcommand("generate", "Render one note to WAV");
    std::string gg_ckpt, gg_out;
    int gg_pitch = 69;
    std::uint64_t gg_seed = 0;
    std::vector<std::string> gg_attrs;
    g_gen->add_option("--checkpoint", gg_ckpt, "Checkpoint (default: <home>/gan/checkpoint.bin)");
    g_gen->add_option("--pitch", gg_pitch, "MIDI pitch")->capture_default_str();
    g_gen->add_option("--seed", gg_seed, "Latent seed")->capture_default_str();
    g_gen->add_option("--attr", gg_attrs, "name=value; unnamed attributes take the validation median");
    g_gen->add_option("--out", gg_out, "WAV path (default: <home>/generated/p<pitch>_s<seed>.wav)");

    // eval metrics|consistency
    auto* eval = app.add_subcommand("eval", "Evaluation")->require_subcommand(1);
    auto* e_metrics = eval->add_subcommand("metrics", "PIS, IIS, KID and FAD");
    std::string em_ckpt, em_manifest, em_labels, em_clf, em_out, em_split = "val";
    std::size_t em_n = 256;
    std::uint64_t em_seed = 0;
    e_metrics->add_option("--checkpoint", em_ckpt, "Checkpoint (default: <home>/gan/checkpoint.bin)");
    e_metrics->add_option("--manifest", em_manifest, "Dataset manifest (default: <home>/dataset/manifest.json)");
    e_metrics->add_option("--labels", em_labels, "Soft labels at T = 1 (default: <home>/labels.jsonl)");
    e_metrics->add_option("--classifier", em_clf, "Embedding classifier; trained and saved here when missing "
                                                  "(default: <home>/classifier.json)");
    e_metrics->add_option("--split", em_split, "tr or val")->capture_default_str();
    e_metrics->add_option("--n", em_n, "Generated samples")->capture_default_str();
    e_metrics->add_option("--seed", em_seed)->capture_default_str();
    e_metrics->add_option("--out", em_out, "Report (default: <home>/reports/metrics_<split>.json)");

    auto* e_cons = eval->add_subcommand("consistency", "Attribute correlation, OOD sweep and increment consistency");
    std::string ec_ckpt, ec_teacher, ec_manifest, ec_labels, ec_out, ec_split = "val";
    ConsistencyConfig ccfg;
    bool ec_skip_ood = false, ec_skip_inc = false;
    e_cons->add_option("--checkpoint", ec_ckpt, "Checkpoint (default: <home>/gan/checkpoint.bin)");
    e_cons->add_option("--teacher", ec_teacher, "Teacher (default: <home>/teacher.json)");
    e_cons->add_option("--manifest", ec_manifest, "Dataset manifest (default: <home>/dataset/manifest.json)");
    e_cons->add_option("--labels", ec_labels, "Soft labels at T = 1 (default: <home>/labels.jsonl)");
    e_cons->add_option("--split", ec_split, "tr or val")->capture_default_str();
    e_cons->add_option("--n-correlation", ccfg.correlation_samples)->capture_default_str();
    e_cons->add_option("--n-ood", ccfg.ood_samples, "Samples per sweep step")->capture_default_str();
    e_cons->add_option("--n-increment", ccfg.increment_samples)->capture_default_str();
    e_cons->add_option("--top", ccfg.increment_attributes, "Attributes in the increment test")->capture_default_str();
    e_cons->add_flag("--skip-ood", ec_skip_ood);
    e_cons->add_flag("--skip-increment", ec_skip_inc);
    e_cons->add_option("--seed", ccfg.seed)->capture_default_str();
    e_cons->add_option("--out", ec_out, "Report (default: <home>/reports/consistency_<split>.json)");

    // experiment grid
    auto* experiment = app.add_subcommand("experiment", "Experiments")->require_subcommand(1);
    auto* x_grid = experiment->add_subcommand("grid", "Train and evaluate one model per temperature plus the baseline");
    GridConfig xcfg;
    std::string x_manifest, x_labels, x_ranking, x_out, x_temps = "1,1.5,2,3,5";
    bool x_no_baseline = false, x_no_real = false;
    x_grid->add_option("--manifest", x_manifest, "Dataset manifest (default: <home>/dataset/manifest.json)");
    x_grid->add_option("--labels", x_labels, "Soft labels at T = 1 (default: <home>/labels.jsonl)");
    x_grid->add_option("--ranking", x_ranking, "Attribute ranking (default: <home>/ranking.json)");
    x_grid->add_option("--temps", x_temps, "Comma-separated temperatures")->capture_default_str();
    x_grid->add_flag("--no-baseline", x_no_baseline, "Skip the pitch-only baseline");
    x_grid->add_flag("--no-real", x_no_real, "Skip the real-data reference row");
    x_grid->add_option("--steps", xcfg.train.steps)->capture_default_str();
    x_grid->add_option("--batch-size", xcfg.train.batch_size)->capture_default_str();
    x_grid->add_option("--width-divisor", xcfg.train.width_divisor)->capture_default_str();
    x_grid->add_option("--seed", xcfg.train.seed)->capture_default_str();
    x_grid->add_option("--attributes", xcfg.attributes)->capture_default_str();
    x_grid->add_option("--eval-samples", xcfg.eval_samples)->capture_default_str();
    x_grid->add_option("--eval-seed", xcfg.eval_seed)->capture_default_str();
    x_grid->add_option("--out", x_out, "Output directory (default: <home>/grid)");

    // serve
    auto* serve = app.add_subcommand("serve", "HTTP generation service");
    ServiceConfig scfg;
    std::string s_ckpt, s_ranking;
    int s_timeout_ms = 10000;
    serve->add_option("--checkpoint", s_ckpt, "Checkpoint (default: <home>/gan/checkpoint.bin)");
    serve->add_option("--ranking", s_ranking, "Ranking whose scores /attributes reports (optional)");
    serve->add_option("--host", scfg.host)->capture_default_str();
    serve->add_option("--port", scfg.port)->capture_default_str();
    serve->add_option("--workers", scfg.workers, "Generation threads")->capture_default_str();
    serve->add_option("--queue", scfg.queue_capacity, "Pending generations before 503")->capture_default_str();
    serve->add_option("--timeout-ms", s_timeout_ms, "Per-request generation timeout")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << nlohmann::json{{"error", "usage"}, {"message", e.what()}}.dump() << std::endl;
        return 2;
    }

    const nlohmann::json run_config = JsonConfig::dump(&app, true);

    try {
        const fs::path home = home_dir(g);
        const std::string default_manifest = (home / "dataset" / "manifest.json").string();
        const std::string default_teacher = (home / "teacher.json").string();
        const std::string default_labels = (home / "labels.jsonl").string();
        const std::string default_ranking = (home / "ranking.json").string();
        const std::string default_ckpt = (home / "gan" / "checkpoint.bin").string();

        if (ds_build->parsed()) {
            bc.out_dir = or_default(ds_out, home / "dataset");
            if (bc.n_clips < bc.pitch_range.count)
                throw validation_error("n-clips must be at least the number of pitch classes");
            log("building " + std::to_string(bc.n_clips) + " clips in " + bc.out_dir.string());
            const auto m = build_dataset(bc);
            emit({{"manifest", (bc.out_dir / "manifest.json").string()},
                  {"clips", m.entries.size()},
                  {"train", m.split(Split::Train).size()},
                  {"val", m.split(Split::Val).size()}});
        } else if (t_train->parsed()) {
            const auto reader = open_dataset(or_default(t_manifest, default_manifest));
            log("training teacher");
            const auto model = train_toy_teacher(reader, tcfg);
            const auto out = or_default(t_out, default_teacher);
            fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path());
            save_teacher(model, out);
            emit({{"teacher", out}, {"mean_auc", model.mean_auc()}, {"attributes", model.num_attributes()}});
        } else if (t_label->parsed()) {
            const auto manifest_path = or_default(l_manifest, default_manifest);
            const auto out = or_default(l_out, default_labels);
            SoftLabelSet labels;
            if (!l_import.empty()) {
                require_file(l_import, "label CSV");
                require_file(manifest_path, "manifest");
                const auto m = load_manifest(manifest_path);
                std::vector<std::string> ids;
                for (const auto& e : m.entries) ids.push_back(e.clip_id);
                labels = import_external_labels(l_import, csv_attribute_names(l_import), &ids);
            } else {
                const auto teacher_path = or_default(l_teacher, default_teacher);
                require_file(teacher_path, "teacher");
                const auto model = load_teacher(teacher_path);
                const auto reader = open_dataset(manifest_path);
                log("labelling " + std::to_string(reader.size()) + " clips");
                labels = label_dataset(model, reader, l_temperature);
            }
            fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path());
            save_soft_labels(labels, out);
            emit({{"labels", out}, {"clips", labels.size()}, {"T", labels.temperature}});
        } else if (t_rank->parsed()) {
            const auto labels_path = or_default(r_labels, default_labels);
            require_file(labels_path, "labels");
            const auto labels = load_soft_labels(labels_path);
            if (labels.temperature != 1.0) throw validation_error("ranking needs labels computed at T = 1");
            std::vector<double> acc(labels.attribute_names.size(), 1.0);
            if (!r_uniform) {
                const auto teacher_path = or_default(r_teacher, default_teacher);
                require_file(teacher_path, "teacher");
                const auto model = load_teacher(teacher_path);
                for (std::size_t i = 0; i < labels.attribute_names.size(); ++i) {
                    const auto it = std::find(model.attribute_names.begin(), model.attribute_names.end(),
                                              labels.attribute_names[i]);
                    if (it == model.attribute_names.end())
                        throw validation_error("teacher has no accuracy for '" + labels.attribute_names[i] + "'");
                    acc[i] = model.per_attribute_accuracy[static_cast<std::size_t>(it - model.attribute_names.begin())];
                }
            }
            const auto ranking = rank_attributes(labels, acc, r_top);
            const auto out = or_default(r_out, default_ranking);
            auto j = ranking.to_json();
            j["run_config"] = run_config;
            write_json_atomic(out, j);
            emit({{"ranking", out}, {"selected", ranking.selected_top_k}, {"first", ranking.ranked.front().name}});
        } else if (g_train->parsed()) {
            gcfg.validate();
            const auto reader = open_dataset(or_default(gt_manifest, default_manifest));
            const auto labels_path = or_default(gt_labels, default_labels);
            require_file(labels_path, "labels");
            const auto labels = load_soft_labels(labels_path);
            std::vector<std::string> names;
            if (!gt_baseline) {
                const auto ranking_path = or_default(gt_ranking, default_ranking);
                require_file(ranking_path, "ranking");
                names = selected_attributes(AttributeRanking::from_json(read_json(ranking_path)), gt_attributes);
            }
            log("analyzing clips");
            const auto ts = make_training_set(reader, labels, names, Split::Train);
            const auto vs = make_training_set(reader, labels, names, Split::Val);
            log("training " + std::to_string(gcfg.steps) + " steps, K=" + std::to_string(names.size()) +
                ", T=" + std::to_string(gcfg.temperature));
            const auto result = train(ts, &vs, gcfg, [&](const TrainStep& s) {
                if (gt_every > 0 && (s.step + 1) % gt_every == 0)
                    log(nlohmann::json{{"step", s.step + 1}, {"W", s.wasserstein}, {"critic", s.critic_loss},
                                       {"generator", s.generator_loss}}
                            .dump());
            });
            const fs::path out = or_default(gt_out, default_ckpt);
            fs::create_directories(out.parent_path().empty() ? "." : out.parent_path());
            save_checkpoint(result.generator, out);
            auto log_json = result.log.to_json();
            log_json["run_config"] = run_config;
            const auto log_path = out.parent_path() / (out.stem().string() + "_train_log.json");
            write_json_atomic(log_path, log_json);
            emit({{"checkpoint", out.string()}, {"train_log", log_path.string()}, {"seconds", result.log.seconds}});
        } else if (g_gen->parsed()) {
            const auto ckpt = or_default(gg_ckpt, default_ckpt);
            require_file(ckpt, "checkpoint");
            const auto model = load_checkpoint(ckpt);
            if (!model.pitch_range.contains(gg_pitch))
                throw validation_error("pitch " + std::to_string(gg_pitch) + " is outside the model range " +
                                       std::to_string(model.pitch_range.low) + ".." +
                                       std::to_string(model.pitch_range.high()));
            const auto attrs = parse_assignments(gg_attrs);
            for (const auto& [name, v] : attrs) {
                if (std::find(model.attribute_names.begin(), model.attribute_names.end(), name) == model.attribute_names.end())
                    throw validation_error("unknown attribute '" + name + "'");
                if (!(v >= 0.0 && v <= kMaxAttributeValue))
                    throw validation_error("attribute '" + name + "' must be in [0, 4]");
            }
            const fs::path out = or_default(gg_out, home / "generated" /
                                                        ("p" + std::to_string(gg_pitch) + "_s" + std::to_string(gg_seed) + ".wav"));
            fs::create_directories(out.parent_path().empty() ? "." : out.parent_path());
            write_wav(out, render(model, conditioning_for(model, gg_pitch, attrs, gg_seed)));
            emit({{"wav", out.string()}, {"pitch", gg_pitch}, {"seed", gg_seed}});
        } else if (e_metrics->parsed()) {
            const Split split = parse_split(em_split);
            const auto ckpt = or_default(em_ckpt, default_ckpt);
            require_file(ckpt, "checkpoint");
            const auto model = load_checkpoint(ckpt);
            const auto reader = open_dataset(or_default(em_manifest, default_manifest));
            const auto labels_path = or_default(em_labels, default_labels);
            require_file(labels_path, "labels");
            const auto labels = load_soft_labels(labels_path);
            log("describing clips");
            const auto features = compute_features(reader);
            const auto clf_path = or_default(em_clf, home / "classifier.json");
            EmbeddingClassifier clf;
            if (fs::exists(clf_path)) {
                clf = load_classifier(clf_path);
            } else {
                log("training embedding classifier");
                clf = train_embedding_classifier(reader.manifest(), features, {}, &labels);
                fs::create_directories(fs::path(clf_path).parent_path().empty() ? "." : fs::path(clf_path).parent_path());
                save_classifier(clf, clf_path);
            }
            const auto src = make_eval_source(reader.manifest(), features, labels, model.attribute_names, split);
            log("evaluating " + std::to_string(em_n) + " samples");
            auto report = evaluate_model(model, clf, src, em_n, em_seed).to_json();
            report["run_config"] = run_config;
            const fs::path out = or_default(em_out, home / "reports" / ("metrics_" + em_split + ".json"));
            fs::create_directories(out.parent_path().empty() ? "." : out.parent_path());
            write_json_atomic(out, report);
            emit({{"report", out.string()}, {"pis", report["pis"]}, {"iis", report["iis"]}, {"kid", report["kid"]},
                  {"fad", report["fad"]}});
        } else if (e_cons->parsed()) {
            const Split split = parse_split(ec_split);
            ccfg.run_ood = !ec_skip_ood;
            ccfg.run_increment = !ec_skip_inc;
            ccfg.validate();
            const auto ckpt = or_default(ec_ckpt, default_ckpt);
            require_file(ckpt, "checkpoint");
            const auto model = load_checkpoint(ckpt);
            const auto teacher_path = or_default(ec_teacher, default_teacher);
            require_file(teacher_path, "teacher");
            const auto tm = load_teacher(teacher_path);
            const auto reader = open_dataset(or_default(ec_manifest, default_manifest));
            const auto labels_path = or_default(ec_labels, default_labels);
            require_file(labels_path, "labels");
            const auto labels = load_soft_labels(labels_path);
            const auto features = compute_features(reader);
            const auto src = make_eval_source(reader.manifest(), features, labels, model.attribute_names, split);
            log("running consistency tests");
            const auto report = run_consistency(teacher_pipeline(model, tm), src, model.arch(), model.attribute_names, ccfg);
            for (const auto& w : report.warnings) log("warning: " + w);
            auto j = report.to_json();
            j["run_config"] = run_config;
            const fs::path out = or_default(ec_out, home / "reports" / ("consistency_" + ec_split + ".json"));
            fs::create_directories(out.parent_path().empty() ? "." : out.parent_path());
            write_json_atomic(out, j);
            emit({{"report", out.string()}, {"mean_rho", j["mean_rho"]}, {"positive", j["positive_set"].size()}});
        } else if (x_grid->parsed()) {
            xcfg.temperatures = parse_temperatures(x_temps);
            xcfg.baseline = !x_no_baseline;
            xcfg.real_row = !x_no_real;
            xcfg.validate();
            const auto reader = open_dataset(or_default(x_manifest, default_manifest));
            const auto labels_path = or_default(x_labels, default_labels);
            require_file(labels_path, "labels");
            const auto labels = load_soft_labels(labels_path);
            const auto ranking_path = or_default(x_ranking, default_ranking);
            require_file(ranking_path, "ranking");
            const auto ranking = AttributeRanking::from_json(read_json(ranking_path));
            log("describing clips");
            const auto features = compute_features(reader);
            const fs::path out = or_default(x_out, home / "grid");
            const auto report = run_grid(reader, features, labels, ranking, xcfg, out, log);
            auto j = report.to_json();
            j["run_config"] = run_config;
            write_json_atomic(out / "report.json", j);
            std::cerr << report.table();
            emit({{"report", (out / "report.json").string()}, {"table", (out / "table.md").string()},
                  {"rows", report.rows.size()}, {"all_finite", report.all_finite()}});
        } else if (serve->parsed()) {
            if (s_timeout_ms <= 0) throw validation_error("timeout-ms must be positive");
            if (scfg.workers < 1) throw validation_error("workers must be >= 1");
            if (scfg.queue_capacity < 1) throw validation_error("queue must be >= 1");
            scfg.request_timeout = std::chrono::milliseconds(s_timeout_ms);
            const auto ckpt = or_default(s_ckpt, default_ckpt);
            require_file(ckpt, "checkpoint");
            auto model = load_checkpoint(ckpt);
            std::vector<double> scores;
            if (!s_ranking.empty()) {
                require_file(s_ranking, "ranking");
                const auto ranking = AttributeRanking::from_json(read_json(s_ranking));
                for (const auto& name : model.attribute_names) {
                    const auto it = std::find_if(ranking.ranked.begin(), ranking.ranked.end(),
                                                 [&](const RankedAttribute& r) { return r.name == name; });
                    scores.push_back(it == ranking.ranked.end() ? 0.0 : it->score);
                }
            }
            SynthService service(scfg);
            service.load(ServedModel::make(std::move(model), std::move(scores)));
            log("serving on " + scfg.host + ":" + std::to_string(scfg.port));
            service.run();
        }
    } catch (const Error& e) {
        std::cerr << nlohmann::json{{"error", std::string(to_string(e.kind()))}, {"message", e.what()}}.dump() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << std::endl;
        return 1;
    }
    return 0;
}
