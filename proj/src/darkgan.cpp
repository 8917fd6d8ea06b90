#include "darksynth/darkgan.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "darksynth/error.hpp"
#include "darksynth/wav.hpp"

namespace darksynth {

namespace {

void fill_condition(const GanArchitecture& a, const ConditioningBundle& c, float* row) {
    std::size_t k = 0;
    for (double v : c.alpha) row[k++] = static_cast<float>(v);
    for (double v : c.z) row[k++] = static_cast<float>(v);
    for (double v : c.pitch) row[k++] = static_cast<float>(v);
    (void)a;
}

MagIFTensor to_tensor(const nn::Tensor<float>& t, int i, const SpectralConfig& cfg) {
    MagIFTensor out = MagIFTensor::filled(cfg, 0.0f, 0.0f);
    const std::size_t plane = out.frames * out.bins;
    const float* src = t.sample(i);
    std::copy(src, src + plane, out.mag.begin());
    std::copy(src + plane, src + 2 * plane, out.ifreq.begin());
    return out;
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.5;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

GanArchitecture architecture_for(const TrainingSet& s, const TrainConfig& cfg) {
    GanArchitecture a;
    a.num_attributes = static_cast<int>(s.attribute_names.size());
    a.num_pitches = s.pitch_range.count;
    a.feature_maps = cfg.feature_maps;
    a.width_divisor = cfg.width_divisor;
    a.frames = s.frames;
    a.bins = s.bins;
    a.seed_bins = std::max(1, s.bins >> (static_cast<int>(cfg.feature_maps.size()) - 1));
    a.validate();
    return a;
}

}  // namespace

ConditioningBundle ConditioningBundle::make(std::vector<double> alpha, int pitch_index, int num_pitches,
                                            std::mt19937_64& rng, int latent_dim) {
    if (pitch_index < 0 || pitch_index >= num_pitches) {
        throw invalid_input("pitch index " + std::to_string(pitch_index) + " outside [0, " + std::to_string(num_pitches) + ")");
    }
    ConditioningBundle c;
    c.alpha = std::move(alpha);
    c.pitch.assign(static_cast<std::size_t>(num_pitches), 0.0);
    c.pitch[static_cast<std::size_t>(pitch_index)] = 1.0;
    std::normal_distribution<double> n01(0.0, 1.0);
    c.z.resize(static_cast<std::size_t>(latent_dim));
    for (double& v : c.z) v = n01(rng);
    return c;
}

std::vector<std::size_t> ConditioningBundle::validate(const GanArchitecture& arch) const {
    if (alpha.size() != static_cast<std::size_t>(arch.num_attributes)) {
        throw invalid_input("conditioning has " + std::to_string(alpha.size()) + " attributes, model expects " +
                            std::to_string(arch.num_attributes));
    }
    if (pitch.size() != static_cast<std::size_t>(arch.num_pitches)) {
        throw invalid_input("pitch vector has " + std::to_string(pitch.size()) + " entries, model expects " +
                            std::to_string(arch.num_pitches));
    }
    if (z.size() != static_cast<std::size_t>(arch.latent_dim)) {
        throw invalid_input("latent vector has " + std::to_string(z.size()) + " entries, model expects " +
                            std::to_string(arch.latent_dim));
    }
    int ones = 0;
    for (double v : pitch) {
        if (v == 1.0) ++ones;
        else if (v != 0.0) throw invalid_input("pitch vector must be one-hot");
    }
    if (ones != 1) throw invalid_input("pitch vector must be one-hot");
    std::vector<std::size_t> above;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        if (!std::isfinite(alpha[i])) throw invalid_input("attribute value " + std::to_string(i) + " is not finite");
        if (alpha[i] > 1.0) above.push_back(i);
    }
    for (double v : z) {
        if (!std::isfinite(v)) throw invalid_input("latent vector is not finite");
    }
    return above;
}

std::vector<MagIFTensor> generate(const GeneratorModel& g, std::span<const ConditioningBundle> batch) {
    const auto& a = g.arch();
    const int n = static_cast<int>(batch.size());
    std::vector<float> cond(static_cast<std::size_t>(n) * a.input_channels());
    for (int i = 0; i < n; ++i) {
        batch[static_cast<std::size_t>(i)].validate(a);
        fill_condition(a, batch[static_cast<std::size_t>(i)], cond.data() + static_cast<std::size_t>(i) * a.input_channels());
    }
    nn::Tensor<float> out;
    g.net.forward(cond.data(), n, out);
    std::vector<MagIFTensor> result;
    for (int i = 0; i < n; ++i) result.push_back(to_tensor(out, i, g.spectral));
    return result;
}

MagIFTensor generate(const GeneratorModel& g, const ConditioningBundle& c) {
    return generate(g, std::span<const ConditioningBundle>(&c, 1)).front();
}

CriticOutput criticize(const Critic<float>& d, const MagIFTensor& x) {
    const auto& a = d.arch();
    if (x.frames != static_cast<std::size_t>(a.frames) || x.bins != static_cast<std::size_t>(a.bins)) {
        throw invalid_input("critic input is " + std::to_string(x.frames) + "x" + std::to_string(x.bins) + ", expected " +
                            std::to_string(a.frames) + "x" + std::to_string(a.bins));
    }
    nn::Tensor<float> t(1, 2, a.frames, a.bins);
    std::copy(x.mag.begin(), x.mag.end(), t.data.begin());
    std::copy(x.ifreq.begin(), x.ifreq.end(), t.data.begin() + static_cast<long>(x.mag.size()));
    const auto out = d.forward(t);
    CriticOutput r;
    r.score = out(0, 0);
    for (int k = 0; k < a.num_attributes; ++k) r.attribute_logits.push_back(out(0, 1 + k));
    for (int p = 0; p < a.num_pitches; ++p) r.pitch_logits.push_back(out(0, 1 + a.num_attributes + p));
    return r;
}

MagIFTensor TrainingSet::tensor(std::size_t i) const {
    MagIFTensor t = MagIFTensor::filled(spectral, 0.0f, 0.0f);
    const float* src = data.data() + i * tensor_size();
    const std::size_t plane = t.mag.size();
    std::copy(src, src + plane, t.mag.begin());
    std::copy(src + plane, src + 2 * plane, t.ifreq.begin());
    return t;
}

TrainingSet make_training_set(const DatasetReader& reader, const SoftLabelSet& labels,
                              const std::vector<std::string>& attributes, Split split) {
    const auto& m = reader.manifest();
    TrainingSet s;
    s.attribute_names = attributes;
    s.spectral = m.spectral_config;
    s.pitch_range = m.pitch_range;
    s.frames = static_cast<int>(m.spectral_config.frames());
    s.bins = static_cast<int>(m.spectral_config.bins());

    std::vector<std::size_t> columns;
    for (const auto& name : attributes) {
        const auto it = std::find(labels.attribute_names.begin(), labels.attribute_names.end(), name);
        if (it == labels.attribute_names.end()) throw validation_error("soft labels have no attribute '" + name + "'");
        columns.push_back(static_cast<std::size_t>(it - labels.attribute_names.begin()));
    }
    std::unordered_map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < labels.clip_ids.size(); ++i) row_of.emplace(labels.clip_ids[i], i);
    if (labels.temperature != 1.0 && !attributes.empty()) {
        throw validation_error("conditioning labels must be stored at T = 1");
    }

    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        const auto& e = m.entries[i];
        if (e.split != split) continue;
        std::vector<double> alpha;
        if (!attributes.empty()) {
            const auto it = row_of.find(e.clip_id);
            if (it == row_of.end()) throw validation_error("no soft labels for clip " + e.clip_id);
            for (auto c : columns) alpha.push_back(labels.values[it->second][c]);
        }
        const Waveform w = [&] {
            const auto path = m.root / e.wav_path;
            if (!std::filesystem::exists(path)) throw io_error("missing audio for clip " + e.clip_id + ": " + path.string());
            return read_wav(path);
        }();
        const auto t = analyze(w, m.spectral_config);
        s.data.insert(s.data.end(), t.mag.begin(), t.mag.end());
        s.data.insert(s.data.end(), t.ifreq.begin(), t.ifreq.end());
        s.alphas.push_back(std::move(alpha));
        s.pitch_index.push_back(m.pitch_range.index_of(e.pitch_midi));
        s.waveshapes.push_back(e.spec.timbre.waveshape);
        s.clip_ids.push_back(e.clip_id);
    }
    return s;
}

void TrainConfig::validate() const {
    if (!(temperature > 0.0)) throw invalid_input("temperature must be > 0");
    if (!(gp_weight >= 0.0)) throw invalid_input("gp_weight must be >= 0");
    if (!(distill_weight >= 0.0) || !(pitch_weight >= 0.0)) throw invalid_input("loss weights must be >= 0");
    if (batch_size < 1) throw invalid_input("batch_size must be >= 1");
    if (steps < 0) throw invalid_input("steps must be >= 0");
    if (critic_steps < 1) throw invalid_input("critic_steps must be >= 1");
    if (!(optimizer.lr > 0.0)) throw invalid_input("learning rate must be > 0");
    if (width_divisor < 1) throw invalid_input("width_divisor must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"temperature", c.temperature},
         {"gp_weight", c.gp_weight},
         {"distill_weight", c.distill_weight},
         {"pitch_weight", c.pitch_weight},
         {"batch_size", c.batch_size},
         {"steps", c.steps},
         {"critic_steps", c.critic_steps},
         {"learning_rate", c.optimizer.lr},
         {"beta1", c.optimizer.beta1},
         {"beta2", c.optimizer.beta2},
         {"seed", c.seed},
         {"feature_maps", c.feature_maps},
         {"width_divisor", c.width_divisor}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    if (j.contains("temperature")) j.at("temperature").get_to(c.temperature);
    if (j.contains("gp_weight")) j.at("gp_weight").get_to(c.gp_weight);
    if (j.contains("distill_weight")) j.at("distill_weight").get_to(c.distill_weight);
    if (j.contains("pitch_weight")) j.at("pitch_weight").get_to(c.pitch_weight);
    if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
    if (j.contains("steps")) j.at("steps").get_to(c.steps);
    if (j.contains("critic_steps")) j.at("critic_steps").get_to(c.critic_steps);
    if (j.contains("learning_rate")) j.at("learning_rate").get_to(c.optimizer.lr);
    if (j.contains("beta1")) j.at("beta1").get_to(c.optimizer.beta1);
    if (j.contains("beta2")) j.at("beta2").get_to(c.optimizer.beta2);
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    if (j.contains("feature_maps")) j.at("feature_maps").get_to(c.feature_maps);
    if (j.contains("width_divisor")) j.at("width_divisor").get_to(c.width_divisor);
}

double TrainLog::wasserstein_spread(double from_fraction, double to_fraction) const {
    const auto n = steps.size();
    const auto lo = static_cast<std::size_t>(std::floor(from_fraction * static_cast<double>(n)));
    const auto hi = std::max(lo + 1, static_cast<std::size_t>(std::ceil(to_fraction * static_cast<double>(n))));
    if (n == 0 || lo >= n) return 0.0;
    double mn = steps[lo].wasserstein, mx = mn;
    for (std::size_t i = lo; i < std::min(hi, n); ++i) {
        mn = std::min(mn, steps[i].wasserstein);
        mx = std::max(mx, steps[i].wasserstein);
    }
    return mx - mn;
}

nlohmann::json TrainLog::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : steps) {
        arr.push_back({{"step", s.step},
                       {"critic_loss", s.critic_loss},
                       {"generator_loss", s.generator_loss},
                       {"wasserstein", s.wasserstein},
                       {"gradient_penalty", s.gradient_penalty},
                       {"critic_distill", s.critic_distill},
                       {"critic_pitch", s.critic_pitch},
                       {"generator_distill", s.generator_distill},
                       {"generator_pitch", s.generator_pitch}});
    }
    return {{"seconds", seconds}, {"steps", arr}};
}

GeneratorModel initial_generator(const TrainingSet& train_set, const TrainingSet* val, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.size() == 0) throw invalid_input("training set is empty");
    GeneratorModel g;
    const auto arch = architecture_for(train_set, cfg);
    std::mt19937_64 seeder(cfg.seed);
    g.net = Generator<float>(arch, seeder());
    g.spectral = train_set.spectral;
    g.pitch_range = train_set.pitch_range;
    g.attribute_names = train_set.attribute_names;
    g.trained_temperature = cfg.temperature;
    g.train_config = cfg;
    const TrainingSet& source = (val && val->size() > 0) ? *val : train_set;
    for (std::size_t k = 0; k < train_set.attribute_names.size(); ++k) {
        std::vector<double> col;
        for (const auto& a : source.alphas) col.push_back(a[k]);
        g.defaults.push_back(median(col));
        AttributeRange r{1.0, 0.0};
        for (const auto& a : train_set.alphas) {
            r.low = std::min(r.low, a[k]);
            r.high = std::max(r.high, a[k]);
        }
        g.observed_ranges.push_back(r);
    }
    return g;
}

TrainResult train(const TrainingSet& ts, const TrainingSet* val, const TrainConfig& cfg, const TrainProgress& progress,
                  int snapshot_every, const TrainSnapshot& snapshot) {
    const auto start = std::chrono::steady_clock::now();
    TrainResult r{initial_generator(ts, val, cfg), {}, {}};
    auto& G = r.generator.net;
    const auto arch = G.arch();
    std::mt19937_64 rng(cfg.seed);
    rng();  // the generator's init seed
    r.critic = Critic<float>(arch, rng());
    auto& D = r.critic;

    const int B = cfg.batch_size;
    const int K = arch.num_attributes;
    const int C = arch.input_channels();
    const LossWeights weights{cfg.temperature, cfg.gp_weight, cfg.distill_weight, cfg.pitch_weight};

    std::vector<std::vector<double>> tempered(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        for (double a : ts.alphas[i]) {
            tempered[i].push_back(std::clamp(retemper(a, 1.0, cfg.temperature), 1e-7, 1.0 - 1e-7));
        }
    }

    nn::Adam<float> opt_g(G.params(), cfg.optimizer);
    nn::Adam<float> opt_d(D.params(), cfg.optimizer);
    std::uniform_int_distribution<std::size_t> pick(0, ts.size() - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);

    nn::Tensor<float> real(B, 2, arch.frames, arch.bins), fake;
    std::vector<float> cond(static_cast<std::size_t>(B) * C);
    std::vector<double> eps(static_cast<std::size_t>(B));
    HeadTargets real_t, fake_t;

    auto sample_fake = [&] {
        std::fill(cond.begin(), cond.end(), 0.0f);
        fake_t.attributes.clear();
        fake_t.pitch.clear();
        for (int i = 0; i < B; ++i) {
            const std::size_t j = pick(rng);
            float* row = cond.data() + static_cast<std::size_t>(i) * C;
            for (int k = 0; k < K; ++k) row[k] = static_cast<float>(ts.alphas[j][static_cast<std::size_t>(k)]);
            for (int z = 0; z < arch.latent_dim; ++z) row[K + z] = static_cast<float>(n01(rng));
            row[K + arch.latent_dim + ts.pitch_index[j]] = 1.0f;
            fake_t.attributes.push_back(tempered[j]);
            fake_t.pitch.push_back(ts.pitch_index[j]);
        }
    };

    auto diverged = [&](const char* which, const TrainStep& s) {
        std::ostringstream msg;
        msg << "training diverged at step " << s.step << ": non-finite " << which << " loss (critic=" << s.critic_loss
            << ", generator=" << s.generator_loss << ", wasserstein=" << s.wasserstein << ", gp=" << s.gradient_penalty
            << ")";
        return Error(ErrorKind::Divergence, msg.str());
    };

    for (int step = 0; step < cfg.steps; ++step) {
        TrainStep log;
        log.step = step;
        for (int cs = 0; cs < cfg.critic_steps; ++cs) {
            real_t.attributes.clear();
            real_t.pitch.clear();
            for (int i = 0; i < B; ++i) {
                const std::size_t j = pick(rng);
                const float* src = ts.data.data() + j * ts.tensor_size();
                std::copy(src, src + ts.tensor_size(), real.sample(i));
                real_t.attributes.push_back(tempered[j]);
                real_t.pitch.push_back(ts.pitch_index[j]);
            }
            sample_fake();
            G.forward(cond.data(), B, fake);
            for (double& e : eps) e = unit(rng);

            D.zero_grad();
            const auto terms = critic_objective(D, real, real_t, fake, fake_t, eps, weights, true);
            log.wasserstein = terms.wasserstein;
            log.gradient_penalty = terms.gradient_penalty;
            log.critic_distill = terms.distill;
            log.critic_pitch = terms.pitch;
            log.critic_loss = terms.total;
            if (!std::isfinite(log.critic_loss)) throw diverged("critic", log);
            opt_d.step();
        }

        sample_fake();
        G.zero_grad();
        const auto terms = generator_objective(G, D, cond, fake_t, weights, true, fake);
        log.generator_distill = terms.distill;
        log.generator_pitch = terms.pitch;
        log.generator_loss = terms.total;
        if (!std::isfinite(log.generator_loss)) throw diverged("generator", log);
        opt_g.step();

        r.log.steps.push_back(log);
        if (progress) progress(log);
        if (snapshot && snapshot_every > 0 && (step + 1) % snapshot_every == 0 && step + 1 < cfg.steps)
            snapshot(step + 1, r.generator);
    }
    r.log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

}  // namespace darksynth
