#include "darksynth/service.hpp"

#include <atomic>
#include <cmath>
#include <random>
#include <sstream>

#include "darksynth/error.hpp"
#include "darksynth/io.hpp"
#include "darksynth/wav.hpp"
#include "httplib.h"

namespace darksynth {

ConditioningBundle conditioning_for(const GeneratorModel& g, int pitch_midi,
                                    const std::map<std::string, double>& attributes, std::uint64_t seed) {
    if (!g.pitch_range.contains(pitch_midi))
        throw invalid_input("pitch " + std::to_string(pitch_midi) + " is outside " + std::to_string(g.pitch_range.low) +
                            ".." + std::to_string(g.pitch_range.high()));
    std::vector<double> alpha = g.defaults;
    alpha.resize(g.num_attributes(), 0.5);
    for (const auto& [name, value] : attributes) {
        const auto it = std::find(g.attribute_names.begin(), g.attribute_names.end(), name);
        if (it == g.attribute_names.end()) throw invalid_input("unknown attribute '" + name + "'");
        alpha[static_cast<std::size_t>(it - g.attribute_names.begin())] = value;
    }
    std::mt19937_64 rng(seed);
    return ConditioningBundle::make(std::move(alpha), g.pitch_range.index_of(pitch_midi), g.arch().num_pitches, rng,
                                    g.arch().latent_dim);
}

Waveform render(const GeneratorModel& g, const ConditioningBundle& c) { return synthesize(generate(g, c), g.spectral); }

ParsedRequest parse_generate_request(const std::string& body, const GeneratorModel& g) {
    ParsedRequest out;
    auto fail = [&](std::string field, std::string msg) { out.errors.push_back({std::move(field), std::move(msg)}); };
    const auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        fail("body", "request body must be a JSON object");
        return out;
    }
    GenerateRequest r;
    for (const auto& [key, _] : j.items())
        if (key != "pitch_midi" && key != "attributes" && key != "seed" && key != "return_format")
            fail(key, "unknown field");

    if (!j.contains("pitch_midi")) {
        fail("pitch_midi", "required");
    } else if (!j["pitch_midi"].is_number_integer()) {
        fail("pitch_midi", "must be an integer");
    } else {
        const auto p = j["pitch_midi"].get<long long>();
        if (p < g.pitch_range.low || p > g.pitch_range.high())
            fail("pitch_midi", "must be in " + std::to_string(g.pitch_range.low) + ".." + std::to_string(g.pitch_range.high()));
        else
            r.pitch_midi = static_cast<int>(p);
    }

    if (j.contains("attributes")) {
        const auto& a = j["attributes"];
        if (!a.is_object()) {
            fail("attributes", "must be an object mapping names to numbers");
        } else {
            for (const auto& [name, v] : a.items()) {
                const std::string field = "attributes." + name;
                if (std::find(g.attribute_names.begin(), g.attribute_names.end(), name) == g.attribute_names.end()) {
                    fail(field, "unknown attribute '" + name + "'");
                } else if (!v.is_number()) {
                    fail(field, "must be a number");
                } else {
                    const double x = v.get<double>();
                    if (!std::isfinite(x) || x < 0.0 || x > kMaxAttributeValue) {
                        std::ostringstream m;
                        m << "must be in [0, " << kMaxAttributeValue << "]";
                        fail(field, m.str());
                    } else {
                        r.attributes[name] = x;
                    }
                }
            }
        }
    }

    if (j.contains("seed") && !j["seed"].is_null()) {
        if (j["seed"].is_number_unsigned())
            r.seed = j["seed"].get<std::uint64_t>();
        else
            fail("seed", "must be a non-negative integer");
    }
    if (j.contains("return_format")) {
        if (!j["return_format"].is_string() || j["return_format"].get<std::string>() != "wav")
            fail("return_format", "only \"wav\" is supported");
    }
    if (out.errors.empty()) out.request = std::move(r);
    return out;
}

std::shared_ptr<const ServedModel> ServedModel::make(GeneratorModel g, std::vector<double> scores) {
    if (!scores.empty() && scores.size() != g.num_attributes())
        throw invalid_input("ranking scores do not match the model's attributes");
    auto m = std::make_shared<ServedModel>();
    m->version = hex64(fnv1a64(encode_checkpoint(g)));
    m->generator = std::make_shared<const GeneratorModel>(std::move(g));
    m->scores = std::move(scores);
    return m;
}

WorkerPool::WorkerPool(int workers, std::size_t capacity) : capacity_(capacity) {
    if (workers < 1) throw invalid_input("worker pool needs at least one worker");
    if (capacity < 1) throw invalid_input("worker queue capacity must be positive");
    for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { loop(); });
}

WorkerPool::~WorkerPool() {
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
}

std::optional<std::future<void>> WorkerPool::submit(std::function<void()> job,
                                                    std::chrono::steady_clock::time_point deadline) {
    std::packaged_task<void()> task(std::move(job));
    auto fut = task.get_future();
    {
        std::lock_guard lock(mu_);
        if (stopping_ || queue_.size() >= capacity_) return std::nullopt;
        queue_.push_back({std::move(task), deadline});
    }
    cv_.notify_one();
    return fut;
}

std::size_t WorkerPool::queued() const {
    std::lock_guard lock(mu_);
    return queue_.size();
}

void WorkerPool::loop() {
    for (;;) {
        Job job;
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (queue_.empty()) return;
            job = std::move(queue_.front());
            queue_.pop_front();
        }
        // Dropping the task breaks its promise, which the waiter sees as expiry.
        if (std::chrono::steady_clock::now() > job.deadline) continue;
        job.task();
    }
}

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& j) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message,
                const std::vector<FieldError>& fields = {}) {
    nlohmann::json j = {{"error", kind}, {"message", message}};
    if (!fields.empty()) {
        nlohmann::json f = nlohmann::json::array();
        for (const auto& e : fields) f.push_back({{"field", e.field}, {"message", e.message}});
        j["fields"] = f;
    }
    send_json(res, status, j);
}

}  // namespace

struct SynthService::Impl {
    httplib::Server server;
    WorkerPool pool;
    std::chrono::milliseconds timeout;
    mutable std::mutex model_mu;
    std::shared_ptr<const ServedModel> model;
    std::thread thread;
    std::atomic<std::uint64_t> fallback_seed{0};

    Impl(const ServiceConfig& cfg) : pool(cfg.workers, cfg.queue_capacity), timeout(cfg.request_timeout) {
        std::random_device rd;
        fallback_seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    }

    std::shared_ptr<const ServedModel> current() const {
        std::lock_guard lock(model_mu);
        return model;
    }

    void routes() {
        server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                    {"Access-Control-Allow-Headers", "Content-Type, If-None-Match"},
                                    {"Access-Control-Expose-Headers",
                                     "ETag, X-Seed, X-Model-Version, X-Conditioning-OOD, X-Out-Of-Range-Attributes"}});
        server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

        server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
            const auto m = current();
            send_json(res, 200,
                      {{"status", m ? "ok" : "no_model"},
                       {"model_version", m ? nlohmann::json(m->version) : nlohmann::json(nullptr)}});
        });

        server.Get("/attributes", [this](const httplib::Request& req, httplib::Response& res) {
            const auto m = current();
            if (!m) return send_error(res, 503, "unavailable", "no model loaded");
            const std::string etag = "\"" + m->version + "\"";
            res.set_header("ETag", etag);
            if (req.get_header_value("If-None-Match") == etag) {
                res.status = 304;
                return;
            }
            const auto& g = *m->generator;
            nlohmann::json ranges = nlohmann::json::array();
            for (std::size_t i = 0; i < g.num_attributes(); ++i)
                ranges.push_back({{"low", g.observed_ranges.at(i).low}, {"high", g.observed_ranges.at(i).high}});
            nlohmann::json j = {{"names", g.attribute_names},
                                {"defaults", g.defaults},
                                {"observed_ranges", ranges},
                                {"max_value", kMaxAttributeValue},
                                {"pitch_range", {{"low", g.pitch_range.low}, {"high", g.pitch_range.high()}}},
                                {"model_version", m->version}};
            if (!m->scores.empty()) j["scores"] = m->scores;
            send_json(res, 200, j);
        });

        server.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
            const auto m = current();
            if (!m) return send_error(res, 503, "unavailable", "no model loaded");
            auto parsed = parse_generate_request(req.body, *m->generator);
            if (!parsed.request) return send_error(res, 400, "validation", "invalid generate request", parsed.errors);
            const GenerateRequest r = *parsed.request;
            const std::uint64_t seed = r.seed ? *r.seed : fallback_seed.fetch_add(1);

            struct Outcome {
                std::vector<std::uint8_t> wav;
                std::string failure;
            };
            auto out = std::make_shared<Outcome>();
            const auto deadline = std::chrono::steady_clock::now() + timeout;
            auto fut = pool.submit(
                [out, m, r, seed] {
                    try {
                        out->wav = encode_wav(
                            render(*m->generator, conditioning_for(*m->generator, r.pitch_midi, r.attributes, seed)));
                    } catch (const std::exception& e) {
                        out->failure = e.what();
                    }
                },
                deadline);
            if (!fut) return send_error(res, 503, "busy", "generation queue is full");
            if (fut->wait_until(deadline) != std::future_status::ready)
                return send_error(res, 504, "timeout", "generation did not finish in time");
            try {
                fut->get();
            } catch (const std::future_error&) {
                return send_error(res, 504, "timeout", "generation did not start in time");
            }
            if (!out->failure.empty()) return send_error(res, 500, "internal", out->failure);
            const auto& wav = out->wav;

            std::string oor;
            for (const auto& [name, v] : r.attributes)
                if (v > 1.0) oor += (oor.empty() ? "" : ",") + name;
            res.set_header("X-Seed", std::to_string(seed));
            res.set_header("X-Model-Version", m->version);
            res.set_header("X-Conditioning-OOD", oor.empty() ? "0" : "1");
            if (!oor.empty()) res.set_header("X-Out-Of-Range-Attributes", oor);
            res.status = 200;
            res.set_content(std::string(wav.begin(), wav.end()), "audio/wav");
        });

        server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string msg = "unknown error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                msg = e.what();
            } catch (...) {
            }
            send_error(res, 500, "internal", msg);
        });
    }
};

SynthService::SynthService(ServiceConfig cfg) : impl_(std::make_unique<Impl>(cfg)), cfg_(std::move(cfg)) {
    const int threads = std::max(1, cfg_.http_threads);
    impl_->server.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
    impl_->routes();
}

SynthService::~SynthService() { stop(); }

void SynthService::load(std::shared_ptr<const ServedModel> m) {
    std::lock_guard lock(impl_->model_mu);
    impl_->model = std::move(m);
}

void SynthService::unload() { load(nullptr); }

std::shared_ptr<const ServedModel> SynthService::model() const { return impl_->current(); }

int SynthService::start() {
    if (cfg_.port == 0)
        port_ = impl_->server.bind_to_any_port(cfg_.host);
    else
        port_ = impl_->server.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1;
    if (port_ < 0) throw io_error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return port_;
}

void SynthService::run() {
    if (!impl_->server.is_valid()) throw io_error("server failed to initialize");
    if (cfg_.port == 0)
        port_ = impl_->server.bind_to_any_port(cfg_.host);
    else
        port_ = impl_->server.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1;
    if (port_ < 0) throw io_error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    impl_->server.listen_after_bind();
}

void SynthService::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace darksynth
