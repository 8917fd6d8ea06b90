#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "darksynth/darkgan.hpp"

namespace darksynth {

/// Largest conditioning value the service accepts.
inline constexpr double kMaxAttributeValue = 4.0;

/// z drawn from seed; attributes not named take the model defaults. Used by
/// both the CLI and the service so the same request renders the same audio.
ConditioningBundle conditioning_for(const GeneratorModel& g, int pitch_midi,
                                    const std::map<std::string, double>& attributes, std::uint64_t seed);
Waveform render(const GeneratorModel& g, const ConditioningBundle& c);

struct FieldError {
    std::string field;
    std::string message;
};

struct GenerateRequest {
    int pitch_midi = 0;
    std::map<std::string, double> attributes;
    std::optional<std::uint64_t> seed;
    std::string return_format = "wav";
};

/// Parses and checks a request body against a model. Returns the request or
/// every problem found, one entry per offending field.
struct ParsedRequest {
    std::optional<GenerateRequest> request;
    std::vector<FieldError> errors;
};
ParsedRequest parse_generate_request(const std::string& body, const GeneratorModel& g);

/// A model as served: immutable, shared by in-flight requests.
struct ServedModel {
    std::shared_ptr<const GeneratorModel> generator;
    std::string version;          // content hash of the checkpoint
    std::vector<double> scores;   // ranking score per attribute, optional

    static std::shared_ptr<const ServedModel> make(GeneratorModel g, std::vector<double> scores = {});
};

/// Fixed set of threads draining a bounded FIFO queue. A job still queued
/// when its deadline passes is dropped without running.
class WorkerPool {
public:
    WorkerPool(int workers, std::size_t capacity);
    ~WorkerPool();
    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    /// Empty when the queue is full.
    std::optional<std::future<void>> submit(std::function<void()> job, std::chrono::steady_clock::time_point deadline);
    std::size_t queued() const;

private:
    struct Job {
        std::packaged_task<void()> task;
        std::chrono::steady_clock::time_point deadline;
    };
    void loop();

    std::size_t capacity_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Job> queue_;
    bool stopping_ = false;
    std::vector<std::thread> threads_;
};

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    int http_threads = 8;
    int workers = 1;
    std::size_t queue_capacity = 16;
    std::chrono::milliseconds request_timeout{10000};
};

class SynthService {
public:
    explicit SynthService(ServiceConfig cfg);
    ~SynthService();
    SynthService(const SynthService&) = delete;
    SynthService& operator=(const SynthService&) = delete;

    /// Swaps the served model; requests already running keep the old one.
    void load(std::shared_ptr<const ServedModel> m);
    void unload();
    std::shared_ptr<const ServedModel> model() const;

    /// Binds and serves on a background thread; returns the bound port.
    int start();
    /// Serves on the calling thread until stop().
    void run();
    void stop();
    int port() const { return port_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    ServiceConfig cfg_;
    int port_ = 0;
};

}  // namespace darksynth
