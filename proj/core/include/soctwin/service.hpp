#pragma once

#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include "soctwin/imex.hpp"
#include "soctwin/store.hpp"

namespace soctwin {

struct ServiceOptions {
    RolloutConfig rollout;
    // Requests whose estimated run time exceeds this return 202 and a job
    // token to poll under /jobs/{token}.
    double async_threshold_seconds = 5.0;
    // Seconds per voxel sub-step; measured at construction when unset.
    std::optional<double> step_cost;
    std::string version = "0.1.0";
};

struct HttpResponse {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

/// Scenario server over a loaded cohort and checkpoint. The cohort is never
/// mutated; every request runs in its own simulation context, so handle()
/// may be called concurrently.
class TwinService {
public:
    TwinService(Cohort cohort, Checkpoint checkpoint, ServiceOptions options = {});
    ~TwinService();

    TwinService(const TwinService&) = delete;
    TwinService& operator=(const TwinService&) = delete;

    /// Routes one request. Used by the HTTP front end and directly by tests.
    HttpResponse handle(std::string_view method, std::string_view path, std::string_view body = {});

    /// Blocking HTTP/1.1 server on host:port. Returns after stop().
    void serve(const std::string& host, int port);
    /// Binds an ephemeral port and returns it; call serve_bound() to run.
    int bind_any(const std::string& host);
    void serve_bound();
    void stop();

    double step_cost() const noexcept { return step_cost_; }
    const Cohort& cohort() const noexcept { return cohort_; }

private:
    struct Server;

    HttpResponse route(std::string_view method, std::string_view path, std::string_view body);
    HttpResponse scenario(std::string_view body, bool allow_edits);
    HttpResponse job_status(const std::string& token);
    const PatientRecord* find_patient(std::string_view id) const;

    Cohort cohort_;
    Checkpoint checkpoint_;
    ServiceOptions options_;
    double step_cost_ = 0.0;

    std::mutex jobs_mutex_;
    std::uint64_t next_job_ = 0;
    std::map<std::string, std::shared_future<HttpResponse>> jobs_;

    std::unique_ptr<Server> server_;
};

}  // namespace soctwin
