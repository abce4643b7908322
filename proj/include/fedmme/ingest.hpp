#pragma once

// Client for an external text-embedding service. Upstream tooling uses it to
// turn generated image reports into the textual.bin block of a dataset.
//
// Wire contract:
//   POST {base_url}/v1/embed   body {"report": "<text>"}
//   200 {"embedding": [number x d2]}
// Anything else is an error. Timeouts, connection failures, 429 and 5xx are
// retried with exponential backoff (base 250 ms, doubling, plus jitter of up
// to half the delay).

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedmme {

struct ReportRecord {
    std::string sample_id;
    std::string report;
    std::optional<std::vector<double>> embedding;
};

struct EmbedServiceConfig {
    std::string base_url;
    std::chrono::milliseconds timeout{10'000};
    std::size_t retries = 3;
    std::size_t expected_dim = 768;
    std::chrono::milliseconds backoff_base{250};
    std::uint64_t jitter_seed = 0;
    std::size_t parallelism = 1;
};

void validate(const EmbedServiceConfig& cfg);

/// base_url from `explicit_url` if non-empty, else FEDMME_EMBED_URL.
std::string resolve_embed_url(const std::string& explicit_url);

struct TransportResult {
    enum class Kind { response, timeout, connection_error };
    Kind kind = Kind::response;
    int status = 0;
    std::string body;
};

class Transport {
public:
    virtual ~Transport() = default;
    virtual TransportResult post(const std::string& base_url, const std::string& path, const std::string& body,
                                 std::chrono::milliseconds timeout) = 0;
};

/// Real HTTP transport (cpp-httplib, plain http only).
class HttpTransport final : public Transport {
public:
    TransportResult post(const std::string& base_url, const std::string& path, const std::string& body,
                         std::chrono::milliseconds timeout) override;
};

/// Scripted in-process transport. The responder sees each request and its
/// zero-based call index; every request is logged.
class StubTransport final : public Transport {
public:
    struct Request {
        std::string url;
        std::string body;
    };
    using Responder = std::function<TransportResult(const Request&, std::size_t call_index)>;

    explicit StubTransport(Responder responder) : responder_(std::move(responder)) {}

    TransportResult post(const std::string& base_url, const std::string& path, const std::string& body,
                         std::chrono::milliseconds timeout) override;

    std::vector<Request> requests() const;
    std::size_t request_count() const;

    static TransportResult ok_embedding(std::span<const double> values);

private:
    Responder responder_;
    mutable std::mutex mu_;
    std::vector<Request> log_;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Canonical request body; identical input gives identical bytes.
std::string embed_request_body(const std::string& report);

/// Delay before retry `attempt` (0-based) for the record at `stream`.
std::chrono::milliseconds backoff_delay(const EmbedServiceConfig& cfg, std::size_t attempt, std::uint64_t stream);

std::vector<double> fetch_embedding(const EmbedServiceConfig& cfg, const ReportRecord& record, Transport& transport,
                                    const Sleeper& sleep = {}, std::uint64_t jitter_stream = 0);

/// Fetches every record's embedding (in order) and writes them as float32 rows
/// to `out`. Nothing is written unless every fetch succeeds; the file appears
/// via rename of a temporary sibling.
std::size_t build_textual_matrix(const EmbedServiceConfig& cfg, std::span<const ReportRecord> records,
                                 const std::filesystem::path& out, Transport& transport, const Sleeper& sleep = {});

/// One JSON object per line: {"sample_id": ..., "report": ...}.
std::vector<ReportRecord> load_report_records(const std::filesystem::path& jsonl);

} // namespace fedmme
