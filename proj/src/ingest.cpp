#include "fedmme/ingest.hpp"

#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "fedmme/dataset.hpp"
#include "fedmme/errors.hpp"
#include "fedmme/rng.hpp"

namespace fedmme {

namespace fs = std::filesystem;
using nlohmann::json;

void validate(const EmbedServiceConfig& cfg) {
    if (cfg.retries > 5) throw Error(ErrorCode::InvalidConfig, "retries must be <= 5");
    if (cfg.timeout.count() <= 0) throw Error(ErrorCode::InvalidConfig, "timeout must be positive");
    if (cfg.expected_dim < 1) throw Error(ErrorCode::InvalidConfig, "expected_dim must be >= 1");
    if (cfg.parallelism < 1) throw Error(ErrorCode::InvalidConfig, "parallelism must be >= 1");
}

std::string resolve_embed_url(const std::string& explicit_url) {
    if (!explicit_url.empty()) return explicit_url;
    if (const char* env = std::getenv("FEDMME_EMBED_URL"); env && *env) return env;
    throw Error(ErrorCode::InvalidConfig, "no embedding service URL (set FEDMME_EMBED_URL)");
}

TransportResult HttpTransport::post(const std::string& base_url, const std::string& path, const std::string& body,
                                    std::chrono::milliseconds timeout) {
    httplib::Client client(base_url);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    auto res = client.Post(path, body, "application/json");
    if (!res) {
        const auto err = res.error();
        if (err == httplib::Error::Read || err == httplib::Error::Write || err == httplib::Error::ConnectionTimeout) {
            return {TransportResult::Kind::timeout, 0, httplib::to_string(err)};
        }
        return {TransportResult::Kind::connection_error, 0, httplib::to_string(err)};
    }
    return {TransportResult::Kind::response, res->status, res->body};
}

TransportResult StubTransport::post(const std::string& base_url, const std::string& path, const std::string& body,
                                    std::chrono::milliseconds) {
    Request req{base_url + path, body};
    std::size_t index;
    {
        std::lock_guard lock(mu_);
        index = log_.size();
        log_.push_back(req);
    }
    return responder_(req, index);
}

std::vector<StubTransport::Request> StubTransport::requests() const {
    std::lock_guard lock(mu_);
    return log_;
}

std::size_t StubTransport::request_count() const {
    std::lock_guard lock(mu_);
    return log_.size();
}

TransportResult StubTransport::ok_embedding(std::span<const double> values) {
    return {TransportResult::Kind::response, 200, json{{"embedding", std::vector<double>(values.begin(), values.end())}}.dump()};
}

std::string embed_request_body(const std::string& report) { return json{{"report", report}}.dump(); }

std::chrono::milliseconds backoff_delay(const EmbedServiceConfig& cfg, std::size_t attempt, std::uint64_t stream) {
    Rng rng(derive_seed(cfg.jitter_seed, stream));
    for (std::size_t i = 0; i < attempt; ++i) rng();
    const double base = static_cast<double>(cfg.backoff_base.count()) * std::ldexp(1.0, static_cast<int>(attempt));
    return std::chrono::milliseconds(static_cast<long long>(base + 0.5 * base * rng.uniform()));
}

namespace {

std::vector<double> parse_embedding(const std::string& body, std::size_t expected_dim) {
    const json j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::MalformedResponse, "response is not a JSON object");
    const auto it = j.find("embedding");
    if (it == j.end() || !it->is_array()) throw Error(ErrorCode::MalformedResponse, "response lacks an embedding array");
    std::vector<double> values;
    values.reserve(it->size());
    for (const auto& v : *it) {
        if (!v.is_number()) throw Error(ErrorCode::MalformedResponse, "embedding holds a non-number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) throw Error(ErrorCode::MalformedResponse, "embedding holds a non-finite value");
        values.push_back(x);
    }
    if (values.size() != expected_dim) {
        throw Error(ErrorCode::DimMismatch, "embedding length " + std::to_string(values.size()) + " != " +
                                                std::to_string(expected_dim));
    }
    return values;
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

} // namespace

std::vector<double> fetch_embedding(const EmbedServiceConfig& cfg, const ReportRecord& record, Transport& transport,
                                    const Sleeper& sleep, std::uint64_t jitter_stream) {
    validate(cfg);
    if (record.report.empty()) throw Error(ErrorCode::InvalidConfig, "record " + record.sample_id + " has an empty report");
    const std::string body = embed_request_body(record.report);

    for (std::size_t attempt = 0;; ++attempt) {
        const auto res = transport.post(cfg.base_url, "/v1/embed", body, cfg.timeout);
        std::optional<Error> failure;
        switch (res.kind) {
        case TransportResult::Kind::timeout:
            failure.emplace(ErrorCode::Timeout, "no response within " + std::to_string(cfg.timeout.count()) + " ms");
            break;
        case TransportResult::Kind::connection_error:
            failure.emplace(ErrorCode::Timeout, "connection failed: " + res.body);
            break;
        case TransportResult::Kind::response:
            if (res.status == 200) return parse_embedding(res.body, cfg.expected_dim);
            if (!retryable_status(res.status)) throw Error(ErrorCode::BadStatus, "HTTP " + std::to_string(res.status));
            failure.emplace(ErrorCode::BadStatus, "HTTP " + std::to_string(res.status));
            break;
        }
        if (attempt >= cfg.retries) throw *failure;
        const auto delay = backoff_delay(cfg, attempt, jitter_stream);
        if (sleep) {
            sleep(delay);
        } else {
            std::this_thread::sleep_for(delay);
        }
    }
}

std::size_t build_textual_matrix(const EmbedServiceConfig& cfg, std::span<const ReportRecord> records,
                                 const fs::path& out, Transport& transport, const Sleeper& sleep) {
    validate(cfg);
    if (records.empty()) throw Error(ErrorCode::InvalidConfig, "no records to embed");
    for (const auto& r : records) {
        if (r.sample_id.empty()) throw Error(ErrorCode::InvalidConfig, "record with empty sample_id");
        if (r.report.empty()) throw Error(ErrorCode::InvalidConfig, "record " + r.sample_id + " has an empty report");
    }

    std::vector<std::vector<double>> rows(records.size());
    std::vector<std::exception_ptr> failures(records.size());
    auto fetch_one = [&](std::size_t i) {
        try {
            const auto& r = records[i];
            if (r.embedding) {
                if (r.embedding->size() != cfg.expected_dim) {
                    throw Error(ErrorCode::DimMismatch, "precomputed embedding has length " +
                                                            std::to_string(r.embedding->size()));
                }
                rows[i] = *r.embedding;
            } else {
                rows[i] = fetch_embedding(cfg, r, transport, sleep, i);
            }
        } catch (...) {
            failures[i] = std::current_exception();
        }
    };

    // Workers take records in input order, in windows of `parallelism`; the
    // first failure stops later windows from starting.
    for (std::size_t start = 0; start < records.size(); start += cfg.parallelism) {
        const std::size_t stop = std::min(records.size(), start + cfg.parallelism);
        if (stop - start == 1) {
            fetch_one(start);
        } else {
            std::vector<std::jthread> pool;
            for (std::size_t i = start; i < stop; ++i) pool.emplace_back(fetch_one, i);
        }
        for (std::size_t i = start; i < stop; ++i) {
            if (!failures[i]) continue;
            try {
                std::rethrow_exception(failures[i]);
            } catch (const Error& e) {
                throw Error(e.code(), "sample " + records[i].sample_id + ": " + e.detail());
            }
        }
    }

    std::vector<unsigned char> bytes;
    bytes.reserve(records.size() * cfg.expected_dim * 4);
    for (const auto& row : rows) {
        for (double v : row) append_f32_le(bytes, v);
    }
    fs::path tmp = out;
    tmp += ".partial";
    try {
        write_bytes(tmp, bytes);
        std::error_code ec;
        fs::rename(tmp, out, ec);
        if (ec) throw Error(ErrorCode::IoFailure, "rename to " + out.string() + " failed: " + ec.message());
    } catch (...) {
        std::error_code ignored;
        fs::remove(tmp, ignored);
        throw;
    }
    return rows.size();
}

std::vector<ReportRecord> load_report_records(const fs::path& jsonl) {
    std::ifstream in(jsonl);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + jsonl.string());
    std::vector<ReportRecord> records;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("sample_id") || !j.contains("report") || !j["sample_id"].is_string() ||
            !j["report"].is_string()) {
            throw Error(ErrorCode::InvalidConfig, jsonl.string() + ":" + std::to_string(lineno) + " is not a report record");
        }
        ReportRecord r{j["sample_id"].get<std::string>(), j["report"].get<std::string>(), std::nullopt};
        if (const auto it = j.find("embedding"); it != j.end() && it->is_array()) r.embedding = it->get<std::vector<double>>();
        records.push_back(std::move(r));
    }
    return records;
}

} // namespace fedmme
