#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "damt/error.hpp"
#include "damt/jsonl.hpp"
#include "damt/prompting.hpp"
#include "damt/sha256.hpp"

namespace damt {

// Pipeline stage a request belongs to. Recorded for audit and used to route
// requests when generation and translation run on different models.
enum class Stage { generation, extraction, translation };

inline std::string to_string(Stage s) {
  switch (s) {
    case Stage::generation: return "generation";
    case Stage::extraction: return "extraction";
    case Stage::translation: return "translation";
  }
  return "translation";
}

struct DecodeParams {
  double temperature = 0.0;   // deterministic by default
  int max_output_tokens = 2048;
};

struct LlmRequest {
  RenderedPrompt prompt;
  std::string model_id;
  DecodeParams decode;
  Stage stage = Stage::translation;
};

struct LlmResponse {
  std::string text;  // verbatim completion, untrimmed
  long prompt_tokens = -1;      // -1 when the provider does not report usage
  long completion_tokens = -1;
  double latency_ms = 0.0;
  bool from_cache = false;
};

// Digest of (model_id, decode params, prompt content hash). Stage is
// deliberately excluded: the same generation output is reusable whichever
// stage asks for it.
inline std::string cache_key(const LlmRequest& req) {
  std::string material = req.model_id;
  material += '\n';
  material += std::to_string(req.decode.temperature);
  material += '\n';
  material += std::to_string(req.decode.max_output_tokens);
  material += '\n';
  material += req.prompt.content_hash;
  return sha256_hex(material);
}

class Backend {
 public:
  virtual ~Backend() = default;
  virtual LlmResponse complete(const LlmRequest& req) = 0;
  virtual std::string name() const = 0;
  // false for backends whose failures will not heal on retry (replay)
  virtual bool retryable() const { return true; }
};

// Serves completions exclusively from checked-in fixtures, keyed by cache
// key. The workhorse of deterministic offline tests.
class ReplayBackend : public Backend {
 public:
  ReplayBackend() = default;

  static std::shared_ptr<ReplayBackend> from_file(const std::filesystem::path& path) {
    auto backend = std::make_shared<ReplayBackend>();
    for_each_line(path, [&](long line_no, const std::string& line) {
      std::string err;
      auto j = try_parse_json(line, &err);
      if (!j) throw FormatError("bad fixture line: " + err, line_no);
      backend->fixtures_[(*j)["cache_key"].get<std::string>()] =
          (*j)["response_text"].get<std::string>();
    });
    return backend;
  }

  void add(const std::string& key, const std::string& text) {
    fixtures_[key] = text;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out = open_output(path);
    for (const auto& [key, text] : fixtures_) {  // std::map: sorted, stable
      Json j;
      j["cache_key"] = key;
      j["response_text"] = text;
      out << j.dump() << "\n";
    }
  }

  size_t size() const { return fixtures_.size(); }

  LlmResponse complete(const LlmRequest& req) override {
    auto it = fixtures_.find(cache_key(req));
    if (it == fixtures_.end()) throw FixtureMissingError(cache_key(req));
    LlmResponse resp;
    resp.text = it->second;
    return resp;
  }

  std::string name() const override { return "replay"; }
  bool retryable() const override { return false; }

 private:
  std::map<std::string, std::string> fixtures_;
};

// Content-addressed response store: one human-inspectable JSON file per key,
// written atomically so concurrent writers are safe.
class DiskCache {
 public:
  explicit DiskCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  std::optional<LlmResponse> get(const std::string& key) const {
    std::filesystem::path p = path_for(key);
    if (!std::filesystem::exists(p)) return std::nullopt;
    std::string err;
    auto j = try_parse_json(read_file(p), &err);
    if (!j) throw Error("corrupt cache entry " + p.string() + ": " + err);
    LlmResponse resp;
    resp.text = (*j)["text"].get<std::string>();
    resp.prompt_tokens = j->value("prompt_tokens", -1L);
    resp.completion_tokens = j->value("completion_tokens", -1L);
    resp.from_cache = true;
    return resp;
  }

  void put(const std::string& key, const LlmRequest& req,
           const LlmResponse& resp) const {
    Json j;
    j["key"] = key;
    j["model_id"] = req.model_id;
    j["prompt_hash"] = req.prompt.content_hash;
    j["template"] = to_string(req.prompt.template_id);
    j["text"] = resp.text;
    if (resp.prompt_tokens >= 0) j["prompt_tokens"] = resp.prompt_tokens;
    if (resp.completion_tokens >= 0) j["completion_tokens"] = resp.completion_tokens;
    std::filesystem::path p = path_for(key);
    std::filesystem::create_directories(p.parent_path());
    write_file_atomic(p, j.dump(2) + "\n");
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path path_for(const std::string& key) const {
    return dir_ / key.substr(0, 2) / (key + ".json");
  }

  std::filesystem::path dir_;
};

struct RetryPolicy {
  int max_attempts = 3;
  int base_delay_ms = 200;  // doubled per attempt
  int max_delay_ms = 5000;
};

// Token-bucket pacing plus an in-flight bound, per backend.
class RateLimiter {
 public:
  RateLimiter(double qps, int max_in_flight)
      : qps_(qps), max_in_flight_(max_in_flight > 0 ? max_in_flight : 8) {}

  void acquire() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < max_in_flight_; });
    ++in_flight_;
    if (qps_ > 0.0) {
      auto now = std::chrono::steady_clock::now();
      if (next_slot_ < now) next_slot_ = now;
      auto my_slot = next_slot_;
      next_slot_ += std::chrono::microseconds(static_cast<long>(1e6 / qps_));
      lock.unlock();
      std::this_thread::sleep_until(my_slot);
    }
  }

  void release() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      --in_flight_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  double qps_;
  int max_in_flight_;
  int in_flight_ = 0;
  std::chrono::steady_clock::time_point next_slot_{};
};

struct AuditEntry {
  Stage stage = Stage::translation;
  std::string model_id;
  std::string cache_key;
  std::string prompt_hash;
  bool from_cache = false;
  int retries = 0;
  double latency_ms = 0.0;
};

struct BackendHandle {
  std::shared_ptr<Backend> backend;
  std::shared_ptr<RateLimiter> limiter;
  RetryPolicy retry;
};

// Cache-first completion front end over the registered backends.
class LlmClient {
 public:
  LlmClient() = default;

  void register_backend(const std::string& model_id, std::shared_ptr<Backend> b,
                        double qps = 0.0, int max_in_flight = 8,
                        RetryPolicy retry = {}) {
    backends_[model_id] =
        BackendHandle{std::move(b), std::make_shared<RateLimiter>(qps, max_in_flight),
                      retry};
  }

  bool has_model(const std::string& model_id) const {
    return backends_.count(model_id) > 0;
  }

  void set_cache_dir(const std::filesystem::path& dir) {
    cache_.emplace(dir);
  }

  LlmResponse complete(const LlmRequest& req) {
    // the prompt must reach the provider exactly as rendered
    if (sha256_hex(req.prompt.text) != req.prompt.content_hash)
      throw Error("prompt text was mutated after rendering (hash mismatch)");
    auto bit = backends_.find(req.model_id);
    if (bit == backends_.end())
      throw ConfigError("no backend registered for model '" + req.model_id + "'");
    const std::string key = cache_key(req);

    if (cache_) {
      if (auto hit = cache_->get(key)) {
        record_audit({req.stage, req.model_id, key, req.prompt.content_hash,
                      true, 0, 0.0});
        return *hit;
      }
    }

    BackendHandle& handle = bit->second;
    handle.limiter->acquire();
    struct Release {
      RateLimiter* l;
      ~Release() { l->release(); }
    } release{handle.limiter.get()};

    int attempts = 0;
    auto start = std::chrono::steady_clock::now();
    for (;;) {
      try {
        LlmResponse resp = handle.backend->complete(req);
        resp.latency_ms =
            std::chrono::duration<double, std::milli>(
                std::chrono::steady_clock::now() - start)
                .count();
        resp.from_cache = false;
        if (cache_) cache_->put(key, req, resp);
        record_audit({req.stage, req.model_id, key, req.prompt.content_hash,
                      false, attempts, resp.latency_ms});
        return resp;
      } catch (const RetryableError& e) {
        ++attempts;
        if (!handle.backend->retryable() || attempts >= handle.retry.max_attempts)
          throw BackendError(std::string("backend '") + req.model_id +
                             "' failed after " + std::to_string(attempts) +
                             " attempts: " + e.what());
        int delay = handle.retry.base_delay_ms;
        for (int i = 1; i < attempts; ++i) delay *= 2;
        delay = std::min(delay, handle.retry.max_delay_ms);
        std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      }
    }
  }

  std::vector<AuditEntry> audit_log() const {
    std::lock_guard<std::mutex> lock(audit_mu_);
    return audit_;
  }

 private:
  void record_audit(AuditEntry e) {
    std::lock_guard<std::mutex> lock(audit_mu_);
    audit_.push_back(std::move(e));
  }

  std::map<std::string, BackendHandle> backends_;
  std::optional<DiskCache> cache_;
  mutable std::mutex audit_mu_;
  std::vector<AuditEntry> audit_;
};

// Stage separation: generation and extraction requests go to one model,
// translation requests to another (possibly the same), so knowledge produced
// by a stronger model can be reused when translating with a weaker one.
struct StageRouting {
  std::string generation_model;
  std::string translation_model;
};

inline StageRouting configure_stages(const LlmClient& client,
                                     const std::string& generation_model,
                                     const std::string& translation_model) {
  if (!client.has_model(generation_model))
    throw ConfigError("unknown generation model '" + generation_model + "'");
  if (!client.has_model(translation_model))
    throw ConfigError("unknown translation model '" + translation_model + "'");
  return StageRouting{generation_model, translation_model};
}

inline const std::string& model_for(const StageRouting& routing, Stage stage) {
  switch (stage) {
    case Stage::generation:
    case Stage::extraction: return routing.generation_model;
    case Stage::translation: return routing.translation_model;
  }
  return routing.translation_model;
}

}  // namespace damt
