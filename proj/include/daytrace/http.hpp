#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace daytrace {

struct CaseInsensitiveLess {
  bool operator()(const std::string& a, const std::string& b) const;
};

using Headers = std::map<std::string, std::string, CaseInsensitiveLess>;

struct HttpRequest {
  std::string method;
  std::string path;  // may include "?query"
  Headers headers;
  std::string body;

  std::string path_only() const;
  std::map<std::string, std::string> query() const;
};

struct HttpResponse {
  int status = 0;  // 0 = no response (network failure)
  Headers headers;
  std::string body;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse send(const HttpRequest& request) = 0;
};

using Handler = std::function<HttpResponse(const HttpRequest&)>;

/// Calls a handler directly; deterministic.
class InProcessTransport final : public Transport {
 public:
  explicit InProcessTransport(Handler handler) : handler_(std::move(handler)) {}
  HttpResponse send(const HttpRequest& request) override { return handler_(request); }

 private:
  Handler handler_;
};

/// Records every request/response pair passing through to `inner`.
class CapturingTransport final : public Transport {
 public:
  explicit CapturingTransport(Transport& inner) : inner_(inner) {}
  HttpResponse send(const HttpRequest& request) override;

  struct Exchange {
    HttpRequest request;
    HttpResponse response;
  };
  std::vector<Exchange> exchanges() const;
  /// Request line, headers and body of every captured request, concatenated.
  std::string request_dump() const;
  std::uint64_t bytes_sent() const;

 private:
  Transport& inner_;
  mutable std::mutex mu_;
  std::vector<Exchange> log_;
};

/// HTTP/1.1 client transport (plain TCP). `base_url` like "http://127.0.0.1:8080".
class HttpClientTransport final : public Transport {
 public:
  explicit HttpClientTransport(const std::string& base_url, int timeout_ms = 5000);
  ~HttpClientTransport() override;
  HttpResponse send(const HttpRequest& request) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Serves `handler` over HTTP on a background thread.
class HttpServer {
 public:
  explicit HttpServer(Handler handler);
  ~HttpServer();

  /// Binds (port 0 picks a free port) and starts serving. Returns the port.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  bool listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace daytrace
