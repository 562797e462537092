#include "daytrace/http.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <string_view>
#include <thread>

namespace daytrace {

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

}  // namespace

bool CaseInsensitiveLess::operator()(const std::string& a, const std::string& b) const {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(), [](char x, char y) {
    return std::tolower(static_cast<unsigned char>(x)) < std::tolower(static_cast<unsigned char>(y));
  });
}

std::string HttpRequest::path_only() const { return path.substr(0, path.find('?')); }

std::map<std::string, std::string> HttpRequest::query() const {
  std::map<std::string, std::string> out;
  auto q = path.find('?');
  if (q == std::string::npos) return out;
  std::string_view rest(path);
  rest.remove_prefix(q + 1);
  while (!rest.empty()) {
    auto amp = rest.find('&');
    auto pair = rest.substr(0, amp);
    auto eq = pair.find('=');
    if (eq == std::string_view::npos) out[std::string(pair)] = "";
    else out[std::string(pair.substr(0, eq))] = std::string(pair.substr(eq + 1));
    rest = amp == std::string_view::npos ? std::string_view{} : rest.substr(amp + 1);
  }
  return out;
}

// ---------------------------------------------------------------------------

HttpResponse CapturingTransport::send(const HttpRequest& request) {
  HttpResponse resp = inner_.send(request);
  std::lock_guard lock(mu_);
  log_.push_back({request, resp});
  return resp;
}

std::vector<CapturingTransport::Exchange> CapturingTransport::exchanges() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::string CapturingTransport::request_dump() const {
  std::lock_guard lock(mu_);
  std::string out;
  for (const auto& ex : log_) {
    out += ex.request.method + " " + ex.request.path + "\n";
    for (const auto& [k, v] : ex.request.headers) out += k + ": " + v + "\n";
    out += ex.request.body + "\n";
  }
  return out;
}

std::uint64_t CapturingTransport::bytes_sent() const {
  std::lock_guard lock(mu_);
  std::uint64_t n = 0;
  for (const auto& ex : log_) {
    n += ex.request.method.size() + ex.request.path.size() + ex.request.body.size();
    for (const auto& [k, v] : ex.request.headers) n += k.size() + v.size();
  }
  return n;
}

// ---------------------------------------------------------------------------

struct HttpClientTransport::Impl {
  httplib::Client client;
  Impl(const std::string& url, int timeout_ms) : client(url) {
    client.set_connection_timeout(std::chrono::milliseconds(timeout_ms));
    client.set_read_timeout(std::chrono::milliseconds(timeout_ms));
    client.set_write_timeout(std::chrono::milliseconds(timeout_ms));
  }
};

HttpClientTransport::HttpClientTransport(const std::string& base_url, int timeout_ms)
    : impl_(std::make_unique<Impl>(base_url, timeout_ms)) {}

HttpClientTransport::~HttpClientTransport() = default;

HttpResponse HttpClientTransport::send(const HttpRequest& request) {
  httplib::Headers headers;
  std::string content_type = "text/plain";
  for (const auto& [k, v] : request.headers) {
    if (iequals(k, "content-type")) {
      content_type = v;
      continue;
    }
    headers.emplace(k, v);
  }
  httplib::Result res;
  if (request.method == "GET") {
    res = impl_->client.Get(request.path, headers);
  } else if (request.method == "POST") {
    res = impl_->client.Post(request.path, headers, request.body, content_type);
  } else if (request.method == "DELETE") {
    res = impl_->client.Delete(request.path, headers, request.body, content_type);
  } else {
    return {};
  }
  HttpResponse out;
  if (!res) return out;
  out.status = res->status;
  out.body = res->body;
  for (const auto& [k, v] : res->headers) out.headers[k] = v;
  return out;
}

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  httplib::Server server;
  Handler handler;
  std::thread thread;
};

HttpServer::HttpServer(Handler handler) : impl_(std::make_unique<Impl>()) {
  impl_->handler = std::move(handler);
  auto adapt = [this](const httplib::Request& req, httplib::Response& res) {
    HttpRequest r;
    r.method = req.method;
    r.path = req.target.empty() ? req.path : req.target;
    for (const auto& [k, v] : req.headers) r.headers[k] = v;
    r.body = req.body;
    HttpResponse out = impl_->handler(r);
    res.status = out.status;
    std::string ctype = "text/plain";
    for (const auto& [k, v] : out.headers) {
      if (iequals(k, "content-type")) ctype = v;
      else res.set_header(k, v);
    }
    res.set_content(out.body, ctype);
  };
  const std::string any = R"(.*)";
  impl_->server.Get(any, adapt);
  impl_->server.Post(any, adapt);
  impl_->server.Delete(any, adapt);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) return -1;
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

bool HttpServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace daytrace
