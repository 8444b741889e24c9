#include "nff/service.hpp"

#include <sys/socket.h>

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/thread_pool.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <charconv>
#include <cstdlib>
#include <iostream>

#include "nff/error.hpp"

namespace nff::app {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

struct Service::Subscriber {
  explicit Subscriber(tcp::socket socket) : ws(std::move(socket)) {}
  websocket::stream<tcp::socket> ws;
  std::mutex write_mutex;
  std::atomic<bool> open{true};

  void send(const std::string& text, bool binary) {
    std::lock_guard lock(write_mutex);
    if (!open) return;
    beast::error_code ec;
    ws.binary(binary);
    ws.write(asio::buffer(text), ec);
    if (ec) open = false;
  }
};

struct Service::Session {
  std::mutex mutex;
  edit::SessionState state;
  std::vector<std::shared_ptr<Subscriber>> subscribers;
};

struct Service::Net {
  asio::io_context io;
  tcp::acceptor acceptor{io};
  std::unique_ptr<asio::thread_pool> pool;
  std::thread accept_thread;
  std::mutex streams_mutex;
  std::vector<std::thread> stream_threads;
  std::vector<std::weak_ptr<Subscriber>> streams;
  std::vector<std::weak_ptr<tcp::socket>> connections;
  bool stopping = false;  // guarded by streams_mutex
};

namespace {

struct Target {
  std::string path;
  std::map<std::string, std::string> query;
};

Target parse_target(const std::string& target) {
  Target t;
  const auto q = target.find('?');
  t.path = target.substr(0, q);
  if (q == std::string::npos) return t;
  std::string rest = target.substr(q + 1);
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    const auto amp = rest.find('&', pos);
    const auto item = rest.substr(pos, amp == std::string::npos ? std::string::npos : amp - pos);
    const auto eq = item.find('=');
    if (!item.empty()) t.query[item.substr(0, eq)] = eq == std::string::npos ? "" : item.substr(eq + 1);
    if (amp == std::string::npos) break;
    pos = amp + 1;
  }
  return t;
}

bool parse_size(const std::string& s, std::size_t& out) {
  if (s.empty()) return false;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

HttpResponse json_response(int status, const json& j) { return {status, "application/json", j.dump()}; }
HttpResponse error_response(int status, const std::string& msg) { return json_response(status, {{"error", msg}}); }

}  // namespace

Service::Service(std::shared_ptr<const Model> model, ServiceOptions opts)
    : model_(std::move(model)), opts_(std::move(opts)), initial_(model_->initial_state(opts_.seed)) {}

Service::~Service() { stop(); }

std::size_t Service::thread_count(std::size_t requested) {
  if (requested) return requested;
  if (const char* env = std::getenv("NFF_THREADS")) {
    std::size_t n = 0;
    if (parse_size(env, n) && n > 0) return n;
  }
  return 1;
}

std::shared_ptr<Service::Session> Service::session(const std::string& name) {
  std::lock_guard lock(sessions_mutex_);
  auto& s = sessions_[name];
  if (!s) {
    s = std::make_shared<Session>();
    s->state = initial_;
  }
  return s;
}

HttpResponse Service::failure(const std::string& what) {
  const std::string id = "diag-" + std::to_string(++diagnostics_);
  std::cerr << "[nff serve] " << id << ": " << what << std::endl;
  return json_response(500, {{"error", "render failed"}, {"diagnostic_id", id}});
}

HttpResponse Service::handle(const std::string& method, const std::string& target, const std::string& body) {
  const auto t = parse_target(target);
  const std::string name = t.query.contains("session") ? t.query.at("session") : "default";
  if (name.empty()) return error_response(400, "empty session name");

  if (t.path == "/state") {
    if (method != "GET") return error_response(405, "use GET");
    auto s = session(name);
    std::lock_guard lock(s->mutex);
    return json_response(200, edit::to_json(s->state));
  }
  if (t.path == "/edit" || t.path == "/reset") {
    if (method != "POST") return error_response(405, "use POST");
    auto s = session(name);
    std::lock_guard lock(s->mutex);
    edit::SessionState next;
    if (t.path == "/reset") {
      next = initial_;
    } else {
      json j;
      try {
        j = json::parse(body);
      } catch (const json::exception& e) {
        return error_response(400, std::string("body is not JSON: ") + e.what());
      }
      try {
        next = edit::apply_edit(s->state, edit::parse_edit(j), model_->limits());
      } catch (const ContractError& e) {
        return error_response(400, e.what());
      }
    }
    s->state = next;
    const auto state_json = edit::to_json(next).dump();
    std::erase_if(s->subscribers, [](const auto& sub) { return !sub->open; });
    if (!s->subscribers.empty()) {
      std::string png;
      try {
        png = model_->render_png(next);
      } catch (const std::exception& e) {
        return failure(e.what());
      }
      for (auto& sub : s->subscribers) {
        sub->send(state_json, false);
        sub->send(png, true);
      }
    }
    return {200, "application/json", state_json};
  }
  if (t.path == "/render.png") {
    if (method != "GET") return error_response(405, "use GET");
    auto s = session(name);
    std::lock_guard lock(s->mutex);
    auto state = s->state;
    if (t.query.contains("resolution")) {
      std::size_t r = 0;
      if (!parse_size(t.query.at("resolution"), r) || r < 1 || r > model_->limits().max_resolution) {
        return error_response(400, "resolution must be an integer in [1, " +
                                       std::to_string(model_->limits().max_resolution) + "]");
      }
      state.resolution = r;
    }
    try {
      return {200, "image/png", model_->render_png(state)};
    } catch (const std::exception& e) {
      return failure(e.what());
    }
  }
  if (t.path.starts_with("/alpha/") && t.path.ends_with(".png")) {
    if (method != "GET") return error_response(405, "use GET");
    const auto idx = t.path.substr(7, t.path.size() - 11);
    std::size_t i = 0;
    auto s = session(name);
    std::lock_guard lock(s->mutex);
    if (!parse_size(idx, i) || i >= s->state.scene.entity_count()) {
      return error_response(400, "alpha index must lie in [0, " + std::to_string(s->state.scene.entity_count() - 1) + "]");
    }
    try {
      return {200, "image/png", model_->alpha_png(s->state, i)};
    } catch (const std::exception& e) {
      return failure(e.what());
    }
  }
  if (t.path == "/health") return json_response(200, {{"status", "ok"}, {"checkpoint", model_->id()}});
  return error_response(404, "no route for " + t.path);
}

unsigned short Service::start() {
  net_ = std::make_unique<Net>();
  tcp::endpoint ep(asio::ip::make_address(opts_.address), opts_.port);
  net_->acceptor.open(ep.protocol());
  net_->acceptor.set_option(asio::socket_base::reuse_address(true));
  net_->acceptor.bind(ep);
  net_->acceptor.listen();
  net_->pool = std::make_unique<asio::thread_pool>(thread_count(opts_.threads));
  net_->accept_thread = std::thread([this] { accept_loop(); });
  return net_->acceptor.local_endpoint().port();
}

void Service::accept_loop() {
  for (;;) {
    auto socket = std::make_shared<tcp::socket>(net_->io);
    beast::error_code ec;
    net_->acceptor.accept(*socket, ec);
    if (ec) return;  // acceptor closed
    {
      std::lock_guard lock(net_->streams_mutex);
      std::erase_if(net_->connections, [](const auto& w) { return w.expired(); });
      net_->connections.push_back(socket);
    }
    asio::post(*net_->pool, [this, socket] { serve_connection(socket); });
  }
}

void Service::serve_connection(std::shared_ptr<void> conn) {
  auto& socket = *static_cast<tcp::socket*>(conn.get());
  beast::flat_buffer buffer;
  for (;;) {
    http::request<http::string_body> req;
    beast::error_code ec;
    http::read(socket, buffer, req, ec);
    if (ec) return;
    const std::string target(req.target());
    if (websocket::is_upgrade(req)) {
      const auto t = parse_target(target);
      if (t.path != "/stream") {
        http::response<http::string_body> res{http::status::not_found, req.version()};
        res.body() = R"({"error":"websocket endpoint is /stream"})";
        res.prepare_payload();
        http::write(socket, res, ec);
        return;
      }
      auto sub = std::make_shared<Subscriber>(std::move(socket));
      sub->ws.accept(req, ec);
      if (ec) return;
      auto s = session(t.query.contains("session") ? t.query.at("session") : "default");
      {
        std::lock_guard lock(s->mutex);
        s->subscribers.push_back(sub);
        sub->send(edit::to_json(s->state).dump(), false);
      }
      std::lock_guard lock(net_->streams_mutex);
      if (net_->stopping) {
        sub->open = false;
        beast::get_lowest_layer(sub->ws).shutdown(tcp::socket::shutdown_both, ec);
        return;
      }
      net_->streams.push_back(sub);
      net_->stream_threads.emplace_back([this, s, sub] { serve_stream(s, sub); });
      return;
    }
    const auto out = handle(std::string(req.method_string()), target, req.body());
    http::response<http::string_body> res{static_cast<http::status>(out.status), req.version()};
    res.set(http::field::content_type, out.content_type);
    res.set(http::field::access_control_allow_origin, "*");
    res.keep_alive(req.keep_alive());
    res.body() = out.body;
    res.prepare_payload();
    http::write(socket, res, ec);
    if (ec || !req.keep_alive()) {
      socket.shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
  }
}

void Service::serve_stream(std::shared_ptr<Session> s, std::shared_ptr<Subscriber> sub) {
  // Clients only listen; reading keeps the connection serviced until it closes.
  beast::flat_buffer buffer;
  beast::error_code ec;
  while (sub->open) {
    sub->ws.read(buffer, ec);
    if (ec) break;
    buffer.consume(buffer.size());
  }
  sub->open = false;
  std::lock_guard lock(s->mutex);
  std::erase(s->subscribers, sub);
}

void Service::stop() {
  if (!net_) return;
  beast::error_code ec;
  // close() alone does not wake a thread blocked in accept(); shutdown() on the listening socket does.
  ::shutdown(net_->acceptor.native_handle(), SHUT_RDWR);
  if (net_->accept_thread.joinable()) net_->accept_thread.join();
  net_->acceptor.close(ec);
  {
    std::lock_guard lock(net_->streams_mutex);
    net_->stopping = true;
    // shutdown() unblocks the reads parked on these sockets; their owners close them
    for (auto& w : net_->streams) {
      if (auto sub = w.lock()) {
        sub->open = false;
        beast::get_lowest_layer(sub->ws).shutdown(tcp::socket::shutdown_both, ec);
      }
    }
    for (auto& w : net_->connections)
      if (auto sock = w.lock()) sock->shutdown(tcp::socket::shutdown_both, ec);
  }
  net_->pool->join();
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(net_->streams_mutex);
    threads.swap(net_->stream_threads);
  }
  for (auto& th : threads)
    if (th.joinable()) th.join();
  net_.reset();
}

}  // namespace nff::app
