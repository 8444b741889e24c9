#pragma once

// HTTP + WebSocket control service over a loaded model.
//
//   GET  /state            session state JSON
//   POST /edit             body: one SceneEdit; returns the new state, 400 on invalid edits
//   POST /reset            back to the initial state
//   GET  /render.png       current state; ?resolution= overrides the feature resolution
//   GET  /alpha/{i}.png    alpha map of object i (i = object count addresses the background)
//   WS   /stream           after each accepted edit: a text frame with the state, then a PNG frame
//
// Every route takes ?session=<name> (default "default"); sessions are independent and
// created on first use. Renders are serialized per session. Failed renders answer 500
// with a diagnostic id that is also logged.

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "nff/model.hpp"

namespace nff::app {

struct ServiceOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8080;  // 0 picks a free port
  std::uint64_t seed = 0;      // initial scene of every session
  std::size_t threads = 0;     // HTTP worker threads; 0 reads NFF_THREADS, defaulting to 1
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

class Service {
 public:
  Service(std::shared_ptr<const Model> model, ServiceOptions opts);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Routes one request without any network IO.
  HttpResponse handle(const std::string& method, const std::string& target, const std::string& body);

  /// Binds and starts serving in background threads; returns the bound port.
  unsigned short start();
  /// Closes the listener and every open connection, then joins all threads.
  void stop();

  static std::size_t thread_count(std::size_t requested);

  struct Subscriber;
  struct Session;

 private:
  std::shared_ptr<Session> session(const std::string& name);
  HttpResponse failure(const std::string& what);
  void accept_loop();
  void serve_connection(std::shared_ptr<void> socket);
  void serve_stream(std::shared_ptr<Session> s, std::shared_ptr<Subscriber> sub);

  std::shared_ptr<const Model> model_;
  ServiceOptions opts_;
  edit::SessionState initial_;
  std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::atomic<std::uint64_t> diagnostics_{0};

  struct Net;
  std::unique_ptr<Net> net_;
};

}  // namespace nff::app
