#pragma once

// HTTP + WebSocket front end for a SessionCore. One I/O thread runs every
// socket; the session runs on its own thread. They meet only at
// SessionCore::post (inbound) and the outbound sink, which hops back onto
// the I/O thread before touching any socket.

#include "tissue/service/session.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <cctype>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>

namespace tissue::service {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

struct ServerConfig
{
  std::string address = "127.0.0.1";
  /// 0 picks a free port; see Server::port().
  unsigned short port = 8765;
  /// Static UI bundle served for unmatched GETs, when set.
  std::string static_dir;
  /// Outbound messages queued per client before state frames are dropped.
  std::size_t max_queue = 64;
};

class Server;

namespace detail {

inline std::string mime_type(const std::string& path)
{
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".html") return "text/html";
  if (ext == ".js") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

inline std::string query_param(const std::string& target, const std::string& key)
{
  const auto q = target.find('?');
  if (q == std::string::npos) return {};
  std::istringstream in(target.substr(q + 1));
  std::string kv;
  while (std::getline(in, kv, '&')) {
    const auto eq = kv.find('=');
    if (eq != std::string::npos && kv.substr(0, eq) == key) return kv.substr(eq + 1);
  }
  return {};
}

inline bool safe_name(const std::string& s)
{
  if (s.empty() || s.size() > 128) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return s.find("..") == std::string::npos;
}

}  // namespace detail

class WsConnection : public std::enable_shared_from_this<WsConnection>
{
public:
  WsConnection(tcp::socket socket, Server& server, ClientId id)
    : ws_(std::move(socket)), server_(server), id_(id)
  {}

  template <class Request>
  void accept(Request req);

  void deliver(std::shared_ptr<const std::string> text, bool droppable);

  [[nodiscard]] ClientId id() const { return id_; }

private:
  void read();
  void write_next();
  void closed();

  websocket::stream<beast::tcp_stream> ws_;
  Server& server_;
  ClientId id_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  bool writing_ = false;
  bool open_ = false;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection>
{
public:
  HttpConnection(tcp::socket socket, Server& server) : stream_(std::move(socket)), server_(server) {}
  void start() { read(); }

private:
  void read();
  void on_read(beast::error_code ec);
  http::response<http::string_body> respond(const http::request<http::string_body>& req);

  beast::tcp_stream stream_;
  Server& server_;
  beast::flat_buffer buffer_;
  std::optional<http::request_parser<http::string_body>> parser_;
  std::shared_ptr<http::response<http::string_body>> res_;
};

class Server
{
public:
  Server(SessionConfig session_cfg, ServerConfig cfg)
    : cfg_(std::move(cfg)), acceptor_(ioc_),
      session_(std::move(session_cfg), [this](const Outbound& o) { on_outbound(o); })
  {
    const tcp::endpoint ep(net::ip::make_address(cfg_.address), cfg_.port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
  }

  ~Server() { stop(); }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  [[nodiscard]] unsigned short port() const { return acceptor_.local_endpoint().port(); }
  [[nodiscard]] SessionCore& session() { return session_; }
  [[nodiscard]] const ServerConfig& config() const { return cfg_; }

  void start()
  {
    accept();
    io_thread_ = std::thread([this] { ioc_.run(); });
    session_thread_ = std::jthread([this](std::stop_token st) { session_.loop(st); });
  }

  void stop()
  {
    if (session_thread_.joinable()) {
      session_thread_.request_stop();
      session_thread_.join();
    }
    if (io_thread_.joinable()) {
      net::post(ioc_, [this] {
        beast::error_code ec;
        acceptor_.close(ec);
        for (auto& [_, weak] : clients_) {
          if (auto c = weak.lock()) c->deliver(nullptr, false);
        }
      });
      ioc_.stop();
      io_thread_.join();
    }
  }

  /// Blocks the calling thread until stop() is called from elsewhere.
  void wait()
  {
    if (io_thread_.joinable()) io_thread_.join();
  }

  // used by connections (I/O thread only)
  ClientId register_client(const std::shared_ptr<WsConnection>& c)
  {
    clients_[c->id()] = c;
    return c->id();
  }
  void unregister_client(ClientId id)
  {
    clients_.erase(id);
    session_.disconnect(id);
  }
  ClientId next_client_id() { return ++client_counter_; }

private:
  void accept()
  {
    acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<HttpConnection>(std::move(socket), *this)->start();
      accept();
    });
  }

  void on_outbound(const Outbound& o)
  {
    auto text = std::make_shared<const std::string>(o.text);
    const bool droppable = o.text.find(R"("type":"state_frame")") != std::string::npos;
    net::post(ioc_, [this, to = o.to, text, droppable] {
      if (to) {
        auto it = clients_.find(*to);
        if (it != clients_.end()) {
          if (auto c = it->second.lock()) c->deliver(text, droppable);
        }
        return;
      }
      for (auto& [_, weak] : clients_) {
        if (auto c = weak.lock()) c->deliver(text, droppable);
      }
    });
  }

  ServerConfig cfg_;
  net::io_context ioc_;
  tcp::acceptor acceptor_;
  SessionCore session_;
  std::unordered_map<ClientId, std::weak_ptr<WsConnection>> clients_;
  ClientId client_counter_ = 0;
  std::thread io_thread_;
  std::jthread session_thread_;

  friend class HttpConnection;
  friend class WsConnection;
};

// ---- WebSocket -------------------------------------------------------------------

template <class Request>
void WsConnection::accept(Request req)
{
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
    if (ec) return;
    self->open_ = true;
    self->server_.register_client(self);
    json hello{{"type", "hello"}, {"client_id", self->id_}, {"scene_hash", self->server_.session().scene_hash()}};
    self->deliver(std::make_shared<const std::string>(hello.dump()), false);
    self->read();
  });
}

inline void WsConnection::read()
{
  ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) return self->closed();
    self->server_.session().post(self->id_, beast::buffers_to_string(self->buffer_.data()));
    self->buffer_.consume(self->buffer_.size());
    self->read();
  });
}

inline void WsConnection::deliver(std::shared_ptr<const std::string> text, bool droppable)
{
  if (!open_) return;
  if (!text) {
    open_ = false;
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().close(ec);
    return;
  }
  if (droppable && queue_.size() >= server_.config().max_queue) return;
  queue_.push_back(std::move(text));
  if (!writing_) write_next();
}

inline void WsConnection::write_next()
{
  if (queue_.empty() || !open_) {
    writing_ = false;
    return;
  }
  writing_ = true;
  ws_.text(true);
  ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) return self->closed();
    self->queue_.pop_front();
    self->write_next();
  });
}

inline void WsConnection::closed()
{
  if (!open_) return;
  open_ = false;
  queue_.clear();
  server_.unregister_client(id_);
}

// ---- HTTP ------------------------------------------------------------------------

inline void HttpConnection::read()
{
  parser_.emplace();
  parser_->body_limit(64 * 1024 * 1024);
  stream_.expires_after(std::chrono::seconds(30));
  http::async_read(stream_, buffer_, *parser_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    self->on_read(ec);
  });
}

inline void HttpConnection::on_read(beast::error_code ec)
{
  if (ec) {
    stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
    return;
  }
  if (websocket::is_upgrade(parser_->get())) {
    stream_.expires_never();
    auto ws = std::make_shared<WsConnection>(stream_.release_socket(), server_, server_.next_client_id());
    ws->accept(parser_->release());
    return;
  }
  const auto req = parser_->release();
  res_ = std::make_shared<http::response<http::string_body>>(respond(req));
  http::async_write(stream_, *res_, [self = shared_from_this()](beast::error_code ec2, std::size_t) {
    if (ec2 || !self->res_->keep_alive()) {
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec2);
      return;
    }
    self->read();
  });
}

inline http::response<http::string_body> HttpConnection::respond(const http::request<http::string_body>& req)
{
  const auto reply = [&](http::status status, std::string body, const std::string& type) {
    http::response<http::string_body> res{status, req.version()};
    res.set(http::field::content_type, type);
    res.set(http::field::access_control_allow_origin, "*");
    res.keep_alive(req.keep_alive());
    res.body() = std::move(body);
    res.prepare_payload();
    return res;
  };
  const auto reply_json = [&](http::status status, const json& j) { return reply(status, j.dump(), "application/json"); };

  const std::string target(req.target());
  const std::string path = target.substr(0, target.find('?'));
  SessionCore& s = server_.session();

  if (req.method() == http::verb::get && path == "/health") {
    return reply_json(http::status::ok, {{"status", "ok"},
                                         {"mode", to_string(s.mode())},
                                         {"frame", s.frame_counter()},
                                         {"scene_hash", s.scene_hash()}});
  }
  if (req.method() == http::verb::get && path == "/scene") {
    return reply(http::status::ok, s.scene_json(), "application/json");
  }
  if (req.method() == http::verb::get && path == "/runs") {
    return reply_json(http::status::ok, {{"runs", s.runs().ids()}});
  }
  if (req.method() == http::verb::get && path.rfind("/runs/", 0) == 0) {
    const std::string rest = path.substr(6);
    const auto slash = rest.find('/');
    if (slash != std::string::npos && rest.substr(slash) == "/log.csv") {
      if (auto csv = s.runs().csv(rest.substr(0, slash))) return reply(http::status::ok, *csv, "text/csv");
    }
    return reply_json(http::status::not_found, {{"error", "no such run"}});
  }
  if (path == "/demos" && req.method() == http::verb::get) {
    return reply_json(http::status::ok, {{"demos", s.demos().names()}});
  }
  if (path == "/demos" && req.method() == http::verb::post) {
    try {
      DemonstrationRecording rec = parse_demo(req.body(), "upload");
      s.check_compatible(rec);
      std::string name = detail::query_param(target, "name");
      if (!name.empty() && !detail::safe_name(name)) throw ContractViolation("invalid demo name");
      name = s.demos().add(std::move(rec), name);
      return reply_json(http::status::created, {{"name", name}});
    } catch (const std::exception& e) {
      return reply_json(http::status::bad_request, {{"error", e.what()}});
    }
  }
  if (req.method() == http::verb::get && path.rfind("/demos/", 0) == 0) {
    if (auto rec = s.demos().get(path.substr(7))) {
      return reply(http::status::ok, serialize_demo(*rec), "application/x-ndjson");
    }
    return reply_json(http::status::not_found, {{"error", "no such demo"}});
  }
  if (req.method() == http::verb::get && !server_.config().static_dir.empty()) {
    std::string rel = path == "/" ? "index.html" : path.substr(1);
    if (rel.find("..") == std::string::npos) {
      const auto file = std::filesystem::path(server_.config().static_dir) / rel;
      std::ifstream in(file, std::ios::binary);
      if (in) {
        std::ostringstream body;
        body << in.rdbuf();
        return reply(http::status::ok, body.str(), detail::mime_type(file.string()));
      }
    }
  }
  return reply_json(http::status::not_found, {{"error", "not found"}});
}

}  // namespace tissue::service
