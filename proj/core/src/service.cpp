#include "cbs/service.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <set>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cbs/png_io.hpp"
#include "cbs/run_config.hpp"

namespace cbs {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

namespace {

constexpr int kApiSchema = 1;
constexpr std::size_t kMaxQueuedMessages = 16;

struct Message {
  bool binary;
  std::shared_ptr<const std::string> payload;
};

std::string base64(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

class WsSession;

class Hub {
 public:
  void join(const std::shared_ptr<WsSession>& s) {
    std::lock_guard lock(mutex_);
    sessions_.insert(s);
  }
  void leave(const std::shared_ptr<WsSession>& s) {
    std::lock_guard lock(mutex_);
    sessions_.erase(s);
  }
  bool empty() const {
    std::lock_guard lock(mutex_);
    return sessions_.empty();
  }
  void broadcast(const std::vector<Message>& batch);
  void close_all();

 private:
  mutable std::mutex mutex_;
  std::set<std::shared_ptr<WsSession>> sessions_;
};

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, Hub& hub) : ws_(std::move(socket)), hub_(hub) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
  }

  /// Queues a frame's messages as a unit; dropped whole when the client lags.
  void send(std::vector<Message> batch) {
    net::post(ws_.get_executor(), [self = shared_from_this(), batch = std::move(batch)]() mutable {
      if (self->queue_.size() + batch.size() > kMaxQueuedMessages) return;
      const bool idle = self->queue_.empty();
      for (auto& m : batch) self->queue_.push_back(std::move(m));
      if (idle) self->do_write();
    });
  }

  void close() {
    net::post(ws_.get_executor(), [self = shared_from_this()] {
      self->ws_.async_close(websocket::close_code::going_away, [self](beast::error_code) {});
    });
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    hub_.join(shared_from_this());
    do_read();
  }

  void do_read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      hub_.leave(shared_from_this());
      return;
    }
    buffer_.consume(buffer_.size());
    do_read();
  }

  void do_write() {
    ws_.binary(queue_.front().binary);
    ws_.async_write(net::buffer(*queue_.front().payload),
                    beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    if (ec) {
      hub_.leave(shared_from_this());
      queue_.clear();
      return;
    }
    queue_.pop_front();
    if (!queue_.empty()) do_write();
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<Message> queue_;
  Hub& hub_;
};

void Hub::broadcast(const std::vector<Message>& batch) {
  std::vector<std::shared_ptr<WsSession>> targets;
  {
    std::lock_guard lock(mutex_);
    targets.assign(sessions_.begin(), sessions_.end());
  }
  for (auto& s : targets) s->send(batch);
}

void Hub::close_all() {
  std::vector<std::shared_ptr<WsSession>> targets;
  {
    std::lock_guard lock(mutex_);
    targets.assign(sessions_.begin(), sessions_.end());
    sessions_.clear();
  }
  for (auto& s : targets) s->close();
}

using Request = http::request<http::string_body>;
using Response = http::response<http::string_body>;

Response json_response(const Request& req, http::status status, const json& body) {
  Response res{status, req.version()};
  res.set(http::field::server, "cbs");
  res.set(http::field::content_type, "application/json");
  res.set(http::field::access_control_allow_origin, "*");
  res.keep_alive(req.keep_alive());
  res.body() = body.dump();
  res.prepare_payload();
  return res;
}

json error_body(const std::string& message, const json& entry = nullptr) {
  return {{"schema", kApiSchema}, {"error", message}, {"entry", entry}};
}

}  // namespace

class Service::Impl {
 public:
  Impl(std::shared_ptr<const SegmentationBranch> segmentation, StyleRegistry styles, PipelineConfig config,
       std::vector<Frame> frames, ServiceOptions options)
      : options_(std::move(options)),
        frames_(std::move(frames)),
        acknowledged_(config.assignment),
        pipeline_(std::move(segmentation), std::move(styles), std::move(config)),
        acceptor_(ioc_) {
    if (frames_.empty()) throw ValidationError("service needs at least one input frame");
    build_thumbnails();
  }

  ~Impl() { stop(); }

  void start() {
    const auto address = net::ip::make_address(options_.address);
    tcp::endpoint endpoint{address, options_.port};
    acceptor_.open(endpoint.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(endpoint);
    acceptor_.listen(net::socket_base::max_listen_connections);
    port_ = acceptor_.local_endpoint().port();
    do_accept();
    for (int i = 0; i < std::max(1, options_.io_threads); ++i) io_threads_.emplace_back([this] { ioc_.run(); });
    stream_thread_ = std::thread([this] { stream_loop(); });
    spdlog::info("serve: listening on {}:{}", options_.address, port_);
  }

  void stop() {
    {
      std::lock_guard lock(stop_mutex_);
      if (stopped_) return;
      stopped_ = true;
      stopping_ = true;
    }
    stop_cv_.notify_all();
    if (stream_thread_.joinable()) stream_thread_.join();
    net::post(ioc_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
    });
    hub_.close_all();
    ioc_.stop();
    for (auto& t : io_threads_) t.join();
    io_threads_.clear();
  }

  void wait() {
    std::unique_lock lock(stop_mutex_);
    stop_cv_.wait(lock, [this] { return stopped_; });
  }

  unsigned short port() const { return port_; }

  StyleAssignment assignment() const {
    std::lock_guard lock(state_mutex_);
    return acknowledged_;
  }

 private:
  class HttpSession;

  void build_thumbnails() {
    const Frame& first = frames_.front();
    const int w = std::min(64, first.width());
    const int h = std::max(1, first.height() * w / first.width());
    const Frame small = resize(first, h, w);
    for (const auto& [id, branch] : pipeline_.styles()) {
      thumbnails_[id] = "data:image/png;base64," + base64(encode_png(branch->stylize(small)));
    }
  }

  void do_accept();

  void stream_loop() {
    std::size_t next = 0;
    auto deadline = std::chrono::steady_clock::now();
    const auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / options_.max_fps));
    FrameSource source = [&]() -> std::optional<SourceItem> {
      {
        std::unique_lock lock(stop_mutex_);
        if (stop_cv_.wait_until(lock, deadline, [this] { return stopping_; })) return std::nullopt;
      }
      deadline = std::max(deadline + period, std::chrono::steady_clock::now());
      return SourceItem{frames_[next++ % frames_.size()], {}};
    };
    try {
      pipeline_.process_stream(source, &channel_, [this](const StreamRecord& r) { publish(r); });
    } catch (const std::exception& e) {
      spdlog::error("serve: streaming loop stopped: {}", e.what());
    }
  }

  void publish(const StreamRecord& r) {
    if (r.error.empty()) {
      std::lock_guard lock(state_mutex_);
      window_.push_back(r.timings);
      while (window_.size() > options_.stats_window) window_.pop_front();
      ++frames_total_;
      last_index_ = r.frame_index;
    } else {
      std::lock_guard lock(state_mutex_);
      ++errors_total_;
    }
    if (hub_.empty()) return;
    std::vector<Message> batch;
    if (r.frame) {
      const auto png = encode_png(*r.frame);
      batch.push_back({true, std::make_shared<const std::string>(png.begin(), png.end())});
      const json timing = {{"schema", kApiSchema},
                           {"type", "timing"},
                           {"frame_index", r.frame_index},
                           {"t_seg", r.timings.t_seg},
                           {"t_style", r.timings.t_style},
                           {"t_composite", r.timings.t_composite},
                           {"t_total", r.timings.t_total},
                           {"assignment_version", r.assignment_version}};
      batch.push_back({false, std::make_shared<const std::string>(timing.dump())});
    } else {
      const json err = {{"schema", kApiSchema}, {"type", "error"}, {"frame_index", r.frame_index}, {"error", r.error}};
      batch.push_back({false, std::make_shared<const std::string>(err.dump())});
    }
    hub_.broadcast(batch);
  }

  json assignment_json() const {
    json entries = json::array();
    for (const auto& [cls, style] : acknowledged_.entries()) entries.push_back({{"class_id", cls}, {"style_id", style}});
    return {{"schema", kApiSchema}, {"entries", entries}, {"version", version_}};
  }

  Response put_assignment(const Request& req) {
    json body;
    try {
      body = json::parse(req.body());
    } catch (const json::exception& e) {
      return json_response(req, http::status::bad_request, error_body(std::string("malformed JSON: ") + e.what()));
    }
    if (!body.is_object() || !body.contains("schema") || body["schema"] != kApiSchema) {
      return json_response(req, http::status::unprocessable_entity, error_body("missing or unsupported schema"));
    }
    if (!body.contains("entries") || !body["entries"].is_array()) {
      return json_response(req, http::status::unprocessable_entity, error_body("entries must be an array"));
    }
    const auto names = pipeline_.class_names();
    StyleAssignment next;
    for (const auto& e : body["entries"]) {
      if (!e.is_object() || !e.contains("class_id") || !e["class_id"].is_number_integer() ||
          !e.contains("style_id") || !e["style_id"].is_string()) {
        return json_response(req, http::status::unprocessable_entity,
                             error_body("entry needs integer class_id and string style_id", e));
      }
      const int cls = e["class_id"].get<int>();
      const auto style = e["style_id"].get<std::string>();
      if (cls < 0 || cls >= static_cast<int>(names.size())) {
        return json_response(req, http::status::unprocessable_entity, error_body("unknown class_id", e));
      }
      if (!pipeline_.styles().contains(style)) {
        return json_response(req, http::status::unprocessable_entity, error_body("unknown style_id", e));
      }
      if (next.entries().contains(cls)) {
        return json_response(req, http::status::unprocessable_entity, error_body("duplicate class_id", e));
      }
      next.assign(cls, style);
    }
    std::lock_guard lock(state_mutex_);
    version_ = channel_.push(next);
    acknowledged_ = std::move(next);
    return json_response(req, http::status::ok, assignment_json());
  }

  json stats_json() const {
    std::lock_guard lock(state_mutex_);
    double seg = 0, style = 0, comp = 0, total = 0;
    for (const auto& t : window_) {
      seg += t.t_seg;
      style += t.t_style;
      comp += t.t_composite;
      total += t.t_total;
    }
    const double n = static_cast<double>(window_.size());
    const auto mean = [n](double v) { return n > 0 ? v / n : 0.0; };
    return {{"schema", kApiSchema},
            {"frames", frames_total_},
            {"errors", errors_total_},
            {"window", window_.size()},
            {"last_frame_index", last_index_},
            {"fps", total > 0 ? 1000.0 / mean(total) : 0.0},
            {"mean_ms", {{"seg", mean(seg)}, {"style", mean(style)}, {"composite", mean(comp)}, {"total", mean(total)}}}};
  }

  Response handle(const Request& req) {
    const std::string target(req.target());
    if (req.method() == http::verb::options) {
      Response res{http::status::no_content, req.version()};
      res.set(http::field::access_control_allow_origin, "*");
      res.set(http::field::access_control_allow_methods, "GET, PUT, OPTIONS");
      res.set(http::field::access_control_allow_headers, "Content-Type");
      res.keep_alive(req.keep_alive());
      res.prepare_payload();
      return res;
    }
    const bool get = req.method() == http::verb::get;
    if (target == "/api/classes" && get) {
      json classes = json::array();
      const auto names = pipeline_.class_names();
      for (std::size_t i = 0; i < names.size(); ++i) classes.push_back({{"index", i}, {"name", names[i]}});
      return json_response(req, http::status::ok, {{"schema", kApiSchema}, {"classes", classes}});
    }
    if (target == "/api/styles" && get) {
      json styles = json::array();
      for (const auto& [id, thumb] : thumbnails_) styles.push_back({{"id", id}, {"thumbnail", thumb}});
      return json_response(req, http::status::ok, {{"schema", kApiSchema}, {"styles", styles}});
    }
    if (target == "/api/assignment") {
      if (get) {
        std::lock_guard lock(state_mutex_);
        return json_response(req, http::status::ok, assignment_json());
      }
      if (req.method() == http::verb::put) return put_assignment(req);
      return json_response(req, http::status::method_not_allowed, error_body("use GET or PUT"));
    }
    if (target == "/api/stats" && get) return json_response(req, http::status::ok, stats_json());
    return json_response(req, http::status::not_found, error_body("no route for " + target));
  }

  ServiceOptions options_;
  std::vector<Frame> frames_;
  std::map<std::string, std::string> thumbnails_;

  mutable std::mutex state_mutex_;
  StyleAssignment acknowledged_;
  std::uint64_t version_ = 0;
  std::deque<FrameTimings> window_;
  long frames_total_ = 0;
  long errors_total_ = 0;
  long last_index_ = -1;

  Pipeline pipeline_;
  AssignmentChannel channel_;
  Hub hub_;

  net::io_context ioc_;
  tcp::acceptor acceptor_;
  unsigned short port_ = 0;
  std::vector<std::thread> io_threads_;
  std::thread stream_thread_;

  std::mutex stop_mutex_;
  std::condition_variable stop_cv_;
  bool stopping_ = false;
  bool stopped_ = false;
};

class Service::Impl::HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, Impl& impl) : stream_(std::move(socket)), impl_(impl) {}

  void run() {
    net::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpSession::do_read, shared_from_this()));
  }

 private:
  void do_read() {
    parser_.emplace();
    parser_->body_limit(1 << 20);
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, *parser_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec == http::error::end_of_stream) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    if (ec) return;
    if (websocket::is_upgrade(parser_->get())) {
      if (parser_->get().target() == "/stream") {
        stream_.expires_never();
        std::make_shared<WsSession>(stream_.release_socket(), impl_.hub_)->run(parser_->release());
        return;
      }
      send(json_response(parser_->get(), http::status::not_found, error_body("websocket endpoint is /stream")));
      return;
    }
    send(impl_.handle(parser_->get()));
  }

  void send(Response res) {
    auto sp = std::make_shared<Response>(std::move(res));
    http::async_write(stream_, *sp, [self = shared_from_this(), sp](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (sp->need_eof()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->do_read();
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  std::optional<http::request_parser<http::string_body>> parser_;
  Impl& impl_;
};

void Service::Impl::do_accept() {
  acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    std::make_shared<HttpSession>(std::move(socket), *this)->run();
    do_accept();
  });
}

Service::Service(std::shared_ptr<const SegmentationBranch> segmentation, StyleRegistry styles, PipelineConfig config,
                 std::vector<Frame> frames, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(segmentation), std::move(styles), std::move(config), std::move(frames),
                                   std::move(options))) {}

Service::~Service() = default;

void Service::start() { impl_->start(); }
void Service::stop() { impl_->stop(); }
void Service::wait() { impl_->wait(); }
unsigned short Service::port() const { return impl_->port(); }
StyleAssignment Service::assignment() const { return impl_->assignment(); }

}  // namespace cbs
