#include <doctest.h>

#include <map>
#include <numeric>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cbs/branches.hpp"
#include "cbs/datagen.hpp"
#include "cbs/png_io.hpp"
#include "cbs/service.hpp"

using namespace cbs;
using nlohmann::json;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = boost::asio::ip::tcp;

namespace {

struct Fixture {
  Service service;
  httplib::Client http;

  explicit Fixture(double max_fps = 60.0)
      : service(std::make_shared<FullFrameSegmentation>(shape_class_names(), 1),
                {{"red", std::make_shared<ConstantStyle>(1.0, 0.0, 0.0)},
                 {"green", std::make_shared<ConstantStyle>(0.0, 1.0, 0.0)},
                 {"plain", std::make_shared<IdentityStyle>()}},
                PipelineConfig{StyleAssignment({{1, "red"}}), 0, ExecutionMode::parallel, 2},
                {Frame::filled(8, 8, 0.5, 0.5, 0.5), Frame::filled(8, 8, 0.4, 0.4, 0.4)},
                ServiceOptions{.address = "127.0.0.1", .port = 0, .max_fps = max_fps}),
        http("127.0.0.1", start_and_port(service)) {}

  static int start_and_port(Service& s) {
    s.start();
    return s.port();
  }

  httplib::Result put(const std::string& body) { return http.Put("/api/assignment", body, "application/json"); }
};

class StreamClient {
 public:
  explicit StreamClient(unsigned short port) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    boost::asio::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/stream");
  }
  ~StreamClient() {
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
  }

  // One streamed frame: the PNG, then its timing message.
  std::pair<Frame, json> next() {
    beast::flat_buffer buf;
    ws_.read(buf);
    REQUIRE(ws_.got_binary());
    const auto data = static_cast<const std::uint8_t*>(buf.data().data());
    Frame frame = decode_png(std::vector<std::uint8_t>(data, data + buf.size()));
    buf.clear();
    ws_.read(buf);
    REQUIRE(ws_.got_text());
    return {std::move(frame), json::parse(beast::buffers_to_string(buf.data()))};
  }

 private:
  boost::asio::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
};

}  // namespace

TEST_CASE("classes and styles") {
  Fixture f;
  const auto classes = f.http.Get("/api/classes");
  REQUIRE(classes);
  CHECK(classes->status == 200);
  const json c = json::parse(classes->body);
  CHECK(c["schema"] == 1);
  CHECK(c["classes"].size() == 4);
  CHECK(c["classes"][1]["name"] == "circle");
  CHECK(c["classes"][1]["index"] == 1);

  const json s = json::parse(f.http.Get("/api/styles")->body);
  REQUIRE(s["styles"].size() == 3);
  for (const auto& style : s["styles"])
    CHECK(style["thumbnail"].get<std::string>().rfind("data:image/png;base64,", 0) == 0);
  CHECK(f.http.Get("/api/nothing")->status == 404);
}

TEST_CASE("assignment replacement, validation and round trip") {
  Fixture f;
  const json initial = json::parse(f.http.Get("/api/assignment")->body);
  CHECK(initial["entries"] == json::parse(R"([{"class_id":1,"style_id":"red"}])"));

  const std::string next = R"({"schema":1,"entries":[{"class_id":2,"style_id":"green"},{"class_id":3,"style_id":"plain"}]})";
  const auto ok = f.put(next);
  REQUIRE(ok);
  CHECK(ok->status == 200);
  CHECK(json::parse(f.http.Get("/api/assignment")->body)["entries"] == json::parse(next)["entries"]);

  const auto unknown = f.put(R"({"schema":1,"entries":[{"class_id":1,"style_id":"red"},{"class_id":2,"style_id":"nope"}]})");
  CHECK(unknown->status == 422);
  CHECK(json::parse(unknown->body)["entry"] == json::parse(R"({"class_id":2,"style_id":"nope"})"));
  CHECK(json::parse(f.http.Get("/api/assignment")->body)["entries"] == json::parse(next)["entries"]);

  CHECK(f.put(R"({"schema":1,"entries":[{"class_id":7,"style_id":"red"}]})")->status == 422);
  CHECK(f.put(R"({"schema":1,"entries":[{"class_id":1,"style_id":"red"},{"class_id":1,"style_id":"green"}]})")->status ==
        422);
  CHECK(f.put(R"({"schema":2,"entries":[]})")->status == 422);
  CHECK(f.put("{not json")->status == 400);
  CHECK(f.service.assignment() == StyleAssignment({{2, "green"}, {3, "plain"}}));

  CHECK(f.put(R"({"schema":1,"entries":[]})")->status == 200);
  CHECK(f.service.assignment().empty());
}

TEST_CASE("stream carries PNG frames with timing messages and follows updates") {
  Fixture f;
  StreamClient client(f.service.port());
  auto [frame, timing] = client.next();
  CHECK(frame.height() == 8);
  CHECK(timing["schema"] == 1);
  CHECK(timing["type"] == "timing");
  for (const char* key : {"frame_index", "t_seg", "t_style", "t_composite", "t_total"}) CHECK(timing.contains(key));
  CHECK(frame.at(0, 0, 0) == 1.0);

  REQUIRE(f.put(R"({"schema":1,"entries":[{"class_id":1,"style_id":"green"}]})")->status == 200);
  bool green = false;
  for (int i = 0; i < 2 && !green; ++i) green = client.next().first.at(0, 0, 1) == 1.0;
  CHECK(green);
}

TEST_CASE("stats agree with streamed timings") {
  Fixture f(200.0);
  StreamClient client(f.service.port());
  std::map<long, double> totals;
  while (totals.size() < 110) {
    auto [frame, timing] = client.next();
    totals[timing["frame_index"].get<long>()] = timing["t_total"].get<double>();
  }
  const json stats = json::parse(f.http.Get("/api/stats")->body);
  const long last = stats["last_frame_index"].get<long>();
  while (totals.rbegin()->first < last) {
    auto [frame, timing] = client.next();
    totals[timing["frame_index"].get<long>()] = timing["t_total"].get<double>();
  }
  REQUIRE(stats["window"] == 100);
  double sum = 0.0;
  for (long i = last - 99; i <= last; ++i) sum += totals.at(i);
  const double fps = 1000.0 / (sum / 100.0);
  CHECK(std::abs(stats["fps"].get<double>() - fps) <= 0.05 * fps);
}
