#include "tissue/service/server.hpp"

#include <gtest/gtest.h>

using namespace tissue;
using namespace tissue::service;

namespace {

struct Reply
{
  unsigned status = 0;
  std::string body;
};

Reply request(unsigned short port, http::verb verb, const std::string& target, const std::string& body = {})
{
  net::io_context ioc;
  beast::tcp_stream stream(ioc);
  stream.connect(tcp::endpoint(net::ip::make_address("127.0.0.1"), port));
  http::request<http::string_body> req{verb, target, 11};
  req.set(http::field::host, "127.0.0.1");
  req.body() = body;
  req.prepare_payload();
  http::write(stream, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(stream, buf, res);
  beast::error_code ec;
  stream.socket().shutdown(tcp::socket::shutdown_both, ec);
  return {res.result_int(), res.body()};
}

class ServerTest : public ::testing::Test
{
protected:
  void SetUp() override
  {
    SessionConfig s;
    s.mesh_in_frames = false;
    ServerConfig c;
    c.port = 0;
    server = std::make_unique<Server>(s, c);
    server->start();
  }

  void TearDown() override { server->stop(); }

  std::unique_ptr<Server> server;
};

std::string recorded_demo(const SimConfig& scene, int tissue_points)
{
  DemoHeader h;
  h.tissue_points = tissue_points;
  h.scene_hash = scene_hash(scene);
  std::vector<DemoFrame> frames;
  for (int i = 0; i < 3; ++i) {
    frames.push_back({i / 30.0, std::vector<double>(2 * tissue_points, 100.0 + i), std::vector<double>(4, 50.0 + i)});
  }
  return serialize_demo(record(h, frames));
}

}  // namespace

TEST_F(ServerTest, HealthAndScene)
{
  const auto health = request(server->port(), http::verb::get, "/health");
  ASSERT_EQ(health.status, 200u);
  const auto j = json::parse(health.body);
  EXPECT_EQ(j["status"], "ok");
  EXPECT_EQ(j["scene_hash"], server->session().scene_hash());

  const auto scene = request(server->port(), http::verb::get, "/scene");
  ASSERT_EQ(scene.status, 200u);
  EXPECT_EQ(scene.body, server->session().scene_json());
  EXPECT_EQ(request(server->port(), http::verb::get, "/nowhere").status, 404u);
  EXPECT_EQ(request(server->port(), http::verb::get, "/runs/run_9/log.csv").status, 404u);
}

TEST_F(ServerTest, DemoUploadAndDownload)
{
  const std::string demo = recorded_demo(SimConfig{}, 4);
  const auto up = request(server->port(), http::verb::post, "/demos?name=uploaded", demo);
  ASSERT_EQ(up.status, 201u) << up.body;
  EXPECT_EQ(json::parse(up.body)["name"], "uploaded");
  const auto list = json::parse(request(server->port(), http::verb::get, "/demos").body);
  EXPECT_EQ(list["demos"], json::array({"uploaded"}));
  const auto down = request(server->port(), http::verb::get, "/demos/uploaded");
  ASSERT_EQ(down.status, 200u);
  EXPECT_EQ(down.body, demo);

  EXPECT_EQ(request(server->port(), http::verb::post, "/demos", recorded_demo(SimConfig{}, 3)).status, 400u);
  EXPECT_EQ(request(server->port(), http::verb::post, "/demos", "garbage").status, 400u);
  EXPECT_EQ(request(server->port(), http::verb::post, "/demos?name=../x", demo).status, 400u);
}

TEST_F(ServerTest, WebSocketGreetsAndStreamsFrames)
{
  net::io_context ioc;
  websocket::stream<beast::tcp_stream> ws(ioc);
  beast::get_lowest_layer(ws).connect(tcp::endpoint(net::ip::make_address("127.0.0.1"), server->port()));
  ws.handshake("127.0.0.1", "/ws");
  beast::flat_buffer buf;
  ws.read(buf);
  const auto hello = json::parse(beast::buffers_to_string(buf.data()));
  buf.consume(buf.size());
  EXPECT_EQ(hello["type"], "hello");
  EXPECT_EQ(hello["scene_hash"], server->session().scene_hash());

  ws.write(net::buffer(json{{"type", "configure"}, {"mode", "teleop"}, {"id", 7}}.dump()));
  bool acked = false;
  int frames = 0;
  for (int i = 0; i < 500 && !(acked && frames > 2); ++i) {
    ws.read(buf);
    const auto m = json::parse(beast::buffers_to_string(buf.data()));
    buf.consume(buf.size());
    if (m["type"] == "ack" && m["of"] == "configure") {
      acked = true;
      EXPECT_EQ(m["id"], 7);
      EXPECT_EQ(m["mode"], "teleop");
    }
    if (m["type"] == "state_frame") ++frames;
  }
  EXPECT_TRUE(acked);
  EXPECT_GT(frames, 2);
  ws.close(websocket::close_code::normal);
}
