#include <doctest.h>

#include <chrono>
#include <fstream>
#include <set>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "biped/errors.hpp"
#include "biped/teleop/server.hpp"

using namespace biped;
using namespace biped::teleop;
namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using json = nlohmann::json;

namespace {

PolicySnapshot standing_policy(std::uint64_t id = 0xabcdef12) {
  PolicySnapshot p;
  p.net = std::make_shared<ActorCritic>(MlpSpec{});
  p.obs_stats = RunningMeanStd(kObsDim);
  p.checkpoint_id = id;
  return p;
}

ServerOptions quick_options() {
  ServerOptions o;
  o.port = 0;
  o.rate_hz = 100.0;
  return o;
}

// Scripted client. The server streams frames continuously, so blocking reads return promptly.
class Client {
 public:
  explicit Client(unsigned short port) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    net::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/session");
  }
  ~Client() {
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
  }

  json read() {
    beast::flat_buffer buf;
    ws_.read(buf);
    return json::parse(beast::buffers_to_string(buf.data()));
  }

  // Skips frames until a message of `type` arrives.
  json read_type(const std::string& type, int max_messages = 2000) {
    for (int i = 0; i < max_messages; ++i) {
      json m = read();
      if (m.at("type") == type) return m;
    }
    FAIL("no '" << type << "' message");
    return {};
  }

  void send(const std::string& text) { ws_.write(net::buffer(text)); }

  void command(double vx, double vy, double wz, std::optional<double> t = std::nullopt) {
    json j = {{"schema", kCommandSchema}, {"type", "command"}, {"vx", vx}, {"vy", vy}, {"wz", wz}};
    if (t) j["t"] = *t;
    send(j.dump());
  }

  void reset() { send(json{{"schema", kCommandSchema}, {"type", "reset"}}.dump()); }

 private:
  net::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
};

json http_get(unsigned short port, const std::string& target, http::status* status = nullptr) {
  net::io_context ioc;
  tcp::socket sock(ioc);
  tcp::resolver resolver(ioc);
  net::connect(sock, resolver.resolve("127.0.0.1", std::to_string(port)));
  http::request<http::empty_body> req(http::verb::get, target, 11);
  req.set(http::field::host, "127.0.0.1");
  http::write(sock, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(sock, buf, res);
  if (status) *status = res.result();
  return json::parse(res.body());
}

}  // namespace

TEST_CASE("mailbox is latest-wins and drops stale messages") {
  CommandMailbox box;
  CHECK_FALSE(box.take());
  CHECK(box.post({0.1, 0, 0}, 1.0));
  CHECK(box.post({0.2, 0, 0}, 2.0));
  CHECK(box.post({0.3, 0, 0}, 3.0));
  CHECK_FALSE(box.post({0.9, 0, 0}, 2.5));
  const auto got = box.take();
  REQUIRE(got);
  CHECK((*got)[0] == 0.3);
  CHECK_FALSE(box.take());
  CHECK(box.post({0.4, 0, 0}, std::nullopt));  // untimestamped is never stale
  CHECK((*box.take())[0] == 0.4);
}

TEST_CASE("client message parsing") {
  const ClientMessage m = parse_client_message(
      R"({"schema":"biped-teleop-command/1","type":"command","vx":0.5,"vy":-0.1,"wz":0.2,"t":3})");
  CHECK(m.kind == MessageKind::Command);
  CHECK(m.command == Vec3(0.5, -0.1, 0.2));
  CHECK(m.client_time == 3.0);
  CHECK(parse_client_message(R"({"schema":"biped-teleop-command/1","type":"reset"})").kind == MessageKind::Reset);
  CHECK_THROWS_AS(parse_client_message("not json"), InputError);
  CHECK_THROWS_AS(parse_client_message("[1,2]"), InputError);
  CHECK_THROWS_AS(parse_client_message(R"({"type":"command","vx":0,"vy":0,"wz":0})"), InputError);
  CHECK_THROWS_AS(parse_client_message(R"({"schema":"biped-teleop-command/1","type":"command","vx":0,"vy":0})"),
                  InputError);
  CHECK_THROWS_AS(parse_client_message(R"({"schema":"biped-teleop-command/1","type":"jump"})"), InputError);
  CHECK_THROWS_AS(
      parse_client_message(R"({"schema":"biped-teleop-command/1","type":"command","vx":"1","vy":0,"wz":0})"),
      InputError);
}

TEST_CASE("frame json round trip and schema file agree") {
  StateFrame f;
  f.seq = 7;
  f.time = 1.25;
  f.sim_time = 3.5;
  f.drift = -0.002;
  f.episode = 2;
  f.episode_step = 62;
  f.status = EpisodeStatus::Truncated;
  f.base_position = {0.1, -0.2, 0.95};
  f.base_orientation = Eigen::Quaterniond(Eigen::AngleAxisd(0.3, Vec3::UnitZ()));
  for (int i = 0; i < kNumJoints; ++i) f.q[i] = 0.01 * i;
  f.fz = {400.0, 12.5};
  f.segment = GaitSegment::FlightLeft;
  f.phi = 0.8;
  f.command = {0.5, 0.0, -0.2};
  for (int t = 1; t <= kNumRewardTerms; ++t) f.rewards.term(t) = 0.1 * t;
  f.rewards.total = 15.3;

  const json j = to_json(f);
  const StateFrame g = frame_from_json(json::parse(j.dump()));
  CHECK(to_json(g) == j);

  std::ifstream in(std::string(BIPED_SOURCE_DIR) + "/schemas/teleop-frame.schema.json");
  REQUIRE(in);
  const json schema = json::parse(in);
  std::set<std::string> required, keys, props;
  for (const auto& k : schema.at("required")) required.insert(k.get<std::string>());
  for (const auto& [k, v] : schema.at("properties").items()) props.insert(k);
  for (const auto& [k, v] : j.items()) keys.insert(k);
  CHECK(required == keys);
  CHECK(props == keys);
  std::set<std::string> reward_keys, reward_required;
  for (const auto& [k, v] : j.at("rewards").items()) reward_keys.insert(k);
  for (const auto& k : schema.at("properties").at("rewards").at("required")) reward_required.insert(k.get<std::string>());
  CHECK(reward_keys == reward_required);

  json broken = j;
  broken.erase("q");
  CHECK_THROWS_AS(frame_from_json(broken), InputError);
  broken = j;
  broken["drift"] = "x";
  CHECK_THROWS_AS(frame_from_json(broken), InputError);
}

TEST_CASE("health, hello and identical frames for two subscribers") {
  TeleopServer server(standing_policy(), EnvConfig{}, quick_options());
  server.start();

  http::status st{};
  const json h = http_get(server.port(), "/health", &st);
  CHECK(st == http::status::ok);
  CHECK(h.at("status") == "ok");
  CHECK(h.at("checkpoint") == "abcdef12");
  CHECK(h.at("version").is_string());
  http_get(server.port(), "/nope", &st);
  CHECK(st == http::status::not_found);

  Client a(server.port()), b(server.port());
  const json hello = a.read();
  CHECK(hello.at("type") == "hello");
  CHECK(hello.at("checkpoint") == "abcdef12");
  CHECK(hello.at("control_dt") == doctest::Approx(0.02));
  CHECK(b.read().at("type") == "hello");

  // b subscribed slightly later; line up on a common sequence number
  std::map<std::uint64_t, std::string> from_a;
  for (int i = 0; i < 40; ++i) {
    const json m = a.read();
    if (m.at("type") == "frame") from_a[m.at("seq")] = m.dump();
  }
  int matched = 0;
  for (int i = 0; i < 20; ++i) {
    const json m = b.read();
    if (m.at("type") != "frame") continue;
    auto it = from_a.find(m.at("seq"));
    if (it == from_a.end()) continue;
    CHECK(it->second == m.dump());
    ++matched;
  }
  CHECK(matched >= 5);
  CHECK(server.status().subscribers == 2);
  server.stop();
}

TEST_CASE("command is clamped, acknowledged and applied") {
  TeleopServer server(standing_policy(), EnvConfig{}, quick_options());
  server.start();
  Client c(server.port());
  CHECK(c.read().at("type") == "hello");

  // the server starts on the zero command, where standing-still posture cost is active
  bool saw_posture_cost = false;
  for (int i = 0; i < 30; ++i) {
    const json f = c.read_type("frame");
    CHECK(f.at("command") == json::array({0.0, 0.0, 0.0}));
    CHECK(f.at("rewards").at("r8").get<double>() <= 0.0);
    saw_posture_cost |= f.at("rewards").at("r8").get<double>() < 0.0;
  }
  CHECK(saw_posture_cost);

  c.command(2.0, 0.0, 0.0, 1.0);
  const json ack = c.read_type("ack");
  CHECK(ack.at("command") == json::array({1.0, 0.0, 0.0}));
  CHECK(ack.at("t") == 1.0);

  json f;
  for (int i = 0; i < 100; ++i) {
    f = c.read_type("frame");
    if (f.at("command") == json::array({1.0, 0.0, 0.0})) break;
  }
  REQUIRE(f.at("command") == json::array({1.0, 0.0, 0.0}));
  for (int i = 0; i < 10; ++i) {
    CHECK(f.at("rewards").at("r8") == 0.0);
    f = c.read_type("frame");
  }
  CHECK(server.status().command == Vec3(1.0, 0.0, 0.0));

  c.command(0.5, 0.0, 0.0, 0.5);
  const json dropped = c.read_type("dropped");
  CHECK(dropped.at("reason") == "stale");
  CHECK(server.status().command == Vec3(1.0, 0.0, 0.0));

  // malformed input gets an error and the session stays usable
  c.send("{oops");
  CHECK(c.read_type("error").at("message").get<std::string>().find("JSON") != std::string::npos);
  c.command(0.2, 0.1, 0.0, 2.0);
  CHECK(c.read_type("ack").at("command") == json::array({0.2, 0.1, 0.0}));
  server.stop();
}

TEST_CASE("reset bumps the episode and keeps the checkpoint") {
  TeleopServer server(standing_policy(), EnvConfig{}, quick_options());
  server.start();
  Client c(server.port());
  c.read_type("frame");
  const std::uint64_t before = server.status().episode;
  const json checkpoint = server.health().at("checkpoint");

  c.reset();
  c.read_type("ack");
  json f;
  do f = c.read_type("frame");
  while (f.at("episode") != before + 1);
  CHECK(f.at("episode_step") == 1);
  c.reset();
  c.read_type("ack");
  do f = c.read_type("frame");
  while (f.at("episode") != before + 2);
  CHECK(f.at("episode_step") == 1);
  CHECK(server.status().episode == before + 2);
  CHECK(server.health().at("checkpoint") == checkpoint);
  server.stop();
}

TEST_CASE("only one driver at a time") {
  ServerOptions o = quick_options();
  o.driver_window = 0.3;
  TeleopServer server(standing_policy(), EnvConfig{}, o);
  server.start();
  Client a(server.port()), b(server.port());
  a.command(0.3, 0, 0);
  CHECK(a.read_type("ack").at("command")[0] == 0.3);
  b.command(-0.3, 0, 0);
  CHECK(b.read_type("error").at("message").get<std::string>().find("driver") != std::string::npos);
  std::this_thread::sleep_for(std::chrono::milliseconds(500));
  b.command(-0.3, 0, 0);
  CHECK(b.read_type("ack").at("command")[0] == -0.3);
  a.command(0.3, 0, 0);
  CHECK(a.read_type("error").at("type") == "error");
  server.stop();
}

TEST_CASE("simulation runs with no clients and the port must be free") {
  TeleopServer server(standing_policy(), EnvConfig{}, quick_options());
  server.start();
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  CHECK(server.status().steps > 10);
  CHECK(server.status().subscribers == 0);

  ServerOptions clash = quick_options();
  clash.port = server.port();
  TeleopServer second(standing_policy(), EnvConfig{}, clash);
  CHECK_THROWS_AS(second.start(), std::runtime_error);
  server.stop();
}

TEST_CASE("wall-clock pacing over 10 s") {
  ServerOptions o = quick_options();
  o.rate_hz = 50.0;
  TeleopServer server(standing_policy(), EnvConfig{}, o);
  server.start();
  std::this_thread::sleep_for(std::chrono::seconds(10));
  const ServerStatus s = server.status();
  server.stop();
  const double ratio = s.sim_time / s.wall_time;
  MESSAGE("sim/wall = " << ratio << " over " << s.wall_time << " s");
  CHECK(ratio >= 0.95);
  CHECK(ratio <= 1.05);
}

TEST_CASE("after a fall the next episode starts from standing") {
  // hidden {8}: the output bias sits just before log_std; a large bias drives the joints past their limits
  PolicySnapshot p;
  MlpSpec spec;
  spec.hidden = {8};
  p.net = std::make_shared<ActorCritic>(spec);
  p.obs_stats = RunningMeanStd(kObsDim);
  const Eigen::Index bias = (kObsDim * 8 + 8) + 8 * kActDim;
  p.net->params().segment(bias, kActDim).setConstant(5.0);

  ServerOptions o = quick_options();
  o.rate_hz = 500.0;
  TeleopServer server(p, EnvConfig{}, o);
  server.start();
  Client c(server.port());
  const json first = c.read_type("frame");
  REQUIRE(first.at("episode") == 0);
  const double z0 = first.at("base_position")[2];

  json f;
  do f = c.read_type("frame");
  while (f.at("status") == "running");
  CHECK(f.at("status") == "terminated");
  const json next = c.read_type("frame");
  CHECK(next.at("episode") == 1);
  CHECK(next.at("episode_step") == 1);
  CHECK(next.at("status") == "running");
  CHECK(std::abs(next.at("base_position")[2].get<double>() - z0) < 0.02);
  server.stop();
}

TEST_CASE("last command persists after the driver disconnects") {
  TeleopServer server(standing_policy(), EnvConfig{}, quick_options());
  server.start();
  {
    Client c(server.port());
    c.command(0.4, -0.1, 0.2);
    c.read_type("ack");
    c.read_type("frame");
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  const ServerStatus a = server.status();
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  const ServerStatus b = server.status();
  CHECK(a.subscribers == 0);
  CHECK(b.steps > a.steps);
  CHECK(b.command == Vec3(0.4, -0.1, 0.2));
  server.stop();
}

TEST_CASE("full-forward stick reaches a frame within 100 ms") {
  TeleopServer server(standing_policy(), EnvConfig{}, ServerOptions{.port = 0});
  server.start();
  Client c(server.port());
  c.read_type("frame");
  double worst = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    const double vx = rep % 2 == 0 ? 1.0 : 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    c.command(vx, 0.0, 0.0);
    json f;
    do f = c.read_type("frame");
    while (f.at("command")[0].get<double>() != vx);
    worst = std::max(worst, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    CHECK(f.at("command") == json::array({vx, 0.0, 0.0}));
  }
  MESSAGE("worst command-to-frame latency " << worst * 1e3 << " ms");
  CHECK(worst < 0.1);
  server.stop();
}
