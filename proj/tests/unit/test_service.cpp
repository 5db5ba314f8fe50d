#include <doctest.h>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <filesystem>
#include <functional>
#include <thread>

#include "vbt/service.hpp"

using namespace vbt;
using nlohmann::json;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "vbt-unit-service" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

ServiceOptions options_in(const std::filesystem::path& dir) {
  ServiceOptions o;
  o.output_dir = dir;
  return o;
}

// Drives a LiftWorld episode through the protocol: a deliberate miss beside
// the object, lift, reopen, then grasp, lift and terminate. `send` returns
// the reply to one command.
json drive_vbt_episode(const std::function<json(const json&)>& send, std::uint64_t seed) {
  json st = send({{"cmd", "reset"}, {"seed", seed}});
  const auto pos = [&] { return std::pair<int, int>{st["scene"]["gripper"]["x"], st["scene"]["gripper"]["z"]}; };
  const auto move_to = [&](int x, int z) {
    while (pos().first != x) st = send({{"cmd", "step"}, {"action", pos().first < x ? "Right" : "Left"}});
    while (pos().second != z) st = send({{"cmd", "step"}, {"action", pos().second < z ? "Up" : "Down"}});
  };
  const int ox = st["scene"]["object"]["x"];
  const int width = 7;
  const int miss_x = ox + 1 < width ? ox + 1 : ox - 1;
  move_to(miss_x, 0);
  st = send({{"cmd", "step"}, {"action", 4}});
  CHECK(st["event"] == "MissedGrasp");
  st = send({{"cmd", "step"}, {"action", "Up"}});
  st = send({{"cmd", "step"}, {"action", "ToggleGripper"}});
  CHECK(st["event"] == "Release");
  move_to(ox, 0);
  st = send({{"cmd", "step"}, {"action", "ToggleGripper"}});
  CHECK(st["event"] == "Grasp");
  move_to(ox, 3);
  st = send({{"cmd", "step"}, {"action", "Terminate"}});
  CHECK(st["done"] == true);
  CHECK(st["succeeded"] == true);
  return st;
}

}  // namespace

TEST_CASE("hello advertises the protocol and actions") {
  Session s("h", options_in(fresh_dir("hello")));
  const auto r = s.handle({{"cmd", "hello"}, {"protocol", "vbt-teleop/1"}});
  CHECK(r["type"] == "hello");
  CHECK(r["actions"].size() == 6);
  CHECK(r["actions"][5]["name"] == "Terminate");
  CHECK(r["hint"] == "VBT");
  CHECK(s.handle({{"cmd", "hello"}, {"protocol", "vbt-teleop/0"}})["code"] == errc::kProtocolMismatch);
}

TEST_CASE("error codes") {
  Session s("e", options_in(fresh_dir("errors")));
  CHECK(json::parse(s.handle_text("{oops"))["code"] == errc::kBadMessage);
  CHECK(s.handle(json::array())["code"] == errc::kBadMessage);
  CHECK(s.handle({{"cmd", "dance"}})["code"] == errc::kUnknownCmd);
  CHECK(s.handle({{"cmd", "step"}, {"action", 0}})["code"] == errc::kNoEpisode);
  CHECK(s.handle({{"cmd", "save_episode"}})["code"] == errc::kNoEpisode);
  CHECK(s.handle({{"cmd", "reset"}, {"env", "Moon"}})["code"] == errc::kInvalidEnv);
  CHECK(s.handle({{"cmd", "reset"}, {"seed", 1}})["type"] == "state");
  CHECK(s.handle({{"cmd", "step"}, {"action", 9}})["code"] == errc::kInvalidAction);
  CHECK(s.handle({{"cmd", "step"}, {"action", "Fly"}})["code"] == errc::kInvalidAction);
  CHECK(s.handle({{"cmd", "save_episode"}})["code"] == errc::kEpisodeNotDone);
  CHECK(s.handle({{"cmd", "step"}, {"action", "Terminate"}})["done"] == true);
  CHECK(s.handle({{"cmd", "step"}, {"action", "Left"}})["code"] == errc::kEpisodeFinished);
  CHECK(s.handle({{"cmd", "close"}})["type"] == "closed");
  CHECK(s.handle({{"cmd", "hello"}})["code"] == errc::kSessionClosed);
}

TEST_CASE("gridworld resets only accept its four moves") {
  Session s("g", options_in(fresh_dir("grid")));
  CHECK(s.handle({{"cmd", "reset"}, {"env", "GridWorld"}, {"seed", 2}})["type"] == "state");
  CHECK(s.handle({{"cmd", "step"}, {"action", "ToggleGripper"}})["code"] == errc::kInvalidAction);
  CHECK(s.handle({{"cmd", "step"}, {"action", "Up"}})["type"] == "state");
}

TEST_CASE("failed VBT validation needs an acknowledgement") {
  const auto dir = fresh_dir("ack");
  Session s("a", options_in(dir));
  s.handle({{"cmd", "reset"}, {"seed", 3}});
  s.handle({{"cmd", "step"}, {"action", "Terminate"}});
  const auto w = s.handle({{"cmd", "save_episode"}});
  CHECK(w["type"] == "warning");
  CHECK(w["requires_ack"] == true);
  CHECK(s.saved_episodes() == 0);
  const auto saved = s.handle({{"cmd", "save_episode"}, {"acknowledge", true}, {"label", "Failure"}});
  CHECK(saved["type"] == "saved");
  CHECK(load(s.dataset_path()).episodes.front().metadata.script == "Failure");
}

TEST_CASE("discard drops the episode") {
  Session s("d", options_in(fresh_dir("discard")));
  s.handle({{"cmd", "reset"}});
  s.handle({{"cmd", "step"}, {"action", "Left"}});
  const auto r = s.handle({{"cmd", "discard_episode"}});
  CHECK(r["type"] == "discarded");
  CHECK(r["steps"] == 1);
  CHECK(s.handle({{"cmd", "discard_episode"}})["code"] == errc::kNoEpisode);
}

TEST_CASE("a driven VBT episode saves a valid dataset") {
  const auto dir = fresh_dir("inproc");
  Session s("v", options_in(dir));
  drive_vbt_episode([&](const json& m) { return s.handle(m); }, 5);
  const auto saved = s.handle({{"cmd", "save_episode"}});
  REQUIRE(saved["type"] == "saved");
  CHECK(saved["vbt"]["ok"] == true);
  const auto d = load(s.dataset_path());
  REQUIRE(d.episodes.size() == 1);
  CHECK(validate_vbt(d.episodes.front()).ok);
  CHECK(check_labels(d.episodes.front(), d.env).empty());
  CHECK(d.episodes.front().metadata.script == "human");
}

TEST_CASE("websocket round trip") {
  namespace beast = boost::beast;
  namespace asio = boost::asio;
  const auto dir = fresh_dir("ws");
  TeleopServer server(options_in(dir), 0);
  std::thread runner([&] { server.run(); });
  {
    asio::io_context ioc;
    beast::websocket::stream<asio::ip::tcp::socket> ws(ioc);
    ws.next_layer().connect({asio::ip::make_address("127.0.0.1"), server.port()});
    ws.handshake("127.0.0.1", "/");
    const auto send = [&](const json& m) {
      ws.write(asio::buffer(m.dump()));
      beast::flat_buffer buf;
      ws.read(buf);
      return json::parse(beast::buffers_to_string(buf.data()));
    };
    CHECK(send({{"cmd", "hello"}, {"protocol", "vbt-teleop/1"}})["type"] == "hello");
    drive_vbt_episode(send, 6);
    const auto saved = send({{"cmd", "save_episode"}});
    CHECK(saved["type"] == "saved");
    CHECK(send({{"cmd", "close"}})["type"] == "closed");
    beast::error_code ec;
    ws.close(beast::websocket::close_code::normal, ec);
    const auto d = load(saved["path"].get<std::string>());
    CHECK(validate_vbt(d.episodes.front()).ok);
  }
  server.stop();
  runner.join();
}
