#include "vbt/service.hpp"

#include <iostream>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

namespace vbt {

namespace {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;

std::optional<Action> parse_action_field(const nlohmann::json& a, int num_actions) {
  if (a.is_number_integer()) {
    const auto id = a.get<long long>();
    if (id < 0 || id >= num_actions) return std::nullopt;
    return static_cast<Action>(id);
  }
  if (a.is_string()) {
    try {
      const Action action = parse_action(a.get<std::string>());
      if (static_cast<int>(action) >= num_actions) return std::nullopt;
      return action;
    } catch (const ConfigError&) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

}  // namespace

nlohmann::json error_message(const std::string& code, const std::string& message) {
  return {{"type", "error"}, {"code", code}, {"message", message}};
}

Session::Session(std::string id, ServiceOptions options) : id_(std::move(id)), options_(std::move(options)) {
  options_.env.validate();
}

std::filesystem::path Session::dataset_path() const { return options_.output_dir / ("session-" + id_ + ".jsonl"); }

std::string Session::handle_text(const std::string& frame) {
  const auto j = nlohmann::json::parse(frame, nullptr, false);
  if (j.is_discarded()) return error_message(errc::kBadMessage, "frame is not valid JSON").dump();
  return handle(j).dump();
}

nlohmann::json Session::handle(const nlohmann::json& m) {
  if (!m.is_object() || !m.contains("cmd") || !m["cmd"].is_string()) {
    return error_message(errc::kBadMessage, "message must be an object with a string field 'cmd'");
  }
  const auto cmd = m["cmd"].get<std::string>();
  if (closed_) return error_message(errc::kSessionClosed, "session is closed");
  try {
    if (cmd == "hello") return on_hello(m);
    if (cmd == "reset") return on_reset(m);
    if (cmd == "step") return on_step(m);
    if (cmd == "save_episode") return on_save(m);
    if (cmd == "discard_episode") return on_discard();
    if (cmd == "close") {
      closed_ = true;
      return {{"type", "closed"}, {"session", id_}, {"saved_episodes", saved_}};
    }
  } catch (const nlohmann::json::exception& e) {
    return error_message(errc::kBadMessage, e.what());
  }
  return error_message(errc::kUnknownCmd, "unknown cmd '" + cmd + "'");
}

nlohmann::json Session::on_hello(const nlohmann::json& m) {
  if (m.contains("protocol") && m["protocol"] != kTeleopProtocol) {
    return error_message(errc::kProtocolMismatch, "server speaks " + std::string(kTeleopProtocol));
  }
  nlohmann::json actions = nlohmann::json::array();
  for (int a = 0; a < kLiftWorldActions; ++a) {
    actions.push_back({{"id", a}, {"name", std::string(to_string(static_cast<Action>(a)))}});
  }
  return {{"type", "hello"},
          {"protocol", kTeleopProtocol},
          {"session", id_},
          {"env_kinds", {"GridWorld", "LiftWorld"}},
          {"actions", std::move(actions)},
          {"gridworld_actions", kGridWorldActions},
          {"hint", options_.hint ? nlohmann::json(std::string(to_string(*options_.hint))) : nlohmann::json(nullptr)},
          {"env", to_json(options_.env)}};
}

nlohmann::json Session::on_reset(const nlohmann::json& m) {
  EnvConfig config = options_.env;
  if (m.contains("env")) {
    const auto& e = m["env"];
    try {
      if (e.is_string()) {
        const auto kind = parse_env_kind(e.get<std::string>());
        if (kind != config.kind) config = kind == EnvKind::LiftWorld ? EnvConfig::lift_world() : EnvConfig::grid_world();
      } else if (e.is_object()) {
        config = env_config_from_json(e);
      } else {
        return error_message(errc::kInvalidEnv, "env must be a kind name or a config object");
      }
      config.validate();
    } catch (const ConfigError& err) {
      return error_message(errc::kInvalidEnv, err.what());
    }
  }
  std::uint64_t seed;
  if (m.contains("seed")) {
    const auto& sj = m["seed"];
    if (!sj.is_number_integer() || (!sj.is_number_unsigned() && sj.get<std::int64_t>() < 0)) return error_message(errc::kBadMessage, "seed must be a non-negative integer");
    seed = m["seed"].get<std::uint64_t>();
  } else {
    seed = derive_seed(derive_seed(options_.seed, fnv1a(id_)), resets_);
  }
  ++resets_;

  // One clutter mean per session, as in a scripted collection session.
  const auto mean = draw_clutter_mean(config, derive_seed(derive_seed(options_.seed, fnv1a(id_)), 0xC1u));
  env_.emplace(config);
  env_->reset(seed, mean);
  episode_.emplace();
  episode_->metadata = {"human", seed, mean, config.hash()};
  return state_message(0.0, Event::None);
}

nlohmann::json Session::on_step(const nlohmann::json& m) {
  if (!env_ || !episode_) return error_message(errc::kNoEpisode, "reset before stepping");
  if (env_->state().done) return error_message(errc::kEpisodeFinished, "episode is finished; save, discard or reset");
  if (!m.contains("action")) return error_message(errc::kBadMessage, "step needs an 'action'");
  const auto action = parse_action_field(m["action"], env_->config().num_actions());
  if (!action) return error_message(errc::kInvalidAction, "invalid action " + m["action"].dump());

  const Observation before = env_->observation();
  const auto r = env_->step(*action);
  episode_->transitions.push_back(
      {before, static_cast<int>(*action), r.reward, r.observation, r.done, r.succeeded, r.event});
  return state_message(r.reward, r.event);
}

nlohmann::json Session::on_save(const nlohmann::json& m) {
  if (!env_ || !episode_) return error_message(errc::kNoEpisode, "no episode to save");
  if (!env_->state().done) return error_message(errc::kEpisodeNotDone, "episode is still running");

  Episode ep = *episode_;
  if (m.contains("label") && m["label"].is_string() && !m["label"].get<std::string>().empty()) {
    ep.metadata.script = m["label"].get<std::string>();
  }
  nlohmann::json vbt = nullptr;
  if (options_.hint == ScriptKind::VBT && env_->config().kind == EnvKind::LiftWorld) {
    const auto report = validate_vbt(ep);
    vbt = {{"ok", report.ok},
           {"failure_index", report.failure_index},
           {"recovery_index", report.recovery_index},
           {"success_index", report.success_index},
           {"reason", report.reason}};
    const bool acknowledged = m.value("acknowledge", false);
    if (!report.ok && !acknowledged) {
      return {{"type", "warning"},
              {"code", "vbt-validation-failed"},
              {"message", report.reason},
              {"requires_ack", true},
              {"vbt", vbt}};
    }
  }
  if (const auto problem = check_labels(ep, env_->config()); !problem.empty()) {
    return error_message(errc::kLabelCheckFailed, problem);
  }
  try {
    append_episode(dataset_path(), env_->config(), ep);
  } catch (const std::exception& e) {
    return error_message(errc::kIoError, e.what());
  }
  ++saved_;
  double ret = 0.0;
  for (const auto& t : ep.transitions) ret += t.reward;
  episode_.reset();
  return {{"type", "saved"},
          {"episode_index", saved_ - 1},
          {"steps", ep.size()},
          {"return", ret},
          {"succeeded", ep.succeeded()},
          {"label", ep.metadata.script},
          {"path", dataset_path().string()},
          {"vbt", vbt}};
}

nlohmann::json Session::on_discard() {
  if (!episode_) return error_message(errc::kNoEpisode, "no episode to discard");
  const auto steps = episode_->size();
  episode_.reset();
  return {{"type", "discarded"}, {"steps", steps}};
}

nlohmann::json Session::state_message(double reward, Event event) const {
  const auto& s = env_->state();
  auto scene = render(env_->config(), s);
  return {{"type", "state"},
          {"obs", env_->observation()},
          {"scene", std::move(scene.scene)},
          {"text", std::move(scene.text)},
          {"reward", reward},
          {"done", s.done},
          {"succeeded", s.succeeded},
          {"event", std::string(to_string(event))},
          {"step_count", s.step_count}};
}

struct TeleopServer::Impl {
  ServiceOptions options;
  asio::io_context ioc;
  tcp::acceptor acceptor;
  std::atomic<bool> stopping{false};
  std::mutex mutex;
  std::vector<std::thread> workers;
  std::uint64_t next_id = 0;
  tcp::endpoint bound;

  Impl(ServiceOptions o, std::uint16_t port, const std::string& address)
      : options(std::move(o)), acceptor(ioc, tcp::endpoint(asio::ip::make_address(address), port)) {
    bound = acceptor.local_endpoint();
  }

  void serve(tcp::socket socket, std::string id) {
    try {
      websocket::stream<tcp::socket> ws(std::move(socket));
      ws.accept();
      Session session(id, options);
      while (!session.closed()) {
        beast::flat_buffer buffer;
        ws.read(buffer);
        const auto reply = session.handle_text(beast::buffers_to_string(buffer.data()));
        ws.text(true);
        ws.write(asio::buffer(reply));
      }
      ws.close(websocket::close_code::normal);
    } catch (const beast::system_error& e) {
      if (e.code() != websocket::error::closed && !stopping) {
        std::cerr << "session " << id << ": " << e.code().message() << '\n';
      }
    } catch (const std::exception& e) {
      std::cerr << "session " << id << ": " << e.what() << '\n';
    }
  }
};

TeleopServer::TeleopServer(ServiceOptions options, std::uint16_t port, const std::string& address)
    : impl_(std::make_unique<Impl>(std::move(options), port, address)) {
  std::filesystem::create_directories(impl_->options.output_dir);
}

TeleopServer::~TeleopServer() {
  stop();
  std::lock_guard lock(impl_->mutex);
  for (auto& t : impl_->workers) {
    if (t.joinable()) t.join();
  }
}

std::uint16_t TeleopServer::port() const { return impl_->bound.port(); }

void TeleopServer::run() {
  while (!impl_->stopping) {
    tcp::socket socket(impl_->ioc);
    boost::system::error_code ec;
    impl_->acceptor.accept(socket, ec);
    if (impl_->stopping) break;
    if (ec) continue;
    std::lock_guard lock(impl_->mutex);
    const auto id = std::to_string(impl_->next_id++);
    impl_->workers.emplace_back([this, s = std::move(socket), id]() mutable { impl_->serve(std::move(s), id); });
  }
  boost::system::error_code ec;
  impl_->acceptor.close(ec);
}

void TeleopServer::stop() {
  if (impl_->stopping.exchange(true)) return;
  // A blocking accept() is not interrupted by closing the acceptor from
  // another thread, so wake it with a throwaway connection.
  boost::system::error_code ec;
  tcp::socket wake(impl_->ioc);
  wake.connect(impl_->bound, ec);
}

}  // namespace vbt
