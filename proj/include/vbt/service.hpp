#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vbt/dataset.hpp"
#include "vbt/env.hpp"
#include "vbt/teleop.hpp"

namespace vbt {

inline constexpr std::string_view kTeleopProtocol = "vbt-teleop/1";

// Stable error codes of the protocol.
namespace errc {
inline constexpr const char* kBadMessage = "bad-message";
inline constexpr const char* kUnknownCmd = "unknown-cmd";
inline constexpr const char* kProtocolMismatch = "protocol-mismatch";
inline constexpr const char* kNoEpisode = "no-episode";
inline constexpr const char* kEpisodeFinished = "episode-finished";
inline constexpr const char* kEpisodeNotDone = "episode-not-done";
inline constexpr const char* kInvalidAction = "invalid-action";
inline constexpr const char* kInvalidEnv = "invalid-env";
inline constexpr const char* kLabelCheckFailed = "label-check-failed";
inline constexpr const char* kSessionClosed = "session-closed";
inline constexpr const char* kIoError = "io-error";
}  // namespace errc

struct ServiceOptions {
  EnvConfig env = EnvConfig::lift_world();
  std::filesystem::path output_dir = ".";
  // Protocol the teleoperator is asked to follow; VBT enables validation.
  std::optional<ScriptKind> hint = ScriptKind::VBT;
  // Seeds for resets that do not carry one.
  std::uint64_t seed = 0;
};

/// One teleoperation connection. Messages are handled strictly in order and
/// every reply is a single JSON object.
class Session {
 public:
  Session(std::string id, ServiceOptions options);

  nlohmann::json handle(const nlohmann::json& message);
  // Parses a text frame; malformed JSON yields a bad-message error.
  std::string handle_text(const std::string& frame);

  const std::string& id() const { return id_; }
  std::filesystem::path dataset_path() const;
  int saved_episodes() const { return saved_; }
  bool closed() const { return closed_; }

 private:
  nlohmann::json on_hello(const nlohmann::json& m);
  nlohmann::json on_reset(const nlohmann::json& m);
  nlohmann::json on_step(const nlohmann::json& m);
  nlohmann::json on_save(const nlohmann::json& m);
  nlohmann::json on_discard();
  nlohmann::json state_message(double reward, Event event) const;

  std::string id_;
  ServiceOptions options_;
  std::optional<Environment> env_;
  std::optional<Episode> episode_;
  std::uint64_t resets_ = 0;
  int saved_ = 0;
  bool closed_ = false;
};

nlohmann::json error_message(const std::string& code, const std::string& message);

/// WebSocket front end: one Session per connection, each on its own thread.
class TeleopServer {
 public:
  // Port 0 binds an ephemeral port; see port().
  TeleopServer(ServiceOptions options, std::uint16_t port, const std::string& address = "127.0.0.1");
  ~TeleopServer();

  std::uint16_t port() const;
  // Accepts connections until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace vbt
