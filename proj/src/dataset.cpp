#include "vbt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace vbt {

namespace {

using nlohmann::json;

json header_json(const Dataset& d) {
  return {
      {"version", kDatasetSchema},
      {"type", "header"},
      {"env", to_json(d.env)},
      {"metadata",
       {{"sources", d.metadata.sources},
        {"seeds", d.metadata.seeds},
        {"budget", d.metadata.budget},
        {"clutter_means", d.metadata.clutter_means},
        {"config_hash", d.metadata.config_hash}}},
  };
}

json header_json(const EnvConfig& env) {
  Dataset d;
  d.env = env;
  d.metadata.sources = {"human"};
  return header_json(d);
}

Observation read_features(const json& j, std::size_t expected, const char* field) {
  if (!j.is_array()) throw DatasetError(std::string(field) + " must be an array");
  Observation obs;
  obs.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw DatasetError(std::string(field) + " contains a non-numeric value");
    obs.push_back(v.get<double>());
  }
  if (obs.size() != expected) {
    throw DatasetError(std::string(field) + " has " + std::to_string(obs.size()) + " features, expected " +
                       std::to_string(expected));
  }
  return obs;
}

void check_version(const json& j) {
  if (!j.is_object() || !j.contains("version")) throw DatasetError("missing schema version");
  const auto v = j.at("version").get<std::string>();
  if (v != kDatasetSchema) {
    throw DatasetError("schema version '" + v + "' does not match '" + std::string(kDatasetSchema) + "'");
  }
}

Episode episode_from_json(const json& j, const EnvConfig& env) {
  check_version(j);
  Episode ep;
  const auto& m = j.at("metadata");
  ep.metadata.script = m.at("script").get<std::string>();
  ep.metadata.seed = m.at("seed").get<std::uint64_t>();
  ep.metadata.clutter_mean = m.at("clutter_mean").get<std::vector<double>>();
  ep.metadata.env_config_hash = m.at("env_config_hash").get<std::string>();

  const auto n = static_cast<std::size_t>(env.observation_size());
  for (const auto& t : j.at("transitions")) {
    Transition tr;
    tr.observation = read_features(t.at("obs"), n, "obs");
    tr.action = t.at("a").get<int>();
    if (tr.action < 0 || tr.action >= env.num_actions()) throw DatasetError("action id out of range");
    tr.reward = t.at("r").get<double>();
    tr.next_observation = read_features(t.at("next_obs"), n, "next_obs");
    tr.done = t.at("done").get<bool>();
    tr.succeeded = t.at("succeeded").get<bool>();
    tr.event = parse_event(t.at("event").get<std::string>());
    ep.transitions.push_back(std::move(tr));
  }
  return ep;
}

}  // namespace

std::vector<Event> Episode::events() const {
  std::vector<Event> out;
  out.reserve(transitions.size());
  for (const auto& t : transitions) out.push_back(t.event);
  return out;
}

std::int64_t Dataset::total_steps() const {
  std::int64_t n = 0;
  for (const auto& e : episodes) n += static_cast<std::int64_t>(e.size());
  return n;
}

json episode_to_json(const Episode& ep) {
  json transitions = json::array();
  for (const auto& t : ep.transitions) {
    transitions.push_back({
        {"obs", t.observation},
        {"a", t.action},
        {"r", t.reward},
        {"next_obs", t.next_observation},
        {"done", t.done},
        {"succeeded", t.succeeded},
        {"event", std::string(to_string(t.event))},
    });
  }
  return {
      {"version", kDatasetSchema},
      {"metadata",
       {{"script", ep.metadata.script},
        {"seed", ep.metadata.seed},
        {"clutter_mean", ep.metadata.clutter_mean},
        {"env_config_hash", ep.metadata.env_config_hash}}},
      {"transitions", std::move(transitions)},
  };
}

std::string serialize(const Dataset& d) {
  std::string out = header_json(d).dump();
  out += '\n';
  for (const auto& ep : d.episodes) {
    out += episode_to_json(ep).dump();
    out += '\n';
  }
  return out;
}

Dataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  Dataset d;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!have_header) {
        check_version(j);
        if (j.value("type", "") != "header") throw DatasetError("first line must be the header");
        d.env = env_config_from_json(j.at("env"));
        const auto& m = j.at("metadata");
        d.metadata.sources = m.at("sources").get<std::vector<std::string>>();
        d.metadata.seeds = m.at("seeds").get<std::vector<std::uint64_t>>();
        d.metadata.budget = m.at("budget").get<std::int64_t>();
        d.metadata.clutter_means = m.at("clutter_means").get<std::vector<std::vector<double>>>();
        d.metadata.config_hash = m.value("config_hash", "");
        have_header = true;
      } else {
        d.episodes.push_back(episode_from_json(j, d.env));
      }
    } catch (const DatasetError& e) {
      throw DatasetError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw DatasetError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      throw DatasetError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    }
  }
  if (!have_header) throw DatasetError("line 1: missing dataset header");
  return d;
}

void save(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot open '" + path.string() + "' for writing");
  out << serialize(dataset);
  if (!out) throw DatasetError("write to '" + path.string() + "' failed");
}

Dataset load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

void append_episode(const std::filesystem::path& path, const EnvConfig& env, const Episode& episode) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  if (!fresh) {
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    const auto header = json::parse(first, nullptr, false);
    if (header.is_discarded() || !header.contains("env") || env_config_from_json(header.at("env")) != env) {
      throw DatasetError("'" + path.string() + "' was written for a different env config");
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw DatasetError("cannot open '" + path.string() + "' for appending");
  if (fresh) out << header_json(env).dump() << '\n';
  out << episode_to_json(episode).dump() << '\n';
}

std::vector<StackedSample> stack(const Episode& episode, int k) {
  if (k < 1) throw ContractViolation("stack: k must be >= 1");
  const auto n = episode.transitions.size();
  std::vector<StackedSample> out;
  out.reserve(n);
  if (n == 0) return out;

  // frames[0] is the first observation, frames[t + 1] the observation after step t.
  std::vector<const Observation*> frames;
  frames.reserve(n + 1);
  frames.push_back(&episode.transitions.front().observation);
  for (const auto& t : episode.transitions) frames.push_back(&t.next_observation);

  const auto window = [&](std::size_t end) {
    std::vector<double> v;
    for (int j = k - 1; j >= 0; --j) {
      const auto idx = end >= static_cast<std::size_t>(j) ? end - static_cast<std::size_t>(j) : 0;
      v.insert(v.end(), frames[idx]->begin(), frames[idx]->end());
    }
    return v;
  };

  for (std::size_t t = 0; t < n; ++t) {
    const auto& tr = episode.transitions[t];
    out.push_back({window(t), tr.action, tr.reward, window(t + 1), tr.done});
  }
  return out;
}

FrameStack::FrameStack(int k) : k_(k) {
  if (k < 1) throw ContractViolation("FrameStack: k must be >= 1");
}

void FrameStack::reset(const Observation& first) { frames_.assign(static_cast<std::size_t>(k_), first); }

void FrameStack::push(const Observation& next) {
  if (frames_.empty()) throw ContractViolation("FrameStack::push before reset");
  frames_.erase(frames_.begin());
  frames_.push_back(next);
}

std::vector<double> FrameStack::stacked() const {
  std::vector<double> v;
  for (const auto& f : frames_) v.insert(v.end(), f.begin(), f.end());
  return v;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw DatasetError("test_fraction must lie in (0, 1)");
  const auto n = dataset.episodes.size();
  if (n < 2) throw DatasetError("split needs at least two episodes");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i + 1)));
    std::swap(order[i], order[j]);
  }
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);

  std::vector<bool> is_test(n, false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

  Dataset train{dataset.env, {}, dataset.metadata};
  Dataset test{dataset.env, {}, dataset.metadata};
  for (std::size_t i = 0; i < n; ++i) (is_test[i] ? test : train).episodes.push_back(dataset.episodes[i]);
  return {std::move(train), std::move(test)};
}

std::vector<StackedSample> sample_batch(const Dataset& dataset, int k, int batch_size, Rng& rng) {
  if (dataset.empty() || dataset.total_steps() == 0) throw DatasetError("sample_batch: dataset is empty");
  if (batch_size < 1) throw ContractViolation("sample_batch: batch_size must be >= 1");

  std::vector<std::pair<std::size_t, std::size_t>> index;
  for (std::size_t e = 0; e < dataset.episodes.size(); ++e) {
    for (std::size_t t = 0; t < dataset.episodes[e].size(); ++t) index.emplace_back(e, t);
  }
  std::vector<std::vector<StackedSample>> cache(dataset.episodes.size());
  std::vector<StackedSample> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    const auto [e, t] = index[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(index.size())))];
    if (cache[e].empty()) cache[e] = stack(dataset.episodes[e], k);
    out.push_back(cache[e][t]);
  }
  return out;
}

VbtReport validate_vbt(const Episode& episode) {
  VbtReport r;
  const auto events = episode.events();
  if (events.empty() || events.back() != Event::TerminateSuccess) {
    r.reason = "episode does not end in TerminateSuccess";
    return r;
  }
  // Work backwards from the success so that stray toggles earlier in the
  // episode do not shadow the deliberate fail/recover/succeed sequence.
  const int n = static_cast<int>(events.size());
  for (int m = n - 1; m >= 0 && r.success_index < 0; --m) {
    if (events[static_cast<std::size_t>(m)] == Event::Grasp) r.success_index = m;
  }
  if (r.success_index < 0) {
    r.reason = "no Grasp before success";
    return r;
  }
  for (int j = r.success_index - 1; j >= 0 && r.recovery_index < 0; --j) {
    if (events[static_cast<std::size_t>(j)] == Event::Release) r.recovery_index = j;
  }
  if (r.recovery_index < 0) {
    r.reason = "no recovery Release before the Grasp";
    return r;
  }
  for (int i = r.recovery_index - 1; i >= 0 && r.failure_index < 0; --i) {
    if (events[static_cast<std::size_t>(i)] == Event::MissedGrasp) r.failure_index = i;
  }
  if (r.failure_index < 0) {
    r.reason = "no MissedGrasp before the recovery";
    return r;
  }
  r.ok = true;
  return r;
}

std::string check_labels(const Episode& episode, const EnvConfig& env) {
  const auto n = episode.transitions.size();
  if (n == 0) return "episode is empty";
  if (static_cast<int>(n) > env.max_steps) return "episode longer than max_steps";
  double sum = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto& tr = episode.transitions[t];
    const bool last = t + 1 == n;
    if (tr.done != last) return "done flag set on a non-final transition (t=" + std::to_string(t) + ")";
    if (tr.reward == env.success_reward) {
      if (!last || !tr.succeeded) return "success reward on a non-final or unsuccessful transition";
    } else if (tr.reward != env.step_penalty) {
      return "reward " + std::to_string(tr.reward) + " is neither the step penalty nor the success reward";
    }
    if (tr.succeeded && !last) return "succeeded flag on a non-final transition";
    sum += tr.reward;
  }
  const double expected = episode.succeeded() ? env.success_reward + static_cast<double>(n - 1) * env.step_penalty
                                              : static_cast<double>(n) * env.step_penalty;
  if (std::abs(sum - expected) > 1e-9 * std::max(1.0, std::abs(expected))) {
    return "reward sum " + std::to_string(sum) + " violates the sparse-label identity";
  }
  return {};
}

}  // namespace vbt
