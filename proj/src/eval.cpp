#include "vbt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace vbt {

namespace {

Eigen::MatrixXd stacked_matrix(const std::vector<StackedSample>& samples, bool next = false) {
  const auto d = samples.empty() ? 0 : static_cast<Eigen::Index>(samples.front().observation.size());
  Eigen::MatrixXd m(d, static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& v = next ? samples[i].next_observation : samples[i].observation;
    m.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(v.data(), d);
  }
  return m;
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

KeyStep summarize(std::string name, const std::vector<double>& q, const std::vector<double>& v) {
  KeyStep k;
  k.name = std::move(name);
  k.n = static_cast<int>(q.size());
  std::tie(k.mean_q, k.stderr_q) = mean_and_stderr(q);
  std::tie(k.mean_v, k.stderr_v) = mean_and_stderr(v);
  return k;
}

nlohmann::json keystep_json(const KeyStep& k) {
  return {{"name", k.name},         {"mean_q", k.mean_q},     {"mean_v", k.mean_v}, {"stderr_q", k.stderr_q},
          {"stderr_v", k.stderr_v}, {"gap", k.gap()},         {"n", k.n},           {"pooled_stderr", k.pooled_stderr()}};
}

}  // namespace

NetworkPolicy::NetworkPolicy(const TrainedModels& models, bool greedy) : models_(&models), greedy_(greedy) {}

Action NetworkPolicy::act(const EnvConfig& /*env*/, const EnvState& /*state*/, const std::vector<double>& stacked,
                          Rng& rng) {
  const Eigen::Map<const Eigen::VectorXd> x(stacked.data(), static_cast<Eigen::Index>(stacked.size()));
  const Eigen::VectorXd logits = models_->policy.forward(x);
  if (greedy_) {
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < logits.size(); ++a) {
      if (logits[a] > logits[best]) best = a;
    }
    return static_cast<Action>(best);
  }
  const Eigen::VectorXd p = softmax(logits);
  double u = rng.uniform();
  for (Eigen::Index a = 0; a < p.size(); ++a) {
    u -= p[a];
    if (u < 0.0) return static_cast<Action>(a);
  }
  return static_cast<Action>(p.size() - 1);
}

void ScriptedPolicy::begin_episode(const EnvConfig& env, const EnvState& state, Rng& rng) {
  script_ = start_script(config_, env, state, rng);
}

Action ScriptedPolicy::act(const EnvConfig& env, const EnvState& state, const std::vector<double>& /*stacked*/,
                           Rng& rng) {
  auto [action, next] = script_action(config_, env, script_, state, rng);
  script_ = next;
  return action;
}

double binomial_stderr(double p, int n) {
  if (n <= 0) return 0.0;
  return std::sqrt(p * (1.0 - p) / n);
}

std::string_view to_string(ClutterPolicy::Mode mode) {
  switch (mode) {
    case ClutterPolicy::Mode::SessionMean: return "session";
    case ClutterPolicy::Mode::EpisodeSession: return "episode-session";
    case ClutterPolicy::Mode::Uniform: return "uniform";
  }
  return "session";
}

ClutterPolicy::Mode parse_clutter_mode(std::string_view name) {
  for (auto m : {ClutterPolicy::Mode::SessionMean, ClutterPolicy::Mode::EpisodeSession, ClutterPolicy::Mode::Uniform}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("clutter mode must be 'session', 'episode-session' or 'uniform', not '" + std::string(name) + "'");
}

std::optional<std::vector<double>> deployment_clutter_mean(const EnvConfig& env, const ClutterPolicy& clutter,
                                                           std::uint64_t seed) {
  if (clutter.mode != ClutterPolicy::Mode::SessionMean) return std::nullopt;
  if (clutter.mean) return clutter.mean;
  return draw_clutter_mean(env, derive_seed(seed, 0xC1u));
}

std::optional<std::vector<double>> episode_clutter_mean(const EnvConfig& env, const ClutterPolicy& clutter,
                                                        const std::optional<std::vector<double>>& session_mean,
                                                        std::uint64_t env_seed) {
  if (clutter.mode == ClutterPolicy::Mode::EpisodeSession) return draw_clutter_mean(env, derive_seed(env_seed, 0xC1u));
  return session_mean;
}

EpisodeOutcome run_policy_episode(Policy& policy, const EnvConfig& env, std::uint64_t env_seed,
                                  const std::optional<std::vector<double>>& clutter_mean, Rng& rng) {
  Environment e(env);
  FrameStack frames(policy.frame_stack_k());
  frames.reset(e.reset(env_seed, clutter_mean));
  policy.begin_episode(env, e.state(), rng);
  EpisodeOutcome out;
  while (!e.state().done) {
    const Action a = policy.act(env, e.state(), frames.stacked(), rng);
    const auto r = e.step(a);
    frames.push(r.observation);
    out.final_event = r.event;
  }
  out.succeeded = e.state().succeeded;
  out.length = e.state().step_count;
  return out;
}

RolloutReport rollout(Policy& policy, const EnvConfig& env, int n_episodes, std::uint64_t seed,
                      const ClutterPolicy& clutter) {
  if (n_episodes < 1) throw ContractViolation("rollout: n_episodes must be >= 1");
  const auto mean = deployment_clutter_mean(env, clutter, seed);
  RolloutReport r;
  r.n = n_episodes;
  long total_length = 0;
  for (int i = 0; i < n_episodes; ++i) {
    const auto env_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    Rng rng(derive_seed(env_seed, 0xAC7u));
    const auto o = run_policy_episode(policy, env, env_seed, episode_clutter_mean(env, clutter, mean, env_seed), rng);
    r.successes += o.succeeded ? 1 : 0;
    total_length += o.length;
  }
  r.success_rate = static_cast<double>(r.successes) / n_episodes;
  r.stderr_ = binomial_stderr(r.success_rate, n_episodes);
  r.mean_length = static_cast<double>(total_length) / n_episodes;
  return r;
}

nlohmann::json to_json(const RolloutReport& r) {
  return {{"n", r.n},
          {"successes", r.successes},
          {"success_rate", r.success_rate},
          {"stderr", r.stderr_},
          {"mean_length", r.mean_length}};
}

TraceSeries trace(const TrainedModels& models, const Episode& episode) {
  if (!models.has_critic()) throw ContractViolation("no critic: BC models cannot be traced");
  const auto samples = stack(episode, models.frame_stack_k);
  TraceSeries out;
  if (samples.empty()) return out;
  const auto obs = stacked_matrix(samples);
  const Eigen::MatrixXd qs = q_values(models, obs);
  const Eigen::VectorXd vs = state_values(models, obs);
  for (std::size_t t = 0; t < samples.size(); ++t) {
    const auto i = static_cast<Eigen::Index>(t);
    out.push_back({static_cast<int>(t), qs(samples[t].action, i), vs[i], episode.transitions[t].event});
  }
  return out;
}

std::string trace_csv(const TraceSeries& series) {
  std::ostringstream out;
  out << "t,q,v,event\n";
  for (const auto& r : series) out << r.t << ',' << fmt(r.q) << ',' << fmt(r.v) << ',' << to_string(r.event) << '\n';
  return out.str();
}

int sharpest_q_drop(const TraceSeries& series) {
  int best = -1;
  double drop = std::numeric_limits<double>::infinity();
  for (std::size_t t = 1; t < series.size(); ++t) {
    const double d = series[t].q - series[t - 1].q;
    if (d < drop) {
      drop = d;
      best = static_cast<int>(t);
    }
  }
  return best;
}

double KeyStep::pooled_stderr() const { return std::hypot(stderr_q, stderr_v); }

std::pair<double, double> mean_and_stderr(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n) / std::sqrt(n)};
}

KeyStepStats keystep_stats(const TrainedModels& models, std::span<const Episode> test_set) {
  if (!models.has_critic()) throw ContractViolation("no critic: BC models have no key-step values");
  std::vector<double> q[3], v[3];
  for (std::size_t e = 0; e < test_set.size(); ++e) {
    const auto report = validate_vbt(test_set[e]);
    if (!report.ok) {
      throw ContractViolation("keystep_stats: test episode " + std::to_string(e) + " fails validate_vbt (" +
                              report.reason + ")");
    }
    const auto series = trace(models, test_set[e]);
    const int idx[3] = {report.failure_index, report.recovery_index, report.success_index};
    for (int k = 0; k < 3; ++k) {
      q[k].push_back(series[static_cast<std::size_t>(idx[k])].q);
      v[k].push_back(series[static_cast<std::size_t>(idx[k])].v);
    }
  }
  return {summarize("missed_grasp", q[0], v[0]), summarize("recovery_open", q[1], v[1]),
          summarize("successful_grasp", q[2], v[2])};
}

std::string keystep_csv(const KeyStepStats& s) {
  std::ostringstream out;
  out << "key_step,n,mean_q,stderr_q,mean_v,stderr_v,gap\n";
  for (const KeyStep* k : {&s.missed_grasp, &s.recovery_open, &s.successful_grasp}) {
    out << k->name << ',' << k->n << ',' << fmt(k->mean_q) << ',' << fmt(k->stderr_q) << ',' << fmt(k->mean_v) << ','
        << fmt(k->stderr_v) << ',' << fmt(k->gap()) << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const KeyStepStats& s) {
  return {{"missed_grasp", keystep_json(s.missed_grasp)},
          {"recovery_open", keystep_json(s.recovery_open)},
          {"successful_grasp", keystep_json(s.successful_grasp)}};
}

double wasserstein1(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ContractViolation("wasserstein1: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  // Sweep the merged support; between consecutive points both CDFs are flat.
  std::size_t i = 0, j = 0;
  double x = std::min(a.front(), b.front());
  double total = 0.0;
  while (i < a.size() || j < b.size()) {
    double next;
    if (j == b.size() || (i < a.size() && a[i] <= b[j])) {
      next = a[i];
    } else {
      next = b[j];
    }
    total += std::abs(i / na - j / nb) * (next - x);
    x = next;
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
  }
  return total;
}

std::vector<double> dataset_q_values(const TrainedModels& models, const Dataset& dataset) {
  if (!models.has_critic()) throw ContractViolation("no critic: BC models have no Q values");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(dataset.total_steps()));
  for (const auto& ep : dataset.episodes) {
    const auto samples = stack(ep, models.frame_stack_k);
    if (samples.empty()) continue;
    const Eigen::MatrixXd qs = q_values(models, stacked_matrix(samples));
    for (std::size_t t = 0; t < samples.size(); ++t) out.push_back(qs(samples[t].action, static_cast<Eigen::Index>(t)));
  }
  return out;
}

HistogramReport q_histograms(const TrainedModels& models, const Dataset& train_set, const Dataset& test_set,
                             int bins) {
  if (bins < 1) throw ContractViolation("q_histograms: bins must be >= 1");
  HistogramReport r;
  r.train_q = dataset_q_values(models, train_set);
  r.test_q = dataset_q_values(models, test_set);
  r.divergence = wasserstein1(r.train_q, r.test_q);

  double lo = std::min(*std::min_element(r.train_q.begin(), r.train_q.end()),
                       *std::min_element(r.test_q.begin(), r.test_q.end()));
  double hi = std::max(*std::max_element(r.train_q.begin(), r.train_q.end()),
                       *std::max_element(r.test_q.begin(), r.test_q.end()));
  if (hi == lo) hi = lo + 1.0;
  for (int b = 0; b <= bins; ++b) r.bin_edges.push_back(lo + (hi - lo) * b / bins);
  const auto count = [&](const std::vector<double>& values) {
    std::vector<int> c(static_cast<std::size_t>(bins), 0);
    for (double v : values) {
      auto b = static_cast<int>((v - lo) / (hi - lo) * bins);
      c[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))] += 1;
    }
    return c;
  };
  r.train_counts = count(r.train_q);
  r.test_counts = count(r.test_q);
  return r;
}

std::string histogram_csv(const HistogramReport& r) {
  std::ostringstream out;
  out << "bin_lo,bin_hi,train_count,test_count\n";
  for (std::size_t b = 0; b < r.train_counts.size(); ++b) {
    out << fmt(r.bin_edges[b]) << ',' << fmt(r.bin_edges[b + 1]) << ',' << r.train_counts[b] << ','
        << r.test_counts[b] << '\n';
  }
  return out.str();
}

const ABRow& ABTestReport::row(const std::string& dataset, const std::string& algorithm) const {
  for (const auto& r : rows) {
    if (r.dataset == dataset && r.algorithm == algorithm) return r;
  }
  throw ContractViolation("ab report has no arm " + dataset + "/" + algorithm);
}

ABTestReport ab_test(std::span<const ABArm> arms, const EnvConfig& env, int total_episodes, std::uint64_t seed,
                     const ClutterPolicy& clutter) {
  if (arms.size() < 2) throw ContractViolation("ab_test: need at least two arms");
  if (total_episodes < static_cast<int>(arms.size())) throw ContractViolation("ab_test: fewer episodes than arms");
  std::vector<std::size_t> canonical(arms.size());
  std::iota(canonical.begin(), canonical.end(), 0);
  std::sort(canonical.begin(), canonical.end(), [&](auto a, auto b) { return arms[a].name() < arms[b].name(); });
  for (std::size_t i = 1; i < canonical.size(); ++i) {
    if (arms[canonical[i]].name() == arms[canonical[i - 1]].name()) {
      throw ContractViolation("ab_test: duplicate arm " + arms[canonical[i]].name());
    }
  }

  ABTestReport report;
  report.total_episodes = total_episodes;
  report.seed = seed;
  for (const auto& a : arms) report.rows.push_back({a.dataset, a.algorithm});

  const auto mean = deployment_clutter_mean(env, clutter, seed);
  Rng assign(derive_seed(seed, 0xA55u));
  for (int e = 0; e < total_episodes; ++e) {
    const auto arm = canonical[static_cast<std::size_t>(assign.uniform_int(static_cast<int>(arms.size())))];
    const auto env_seed = derive_seed(seed, static_cast<std::uint64_t>(e));
    Rng rng(derive_seed(env_seed, 0xAC7u));
    const auto o =
        run_policy_episode(*arms[arm].policy, env, env_seed, episode_clutter_mean(env, clutter, mean, env_seed), rng);
    auto& row = report.rows[arm];
    row.n += 1;
    row.successes += o.succeeded ? 1 : 0;
  }
  for (auto& row : report.rows) {
    row.success_rate = row.n > 0 ? static_cast<double>(row.successes) / row.n : 0.0;
    row.stderr_ = binomial_stderr(row.success_rate, row.n);
  }
  return report;
}

std::string ab_table_csv(const ABTestReport& r) {
  std::ostringstream out;
  out << "dataset,policy,n,successes,success_rate,stderr\n";
  for (const auto& row : r.rows) {
    out << row.dataset << ',' << row.algorithm << ',' << row.n << ',' << row.successes << ','
        << fmt(row.success_rate) << ',' << fmt(row.stderr_) << '\n';
  }
  return out.str();
}

std::string ab_table_text(const ABTestReport& r) {
  std::ostringstream out;
  out << "Dataset          Policy  Success      n\n";
  for (const auto& row : r.rows) {
    char line[128];
    std::snprintf(line, sizeof line, "%-16s %-7s %3.0f +- %-3.0f %4d\n", row.dataset.c_str(), row.algorithm.c_str(),
                  100.0 * row.success_rate, 100.0 * row.stderr_, row.n);
    out << line;
  }
  out << "total episodes " << r.total_episodes << ", assignment seed " << r.seed << '\n';
  return out.str();
}

nlohmann::json to_json(const ABTestReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"dataset", row.dataset},
                    {"policy", row.algorithm},
                    {"n", row.n},
                    {"successes", row.successes},
                    {"success_rate", row.success_rate},
                    {"stderr", row.stderr_}});
  }
  return {{"total_episodes", r.total_episodes}, {"seed", r.seed}, {"arms", std::move(rows)}};
}

}  // namespace vbt
