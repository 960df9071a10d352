// Experiment configuration: a versioned JSON schema with strict unknown-key
// rejection (a typo'd hyperparameter must fail loudly, not silently default),
// plus the run manifest written after every successful command.
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bff/env.hpp"
#include "bff/residual.hpp"

namespace bff {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kConfigVersion = 1;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct EnvironmentConfig {
  EnvKind kind = EnvKind::Continuous;
  double gamma = 0.9;
  // continuous
  double epsilon = 0.1;
  FuncId drift;
  FuncId diffusion;
  FuncId reward;
  // discrete (benchmark ring)
  int n = 32;

  friend bool operator==(const EnvironmentConfig&, const EnvironmentConfig&) = default;

  ContinuousEnvSpec continuous_spec() const {
    ContinuousEnvSpec spec{drift, diffusion, reward, epsilon, gamma};
    spec.validate();
    return spec;
  }

  DiscreteEnvSpec discrete_spec() const {
    auto spec = DiscreteEnvSpec::ring(n, gamma);
    spec.validate();
    return spec;
  }
};

struct ApproximatorConfig {
  enum class Kind { Tabular, Mlp };
  Kind kind = Kind::Mlp;
  std::uint64_t init_seed = 1;

  friend bool operator==(const ApproximatorConfig&, const ApproximatorConfig&) = default;
};

struct TrainerBlock {
  std::string estimator = "bff_loss";
  double tau = 0.1;
  int batch_size = 1000;
  int epochs = 1;
  std::int64_t eval_every = 100;
  double beta = 0.5;
  std::uint64_t dual_seed = 2;
  std::int64_t trajectory_length = 100'000;
  double s0 = 1.0;  // discrete runs round to the nearest index

  friend bool operator==(const TrainerBlock&, const TrainerBlock&) = default;
};

struct ReferenceBlock {
  std::string kind = "auto";  // auto | exact | oracle
  std::int64_t trajectory_length = 1'000'000;
  double tau = 0.01;
  int batch_size = 1000;
  int epochs = 3;
  std::uint64_t seed = 9001;
  std::uint64_t theta_seed = 9002;
  std::optional<std::string> path;  // load instead of building

  friend bool operator==(const ReferenceBlock&, const ReferenceBlock&) = default;
};

struct BiasSweepBlock {
  std::vector<double> eps_list{0.2, 0.1, 0.05, 0.025};
  int n_outer = 4096;
  int n_inner = 64;
  std::uint64_t theta_seed = 3;

  friend bool operator==(const BiasSweepBlock&, const BiasSweepBlock&) = default;
};

// One member of a comparison; unset fields inherit the base trainer block.
struct RunSpec {
  std::string name;
  std::string estimator;
  std::optional<std::uint64_t> dual_seed;

  friend bool operator==(const RunSpec&, const RunSpec&) = default;
};

struct OutputConfig {
  std::string directory = "out";
  std::vector<std::string> formats{"csv"};

  friend bool operator==(const OutputConfig&, const OutputConfig&) = default;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::uint64_t master_seed = 0;
  EnvironmentConfig environment;
  ApproximatorConfig approximator;
  TrainerBlock trainer;
  ReferenceBlock reference;
  BiasSweepBlock bias_sweep;
  std::vector<RunSpec> runs;
  OutputConfig output;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

using json = nlohmann::json;

inline void require_keys(const json& obj, const std::string& where,
                         const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError("config error at " + where + ": expected an object");
  for (const auto& item : obj.items())
    if (!allowed.contains(item.key()))
      throw ConfigError("config error at " + where + ": unknown key '" + item.key() + "'");
}

template <class T>
void read(const json& obj, const std::string& where, const char* key, T& out) {
  if (auto it = obj.find(key); it != obj.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config error at " + where + "/" + key + ": wrong type");
    }
  }
}

inline void read_func(const json& obj, const std::string& where, const char* key, FuncId& out) {
  if (auto it = obj.find(key); it != obj.end()) {
    if (!it->is_string()) throw ConfigError("config error at " + where + "/" + key + ": expected string");
    try {
      out = FuncId::parse(it->get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError("config error at " + where + "/" + key + ": " + e.what());
    }
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "config") {
  using detail::json;
  json root;
  try {
    root = json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config error in " + origin + ": " + e.what());
  }
  detail::require_keys(root, "/",
                       {"version", "master_seed", "environment", "approximator", "trainer",
                        "reference", "bias_sweep", "runs", "output"});
  ExperimentConfig cfg;
  detail::read(root, "/", "version", cfg.version);
  if (cfg.version != kConfigVersion)
    throw ConfigError("config error at /version: unsupported schema version " +
                      std::to_string(cfg.version));
  detail::read(root, "/", "master_seed", cfg.master_seed);

  if (auto it = root.find("environment"); it != root.end()) {
    detail::require_keys(*it, "/environment",
                         {"kind", "gamma", "epsilon", "drift", "diffusion", "reward", "n"});
    std::string kind = "continuous";
    detail::read(*it, "/environment", "kind", kind);
    if (kind == "continuous") cfg.environment.kind = EnvKind::Continuous;
    else if (kind == "discrete") cfg.environment.kind = EnvKind::Discrete;
    else throw ConfigError("config error at /environment/kind: unknown kind '" + kind + "'");
    detail::read(*it, "/environment", "gamma", cfg.environment.gamma);
    detail::read(*it, "/environment", "epsilon", cfg.environment.epsilon);
    detail::read(*it, "/environment", "n", cfg.environment.n);
    detail::read_func(*it, "/environment", "drift", cfg.environment.drift);
    detail::read_func(*it, "/environment", "diffusion", cfg.environment.diffusion);
    detail::read_func(*it, "/environment", "reward", cfg.environment.reward);
  }

  if (auto it = root.find("approximator"); it != root.end()) {
    detail::require_keys(*it, "/approximator", {"kind", "init_seed"});
    std::string kind = "mlp";
    detail::read(*it, "/approximator", "kind", kind);
    if (kind == "tabular") cfg.approximator.kind = ApproximatorConfig::Kind::Tabular;
    else if (kind == "mlp") cfg.approximator.kind = ApproximatorConfig::Kind::Mlp;
    else throw ConfigError("config error at /approximator/kind: unknown kind '" + kind + "'");
    detail::read(*it, "/approximator", "init_seed", cfg.approximator.init_seed);
  }

  if (auto it = root.find("trainer"); it != root.end()) {
    detail::require_keys(*it, "/trainer",
                         {"estimator", "tau", "batch_size", "epochs", "eval_every", "beta",
                          "dual_seed", "trajectory_length", "s0"});
    detail::read(*it, "/trainer", "estimator", cfg.trainer.estimator);
    detail::read(*it, "/trainer", "tau", cfg.trainer.tau);
    detail::read(*it, "/trainer", "batch_size", cfg.trainer.batch_size);
    detail::read(*it, "/trainer", "epochs", cfg.trainer.epochs);
    detail::read(*it, "/trainer", "eval_every", cfg.trainer.eval_every);
    detail::read(*it, "/trainer", "beta", cfg.trainer.beta);
    detail::read(*it, "/trainer", "dual_seed", cfg.trainer.dual_seed);
    detail::read(*it, "/trainer", "trajectory_length", cfg.trainer.trajectory_length);
    detail::read(*it, "/trainer", "s0", cfg.trainer.s0);
    parse_estimator(cfg.trainer.estimator);  // reject unknown names early
  }

  if (auto it = root.find("reference"); it != root.end()) {
    detail::require_keys(*it, "/reference",
                         {"kind", "trajectory_length", "tau", "batch_size", "epochs", "seed",
                          "theta_seed", "path"});
    detail::read(*it, "/reference", "kind", cfg.reference.kind);
    if (cfg.reference.kind != "auto" && cfg.reference.kind != "exact" &&
        cfg.reference.kind != "oracle")
      throw ConfigError("config error at /reference/kind: unknown kind '" + cfg.reference.kind + "'");
    detail::read(*it, "/reference", "trajectory_length", cfg.reference.trajectory_length);
    detail::read(*it, "/reference", "tau", cfg.reference.tau);
    detail::read(*it, "/reference", "batch_size", cfg.reference.batch_size);
    detail::read(*it, "/reference", "epochs", cfg.reference.epochs);
    detail::read(*it, "/reference", "seed", cfg.reference.seed);
    detail::read(*it, "/reference", "theta_seed", cfg.reference.theta_seed);
    if (auto p = it->find("path"); p != it->end()) {
      if (!p->is_string()) throw ConfigError("config error at /reference/path: expected string");
      cfg.reference.path = p->get<std::string>();
    }
  }

  if (auto it = root.find("bias_sweep"); it != root.end()) {
    detail::require_keys(*it, "/bias_sweep", {"eps_list", "n_outer", "n_inner", "theta_seed"});
    detail::read(*it, "/bias_sweep", "eps_list", cfg.bias_sweep.eps_list);
    detail::read(*it, "/bias_sweep", "n_outer", cfg.bias_sweep.n_outer);
    detail::read(*it, "/bias_sweep", "n_inner", cfg.bias_sweep.n_inner);
    detail::read(*it, "/bias_sweep", "theta_seed", cfg.bias_sweep.theta_seed);
  }

  if (auto it = root.find("runs"); it != root.end()) {
    if (!it->is_array()) throw ConfigError("config error at /runs: expected an array");
    int index = 0;
    for (const auto& entry : *it) {
      const std::string where = "/runs[" + std::to_string(index++) + "]";
      detail::require_keys(entry, where, {"name", "estimator", "dual_seed"});
      RunSpec run;
      detail::read(entry, where, "name", run.name);
      detail::read(entry, where, "estimator", run.estimator);
      if (auto d = entry.find("dual_seed"); d != entry.end())
        run.dual_seed = d->get<std::uint64_t>();
      if (run.estimator.empty())
        throw ConfigError("config error at " + where + ": estimator is required");
      parse_estimator(run.estimator);
      if (run.name.empty()) run.name = run.estimator;
      cfg.runs.push_back(std::move(run));
    }
  }

  if (auto it = root.find("output"); it != root.end()) {
    detail::require_keys(*it, "/output", {"directory", "formats"});
    detail::read(*it, "/output", "directory", cfg.output.directory);
    detail::read(*it, "/output", "formats", cfg.output.formats);
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path.string());
}

inline std::string serialize_config(const ExperimentConfig& cfg) {
  using detail::json;
  json root;
  root["version"] = cfg.version;
  root["master_seed"] = cfg.master_seed;
  json env;
  env["kind"] = to_string(cfg.environment.kind);
  env["gamma"] = cfg.environment.gamma;
  if (cfg.environment.kind == EnvKind::Continuous) {
    env["epsilon"] = cfg.environment.epsilon;
    env["drift"] = cfg.environment.drift.str();
    env["diffusion"] = cfg.environment.diffusion.str();
    env["reward"] = cfg.environment.reward.str();
  } else {
    env["n"] = cfg.environment.n;
  }
  root["environment"] = env;
  root["approximator"] = {
      {"kind", cfg.approximator.kind == ApproximatorConfig::Kind::Tabular ? "tabular" : "mlp"},
      {"init_seed", cfg.approximator.init_seed}};
  root["trainer"] = {{"estimator", cfg.trainer.estimator},
                     {"tau", cfg.trainer.tau},
                     {"batch_size", cfg.trainer.batch_size},
                     {"epochs", cfg.trainer.epochs},
                     {"eval_every", cfg.trainer.eval_every},
                     {"beta", cfg.trainer.beta},
                     {"dual_seed", cfg.trainer.dual_seed},
                     {"trajectory_length", cfg.trainer.trajectory_length},
                     {"s0", cfg.trainer.s0}};
  json ref = {{"kind", cfg.reference.kind},
              {"trajectory_length", cfg.reference.trajectory_length},
              {"tau", cfg.reference.tau},
              {"batch_size", cfg.reference.batch_size},
              {"epochs", cfg.reference.epochs},
              {"seed", cfg.reference.seed},
              {"theta_seed", cfg.reference.theta_seed}};
  if (cfg.reference.path) ref["path"] = *cfg.reference.path;
  root["reference"] = ref;
  root["bias_sweep"] = {{"eps_list", cfg.bias_sweep.eps_list},
                        {"n_outer", cfg.bias_sweep.n_outer},
                        {"n_inner", cfg.bias_sweep.n_inner},
                        {"theta_seed", cfg.bias_sweep.theta_seed}};
  if (!cfg.runs.empty()) {
    json runs = json::array();
    for (const auto& run : cfg.runs) {
      json entry = {{"name", run.name}, {"estimator", run.estimator}};
      if (run.dual_seed) entry["dual_seed"] = *run.dual_seed;
      runs.push_back(entry);
    }
    root["runs"] = runs;
  }
  root["output"] = {{"directory", cfg.output.directory}, {"formats", cfg.output.formats}};
  return root.dump(2) + "\n";
}

// FNV-1a content digest, reported as 16 hex characters. Stable across runs
// and platforms; used to fingerprint configs and input files in manifests.
inline std::string content_digest(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  static const char* hex = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[i] = hex[h & 0xF];
    h >>= 4;
  }
  return std::string(buf, 16);
}

inline std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string() + " for digest");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return content_digest(buffer.str());
}

struct RunManifest {
  std::string command;
  std::string config_digest;
  std::vector<std::pair<std::string, std::string>> input_digests;
  double duration_seconds = 0.0;
  std::vector<std::string> outputs;
};

// Written atomically (temp file + rename) only after the run succeeded.
inline void write_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
  using detail::json;
  json root;
  root["schema_version"] = 1;
  root["tool"] = "bff";
  root["tool_version"] = kToolVersion;
  root["command"] = manifest.command;
  root["config_digest"] = manifest.config_digest;
  json inputs = json::object();
  for (const auto& [name, digest] : manifest.input_digests) inputs[name] = digest;
  root["input_digests"] = inputs;
  root["duration_seconds"] = manifest.duration_seconds;
  root["outputs"] = manifest.outputs;
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << root.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace bff
