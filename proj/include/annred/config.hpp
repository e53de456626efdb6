#pragma once

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "annred/errors.hpp"
#include "annred/params.hpp"

namespace annred {

/// Unreadable or invalid configuration (maps to the usage exit code).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  ProblemParams params;
  int n_rho = 256;
  int n_phi = 128;
  double tol = 1e-8;
  int max_iter = 50000;
  int newton_max = 60;
  double eig_tol = 1e-8;
  std::vector<double> lambdas{50, 100, 200, 400, 800};
  int k_min = 1;
  int k_max = 12;
  int mc_samples = 400000;
  double energy_tolerance = 0.15;
  bool nodal = true;
  std::string out_dir = "out";
  std::uint64_t seed = 20240611;
  int workers = 1;

  void validate() const {
    params.validate();
    auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
    if (n_rho < 16 || n_phi < 16) fail("n_rho and n_phi must be >= 16");
    if (!(tol > 0.0) || !(eig_tol > 0.0) || !(energy_tolerance > 0.0)) fail("tolerances must be positive");
    if (max_iter < 1 || newton_max < 0) fail("iteration caps must be positive");
    if (lambdas.empty()) fail("lambdas must not be empty");
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
      if (!(lambdas[k] > 0.0) || !std::isfinite(lambdas[k])) fail("lambdas must be positive and finite");
      if (k > 0 && !(lambdas[k] > lambdas[k - 1])) fail("lambdas must be strictly increasing");
    }
    if (k_min < 1 || k_max < k_min) fail("need 1 <= k_min <= k_max");
    if (mc_samples < 0) fail("mc_samples must be >= 0");
    if (workers < 1) fail("workers must be >= 1");
  }
};

namespace detail {

template <class T>
T scalar_as(const YAML::Node& n, const std::string& key) {
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("config: bad value for '" + key + "'");
  }
}

inline std::vector<double> list_as(const YAML::Node& n, const std::string& key) {
  if (n.IsScalar()) return {scalar_as<double>(n, key)};
  if (!n.IsSequence()) throw ConfigError("config: '" + key + "' must be a number or a list");
  std::vector<double> out;
  for (const auto& e : n) out.push_back(scalar_as<double>(e, key));
  return out;
}

/// 1/eps^2, the lambda equivalent of -eps^2 Delta u + u = |u|^(p-1) u.
inline double lambda_from_epsilon(double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ConfigError("config: epsilon must be positive");
  return 1.0 / (eps * eps);
}

using Setter = std::function<void(RunConfig&, const YAML::Node&, const std::string&)>;

inline const std::map<std::string, Setter>& config_keys() {
  static const std::map<std::string, Setter> keys = {
      {"m", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.params.m = scalar_as<int>(n, k); }},
      {"a", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.params.a = scalar_as<double>(n, k); }},
      {"b", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.params.b = scalar_as<double>(n, k); }},
      {"p", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.params.p = scalar_as<double>(n, k); }},
      {"lambda",
       [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.params.lambda = scalar_as<double>(n, k); }},
      {"epsilon",
       [](RunConfig& c, const YAML::Node& n, const std::string& k) {
         c.params.lambda = lambda_from_epsilon(scalar_as<double>(n, k));
       }},
      {"lambdas", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.lambdas = list_as(n, k); }},
      {"epsilons",
       [](RunConfig& c, const YAML::Node& n, const std::string& k) {
         // Listed eps are decreasing for increasing lambda; store sorted.
         std::vector<double> lam;
         for (double e : list_as(n, k)) lam.push_back(lambda_from_epsilon(e));
         std::sort(lam.begin(), lam.end());
         c.lambdas = lam;
       }},
      {"n_rho", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.n_rho = scalar_as<int>(n, k); }},
      {"n_phi", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.n_phi = scalar_as<int>(n, k); }},
      {"tol", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.tol = scalar_as<double>(n, k); }},
      {"max_iter", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.max_iter = scalar_as<int>(n, k); }},
      {"newton_max",
       [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.newton_max = scalar_as<int>(n, k); }},
      {"eig_tol", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.eig_tol = scalar_as<double>(n, k); }},
      {"k_min", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.k_min = scalar_as<int>(n, k); }},
      {"k_max", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.k_max = scalar_as<int>(n, k); }},
      {"mc_samples",
       [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.mc_samples = scalar_as<int>(n, k); }},
      {"energy_tolerance",
       [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.energy_tolerance = scalar_as<double>(n, k); }},
      {"nodal", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.nodal = scalar_as<bool>(n, k); }},
      {"out", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.out_dir = scalar_as<std::string>(n, k); }},
      {"seed", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.seed = scalar_as<std::uint64_t>(n, k); }},
      {"workers", [](RunConfig& c, const YAML::Node& n, const std::string& k) { c.workers = scalar_as<int>(n, k); }},
  };
  return keys;
}

inline void apply_key(RunConfig& c, const std::string& key, const YAML::Node& value) {
  const auto& keys = config_keys();
  const auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second(c, value, key);
}

inline std::string env_name(const std::string& key) {
  std::string out = "ANNRED_";
  for (char ch : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

}  // namespace detail

/// Reads a flat key-value YAML document. Keys not present keep their defaults.
/// `epsilon` and `lambda` are mutually exclusive, as are `epsilons` and `lambdas`.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  YAML::Node doc;
  try {
    doc = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  if (doc.IsNull()) return base;
  if (!doc.IsMap()) throw ConfigError("config: top level must be a key-value map");
  if (doc["epsilon"] && doc["lambda"]) throw ConfigError("config: give either lambda or epsilon, not both");
  if (doc["epsilons"] && doc["lambdas"]) throw ConfigError("config: give either lambdas or epsilons, not both");
  for (const auto& kv : doc) detail::apply_key(base, kv.first.as<std::string>(), kv.second);
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) throw ConfigError("config: cannot read " + path.string());
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

/// ANNRED_<KEY> environment variables override file values; values are parsed
/// as YAML scalars or flow lists ("[50, 100]").
inline void apply_env_overrides(RunConfig& c, const std::function<const char*(const char*)>& getenv_fn = std::getenv) {
  for (const auto& [key, setter] : detail::config_keys()) {
    const char* raw = getenv_fn(detail::env_name(key).c_str());
    if (!raw) continue;
    YAML::Node n;
    try {
      n = YAML::Load(raw);
    } catch (const YAML::Exception&) {
      throw ConfigError("config: bad value in " + detail::env_name(key));
    }
    setter(c, n, key);
  }
}

/// Flat snapshot of the effective configuration (lambda form only).
inline std::string config_snapshot_yaml(const RunConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "m" << YAML::Value << c.params.m;
  out << YAML::Key << "a" << YAML::Value << c.params.a;
  out << YAML::Key << "b" << YAML::Value << c.params.b;
  out << YAML::Key << "p" << YAML::Value << c.params.p;
  out << YAML::Key << "lambda" << YAML::Value << c.params.lambda;
  out << YAML::Key << "lambdas" << YAML::Value << YAML::Flow << c.lambdas;
  out << YAML::Key << "n_rho" << YAML::Value << c.n_rho;
  out << YAML::Key << "n_phi" << YAML::Value << c.n_phi;
  out << YAML::Key << "tol" << YAML::Value << c.tol;
  out << YAML::Key << "max_iter" << YAML::Value << c.max_iter;
  out << YAML::Key << "newton_max" << YAML::Value << c.newton_max;
  out << YAML::Key << "eig_tol" << YAML::Value << c.eig_tol;
  out << YAML::Key << "k_min" << YAML::Value << c.k_min;
  out << YAML::Key << "k_max" << YAML::Value << c.k_max;
  out << YAML::Key << "mc_samples" << YAML::Value << c.mc_samples;
  out << YAML::Key << "energy_tolerance" << YAML::Value << c.energy_tolerance;
  out << YAML::Key << "nodal" << YAML::Value << c.nodal;
  out << YAML::Key << "out" << YAML::Value << c.out_dir;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "workers" << YAML::Value << c.workers;
  out << YAML::EndMap;
  return out.c_str();
}

}  // namespace annred
