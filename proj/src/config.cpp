#include "mfspike/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "mfspike/invariant.hpp"

namespace mfspike {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void Config::set(const std::string& key, const std::string& value) {
  if (key.empty()) throw std::invalid_argument("config: empty key");
  kv_[key] = value;
}

bool Config::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string Config::get(const std::string& key, const std::string& fallback) const {
  const auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

double Config::get_num(const std::string& key, double fallback) const {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' is not a number: " + it->second);
  }
}

double Config::require_num(const std::string& key) const {
  if (!has(key)) throw std::invalid_argument("config: missing required key '" + key + "'");
  return get_num(key, 0.0);
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  return std::stoull(it->second);
}

std::vector<double> Config::get_list(const std::string& key) const {
  std::vector<double> out;
  const auto it = kv_.find(key);
  if (it == kv_.end()) return out;
  std::istringstream ss(it->second);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(trim(tok)));
  return out;
}

std::string Config::canonical_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : kv_) os << k << "=" << v << "\n";
  return os.str();
}

std::uint64_t Config::hash() const {
  const std::string text = canonical_text();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash_hex(const Config& c) {
  std::ostringstream os;
  os << std::hex << c.hash();
  return os.str();
}

ModelSpec model_from_config(const Config& c) {
  const std::string dk = c.get("drift.kind", "affine");
  Drift drift;
  if (dk == "affine") {
    drift = AffineDrift{c.get_num("drift.mu", 1.0), c.get_num("drift.kappa", 0.0)};
  } else if (dk == "tabulated") {
    drift = TabulatedDrift{c.get_list("drift.x"), c.get_list("drift.values")};
  } else {
    throw std::invalid_argument("config: unknown drift.kind '" + dk + "'");
  }
  const std::string rk = c.get("rate.kind", "power");
  Rate rate;
  if (rk == "power") {
    rate = PowerRate{c.get_num("rate.p", 1.0)};
  } else if (rk == "tabulated") {
    rate = TabulatedRate{c.get_list("rate.x"), c.get_list("rate.values")};
  } else {
    throw std::invalid_argument("config: unknown rate.kind '" + rk + "'");
  }
  return ModelSpec(std::move(drift), std::move(rate), c.get_num("coupling.J", 0.0),
                   c.get_num("flow.dt", 1e-3));
}

Current current_from_config(const Config& c) {
  const std::string kind = c.get("current.kind", "constant");
  if (kind == "constant") return Current::constant(c.get_num("current.a", 0.0));
  if (kind == "exp-approach")
    return Current::exp_approach(c.get_num("current.a", 0.0), c.get_num("current.C", 0.0),
                                 c.get_num("current.lambda", 1.0));
  if (kind == "sampled") {
    SampledCurrent s;
    s.t0 = c.get_num("current.t0", 0.0);
    s.dt = c.get_num("current.dt", 1e-3);
    s.values = c.get_list("current.values");
    return Current(std::move(s));
  }
  throw std::invalid_argument("config: unknown current.kind '" + kind + "'");
}

GridMeasure measure_from_config(const Config& c, const ModelSpec& m) {
  const std::string kind = c.get("measure.kind", "delta");
  const double dx = c.get_num("measure.dx", 1e-3);
  double x_max = c.get_num("measure.x_max", 0.0);
  if (x_max <= 0.0) x_max = default_x_max(m);
  if (kind == "delta") return GridMeasure::delta(c.get_num("measure.x0", 0.0), x_max, dx);
  if (kind == "uniform")
    return GridMeasure::uniform(c.get_num("measure.lo", 0.0), c.get_num("measure.hi", 1.0),
                                dx);
  if (kind == "stationary")
    return stationary_measure(m, c.get_num("measure.a", 0.0), dx, x_max);
  if (kind == "csv") {
    std::ifstream f(c.get("measure.path"));
    if (!f) throw std::runtime_error("config: cannot open measure.path");
    return GridMeasure::from_csv(f);
  }
  throw std::invalid_argument("config: unknown measure.kind '" + kind + "'");
}

}  // namespace mfspike
