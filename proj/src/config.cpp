#include "hbda/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "hbda/errors.hpp"
#include "presets.inc"

namespace hbda {

using nlohmann::json;

namespace {

class TomlParser {
 public:
  explicit TomlParser(const std::string& text) : text_(text) {}

  json parse() {
    json root = json::object();
    json* table = &root;
    std::istringstream in(text_);
    std::string raw;
    while (std::getline(in, raw)) {
      ++line_;
      line_text_ = raw;
      pos_ = 0;
      skip_ws();
      if (at_end()) continue;
      if (peek() == '[') {
        table = &open_table(root);
      } else {
        const std::string key = parse_key();
        skip_ws();
        expect('=');
        skip_ws();
        json value = parse_value();
        if (table->contains(key)) fail("duplicate key '" + key + "'");
        (*table)[key] = std::move(value);
      }
      skip_ws();
      if (!at_end()) fail("unexpected trailing text");
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("config line " + std::to_string(line_) + ": " + what);
  }

  bool at_end() const { return pos_ >= line_text_.size() || line_text_[pos_] == '#'; }
  char peek() const { return pos_ < line_text_.size() ? line_text_[pos_] : '\0'; }
  void skip_ws() {
    while (pos_ < line_text_.size() && (line_text_[pos_] == ' ' || line_text_[pos_] == '\t' ||
                                        line_text_[pos_] == '\r'))
      ++pos_;
  }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  static bool key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  }

  std::string parse_key() {
    const std::size_t start = pos_;
    while (pos_ < line_text_.size() && key_char(line_text_[pos_])) ++pos_;
    if (pos_ == start) fail("expected a key");
    return line_text_.substr(start, pos_ - start);
  }

  json& open_table(json& root) {
    expect('[');
    json* t = &root;
    while (true) {
      skip_ws();
      const std::string part = parse_key();
      if (!t->contains(part)) (*t)[part] = json::object();
      t = &(*t)[part];
      if (!t->is_object()) fail("'" + part + "' is not a table");
      skip_ws();
      if (peek() == '.') {
        ++pos_;
        continue;
      }
      expect(']');
      break;
    }
    if (!defined_tables_.insert(line_text_.substr(0, pos_)).second) fail("table defined twice");
    return *t;
  }

  json parse_value() {
    const char c = peek();
    if (c == '"') return parse_string();
    if (c == '[') return parse_array();
    if (line_text_.compare(pos_, 4, "true") == 0) {
      pos_ += 4;
      return true;
    }
    if (line_text_.compare(pos_, 5, "false") == 0) {
      pos_ += 5;
      return false;
    }
    return parse_number();
  }

  json parse_string() {
    expect('"');
    std::string out;
    while (true) {
      if (pos_ >= line_text_.size()) fail("unterminated string");
      const char c = line_text_[pos_++];
      if (c == '"') break;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (pos_ >= line_text_.size()) fail("unterminated escape");
      switch (line_text_[pos_++]) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        default: fail("unsupported escape");
      }
    }
    return out;
  }

  json parse_array() {
    expect('[');
    json arr = json::array();
    skip_ws();
    if (peek() == ']') {
      ++pos_;
      return arr;
    }
    while (true) {
      skip_ws();
      arr.push_back(parse_value());
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        skip_ws();
        if (peek() == ']') {
          ++pos_;
          return arr;
        }
        continue;
      }
      expect(']');
      return arr;
    }
  }

  json parse_number() {
    const std::size_t start = pos_;
    while (pos_ < line_text_.size()) {
      const char c = line_text_[pos_];
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '+' || c == '-' || c == '_')
        ++pos_;
      else
        break;
    }
    std::string tok;
    for (std::size_t i = start; i < pos_; ++i)
      if (line_text_[i] != '_') tok += line_text_[i];
    if (tok.empty()) fail("expected a value");
    const char* b = tok.data();
    const char* e = tok.data() + tok.size();
    const bool integral = tok.find_first_of(".eEni") == std::string::npos;
    if (integral) {
      if (tok[0] == '-') {
        std::int64_t v = 0;
        auto [p, ec] = std::from_chars(b, e, v);
        if (ec == std::errc() && p == e) return v;
      } else {
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(tok[0] == '+' ? b + 1 : b, e, v);
        if (ec == std::errc() && p == e) return v;
      }
      fail("bad integer '" + tok + "'");
    }
    double v = 0.0;
    auto [p, ec] = std::from_chars(tok[0] == '+' ? b + 1 : b, e, v);
    if (ec != std::errc() || p != e) fail("bad value '" + tok + "'");
    return v;
  }

  const std::string& text_;
  std::string line_text_;
  std::size_t pos_ = 0;
  int line_ = 0;
  std::set<std::string> defined_tables_;
};

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("'" + where + "' must be a table");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : obj.items())
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
T get(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad type for '" + std::string(key) + "' in " + where);
  }
}

double get_num(const json& obj, const char* key, double fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_number()) throw ConfigError("'" + std::string(key) + "' in " + where + " must be a number");
  return obj.at(key).get<double>();
}

std::uint64_t get_count(const json& obj, const char* key, std::uint64_t fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  if (v.is_number_float() && v.get<double>() >= 0 && v.get<double>() == std::floor(v.get<double>()))
    return static_cast<std::uint64_t>(v.get<double>());
  throw ConfigError("'" + std::string(key) + "' in " + where + " must be a non-negative integer");
}

std::array<double, 2> get_pair(const json& obj, const char* key, std::array<double, 2> fallback,
                               const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ConfigError("'" + std::string(key) + "' in " + where + " must be a two-number array");
  return {v[0].get<double>(), v[1].get<double>()};
}

template <class F>
auto wrap(F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

const char* filter_name(FilterPath p) {
  switch (p) {
    case FilterPath::kDiagonal: return "diagonal";
    case FilterPath::kDense: return "dense";
    default: return "auto";
  }
}

}  // namespace

json parse_toml(const std::string& text) { return TomlParser(text).parse(); }

json load_toml(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_toml(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& p : kPresets) out.emplace_back(p.name);
  return out;
}

std::string preset_text(const std::string& name) {
  for (const auto& p : kPresets)
    if (name == p.name) return p.text;
  std::string known;
  for (const auto& p : kPresets) known += std::string(known.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

void merge_json(json& base, const json& patch) {
  if (!base.is_object() || !patch.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [k, v] : patch.items()) {
    if (base.contains(k) && base[k].is_object() && v.is_object())
      merge_json(base[k], v);
    else
      base[k] = v;
  }
}

NsConfig ExperimentConfig::ns_solver_config(const LatticePtr& lattice) const {
  NsConfig c;
  c.eta = ns.eta;
  c.dt = ns.dt;
  c.n = n;
  c.forcing = perp_gradient_cosine(lattice, ns.forcing, ns.forcing_amplitude);
  return c;
}

json resolved_config(const ExperimentConfig& c) {
  json j;
  j["case"] = c.case_name;
  j["n"] = c.n;
  j["seed"] = c.seed;
  j["output"] = c.output.string();
  j["forecast"] = {{"horizon", c.forecast.horizon},
                   {"step", c.forecast.step},
                   {"max_samples", c.forecast.max_samples}};
  if (!c.is_spde()) {
    const auto& e = c.ns;
    j["ns"] = {{"eta", e.eta},
               {"delta", e.delta},
               {"dt", e.dt},
               {"T", e.T},
               {"sites", e.sites},
               {"tau2", e.tau2},
               {"forcing", {e.forcing.k1, e.forcing.k2}},
               {"forcing_amplitude", e.forcing_amplitude},
               {"truth_alpha", e.truth_alpha},
               {"truth_beta2", e.truth_beta2},
               {"spinup", e.spinup}};
    const auto& m = c.ns_sampler;
    j["sampler"] = {{"iterations", m.iterations},
                    {"burn_in", m.burn_in},
                    {"thin", m.thin},
                    {"checkpoint_every", c.checkpoint_every},
                    {"p_v", m.p_v},
                    {"p_beta2", m.p_beta2},
                    {"p_alpha", m.p_alpha},
                    {"rho", m.pcn.rho},
                    {"adapt", m.pcn.adapt},
                    {"adapt_target", m.pcn.adapt_target},
                    {"rho_alpha", m.rho_alpha},
                    {"alpha_prior", {m.alpha_prior.lo, m.alpha_prior.hi}},
                    {"beta2_prior", {m.beta2_prior.a, m.beta2_prior.b}}};
    if (m.alpha0) j["sampler"]["alpha0"] = *m.alpha0;
    if (m.beta2_0) j["sampler"]["beta2_0"] = *m.beta2_0;
  } else {
    const auto& e = c.spde;
    j["spde"] = {{"T", e.T},
                 {"delta", e.delta},
                 {"full_grid", e.full_grid},
                 {"sites", e.sites},
                 {"truth", to_json(e.truth)}};
    const auto& m = c.spde_sampler;
    j["sampler"] = {{"iterations", m.iterations},
                    {"burn_in", m.burn_in},
                    {"thin", m.thin},
                    {"checkpoint_every", c.checkpoint_every},
                    {"warmup", m.warmup},
                    {"estimate_alpha", m.estimate_alpha},
                    {"rho_alpha", m.rho_alpha},
                    {"initial_step", m.initial_step},
                    {"adapt_target", m.adapt_target},
                    {"filter", filter_name(m.filter)},
                    {"alpha_prior", {m.priors.alpha.lo, m.priors.alpha.hi}},
                    {"start", to_json(m.start)}};
  }
  return j;
}

ExperimentConfig experiment_from_json(const json& doc) {
  ExperimentConfig cfg;
  check_keys(doc, "top level", {"case", "n", "seed", "output", "ns", "spde", "sampler", "forecast"});
  cfg.case_name = get<std::string>(doc, "case", cfg.case_name, "top level");
  if (cfg.case_name != "ns" && cfg.case_name != "spde")
    throw ConfigError("case must be \"ns\" or \"spde\", got \"" + cfg.case_name + "\"");
  if (!doc.contains("seed")) throw ConfigError("seed is mandatory (config key 'seed' or --seed)");
  cfg.seed = get_count(doc, "seed", 0, "top level");
  const std::uint64_t n = get_count(doc, "n", 16, "top level");
  if (n < 4 || n > 1024 || n % 2 != 0) throw ConfigError("n must be even and lie in [4, 1024]");
  cfg.n = static_cast<int>(n);
  cfg.output = get<std::string>(doc, "output", cfg.output.string(), "top level");

  const json empty = json::object();
  const json& sampler = doc.contains("sampler") ? doc["sampler"] : empty;
  const json& fc = doc.contains("forecast") ? doc["forecast"] : empty;

  check_keys(fc, "[forecast]", {"horizon", "step", "max_samples"});
  cfg.forecast.horizon = get_num(fc, "horizon", cfg.forecast.horizon, "[forecast]");
  cfg.forecast.step = get_num(fc, "step", cfg.forecast.step, "[forecast]");
  cfg.forecast.max_samples = static_cast<int>(get_count(fc, "max_samples", cfg.forecast.max_samples, "[forecast]"));
  if (!(cfg.forecast.horizon >= 0) || !(cfg.forecast.step > 0) || cfg.forecast.max_samples < 1)
    throw ConfigError("[forecast] needs horizon >= 0, step > 0 and max_samples >= 1");

  if (!cfg.is_spde()) {
    if (doc.contains("spde")) throw ConfigError("[spde] given for case \"ns\"");
    const json& ns = doc.contains("ns") ? doc["ns"] : empty;
    const std::string w = "[ns]";
    check_keys(ns, w, {"eta", "delta", "dt", "T", "sites", "tau2", "forcing", "forcing_amplitude",
                       "truth_alpha", "truth_beta2", "spinup"});
    auto& e = cfg.ns;
    e.eta = get_num(ns, "eta", e.eta, w);
    e.delta = get_num(ns, "delta", e.delta, w);
    e.dt = get_num(ns, "dt", e.dt, w);
    e.T = static_cast<int>(get_count(ns, "T", e.T, w));
    e.sites = static_cast<int>(get_count(ns, "sites", e.sites, w));
    e.tau2 = get_num(ns, "tau2", e.tau2, w);
    const auto f = get_pair(ns, "forcing", {double(e.forcing.k1), double(e.forcing.k2)}, w);
    e.forcing = {static_cast<int>(f[0]), static_cast<int>(f[1])};
    e.forcing_amplitude = get_num(ns, "forcing_amplitude", e.forcing_amplitude, w);
    e.truth_alpha = get_num(ns, "truth_alpha", e.truth_alpha, w);
    e.truth_beta2 = get_num(ns, "truth_beta2", e.truth_beta2, w);
    e.spinup = get_num(ns, "spinup", e.spinup, w);
    if (!(e.eta > 0) || !(e.delta > 0) || !(e.dt > 0)) throw ConfigError("[ns] eta, delta and dt must be positive");
    if (e.T < 1) throw ConfigError("[ns] T must be at least 1");
    if (!(e.tau2 > 0)) throw ConfigError("[ns] tau2 must be positive");
    if (!(e.spinup >= 0)) throw ConfigError("[ns] spinup must be non-negative");
    if (std::max(std::abs(e.forcing.k1), std::abs(e.forcing.k2)) * 2 >= cfg.n ||
        (e.forcing.k1 == 0 && e.forcing.k2 == 0))
      throw ConfigError("[ns] forcing wavevector is not on the lattice");
    wrap([&] { return NsPriorParams(e.truth_alpha, e.truth_beta2); });
    wrap([&] { return uniform_subgrid(cfg.n, e.sites); });

    const std::string s = "[sampler]";
    check_keys(sampler, s, {"iterations", "burn_in", "thin", "checkpoint_every", "p_v", "p_beta2",
                            "p_alpha", "rho", "adapt", "adapt_target", "rho_alpha", "alpha_prior",
                            "beta2_prior", "alpha0", "beta2_0"});
    auto& m = cfg.ns_sampler;
    m.iterations = get_count(sampler, "iterations", m.iterations, s);
    m.burn_in = get_count(sampler, "burn_in", m.burn_in, s);
    m.thin = get_count(sampler, "thin", m.thin, s);
    cfg.checkpoint_every = get_count(sampler, "checkpoint_every", cfg.checkpoint_every, s);
    m.p_v = get_num(sampler, "p_v", m.p_v, s);
    m.p_beta2 = get_num(sampler, "p_beta2", m.p_beta2, s);
    m.p_alpha = get_num(sampler, "p_alpha", m.p_alpha, s);
    m.pcn.rho = get_num(sampler, "rho", m.pcn.rho, s);
    m.pcn.adapt = get<bool>(sampler, "adapt", m.pcn.adapt, s);
    m.pcn.adapt_target = get_num(sampler, "adapt_target", m.pcn.adapt_target, s);
    m.rho_alpha = get_num(sampler, "rho_alpha", m.rho_alpha, s);
    const auto ap = get_pair(sampler, "alpha_prior", {m.alpha_prior.lo, m.alpha_prior.hi}, s);
    m.alpha_prior = wrap([&] { return UniformInterval(ap[0], ap[1]); });
    const auto bp = get_pair(sampler, "beta2_prior", {m.beta2_prior.a, m.beta2_prior.b}, s);
    m.beta2_prior = wrap([&] { return InvGamma(bp[0], bp[1]); });
    if (sampler.contains("alpha0")) m.alpha0 = get_num(sampler, "alpha0", 0.0, s);
    if (sampler.contains("beta2_0")) m.beta2_0 = get_num(sampler, "beta2_0", 0.0, s);
    wrap([&] {
      m.validate();
      return 0;
    });
  } else {
    if (doc.contains("ns")) throw ConfigError("[ns] given for case \"spde\"");
    const json& sp = doc.contains("spde") ? doc["spde"] : empty;
    const std::string w = "[spde]";
    check_keys(sp, w, {"T", "delta", "full_grid", "sites", "truth"});
    auto& e = cfg.spde;
    e.T = static_cast<int>(get_count(sp, "T", e.T, w));
    e.delta = get_num(sp, "delta", e.delta, w);
    e.full_grid = get<bool>(sp, "full_grid", e.full_grid, w);
    e.sites = static_cast<int>(get_count(sp, "sites", e.sites, w));
    if (e.T < 1) throw ConfigError("[spde] T must be at least 1");
    if (!(e.delta > 0)) throw ConfigError("[spde] delta must be positive");
    if (!e.full_grid) wrap([&] { return uniform_subgrid(cfg.n, e.sites); });
    const std::set<std::string> param_keys{"alpha", "rho0", "sigma2", "zeta", "rho1",
                                           "gamma", "psi",  "mu",     "tau2"};
    auto params = [&](const json& j, const std::string& where, const SpdeParams& base) {
      if (!j.is_object()) throw ConfigError(where + " must be a table");
      for (const auto& [k, v] : j.items())
        if (!param_keys.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
      json merged = to_json(base);
      merge_json(merged, j);
      try {
        return spde_params_from_json(merged);
      } catch (const json::exception&) {
        throw ConfigError("bad value in " + where);
      }
    };
    if (sp.contains("truth")) e.truth = params(sp["truth"], "[spde.truth]", e.truth);

    const std::string s = "[sampler]";
    check_keys(sampler, s, {"iterations", "burn_in", "thin", "checkpoint_every", "warmup",
                            "estimate_alpha", "rho_alpha", "initial_step", "adapt_target", "filter",
                            "alpha_prior", "start"});
    auto& m = cfg.spde_sampler;
    m.iterations = get_count(sampler, "iterations", m.iterations, s);
    m.burn_in = get_count(sampler, "burn_in", m.burn_in, s);
    m.thin = get_count(sampler, "thin", m.thin, s);
    cfg.checkpoint_every = get_count(sampler, "checkpoint_every", cfg.checkpoint_every, s);
    m.warmup = get_count(sampler, "warmup", m.warmup, s);
    m.estimate_alpha = get<bool>(sampler, "estimate_alpha", m.estimate_alpha, s);
    m.rho_alpha = get_num(sampler, "rho_alpha", m.rho_alpha, s);
    m.initial_step = get_num(sampler, "initial_step", m.initial_step, s);
    m.adapt_target = get_num(sampler, "adapt_target", m.adapt_target, s);
    const std::string filter = get<std::string>(sampler, "filter", "auto", s);
    if (filter == "auto")
      m.filter = FilterPath::kAuto;
    else if (filter == "diagonal")
      m.filter = FilterPath::kDiagonal;
    else if (filter == "dense")
      m.filter = FilterPath::kDense;
    else
      throw ConfigError("[sampler] filter must be auto, diagonal or dense");
    const auto ap = get_pair(sampler, "alpha_prior", {m.priors.alpha.lo, m.priors.alpha.hi}, s);
    m.priors.alpha = wrap([&] { return UniformInterval(ap[0], ap[1]); });
    if (sampler.contains("start")) m.start = params(sampler["start"], "[sampler.start]", m.start);
    m.delta = e.delta;
    wrap([&] {
      m.validate();
      return 0;
    });
  }
  if (cfg.checkpoint_every == 0) throw ConfigError("[sampler] checkpoint_every must be positive");
  cfg.resolved = resolved_config(cfg);
  return cfg;
}

ExperimentConfig load_experiment(const std::optional<std::string>& preset,
                                 const std::optional<std::filesystem::path>& file,
                                 std::optional<std::uint64_t> seed,
                                 const std::optional<std::filesystem::path>& out) {
  json doc = json::object();
  if (preset) doc = parse_toml(preset_text(*preset));
  if (file) merge_json(doc, load_toml(*file));
  if (!preset && !file) throw ConfigError("no configuration given (use --preset and/or --config)");
  if (seed) doc["seed"] = *seed;
  if (out) doc["output"] = out->string();
  return experiment_from_json(doc);
}

}  // namespace hbda
