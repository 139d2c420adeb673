#include "gefl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "gefl/checkpoint.hpp"
#include "gefl/errors.hpp"

namespace gefl {

std::string to_string(DatasetKind k) { return k == DatasetKind::blobs ? "blobs" : "glyphs"; }

DatasetBundle build_datasets(const DatasetSpec& spec, std::uint64_t seed, std::size_t validation_per_class) {
  auto make = [&](std::size_t n, std::uint64_t tag) {
    const auto s = derive_seed(seed, {0xDA7A, tag});
    if (spec.kind == DatasetKind::blobs) return make_blobs(spec.classes, spec.dim, n, spec.spread, s);
    return make_glyphs(spec.classes, spec.side, n, spec.noise, spec.shift_max, s);
  };
  return {make(spec.n_per_class, 1), make(spec.test_per_class, 2), make(std::max<std::size_t>(validation_per_class, 1), 3)};
}

FederationConfig ExperimentConfig::federation_for(std::uint64_t seed) const {
  FederationConfig f = fed;
  f.seed = seed;
  f.gen.classes = data.classes;
  f.gen.sample_dim = data.kind == DatasetKind::blobs ? data.dim : data.side * data.side;
  f.gen.range = data.kind == DatasetKind::glyphs ? OutputRange::unit_interval : OutputRange::unbounded;
  return f;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t as_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

std::size_t as_size(const std::string& v) { return static_cast<std::size_t>(as_u64(v)); }

std::size_t as_positive(const std::string& v) {
  const auto n = as_size(v);
  if (n == 0) throw ConfigError("must be positive");
  return n;
}

double as_double(const std::string& v) {
  const double d = parse_double(v, "value");
  if (!std::isfinite(d)) throw ConfigError("must be finite");
  return d;
}

double as_positive_double(const std::string& v) {
  const double d = as_double(v);
  if (!(d > 0.0)) throw ConfigError("must be positive, got " + v);
  return d;
}

double as_nonnegative_double(const std::string& v) {
  const double d = as_double(v);
  if (!(d >= 0.0)) throw ConfigError("must be non-negative, got " + v);
  return d;
}

bool as_bool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(trim(item));
  if (out.empty() || (out.size() == 1 && out[0].empty())) return {};
  return out;
}

std::vector<std::size_t> as_size_list(const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v)) out.push_back(as_positive(item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define SIZE_FIELD(name, member, parser)                                              \
  Field {                                                                             \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = parser(v); },    \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }            \
  }
#define DOUBLE_FIELD(name, member, parser)                                            \
  Field {                                                                             \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = parser(v); },    \
        [](const ExperimentConfig& c) { return format_double(c.member); }             \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"method", [](ExperimentConfig& c, const std::string& v) { c.method = method_from_string(v); },
       [](const ExperimentConfig& c) { return to_string(c.method); }},
      {"seeds",
       [](ExperimentConfig& c, const std::string& v) {
         c.seeds.clear();
         for (const auto& s : split_list(v)) c.seeds.push_back(as_u64(s));
         if (c.seeds.empty()) throw ConfigError("needs at least one seed");
       },
       [](const ExperimentConfig& c) { return join(c.seeds); }},
      {"out_dir",
       [](ExperimentConfig& c, const std::string& v) {
         if (v.empty()) throw ConfigError("must not be empty");
         c.out_dir = v;
       },
       [](const ExperimentConfig& c) { return c.out_dir; }},
      {"eval_mode", [](ExperimentConfig& c, const std::string& v) { c.eval = eval_mode_from_string(v); },
       [](const ExperimentConfig& c) { return to_string(c.eval); }},
      {"fraction",
       [](ExperimentConfig& c, const std::string& v) {
         const double f = as_double(v);
         if (!(f > 0.0 && f <= 1.0)) throw ConfigError("must lie in (0, 1]");
         c.fraction = f;
       },
       [](const ExperimentConfig& c) { return format_double(c.fraction); }},
      {"dataset",
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "blobs")
           c.data.kind = DatasetKind::blobs;
         else if (v == "glyphs")
           c.data.kind = DatasetKind::glyphs;
         else
           throw ConfigError("unknown dataset '" + v + "' (blobs | glyphs)");
       },
       [](const ExperimentConfig& c) { return to_string(c.data.kind); }},
      SIZE_FIELD("classes", data.classes, as_positive),
      SIZE_FIELD("dim", data.dim, as_positive),
      SIZE_FIELD("side", data.side, as_positive),
      SIZE_FIELD("n_per_class", data.n_per_class, as_positive),
      SIZE_FIELD("test_per_class", data.test_per_class, as_positive),
      DOUBLE_FIELD("spread", data.spread, as_positive_double),
      DOUBLE_FIELD("noise", data.noise, as_nonnegative_double),
      {"shift_max",
       [](ExperimentConfig& c, const std::string& v) {
         const auto n = as_size(v);
         if (n > 8) throw ConfigError("must be at most 8");
         c.data.shift_max = static_cast<int>(n);
       },
       [](const ExperimentConfig& c) { return std::to_string(c.data.shift_max); }},
      SIZE_FIELD("t_ka", fed.t_ka, as_size),
      SIZE_FIELD("t_tn", fed.t_tn, as_size),
      SIZE_FIELD("t_fe", fed.t_fe, as_size),
      SIZE_FIELD("t_g", fed.t_g, as_size),
      SIZE_FIELD("t_s", fed.t_s, as_size),
      SIZE_FIELD("t_r", fed.t_r, as_size),
      SIZE_FIELD("t_w", fed.t_w, as_size),
      DOUBLE_FIELD("alpha", fed.alpha, as_positive_double),
      {"beta",
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "default")
           c.fed.beta.reset();
         else
           c.fed.beta = as_nonnegative_double(v);
       },
       [](const ExperimentConfig& c) { return c.fed.beta ? format_double(*c.fed.beta) : std::string("default"); }},
      SIZE_FIELD("batch", fed.batch, as_positive),
      SIZE_FIELD("clients", fed.client_count, as_positive),
      SIZE_FIELD("archs", fed.arch_count, as_positive),
      {"gen_family", [](ExperimentConfig& c, const std::string& v) { c.fed.gen.family = gen_family_from_string(v); },
       [](const ExperimentConfig& c) { return to_string(c.fed.gen.family); }},
      {"gen_hidden",
       [](ExperimentConfig& c, const std::string& v) {
         c.fed.gen.hidden = as_size_list(v);
         if (c.fed.gen.hidden.empty()) throw ConfigError("needs at least one width");
       },
       [](const ExperimentConfig& c) { return join(c.fed.gen.hidden); }},
      SIZE_FIELD("latent_dim", fed.gen.latent_dim, as_positive),
      SIZE_FIELD("timesteps", fed.gen.timesteps, as_positive),
      DOUBLE_FIELD("beta_start", fed.gen.beta_start, as_positive_double),
      DOUBLE_FIELD("beta_end", fed.gen.beta_end, as_positive_double),
      {"uncond_drop_prob",
       [](ExperimentConfig& c, const std::string& v) {
         const double p = as_double(v);
         if (!(p >= 0.0 && p < 1.0)) throw ConfigError("must lie in [0, 1)");
         c.fed.gen.uncond_drop_prob = p;
       },
       [](const ExperimentConfig& c) { return format_double(c.fed.gen.uncond_drop_prob); }},
      DOUBLE_FIELD("guidance_w", fed.guidance_w, as_nonnegative_double),
      {"gan_mode", [](ExperimentConfig& c, const std::string& v) { c.fed.gan_mode = gan_mode_from_string(v); },
       [](const ExperimentConfig& c) { return to_string(c.fed.gan_mode); }},
      SIZE_FIELD("homogeneity_level", fed.homogeneity_level, as_size),
      {"fe_trunk",
       [](ExperimentConfig& c, const std::string& v) {
         c.fed.fe_trunk = as_size_list(v);
         if (c.fed.fe_trunk.empty()) throw ConfigError("needs at least one width");
       },
       [](const ExperimentConfig& c) { return join(c.fed.fe_trunk); }},
      {"participation",
       [](ExperimentConfig& c, const std::string& v) {
         const double p = as_double(v);
         if (!(p > 0.0 && p <= 1.0)) throw ConfigError("must lie in (0, 1]");
         c.fed.participation = p;
       },
       [](const ExperimentConfig& c) { return format_double(c.fed.participation); }},
      {"strict", [](ExperimentConfig& c, const std::string& v) { c.fed.strict = as_bool(v); },
       [](const ExperimentConfig& c) { return bool_text(c.fed.strict); }},
      SIZE_FIELD("threads", fed.threads, as_positive),
      {"mnd", [](ExperimentConfig& c, const std::string& v) { c.mnd.enabled = as_bool(v); },
       [](const ExperimentConfig& c) { return bool_text(c.mnd.enabled); }},
      SIZE_FIELD("mnd_probe", mnd.probe_size, as_positive),
      SIZE_FIELD("mnd_set_size", mnd.set_size, as_positive),
      {"mnd_distance",
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "l2")
           c.mnd.distance = DistanceKind::l2;
         else if (v == "probe_feature")
           c.mnd.distance = DistanceKind::probe_feature;
         else
           throw ConfigError("unknown distance '" + v + "' (l2 | probe_feature)");
       },
       [](const ExperimentConfig& c) { return to_string(c.mnd.distance); }},
  };
  return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD

// Cross-field constraints; `line_of` maps keys to the line that set them.
void validate_whole(const ExperimentConfig& c, const std::map<std::string, std::size_t>& line_of) {
  auto fail = [&](const std::string& key, const std::string& msg) {
    const auto it = line_of.find(key);
    if (it != line_of.end()) throw ConfigError("line " + std::to_string(it->second) + ": " + key + ": " + msg);
    throw ConfigError("config: " + key + ": " + msg);
  };
  if (c.data.classes < 2) fail("classes", "needs at least 2 classes");
  if (c.data.kind == DatasetKind::blobs && c.data.dim < 2) fail("dim", "blobs need dim >= 2");
  if (c.data.kind == DatasetKind::glyphs) {
    if (c.data.classes > 10) fail("classes", "glyphs support at most 10 classes");
    if (c.data.side < 6 || c.data.side > 16) fail("side", "glyph side must lie in [6, 16]");
    if (2 * static_cast<std::size_t>(c.data.shift_max) >= c.data.side) fail("shift_max", "must be below side / 2");
  }
  if (c.fed.gen.beta_start > c.fed.gen.beta_end || c.fed.gen.beta_end >= 1.0)
    fail("beta_end", "needs beta_start <= beta_end < 1");
  if (c.fed.gan_mode == GanMode::update && c.fed.gen.family != GenFamily::cgan)
    fail("gan_mode", "update is only valid for the cgan family");
  if (c.fed.arch_count > default_arch_zoo().size()) fail("archs", "at most 10 built-in architectures");
  if (c.fed.homogeneity_level > c.fed.fe_trunk.size() + 1)
    fail("homogeneity_level", "at most " + std::to_string(c.fed.fe_trunk.size() + 1) + " for this fe_trunk");
  if (c.fed.gen.family == GenFamily::cddpm && c.fed.guidance_w > 0.0 && c.fed.gen.uncond_drop_prob == 0.0)
    fail("guidance_w", "needs uncond_drop_prob > 0");
  const double pool = static_cast<double>(c.data.n_per_class * c.data.classes);
  if (std::floor(c.fraction * pool) < static_cast<double>(c.fed.client_count * c.data.classes))
    fail("fraction", "leaves fewer than one sample per class per client");
  std::set<std::uint64_t> unique(c.seeds.begin(), c.seeds.end());
  if (unique.size() != c.seeds.size()) fail("seeds", "duplicate seed");
  try {
    c.federation_for(c.seeds.front()).validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;
  ExperimentConfig cfg;
  std::map<std::string, std::size_t> line_of;
  std::stringstream ss(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(ss, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (line_of.count(key)) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->second->set(cfg, value);
    } catch (const std::exception& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
    line_of[key] = line_no;
  }
  validate_whole(cfg, line_of);
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string emit_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace gefl
