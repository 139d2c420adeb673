#include "gefl/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <vector>

#include "gefl/errors.hpp"

namespace gefl {

namespace {

constexpr const char* kMagic = "gefl-checkpoint";
constexpr int kVersion = 1;

std::string layer_token(const LayerSpec& layer) {
  if (const auto* d = std::get_if<DenseSpec>(&layer)) return "dense:" + std::to_string(d->in) + ":" + std::to_string(d->out);
  const auto& a = std::get<ActivationSpec>(layer);
  if (a.kind == Activation::leaky_relu) return "leaky_relu:" + format_double(a.slope);
  return to_string(a.kind);
}

std::size_t parse_size(const std::string& token, const std::string& what) {
  std::size_t v = 0;
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("checkpoint: bad " + what + " '" + token + "'");
  return v;
}

LayerSpec parse_layer(const std::string& token) {
  std::vector<std::string> parts;
  std::stringstream ss(token);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.empty()) throw ConfigError("checkpoint: empty layer token");
  if (parts[0] == "dense") {
    if (parts.size() != 3) throw ConfigError("checkpoint: bad dense layer '" + token + "'");
    return DenseSpec{parse_size(parts[1], "dense input"), parse_size(parts[2], "dense output")};
  }
  ActivationSpec a;
  try {
    a.kind = activation_from_string(parts[0]);
  } catch (const std::exception&) {
    throw ConfigError("checkpoint: unknown layer '" + token + "'");
  }
  if (a.kind == Activation::leaky_relu && parts.size() == 2) a.slope = parse_double(parts[1], "leaky slope");
  return a;
}

void write_layers(std::ostream& out, const std::string& name, const Network& net) {
  out << "network " << name << ' ' << net.layers().size();
  for (const auto& l : net.layers()) out << ' ' << layer_token(l);
  out << '\n';
}

void write_params(std::ostream& out, const std::vector<double>& flat) {
  out << "params " << flat.size() << '\n';
  for (double v : flat) out << format_double(v) << '\n';
}

std::string range_name(OutputRange r) { return r == OutputRange::unit_interval ? "unit_interval" : "unbounded"; }

OutputRange range_from(const std::string& s) {
  if (s == "unit_interval") return OutputRange::unit_interval;
  if (s == "unbounded") return OutputRange::unbounded;
  throw ConfigError("checkpoint: unknown range '" + s + "'");
}

// Parsed header: scalar fields, network layer lists, and the parameter block.
struct Parsed {
  std::string kind;
  std::map<std::string, std::string> fields;
  std::vector<double> betas;
  std::map<std::string, std::vector<LayerSpec>> networks;
  std::vector<std::string> network_order;
  std::vector<double> params;

  const std::string& field(const std::string& key) const {
    const auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("checkpoint: missing '" + key + "'");
    return it->second;
  }
  Network network(const std::string& name) const {
    const auto it = networks.find(name);
    if (it == networks.end()) throw ConfigError("checkpoint: missing network '" + name + "'");
    try {
      return Network(it->second);
    } catch (const std::exception& e) {
      throw ConfigError("checkpoint: invalid network '" + name + "': " + e.what());
    }
  }
};

void read_magic(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kMagic) throw ConfigError("not a gefl checkpoint");
  if (version != kVersion) throw ConfigError("unsupported checkpoint version " + std::to_string(version));
}

Parsed parse(std::istream& in) {
  read_magic(in);
  Parsed p;
  std::string key;
  while (in >> key) {
    if (key == "kind") {
      in >> p.kind;
    } else if (key == "betas") {
      std::string count;
      in >> count;
      const std::size_t n = parse_size(count, "beta count");
      for (std::size_t i = 0; i < n; ++i) {
        std::string tok;
        if (!(in >> tok)) throw ConfigError("checkpoint: truncated beta list");
        p.betas.push_back(parse_double(tok, "beta"));
      }
    } else if (key == "network") {
      std::string name, count;
      in >> name >> count;
      const std::size_t n = parse_size(count, "layer count");
      std::vector<LayerSpec> layers;
      for (std::size_t i = 0; i < n; ++i) {
        std::string tok;
        if (!(in >> tok)) throw ConfigError("checkpoint: truncated layer list");
        layers.push_back(parse_layer(tok));
      }
      p.networks[name] = std::move(layers);
      p.network_order.push_back(name);
    } else if (key == "params") {
      std::string count;
      in >> count;
      const std::size_t n = parse_size(count, "parameter count");
      p.params.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::string tok;
        if (!(in >> tok)) throw ConfigError("checkpoint: truncated parameter block");
        p.params.push_back(parse_double(tok, "parameter"));
      }
      std::string extra;
      if (in >> extra) throw ConfigError("checkpoint: trailing data after parameters");
      return p;
    } else {
      std::string value;
      if (!(in >> value)) throw ConfigError("checkpoint: missing value for '" + key + "'");
      p.fields[key] = value;
    }
  }
  throw ConfigError("checkpoint: no parameter block");
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw NumericError("cannot format value");
  return std::string(buf, ptr);
}

double parse_double(const std::string& token, const std::string& what) {
  double v = 0.0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  if (begin != end && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || begin == end)
    throw ConfigError("bad number for " + what + ": '" + token + "'");
  return v;
}

void save_network(std::ostream& out, const Network& net) {
  out << kMagic << ' ' << kVersion << "\nkind network\n";
  write_layers(out, "net", net);
  write_params(out, net.flatten_params());
}

void save_gen(std::ostream& out, const GenModelParams& gen) {
  out << kMagic << ' ' << kVersion << "\nkind gen\n";
  out << "family " << to_string(family_of(gen)) << '\n';
  out << "classes " << gen_classes(gen) << '\n';
  out << "sample_dim " << gen_sample_dim(gen) << '\n';
  if (const auto* v = std::get_if<Cvae>(&gen)) {
    out << "range " << range_name(v->range) << "\nlatent_dim " << v->latent_dim << '\n';
    write_layers(out, "encoder", v->encoder);
    write_layers(out, "decoder", v->decoder);
  } else if (const auto* g = std::get_if<Cgan>(&gen)) {
    out << "range " << range_name(g->range) << "\nlatent_dim " << g->latent_dim << '\n';
    write_layers(out, "generator", g->generator);
    write_layers(out, "discriminator", g->discriminator);
  } else {
    const auto& d = std::get<Ddpm>(gen);
    out << "range " << range_name(d.range) << "\ntimesteps " << d.betas.size() << '\n';
    out << "betas " << d.betas.size();
    for (double b : d.betas) out << ' ' << format_double(b);
    out << "\nuncond_drop_prob " << format_double(d.uncond_drop_prob) << '\n';
    out << "time_embed_dim " << d.time_embed_dim << '\n';
    write_layers(out, "denoiser", d.denoiser);
  }
  write_params(out, flatten_gen(gen));
}

std::string peek_checkpoint_kind(std::istream& in) {
  read_magic(in);
  std::string key, kind;
  if (!(in >> key >> kind) || key != "kind") throw ConfigError("checkpoint: missing kind line");
  return kind;
}

Network load_network(std::istream& in) {
  const Parsed p = parse(in);
  if (p.kind != "network") throw ConfigError("checkpoint holds '" + p.kind + "', expected a network");
  Network net = p.network("net");
  try {
    net.unflatten_params(p.params);
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
  return net;
}

GenModelParams load_gen(std::istream& in) {
  const Parsed p = parse(in);
  if (p.kind != "gen") throw ConfigError("checkpoint holds '" + p.kind + "', expected a generative model");
  const GenFamily family = gen_family_from_string(p.field("family"));
  const std::size_t classes = parse_size(p.field("classes"), "classes");
  const std::size_t dim = parse_size(p.field("sample_dim"), "sample_dim");
  const OutputRange range = range_from(p.field("range"));
  GenModelParams gen;
  switch (family) {
    case GenFamily::cvae:
      gen = Cvae{p.network("encoder"), p.network("decoder"), parse_size(p.field("latent_dim"), "latent_dim"), classes,
                 dim, range};
      break;
    case GenFamily::cgan:
      gen = Cgan{p.network("generator"), p.network("discriminator"), parse_size(p.field("latent_dim"), "latent_dim"),
                 classes, dim, range};
      break;
    case GenFamily::cddpm: {
      Ddpm d;
      d.denoiser = p.network("denoiser");
      d.betas = p.betas;
      d.uncond_drop_prob = parse_double(p.field("uncond_drop_prob"), "uncond_drop_prob");
      d.classes = classes;
      d.sample_dim = dim;
      d.time_embed_dim = parse_size(p.field("time_embed_dim"), "time_embed_dim");
      d.range = range;
      if (d.betas.size() != parse_size(p.field("timesteps"), "timesteps"))
        throw ConfigError("checkpoint: beta list length differs from timesteps");
      try {
        alpha_bars(d.betas);
      } catch (const DomainError& e) {
        throw ConfigError(std::string("checkpoint: ") + e.what());
      }
      gen = std::move(d);
      break;
    }
  }
  try {
    unflatten_gen(gen, p.params);
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
  return gen;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  return in;
}

}  // namespace

void save_network_file(const std::string& path, const Network& net) {
  auto out = open_out(path);
  save_network(out, net);
}

void save_gen_file(const std::string& path, const GenModelParams& gen) {
  auto out = open_out(path);
  save_gen(out, gen);
}

Network load_network_file(const std::string& path) {
  auto in = open_in(path);
  return load_network(in);
}

GenModelParams load_gen_file(const std::string& path) {
  auto in = open_in(path);
  return load_gen(in);
}

}  // namespace gefl
