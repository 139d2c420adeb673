#pragma once

#include <iosfwd>
#include <string>

#include "gefl/genmodels.hpp"
#include "gefl/nn.hpp"

namespace gefl {

// Plain-text header followed by the flat parameter vector, one value per
// line in shortest round-trip form:
//
//   gefl-checkpoint 1
//   kind gen | network
//   ... key value lines (family, dims, schedule, layer lists) ...
//   params N
//   <N values>
void save_network(std::ostream& out, const Network& net);
void save_gen(std::ostream& out, const GenModelParams& gen);

// Throw ConfigError on malformed input or a kind mismatch.
Network load_network(std::istream& in);
GenModelParams load_gen(std::istream& in);

// Reads only the `kind` line: "gen" or "network".
std::string peek_checkpoint_kind(std::istream& in);

void save_network_file(const std::string& path, const Network& net);
void save_gen_file(const std::string& path, const GenModelParams& gen);
Network load_network_file(const std::string& path);
GenModelParams load_gen_file(const std::string& path);

// Shortest decimal text that parses back to exactly x.
std::string format_double(double x);
// Strict parse of a whole token; throws ConfigError naming `what`.
double parse_double(const std::string& token, const std::string& what);

}  // namespace gefl
