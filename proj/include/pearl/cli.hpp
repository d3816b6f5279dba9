#pragma once

// Command-line front end. Subcommands: gen, pretrain, train, eval, baseline.
// Exit codes: 0 success, 1 usage, 2 data, 3 numerical.

#include <ostream>
#include <string>
#include <vector>

namespace pearl {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// One RFC 4180 field: quoted when it holds a comma, quote, CR or LF.
std::string csv_field(const std::string& s);

}  // namespace pearl
