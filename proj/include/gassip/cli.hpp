#pragma once

#include "gassip/engine.hpp"

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gassip {

/// Bad config file or flag value; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses a TOML document whose only table is a flat [search] table with
/// SearchConfig field names as keys. Unknown keys and tables are rejected.
SearchConfig parse_search_config(std::string_view toml_text);
SearchConfig load_search_config(const std::string& path);

/// Entry point of the `gassip` tool. `args` excludes the program name.
/// Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gassip
