#pragma once

#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace langbias::cli {

using json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Doubles at 17 significant digits, non-finite values as null.
std::string dump_json(const json& j);

// key=value with a dotted key path; the value is JSON when it parses, else a string.
void apply_override(json& config, const std::string& assignment);

// Rejects unknown keys and ill-typed values before anything is computed.
void validate_config(const json& config, const std::string& command);

const std::vector<std::string>& command_names();
std::vector<std::string> example_names();
json example_preset(const std::string& name);

// Runs one command and writes summary.json, CSV files and manifest.json under out_dir.
json run_command(const std::string& command, const json& config, const std::string& out_dir);

json reproduce_table(int table, const json& overrides, const std::string& out_dir);
json reproduce_example(const std::string& name, const json& overrides, const std::string& out_dir);

// Full front end: argv-style arguments without the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace langbias::cli
