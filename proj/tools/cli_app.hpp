#pragma once

#include <string>
#include <vector>

namespace dysedit_cli {

struct FlagDef {
  std::string name;  // without the leading --
  bool takes_value;
  std::string help;
};

const std::vector<std::string>& commands();
std::vector<FlagDef> flags_for(const std::string& command);
std::string help_text();
std::string help_text(const std::string& command);

int cli_main(int argc, const char* const* argv);

}  // namespace dysedit_cli
