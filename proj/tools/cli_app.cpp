#include "cli_app.hpp"

#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>

#include "dysedit/dysedit.h"

namespace dysedit_cli {

namespace {

const std::vector<std::string> kCommands{"train", "eval", "ablate", "gradcheck", "edit", "cost"};

const std::vector<FlagDef> kCommon{
    {"config", true, "configuration file (key = value sections: world/train/loss/eval)"},
    {"seed", true, "seed override: training seed; the latent for edit; the suite seed for gradcheck"},
    {"out", true, "output directory (default: out)"},
    {"help", false, "show this help"},
};

std::vector<FlagDef> extra_flags(const std::string& command) {
  if (command == "train") return {{"resume", true, "checkpoint to resume from"}};
  if (command == "eval") return {{"checkpoint", true, "checkpoint file to evaluate"}};
  if (command == "edit")
    return {
        {"checkpoint", true, "checkpoint file to edit with"},
        {"yaw", true, "relative yaw change in degrees"},
        {"pitch", true, "relative pitch change in degrees"},
        {"age", true, "relative age change in years"},
        {"glasses", true, "target glasses state (0 or 1)"},
        {"smile", true, "target smile state (0 or 1)"},
    };
  return {};
}

const char* command_help(const std::string& command) {
  if (command == "train") return "run the two-stage training and write checkpoints + metrics";
  if (command == "eval") return "evaluate a checkpoint on the held-out set";
  if (command == "ablate") return "train every ablation variant under paired seeds and compare";
  if (command == "gradcheck") return "run the finite-difference gradient suite";
  if (command == "edit") return "apply one edit to a sampled latent and report measurements";
  if (command == "cost") return "print the analytic cost table over activation masks";
  return "";
}

struct Parsed {
  std::map<std::string, std::string> values;
  bool has(const std::string& k) const { return values.count(k) > 0; }
  std::string get(const std::string& k, const std::string& fallback = "") const {
    auto it = values.find(k);
    return it == values.end() ? fallback : it->second;
  }
};

int usage_error(const std::string& msg) {
  std::fprintf(stderr, "error: %s\n", msg.c_str());
  std::fprintf(stderr, "run 'dysedit --help' for usage\n");
  return 1;
}

int status_exit(dys_status s) {
  if (s == DYS_OK) return 0;
  std::fprintf(stderr, "error (%s): %s\n", dys_status_name(s), dys_last_error());
  return (s == DYS_ERR_USAGE || s == DYS_ERR_CONFIG) ? 1 : 2;
}

bool parse_u64_arg(const std::string& s, uint64_t& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

struct ConfigHandle {
  dys_config* ptr = nullptr;
  ~ConfigHandle() { dys_config_free(ptr); }
};

struct WorldHandle {
  dys_world* ptr = nullptr;
  ~WorldHandle() { dys_world_free(ptr); }
};

struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { dys_string_free(ptr); }
};

int load_config(const Parsed& args, ConfigHandle& cfg) {
  dys_status s = args.has("config") ? dys_config_load_file(args.get("config").c_str(), &cfg.ptr)
                                    : dys_config_create(&cfg.ptr);
  if (s != DYS_OK) return status_exit(s);
  if (args.has("seed")) {
    s = dys_config_set(cfg.ptr, "train.seed", args.get("seed").c_str());
    if (s != DYS_OK) return status_exit(s);
  }
  return 0;
}

int build_world(const ConfigHandle& cfg, WorldHandle& world) {
  dys_status s = dys_world_build(cfg.ptr, &world.ptr);
  return s == DYS_OK ? 0 : status_exit(s);
}

int cmd_train(const Parsed& args) {
  ConfigHandle cfg;
  if (int rc = load_config(args, cfg)) return rc;
  WorldHandle world;
  if (int rc = build_world(cfg, world)) return rc;
  OwnedString summary;
  dys_status s = dys_train_run(cfg.ptr, world.ptr, args.get("out", "out").c_str(),
                               args.has("resume") ? args.get("resume").c_str() : nullptr,
                               &summary.ptr);
  if (s != DYS_OK) return status_exit(s);
  std::printf("%s", summary.ptr);
  return 0;
}

int cmd_eval(const Parsed& args) {
  if (!args.has("checkpoint")) return usage_error("eval requires --checkpoint <path>");
  ConfigHandle cfg;
  if (int rc = load_config(args, cfg)) return rc;
  WorldHandle world;
  if (int rc = build_world(cfg, world)) return rc;
  OwnedString summary;
  dys_status s = dys_eval_run(cfg.ptr, world.ptr, args.get("checkpoint").c_str(),
                              args.get("out", "out").c_str(), &summary.ptr);
  if (s != DYS_OK) return status_exit(s);
  std::printf("%s", summary.ptr);
  return 0;
}

int cmd_ablate(const Parsed& args) {
  ConfigHandle cfg;
  if (int rc = load_config(args, cfg)) return rc;
  WorldHandle world;
  if (int rc = build_world(cfg, world)) return rc;
  OwnedString summary;
  dys_status s =
      dys_ablate_run(cfg.ptr, world.ptr, args.get("out", "out").c_str(), &summary.ptr);
  if (s != DYS_OK) return status_exit(s);
  std::printf("%s", summary.ptr);
  return 0;
}

int cmd_gradcheck(const Parsed& args) {
  uint64_t seed = 123;
  if (args.has("seed") && !parse_u64_arg(args.get("seed"), seed))
    return usage_error("--seed expects an unsigned integer");
  OwnedString report;
  int all_pass = 0;
  dys_status s = dys_gradcheck_run(seed, 50, &report.ptr, &all_pass);
  if (s != DYS_OK) return status_exit(s);
  std::printf("%s", report.ptr);
  return all_pass ? 0 : 1;
}

int cmd_edit(const Parsed& args) {
  if (!args.has("checkpoint")) return usage_error("edit requires --checkpoint <path>");
  ConfigHandle cfg;
  if (int rc = load_config(args, cfg)) return rc;
  WorldHandle world;
  if (int rc = build_world(cfg, world)) return rc;

  std::vector<std::string> names;
  std::vector<double> values;
  for (const char* attr : {"yaw", "pitch", "age", "glasses", "smile"}) {
    if (!args.has(attr)) continue;
    const std::string& v = args.get(attr);
    try {
      size_t used = 0;
      double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      names.emplace_back(attr);
      values.push_back(x);
    } catch (...) {
      return usage_error("--" + std::string(attr) + " expects a number, got '" + v + "'");
    }
  }
  uint64_t seed = 7;
  if (args.has("seed") && !parse_u64_arg(args.get("seed"), seed))
    return usage_error("--seed expects an unsigned integer");

  std::vector<const char*> cnames;
  for (const auto& n : names) cnames.push_back(n.c_str());
  OwnedString report;
  dys_status s = dys_edit_run(cfg.ptr, world.ptr, args.get("checkpoint").c_str(), cnames.data(),
                              values.data(), cnames.size(), seed, &report.ptr);
  if (s != DYS_OK) return status_exit(s);
  std::printf("%s", report.ptr);
  return 0;
}

int cmd_cost(const Parsed& args) {
  ConfigHandle cfg;
  if (int rc = load_config(args, cfg)) return rc;
  OwnedString table;
  dys_status s = dys_cost_report(cfg.ptr, &table.ptr);
  if (s != DYS_OK) return status_exit(s);
  std::printf("%s", table.ptr);
  return 0;
}

}  // namespace

const std::vector<std::string>& commands() { return kCommands; }

std::vector<FlagDef> flags_for(const std::string& command) {
  std::vector<FlagDef> flags = kCommon;
  for (const auto& f : extra_flags(command)) flags.push_back(f);
  return flags;
}

std::string help_text(const std::string& command) {
  std::ostringstream os;
  os << "usage: dysedit " << command << " [flags]\n  " << command_help(command) << "\n\nflags:\n";
  for (const auto& f : flags_for(command)) {
    std::string head = "--" + f.name + (f.takes_value ? " <value>" : "");
    os << "  " << head;
    for (size_t i = head.size(); i < 22; ++i) os << ' ';
    os << f.help << "\n";
  }
  return os.str();
}

std::string help_text() {
  std::ostringstream os;
  os << "dysedit — dynamic multi-expert latent-code attribute editor\n\n";
  os << "usage: dysedit <command> [flags]\n\ncommands:\n";
  for (const auto& c : kCommands) {
    os << "  " << c;
    for (size_t i = c.size(); i < 11; ++i) os << ' ';
    os << command_help(c) << "\n";
  }
  os << "\n";
  for (const auto& c : kCommands) os << help_text(c) << "\n";
  return os.str();
}

int cli_main(int argc, const char* const* argv) {
  if (argc < 2) return usage_error("missing command");
  std::string command = argv[1];
  if (command == "--help" || command == "-h" || command == "help") {
    std::printf("%s", help_text().c_str());
    return 0;
  }
  bool known = false;
  for (const auto& c : kCommands) known = known || c == command;
  if (!known) return usage_error("unknown command '" + command + "'");

  std::vector<FlagDef> accepted = flags_for(command);
  Parsed args;
  for (int i = 2; i < argc; ++i) {
    std::string token = argv[i];
    if (token.rfind("--", 0) != 0) return usage_error("unexpected argument '" + token + "'");
    std::string name = token.substr(2);
    const FlagDef* def = nullptr;
    for (const auto& f : accepted)
      if (f.name == name) def = &f;
    if (!def) return usage_error("unknown flag '" + token + "' for command '" + command + "'");
    if (def->takes_value) {
      if (i + 1 >= argc) return usage_error("flag '" + token + "' needs a value");
      args.values[name] = argv[++i];
    } else {
      args.values[name] = "";
    }
  }
  if (args.has("help")) {
    std::printf("%s", help_text(command).c_str());
    return 0;
  }

  if (command == "train") return cmd_train(args);
  if (command == "eval") return cmd_eval(args);
  if (command == "ablate") return cmd_ablate(args);
  if (command == "gradcheck") return cmd_gradcheck(args);
  if (command == "edit") return cmd_edit(args);
  if (command == "cost") return cmd_cost(args);
  return usage_error("unknown command '" + command + "'");
}

}  // namespace dysedit_cli
