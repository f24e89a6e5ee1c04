#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cli_app.hpp"

using namespace dysedit_cli;

namespace {

int run_cli(std::vector<std::string> args) {
  std::vector<const char*> argv{"dysedit"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string tmp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("dysedit_cli_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace

TEST_CASE("help lists every command and every accepted flag") {
  std::string help = help_text();
  for (const auto& c : commands()) CHECK(help.find(c) != std::string::npos);
  for (const auto& c : commands()) {
    std::string chelp = help_text(c);
    for (const auto& f : flags_for(c)) {
      CHECK(chelp.find("--" + f.name) != std::string::npos);
      CHECK(help.find("--" + f.name) != std::string::npos);
    }
  }
}

TEST_CASE("flag tables match the parser's accepted set") {
  // A flag in the table parses; one not in the table is rejected with exit 1.
  CHECK(run_cli({"cost", "--seed", "5"}) == 0);
  CHECK(run_cli({"cost", "--checkpoint", "x"}) == 1);  // eval-only flag
  CHECK(run_cli({"train", "--frobnicate"}) == 1);
  for (const auto& c : commands()) {
    bool has_checkpoint = false;
    for (const auto& f : flags_for(c)) has_checkpoint = has_checkpoint || f.name == "checkpoint";
    CHECK(has_checkpoint == (c == "eval" || c == "edit"));
  }
}

TEST_CASE("missing or unknown commands exit with a usage error") {
  CHECK(run_cli({}) == 1);
  CHECK(run_cli({"dance"}) == 1);
  CHECK(run_cli({"--help"}) == 0);
  CHECK(run_cli({"train", "--help"}) == 0);
}

TEST_CASE("flags that need values reject a bare tail") {
  CHECK(run_cli({"train", "--config"}) == 1);
  CHECK(run_cli({"eval"}) == 1);  // missing --checkpoint
  CHECK(run_cli({"edit"}) == 1);
}

TEST_CASE("a config file with an unknown key exits 1 naming the key") {
  std::string dir = tmp_dir("badcfg");
  std::string path = dir + "/bad.cfg";
  {
    std::ofstream f(path);
    f << "[train]\nlearning_rate = 0.1\n";
  }
  CHECK(run_cli({"train", "--config", path}) == 1);
}

TEST_CASE("cost prints the table and exits cleanly") {
  CHECK(run_cli({"cost"}) == 0);
}

TEST_CASE("train then eval then edit round-trips through the CLI") {
  std::string dir = tmp_dir("flow");
  std::string cfg_path = dir + "/run.cfg";
  {
    std::ofstream f(cfg_path);
    f << "[train]\nstage1_steps = 4\nstage2_steps = 4\nbatch = 2\ncheckpoint_every = 100\n"
      << "[eval]\nsize = 16\n";
  }
  std::string out = dir + "/run";
  CHECK(run_cli({"train", "--config", cfg_path, "--out", out}) == 0);
  CHECK(std::filesystem::exists(out + "/checkpoint_final.dys"));
  CHECK(run_cli({"eval", "--config", cfg_path, "--checkpoint", out + "/checkpoint_final.dys",
                 "--out", out + "/eval"}) == 0);
  CHECK(run_cli({"edit", "--config", cfg_path, "--checkpoint", out + "/checkpoint_final.dys",
                 "--yaw", "+15", "--glasses", "1"}) == 0);
  CHECK(run_cli({"edit", "--config", cfg_path, "--checkpoint", out + "/checkpoint_final.dys",
                 "--glasses", "2"}) != 0);  // binary attrs are 0/1
  CHECK(run_cli({"edit", "--config", cfg_path, "--checkpoint", out + "/checkpoint_final.dys",
                 "--yaw", "abc"}) == 1);
}
