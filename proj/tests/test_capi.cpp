#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "dysedit/dysedit.h"

namespace {

std::string tmp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("dysedit_capi_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

struct Str {
  char* p = nullptr;
  ~Str() { dys_string_free(p); }
  std::string view() const { return p ? p : ""; }
};

// Small shared fixture: a fast config, its world, and one trained checkpoint.
struct Fixture {
  dys_config* cfg = nullptr;
  dys_world* world = nullptr;
  std::string out;
  std::string checkpoint;

  Fixture() {
    REQUIRE(dys_config_create(&cfg) == DYS_OK);
    REQUIRE(dys_config_set(cfg, "train.stage1_steps", "6") == DYS_OK);
    REQUIRE(dys_config_set(cfg, "train.stage2_steps", "6") == DYS_OK);
    REQUIRE(dys_config_set(cfg, "train.batch", "2") == DYS_OK);
    REQUIRE(dys_config_set(cfg, "train.checkpoint_every", "100") == DYS_OK);
    REQUIRE(dys_config_set(cfg, "eval.size", "24") == DYS_OK);
    REQUIRE(dys_world_build(cfg, &world) == DYS_OK);
    out = tmp_dir("train");
    Str summary;
    REQUIRE(dys_train_run(cfg, world, out.c_str(), nullptr, &summary.p) == DYS_OK);
    checkpoint = out + "/checkpoint_final.dys";
    REQUIRE(std::filesystem::exists(checkpoint));
  }
  ~Fixture() {
    dys_world_free(world);
    dys_config_free(cfg);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("status names cover the enum") {
  CHECK(std::string(dys_status_name(DYS_OK)) == "ok");
  CHECK(std::string(dys_status_name(DYS_ERR_CHECKSUM)) == "checksum");
  CHECK(std::string(dys_status_name(DYS_ERR_MANIFEST_MISMATCH)) == "manifest_mismatch");
}

TEST_CASE("config handles parse, override, emit and round-trip") {
  dys_config* cfg = nullptr;
  REQUIRE(dys_config_parse_text("[loss]\nalpha_dmac = 0.2\n", &cfg) == DYS_OK);
  Str text;
  REQUIRE(dys_config_emit(cfg, &text.p) == DYS_OK);
  CHECK(text.view().find("alpha_dmac = 0.2") != std::string::npos);

  dys_config* again = nullptr;
  REQUIRE(dys_config_parse_text(text.p, &again) == DYS_OK);
  Str text2;
  REQUIRE(dys_config_emit(again, &text2.p) == DYS_OK);
  CHECK(text.view() == text2.view());

  CHECK(dys_config_set(cfg, "train.lr", "abc") == DYS_ERR_CONFIG);
  CHECK(std::string(dys_last_error()).find("type error") != std::string::npos);
  CHECK(dys_config_set(cfg, "nope", "1") == DYS_ERR_USAGE);
  dys_config_free(cfg);
  dys_config_free(again);

  dys_config* bad = nullptr;
  CHECK(dys_config_parse_text("[train]\nwat = 1\n", &bad) == DYS_ERR_CONFIG);
  CHECK(std::string(dys_last_error()).find("wat") != std::string::npos);
}

TEST_CASE("null arguments are usage errors, not crashes") {
  CHECK(dys_config_create(nullptr) == DYS_ERR_USAGE);
  CHECK(dys_world_build(nullptr, nullptr) == DYS_ERR_USAGE);
  dys_config* cfg = nullptr;
  REQUIRE(dys_config_create(&cfg) == DYS_OK);
  CHECK(dys_train_run(cfg, nullptr, "x", nullptr, nullptr) == DYS_ERR_USAGE);
  dys_config_free(cfg);
}

TEST_CASE("world handles expose the manifest") {
  Fixture& f = fixture();
  Str manifest;
  REQUIRE(dys_world_manifest(f.world, &manifest.p) == DYS_OK);
  CHECK(manifest.view().find("attr.0.name=yaw") != std::string::npos);
}

TEST_CASE("training writes artifacts and a parseable config snapshot") {
  Fixture& f = fixture();
  CHECK(std::filesystem::exists(f.out + "/metrics.csv"));
  CHECK(std::filesystem::exists(f.out + "/world_manifest.txt"));
  CHECK(std::filesystem::exists(f.out + "/config_snapshot.cfg"));
  dys_config* snap = nullptr;
  REQUIRE(dys_config_load_file((f.out + "/config_snapshot.cfg").c_str(), &snap) == DYS_OK);
  dys_config_free(snap);
}

TEST_CASE("evaluation runs against the trained checkpoint") {
  Fixture& f = fixture();
  std::string out = tmp_dir("eval");
  Str summary;
  REQUIRE(dys_eval_run(f.cfg, f.world, f.checkpoint.c_str(), out.c_str(), &summary.p) == DYS_OK);
  CHECK(summary.view().find("mae_yaw_single=") != std::string::npos);
  CHECK(summary.view().find("identity_mean=") != std::string::npos);
  CHECK(std::filesystem::exists(out + "/control_accuracy.csv"));
  CHECK(std::filesystem::exists(out + "/identity.csv"));
}

TEST_CASE("evaluating against a different world is a manifest mismatch") {
  Fixture& f = fixture();
  dys_config* cfg2 = nullptr;
  REQUIRE(dys_config_create(&cfg2) == DYS_OK);
  REQUIRE(dys_config_set(cfg2, "world.seed", "999") == DYS_OK);
  dys_world* world2 = nullptr;
  REQUIRE(dys_world_build(cfg2, &world2) == DYS_OK);
  std::string out = tmp_dir("eval_mismatch");
  CHECK(dys_eval_run(cfg2, world2, f.checkpoint.c_str(), out.c_str(), nullptr) ==
        DYS_ERR_MANIFEST_MISMATCH);
  dys_world_free(world2);
  dys_config_free(cfg2);
}

TEST_CASE("corrupt checkpoints surface the checksum status") {
  Fixture& f = fixture();
  std::string copy = tmp_dir("corrupt") + "/bad.dys";
  std::filesystem::copy_file(f.checkpoint, copy);
  {
    std::ifstream in(copy, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    bytes[bytes.size() / 2] ^= 0x10;
    std::ofstream outf(copy, std::ios::binary | std::ios::trunc);
    outf.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::string out = tmp_dir("eval_corrupt");
  CHECK(dys_eval_run(f.cfg, f.world, copy.c_str(), out.c_str(), nullptr) == DYS_ERR_CHECKSUM);
}

TEST_CASE("edit reports targets, measurements and identity similarity") {
  Fixture& f = fixture();
  const char* names[] = {"yaw", "glasses"};
  double values[] = {15.0, 1.0};
  Str report;
  REQUIRE(dys_edit_run(f.cfg, f.world, f.checkpoint.c_str(), names, values, 2, 7, &report.p) ==
          DYS_OK);
  std::string text = report.view();
  CHECK(text.find("target_yaw=15") != std::string::npos);
  CHECK(text.find("measured_yaw=") != std::string::npos);
  CHECK(text.find("target_glasses=1") != std::string::npos);
  CHECK(text.find("identity_similarity=") != std::string::npos);

  const char* bad_names[] = {"hat"};
  double bad_values[] = {1.0};
  CHECK(dys_edit_run(f.cfg, f.world, f.checkpoint.c_str(), bad_names, bad_values, 1, 7,
                     nullptr) == DYS_ERR_UNKNOWN_ATTRIBUTE);

  const char* oob_names[] = {"yaw"};
  double oob_values[] = {99.0};
  CHECK(dys_edit_run(f.cfg, f.world, f.checkpoint.c_str(), oob_names, oob_values, 1, 7,
                     nullptr) == DYS_ERR_DOMAIN);
}

TEST_CASE("cost table comes through the C surface") {
  Fixture& f = fixture();
  Str table;
  REQUIRE(dys_cost_report(f.cfg, &table.p) == DYS_OK);
  CHECK(table.view().find("mask,n_active,multiply_adds,ratio_vs_static") == 0);
}

TEST_CASE("gradcheck smoke run through the C surface") {
  Str report;
  int all_pass = 0;
  REQUIRE(dys_gradcheck_run(123, 3, &report.p, &all_pass) == DYS_OK);
  CHECK(all_pass == 1);
  CHECK(report.view().find("total_objective_end_to_end") != std::string::npos);
}
