#include "config/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace dys {

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad(const std::string& msg, int line) {
  raise(ErrCode::config, msg + (line > 0 ? " at line " + std::to_string(line) : ""));
}

double parse_double(const std::string& key, const std::string& v, int line) {
  try {
    size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) bad("type error: '" + v + "' is not a number for key '" + key + "'", line);
    return x;
  } catch (const Error&) {
    throw;
  } catch (...) {
    bad("type error: '" + v + "' is not a number for key '" + key + "'", line);
  }
}

int64_t parse_int(const std::string& key, const std::string& v, int line) {
  int64_t x = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    bad("type error: '" + v + "' is not an integer for key '" + key + "'", line);
  return x;
}

uint64_t parse_u64(const std::string& key, const std::string& v, int line) {
  uint64_t x = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    bad("type error: '" + v + "' is not an unsigned integer for key '" + key + "'", line);
  return x;
}

bool parse_bool(const std::string& key, const std::string& v, int line) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad("type error: '" + v + "' is not a boolean (true/false/0/1) for key '" + key + "'", line);
}

AttributeDef* find_attr(RunConfig& cfg, const std::string& name) {
  for (auto& a : cfg.world.attributes)
    if (a.name == name) return &a;
  return nullptr;
}

bool section_has_key(const RunConfig& cfg, const std::string& section, const std::string& key) {
  auto is_numeric_attr = [&](const std::string& name) {
    for (const auto& a : cfg.world.attributes)
      if (a.name == name && a.numeric) return true;
    return false;
  };
  if (section == "world") {
    for (const char* k : {"seed", "layers", "dim", "feature_dim", "gen_hidden", "binary_hidden",
                          "embed_dim"})
      if (key == k) return true;
    return key.rfind("range_", 0) == 0 && is_numeric_attr(key.substr(6));
  }
  if (section == "train") {
    for (const char* k : {"seed", "stage1_steps", "stage2_steps", "batch", "lr", "beta1", "beta2",
                          "adam_eps", "checkpoint_every", "clip_norm", "unified_dim",
                          "use_cross_attention", "all_experts_active", "single_stage"})
      if (key == k) return true;
    return false;
  }
  if (section == "loss") {
    for (const char* k : {"alpha_binary", "alpha_id", "alpha_norm", "alpha_dmac"})
      if (key == k) return true;
    if (key.rfind("alpha_", 0) == 0) return is_numeric_attr(key.substr(6));
    if (key.rfind("threshold_", 0) == 0) return is_numeric_attr(key.substr(10));
    return false;
  }
  if (section == "eval") {
    for (const char* k : {"seed", "size", "val_size", "val_every", "margin"})
      if (key == k) return true;
    return false;
  }
  return false;
}

// Applies one key; `line` only feeds error messages.
void set_key(RunConfig& cfg, const std::string& section, const std::string& key,
             const std::string& value, int line) {
  const std::string full = section + "." + key;
  if (section == "world") {
    if (key == "seed") cfg.world.seed = parse_u64(full, value, line);
    else if (key == "layers") cfg.world.layers = parse_int(full, value, line);
    else if (key == "dim") cfg.world.dim = parse_int(full, value, line);
    else if (key == "feature_dim") cfg.world.feature_dim = parse_int(full, value, line);
    else if (key == "gen_hidden") cfg.world.gen_hidden = parse_int(full, value, line);
    else if (key == "binary_hidden") cfg.world.binary_hidden = parse_int(full, value, line);
    else if (key == "embed_dim") cfg.world.embed_dim = parse_int(full, value, line);
    else if (key.rfind("range_", 0) == 0) {
      std::string attr = key.substr(6);
      AttributeDef* def = find_attr(cfg, attr);
      if (!def || !def->numeric) bad("unknown key '" + full + "'", line);
      double r = parse_double(full, value, line);
      if (!(r > 0)) bad("range for '" + attr + "' must be positive", line);
      def->lo = -r;
      def->hi = r;
    } else {
      bad("unknown key '" + full + "'", line);
    }
  } else if (section == "train") {
    if (key == "seed") cfg.train.seed = parse_u64(full, value, line);
    else if (key == "stage1_steps") cfg.train.stage1_steps = parse_int(full, value, line);
    else if (key == "stage2_steps") cfg.train.stage2_steps = parse_int(full, value, line);
    else if (key == "batch") cfg.train.batch = parse_int(full, value, line);
    else if (key == "lr") cfg.train.lr = parse_double(full, value, line);
    else if (key == "beta1") cfg.train.beta1 = parse_double(full, value, line);
    else if (key == "beta2") cfg.train.beta2 = parse_double(full, value, line);
    else if (key == "adam_eps") cfg.train.adam_eps = parse_double(full, value, line);
    else if (key == "checkpoint_every") cfg.train.checkpoint_every = parse_int(full, value, line);
    else if (key == "clip_norm") cfg.train.clip_norm = parse_double(full, value, line);
    else if (key == "unified_dim") cfg.train.unified_dim = parse_int(full, value, line);
    else if (key == "use_cross_attention")
      cfg.train.use_cross_attention = parse_bool(full, value, line);
    else if (key == "all_experts_active")
      cfg.train.all_experts_active = parse_bool(full, value, line);
    else if (key == "single_stage") cfg.train.single_stage = parse_bool(full, value, line);
    else bad("unknown key '" + full + "'", line);
  } else if (section == "loss") {
    if (key == "alpha_binary") cfg.train.weights.alpha_binary = parse_double(full, value, line);
    else if (key == "alpha_id") cfg.train.weights.alpha_id = parse_double(full, value, line);
    else if (key == "alpha_norm") cfg.train.weights.alpha_norm = parse_double(full, value, line);
    else if (key == "alpha_dmac") cfg.train.weights.alpha_dmac = parse_double(full, value, line);
    else if (key.rfind("alpha_", 0) == 0) {
      std::string attr = key.substr(6);
      AttributeDef* def = find_attr(cfg, attr);
      if (!def || !def->numeric) bad("unknown key '" + full + "'", line);
      cfg.train.weights.alpha_numeric[attr] = parse_double(full, value, line);
    } else if (key.rfind("threshold_", 0) == 0) {
      std::string attr = key.substr(10);
      AttributeDef* def = find_attr(cfg, attr);
      if (!def || !def->numeric) bad("unknown key '" + full + "'", line);
      cfg.train.weights.thresholds[attr] = parse_double(full, value, line);
    } else {
      bad("unknown key '" + full + "'", line);
    }
  } else if (section == "eval") {
    if (key == "seed") cfg.eval.seed = parse_u64(full, value, line);
    else if (key == "size") cfg.eval.size = parse_int(full, value, line);
    else if (key == "val_size") cfg.eval.val_size = parse_int(full, value, line);
    else if (key == "val_every") cfg.eval.val_every = parse_int(full, value, line);
    else if (key == "margin") cfg.eval.margin = parse_double(full, value, line);
    else bad("unknown key '" + full + "'", line);
  } else {
    bad("unknown section '[" + section + "]'", line);
  }
}

}  // namespace

RunConfig default_config() { return RunConfig{}; }

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  std::set<std::string> seen;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = raw;
    size_t hash = s.find('#');
    if (hash != std::string::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') bad("malformed section header '" + s + "'", line);
      section = trim(s.substr(1, s.size() - 2));
      if (section != "train" && section != "world" && section != "loss" && section != "eval")
        bad("unknown section '[" + section + "]'", line);
      continue;
    }
    size_t eq = s.find('=');
    if (eq == std::string::npos) bad("expected 'key = value', got '" + s + "'", line);
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty() || value.empty()) bad("expected 'key = value', got '" + s + "'", line);

    std::string resolved = section;
    if (resolved.empty()) {
      // Keys before any section header resolve if they are unambiguous.
      std::vector<std::string> owners;
      for (const char* sec : {"train", "world", "loss", "eval"})
        if (section_has_key(cfg, sec, key)) owners.push_back(sec);
      if (owners.empty()) bad("unknown key '" + key + "'", line);
      if (owners.size() > 1)
        bad("key '" + key + "' is ambiguous outside a section (candidates: " + owners[0] + ", " +
                owners[1] + ")",
            line);
      resolved = owners[0];
    }
    std::string full = resolved + "." + key;
    if (!seen.insert(full).second) bad("duplicate key '" + full + "'", line);
    set_key(cfg, resolved, key, value, line);
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrCode::io, "cannot open config file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

std::string emit_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "[world]\n";
  os << "seed = " << cfg.world.seed << "\n";
  os << "layers = " << cfg.world.layers << "\n";
  os << "dim = " << cfg.world.dim << "\n";
  os << "feature_dim = " << cfg.world.feature_dim << "\n";
  os << "gen_hidden = " << cfg.world.gen_hidden << "\n";
  os << "binary_hidden = " << cfg.world.binary_hidden << "\n";
  os << "embed_dim = " << cfg.world.embed_dim << "\n";
  for (const auto& a : cfg.world.attributes)
    if (a.numeric) os << "range_" << a.name << " = " << fmt_g(a.hi) << "\n";
  os << "\n[train]\n";
  os << "seed = " << cfg.train.seed << "\n";
  os << "stage1_steps = " << cfg.train.stage1_steps << "\n";
  os << "stage2_steps = " << cfg.train.stage2_steps << "\n";
  os << "batch = " << cfg.train.batch << "\n";
  os << "lr = " << fmt_g(cfg.train.lr) << "\n";
  os << "beta1 = " << fmt_g(cfg.train.beta1) << "\n";
  os << "beta2 = " << fmt_g(cfg.train.beta2) << "\n";
  os << "adam_eps = " << fmt_g(cfg.train.adam_eps) << "\n";
  os << "checkpoint_every = " << cfg.train.checkpoint_every << "\n";
  os << "clip_norm = " << fmt_g(cfg.train.clip_norm) << "\n";
  os << "unified_dim = " << cfg.train.unified_dim << "\n";
  os << "use_cross_attention = " << (cfg.train.use_cross_attention ? "true" : "false") << "\n";
  os << "all_experts_active = " << (cfg.train.all_experts_active ? "true" : "false") << "\n";
  os << "single_stage = " << (cfg.train.single_stage ? "true" : "false") << "\n";
  os << "\n[loss]\n";
  for (const auto& a : cfg.world.attributes)
    if (a.numeric)
      os << "alpha_" << a.name << " = " << fmt_g(cfg.train.weights.alpha_for(a.name)) << "\n";
  os << "alpha_binary = " << fmt_g(cfg.train.weights.alpha_binary) << "\n";
  os << "alpha_id = " << fmt_g(cfg.train.weights.alpha_id) << "\n";
  os << "alpha_norm = " << fmt_g(cfg.train.weights.alpha_norm) << "\n";
  os << "alpha_dmac = " << fmt_g(cfg.train.weights.alpha_dmac) << "\n";
  for (const auto& a : cfg.world.attributes)
    if (a.numeric)
      os << "threshold_" << a.name << " = " << fmt_g(cfg.train.weights.threshold_for(a.name))
         << "\n";
  os << "\n[eval]\n";
  os << "seed = " << cfg.eval.seed << "\n";
  os << "size = " << cfg.eval.size << "\n";
  os << "val_size = " << cfg.eval.val_size << "\n";
  os << "val_every = " << cfg.eval.val_every << "\n";
  os << "margin = " << fmt_g(cfg.eval.margin) << "\n";
  return os.str();
}

void apply_override(RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
  size_t dot = dotted_key.find('.');
  if (dot == std::string::npos)
    raise(ErrCode::usage, "override key must look like section.key, got '" + dotted_key + "'");
  std::string section = dotted_key.substr(0, dot);
  std::string key = dotted_key.substr(dot + 1);
  set_key(cfg, section, key, value, 0);
}

}  // namespace dys
