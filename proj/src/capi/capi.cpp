#include "dysedit/dysedit.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "check/gradcheck.hpp"
#include "config/config.hpp"
#include "eval/evalbench.hpp"
#include "train/trainer.hpp"

struct dys_config {
  dys::RunConfig cfg;
};

struct dys_world {
  dys::FrozenWorld world;
};

namespace {

thread_local std::string g_last_error;

dys_status map_code(dys::ErrCode code) { return static_cast<dys_status>(static_cast<int>(code)); }

template <typename F>
dys_status wrap(F&& fn) {
  try {
    fn();
    return DYS_OK;
  } catch (const dys::Error& e) {
    g_last_error = e.what();
    return map_code(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DYS_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return DYS_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(bool cond, const char* what) {
  if (!cond) dys::raise(dys::ErrCode::usage, what);
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

extern "C" {

const char* dys_status_name(dys_status status) {
  switch (status) {
    case DYS_OK: return "ok";
    case DYS_ERR_USAGE: return "usage";
    case DYS_ERR_CONFIG: return "config";
    case DYS_ERR_SHAPE: return "shape";
    case DYS_ERR_DOMAIN: return "domain";
    case DYS_ERR_UNKNOWN_ATTRIBUTE: return "unknown_attribute";
    case DYS_ERR_CAPACITY: return "capacity";
    case DYS_ERR_DEGENERATE: return "degenerate";
    case DYS_ERR_IO: return "io";
    case DYS_ERR_CHECKSUM: return "checksum";
    case DYS_ERR_VERSION: return "version";
    case DYS_ERR_TRUNCATED: return "truncated";
    case DYS_ERR_MANIFEST_MISMATCH: return "manifest_mismatch";
    case DYS_ERR_DIVERGED: return "diverged";
    case DYS_ERR_INTERNAL: return "internal";
  }
  return "?";
}

const char* dys_last_error(void) { return g_last_error.c_str(); }

void dys_string_free(char* s) { std::free(s); }

dys_status dys_config_create(dys_config** out) {
  return wrap([&] {
    require(out != nullptr, "dys_config_create: out is null");
    *out = new dys_config{dys::default_config()};
  });
}

dys_status dys_config_parse_text(const char* text, dys_config** out) {
  return wrap([&] {
    require(text != nullptr && out != nullptr, "dys_config_parse_text: null argument");
    *out = new dys_config{dys::parse_config(text)};
  });
}

dys_status dys_config_load_file(const char* path, dys_config** out) {
  return wrap([&] {
    require(path != nullptr && out != nullptr, "dys_config_load_file: null argument");
    *out = new dys_config{dys::load_config_file(path)};
  });
}

dys_status dys_config_set(dys_config* cfg, const char* dotted_key, const char* value) {
  return wrap([&] {
    require(cfg != nullptr && dotted_key != nullptr && value != nullptr,
            "dys_config_set: null argument");
    dys::apply_override(cfg->cfg, dotted_key, value);
  });
}

dys_status dys_config_emit(const dys_config* cfg, char** text_out) {
  return wrap([&] {
    require(cfg != nullptr && text_out != nullptr, "dys_config_emit: null argument");
    *text_out = dup_string(dys::emit_config(cfg->cfg));
  });
}

void dys_config_free(dys_config* cfg) { delete cfg; }

dys_status dys_world_build(const dys_config* cfg, dys_world** out) {
  return wrap([&] {
    require(cfg != nullptr && out != nullptr, "dys_world_build: null argument");
    *out = new dys_world{dys::FrozenWorld::build(cfg->cfg.world)};
  });
}

dys_status dys_world_manifest(const dys_world* world, char** text_out) {
  return wrap([&] {
    require(world != nullptr && text_out != nullptr, "dys_world_manifest: null argument");
    *text_out = dup_string(world->world.manifest());
  });
}

void dys_world_free(dys_world* world) { delete world; }

dys_status dys_train_run(const dys_config* cfg, const dys_world* world, const char* out_dir,
                         const char* resume_checkpoint, char** summary_out) {
  return wrap([&] {
    require(cfg != nullptr && world != nullptr && out_dir != nullptr,
            "dys_train_run: null argument");
    const dys::RunConfig& rc = cfg->cfg;
    dys::NetConfig net_cfg =
        dys::NetConfig::from_world(world->world.config(), rc.train.unified_dim);
    dys::RunResult run =
        dys::run_two_stage(rc.train, net_cfg, world->world, out_dir, {},
                           resume_checkpoint ? resume_checkpoint : "");
    {
      std::ofstream snap(std::string(out_dir) + "/config_snapshot.cfg", std::ios::trunc);
      snap << dys::emit_config(rc);
    }
    if (summary_out) {
      std::ostringstream os;
      os << "steps=" << run.final_bundle.step << "\n";
      os << "checkpoint=" << out_dir << "/checkpoint_final.dys\n";
      os << "metrics=" << run.metrics_path << "\n";
      os << "latent_digest=" << run.final_bundle.latent_digest << "\n";
      os << "spec_digest=" << run.final_bundle.spec_digest << "\n";
      *summary_out = dup_string(os.str());
    }
  });
}

dys_status dys_eval_run(const dys_config* cfg, const dys_world* world,
                        const char* checkpoint_path, const char* out_dir, char** summary_out) {
  return wrap([&] {
    require(cfg != nullptr && world != nullptr && checkpoint_path != nullptr &&
                out_dir != nullptr,
            "dys_eval_run: null argument");
    const dys::RunConfig& rc = cfg->cfg;
    dys::CheckpointBundle bundle = dys::load_checkpoint(checkpoint_path);
    auto pairs = dys::make_eval_set(world->world, rc.eval.seed, rc.eval.size);
    dys::EvalReport rep = dys::evaluate_bundle(bundle, pairs, world->world);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) dys::raise(dys::ErrCode::io, "cannot create output directory");
    {
      std::ofstream f(std::string(out_dir) + "/control_accuracy.csv", std::ios::trunc);
      f << dys::control_table_csv(rep.control);
    }
    {
      std::ofstream f(std::string(out_dir) + "/identity.csv", std::ios::trunc);
      f << dys::identity_csv(rep.identity);
    }
    if (summary_out) {
      std::ostringstream os;
      for (const auto& name : world->world.numeric_names())
        os << "mae_" << name << "_single=" << fmt_g(rep.control.mae(name, false)) << "\n"
           << "mae_" << name << "_multi=" << fmt_g(rep.control.mae(name, true)) << "\n";
      for (const auto& name : world->world.binary_names())
        os << "accuracy_" << name << "_single=" << fmt_g(rep.control.accuracy(name, false)) << "\n"
           << "accuracy_" << name << "_multi=" << fmt_g(rep.control.accuracy(name, true)) << "\n";
      os << "identity_mean=" << fmt_g(rep.identity.mean_all) << "\n";
      os << "identity_mean_single=" << fmt_g(rep.identity.mean_single) << "\n";
      os << "identity_mean_multi=" << fmt_g(rep.identity.mean_multi) << "\n";
      os << "identity_excluded=" << rep.identity.excluded << "\n";
      *summary_out = dup_string(os.str());
    }
  });
}

dys_status dys_ablate_run(const dys_config* cfg, const dys_world* world, const char* out_dir,
                          char** summary_out) {
  return wrap([&] {
    require(cfg != nullptr && world != nullptr && out_dir != nullptr,
            "dys_ablate_run: null argument");
    const dys::RunConfig& rc = cfg->cfg;
    dys::NetConfig net_cfg =
        dys::NetConfig::from_world(world->world.config(), rc.train.unified_dim);
    auto variants = dys::all_variants();
    dys::AblationReport rep =
        dys::run_ablation(variants, rc.train, net_cfg, world->world, rc.eval, out_dir);
    if (summary_out) *summary_out = dup_string(dys::ablation_summary_csv(rep));
  });
}

dys_status dys_gradcheck_run(uint64_t seed, int configs_per_item, char** report_out,
                             int* all_pass_out) {
  return wrap([&] {
    require(configs_per_item > 0, "dys_gradcheck_run: configs_per_item must be positive");
    dys::GradCheckReport rep = dys::run_gradient_suite(seed, configs_per_item);
    if (report_out) *report_out = dup_string(rep.text());
    if (all_pass_out) *all_pass_out = rep.all_pass ? 1 : 0;
  });
}

dys_status dys_edit_run(const dys_config* cfg, const dys_world* world,
                        const char* checkpoint_path, const char* const* attr_names,
                        const double* values, size_t n_attrs, uint64_t latent_seed,
                        char** report_out) {
  return wrap([&] {
    require(cfg != nullptr && world != nullptr && checkpoint_path != nullptr,
            "dys_edit_run: null argument");
    require(n_attrs == 0 || (attr_names != nullptr && values != nullptr),
            "dys_edit_run: attribute arrays are null");
    const dys::FrozenWorld& w = world->world;

    dys::AttributeSpec spec;
    for (size_t i = 0; i < n_attrs; ++i) {
      std::string name = attr_names[i];
      bool known = false;
      for (const auto& a : w.config().attributes) {
        if (a.name != name) continue;
        known = true;
        if (a.numeric) {
          spec.numeric[name] = values[i];
        } else {
          if (values[i] != 0.0 && values[i] != 1.0)
            dys::raise(dys::ErrCode::domain, "edit: binary attribute '" + name + "' must be 0 or 1");
          spec.binary[name] = values[i] != 0.0 ? 1 : 0;
        }
      }
      if (!known)
        dys::raise(dys::ErrCode::unknown_attribute, "edit: unknown attribute '" + name + "'");
    }
    dys::validate_spec(spec, w.config().attributes);

    dys::CheckpointBundle bundle = dys::load_checkpoint(checkpoint_path);
    if (bundle.world_digest != w.manifest_digest())
      dys::raise(dys::ErrCode::manifest_mismatch,
                 "checkpoint was trained against a different world manifest");

    dys::Rng rng = dys::Rng(latent_seed).fork("edit_latent");
    dys::LatentCode z = w.sample_latent(rng);

    dys::Tape t;
    dys::BoundNet net = dys::BoundNet::bind(t, bundle.params);
    auto layers = dys::latent_tensors(z);
    dys::Tensor feat_u = w.generate(t, layers);
    dys::ForwardOptions opts = dys::forward_options_for(bundle.cfg);
    if (opts.all_experts_active) {
      for (const auto& [name, p] : w.predict_binary(t, feat_u).probs)
        if (!spec.has(name)) opts.inactive_fill[name] = p.value() > 0.5 ? 1.0 : 0.0;
      for (const auto& a : w.config().attributes)
        if (a.numeric && !spec.has(a.name)) opts.inactive_fill[a.name] = 0.0;
    }
    dys::ForwardResult res = dys::edit_forward(t, net, layers, spec, opts);
    dys::Tensor feat_m = w.generate(t, res.w_hat);

    std::ostringstream os;
    os << "latent_seed=" << latent_seed << "\n";
    os << "arity=" << spec.arity() << "\n";
    for (const auto& [name, target] : spec.numeric) {
      double measured =
          dys::measure_numeric(w, name, feat_m.vec()) - dys::measure_numeric(w, name, feat_u.vec());
      os << "target_" << name << "=" << fmt_g(target) << "\n";
      os << "measured_" << name << "=" << fmt_g(measured) << "\n";
    }
    for (const auto& [name, target] : spec.binary) {
      double logit = dys::measure_binary_logit(w, name, feat_m.vec());
      os << "target_" << name << "=" << target << "\n";
      os << "measured_" << name << "=" << (logit > 0.0 ? 1 : 0) << "\n";
      os << "logit_" << name << "=" << fmt_g(logit) << "\n";
    }
    auto e_u = dys::measure_identity(w, feat_u.vec());
    auto e_m = dys::measure_identity(w, feat_m.vec());
    os << "identity_similarity=" << fmt_g(dys::cosine_value(e_m, e_u)) << "\n";
    if (report_out) *report_out = dup_string(os.str());
  });
}

dys_status dys_cost_report(const dys_config* cfg, char** table_out) {
  return wrap([&] {
    require(cfg != nullptr && table_out != nullptr, "dys_cost_report: null argument");
    dys::NetConfig net_cfg =
        dys::NetConfig::from_world(cfg->cfg.world, cfg->cfg.train.unified_dim);
    *table_out = dup_string(dys::cost_csv(dys::cost_report(net_cfg)));
  });
}

}  // extern "C"
