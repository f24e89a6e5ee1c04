#include <cstring>
#include <fstream>
#include <map>

#include "core/crc32.hpp"
#include "train/trainer.hpp"

namespace dys {

namespace {

constexpr char kMagic[4] = {'D', 'Y', 'S', '1'};
constexpr uint32_t kVersion = 1;

class ByteWriter {
 public:
  void raw(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u32(uint32_t v) { raw(&v, sizeof v); }
  void u64(uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const char* p, size_t n) : p_(p), n_(n) {}
  void raw(void* out, size_t n) {
    if (pos_ + n > n_) raise(ErrCode::truncated, "checkpoint truncated inside a record");
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }
  uint32_t u32() {
    uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  bool done() const { return pos_ == n_; }

 private:
  const char* p_;
  size_t n_;
  size_t pos_ = 0;
};

void write_record(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.u32(static_cast<uint32_t>(name.size()));
  w.raw(name.data(), name.size());
  w.u32(static_cast<uint32_t>(t.rank()));
  for (int64_t d : t.shape()) w.u64(static_cast<uint64_t>(d));
  w.raw(t.data(), sizeof(double) * static_cast<size_t>(t.size()));
}

Tensor scalar_rec(double v) { return Tensor::scalar(v); }

double u64_as_f64(uint64_t v) {
  double d;
  std::memcpy(&d, &v, sizeof d);
  return d;
}

uint64_t f64_as_u64(double d) {
  uint64_t v;
  std::memcpy(&v, &d, sizeof v);
  return v;
}

}  // namespace

void save_checkpoint(const CheckpointBundle& b, const std::string& path) {
  std::vector<std::pair<std::string, Tensor>> records;
  for (int64_t i = 0; i < b.params.count(); ++i)
    records.emplace_back(b.params.name(i), b.params.tensor(i));
  for (int64_t i = 0; i < b.params.count(); ++i)
    records.emplace_back("adam.m." + b.params.name(i), b.opt.m[static_cast<size_t>(i)]);
  for (int64_t i = 0; i < b.params.count(); ++i)
    records.emplace_back("adam.v." + b.params.name(i), b.opt.v[static_cast<size_t>(i)]);
  records.emplace_back("opt.step", scalar_rec(static_cast<double>(b.opt.t)));
  records.emplace_back("meta.step", scalar_rec(static_cast<double>(b.step)));
  records.emplace_back("meta.latent_digest", scalar_rec(u64_as_f64(b.latent_digest)));
  records.emplace_back("meta.spec_digest", scalar_rec(u64_as_f64(b.spec_digest)));

  const TrainConfig& c = b.cfg;
  records.emplace_back("config.train.seed", scalar_rec(u64_as_f64(c.seed)));
  records.emplace_back("config.train.stage1_steps", scalar_rec(static_cast<double>(c.stage1_steps)));
  records.emplace_back("config.train.stage2_steps", scalar_rec(static_cast<double>(c.stage2_steps)));
  records.emplace_back("config.train.batch", scalar_rec(static_cast<double>(c.batch)));
  records.emplace_back("config.train.lr", scalar_rec(c.lr));
  records.emplace_back("config.train.beta1", scalar_rec(c.beta1));
  records.emplace_back("config.train.beta2", scalar_rec(c.beta2));
  records.emplace_back("config.train.adam_eps", scalar_rec(c.adam_eps));
  records.emplace_back("config.train.checkpoint_every",
                       scalar_rec(static_cast<double>(c.checkpoint_every)));
  records.emplace_back("config.train.clip_norm", scalar_rec(c.clip_norm));
  records.emplace_back("config.train.unified_dim", scalar_rec(static_cast<double>(c.unified_dim)));
  records.emplace_back("config.train.use_cross_attention",
                       scalar_rec(c.use_cross_attention ? 1.0 : 0.0));
  records.emplace_back("config.train.all_experts_active",
                       scalar_rec(c.all_experts_active ? 1.0 : 0.0));
  records.emplace_back("config.train.single_stage", scalar_rec(c.single_stage ? 1.0 : 0.0));
  records.emplace_back("config.loss.alpha_binary", scalar_rec(c.weights.alpha_binary));
  records.emplace_back("config.loss.alpha_id", scalar_rec(c.weights.alpha_id));
  records.emplace_back("config.loss.alpha_norm", scalar_rec(c.weights.alpha_norm));
  records.emplace_back("config.loss.alpha_dmac", scalar_rec(c.weights.alpha_dmac));
  for (const auto& [name, v] : c.weights.alpha_numeric)
    records.emplace_back("config.loss.alpha." + name, scalar_rec(v));
  for (const auto& [name, v] : c.weights.thresholds)
    records.emplace_back("config.loss.threshold." + name, scalar_rec(v));

  const NetConfig& n = b.params.config();
  records.emplace_back("config.net.layers", scalar_rec(static_cast<double>(n.layers)));
  records.emplace_back("config.net.dim", scalar_rec(static_cast<double>(n.dim)));
  records.emplace_back("config.net.unified_dim", scalar_rec(static_cast<double>(n.unified_dim)));
  for (size_t i = 0; i < n.attributes.size(); ++i) {
    const AttributeDef& a = n.attributes[i];
    records.emplace_back("config.attr." + std::to_string(i) + "." + a.name,
                         Tensor({3}, {a.numeric ? 1.0 : 0.0, a.lo, a.hi}));
  }

  ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.u32(b.world_digest);
  w.u32(static_cast<uint32_t>(records.size()));
  for (const auto& [name, t] : records) write_record(w, name, t);
  w.u32(static_cast<uint32_t>(2 * Rng::kStateWords));
  for (uint64_t word : b.latent_rng) w.u64(word);
  for (uint64_t word : b.spec_rng) w.u64(word);

  uint32_t crc = crc32(w.str().data(), w.str().size());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrCode::io, "cannot open '" + path + "' for writing");
  out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
  out.write(reinterpret_cast<const char*>(&crc), sizeof crc);
  if (!out) raise(ErrCode::io, "write failed for '" + path + "'");
}

CheckpointBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrCode::io, "cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 4 + 4 + 4 + 4 + 4) raise(ErrCode::truncated, "checkpoint file too short");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    raise(ErrCode::io, "'" + path + "' is not a checkpoint (bad magic)");
  uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kVersion)
    raise(ErrCode::version, "checkpoint format version " + std::to_string(version) +
                                " is not supported (expected " + std::to_string(kVersion) + ")");
  uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  uint32_t crc = crc32(bytes.data(), bytes.size() - 4);
  if (crc != stored_crc)
    raise(ErrCode::checksum, "checkpoint checksum mismatch (corrupted file)");

  ByteReader r(bytes.data() + 8, bytes.size() - 12);
  CheckpointBundle b;
  b.world_digest = r.u32();
  uint32_t count = r.u32();
  std::map<std::string, Tensor> rec;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = r.u32();
    std::string name(name_len, '\0');
    r.raw(name.data(), name_len);
    uint32_t rank = r.u32();
    Shape shape;
    for (uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int64_t>(r.u64()));
    int64_t n = numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    r.raw(data.data(), sizeof(double) * static_cast<size_t>(n));
    rec.emplace(name, Tensor(std::move(shape), std::move(data)));
  }
  uint32_t rng_words = r.u32();
  if (rng_words != 2 * Rng::kStateWords)
    raise(ErrCode::truncated, "unexpected rng state length");
  for (int i = 0; i < Rng::kStateWords; ++i) b.latent_rng[static_cast<size_t>(i)] = r.u64();
  for (int i = 0; i < Rng::kStateWords; ++i) b.spec_rng[static_cast<size_t>(i)] = r.u64();
  if (!r.done()) raise(ErrCode::truncated, "trailing bytes after rng state");

  auto need = [&](const std::string& name) -> const Tensor& {
    auto it = rec.find(name);
    if (it == rec.end()) raise(ErrCode::truncated, "checkpoint misses record '" + name + "'");
    return it->second;
  };
  auto need_scalar = [&](const std::string& name) { return need(name).value(); };

  NetConfig net_cfg;
  net_cfg.layers = static_cast<int64_t>(need_scalar("config.net.layers"));
  net_cfg.dim = static_cast<int64_t>(need_scalar("config.net.dim"));
  net_cfg.unified_dim = static_cast<int64_t>(need_scalar("config.net.unified_dim"));
  net_cfg.attributes.clear();
  for (size_t i = 0;; ++i) {
    std::string prefix = "config.attr." + std::to_string(i) + ".";
    auto it = rec.lower_bound(prefix);
    if (it == rec.end() || it->first.rfind(prefix, 0) != 0) break;
    AttributeDef a;
    a.name = it->first.substr(prefix.size());
    a.numeric = it->second[0] != 0.0;
    a.lo = it->second[1];
    a.hi = it->second[2];
    net_cfg.attributes.push_back(std::move(a));
  }
  if (net_cfg.attributes.empty()) raise(ErrCode::truncated, "checkpoint misses attribute records");

  TrainConfig c;
  c.seed = f64_as_u64(need_scalar("config.train.seed"));
  c.stage1_steps = static_cast<int64_t>(need_scalar("config.train.stage1_steps"));
  c.stage2_steps = static_cast<int64_t>(need_scalar("config.train.stage2_steps"));
  c.batch = static_cast<int64_t>(need_scalar("config.train.batch"));
  c.lr = need_scalar("config.train.lr");
  c.beta1 = need_scalar("config.train.beta1");
  c.beta2 = need_scalar("config.train.beta2");
  c.adam_eps = need_scalar("config.train.adam_eps");
  c.checkpoint_every = static_cast<int64_t>(need_scalar("config.train.checkpoint_every"));
  c.clip_norm = need_scalar("config.train.clip_norm");
  c.unified_dim = static_cast<int64_t>(need_scalar("config.train.unified_dim"));
  c.use_cross_attention = need_scalar("config.train.use_cross_attention") != 0.0;
  c.all_experts_active = need_scalar("config.train.all_experts_active") != 0.0;
  c.single_stage = need_scalar("config.train.single_stage") != 0.0;
  c.weights.alpha_binary = need_scalar("config.loss.alpha_binary");
  c.weights.alpha_id = need_scalar("config.loss.alpha_id");
  c.weights.alpha_norm = need_scalar("config.loss.alpha_norm");
  c.weights.alpha_dmac = need_scalar("config.loss.alpha_dmac");
  c.weights.alpha_numeric.clear();
  c.weights.thresholds.clear();
  for (const auto& [name, t] : rec) {
    if (name.rfind("config.loss.alpha.", 0) == 0)
      c.weights.alpha_numeric[name.substr(18)] = t.value();
    if (name.rfind("config.loss.threshold.", 0) == 0)
      c.weights.thresholds[name.substr(22)] = t.value();
  }
  b.cfg = c;

  b.params = NetParams::like(net_cfg);
  for (int64_t i = 0; i < b.params.count(); ++i) {
    const Tensor& t = need(b.params.name(i));
    if (t.shape() != b.params.tensor(i).shape())
      raise(ErrCode::truncated, "record '" + b.params.name(i) + "' has the wrong shape");
    b.params.tensor(i) = t;
  }
  b.opt = AdamState::like(b.params);
  for (int64_t i = 0; i < b.params.count(); ++i) {
    b.opt.m[static_cast<size_t>(i)] = need("adam.m." + b.params.name(i));
    b.opt.v[static_cast<size_t>(i)] = need("adam.v." + b.params.name(i));
  }
  b.opt.t = static_cast<int64_t>(need_scalar("opt.step"));
  b.step = static_cast<int64_t>(need_scalar("meta.step"));
  b.latent_digest = f64_as_u64(need_scalar("meta.latent_digest"));
  b.spec_digest = f64_as_u64(need_scalar("meta.spec_digest"));
  return b;
}

}  // namespace dys
