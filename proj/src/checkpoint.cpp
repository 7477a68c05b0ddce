#include "memdiff/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>

#include "memdiff/common.hpp"

namespace memdiff {

void to_json(nlohmann::json& j, const MemoryMode& m) { j = to_string(m); }
void from_json(const nlohmann::json& j, MemoryMode& m) {
  m = memory_mode_from_string(j.get<std::string>());
}
void to_json(nlohmann::json& j, const Solver& s) { j = to_string(s); }
void from_json(const nlohmann::json& j, Solver& s) {
  s = solver_from_string(j.get<std::string>());
}

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  const char* need(size_t n) {
    if (buf.size() - pos < n)
      throw IntegrityError(strfmt("truncated checkpoint: wanted %zu bytes at offset %zu of %zu", n,
                                  pos, buf.size()));
    const char* p = buf.data() + pos;
    pos += n;
    return p;
  }
  uint32_t u32() {
    const char* p = need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(p[i])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    const char* p = need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(p[i])) << (8 * i);
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
};

constexpr uint64_t kMaxNameLen = 1 << 16;
constexpr uint64_t kMaxRank = 16;
constexpr uint64_t kMaxElems = uint64_t(1) << 40;

}  // namespace

void checkpoint_save(const std::string& path, const Checkpoint& ck) {
  nlohmann::json meta = ck.meta;
  meta["n_tensors"] = ck.tensors.size();
  std::string header = meta.dump();

  std::string out;
  out.append(kCheckpointMagic, 8);
  put_u32(out, kCheckpointVersion);
  put_u64(out, header.size());
  out += header;

  for (const auto& [name, t] : ck.tensors) {
    if (name.empty() || name.size() >= kMaxNameLen)
      throw ContractError("checkpoint_save: bad tensor name");
    int64_t n = 1;
    for (int64_t e : t.shape) n *= e;
    if (n != t.numel())
      throw ContractError("checkpoint_save: shape of '" + name + "' does not match its payload");
    put_u64(out, name.size());
    out += name;
    put_u64(out, uint64_t(t.rank()));
    for (int64_t e : t.shape) put_u64(out, uint64_t(e));
    for (double d : t.data) put_f64(out, d);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(out.data(), std::streamsize(out.size()));
  f.flush();
  if (!f) throw IoError("checkpoint_save: cannot write " + path);
}

Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint_load: cannot read " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{buf};
  if (std::memcmp(r.need(8), kCheckpointMagic, 8) != 0)
    throw IntegrityError("checkpoint_load: " + path + " is not a MALTCKPT file");
  uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw IntegrityError(strfmt("checkpoint_load: format version %u, this build reads %u", version,
                                kCheckpointVersion));

  uint64_t header_len = r.u64();
  if (header_len > buf.size() - r.pos)
    throw IntegrityError("truncated checkpoint: header length exceeds file size");
  const char* hp = r.need(header_len);

  Checkpoint ck;
  try {
    ck.meta = nlohmann::json::parse(hp, hp + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (!ck.meta.contains("n_tensors"))
    throw IntegrityError("checkpoint header lacks the n_tensors field");
  uint64_t n_tensors = ck.meta.at("n_tensors").get<uint64_t>();

  for (uint64_t i = 0; i < n_tensors; ++i) {
    uint64_t name_len = r.u64();
    if (name_len == 0 || name_len >= kMaxNameLen)
      throw IntegrityError("implausible tensor record: bad name length");
    std::string name(r.need(name_len), name_len);
    uint64_t rank = r.u64();
    if (rank > kMaxRank) throw IntegrityError("implausible tensor record: rank " + name);
    Shape shape(rank);
    uint64_t n = 1;
    for (uint64_t d = 0; d < rank; ++d) {
      uint64_t e = r.u64();
      if (e > kMaxElems || (e != 0 && n > kMaxElems / e))
        throw IntegrityError("implausible tensor record: extents of " + name);
      shape[d] = int64_t(e);
      n *= e;
    }
    Tensor t = Tensor::zeros(shape);
    for (uint64_t k = 0; k < n; ++k) t[int64_t(k)] = r.f64();
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (r.pos != buf.size())
    throw IntegrityError(strfmt("checkpoint has %zu trailing bytes", buf.size() - r.pos));
  return ck;
}

namespace {

nlohmann::json model_header(const ModelConfig& cfg) {
  nlohmann::json j;
  j["model"] = cfg;
  return j;
}

}  // namespace

void save_train_state(const std::string& path, const Malt& model, const AdamW& opt,
                      const nlohmann::json& run_config, int64_t step) {
  const auto& items = model.params.items;
  if (opt.m.size() != items.size() || opt.v.size() != items.size())
    throw ContractError("save_train_state: optimizer state does not match the model");

  Checkpoint ck;
  ck.meta = model_header(model.cfg);
  ck.meta["run"] = run_config;
  ck.meta["step"] = step;
  ck.meta["opt_t"] = opt.t;
  for (const auto& [name, node] : items) ck.tensors.emplace_back(name, node->value);
  for (size_t i = 0; i < items.size(); ++i)
    ck.tensors.emplace_back("m/" + items[i].first, opt.m[i]);
  for (size_t i = 0; i < items.size(); ++i)
    ck.tensors.emplace_back("v/" + items[i].first, opt.v[i]);
  checkpoint_save(path, ck);
}

namespace {

const Tensor& record_for(const std::unordered_map<std::string, const Tensor*>& by_name,
                         const std::string& name, const Shape& want) {
  auto it = by_name.find(name);
  if (it == by_name.end()) throw ConfigError("checkpoint is missing tensor '" + name + "'");
  if (it->second->shape != want)
    throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second->shape) +
                      ", model wants " + shape_str(want));
  return *it->second;
}

std::unordered_map<std::string, const Tensor*> index_records(const Checkpoint& ck) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ck.tensors)
    if (!by_name.emplace(name, &t).second)
      throw IntegrityError("duplicate tensor record '" + name + "'");
  return by_name;
}

}  // namespace

TrainState load_train_state(const std::string& path, Malt& model, AdamW& opt) {
  Checkpoint ck = checkpoint_load(path);
  if (!ck.meta.contains("model") || !ck.meta.contains("step") || !ck.meta.contains("opt_t"))
    throw ConfigError("load_train_state: " + path + " is not a training checkpoint");

  nlohmann::json live = model.cfg;
  if (nlohmann::json(ck.meta.at("model").get<ModelConfig>()) != live)
    throw ConfigError("load_train_state: checkpoint model config " + ck.meta.at("model").dump() +
                      " does not match the live model " + live.dump());

  auto& items = model.params.items;
  if (opt.m.size() != items.size() || opt.v.size() != items.size())
    throw ContractError("load_train_state: optimizer was not built from this model");
  if (ck.tensors.size() != 3 * items.size())
    throw ConfigError(strfmt("load_train_state: %zu tensor records, expected %zu",
                             ck.tensors.size(), 3 * items.size()));

  auto by_name = index_records(ck);
  // resolve every record before mutating anything
  std::vector<const Tensor*> weights, ms, vs;
  for (const auto& [name, node] : items) {
    weights.push_back(&record_for(by_name, name, node->value.shape));
    ms.push_back(&record_for(by_name, "m/" + name, node->value.shape));
    vs.push_back(&record_for(by_name, "v/" + name, node->value.shape));
  }
  for (size_t i = 0; i < items.size(); ++i) {
    items[i].second->value = *weights[i];
    items[i].second->grad = Tensor{};
    opt.m[i] = *ms[i];
    opt.v[i] = *vs[i];
  }
  opt.t = ck.meta.at("opt_t").get<int64_t>();

  TrainState st;
  st.run_config = ck.meta.contains("run") ? ck.meta.at("run") : nlohmann::json();
  st.step = ck.meta.at("step").get<int64_t>();
  return st;
}

void save_codec(const std::string& path, const Codec& codec) {
  Checkpoint ck;
  ck.meta["codec"] = codec.cfg;
  ck.meta["c_in"] = codec.c_in;
  for (const auto& [name, node] : codec.params.items) ck.tensors.emplace_back(name, node->value);
  checkpoint_save(path, ck);
}

void load_codec(const std::string& path, Codec& codec) {
  Checkpoint ck = checkpoint_load(path);
  if (!ck.meta.contains("codec"))
    throw ConfigError("load_codec: " + path + " is not a codec checkpoint");
  nlohmann::json live = codec.cfg;
  if (ck.meta.at("codec") != live || ck.meta.at("c_in").get<int64_t>() != codec.c_in)
    throw ConfigError("load_codec: checkpoint codec config " + ck.meta.at("codec").dump() +
                      " does not match the live codec " + live.dump());
  auto& items = codec.params.items;
  if (ck.tensors.size() != items.size())
    throw ConfigError(strfmt("load_codec: %zu tensor records, expected %zu", ck.tensors.size(),
                             items.size()));
  auto by_name = index_records(ck);
  std::vector<const Tensor*> weights;
  for (const auto& [name, node] : items)
    weights.push_back(&record_for(by_name, name, node->value.shape));
  for (size_t i = 0; i < items.size(); ++i) {
    items[i].second->value = *weights[i];
    items[i].second->grad = Tensor{};
  }
}

}  // namespace memdiff
