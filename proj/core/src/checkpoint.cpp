#include "wpmixer/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "wpmixer/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace wpmixer {

namespace {

constexpr char kMagic[4] = {'W', 'P', 'M', 'X'};
constexpr uint32_t kVersion = 1;

const uint32_t* crc_table() {
  static const auto table = [] {
    static uint32_t t[256];
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  return table;
}

struct Cursor {
  const uint8_t* p;
  size_t left;
  const std::string& path;

  void take(void* dst, size_t n, const char* what) {
    if (n > left)
      throw IoError("checkpoint '" + path + "' is truncated while reading " + what);
    std::memcpy(dst, p, n);
    p += n;
    left -= n;
  }
  uint32_t u32(const char* what) {
    uint32_t v;
    take(&v, 4, what);
    return v;
  }
  uint64_t u64(const char* what) {
    uint64_t v;
    take(&v, 8, what);
    return v;
  }
  std::string str(uint64_t n, const char* what) {
    if (n > left)
      throw IoError("checkpoint '" + path + "' is truncated while reading " + what);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    left -= n;
    return s;
  }
};

void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<char*>(&v), 4); }
void put_u64(std::string& out, uint64_t v) { out.append(reinterpret_cast<char*>(&v), 8); }
void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out.append(s);
}

}  // namespace

uint32_t crc32(const void* data, size_t n, uint32_t seed) {
  const uint32_t* t = crc_table();
  uint32_t c = seed ^ 0xFFFFFFFFu;
  const uint8_t* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) c = t[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_str(out, ck.config.serialize());
  put_u64(out, ck.columns.size());
  for (const std::string& c : ck.columns) put_str(out, c);
  put_u64(out, ck.tensors.size());

  std::ostringstream manifest;
  for (const auto& [name, t] : ck.tensors) {
    put_str(out, name);
    put_u64(out, t.shape().size());
    for (int64_t d : t.shape()) put_u64(out, static_cast<uint64_t>(d));
    const size_t bytes = static_cast<size_t>(t.size()) * sizeof(double);
    out.append(reinterpret_cast<const char*>(t.data()), bytes);
    char line[160];
    std::snprintf(line, sizeof(line), "%s %08x %lld\n", name.c_str(),
                  crc32(t.data(), bytes), static_cast<long long>(t.size()));
    manifest << line;
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint '" + path + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint '" + path + "'");
  f.close();

  const std::string mpath = path + ".manifest";
  std::ofstream mf(mpath, std::ios::binary | std::ios::trunc);
  if (!mf) throw IoError("cannot write checkpoint manifest '" + mpath + "'");
  mf << manifest.str();
  if (!mf) throw IoError("failed writing checkpoint manifest '" + mpath + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("failed reading checkpoint '" + path + "'");

  Cursor cur{reinterpret_cast<const uint8_t*>(blob.data()), blob.size(), path};
  char magic[4];
  cur.take(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("'" + path + "' is not a checkpoint (bad magic)");
  uint32_t version = cur.u32("version");
  if (version != kVersion)
    throw IoError("checkpoint '" + path + "' has unsupported version " +
                  std::to_string(version));

  Checkpoint ck;
  uint64_t cfg_len = cur.u64("config length");
  std::string cfg_text = cur.str(cfg_len, "config");
  try {
    ck.config = RunConfig::parse(cfg_text);
  } catch (const ConfigError& e) {
    throw IoError("checkpoint '" + path + "' carries an unreadable config: " + e.what());
  }

  uint64_t n_cols = cur.u64("column count");
  for (uint64_t i = 0; i < n_cols; ++i)
    ck.columns.push_back(cur.str(cur.u64("column name length"), "column name"));

  uint64_t n_tensors = cur.u64("tensor count");
  for (uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = cur.str(cur.u64("tensor name length"), "tensor name");
    uint64_t rank = cur.u64("tensor rank");
    if (rank > 8) throw IoError("checkpoint '" + path + "' tensor '" + name + "' has rank " +
                                std::to_string(rank));
    Shape shape;
    int64_t numel = 1;
    for (uint64_t r = 0; r < rank; ++r) {
      uint64_t d = cur.u64("tensor dim");
      shape.push_back(static_cast<int64_t>(d));
      numel *= static_cast<int64_t>(d);
    }
    if (numel < 0 || static_cast<uint64_t>(numel) * sizeof(double) > cur.left)
      throw IoError("checkpoint '" + path + "' is truncated in tensor '" + name + "'");
    Tensor t(shape);
    cur.take(t.data(), static_cast<size_t>(numel) * sizeof(double), "tensor payload");
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (cur.left != 0)
    throw IoError("checkpoint '" + path + "' has " + std::to_string(cur.left) +
                  " trailing bytes");

  // Verify against the manifest when it is present.
  const std::string mpath = path + ".manifest";
  std::ifstream mf(mpath, std::ios::binary);
  if (mf) {
    std::map<std::string, std::pair<std::string, long long>> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(mf, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string name, crc;
      long long numel;
      if (!(ls >> name >> crc >> numel))
        throw IoError("manifest '" + mpath + "' line " + std::to_string(lineno) +
                      " is malformed");
      entries[name] = {crc, numel};
    }
    for (const auto& [name, t] : ck.tensors) {
      auto it = entries.find(name);
      if (it == entries.end())
        throw IoError("manifest '" + mpath + "' is missing tensor '" + name + "'");
      char want[16];
      std::snprintf(want, sizeof(want), "%08x",
                    crc32(t.data(), static_cast<size_t>(t.size()) * sizeof(double)));
      if (it->second.first != want || it->second.second != t.size())
        throw IoError("checksum mismatch for tensor '" + name + "' in '" + path + "'");
      entries.erase(it);
    }
    if (!entries.empty())
      throw IoError("manifest '" + mpath + "' lists unknown tensor '" +
                    entries.begin()->first + "'");
  }
  return ck;
}

Checkpoint make_checkpoint(const RunConfig& cfg, WPMixerModel& model, const Standardization& st,
                           const std::vector<std::string>& columns) {
  Checkpoint ck;
  ck.config = cfg;
  ck.columns = columns;
  for (const Parameter* p : model.parameters())
    ck.tensors.emplace_back(p->name, p->value.clone());
  for (const auto& [name, state] : model.bn_states()) {
    if (!state->initialized) continue;
    ck.tensors.emplace_back(name + ".running_mean", state->running_mean.clone());
    ck.tensors.emplace_back(name + ".running_var", state->running_var.clone());
  }
  ck.tensors.emplace_back("data.mean", st.mean.clone());
  ck.tensors.emplace_back("data.std", st.std.clone());
  return ck;
}

void restore_model(WPMixerModel& model, const Checkpoint& ck) {
  std::set<std::string> consumed{"data.mean", "data.std"};
  for (Parameter* p : model.parameters()) {
    const Tensor* t = ck.find(p->name);
    if (!t) throw IoError("checkpoint is missing parameter '" + p->name + "'");
    if (t->shape() != p->value.shape())
      throw IoError("checkpoint parameter '" + p->name + "' has shape " +
                    shape_str(t->shape()) + ", model expects " + shape_str(p->value.shape()));
    std::memcpy(p->value.data(), t->data(),
                static_cast<size_t>(t->size()) * sizeof(double));
    consumed.insert(p->name);
  }
  for (const auto& [name, state] : model.bn_states()) {
    const Tensor* mean = ck.find(name + ".running_mean");
    const Tensor* var = ck.find(name + ".running_var");
    if (!mean != !var)
      throw IoError("checkpoint has only one of '" + name + ".running_mean' / '.running_var'");
    if (!mean) continue;
    if (mean->shape() != state->running_mean.shape() ||
        var->shape() != state->running_var.shape())
      throw IoError("checkpoint running stats for '" + name + "' have the wrong shape");
    std::memcpy(state->running_mean.data(), mean->data(),
                static_cast<size_t>(mean->size()) * sizeof(double));
    std::memcpy(state->running_var.data(), var->data(),
                static_cast<size_t>(var->size()) * sizeof(double));
    state->initialized = true;
    consumed.insert(name + ".running_mean");
    consumed.insert(name + ".running_var");
  }
  for (const auto& [name, t] : ck.tensors)
    if (!consumed.count(name))
      throw IoError("checkpoint holds tensor '" + name + "' that the model does not expect");
}

Standardization restore_standardization(const Checkpoint& ck) {
  const Tensor* mean = ck.find("data.mean");
  const Tensor* sd = ck.find("data.std");
  if (!mean || !sd) throw IoError("checkpoint is missing 'data.mean' / 'data.std'");
  return Standardization{mean->clone(), sd->clone()};
}

}  // namespace wpmixer
