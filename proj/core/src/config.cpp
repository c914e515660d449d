#include "wpmixer/config.hpp"

#include <cerrno>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "wpmixer/errors.hpp"

extern char** environ;

namespace wpmixer {

std::string format_double(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int64_t parse_i64(const std::string& s, const std::string& key) {
  errno = 0;
  char* end = nullptr;
  long long v = std::strtoll(s.c_str(), &end, 10);
  if (errno != 0 || end == s.c_str() || *end != '\0')
    throw ConfigError("invalid integer '" + s + "' for key '" + key + "'");
  return static_cast<int64_t>(v);
}

uint64_t parse_u64(const std::string& s, const std::string& key) {
  errno = 0;
  char* end = nullptr;
  if (!s.empty() && s[0] == '-')
    throw ConfigError("invalid unsigned integer '" + s + "' for key '" + key + "'");
  unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (errno != 0 || end == s.c_str() || *end != '\0')
    throw ConfigError("invalid unsigned integer '" + s + "' for key '" + key + "'");
  return static_cast<uint64_t>(v);
}

double parse_f64(const std::string& s, const std::string& key) {
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (errno != 0 || end == s.c_str() || *end != '\0')
    throw ConfigError("invalid number '" + s + "' for key '" + key + "'");
  return v;
}

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("invalid boolean '" + s + "' for key '" + key +
                    "' (expected true or false)");
}

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

const std::vector<Field>& fields() {
  auto i64 = [](int64_t RunConfig::* p) {
    return Field{nullptr, nullptr,
                 [p](const RunConfig& c) { return std::to_string(c.*p); },
                 [p](RunConfig& c, const std::string& v, const std::string& k) {
                   c.*p = parse_i64(v, k);
                 }};
  };
  auto f64 = [](double RunConfig::* p) {
    return Field{nullptr, nullptr,
                 [p](const RunConfig& c) { return format_double(c.*p); },
                 [p](RunConfig& c, const std::string& v, const std::string& k) {
                   c.*p = parse_f64(v, k);
                 }};
  };
  auto bol = [](bool RunConfig::* p) {
    return Field{nullptr, nullptr,
                 [p](const RunConfig& c) { return std::string(c.*p ? "true" : "false"); },
                 [p](RunConfig& c, const std::string& v, const std::string& k) {
                   c.*p = parse_bool(v, k);
                 }};
  };
  auto str = [](std::string RunConfig::* p) {
    return Field{nullptr, nullptr,
                 [p](const RunConfig& c) { return c.*p; },
                 [p](RunConfig& c, const std::string& v, const std::string&) { c.*p = v; }};
  };
  auto named = [](Field f, const char* section, const char* key) {
    f.section = section;
    f.key = key;
    return f;
  };

  static const std::vector<Field> table = [&] {
    std::vector<Field> t;
    t.push_back(named(str(&RunConfig::data_path), "data", "path"));
    t.push_back(named(str(&RunConfig::data_name), "data", "name"));
    t.push_back(named(i64(&RunConfig::n_train), "data", "n_train"));
    t.push_back(named(i64(&RunConfig::n_val), "data", "n_val"));
    t.push_back(named(i64(&RunConfig::n_test), "data", "n_test"));
    t.push_back(named(bol(&RunConfig::strict_splits), "data", "strict_splits"));

    t.push_back(named(i64(&RunConfig::lookback), "model", "lookback"));
    t.push_back(named(i64(&RunConfig::horizon), "model", "horizon"));
    t.push_back(named(str(&RunConfig::wavelet), "model", "wavelet"));
    t.push_back(Field{"model", "level",
                      [](const RunConfig& c) { return std::to_string(c.level); },
                      [](RunConfig& c, const std::string& v, const std::string& k) {
                        c.level = static_cast<int>(parse_i64(v, k));
                      }});
    t.push_back(named(i64(&RunConfig::patch_len), "model", "patch_len"));
    t.push_back(named(i64(&RunConfig::stride), "model", "stride"));
    t.push_back(named(i64(&RunConfig::embed_dim), "model", "embed_dim"));
    t.push_back(named(i64(&RunConfig::t_factor), "model", "t_factor"));
    t.push_back(named(i64(&RunConfig::d_factor), "model", "d_factor"));
    t.push_back(named(f64(&RunConfig::mixer_dropout), "model", "mixer_dropout"));
    t.push_back(named(f64(&RunConfig::embed_dropout), "model", "embed_dropout"));
    t.push_back(Field{"model", "bn_axis",
                      [](const RunConfig& c) {
                        return std::string(c.bn_axis == BnAxis::embedding ? "embedding"
                                                                          : "variate");
                      },
                      [](RunConfig& c, const std::string& v, const std::string& k) {
                        if (v == "embedding")
                          c.bn_axis = BnAxis::embedding;
                        else if (v == "variate")
                          c.bn_axis = BnAxis::variate;
                        else
                          throw ConfigError("invalid value '" + v + "' for key '" + k +
                                            "' (expected embedding or variate)");
                      }});
    t.push_back(named(bol(&RunConfig::inner_revin_affine), "model", "inner_revin_affine"));

    t.push_back(named(bol(&RunConfig::decomposition), "ablation", "decomposition"));
    t.push_back(named(bol(&RunConfig::patching), "ablation", "patching"));
    t.push_back(named(bol(&RunConfig::embedding), "ablation", "embedding"));
    t.push_back(named(bol(&RunConfig::patch_mixer), "ablation", "patch_mixer"));
    t.push_back(named(bol(&RunConfig::embedding_mixer), "ablation", "embedding_mixer"));

    t.push_back(Field{"train", "loss",
                      [](const RunConfig& c) {
                        return std::string(c.loss == LossKind::smooth_l1 ? "smooth_l1"
                                                                         : "mse");
                      },
                      [](RunConfig& c, const std::string& v, const std::string& k) {
                        if (v == "smooth_l1")
                          c.loss = LossKind::smooth_l1;
                        else if (v == "mse")
                          c.loss = LossKind::mse;
                        else
                          throw ConfigError("invalid value '" + v + "' for key '" + k +
                                            "' (expected smooth_l1 or mse)");
                      }});
    t.push_back(named(f64(&RunConfig::base_lr), "train", "base_lr"));
    t.push_back(named(i64(&RunConfig::batch), "train", "batch"));
    t.push_back(named(i64(&RunConfig::micro_batch), "train", "micro_batch"));
    t.push_back(named(i64(&RunConfig::epochs), "train", "epochs"));
    t.push_back(Field{"train", "seed",
                      [](const RunConfig& c) { return std::to_string(c.seed); },
                      [](RunConfig& c, const std::string& v, const std::string& k) {
                        c.seed = parse_u64(v, k);
                      }});
    t.push_back(named(f64(&RunConfig::smooth_l1_beta), "train", "smooth_l1_beta"));
    t.push_back(named(f64(&RunConfig::grad_clip), "train", "grad_clip"));
    t.push_back(named(f64(&RunConfig::stop_loss), "train", "stop_loss"));

    t.push_back(named(str(&RunConfig::out_dir), "output", "dir"));
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const Field& f : fields())
    if (section == f.section && key == f.key) return &f;
  return nullptr;
}

}  // namespace

std::string RunConfig::serialize() const {
  std::ostringstream out;
  std::string current;
  for (const Field& f : fields()) {
    if (f.section != current) {
      if (!current.empty()) out << "\n";
      out << "[" << f.section << "]\n";
      current = f.section;
    }
    out << f.key << " = " << f.get(*this) << "\n";
  }
  return out.str();
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": malformed section header '" +
                          s + "'");
      section = trim(s.substr(1, s.size() - 2));
      bool known = false;
      for (const Field& f : fields())
        if (section == f.section) known = true;
      if (!known)
        throw ConfigError("line " + std::to_string(lineno) + ": unknown section '[" + section +
                          "]'");
      continue;
    }
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value, got '" + s +
                        "'");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": key '" + key +
                        "' appears before any [section] header");
    const Field* f = find_field(section, key);
    if (!f)
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key +
                        "' in section [" + section + "]");
    std::string dotted = section + "." + key;
    if (!seen.insert(dotted).second)
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + dotted + "'");
    f->set(cfg, value, dotted);
  }
  return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("failed reading config file '" + path + "'");
  try {
    return parse(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void RunConfig::set_field(const std::string& dotted_key, const std::string& value) {
  size_t dot = dotted_key.find('.');
  if (dot == std::string::npos)
    throw ConfigError("config key '" + dotted_key + "' must be section.key");
  const Field* f = find_field(dotted_key.substr(0, dot), dotted_key.substr(dot + 1));
  if (!f) throw ConfigError("unknown config key '" + dotted_key + "'");
  f->set(*this, value, dotted_key);
}

void RunConfig::apply_env_overrides() {
  const std::string prefix = "WPMIXER_";
  for (char** e = environ; *e != nullptr; ++e) {
    std::string entry(*e);
    size_t eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string name = entry.substr(0, eq);
    if (name.rfind(prefix, 0) != 0) continue;
    std::string rest = name.substr(prefix.size());
    size_t us = rest.find('_');
    if (us == std::string::npos)
      throw ConfigError("environment variable '" + name +
                        "' does not name a config key (expected WPMIXER_<SECTION>_<KEY>)");
    auto lower = [](std::string s) {
      for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      return s;
    };
    std::string section = lower(rest.substr(0, us));
    std::string key = lower(rest.substr(us + 1));
    const Field* f = find_field(section, key);
    if (!f)
      throw ConfigError("environment variable '" + name + "' does not match any config key");
    f->set(*this, entry.substr(eq + 1), section + "." + key);
  }
}

std::vector<std::string> diff_config_fields(const RunConfig& a, const RunConfig& b) {
  std::vector<std::string> out;
  for (const Field& f : fields())
    if (f.get(a) != f.get(b)) out.push_back(std::string(f.section) + "." + f.key);
  return out;
}

void RunConfig::validate() const {
  if (n_train < 0 || n_val < 0 || n_test < 0)
    throw ConfigError("split sizes must be non-negative");
  if (loss == LossKind::smooth_l1 && !(smooth_l1_beta > 0.0))
    throw ConfigError("train.smooth_l1_beta must be positive");
  if (!(base_lr > 0.0)) throw ConfigError("train.base_lr must be positive");
  if (batch < 1) throw ConfigError("train.batch must be at least 1");
  if (micro_batch < 0) throw ConfigError("train.micro_batch must be non-negative");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be non-negative (0 disables)");
  if (stop_loss < 0.0) throw ConfigError("train.stop_loss must be non-negative (0 disables)");
}

ModelConfig RunConfig::to_model_config(int64_t channels) const {
  ModelConfig m;
  m.channels = channels;
  m.lookback = lookback;
  m.horizon = horizon;
  m.wavelet = wavelet;
  m.level = level;
  m.patch_len = patch_len;
  m.stride = stride;
  m.embed_dim = embed_dim;
  m.t_factor = t_factor;
  m.d_factor = d_factor;
  m.mixer_dropout = mixer_dropout;
  m.embed_dropout = embed_dropout;
  m.inner_revin_affine = inner_revin_affine;
  m.bn_axis = bn_axis;
  m.use_decomposition = decomposition;
  m.use_patching = patching;
  m.use_embedding = embedding;
  m.use_patch_mixer = patch_mixer;
  m.use_embedding_mixer = embedding_mixer;
  return m;
}

}  // namespace wpmixer
