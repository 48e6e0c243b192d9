#include "cosetconv/config.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cosetconv/mathutil.hpp"

namespace cosetconv {

namespace {

// Every recognized key with its default. Paths tagged as inputs are
// existence-checked at launch when nonempty.
struct KeySpec {
  const char* key;
  const char* def;
  bool input_path;
};

const KeySpec kKnownKeys[] = {
    {"seed", "7", false},

    {"data.classes", "4", false},
    {"data.train_per_class", "100", false},
    {"data.test_per_class", "50", false},
    {"data.points", "256", false},
    {"data.noise_sigma", "0.01", false},
    {"data.dir", "", true},

    {"model.m", "96,48,24", false},
    {"model.k", "12,12,12", false},
    {"model.radius", "0.3,0.45,0.7", false},
    {"model.channels", "24,48,96", false},
    {"model.anchors", "8", false},
    {"model.embed_d", "8", false},
    {"model.embed_sigma", "0.1", false},
    {"model.coeff_hidden", "", false},  // empty -> 2*3d twice
    {"model.residual", "true", false},
    {"model.input_channels", "1", false},
    {"model.coset_k", "16", false},
    {"model.use_true_normals", "true", false},
    {"model.normalize_by_count", "false", false},
    {"model.ablation_raw_offsets", "false", false},

    {"train.epochs", "40", false},
    {"train.batch", "8", false},
    {"train.lr_max", "1e-4", false},
    {"train.lr_min", "1e-6", false},
    {"train.label_smoothing", "0.2", false},
    {"train.beta1", "0.9", false},
    {"train.scale_augment", "false", false},
    {"train.scale_lo", "0.6666666666666666", false},
    {"train.scale_hi", "1.5", false},

    {"tol.coset", "1e-12", false},
    {"tol.layer", "1e-6", false},
    {"tol.network", "1e-6", false},
    {"tol.gradcheck", "1e-4", false},

    {"equiv.transforms", "100", false},
    {"equiv.points", "256", false},
    {"equiv.translation", "1.0", false},
    {"equiv.pairs", "200", false},
    {"equiv.negative_control", "false", false},

    {"gradcheck.h", "1e-6", false},
    {"gradcheck.seeds", "20", false},

    {"bench.A", "11,22,44", false},
    {"bench.K", "16,32,64", false},
    {"bench.cin", "32,64,128", false},
    {"bench.cout", "32,64,128", false},
    {"bench.repeats", "5", false},

    {"encode.radius", "0.5", false},
    {"encode.k", "32", false},

    {"eval.checkpoint", "", true},
};

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : kKnownKeys)
    if (key == k.key) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : kKnownKeys) values_[k.key] = k.def;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) +
                               ": expected key=value");
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) throw std::runtime_error("config: unknown key '" + key + "'");
  values_[key] = value;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& s = get_string(key);
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw std::runtime_error("config: key '" + key + "' is not an integer: '" + s + "'");
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& s = get_string(key);
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' is not a number: '" + s + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& s = get_string(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::runtime_error("config: key '" + key + "' is not a boolean: '" + s + "'");
}

std::string RunConfig::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::runtime_error("config: unknown key '" + key + "'");
  return it->second;
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream ss(get_string(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    int v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || p != item.data() + item.size())
      throw std::runtime_error("config: key '" + key + "' has a non-integer entry: '" + item +
                               "'");
    out.push_back(v);
  }
  return out;
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(get_string(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      std::size_t pos = 0;
      const double v = std::stod(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw std::runtime_error("config: key '" + key + "' has a non-numeric entry: '" + item +
                               "'");
    }
  }
  return out;
}

std::string RunConfig::hash() const {
  std::string blob;
  for (const auto& [k, v] : values_) {  // std::map is already sorted
    blob += k;
    blob += '=';
    blob += v;
    blob += '\n';
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(blob)));
  return buf;
}

void RunConfig::check_paths_exist() const {
  for (const auto& k : kKnownKeys) {
    if (!k.input_path) continue;
    const std::string v = get_string(k.key);
    if (!v.empty() && !std::filesystem::exists(v))
      throw std::runtime_error("config: path for '" + std::string(k.key) + "' does not exist: " +
                               v);
  }
}

}  // namespace cosetconv
