#include "aptrack/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace aptrack {

std::string to_string(AmiVariant v) {
  switch (v) {
    case AmiVariant::kFull: return "full";
    case AmiVariant::kNone: return "none";
    case AmiVariant::kGmpOnly: return "gmp_only";
    case AmiVariant::kLtOnly: return "lt_only";
  }
  return "full";
}

AmiVariant ami_variant_from_string(const std::string& s) {
  if (s == "full") return AmiVariant::kFull;
  if (s == "none") return AmiVariant::kNone;
  if (s == "gmp_only") return AmiVariant::kGmpOnly;
  if (s == "lt_only") return AmiVariant::kLtOnly;
  throw std::runtime_error("config: unknown ami_variant '" + s + "'");
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

std::string int_list_str(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

struct Field {
  std::function<void(TrackerConfig&, const std::string&)> set;
  std::function<std::string(const TrackerConfig&)> get;
};

const std::map<std::string, Field>& schema() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> m;
    auto size_field = [&m](const std::string& key, std::size_t TrackerConfig::* member) {
      m[key] = {[member](TrackerConfig& c, const std::string& v) { c.*member = std::stoul(v); },
                [member](const TrackerConfig& c) { return std::to_string(c.*member); }};
    };
    auto double_field = [&m](const std::string& key, double TrackerConfig::* member) {
      m[key] = {[member](TrackerConfig& c, const std::string& v) { c.*member = std::stod(v); },
                [member](const TrackerConfig& c) {
                  std::ostringstream os;
                  os << c.*member;
                  return os.str();
                }};
    };
    auto string_field = [&m](const std::string& key, std::string TrackerConfig::* member) {
      m[key] = {[member](TrackerConfig& c, const std::string& v) { c.*member = v; },
                [member](const TrackerConfig& c) { return c.*member; }};
    };

    size_field("patch_size", &TrackerConfig::patch_size);
    size_field("template_size", &TrackerConfig::template_size);
    size_field("search_size", &TrackerConfig::search_size);
    size_field("embed_dim", &TrackerConfig::embed_dim);
    size_field("n_layers", &TrackerConfig::n_layers);
    size_field("heads", &TrackerConfig::heads);
    size_field("perceptor_heads", &TrackerConfig::perceptor_heads);
    size_field("n_tokens", &TrackerConfig::n_tokens);
    m["ami_layers"] = {
        [](TrackerConfig& c, const std::string& v) { c.ami_layers = parse_int_list(v); },
        [](const TrackerConfig& c) { return int_list_str(c.ami_layers); }};
    m["ami_variant"] = {
        [](TrackerConfig& c, const std::string& v) { c.ami_variant = ami_variant_from_string(v); },
        [](const TrackerConfig& c) { return to_string(c.ami_variant); }};

    double_field("lr_ami", &TrackerConfig::lr_ami);
    double_field("lr_rest", &TrackerConfig::lr_rest);
    double_field("weight_decay", &TrackerConfig::weight_decay);
    size_field("decay_epoch", &TrackerConfig::decay_epoch);
    size_field("epochs", &TrackerConfig::epochs);
    size_field("batch_size", &TrackerConfig::batch_size);
    size_field("samples_per_epoch", &TrackerConfig::samples_per_epoch);
    size_field("max_frame_gap", &TrackerConfig::max_frame_gap);
    double_field("jitter_translate", &TrackerConfig::jitter_translate);
    double_field("jitter_scale", &TrackerConfig::jitter_scale);
    double_field("template_crop_factor", &TrackerConfig::template_crop_factor);
    double_field("search_crop_factor", &TrackerConfig::search_crop_factor);
    size_field("update_interval", &TrackerConfig::update_interval);
    double_field("update_threshold", &TrackerConfig::update_threshold);
    m["seed"] = {[](TrackerConfig& c, const std::string& v) { c.seed = std::stoull(v); },
                 [](const TrackerConfig& c) { return std::to_string(c.seed); }};

    size_field("scene_sequences", &TrackerConfig::scene_sequences);
    size_field("scene_frames", &TrackerConfig::scene_frames);
    size_field("scene_canvas", &TrackerConfig::scene_canvas);
    size_field("scene_distractors", &TrackerConfig::scene_distractors);
    double_field("scene_target_size", &TrackerConfig::scene_target_size);
    string_field("scene_target_shape", &TrackerConfig::scene_target_shape);
    string_field("scene_motion", &TrackerConfig::scene_motion);
    string_field("scene_degrade", &TrackerConfig::scene_degrade);
    double_field("scene_alignment_jitter", &TrackerConfig::scene_alignment_jitter);
    return m;
  }();
  return fields;
}

}  // namespace

void TrackerConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw std::runtime_error(std::string("config: ") + name + " must be positive");
  };
  positive(patch_size, "patch_size");
  positive(template_size, "template_size");
  positive(search_size, "search_size");
  positive(embed_dim, "embed_dim");
  positive(n_layers, "n_layers");
  positive(heads, "heads");
  positive(perceptor_heads, "perceptor_heads");
  positive(batch_size, "batch_size");
  if (template_size % patch_size != 0 || search_size % patch_size != 0)
    throw std::runtime_error("config: template/search size must be divisible by patch_size");
  if (embed_dim % heads != 0)
    throw std::runtime_error("config: embed_dim must be divisible by heads");
  if (!(update_threshold > 0.0 && update_threshold < 1.0))
    throw std::runtime_error("config: update_threshold must be in (0,1)");
  if (update_interval == 0)
    throw std::runtime_error("config: update_interval must be positive");
  for (int l : ami_layers)
    if (l < 1 || l > static_cast<int>(n_layers))
      throw std::runtime_error("config: ami_layers entry " + std::to_string(l) +
                               " outside [1," + std::to_string(n_layers) + "]");
  if (ami_variant != AmiVariant::kNone && !ami_layers.empty() && n_tokens == 0 &&
      ami_variant != AmiVariant::kGmpOnly)
    throw std::runtime_error("config: n_tokens must be >= 1 for the selected ami_variant");
}

void apply_override(TrackerConfig& cfg, const std::string& key, const std::string& value) {
  auto it = schema().find(key);
  if (it == schema().end()) throw std::runtime_error("config: unknown key '" + key + "'");
  it->second.set(cfg, value);
}

TrackerConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  TrackerConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) +
                               " is not 'key = value': '" + t + "'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    apply_override(cfg, key, value);
  }
  return cfg;
}

void save_config(const TrackerConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot open '" + path + "' for writing");
  for (const auto& [key, field] : schema()) out << key << " = " << field.get(cfg) << "\n";
}

}  // namespace aptrack
