#include "stylenerf/config.hpp"

#include "stylenerf/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace snerf {

using nlohmann::json;

void TrainConfig::validate() const {
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (!(ema_half_life > 0)) throw ConfigError("ema half-life must be positive");
}

void RunConfig::finalize() {
  discriminator.base_resolution = generator.base_resolution;
  discriminator.target_resolution = generator.target_resolution;
  generator.validate();
  discriminator.validate();
  loss.validate();
  schedule.validate();
  train.validate();
  dataset.validate();
  if (service.port < 0 || service.port > 65535) throw ConfigError("service.port outside [0, 65535]");
  if (service.max_inflight < 1 || service.max_resolution < 1 || service.request_budget_ms < 1 ||
      service.retry_after_s < 0) {
    throw ConfigError("service limits must be positive");
  }
  if (dataset.resolution < generator.target_resolution) {
    throw ConfigError("dataset resolution below the generator's target");
  }
}

namespace {

std::vector<std::string> split_path(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == '.') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// Section shorthands for the generator's nested configs.
std::vector<std::string> expand(std::vector<std::string> p) {
  static const char* nested[] = {"mapping", "field", "sampling", "camera", "upsampler"};
  if (!p.empty())
    for (const char* n : nested)
      if (p[0] == n) {
        p.insert(p.begin(), "generator");
        break;
      }
  return p;
}

json parse_value(const std::string& text, const json& current) {
  if (current.is_string()) return text;
  try {
    json v = json::parse(text);
    if (current.is_number() && !v.is_number()) throw ConfigError("");
    if (current.is_boolean() && !v.is_boolean()) throw ConfigError("");
    if (current.is_number_integer() && !v.is_number_integer()) throw ConfigError("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid value '" + text + "'");
  }
}

void set_path(json& j, const std::vector<std::string>& path, const std::string& value,
              const std::string& original) {
  json* node = &j;
  for (const auto& key : path) {
    if (!node->is_object() || !node->contains(key)) {
      throw ConfigError("unknown configuration key: " + original);
    }
    node = &(*node)[key];
  }
  if (node->is_object()) throw ConfigError("configuration key names a section: " + original);
  try {
    *node = parse_value(value, *node);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(e.what()) + " for " + original);
  }
}

}  // namespace

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  set_path(j, expand(split_path(key)), assignment.substr(eq + 1), key);
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  try {
    c = j.get<RunConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad configuration: ") + e.what());
  }
  c.finalize();
  return c;
}

RunConfig load_config(const std::string& ini_path, const std::vector<std::string>& overrides) {
  return load_config(ini_path, overrides, full_config());
}

RunConfig load_config(const std::string& ini_path, const std::vector<std::string>& overrides,
                      const RunConfig& base) {
  json j = base;
  if (!ini_path.empty()) {
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::read_ini(ini_path, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
      if (body.empty()) {
        set_path(j, expand(split_path(section)), body.data(), section);
        continue;
      }
      for (const auto& [key, value] : body) {
        auto path = expand(split_path(section));
        for (auto& p : split_path(key)) path.push_back(p);
        set_path(j, path, value.data(), section + "." + key);
      }
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

RunConfig full_config() {
  RunConfig c;
  c.dataset.resolution = c.generator.target_resolution;
  c.finalize();
  return c;
}

RunConfig smoke_config() {
  RunConfig c;
  auto& g = c.generator;
  g.base_resolution = 16;
  g.target_resolution = 64;
  g.channel_base = 1024;
  g.channel_max = 32;
  g.mapping.z_dim = 32;
  g.mapping.w_dim = 32;
  g.mapping.layers = 4;
  g.field.L = 6;
  g.field.L_background = 3;
  g.field.n_sigma = 3;
  g.field.n_c = 5;
  g.field.hidden_fg = 32;
  g.field.hidden_bg = 16;
  g.field.color_hidden = 16;
  g.sampling.N = 8;
  g.sampling.M = 8;
  g.sampling.G = 4;
  g.camera.radius = 2.0;
  g.camera.fov = 30.0;
  g.camera.bound_radius = 1.0;
  g.camera.distribution.kind = PoseDistKind::Uniform;
  g.camera.distribution.pitch_a = -0.3;
  g.camera.distribution.pitch_b = 0.3;
  g.camera.distribution.yaw_a = -0.6;
  g.camera.distribution.yaw_b = 0.6;
  c.discriminator.channel_base = 512;
  c.discriminator.channel_max = 32;
  c.schedule.T1 = 2000;
  c.schedule.T2 = 10000;
  c.schedule.T3 = 16000;
  c.train.batch = 8;
  c.train.steps = 2000;
  c.dataset.resolution = 64;
  c.dataset.count = 512;
  c.finalize();
  return c;
}

}  // namespace snerf
