#include "maw/config.hpp"

#include <fstream>

#include "maw/errors.hpp"

namespace maw {

namespace {

using nlohmann::json;

void require_object(const json& j, const std::string& key) {
  if (!j.is_object()) throw ConfigError("expected an object", key);
}

template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("invalid value for " + key, key);
  }
}

template <typename T>
std::vector<T> scalar_or_list(const json& j, const std::string& key) {
  if (j.is_array()) {
    std::vector<T> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(get_as<T>(j[i], key + "[" + std::to_string(i) + "]"));
    if (out.empty()) throw ConfigError("list must not be empty", key);
    return out;
  }
  return {get_as<T>(j, key)};
}

void parse_data(const json& j, eval::DataSpec& data) {
  require_object(j, "data");
  for (const auto& [field, value] : j.items()) {
    const std::string key = "data." + field;
    if (field == "source") {
      const auto s = get_as<std::string>(value, key);
      if (s == "synthetic") data.source = eval::Provenance::Synthetic;
      else if (s == "csv") data.source = eval::Provenance::Csv;
      else throw ConfigError("source must be 'synthetic' or 'csv'", key);
    } else if (field == "path") {
      data.path = get_as<std::string>(value, key);
    } else if (field == "dim") {
      data.synthetic.dim = get_as<int>(value, key);
    } else if (field == "rank") {
      data.synthetic.rank = get_as<int>(value, key);
    } else if (field == "noise") {
      data.synthetic.noise = get_as<double>(value, key);
    } else {
      throw ConfigError("unknown key " + key, key);
    }
  }
}

void parse_split(const json& j, RunConfig& cfg) {
  require_object(j, "split");
  for (const auto& [field, value] : j.items()) {
    const std::string key = "split." + field;
    if (field == "train_inliers") cfg.split.train_inliers = get_as<int>(value, key);
    else if (field == "test_inliers") cfg.split.test_inliers = get_as<int>(value, key);
    else if (field == "c") cfg.c_values = scalar_or_list<double>(value, key);
    else if (field == "c_test") cfg.split.c_test = scalar_or_list<double>(value, key);
    else throw ConfigError("unknown key " + key, key);
  }
}

void parse_sweep(const json& j, RunConfig& cfg) {
  require_object(j, "sweep");
  for (const auto& [field, value] : j.items()) {
    const std::string key = "sweep." + field;
    if (field == "param") cfg.sweep_param = get_as<std::string>(value, key);
    else if (field == "values") cfg.sweep_values = scalar_or_list<double>(value, key);
    else throw ConfigError("unknown key " + key, key);
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  require_object(j, "");
  RunConfig cfg;
  for (const auto& [field, value] : j.items()) {
    if (field == "data") {
      parse_data(value, cfg.data);
    } else if (field == "model") {
      const Variant keep = cfg.model.variant;
      cfg.model = Hyperparams::from_json(value, "model");
      if (!value.contains("variant")) cfg.model.variant = keep;
    } else if (field == "variant") {
      cfg.variants.clear();
      const auto names = scalar_or_list<std::string>(value, "variant");
      for (std::size_t i = 0; i < names.size(); ++i) {
        try {
          cfg.variants.push_back(parse_variant(names[i]));
        } catch (const ConfigError& e) {
          throw ConfigError(e.what(), value.is_array() ? "variant[" + std::to_string(i) + "]" : "variant");
        }
      }
    } else if (field == "split") {
      parse_split(value, cfg);
    } else if (field == "seeds") {
      cfg.seeds = scalar_or_list<std::uint64_t>(value, "seeds");
    } else if (field == "output_dir") {
      cfg.output_dir = get_as<std::string>(value, "output_dir");
    } else if (field == "sweep") {
      parse_sweep(value, cfg);
    } else {
      throw ConfigError("unknown key " + field, field);
    }
  }
  if (j.contains("variant")) cfg.model.variant = cfg.variants.front();
  else if (j.contains("model") && j.at("model").contains("variant")) cfg.variants = {cfg.model.variant};
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path, "config");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what(), "config");
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json data_j;
  if (data.source == eval::Provenance::Csv) {
    data_j = {{"source", "csv"}, {"path", data.path}};
  } else {
    data_j = {{"source", "synthetic"},
              {"dim", data.synthetic.dim},
              {"rank", data.synthetic.rank},
              {"noise", data.synthetic.noise}};
  }
  json variant_names = json::array();
  for (Variant v : variants) variant_names.push_back(to_string(v));
  json out = {{"data", std::move(data_j)},
              {"model", model.to_json()},
              {"variant", std::move(variant_names)},
              {"split",
               {{"train_inliers", split.train_inliers},
                {"test_inliers", split.test_inliers},
                {"c", c_values},
                {"c_test", split.c_test}}},
              {"seeds", seeds},
              {"output_dir", output_dir}};
  if (!sweep_param.empty()) out["sweep"] = {{"param", sweep_param}, {"values", sweep_values}};
  return out;
}

void RunConfig::validate() const {
  if (data.source == eval::Provenance::Csv && data.path.empty()) {
    throw ConfigError("csv data needs a path", "data.path");
  }
  experiment().validate();
}

eval::ExperimentSpec RunConfig::experiment() const {
  eval::ExperimentSpec spec;
  spec.data = data;
  spec.split = split;
  spec.c_values = c_values;
  spec.variants = variants;
  spec.seeds = seeds;
  spec.hp = model;
  return spec;
}

}  // namespace maw
