#include "dephn/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dephn::harness {

using nlohmann::json;

std::string_view model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Dnn: return "dnn";
    case ModelKind::Mmoe: return "mmoe";
    case ModelKind::Mtphn: return "mtphn";
    case ModelKind::Dephn: return "dephn";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  for (auto k : {ModelKind::Dnn, ModelKind::Mmoe, ModelKind::Mtphn, ModelKind::Dephn}) {
    if (model_kind_name(k) == name) return k;
  }
  throw ConfigError("unknown model: " + std::string(name) + " (expected dnn, mmoe, mtphn or dephn)");
}

std::string_view modulation_name(Modulation m) {
  switch (m) {
    case Modulation::Enabled: return "on";
    case Modulation::Disabled: return "off";
    case Modulation::ForceOne: return "force-one";
  }
  return "?";
}

Modulation parse_modulation(std::string_view name) {
  if (name == "on") return Modulation::Enabled;
  if (name == "off") return Modulation::Disabled;
  if (name == "force-one") return Modulation::ForceOne;
  throw ConfigError("unknown modulation: " + std::string(name) + " (expected on, off or force-one)");
}

void TrainConfig::validate() const {
  if (tasks < 1) throw ConfigError("tasks must be >= 1");
  if ((model == ModelKind::Dephn || model == ModelKind::Mtphn) && tasks < 2) {
    throw ConfigError("model " + std::string(model_kind_name(model)) + " requires at least 2 tasks");
  }
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (mappings.empty()) throw ConfigError("mappings must not be empty");
  if (arch.embed_dim < 1 || arch.expert_dim < 1) throw ConfigError("embedding and expert widths must be >= 1");
  if (arch.heads < 1 || arch.embed_dim % arch.heads != 0) throw ConfigError("heads must divide embed_dim");
  if (!(data.validation_fraction > 0.0 && data.validation_fraction < 1.0)) {
    throw ConfigError("data.validation_fraction must lie in (0, 1)");
  }
  if (!(data.noise_std >= 0.0)) throw ConfigError("data.noise_std must be >= 0");
  if (data.csv.empty() && data.samples < 2) throw ConfigError("data.samples must be >= 2");
}

namespace {

std::vector<std::string> kind_names(const std::vector<experts::ExpertKind>& kinds) {
  std::vector<std::string> out;
  for (auto k : kinds) out.emplace_back(experts::expert_kind_name(k));
  return out;
}

json to_json_object(const TrainConfig& c) {
  json j;
  j["model"] = std::string(model_kind_name(c.model));
  j["tasks"] = c.tasks;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["max_steps_per_epoch"] = c.max_steps_per_epoch;
  j["learning_rate"] = c.adam.learning_rate;
  j["beta1"] = c.adam.beta1;
  j["beta2"] = c.adam.beta2;
  j["epsilon"] = c.adam.epsilon;
  j["gating"] = std::string(model::gating_mode_name(c.gating));
  j["measure"] = std::string(vg::measure_name(c.measure));
  j["function"] = std::string(vg::function_name(c.function));
  std::vector<std::string> maps;
  for (auto m : c.mappings) maps.emplace_back(model::mapping_name(m));
  j["mappings"] = maps;
  j["combine"] = std::string(model::combine_mode_name(c.combine));
  j["modulation"] = std::string(modulation_name(c.modulation));
  j["seed"] = c.seed;

  json d;
  d["csv"] = c.data.csv;
  d["confidences"] = c.data.confidences;
  d["manifest"] = c.data.manifest;
  d["variant"] = std::string(data::variant_name(c.data.variant));
  d["samples"] = c.data.samples;
  d["seed"] = c.data.seed;
  d["noise_std"] = c.data.noise_std;
  d["threshold"] = std::string(data::threshold_name(c.data.threshold));
  d["teacher_scale"] = c.data.teacher_scale;
  d["validation_fraction"] = c.data.validation_fraction;
  j["data"] = d;

  json a;
  a["embed_dim"] = c.arch.embed_dim;
  a["heads"] = c.arch.heads;
  a["self_attention"] = c.arch.self_attention;
  a["ssg"] = c.arch.ssg == features::SsgGranularity::PerCoordinate ? "per-coordinate" : "per-field";
  a["public_experts"] = kind_names(c.arch.public_experts);
  a["private_experts"] = kind_names(c.arch.private_experts);
  a["expert_dim"] = c.arch.expert_dim;
  a["depth"] = c.arch.depth;
  a["dnn_hidden"] = c.arch.dnn_hidden;
  a["cross_mode"] = c.arch.cross_mode == experts::CrossMode::DcnV2 ? "dcn-v2" : "dcn";
  a["tower_hidden"] = c.arch.tower_hidden;
  a["baseline_hidden"] = c.arch.baseline_hidden;
  j["arch"] = a;
  return j;
}

void reject_unknown(const json& j, const json& reference, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!reference.contains(it.key())) throw ConfigError("unknown config key: " + where + it.key());
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

template <class Enum, class Parse>
void read_enum(const json& j, const char* key, Enum& out, Parse parse) {
  if (j.contains(key)) out = parse(j.at(key).get<std::string>());
}

std::vector<experts::ExpertKind> parse_kinds(const json& j) {
  std::vector<experts::ExpertKind> out;
  for (const auto& s : j) out.push_back(experts::parse_expert_kind(s.get<std::string>()));
  return out;
}

}  // namespace

std::string config_to_json(const TrainConfig& config) { return to_json_object(config).dump(2) + "\n"; }

TrainConfig config_from_json(std::string_view text) {
  TrainConfig c;
  const json reference = to_json_object(c);
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    reject_unknown(j, reference, "");
    read_enum(j, "model", c.model, parse_model_kind);
    read(j, "tasks", c.tasks);
    read(j, "epochs", c.epochs);
    read(j, "batch_size", c.batch_size);
    read(j, "max_steps_per_epoch", c.max_steps_per_epoch);
    read(j, "learning_rate", c.adam.learning_rate);
    read(j, "beta1", c.adam.beta1);
    read(j, "beta2", c.adam.beta2);
    read(j, "epsilon", c.adam.epsilon);
    read_enum(j, "gating", c.gating, model::parse_gating_mode);
    read_enum(j, "measure", c.measure, vg::parse_measure);
    read_enum(j, "function", c.function, vg::parse_function);
    if (j.contains("mappings")) {
      c.mappings.clear();
      for (const auto& s : j.at("mappings")) c.mappings.push_back(model::parse_mapping(s.get<std::string>()));
    }
    read_enum(j, "combine", c.combine, model::parse_combine_mode);
    read_enum(j, "modulation", c.modulation, parse_modulation);
    read(j, "seed", c.seed);

    if (j.contains("data")) {
      const json& d = j.at("data");
      reject_unknown(d, reference.at("data"), "data.");
      read(d, "csv", c.data.csv);
      read(d, "confidences", c.data.confidences);
      read(d, "manifest", c.data.manifest);
      read_enum(d, "variant", c.data.variant, data::parse_variant);
      read(d, "samples", c.data.samples);
      read(d, "seed", c.data.seed);
      read(d, "noise_std", c.data.noise_std);
      read_enum(d, "threshold", c.data.threshold, data::parse_threshold);
      read(d, "teacher_scale", c.data.teacher_scale);
      read(d, "validation_fraction", c.data.validation_fraction);
    }
    if (j.contains("arch")) {
      const json& a = j.at("arch");
      reject_unknown(a, reference.at("arch"), "arch.");
      read(a, "embed_dim", c.arch.embed_dim);
      read(a, "heads", c.arch.heads);
      read(a, "self_attention", c.arch.self_attention);
      if (a.contains("ssg")) {
        const auto s = a.at("ssg").get<std::string>();
        if (s == "per-coordinate") c.arch.ssg = features::SsgGranularity::PerCoordinate;
        else if (s == "per-field") c.arch.ssg = features::SsgGranularity::PerField;
        else throw ConfigError("unknown arch.ssg: " + s);
      }
      if (a.contains("public_experts")) c.arch.public_experts = parse_kinds(a.at("public_experts"));
      if (a.contains("private_experts")) c.arch.private_experts = parse_kinds(a.at("private_experts"));
      read(a, "expert_dim", c.arch.expert_dim);
      read(a, "depth", c.arch.depth);
      read(a, "dnn_hidden", c.arch.dnn_hidden);
      if (a.contains("cross_mode")) {
        const auto s = a.at("cross_mode").get<std::string>();
        if (s == "dcn-v2") c.arch.cross_mode = experts::CrossMode::DcnV2;
        else if (s == "dcn") c.arch.cross_mode = experts::CrossMode::Dcn;
        else throw ConfigError("unknown arch.cross_mode: " + s);
      }
      read(a, "tower_hidden", c.arch.tower_hidden);
      read(a, "baseline_hidden", c.arch.baseline_hidden);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << is.rdbuf();
  try {
    return config_from_json(buffer.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string config_hash(const TrainConfig& config) {
  const std::string text = config_to_json(config);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

features::FieldSchema resolve_schema(const TrainConfig& config) {
  features::FieldSchema schema =
      config.data.manifest.empty() ? data::default_schema() : data::schema_from_manifest(config.data.manifest);
  schema.embed_dim = config.arch.embed_dim;
  return schema;
}

}  // namespace dephn::harness
