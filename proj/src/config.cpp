#include "gfkd/config.hpp"

#include <fstream>
#include <set>

#include "gfkd/error.hpp"

namespace gfkd {
namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& scope,
                    const std::set<std::string>& known) {
  for (const auto& [key, _] : obj.items())
    if (!known.count(key))
      throw ValidationError("config: unknown key " +
                            (scope.empty() ? key : scope + "." + key));
}

template <typename T>
void read(const json& obj, const std::string& scope, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config: " + scope + "." + key + " has the wrong type");
  }
}

void read_patch(const json& obj, PatchSpec& out) {
  if (!obj.contains("patch_size")) return;
  const auto& v = obj.at("patch_size");
  if (v.is_string())
    out = PatchSpec::parse(v.get<std::string>());
  else if (v.is_number_integer())
    out = PatchSpec::parse(std::to_string(v.get<long long>()));
  else
    throw ValidationError("config: distill.patch_size must be an odd integer or \"full\"");
}

void check_nonneg(double v, const char* name) {
  if (!(v >= 0.0))
    throw ValidationError(std::string("config: ") + name + " must be >= 0");
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ValidationError("config: document root must be an object");
  reject_unknown(doc, "", {"data", "teacher", "student", "distill", "train", "run"});

  ExperimentConfig c;

  if (doc.contains("data")) {
    const auto& d = doc.at("data");
    reject_unknown(d, "data",
                   {"seed", "n_train", "n_val", "image_size", "num_classes",
                    "noise_sigma", "labeled_fraction"});
    read(d, "data", "seed", c.data.seed);
    read(d, "data", "n_train", c.data.n_train);
    read(d, "data", "n_val", c.data.n_val);
    read(d, "data", "image_size", c.data.image_size);
    read(d, "data", "num_classes", c.data.num_classes);
    read(d, "data", "noise_sigma", c.data.noise_sigma);
    read(d, "data", "labeled_fraction", c.data.labeled_fraction);
  }
  if (doc.contains("teacher")) {
    reject_unknown(doc.at("teacher"), "teacher", {"width"});
    read(doc.at("teacher"), "teacher", "width", c.teacher_width);
  }
  if (doc.contains("student")) {
    reject_unknown(doc.at("student"), "student", {"width"});
    read(doc.at("student"), "student", "width", c.student_width);
  }
  if (doc.contains("distill")) {
    const auto& d = doc.at("distill");
    reject_unknown(d, "distill",
                   {"patch_size", "lambda1", "lambda2", "lambda3", "lambda4", "tau",
                    "enable_graph", "enable_adv", "enable_logits",
                    "enable_paraphraser", "critic_clip"});
    read_patch(d, c.distill.patch);
    read(d, "distill", "lambda1", c.distill.lambda1);
    read(d, "distill", "lambda2", c.distill.lambda2);
    read(d, "distill", "lambda3", c.distill.lambda3);
    read(d, "distill", "lambda4", c.distill.lambda4);
    read(d, "distill", "tau", c.distill.tau);
    read(d, "distill", "enable_graph", c.distill.enable_graph);
    read(d, "distill", "enable_adv", c.distill.enable_adv);
    read(d, "distill", "enable_logits", c.distill.enable_logits);
    read(d, "distill", "enable_paraphraser", c.distill.enable_paraphraser);
    read(d, "distill", "critic_clip", c.distill.critic_clip);
  }
  if (doc.contains("train")) {
    const auto& t = doc.at("train");
    reject_unknown(t, "train",
                   {"epochs", "batch", "base_lr", "critic_lr", "power",
                    "step_decay_every", "step_decay_factor", "weight_decay",
                    "paraphraser_epochs"});
    read(t, "train", "epochs", c.train.epochs);
    read(t, "train", "batch", c.train.batch);
    read(t, "train", "base_lr", c.train.base_lr);
    read(t, "train", "critic_lr", c.train.critic_lr);
    read(t, "train", "power", c.train.power);
    read(t, "train", "step_decay_every", c.train.step_decay_every);
    read(t, "train", "step_decay_factor", c.train.step_decay_factor);
    read(t, "train", "weight_decay", c.train.weight_decay);
    read(t, "train", "paraphraser_epochs", c.train.paraphraser_epochs);
  }
  if (doc.contains("run")) {
    const auto& r = doc.at("run");
    reject_unknown(r, "run", {"seeds", "out_dir"});
    read(r, "run", "seeds", c.run.seeds);
    read(r, "run", "out_dir", c.run.out_dir);
  }

  check_nonneg(c.distill.lambda1, "distill.lambda1");
  check_nonneg(c.distill.lambda2, "distill.lambda2");
  check_nonneg(c.distill.lambda3, "distill.lambda3");
  check_nonneg(c.distill.lambda4, "distill.lambda4");
  if (!(c.distill.tau > 0.0))
    throw ValidationError("config: distill.tau must be > 0");
  if (!(c.distill.critic_clip > 0.0))
    throw ValidationError("config: distill.critic_clip must be > 0");
  if (c.data.labeled_fraction < 0.0 || c.data.labeled_fraction > 1.0)
    throw ValidationError("config: data.labeled_fraction must be in [0,1]");
  if (c.train.batch == 0) throw ValidationError("config: train.batch must be >= 1");
  if (c.teacher_width == 0 || c.student_width == 0)
    throw ValidationError("config: widths must be >= 1");
  if (c.run.seeds.empty())
    throw ValidationError("config: run.seeds must not be empty");
  check_nonneg(c.train.weight_decay, "train.weight_decay");
  check_nonneg(c.train.power, "train.power");
  if (!(c.train.base_lr > 0.0) || !(c.train.critic_lr > 0.0))
    throw ValidationError("config: learning rates must be > 0");
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  json d;
  d["data"] = {{"seed", data.seed},
               {"n_train", data.n_train},
               {"n_val", data.n_val},
               {"image_size", data.image_size},
               {"num_classes", data.num_classes},
               {"noise_sigma", data.noise_sigma},
               {"labeled_fraction", data.labeled_fraction}};
  d["teacher"] = {{"width", teacher_width}};
  d["student"] = {{"width", student_width}};
  json patch;
  if (distill.patch.full)
    patch = "full";
  else
    patch = distill.patch.p;
  d["distill"] = {{"patch_size", patch},
                  {"lambda1", distill.lambda1},
                  {"lambda2", distill.lambda2},
                  {"lambda3", distill.lambda3},
                  {"lambda4", distill.lambda4},
                  {"tau", distill.tau},
                  {"enable_graph", distill.enable_graph},
                  {"enable_adv", distill.enable_adv},
                  {"enable_logits", distill.enable_logits},
                  {"enable_paraphraser", distill.enable_paraphraser},
                  {"critic_clip", distill.critic_clip}};
  d["train"] = {{"epochs", train.epochs},
                {"batch", train.batch},
                {"base_lr", train.base_lr},
                {"critic_lr", train.critic_lr},
                {"power", train.power},
                {"step_decay_every", train.step_decay_every},
                {"step_decay_factor", train.step_decay_factor},
                {"weight_decay", train.weight_decay},
                {"paraphraser_epochs", train.paraphraser_epochs}};
  d["run"] = {{"seeds", run.seeds}, {"out_dir", run.out_dir}};
  return d;
}

std::uint64_t ExperimentConfig::hash() const {
  const std::string canon = to_json().dump();
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

void apply_override(json& doc, const std::string& key_value) {
  const auto eq = key_value.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("config: override \"" + key_value +
                          "\" must look like section.key=value");
  const std::string path = key_value.substr(0, eq);
  const std::string text = key_value.substr(eq + 1);

  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;  // bare words (e.g. full, runs/x) are strings
  }

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot - start);
    if (part.empty())
      throw ValidationError("config: override path \"" + path + "\" is malformed");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ValidationError("config: cannot open " + path);
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::exception& e) {
    throw ValidationError("config: " + path + " is not valid JSON: " + e.what());
  }
  for (const auto& kv : overrides) apply_override(doc, kv);
  return parse_config(doc);
}

}  // namespace gfkd
