#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfkd/data.hpp"
#include "gfkd/graph_flow.hpp"

namespace gfkd {

struct DistillConfig {
  PatchSpec patch;  // defaults to a 3x3 window
  double lambda1 = 1e-5;   // vertex loss weight
  double lambda2 = 1e-9;   // edge loss weight
  double lambda3 = 0.1;    // adversarial (generator) weight
  double lambda4 = 1.0;    // logits KD weight
  double tau = 1.0;        // softmax temperature
  bool enable_graph = true;
  bool enable_adv = true;
  bool enable_logits = true;
  bool enable_paraphraser = true;
  double critic_clip = 0.01;
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch = 8;
  double base_lr = 0.003;
  double critic_lr = 0.0002;
  double power = 0.9;
  std::size_t step_decay_every = 50;
  double step_decay_factor = 0.1;
  double weight_decay = 0.0002;
  std::size_t paraphraser_epochs = 5;
};

struct RunConfig {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string out_dir = "runs";
};

struct ExperimentConfig {
  DatasetSpec data;
  std::size_t teacher_width = 32;
  std::size_t student_width = 8;
  DistillConfig distill;
  TrainConfig train;
  RunConfig run;

  nlohmann::json to_json() const;
  // FNV-1a over the canonical serialization; changes whenever any field does
  std::uint64_t hash() const;
};

// Parse + validate.  Unknown keys anywhere in the document are rejected (typo
// safety), as are out-of-range values.  Throws ValidationError.
ExperimentConfig parse_config(const nlohmann::json& doc);

// `--set section.key=value` override applied to the raw document before
// validation.  The value is parsed as JSON when possible, else kept as a
// string (so `--set distill.patch_size=full` works unquoted).
void apply_override(nlohmann::json& doc, const std::string& key_value);

// Read file, apply overrides in order, validate.  The out_dir may afterwards
// be overridden by the GFKD_OUT environment variable (checked by the caller).
ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides);

}  // namespace gfkd
