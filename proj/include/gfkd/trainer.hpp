#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gfkd/config.hpp"
#include "gfkd/csv.hpp"
#include "gfkd/data.hpp"
#include "gfkd/metrics.hpp"
#include "gfkd/networks.hpp"

namespace gfkd {

// Labels rows produced by a phase; the trainer fills in seed, epoch, split,
// metrics, and model-size columns.
struct RowContext {
  std::string run_id;
  std::string phase;
  std::string arm;
  std::string patch = "-";  // "-" when the arm has no graph loss
};

struct TeacherResult {
  ParamStore params;
  std::vector<ResultRow> rows;
  std::size_t epochs_run = 0;  // epochs executed by THIS call (resume skips earlier ones)
};

struct ParaphraserResult {
  ParamStore enc_site;  // paraphraser attached to the encoder tap
  ParamStore dec_site;  // paraphraser attached to the decoder tap
  std::vector<double> rec_trace_enc;  // mean reconstruction loss per epoch
  std::vector<double> rec_trace_dec;
};

struct DistillInputs {
  const ParamStore* teacher = nullptr;   // required unless every distill toggle is off
  const ParamStore* para_enc = nullptr;  // required when graph + paraphraser are on
  const ParamStore* para_dec = nullptr;
  // Restrict the training pool to labeled samples (the "labeled only"
  // semi-supervised arm); otherwise the pool mixes labeled and unlabeled
  // samples and cross-entropy applies only where flags say so.
  bool labeled_pool_only = false;
};

struct DistillResult {
  ParamStore student;
  ParamStore critic;  // untouched initial weights when the adversarial term is off
  std::vector<ResultRow> rows;
  std::vector<double> total_trace;  // mean total loss per epoch
  std::size_t epochs_run = 0;
};

// Owns the dataset, the labeled/unlabeled flags, and the three training
// phases.  All randomness inside a phase is a pure function of
// (run seed, phase, epoch), so a resumed run replays the exact stream the
// uninterrupted run would have seen.
//
// When `state_path` is non-empty a phase writes its full state (parameters,
// optimizer moments, iteration counter, RNG state, config hash) there after
// every epoch, and silently resumes from that file when it already exists.
// `stop_after_epoch` (0 = run to completion) ends the call early with the
// state saved — the hook the resume tests interrupt a run with.
class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, std::uint64_t seed);

  const ExperimentConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  const Dataset& dataset() const { return data_; }
  const std::vector<std::uint8_t>& labeled_flags() const { return labeled_; }

  // fresh architectures with deterministic per-role initialization
  MiniUNet make_teacher() const;
  MiniUNet make_student() const;
  Discriminator make_critic() const;
  Paraphraser make_paraphraser(std::uint64_t role_tag) const;

  TeacherResult train_teacher(const RowContext& ctx, const std::string& state_path = "",
                              std::size_t stop_after_epoch = 0);

  ParaphraserResult train_paraphrasers(const ParamStore& teacher);

  DistillResult distill(const DistillInputs& in, const RowContext& ctx,
                        const std::string& state_path = "",
                        std::size_t stop_after_epoch = 0);

  // argmax predictions and split-level metric means; no augmentation here
  std::vector<int> predict(const MiniUNet& net, const ParamStore& params,
                           const Sample& sample) const;
  MetricReport evaluate_split(const MiniUNet& net, const ParamStore& params,
                              const std::vector<Sample>& split) const;

 private:
  ExperimentConfig cfg_;
  std::uint64_t seed_;
  Dataset data_;
  std::vector<std::uint8_t> labeled_;
};

}  // namespace gfkd
