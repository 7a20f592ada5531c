#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <string>
#include <vector>

#include "gfkd/config.hpp"
#include "gfkd/csv.hpp"
#include "gfkd/error.hpp"
#include "gfkd/losses.hpp"
#include "gfkd/trainer.hpp"

using namespace gfkd;

namespace {

// small-but-real profile: big enough that training signal exists, small
// enough that the whole suite stays in seconds
ExperimentConfig tiny_cfg() {
  ExperimentConfig cfg;
  cfg.data.seed = 7;
  cfg.data.n_train = 16;
  cfg.data.n_val = 6;
  cfg.data.image_size = 16;
  cfg.teacher_width = 4;
  cfg.student_width = 2;
  cfg.train.epochs = 2;
  cfg.train.batch = 4;
  cfg.train.paraphraser_epochs = 2;
  return cfg;
}

RowContext ctx_of(const std::string& run_id, const std::string& phase,
                  const std::string& arm, const std::string& patch = "-") {
  return RowContext{run_id, phase, arm, patch};
}

std::string rows_text(const std::vector<ResultRow>& rows) {
  std::string out;
  for (const auto& r : rows) out += format_row(r) + "\n";
  return out;
}

struct Cleanup {
  std::string path;
  ~Cleanup() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("trainer owns a deterministic dataset and label flags") {
  ExperimentConfig cfg = tiny_cfg();
  cfg.data.labeled_fraction = 0.5;
  Trainer a(cfg, 1), b(cfg, 2);
  CHECK(a.dataset().train.size() == 16);
  CHECK(a.dataset().val.size() == 6);
  CHECK(a.labeled_flags() == b.labeled_flags());  // keyed to data seed, not run seed
  std::size_t labeled = 0;
  for (auto f : a.labeled_flags()) labeled += f;
  CHECK(labeled == 8);
}

TEST_CASE("role initializations are distinct and seed-stable") {
  Trainer t(tiny_cfg(), 3);
  CHECK(t.make_teacher().params().content_hash() ==
        t.make_teacher().params().content_hash());
  CHECK(t.make_student().params().content_hash() !=
        t.make_teacher().params().content_hash());

  Trainer u(tiny_cfg(), 4);
  CHECK(t.make_teacher().params().content_hash() !=
        u.make_teacher().params().content_hash());

  // the two tap-site paraphrasers start from different streams
  Paraphraser pe = t.make_paraphraser(4), pd = t.make_paraphraser(5);
  CHECK(pe.params().content_hash() != pd.params().content_hash());
  CHECK(pe.c_t() == 2 * tiny_cfg().teacher_width);
  CHECK(pe.c_s() == 2 * tiny_cfg().student_width);
}

TEST_CASE("teacher training learns past the trivial predictor") {
  ExperimentConfig cfg = tiny_cfg();
  cfg.data.n_train = 32;
  cfg.train.epochs = 12;
  cfg.train.batch = 8;
  cfg.train.base_lr = 0.01;
  Trainer t(cfg, 1);

  MiniUNet fresh = t.make_teacher();
  MetricReport before = t.evaluate_split(fresh, fresh.params(), t.dataset().val);

  TeacherResult res = t.train_teacher(ctx_of("t", "teacher", "teacher"));
  REQUIRE(res.rows.size() == cfg.train.epochs + 1);  // val per epoch + final train
  const ResultRow& final_val = res.rows[res.rows.size() - 2];
  CHECK(final_val.split == "val");
  CHECK(final_val.epoch == 12);
  CHECK(final_val.miou > before.miou);
  CHECK(final_val.acc > 0.6);

  // row plumbing
  for (const auto& r : res.rows) {
    CHECK(r.run_id == "t");
    CHECK(r.phase == "teacher");
    CHECK(r.arm == "teacher");
    CHECK(r.patch == "-");
    CHECK(r.seed == 1);
    CHECK(r.params == count_params(res.params));
    CHECK(r.flops > 0);
  }
  CHECK(res.rows.back().split == "train");
  CHECK(res.epochs_run == 12);
}

TEST_CASE("an empty labeled pool refuses to train the teacher") {
  ExperimentConfig cfg = tiny_cfg();
  cfg.data.labeled_fraction = 0.0;
  Trainer t(cfg, 1);
  CHECK_THROWS_AS(t.train_teacher(ctx_of("t", "teacher", "teacher")), ValidationError);
}

TEST_CASE("paraphraser reconstruction improves and the teacher stays frozen") {
  ExperimentConfig cfg = tiny_cfg();
  cfg.train.paraphraser_epochs = 4;
  Trainer t(cfg, 2);
  TeacherResult teacher = t.train_teacher(ctx_of("t", "teacher", "teacher"));
  const std::uint64_t teacher_hash = teacher.params.content_hash();

  ParaphraserResult pr = t.train_paraphrasers(teacher.params);
  REQUIRE(pr.rec_trace_enc.size() == 4);
  REQUIRE(pr.rec_trace_dec.size() == 4);
  CHECK(pr.rec_trace_enc.back() < pr.rec_trace_enc.front());
  CHECK(pr.rec_trace_dec.back() < pr.rec_trace_dec.front());
  CHECK(teacher.params.content_hash() == teacher_hash);
}

TEST_CASE("distillation validates its inputs up front") {
  Trainer t(tiny_cfg(), 1);
  RowContext ctx = ctx_of("d", "distill", "graph_adv_logits", "3");

  DistillInputs no_teacher;  // all toggles default to on
  CHECK_THROWS_AS(t.distill(no_teacher, ctx), ValidationError);

  TeacherResult teacher = t.train_teacher(ctx_of("t", "teacher", "teacher"));
  DistillInputs no_para;
  no_para.teacher = &teacher.params;
  CHECK_THROWS_AS(t.distill(no_para, ctx), ValidationError);
}

TEST_CASE("graph term without the paraphraser needs matching tap widths") {
  ExperimentConfig cfg = tiny_cfg();
  cfg.distill.enable_paraphraser = false;
  Trainer t(cfg, 1);
  TeacherResult teacher = t.train_teacher(ctx_of("t", "teacher", "teacher"));
  DistillInputs in;
  in.teacher = &teacher.params;
  // teacher taps are 8 channels, student taps 4: the graphs cannot line up
  CHECK_THROWS_AS(t.distill(in, ctx_of("d", "distill", "graph", "3")),
                  ValidationError);

  // with equal widths the same setup is legal
  ExperimentConfig eq = tiny_cfg();
  eq.distill.enable_paraphraser = false;
  eq.student_width = eq.teacher_width;
  Trainer te(eq, 1);
  TeacherResult teq = te.train_teacher(ctx_of("t", "teacher", "teacher"));
  DistillInputs in2;
  in2.teacher = &teq.params;
  CHECK_NOTHROW(te.distill(in2, ctx_of("d", "distill", "graph", "3")));
}

TEST_CASE("the full distillation arm runs every loss and fills rows") {
  ExperimentConfig cfg = tiny_cfg();
  Trainer t(cfg, 1);
  TeacherResult teacher = t.train_teacher(ctx_of("t", "teacher", "teacher"));
  ParaphraserResult pr = t.train_paraphrasers(teacher.params);

  DistillInputs in;
  in.teacher = &teacher.params;
  in.para_enc = &pr.enc_site;
  in.para_dec = &pr.dec_site;

  reset_loss_call_counts();
  DistillResult res = t.distill(in, ctx_of("d", "distill", "graph_adv_logits", "3"));
  LossCallCounts c = loss_call_counts();

  const std::size_t steps = cfg.train.epochs * (16 / cfg.train.batch);
  CHECK(c.vg == steps);
  CHECK(c.kd == steps);
  CHECK(c.adv_g == steps);
  CHECK(c.adv_d == steps);
  CHECK(c.ce == steps);

  REQUIRE(res.rows.size() == cfg.train.epochs + 1);
  CHECK(res.rows[0].patch == "3");
  CHECK(res.total_trace.size() == cfg.train.epochs);
  CHECK(res.epochs_run == cfg.train.epochs);

  // the critic moved away from its initialization
  Trainer fresh(cfg, 1);
  CHECK(res.critic.content_hash() != fresh.make_critic().params().content_hash());
}

TEST_CASE("distillation is bitwise deterministic across identical runs") {
  ExperimentConfig cfg = tiny_cfg();
  auto run = [&] {
    Trainer t(cfg, 5);
    TeacherResult teacher = t.train_teacher(ctx_of("t", "teacher", "teacher"));
    ParaphraserResult pr = t.train_paraphrasers(teacher.params);
    DistillInputs in;
    in.teacher = &teacher.params;
    in.para_enc = &pr.enc_site;
    in.para_dec = &pr.dec_site;
    return t.distill(in, ctx_of("d", "distill", "graph_adv_logits", "3"));
  };
  DistillResult a = run();
  DistillResult b = run();
  CHECK(a.student.content_hash() == b.student.content_hash());
  CHECK(a.critic.content_hash() == b.critic.content_hash());
  CHECK(rows_text(a.rows) == rows_text(b.rows));
  CHECK(a.total_trace == b.total_trace);
}

TEST_CASE("teacher resume reproduces the uninterrupted run bitwise") {
  ExperimentConfig cfg = tiny_cfg();
  cfg.train.epochs = 4;
  const std::string state = "trainer_test_teacher.state";
  Cleanup c{state};
  std::remove(state.c_str());

  Trainer full(cfg, 9);
  TeacherResult whole = full.train_teacher(ctx_of("t", "teacher", "teacher"));

  Trainer first(cfg, 9);
  TeacherResult part1 = first.train_teacher(ctx_of("t", "teacher", "teacher"), state, 2);
  CHECK(part1.epochs_run == 2);

  Trainer second(cfg, 9);
  TeacherResult part2 = second.train_teacher(ctx_of("t", "teacher", "teacher"), state);
  CHECK(part2.epochs_run == 2);

  CHECK(part2.params.content_hash() == whole.params.content_hash());
  CHECK(rows_text(part1.rows) + rows_text(part2.rows) == rows_text(whole.rows));
}

TEST_CASE("distill resume reproduces the uninterrupted run bitwise") {
  ExperimentConfig cfg = tiny_cfg();
  cfg.train.epochs = 4;
  const std::string state = "trainer_test_distill.state";
  Cleanup c{state};
  std::remove(state.c_str());

  auto prepare = [&](Trainer& t) {
    TeacherResult teacher = t.train_teacher(ctx_of("t", "teacher", "teacher"));
    ParaphraserResult pr = t.train_paraphrasers(teacher.params);
    return std::pair<ParamStore, ParaphraserResult>{teacher.params, pr};
  };

  Trainer full(cfg, 6);
  auto [tp, pr] = prepare(full);
  DistillInputs in;
  in.teacher = &tp;
  in.para_enc = &pr.enc_site;
  in.para_dec = &pr.dec_site;
  DistillResult whole = full.distill(in, ctx_of("d", "distill", "graph_adv_logits", "3"));

  Trainer first(cfg, 6);
  auto [tp1, pr1] = prepare(first);
  DistillInputs in1;
  in1.teacher = &tp1;
  in1.para_enc = &pr1.enc_site;
  in1.para_dec = &pr1.dec_site;
  DistillResult part1 =
      first.distill(in1, ctx_of("d", "distill", "graph_adv_logits", "3"), state, 2);
  CHECK(part1.epochs_run == 2);

  Trainer second(cfg, 6);
  auto [tp2, pr2] = prepare(second);
  DistillInputs in2;
  in2.teacher = &tp2;
  in2.para_enc = &pr2.enc_site;
  in2.para_dec = &pr2.dec_site;
  DistillResult part2 =
      second.distill(in2, ctx_of("d", "distill", "graph_adv_logits", "3"), state);

  CHECK(part2.student.content_hash() == whole.student.content_hash());
  CHECK(part2.critic.content_hash() == whole.critic.content_hash());
  CHECK(rows_text(part1.rows) + rows_text(part2.rows) == rows_text(whole.rows));
}

TEST_CASE("state files from another configuration or seed are refused") {
  ExperimentConfig cfg = tiny_cfg();
  const std::string state = "trainer_test_mismatch.state";
  Cleanup c{state};
  std::remove(state.c_str());

  Trainer t(cfg, 1);
  t.train_teacher(ctx_of("t", "teacher", "teacher"), state, 1);

  // same config, different seed
  Trainer other_seed(cfg, 2);
  CHECK_THROWS_AS(other_seed.train_teacher(ctx_of("t", "teacher", "teacher"), state),
                  ValidationError);

  // same seed, different config
  ExperimentConfig changed = cfg;
  changed.train.base_lr = 0.004;
  Trainer other_cfg(changed, 1);
  CHECK_THROWS_AS(other_cfg.train_teacher(ctx_of("t", "teacher", "teacher"), state),
                  ValidationError);
}

TEST_CASE("toggles off and zero lambdas give bitwise-equal students") {
  ExperimentConfig scratch_cfg = tiny_cfg();
  scratch_cfg.distill.enable_graph = false;
  scratch_cfg.distill.enable_adv = false;
  scratch_cfg.distill.enable_logits = false;

  ExperimentConfig zero_cfg = tiny_cfg();
  zero_cfg.distill.lambda1 = 0.0;
  zero_cfg.distill.lambda2 = 0.0;
  zero_cfg.distill.lambda3 = 0.0;
  zero_cfg.distill.lambda4 = 0.0;

  // scratch arm: no teacher involved at all
  Trainer ts(scratch_cfg, 8);
  reset_loss_call_counts();
  DistillResult scratch = ts.distill(DistillInputs{}, ctx_of("d", "distill", "scratch"));
  LossCallCounts cs = loss_call_counts();
  CHECK(cs.vg == 0);
  CHECK(cs.kd == 0);
  CHECK(cs.adv_g == 0);
  CHECK(cs.adv_d == 0);
  CHECK(cs.ce > 0);

  // zero-lambda arm: every loss still evaluated, none of them folded in
  Trainer tz(zero_cfg, 8);
  TeacherResult teacher = tz.train_teacher(ctx_of("t", "teacher", "teacher"));
  ParaphraserResult pr = tz.train_paraphrasers(teacher.params);
  DistillInputs in;
  in.teacher = &teacher.params;
  in.para_enc = &pr.enc_site;
  in.para_dec = &pr.dec_site;
  reset_loss_call_counts();
  DistillResult zero = tz.distill(in, ctx_of("d", "distill", "scratch"));
  LossCallCounts cz = loss_call_counts();
  CHECK(cz.vg > 0);
  CHECK(cz.kd > 0);
  CHECK(cz.adv_g > 0);
  CHECK(cz.adv_d > 0);

  CHECK(zero.student.content_hash() == scratch.student.content_hash());
  CHECK(zero.total_trace == scratch.total_trace);
}

TEST_CASE("a runaway learning rate aborts with a numeric error") {
  ExperimentConfig cfg = tiny_cfg();
  cfg.train.epochs = 1;
  cfg.train.base_lr = 1e100;
  Trainer t(cfg, 1);
  CHECK_THROWS_AS(t.train_teacher(ctx_of("t", "teacher", "teacher")), NumericError);
}

TEST_CASE("unlabeled-heavy pools still distill; cross-entropy just goes quiet") {
  ExperimentConfig cfg = tiny_cfg();
  cfg.data.labeled_fraction = 0.25;  // 4 of 16 labeled
  Trainer t(cfg, 3);
  TeacherResult teacher = t.train_teacher(ctx_of("t", "teacher", "teacher"));
  ParaphraserResult pr = t.train_paraphrasers(teacher.params);
  DistillInputs mixed;
  mixed.teacher = &teacher.params;
  mixed.para_enc = &pr.enc_site;
  mixed.para_dec = &pr.dec_site;
  DistillResult all = t.distill(mixed, ctx_of("d", "distill", "gf_all", "3"));
  REQUIRE(!all.rows.empty());
  CHECK(all.rows[0].labeled_fraction == 0.25);

  DistillInputs labeled_only = mixed;
  labeled_only.labeled_pool_only = true;
  DistillResult lab = t.distill(labeled_only, ctx_of("d", "distill", "gf_labeled", "3"));
  CHECK(!lab.rows.empty());
  // labeled pool has 4 samples -> 1 iteration per epoch instead of 4
  CHECK(lab.total_trace.size() == cfg.train.epochs);
}

TEST_CASE("predict and evaluate_split agree with the metric layer") {
  ExperimentConfig cfg = tiny_cfg();
  Trainer t(cfg, 1);
  MiniUNet net = t.make_teacher();
  const Sample& s0 = t.dataset().val[0];
  std::vector<int> pred = t.predict(net, net.params(), s0);
  REQUIRE(pred.size() == s0.label.size());
  for (int c : pred) {
    CHECK(c >= 0);
    CHECK(c < 4);
  }
  MetricReport rep = t.evaluate_split(net, net.params(), t.dataset().val);
  CHECK(rep.sample_count == t.dataset().val.size());
  CHECK(rep.acc >= 0.0);
  CHECK(rep.acc <= 1.0);
}
