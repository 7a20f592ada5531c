#include "gfkd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>

#include "gfkd/checkpoint.hpp"
#include "gfkd/error.hpp"
#include "gfkd/graph_flow.hpp"
#include "gfkd/losses.hpp"
#include "gfkd/ops.hpp"
#include "gfkd/optim.hpp"

namespace gfkd {
namespace {

// Sub-stream tags.  Every piece of randomness is a child of the run seed, so
// phases cannot perturb each other and a resumed epoch replays the exact
// stream of the uninterrupted run.
constexpr std::uint64_t kTagTeacherInit = 1;
constexpr std::uint64_t kTagStudentInit = 2;
constexpr std::uint64_t kTagCriticInit = 3;
constexpr std::uint64_t kTagParaEncInit = 4;
constexpr std::uint64_t kTagParaDecInit = 5;
constexpr std::uint64_t kPhaseTeacher = 101;
constexpr std::uint64_t kPhaseParaphraser = 102;
constexpr std::uint64_t kPhaseDistill = 103;

struct Batch {
  Tensor x;  // B x 1 x S x S
  std::vector<int> labels;
  std::vector<std::uint8_t> flags;
};

Batch make_batch(const std::vector<Sample>& train,
                 const std::vector<std::uint8_t>& labeled,
                 const std::vector<std::size_t>& pool,
                 const std::vector<std::size_t>& order, std::size_t it,
                 std::size_t bsz, std::size_t s, Rng& rng) {
  Batch b;
  std::vector<double> xs;
  xs.reserve(bsz * s * s);
  b.labels.reserve(bsz * s * s);
  b.flags.reserve(bsz);
  for (std::size_t slot = 0; slot < bsz; ++slot) {
    const std::size_t idx = pool[order[it * bsz + slot]];
    const Sample aug = augment(train[idx], rng);
    xs.insert(xs.end(), aug.image.begin(), aug.image.end());
    b.labels.insert(b.labels.end(), aug.label.begin(), aug.label.end());
    b.flags.push_back(labeled[idx]);
  }
  b.x = Tensor::constant({bsz, 1, s, s}, std::move(xs));
  return b;
}

std::map<std::string, std::vector<double>> collect_grads(const ParamTensors& pt,
                                                         const Gradients& g) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, t] : pt.all())
    if (const auto* gv = g.find(t)) out[name] = *gv;
  return out;
}

std::vector<std::size_t> labeled_pool(const std::vector<std::uint8_t>& labeled) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < labeled.size(); ++i)
    if (labeled[i]) pool.push_back(i);
  return pool;
}

ResultRow make_row(const RowContext& ctx, std::uint64_t seed, double fraction,
                   std::int64_t epoch, const char* split, const MetricReport& rep,
                   std::size_t params, std::size_t flops) {
  ResultRow r;
  r.run_id = ctx.run_id;
  r.phase = ctx.phase;
  r.seed = seed;
  r.arm = ctx.arm;
  r.labeled_fraction = fraction;
  r.patch = ctx.patch;
  r.epoch = epoch;
  r.split = split;
  r.acc = rep.acc;
  r.miou = rep.miou;
  r.dsc_mean = rep.dsc_mean;
  r.hd_mean = rep.hd_mean;
  r.params = params;
  r.flops = flops;
  return r;
}

// ---- resumable phase state --------------------------------------------------
// One checkpoint file holds everything an epoch boundary needs: parameters,
// optimizer moments, the iteration counter, the phase RNG state, and the
// config hash + seed that guard against resuming someone else's run.

struct StorePiece {
  std::string prefix;
  ParamStore* store;
};
struct OptPiece {
  std::string prefix;
  Optimizer* opt;
};

void push_meta(std::vector<ParamStore::Entry>& out, const std::string& name,
               std::vector<double> values) {
  out.push_back({name, {values.size()}, std::move(values)});
}

void save_phase_state(const std::string& path, std::uint64_t cfg_hash,
                      std::uint64_t seed, const std::array<std::uint64_t, 4>& rng,
                      std::uint64_t iter, std::uint64_t next_epoch,
                      const std::vector<StorePiece>& stores,
                      const std::vector<OptPiece>& opts) {
  std::vector<ParamStore::Entry> entries;
  push_meta(entries, "meta.config_hash", {u64_as_double(cfg_hash)});
  push_meta(entries, "meta.seed", {u64_as_double(seed)});
  push_meta(entries, "meta.iter", {u64_as_double(iter)});
  push_meta(entries, "meta.next_epoch", {u64_as_double(next_epoch)});
  push_meta(entries, "meta.rng",
            {u64_as_double(rng[0]), u64_as_double(rng[1]), u64_as_double(rng[2]),
             u64_as_double(rng[3])});
  for (const auto& sp : stores)
    for (auto e : store_entries(*sp.store, sp.prefix)) entries.push_back(std::move(e));
  for (const auto& op : opts)
    for (auto e : op.opt->state_entries(op.prefix)) entries.push_back(std::move(e));
  save_checkpoint(path, entries);
}

const ParamStore::Entry* find_entry(const std::vector<ParamStore::Entry>& entries,
                                    const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

std::uint64_t meta_u64(const std::vector<ParamStore::Entry>& entries,
                       const std::string& name, const std::string& path) {
  const auto* e = find_entry(entries, name);
  if (!e || e->values.size() != 1)
    throw ValidationError("state " + path + ": missing " + name);
  return double_as_u64(e->values[0]);
}

bool load_phase_state(const std::string& path, std::uint64_t cfg_hash,
                      std::uint64_t seed, std::array<std::uint64_t, 4>& rng,
                      std::uint64_t& iter, std::uint64_t& next_epoch,
                      const std::vector<StorePiece>& stores,
                      const std::vector<OptPiece>& opts) {
  if (path.empty() || !std::filesystem::exists(path)) return false;
  const auto entries = load_checkpoint(path);
  if (meta_u64(entries, "meta.config_hash", path) != cfg_hash)
    throw ValidationError("state " + path + ": config hash mismatch — this state"
                          " belongs to a different configuration");
  if (meta_u64(entries, "meta.seed", path) != seed)
    throw ValidationError("state " + path + ": seed mismatch");
  iter = meta_u64(entries, "meta.iter", path);
  next_epoch = meta_u64(entries, "meta.next_epoch", path);
  const auto* r = find_entry(entries, "meta.rng");
  if (!r || r->values.size() != 4)
    throw ValidationError("state " + path + ": missing meta.rng");
  for (std::size_t i = 0; i < 4; ++i) rng[i] = double_as_u64(r->values[i]);
  for (const auto& sp : stores) load_into_store(*sp.store, entries, sp.prefix);
  for (const auto& op : opts) op.opt->load_state_entries(op.prefix, entries);
  return true;
}

void ensure_finite(double v, const std::string& what, std::uint64_t iter) {
  if (!std::isfinite(v))
    throw NumericError(what + " is non-finite at iteration " + std::to_string(iter));
}

std::string bundle_breakdown(const LossBundle& b) {
  auto part = [](const char* name, const Tensor& t) {
    return std::string(name) + "=" +
           (t.defined() ? std::to_string(t.scalar()) : std::string("off"));
  };
  return part("ce", b.l_ce) + ", " + part("vertex", b.l_vertex) + ", " +
         part("edge", b.l_edge) + ", " + part("adv_g", b.l_g) + ", " +
         part("kd", b.l_kd);
}

}  // namespace

Trainer::Trainer(const ExperimentConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  data_ = generate_dataset(cfg_.data);
  // the split is a property of the dataset, keyed to the data seed, so every
  // arm and every run seed sees the identical labeled subset
  labeled_ = partition_labels(data_.train.size(), cfg_.data.labeled_fraction,
                              cfg_.data.seed);
}

MiniUNet Trainer::make_teacher() const {
  return MiniUNet(cfg_.teacher_width, 1, cfg_.data.num_classes,
                  Rng(seed_).child(kTagTeacherInit).next_u64());
}

MiniUNet Trainer::make_student() const {
  return MiniUNet(cfg_.student_width, 1, cfg_.data.num_classes,
                  Rng(seed_).child(kTagStudentInit).next_u64());
}

Discriminator Trainer::make_critic() const {
  return Discriminator(cfg_.data.num_classes + 1,
                       Rng(seed_).child(kTagCriticInit).next_u64());
}

Paraphraser Trainer::make_paraphraser(std::uint64_t role_tag) const {
  return Paraphraser(2 * cfg_.teacher_width, 2 * cfg_.student_width,
                     Rng(seed_).child(role_tag).next_u64());
}

std::vector<int> Trainer::predict(const MiniUNet& net, const ParamStore& params,
                                  const Sample& sample) const {
  ParamTensors pt(params, false);
  const std::size_t s = sample.size;
  const auto out =
      net.forward(pt, Tensor::constant({1, 1, s, s}, sample.image));
  const auto& lv = out.logits.data();
  const std::size_t m = cfg_.data.num_classes;
  std::vector<int> pred(s * s, 0);
  for (std::size_t px = 0; px < s * s; ++px) {
    int best = 0;
    double best_v = lv[px];
    for (std::size_t c = 1; c < m; ++c)
      if (lv[c * s * s + px] > best_v) {
        best_v = lv[c * s * s + px];
        best = static_cast<int>(c);
      }
    pred[px] = best;
  }
  return pred;
}

MetricReport Trainer::evaluate_split(const MiniUNet& net, const ParamStore& params,
                                     const std::vector<Sample>& split) const {
  if (split.empty()) throw ValidationError("evaluate_split: empty split");
  ParamTensors pt(params, false);
  const std::size_t s = cfg_.data.image_size;
  const std::size_t m = cfg_.data.num_classes;
  const std::size_t bsz = std::max<std::size_t>(1, cfg_.train.batch);
  std::vector<MetricReport> reports;
  reports.reserve(split.size());
  for (std::size_t start = 0; start < split.size(); start += bsz) {
    const std::size_t n = std::min(bsz, split.size() - start);
    std::vector<double> xs;
    xs.reserve(n * s * s);
    for (std::size_t i = 0; i < n; ++i)
      xs.insert(xs.end(), split[start + i].image.begin(),
                split[start + i].image.end());
    const auto out = net.forward(pt, Tensor::constant({n, 1, s, s}, std::move(xs)));
    const auto& lv = out.logits.data();
    const std::size_t plane = s * s;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<int> pred(plane, 0);
      const double* base = lv.data() + i * m * plane;
      for (std::size_t px = 0; px < plane; ++px) {
        int best = 0;
        double best_v = base[px];
        for (std::size_t c = 1; c < m; ++c)
          if (base[c * plane + px] > best_v) {
            best_v = base[c * plane + px];
            best = static_cast<int>(c);
          }
        pred[px] = best;
      }
      reports.push_back(evaluate_sample(pred, split[start + i].label, s, s, m));
    }
  }
  return average_reports(reports);
}

TeacherResult Trainer::train_teacher(const RowContext& ctx,
                                     const std::string& state_path,
                                     std::size_t stop_after_epoch) {
  const auto pool = labeled_pool(labeled_);
  if (pool.empty())
    throw ValidationError("train_teacher: the labeled training split is empty "
                          "(labeled_fraction too small?)");
  MiniUNet net = make_teacher();
  const std::size_t s = cfg_.data.image_size;
  const std::size_t bsz = std::min(cfg_.train.batch, pool.size());
  const std::size_t iters = pool.size() / bsz;
  const Schedule sched{cfg_.train.base_lr, cfg_.train.epochs * iters,
                       cfg_.train.power, cfg_.train.step_decay_every,
                       cfg_.train.step_decay_factor};
  Optimizer opt(Optimizer::Kind::adam, cfg_.train.weight_decay);

  Rng phase_rng = Rng(seed_).child(kPhaseTeacher);
  std::uint64_t iter = 0, next_epoch = 0;
  {
    auto rng_state = phase_rng.state();
    if (load_phase_state(state_path, cfg_.hash(), seed_, rng_state, iter, next_epoch,
                         {{"net.", &net.params()}}, {{"opt.", &opt}}))
      phase_rng.set_state(rng_state);
  }

  const std::size_t last =
      stop_after_epoch == 0 ? cfg_.train.epochs
                            : std::min(cfg_.train.epochs, stop_after_epoch);
  const std::size_t n_params = count_params(net.params());
  const std::size_t flops = flops_from_macs(net.count_macs(s, s));

  TeacherResult res;
  for (std::size_t epoch = next_epoch; epoch < last; ++epoch) {
    Rng erng = phase_rng.child(1 + epoch);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    erng.shuffle(order);
    for (std::size_t it = 0; it < iters; ++it) {
      const Batch b = make_batch(data_.train, labeled_, pool, order, it, bsz, s, erng);
      ParamTensors pt(net.params(), true);
      const auto out = net.forward(pt, b.x);
      const Tensor ce = ce_loss(out.logits, b.labels, b.flags);
      ensure_finite(ce.scalar(), "train_teacher: cross-entropy", iter);
      const auto grads = backward(ce);
      opt.step(net.params(), collect_grads(pt, grads), sched.lr(iter, epoch));
      ++iter;
    }
    if (!data_.val.empty())
      res.rows.push_back(make_row(ctx, seed_, cfg_.data.labeled_fraction,
                                  static_cast<std::int64_t>(epoch + 1), "val",
                                  evaluate_split(net, net.params(), data_.val),
                                  n_params, flops));
    if (epoch + 1 == cfg_.train.epochs)
      res.rows.push_back(make_row(ctx, seed_, cfg_.data.labeled_fraction,
                                  static_cast<std::int64_t>(epoch + 1), "train",
                                  evaluate_split(net, net.params(), data_.train),
                                  n_params, flops));
    ++res.epochs_run;
    if (!state_path.empty())
      save_phase_state(state_path, cfg_.hash(), seed_, phase_rng.state(), iter,
                       epoch + 1, {{"net.", &net.params()}}, {{"opt.", &opt}});
  }
  res.params = net.params();
  return res;
}

ParaphraserResult Trainer::train_paraphrasers(const ParamStore& teacher) {
  MiniUNet tnet = make_teacher();
  Paraphraser penc = make_paraphraser(kTagParaEncInit);
  Paraphraser pdec = make_paraphraser(kTagParaDecInit);

  std::vector<std::size_t> pool(data_.train.size());
  std::iota(pool.begin(), pool.end(), 0);
  if (pool.empty()) throw ValidationError("train_paraphrasers: empty training split");
  const std::size_t s = cfg_.data.image_size;
  const std::size_t bsz = std::min(cfg_.train.batch, pool.size());
  const std::size_t iters = pool.size() / bsz;
  const std::size_t epochs = cfg_.train.paraphraser_epochs;
  const Schedule sched{cfg_.train.base_lr, epochs * iters, cfg_.train.power,
                       cfg_.train.step_decay_every, cfg_.train.step_decay_factor};
  Optimizer oenc(Optimizer::Kind::sgd_momentum, cfg_.train.weight_decay);
  Optimizer odec(Optimizer::Kind::sgd_momentum, cfg_.train.weight_decay);

  Rng phase_rng = Rng(seed_).child(kPhaseParaphraser);
  ParaphraserResult res;
  std::uint64_t iter = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    Rng erng = phase_rng.child(1 + epoch);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    erng.shuffle(order);
    double acc_enc = 0.0, acc_dec = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
      const Batch b = make_batch(data_.train, labeled_, pool, order, it, bsz, s, erng);
      ParamTensors tpt(teacher, false);
      const auto tout = tnet.forward(tpt, b.x);  // frozen: taps carry no lineage
      ParamTensors pe(penc.params(), true);
      ParamTensors pd(pdec.params(), true);
      const Tensor r_enc = rec_loss(tout.enc2, penc.reconstruct(pe, tout.enc2));
      const Tensor r_dec = rec_loss(tout.dec2, pdec.reconstruct(pd, tout.dec2));
      ensure_finite(r_enc.scalar(), "train_paraphrasers: encoder-site rec loss", iter);
      ensure_finite(r_dec.scalar(), "train_paraphrasers: decoder-site rec loss", iter);
      const auto grads = backward(add(r_enc, r_dec));
      const double lr = sched.lr(iter, epoch);
      oenc.step(penc.params(), collect_grads(pe, grads), lr);
      odec.step(pdec.params(), collect_grads(pd, grads), lr);
      acc_enc += r_enc.scalar();
      acc_dec += r_dec.scalar();
      ++iter;
    }
    res.rec_trace_enc.push_back(acc_enc / static_cast<double>(iters));
    res.rec_trace_dec.push_back(acc_dec / static_cast<double>(iters));
  }
  res.enc_site = penc.params();
  res.dec_site = pdec.params();
  return res;
}

DistillResult Trainer::distill(const DistillInputs& in, const RowContext& ctx,
                               const std::string& state_path,
                               std::size_t stop_after_epoch) {
  const auto& d = cfg_.distill;
  const bool g_on = d.enable_graph;
  const bool a_on = d.enable_adv;
  const bool l_on = d.enable_logits;
  const bool need_teacher = g_on || a_on || l_on;
  if (need_teacher && !in.teacher)
    throw ValidationError("distill: a trained teacher checkpoint is required when "
                          "any distillation term is enabled");
  if (g_on && d.enable_paraphraser && (!in.para_enc || !in.para_dec))
    throw ValidationError("distill: graph distillation with the paraphraser "
                          "enabled needs both trained paraphrasers");

  const auto pool = in.labeled_pool_only
                        ? labeled_pool(labeled_)
                        : [&] {
                            std::vector<std::size_t> all(data_.train.size());
                            std::iota(all.begin(), all.end(), 0);
                            return all;
                          }();
  if (pool.empty()) throw ValidationError("distill: empty training pool");

  MiniUNet tnet = make_teacher();
  MiniUNet snet = make_student();
  Discriminator critic = make_critic();
  Paraphraser penc = make_paraphraser(kTagParaEncInit);
  Paraphraser pdec = make_paraphraser(kTagParaDecInit);

  const std::size_t s = cfg_.data.image_size;
  const std::size_t bsz = std::min(cfg_.train.batch, pool.size());
  const std::size_t iters = pool.size() / bsz;
  const std::size_t maxiter = cfg_.train.epochs * iters;
  const Schedule s_sched{cfg_.train.base_lr, maxiter, cfg_.train.power,
                         cfg_.train.step_decay_every, cfg_.train.step_decay_factor};
  // the critic keeps the poly curve but never the epoch staircase
  const Schedule d_sched{cfg_.train.critic_lr, maxiter, cfg_.train.power, 0,
                         cfg_.train.step_decay_factor};
  Optimizer s_opt(Optimizer::Kind::adam, cfg_.train.weight_decay);
  Optimizer d_opt(Optimizer::Kind::adam, 0.0);  // clipping is the critic's regularizer

  Rng phase_rng = Rng(seed_).child(kPhaseDistill);
  std::uint64_t iter = 0, next_epoch = 0;
  {
    auto rng_state = phase_rng.state();
    if (load_phase_state(state_path, cfg_.hash(), seed_, rng_state, iter, next_epoch,
                         {{"net.", &snet.params()}, {"critic.", &critic.params()}},
                         {{"opt.", &s_opt}, {"copt.", &d_opt}}))
      phase_rng.set_state(rng_state);
  }

  const std::size_t last =
      stop_after_epoch == 0 ? cfg_.train.epochs
                            : std::min(cfg_.train.epochs, stop_after_epoch);
  const std::size_t n_params = count_params(snet.params());
  const std::size_t flops = flops_from_macs(snet.count_macs(s, s));

  DistillResult res;
  for (std::size_t epoch = next_epoch; epoch < last; ++epoch) {
    Rng erng = phase_rng.child(1 + epoch);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    erng.shuffle(order);
    double total_acc = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
      const Batch b = make_batch(data_.train, labeled_, pool, order, it, bsz, s, erng);

      std::optional<UNetOutput> tout;
      if (need_teacher) {
        ParamTensors tpt(*in.teacher, false);
        tout = tnet.forward(tpt, b.x);
      }
      ParamTensors spt(snet.params(), true);
      const UNetOutput sout = snet.forward(spt, b.x);

      Tensor y_s, y_t;
      if (a_on) {
        y_s = softmax_over_classes(sout.logits, 1.0);
        y_t = softmax_over_classes(tout->logits, 1.0);
      }

      // critic update on detached predictions, then the Lipschitz clip
      if (a_on) {
        ParamTensors dpt(critic.params(), true);
        const Tensor scores_s = critic.discriminate(dpt, detach(y_s), b.x);
        const Tensor scores_t = critic.discriminate(dpt, y_t, b.x);
        const Tensor l_d = adv_loss_d_from_scores(scores_s, scores_t);
        ensure_finite(l_d.scalar(), "distill: critic loss", iter);
        const auto dg = backward(l_d);
        d_opt.step(critic.params(), collect_grads(dpt, dg), d_sched.lr(iter, epoch));
        clip_params(critic.params(), d.critic_clip);
      }

      // student update against the full objective, critic frozen
      LossBundle bundle;
      bundle.lambda1 = d.lambda1;
      bundle.lambda2 = d.lambda2;
      bundle.lambda3 = d.lambda3;
      bundle.lambda4 = d.lambda4;
      if (g_on) {
        Tensor ft_i = tout->enc2, ft_i2 = tout->dec2;
        if (d.enable_paraphraser) {
          ParamTensors pe(*in.para_enc, false);
          ParamTensors pd(*in.para_dec, false);
          ft_i = penc.paraphrase(pe, ft_i);
          ft_i2 = pdec.paraphrase(pd, ft_i2);
        }
        const auto [l_v, l_e] =
            vg_loss_batched(ft_i, ft_i2, sout.enc2, sout.dec2, d.patch);
        bundle.l_vertex = l_v;
        bundle.l_edge = l_e;
      }
      if (l_on)
        bundle.l_kd = kd_loss(softmax_over_classes(sout.logits, d.tau),
                              softmax_over_classes(tout->logits, d.tau));
      if (a_on) {
        ParamTensors dfrozen(critic.params(), false);
        bundle.l_g =
            adv_loss_g_from_scores(critic.discriminate(dfrozen, y_s, b.x));
      }
      bundle.l_ce = ce_loss(sout.logits, b.labels, b.flags);

      const Tensor total = total_loss(bundle);
      if (!std::isfinite(total.scalar()))
        throw NumericError("distill: non-finite total loss at iteration " +
                           std::to_string(iter) + " (" + bundle_breakdown(bundle) +
                           ")");
      const auto sg = backward(total);
      s_opt.step(snet.params(), collect_grads(spt, sg), s_sched.lr(iter, epoch));
      total_acc += total.scalar();
      ++iter;
    }
    res.total_trace.push_back(total_acc / static_cast<double>(iters));
    if (!data_.val.empty())
      res.rows.push_back(make_row(ctx, seed_, cfg_.data.labeled_fraction,
                                  static_cast<std::int64_t>(epoch + 1), "val",
                                  evaluate_split(snet, snet.params(), data_.val),
                                  n_params, flops));
    if (epoch + 1 == cfg_.train.epochs)
      res.rows.push_back(make_row(ctx, seed_, cfg_.data.labeled_fraction,
                                  static_cast<std::int64_t>(epoch + 1), "train",
                                  evaluate_split(snet, snet.params(), data_.train),
                                  n_params, flops));
    ++res.epochs_run;
    if (!state_path.empty())
      save_phase_state(state_path, cfg_.hash(), seed_, phase_rng.state(), iter,
                       epoch + 1,
                       {{"net.", &snet.params()}, {"critic.", &critic.params()}},
                       {{"opt.", &s_opt}, {"copt.", &d_opt}});
  }
  res.student = snet.params();
  res.critic = critic.params();
  return res;
}

}  // namespace gfkd
