#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gfkd/checkpoint.hpp"
#include "gfkd/config.hpp"
#include "gfkd/csv.hpp"
#include "gfkd/data.hpp"
#include "gfkd/error.hpp"
#include "gfkd/metrics.hpp"
#include "gfkd/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string real_str(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string arm_name(const gfkd::DistillConfig& d) {
  std::string n;
  if (d.enable_graph) n = "graph";
  if (d.enable_adv) n += n.empty() ? "adv" : "_adv";
  if (d.enable_logits) n += n.empty() ? "logits" : "_logits";
  return n.empty() ? "scratch" : n;
}

std::uint64_t fnv_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw gfkd::ValidationError("cannot hash " + path.string());
  std::uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!is) break;
  }
  return h;
}

// final val-split mIoU per (group, seed); group = arm[-p<patch>]-f<fraction>
std::string group_key(const gfkd::ResultRow& r) {
  std::string key = r.arm;
  if (r.patch != "-") key += "-p" + r.patch;
  key += "-f" + real_str(r.labeled_fraction);
  return key;
}

void write_summary(const fs::path& path, const std::vector<gfkd::ResultRow>& rows) {
  std::map<std::string, std::map<std::uint64_t, std::pair<std::int64_t, double>>>
      best;  // group -> seed -> (epoch, miou)
  for (const auto& r : rows) {
    if (r.split != "val") continue;
    auto& slot = best[group_key(r)][r.seed];
    if (r.epoch >= slot.first) slot = {r.epoch, r.miou};
  }

  json groups = json::object();
  for (const auto& [key, by_seed] : best) {
    std::vector<std::uint64_t> seeds;
    std::vector<double> mious;
    for (const auto& [seed, em] : by_seed) {
      seeds.push_back(seed);
      mious.push_back(em.second);
    }
    double mean = 0.0;
    for (double v : mious) mean += v;
    mean /= static_cast<double>(mious.size());
    double sd = 0.0;
    if (mious.size() > 1) {
      for (double v : mious) sd += (v - mean) * (v - mean);
      sd = std::sqrt(sd / static_cast<double>(mious.size() - 1));
    }
    groups[key] = {{"seeds", seeds},
                   {"final_val_miou", mious},
                   {"mean", mean},
                   {"std", sd}};
  }

  json wilcox = json::object();
  for (auto a = best.begin(); a != best.end(); ++a)
    for (auto b = std::next(a); b != best.end(); ++b) {
      std::vector<std::pair<double, double>> pairs;
      for (const auto& [seed, em] : a->second) {
        const auto it = b->second.find(seed);
        if (it != b->second.end()) pairs.push_back({em.second, it->second.second});
      }
      if (!pairs.empty())
        wilcox[a->first + " vs " + b->first] = gfkd::wilcoxon_signed_rank(pairs);
    }

  json doc = {{"groups", groups}, {"wilcoxon_two_sided", wilcox}};
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw gfkd::ValidationError("cannot write " + path.string());
  os << doc.dump(2) << '\n';
}

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::int64_t only_seed = -1;
  bool resumable = false;
  std::size_t stop_after_epoch = 0;
};

gfkd::ExperimentConfig load_cfg(const CommonFlags& f) {
  auto cfg = gfkd::load_config(f.config_path, f.sets);
  if (const char* env = std::getenv("GFKD_OUT"))
    if (*env) cfg.run.out_dir = env;
  fs::create_directories(cfg.run.out_dir);
  return cfg;
}

std::vector<std::uint64_t> pick_seeds(const gfkd::ExperimentConfig& cfg,
                                      const CommonFlags& f) {
  if (f.only_seed < 0) return cfg.run.seeds;
  return {static_cast<std::uint64_t>(f.only_seed)};
}

std::string csv_name(const std::string& stem, const CommonFlags& f) {
  if (f.only_seed < 0) return stem + ".csv";
  return stem + "-s" + std::to_string(f.only_seed) + ".csv";
}

void emit(const gfkd::ExperimentConfig& cfg, const std::string& stem,
          const CommonFlags& f, const std::vector<gfkd::ResultRow>& rows) {
  const fs::path out(cfg.run.out_dir);
  const std::string name = csv_name(stem, f);
  gfkd::write_csv((out / name).string(), rows);
  write_summary(out / (name.substr(0, name.size() - 4) + "-summary.json"), rows);
  std::cout << "wrote " << (out / name).string() << " (" << rows.size() << " rows)\n";
}

void save_store(const fs::path& path, const gfkd::ParamStore& store) {
  gfkd::save_checkpoint(path.string(), gfkd::store_entries(store, ""));
}

void load_store(const fs::path& path, gfkd::ParamStore& store) {
  gfkd::load_into_store(store, gfkd::load_checkpoint(path.string()), "");
}

fs::path teacher_ckpt(const gfkd::ExperimentConfig& cfg, std::uint64_t seed) {
  return fs::path(cfg.run.out_dir) / ("teacher-s" + std::to_string(seed) + ".ckpt");
}

// ---- subcommands ------------------------------------------------------------

void cmd_gen_data(const CommonFlags& f) {
  const auto cfg = load_cfg(f);
  const auto ds = gfkd::generate_dataset(cfg.data);
  const auto flags = gfkd::partition_labels(ds.train.size(), cfg.data.labeled_fraction,
                                            cfg.data.seed);
  const fs::path out(cfg.run.out_dir);
  gfkd::save_checkpoint((out / "train.bin").string(), gfkd::split_entries(ds.train));
  gfkd::save_checkpoint((out / "val.bin").string(), gfkd::split_entries(ds.val));

  json manifest;
  manifest["data"] = cfg.to_json()["data"];
  manifest["labeled_flags"] = flags;
  manifest["hashes"] = {{"train.bin", fnv_file(out / "train.bin")},
                        {"val.bin", fnv_file(out / "val.bin")}};
  std::ofstream os(out / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!os) throw gfkd::ValidationError("cannot write manifest.json");
  os << manifest.dump(2) << '\n';
  std::cout << "wrote " << (out / "train.bin").string() << ", val.bin, manifest.json\n";
}

void cmd_train_teacher(const CommonFlags& f) {
  const auto cfg = load_cfg(f);
  std::vector<gfkd::ResultRow> rows;
  for (const auto seed : pick_seeds(cfg, f)) {
    gfkd::Trainer tr(cfg, seed);
    gfkd::RowContext ctx{"teacher-s" + std::to_string(seed), "teacher", "teacher"};
    const std::string state =
        f.resumable ? (fs::path(cfg.run.out_dir) /
                       ("state-teacher-s" + std::to_string(seed) + ".ckpt"))
                          .string()
                    : "";
    auto res = tr.train_teacher(ctx, state, f.stop_after_epoch);
    save_store(teacher_ckpt(cfg, seed), res.params);
    rows.insert(rows.end(), res.rows.begin(), res.rows.end());
  }
  emit(cfg, "train-teacher", f, rows);
}

void cmd_distill(const CommonFlags& f) {
  const auto cfg = load_cfg(f);
  const std::string arm = arm_name(cfg.distill);
  const bool graph = cfg.distill.enable_graph;
  const bool need_teacher =
      graph || cfg.distill.enable_adv || cfg.distill.enable_logits;
  std::vector<gfkd::ResultRow> rows;
  for (const auto seed : pick_seeds(cfg, f)) {
    gfkd::Trainer tr(cfg, seed);

    gfkd::ParamStore teacher;
    if (need_teacher) {
      const auto path = teacher_ckpt(cfg, seed);
      if (!fs::exists(path))
        throw gfkd::ValidationError(
            "distill: missing teacher checkpoint " + path.string() +
            "; run the train-teacher subcommand with the same config and "
            "out_dir first");
      auto net = tr.make_teacher();
      load_store(path, net.params());
      teacher = net.params();
    }

    gfkd::ParaphraserResult para;
    if (graph && cfg.distill.enable_paraphraser) {
      para = tr.train_paraphrasers(teacher);
      const fs::path out(cfg.run.out_dir);
      save_store(out / ("para-enc-s" + std::to_string(seed) + ".ckpt"), para.enc_site);
      save_store(out / ("para-dec-s" + std::to_string(seed) + ".ckpt"), para.dec_site);
    }

    gfkd::DistillInputs in;
    in.teacher = need_teacher ? &teacher : nullptr;
    if (graph && cfg.distill.enable_paraphraser) {
      in.para_enc = &para.enc_site;
      in.para_dec = &para.dec_site;
    }
    gfkd::RowContext ctx{"distill-" + arm + "-s" + std::to_string(seed), "distill",
                         arm, graph ? cfg.distill.patch.str() : "-"};
    const std::string state =
        f.resumable ? (fs::path(cfg.run.out_dir) /
                       ("state-distill-" + arm + "-s" + std::to_string(seed) +
                        ".ckpt"))
                          .string()
                    : "";
    auto res = tr.distill(in, ctx, state, f.stop_after_epoch);
    save_store(fs::path(cfg.run.out_dir) /
                   ("student-" + arm + "-s" + std::to_string(seed) + ".ckpt"),
               res.student);
    rows.insert(rows.end(), res.rows.begin(), res.rows.end());
  }
  emit(cfg, "distill-" + arm, f, rows);
}

void cmd_eval(const CommonFlags& f, const std::string& ckpt, const std::string& net_kind,
              const std::string& split, const std::string& predictions) {
  const auto cfg = load_cfg(f);
  gfkd::Trainer tr(cfg, cfg.run.seeds.front());
  const auto& samples = split == "train" ? tr.dataset().train : tr.dataset().val;
  std::vector<gfkd::ResultRow> rows;
  gfkd::ResultRow row;
  row.phase = "eval";
  row.seed = cfg.run.seeds.front();
  row.labeled_fraction = cfg.data.labeled_fraction;
  row.epoch = 0;
  row.split = split;

  if (!predictions.empty()) {
    const auto entries = gfkd::load_checkpoint(predictions);
    std::vector<gfkd::MetricReport> reports;
    for (const auto& sample : samples) {
      const std::string want = std::to_string(sample.id) + ".pred";
      const gfkd::ParamStore::Entry* found = nullptr;
      for (const auto& e : entries)
        if (e.name == want) {
          found = &e;
          break;
        }
      if (!found)
        throw gfkd::ValidationError("eval: prediction dump lacks entry " + want);
      std::vector<int> pred(found->values.size());
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const int c = static_cast<int>(std::llround(found->values[i]));
        if (found->values[i] != static_cast<double>(c) || c < 0 ||
            static_cast<std::size_t>(c) >= cfg.data.num_classes)
          throw gfkd::ValidationError("eval: " + want + " holds a non-class value");
        pred[i] = c;
      }
      reports.push_back(gfkd::evaluate_sample(pred, sample.label, sample.size,
                                              sample.size, cfg.data.num_classes));
    }
    const auto rep = gfkd::average_reports(reports);
    row.run_id = "eval-predictions";
    row.arm = "predictions";
    row.acc = rep.acc;
    row.miou = rep.miou;
    row.dsc_mean = rep.dsc_mean;
    row.hd_mean = rep.hd_mean;
  } else {
    if (ckpt.empty())
      throw gfkd::ValidationError("eval: pass --checkpoint or --predictions");
    auto net = net_kind == "teacher" ? tr.make_teacher() : tr.make_student();
    load_store(ckpt, net.params());
    const auto rep = tr.evaluate_split(net, net.params(), samples);
    row.run_id = "eval-" + net_kind;
    row.arm = net_kind;
    row.acc = rep.acc;
    row.miou = rep.miou;
    row.dsc_mean = rep.dsc_mean;
    row.hd_mean = rep.hd_mean;
    row.params = gfkd::count_params(net.params());
    row.flops = gfkd::flops_from_macs(
        net.count_macs(cfg.data.image_size, cfg.data.image_size));
  }
  rows.push_back(row);
  emit(cfg, "eval", f, rows);
}

// teacher + paraphrasers + one distill arm, reusing in-process artifacts
struct SeedArtifacts {
  gfkd::ParamStore teacher;
  gfkd::ParaphraserResult para;
  bool has_para = false;
};

SeedArtifacts prepare_seed(gfkd::Trainer& tr, const gfkd::ExperimentConfig& cfg,
                           std::uint64_t seed, const std::string& run_prefix,
                           std::vector<gfkd::ResultRow>& rows, bool want_para) {
  SeedArtifacts art;
  gfkd::RowContext ctx{run_prefix + "-teacher-s" + std::to_string(seed), "teacher",
                       "teacher"};
  auto t = tr.train_teacher(ctx);
  rows.insert(rows.end(), t.rows.begin(), t.rows.end());
  save_store(teacher_ckpt(cfg, seed), t.params);
  art.teacher = std::move(t.params);
  if (want_para) {
    art.para = tr.train_paraphrasers(art.teacher);
    art.has_para = true;
  }
  return art;
}

void cmd_ablate_patch(const CommonFlags& f) {
  auto cfg = load_cfg(f);
  if (!cfg.distill.enable_graph)
    throw gfkd::ValidationError("ablate-patch: distill.enable_graph must stay on");
  const std::vector<std::string> patches = {"1", "3", "5", "7", "9", "full"};
  std::vector<gfkd::ResultRow> rows;
  for (const auto seed : pick_seeds(cfg, f)) {
    gfkd::Trainer tr(cfg, seed);
    auto art = prepare_seed(tr, cfg, seed, "ablate-patch", rows,
                            cfg.distill.enable_paraphraser);
    for (const auto& p : patches) {
      auto run_cfg = cfg;
      run_cfg.distill.patch = gfkd::PatchSpec::parse(p);
      gfkd::Trainer run_tr(run_cfg, seed);
      gfkd::DistillInputs in;
      in.teacher = &art.teacher;
      if (art.has_para) {
        in.para_enc = &art.para.enc_site;
        in.para_dec = &art.para.dec_site;
      }
      gfkd::RowContext ctx{"ablate-patch-p" + p + "-s" + std::to_string(seed),
                           "distill", arm_name(run_cfg.distill), p};
      auto res = run_tr.distill(in, ctx);
      rows.insert(rows.end(), res.rows.begin(), res.rows.end());
    }
  }
  emit(cfg, "ablate-patch", f, rows);
}

void cmd_ablate_components(const CommonFlags& f) {
  auto cfg = load_cfg(f);
  struct Combo {
    bool graph, adv, logits;
  };
  const std::vector<Combo> combos = {
      {false, false, false}, {true, false, false}, {true, true, false},
      {true, true, true}};
  std::vector<gfkd::ResultRow> rows;
  for (const auto seed : pick_seeds(cfg, f)) {
    gfkd::Trainer tr(cfg, seed);
    auto art = prepare_seed(tr, cfg, seed, "ablate", rows,
                            cfg.distill.enable_paraphraser);
    for (const auto& combo : combos) {
      auto run_cfg = cfg;
      run_cfg.distill.enable_graph = combo.graph;
      run_cfg.distill.enable_adv = combo.adv;
      run_cfg.distill.enable_logits = combo.logits;
      const std::string arm = arm_name(run_cfg.distill);
      gfkd::Trainer run_tr(run_cfg, seed);
      gfkd::DistillInputs in;
      in.teacher = (combo.graph || combo.adv || combo.logits) ? &art.teacher : nullptr;
      if (combo.graph && art.has_para) {
        in.para_enc = &art.para.enc_site;
        in.para_dec = &art.para.dec_site;
      }
      gfkd::RowContext ctx{"ablate-" + arm + "-s" + std::to_string(seed), "distill",
                           arm, combo.graph ? run_cfg.distill.patch.str() : "-"};
      auto res = run_tr.distill(in, ctx);
      rows.insert(rows.end(), res.rows.begin(), res.rows.end());
    }
  }
  emit(cfg, "ablate-components", f, rows);
}

void cmd_semi_sweep(const CommonFlags& f, std::vector<double> fractions) {
  auto base_cfg = load_cfg(f);
  if (fractions.empty()) fractions = {0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<gfkd::ResultRow> rows;
  for (const double frac : fractions) {
    auto cfg = base_cfg;
    cfg.data.labeled_fraction = frac;
    const std::string fs_tag = "f" + real_str(frac);
    for (const auto seed : pick_seeds(cfg, f)) {
      gfkd::Trainer tr(cfg, seed);
      // group 1: teacher on labeled data only
      gfkd::RowContext tctx{"sweep-teacher-" + fs_tag + "-s" + std::to_string(seed),
                            "teacher", "teacher"};
      auto t = tr.train_teacher(tctx);
      rows.insert(rows.end(), t.rows.begin(), t.rows.end());
      const bool want_para =
          cfg.distill.enable_graph && cfg.distill.enable_paraphraser;
      gfkd::ParaphraserResult para;
      if (want_para) para = tr.train_paraphrasers(t.params);

      auto run_arm = [&](const char* arm, bool gf, bool labeled_only) {
        auto run_cfg = cfg;
        if (!gf) {
          run_cfg.distill.enable_graph = false;
          run_cfg.distill.enable_adv = false;
          run_cfg.distill.enable_logits = false;
        }
        gfkd::Trainer run_tr(run_cfg, seed);
        gfkd::DistillInputs in;
        in.teacher = gf ? &t.params : nullptr;
        if (gf && want_para) {
          in.para_enc = &para.enc_site;
          in.para_dec = &para.dec_site;
        }
        in.labeled_pool_only = labeled_only;
        gfkd::RowContext ctx{
            "sweep-" + std::string(arm) + "-" + fs_tag + "-s" + std::to_string(seed),
            "distill", arm,
            gf && run_cfg.distill.enable_graph ? run_cfg.distill.patch.str() : "-"};
        auto res = run_tr.distill(in, ctx);
        rows.insert(rows.end(), res.rows.begin(), res.rows.end());
      };
      run_arm("scratch", false, true);    // group 2: student, labeled only
      run_arm("gf_labeled", true, true);  // group 3: Graph Flow, labeled only
      run_arm("gf_all", true, false);     // group 4: Graph Flow, all data
    }
  }
  emit(base_cfg, "semi-sweep", f, rows);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph Flow knowledge distillation on synthetic segmentation data"};
  app.require_subcommand(1);

  CommonFlags flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", flags.config_path, "JSON experiment config")
        ->required();
    sub->add_option("--set", flags.sets,
                    "override a config key, e.g. --set train.epochs=30");
    sub->add_option("--only-seed", flags.only_seed,
                    "run a single seed (shard seeds across processes)");
  };

  auto* gen = app.add_subcommand("gen-data", "generate and dump the dataset");
  add_common(gen);

  auto* teach = app.add_subcommand("train-teacher", "phase 1: supervised teacher");
  add_common(teach);
  teach->add_flag("--resumable", flags.resumable,
                  "write per-epoch state and resume from it");
  teach->add_option("--stop-after-epoch", flags.stop_after_epoch,
                    "stop early after this many epochs (0 = run all)");

  auto* dist = app.add_subcommand("distill", "phase 3: critic/student alternation");
  add_common(dist);
  dist->add_flag("--resumable", flags.resumable,
                 "write per-epoch state and resume from it");
  dist->add_option("--stop-after-epoch", flags.stop_after_epoch,
                   "stop early after this many epochs (0 = run all)");

  std::string eval_ckpt, eval_net = "student", eval_split = "val", eval_preds;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint or prediction dump");
  add_common(ev);
  ev->add_option("--checkpoint", eval_ckpt, "network checkpoint to evaluate");
  ev->add_option("--net", eval_net, "teacher|student")
      ->check(CLI::IsMember({"teacher", "student"}));
  ev->add_option("--split", eval_split, "train|val")
      ->check(CLI::IsMember({"train", "val"}));
  ev->add_option("--predictions", eval_preds,
                 "label-map dump to score instead of a network");

  auto* ap = app.add_subcommand("ablate-patch", "sweep the salience patch size");
  add_common(ap);

  auto* ac = app.add_subcommand("ablate-components",
                                "toggle graph/adversarial/logits terms");
  add_common(ac);

  std::vector<double> fractions;
  auto* sweep = app.add_subcommand("semi-sweep",
                                   "labeled-fraction sweep over four groups");
  add_common(sweep);
  sweep->add_option("--fractions", fractions, "labeled fractions to sweep");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) cmd_gen_data(flags);
    if (teach->parsed()) cmd_train_teacher(flags);
    if (dist->parsed()) cmd_distill(flags);
    if (ev->parsed()) cmd_eval(flags, eval_ckpt, eval_net, eval_split, eval_preds);
    if (ap->parsed()) cmd_ablate_patch(flags);
    if (ac->parsed()) cmd_ablate_components(flags);
    if (sweep->parsed()) cmd_semi_sweep(flags, fractions);
  } catch (const gfkd::NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return 2;
  } catch (const gfkd::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
