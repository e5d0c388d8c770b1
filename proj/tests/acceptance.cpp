// Acceptance gate: one pass/fail line per criterion, non-zero exit if any
// criterion fails. The path to the psel binary is the first argument.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "psel/io.hpp"
#include "psel/report.hpp"
#include "psel/run.hpp"

#include "oracles.hpp"

using namespace psel;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

std::string g_cli;
int g_failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int criterion, bool pass, const std::string& detail) {
  std::cout << "criterion " << criterion << " [" << (pass ? "PASS" : "FAIL") << "] " << detail
            << std::endl;
  if (!pass) ++g_failures;
}

int run_cli(const std::string& args) {
  const std::string cmd = "'" + g_cli + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  if (status < 0) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return "<unreadable:" + p.string() + ">";
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

// Labeled scenes exactly as `gen` lays them out, so in-process burn-in
// matches the CLI pipeline.
std::vector<Scene> pipeline_labeled_scenes(const RunConfig& cfg) {
  std::vector<Scene> scenes;
  for (int id = 0; id < cfg.dataset.labeled_scenes; ++id) {
    Rng rng = Rng::derive(cfg.seed, {0x40, static_cast<std::uint64_t>(id)});
    scenes.push_back(sample_scene(cfg.generator, id, true, rng));
  }
  return scenes;
}

std::vector<LabeledCandidate> held_out_candidates(const RunConfig& cfg, int n_scenes,
                                                  std::uint64_t tag) {
  std::vector<Scene> scenes;
  for (int i = 0; i < n_scenes; ++i) {
    Rng rng = Rng::derive(cfg.seed, {tag, static_cast<std::uint64_t>(i)});
    scenes.push_back(sample_scene(cfg.generator, 5000000u + i, true, rng));
  }
  Rng rng = Rng::derive(cfg.seed, {tag, 0xffff});
  return labeled_batch(cfg.generator, scenes, rng);
}

// ---------------------------------------------------------------------------

void criterion_1_geometry() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst_bev = 0, worst_3d = 0;
  for (int i = 0; i < 200; ++i) {
    const auto [a, b] = oracle::random_box_pair(rng);
    Rng mc(9000 + i);
    worst_bev = std::max(worst_bev, std::abs(bev_iou(a, b) - oracle::mc_bev_iou(a, b, 1000000, mc)));
    worst_3d = std::max(worst_3d, std::abs(iou_3d(a, b) - oracle::mc_iou_3d(a, b, 1000000, mc)));
  }
  const double dt = seconds_since(t0);
  report(1, worst_bev <= 3e-3 && worst_3d <= 3e-3 && dt < 60.0,
         "geometry vs Monte Carlo: max |bev err| " + fmt(worst_bev) + ", max |3d err| " +
             fmt(worst_3d) + ", " + fmt(dt) + " s");
}

bool mlp_margins_ok(const Mlp& m, const std::vector<double>& x, double margin) {
  Mlp::Cache cache;
  m.forward(x, &cache);
  for (std::size_t layer = 0; layer + 1 < cache.pre.size(); ++layer) {
    for (double z : cache.pre[layer]) {
      if (std::abs(z) < margin) return false;
    }
  }
  return true;
}

std::vector<LabeledCandidate> random_psm_batch(Rng& rng, int n) {
  std::vector<LabeledCandidate> batch;
  for (int i = 0; i < n; ++i) {
    LabeledCandidate c;
    c.scores.obj_logit = rng.uniform(-4.0, 4.0);
    c.scores.aug_obj_logit = rng.uniform(-6.0, 4.0);
    c.scores.cls_logits = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    c.scores.iou_consistency = rng.uniform();
    c.context.class_id = static_cast<int>(rng.below(3));
    c.context.distance = rng.uniform(3.0, 70.0);
    c.gt_iou = rng.uniform();
    batch.push_back(std::move(c));
  }
  return batch;
}

struct PsmProbe {
  PsmModel model;
  std::vector<LabeledCandidate> batch;
};

PsmProbe sample_psm_probe(Rng& rng) {
  for (int tries = 0; tries < 1000; ++tries) {
    Rng init(rng.next());
    PsmModel m = PsmModel::init(3, init, 0.8, 75.0, {8, 8}, 4, 4);
    auto batch = random_psm_batch(rng, 5);
    bool ok = true;
    for (const auto& item : batch) {
      if (!mlp_margins_ok(m.pqe, pqe_input(m, item.scores), 1e-3)) ok = false;
      if (!mlp_margins_ok(m.cte, cte_input(m, item.context), 1e-3)) ok = false;
      if (std::abs(pqe_score(m, item.scores) - cte_threshold(m, item.context)) < 0.02) ok = false;
    }
    if (ok) return {std::move(m), std::move(batch)};
  }
  return {};
}

void criterion_2_gradients() {
  const auto t0 = Clock::now();
  double worst_pqe = 0, worst_cte = 0, worst_student = 1e9;
  bool sampled_ok = true;
  for (int probe = 0; probe < 100; ++probe) {
    Rng rng(3000 + probe);
    PsmProbe p = sample_psm_probe(rng);
    if (p.batch.empty()) {
      sampled_ok = false;
      break;
    }
    {
      PsmGrads g = PsmGrads::zeros(p.model);
      l_pqe(p.model, p.batch, g);
      std::vector<double> flat = p.model.flat_params();
      const auto eval = [&] {
        PsmModel tmp = p.model;
        tmp.set_flat_params(flat);
        PsmGrads scratch = PsmGrads::zeros(tmp);
        return l_pqe(tmp, p.batch, scratch);
      };
      worst_pqe = std::max(worst_pqe, oracle::fd_max_rel_error(flat, eval, g.flat()));
    }
    {
      // the stopped gradient makes l_cte flat in the PQE parameters, so the
      // check runs over the CTE MLP and the class embedding only
      PsmGrads g = PsmGrads::zeros(p.model);
      l_cte(p.model, p.batch, g);
      std::vector<double> tail(p.model.cte.params);
      tail.insert(tail.end(), p.model.class_embed.entries.begin(),
                  p.model.class_embed.entries.end());
      const auto eval = [&] {
        PsmModel tmp = p.model;
        std::copy_n(tail.begin(), tmp.cte.params.size(), tmp.cte.params.begin());
        std::copy_n(tail.begin() + tmp.cte.params.size(), tmp.class_embed.entries.size(),
                    tmp.class_embed.entries.begin());
        PsmGrads scratch = PsmGrads::zeros(tmp);
        return l_cte(tmp, p.batch, scratch);
      };
      std::vector<double> analytic(g.cte);
      analytic.insert(analytic.end(), g.class_embed.begin(), g.class_embed.end());
      worst_cte = std::max(worst_cte, oracle::fd_max_rel_error(tail, eval, analytic));
    }
  }
  // proxy-student loss
  worst_student = 0;
  for (int probe = 0; probe < 100 && sampled_ok; ++probe) {
    Rng rng(4000 + probe);
    ProxyStudent s;
    std::vector<StudentInstance> batch;
    bool ok = false;
    for (int tries = 0; tries < 1000 && !ok; ++tries) {
      s = ProxyStudent::init(3, rng, {16});
      batch.clear();
      for (int i = 0; i < 4; ++i) {
        Box7 cand = oracle::random_box(rng, 30.0);
        Box7 label = cand;
        label.cx += rng.uniform(-1.0, 1.0);
        label.cy += rng.uniform(-1.0, 1.0);
        label.yaw += rng.uniform(-0.3, 0.3);
        batch.push_back(make_student_instance(cand, label, i % 3, rng.uniform(0.2, 1.0), 75.0,
                                              rng.uniform(), rng.uniform(), rng.uniform()));
      }
      ok = true;
      for (const auto& inst : batch) {
        Mlp::Cache cache;
        const auto out = s.refine.forward(inst.input, &cache);
        for (std::size_t layer = 0; layer + 1 < cache.pre.size(); ++layer) {
          for (double z : cache.pre[layer]) {
            if (std::abs(z) < 1e-3) ok = false;
          }
        }
        for (int i = 0; i < 7; ++i) {
          if (std::abs(std::abs(out[i] - inst.target[i]) - 1.0) < 0.02) ok = false;
        }
      }
    }
    if (!ok) {
      sampled_ok = false;
      break;
    }
    std::vector<double> analytic(s.refine.params.size(), 0.0);
    student_loss(s, batch, analytic);
    const auto eval = [&] {
      std::vector<double> scratch(s.refine.params.size(), 0.0);
      return student_loss(s, batch, scratch);
    };
    worst_student = std::max(worst_student, oracle::fd_max_rel_error(s.refine.params, eval, analytic));
  }
  const double dt = seconds_since(t0);
  report(2,
         sampled_ok && worst_pqe < 1e-4 && worst_cte < 1e-4 && worst_student < 1e-4 && dt < 30.0,
         "finite differences: pqe " + fmt(worst_pqe) + ", cte " + fmt(worst_cte) + ", student " +
             fmt(worst_student) + ", " + fmt(dt) + " s");
}

void criterion_3_threshold_semantics() {
  Rng rng(5000);
  long failures = 0;
  for (int i = 0; i < 100000; ++i) {
    const double tau = rng.uniform();
    const double s = rng.uniform();
    const double gt = rng.uniform();
    const double tau_iou = rng.uniform(0.05, 0.95);
    const bool agree = (s > tau) == (gt >= tau_iou);
    const bool zero = threshold_error(tau, s, gt, tau_iou) == 0.0;
    if (agree != zero) ++failures;
  }
  report(3, failures == 0,
         "threshold-error zero iff selection agrees with the GT-IoU oracle: " +
             std::to_string(failures) + " failures in 100000 tuples");
}

void criterion_4_stop_gradient() {
  bool pass = true;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(6000 + trial);
    PsmModel m = PsmModel::init(3, rng, 0.8, 75.0, {8, 8}, 4, 4);
    auto batch = random_psm_batch(rng, 10);
    PsmGrads g = PsmGrads::zeros(m);
    l_cte(m, batch, g);
    for (double v : g.pqe) {
      if (v != 0.0) pass = false;
    }
  }
  // student losses cannot move PSM parameters and vice versa
  Rng rng(6100);
  PsmModel psm = PsmModel::init(3, rng);
  ProxyStudent student = ProxyStudent::init(3, rng);
  const auto psm_before = psm.flat_params();
  const auto student_before = student.refine.params;
  std::vector<StudentInstance> sb;
  sb.push_back(make_student_instance(Box7{5, 5, 0, 4, 2, 1.5, 0.2}, Box7{5.3, 4.8, 0, 4.1, 2, 1.5, 0.3},
                                     1, 0.7, 75.0));
  std::vector<double> sg(student.refine.params.size(), 0.0);
  AdamState sopt = AdamState::init(sg.size(), 1e-2);
  student_loss(student, sb, sg);
  unlabeled_loss(student, sb, sg);
  adam_step(student.refine.params, sg, sopt);
  if (psm.flat_params() != psm_before) pass = false;
  auto pb = random_psm_batch(rng, 8);
  AdamState popt = AdamState::init(psm.param_count(), 1e-2);
  psm_train_step(psm, pb, popt);
  if (student.refine.params == student_before) {
    // student moved above; it must not move again from the PSM step
  }
  const auto student_after = student.refine.params;
  psm_train_step(psm, pb, popt);
  if (student.refine.params != student_after) pass = false;
  report(4, pass, "stop-gradient: L_CTE leaves PQE untouched on 50 batches; L_l/L_u leave the PSM untouched");
}

void criterion_5_ema() {
  Rng rng(7000);
  const int n = 64;
  std::vector<double> student(n), teacher0(n);
  for (int i = 0; i < n; ++i) {
    student[i] = rng.uniform(-3.0, 3.0);
    teacher0[i] = rng.uniform(-3.0, 3.0);
  }
  double norm0 = 0;
  for (int i = 0; i < n; ++i) norm0 += (teacher0[i] - student[i]) * (teacher0[i] - student[i]);
  norm0 = std::sqrt(norm0);
  const double rho = 0.999;
  bool pass = true;
  double worst = 0;
  for (int k : {1, 10, 1000}) {
    EmaState st = EmaState::init(teacher0, rho);
    for (int step = 0; step < k; ++step) ema_update(st, student);
    double norm = 0;
    for (int i = 0; i < n; ++i) norm += (st.teacher[i] - student[i]) * (st.teacher[i] - student[i]);
    norm = std::sqrt(norm);
    const double expected = std::pow(rho, k) * norm0;
    const double rel = std::abs(norm - expected) / expected;
    worst = std::max(worst, rel);
    if (rel > 1e-12) pass = false;
  }
  report(5, pass, "EMA contraction ||theta_t - theta_s|| = rho^k * initial, worst rel err " + fmt(worst));
}

struct SelectionStats {
  double f1_psm = 0;
  double f1_grid = 0;
};

double binary_f1(long tp, long fp, long fn) {
  const double p = tp + fp == 0 ? 0.0 : double(tp) / (tp + fp);
  const double r = tp + fn == 0 ? 0.0 : double(tp) / (tp + fn);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

SelectionStats selection_vs_oracle(const PsmModel& model, const std::vector<LabeledCandidate>& cands) {
  SelectionStats st;
  std::vector<double> q(cands.size());
  std::vector<bool> good(cands.size());
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    q[i] = pqe_score(model, cands[i].scores);
    good[i] = cands[i].gt_iou >= model.tau_iou;
    const bool sel = q[i] > cte_threshold(model, cands[i].context);
    tp += sel && good[i];
    fp += sel && !good[i];
    fn += !sel && good[i];
  }
  st.f1_psm = binary_f1(tp, fp, fn);
  for (int g = 0; g <= 100; ++g) {
    const double thr = g * 0.01;
    long gtp = 0, gfp = 0, gfn = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const bool sel = q[i] > thr;
      gtp += sel && good[i];
      gfp += sel && !good[i];
      gfn += !sel && good[i];
    }
    st.f1_grid = std::max(st.f1_grid, binary_f1(gtp, gfp, gfn));
  }
  return st;
}

double pearson_or_zero(const std::vector<double>& a, const std::vector<double>& b) {
  return correlation(a, b, CorrelationKind::Pearson).value_or(0.0);
}

void criteria_6_7_11(double* ped_corr_out) {
  const auto t0 = Clock::now();
  RunConfig cfg;  // defaults: seed 42, burn-in 60 epochs batch 16
  const auto labeled = pipeline_labeled_scenes(cfg);
  const BurninResult burnin = burn_in(cfg, labeled);
  const double burnin_dt = seconds_since(t0);

  const auto held = held_out_candidates(cfg, 500, 0x70);
  std::vector<double> giou, q, obj, maxcls, vcons;
  std::vector<double> ped_q, ped_giou;
  for (const auto& c : held) {
    giou.push_back(c.gt_iou);
    q.push_back(pqe_score(burnin.model, c.scores));
    obj.push_back(sigmoid(c.scores.obj_logit));
    const auto probs = softmax(c.scores.cls_logits);
    maxcls.push_back(*std::max_element(probs.begin(), probs.end()));
    vcons.push_back(c.scores.iou_consistency);
    if (c.context.class_id == 1) {
      ped_q.push_back(q.back());
      ped_giou.push_back(c.gt_iou);
    }
  }
  const double r_q = pearson_or_zero(q, giou);
  const double r_obj = pearson_or_zero(obj, giou);
  const double r_cls = pearson_or_zero(maxcls, giou);
  const double r_v = pearson_or_zero(vcons, giou);
  const double margin = r_q - std::max({r_obj, r_cls, r_v});
  report(6, margin >= 0.03 && burnin_dt < 600.0,
         "fused-score correlation r(q)=" + fmt(r_q) + " vs obj " + fmt(r_obj) + ", max-cls " +
             fmt(r_cls) + ", v " + fmt(r_v) + " (margin " + fmt(margin) + "), burn-in " +
             fmt(burnin_dt) + " s");
  *ped_corr_out = pearson_or_zero(ped_q, ped_giou);

  // 7a: i.i.d. contexts
  const SelectionStats iid = selection_vs_oracle(burnin.model, held);
  // 7b: context-shifted benchmark with strongly class/distance-skewed score
  // quality; the PQE never sees distance, so a single global threshold on it
  // cannot track the shift
  RunConfig shifted = cfg;
  shifted.generator.classes[0].dist_penalty = 0.2;
  shifted.generator.classes[1].dist_penalty = 3.6;
  shifted.generator.classes[2].dist_penalty = 2.4;
  shifted.generator.classes[0].calib_noise = 0.5;
  shifted.generator.classes[1].calib_noise = 1.6;
  const auto shifted_labeled = pipeline_labeled_scenes(shifted);
  const BurninResult shifted_burnin = burn_in(shifted, shifted_labeled);
  const auto shifted_held = held_out_candidates(shifted, 500, 0x71);
  const SelectionStats sh = selection_vs_oracle(shifted_burnin.model, shifted_held);
  report(7,
         iid.f1_psm >= iid.f1_grid - 0.01 && sh.f1_psm > sh.f1_grid,
         "selection vs best global-threshold oracle: iid F1 " + fmt(iid.f1_psm) + " vs " +
             fmt(iid.f1_grid) + "; shifted F1 " + fmt(sh.f1_psm) + " vs " + fmt(sh.f1_grid));

  // 11: pedestrian overconfidence rate in the raw teacher stream
  Rng rng(8000);
  long high_conf = 0, errors = 0;
  for (int i = 0; i < 20000; ++i) {
    const Scene s = sample_scene(cfg.generator, 7000000u + i, false, rng);
    const auto cands = teacher_predict(cfg.generator, s, rng);
    for (const auto& c : cands) {
      if (argmax(c.cls_logits) != 1 || sigmoid(c.obj_logit) <= 0.8) continue;
      ++high_conf;
      if (max_gt_iou(c.box, s, cfg.generator.iou_mode) < 0.5) ++errors;
    }
  }
  const double rate = high_conf == 0 ? 0.0 : double(errors) / high_conf;
  report(11, std::abs(rate - 0.57) <= 0.05,
         "high-confidence Pedestrian error rate " + fmt(rate) + " (target 0.57 +/- 0.05, n=" +
             std::to_string(high_conf) + "); Pedestrian r(q) " + fmt(*ped_corr_out) +
             " (reported, not gated)");
}

void criterion_8_threshold_curves(const fs::path& run_dir) {
  // the report stage of the pipeline run emitted thresholds.csv
  std::map<std::string, std::pair<double, double>> range;  // class -> (min, max)
  std::ifstream in(run_dir / "thresholds.csv");
  bool ok = static_cast<bool>(in);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string cls, dist, thr;
    std::getline(row, cls, ',');
    std::getline(row, dist, ',');
    std::getline(row, thr, ',');
    const double t = std::stod(thr);
    auto it = range.find(cls);
    if (it == range.end()) {
      range.emplace(cls, std::make_pair(t, t));
    } else {
      it->second.first = std::min(it->second.first, t);
      it->second.second = std::max(it->second.second, t);
    }
  }
  int nonconstant = 0;
  std::string detail;
  for (const auto& [cls, mm] : range) {
    const double spread = mm.second - mm.first;
    if (spread >= 0.02) ++nonconstant;
    detail += cls + " spread " + fmt(spread) + "; ";
  }
  report(8, ok && range.size() == 3 && nonconstant >= 2,
         "CTE threshold distance-dependence from report output: " + detail + std::to_string(nonconstant) +
             "/3 classes non-constant");
}

void criterion_9_soft_supervision() {
  // noise-amplified benchmark: extra false positives, more localization
  // noise, systematic undersizing at range, a permissive selection
  // threshold so imperfect pseudo-labels actually reach the student, and a
  // teacher EMA horizon matched to the desk-scale step budget
  RunConfig cfg;
  cfg.seed = 42;
  cfg.generator.fp_rate *= 4.0;
  cfg.generator.loc_noise_base *= 1.5;
  cfg.generator.size_bias = 0.9;
  cfg.psm.tau_iou = 0.5;
  cfg.ssl.rho = 0.98;
  cfg.dataset.labeled_scenes = 100;
  cfg.ssl.epochs = 12;
  cfg.ssl.unlabeled_scenes_per_epoch = 300;
  cfg.ssl.val_scenes = 40;

  std::vector<Scene> labeled, unlabeled;
  for (int id = 0; id < cfg.dataset.labeled_scenes; ++id) {
    Rng rng = Rng::derive(cfg.seed, {0x40, static_cast<std::uint64_t>(id)});
    labeled.push_back(sample_scene(cfg.generator, id, true, rng));
  }
  for (int id = 0; id < 1200; ++id) {
    Rng rng = Rng::derive(cfg.seed, {0x41, static_cast<std::uint64_t>(id)});
    unlabeled.push_back(sample_scene(cfg.generator, 100000u + id, false, rng));
  }
  const auto val = make_validation_scenes(cfg);
  const BurninResult burnin = burn_in(cfg, labeled);
  // fixed probe so both arms are measured on identical instances
  const auto probe = validation_instances(cfg, val, cfg.generator.learning_state);

  double final_err[2] = {0, 0};
  for (int mode = 0; mode < 2; ++mode) {
    RunConfig run_cfg = cfg;
    run_cfg.ssl.reweighting = mode == 0;
    SslState st = ssl_init(run_cfg, burnin);
    for (int ep = 0; ep < run_cfg.ssl.epochs; ++ep) {
      ssl_epoch(run_cfg, st, labeled, unlabeled, val);
    }
    ProxyStudent teacher = st.student;
    teacher.refine.params = st.ema.teacher;
    final_err[mode] = refinement_error(teacher, probe);
  }

  // exact zero-contribution of w = 0 instances
  Rng rng(9100);
  ProxyStudent s = ProxyStudent::init(3, rng);
  auto inst = make_student_instance(Box7{5, 5, 0, 4, 2, 1.5, 0.2}, Box7{6, 4, 0.2, 4.2, 1.9, 1.4, 0.5},
                                    2, 0.0, 75.0);
  std::vector<double> grads(s.refine.params.size(), 0.0);
  const double zl = student_loss(s, {inst}, grads);
  bool zero_ok = zl == 0.0;
  for (double g : grads) {
    if (g != 0.0) zero_ok = false;
  }

  report(9, final_err[0] < final_err[1] && zero_ok,
         "re-weighting ON refine error " + fmt(final_err[0]) + " < OFF " + fmt(final_err[1]) +
             "; w=0 contributes exactly zero loss and gradient: " + (zero_ok ? "yes" : "no"));
}

bool criterion_10_pipeline(fs::path* run_a_out) {
  const auto t0 = Clock::now();
  const fs::path base = fs::temp_directory_path() / "psel_acceptance";
  fs::remove_all(base);
  fs::create_directories(base);

  const auto make_config = [&](const fs::path& run_dir, int ssl_epochs) {
    RunConfig cfg;  // defaults throughout
    cfg.out_dir = run_dir.string();
    cfg.ssl.epochs = ssl_epochs;
    const fs::path p = base / (run_dir.filename().string() + "_cfg" +
                               std::to_string(ssl_epochs) + ".json");
    write_json_file(p, to_json(cfg));
    return p;
  };

  const fs::path run_a = base / "a", run_b = base / "b", run_c = base / "c";
  const fs::path cfg_a = make_config(run_a, 10);
  const fs::path cfg_b = make_config(run_b, 10);
  const fs::path cfg_c5 = make_config(run_c, 5);
  const fs::path cfg_c10 = make_config(run_c, 10);

  bool ok = true;
  for (const auto& [cfg, stage] : std::vector<std::pair<fs::path, std::string>>{
           {cfg_a, "gen"}, {cfg_a, "burnin"}, {cfg_a, "ssl"}, {cfg_a, "eval"}, {cfg_a, "report"},
           {cfg_b, "gen"}, {cfg_b, "burnin"}, {cfg_b, "ssl"},
           {cfg_c5, "gen"}, {cfg_c5, "burnin"}, {cfg_c5, "ssl"}, {cfg_c10, "ssl"}}) {
    if (run_cli(stage + " --config '" + cfg.string() + "'") != 0) {
      std::cout << "  pipeline stage failed: " << stage << " " << cfg << std::endl;
      ok = false;
      break;
    }
  }
  const double dt = seconds_since(t0);
  bool identical = false, resumed = false;
  if (ok) {
    identical = slurp(run_a / "metrics.csv") == slurp(run_b / "metrics.csv");
    resumed = slurp(run_a / "metrics.csv") == slurp(run_c / "metrics.csv") &&
              slurp(run_a / "checkpoints" / "ssl_state.json") ==
                  slurp(run_c / "checkpoints" / "ssl_state.json");
  }
  report(10, ok && identical && resumed && dt < 1200.0,
         std::string("pipeline determinism: repeat byte-identical: ") + (identical ? "yes" : "no") +
             ", resume matches uninterrupted: " + (resumed ? "yes" : "no") + ", " + fmt(dt) + " s");
  *run_a_out = run_a;
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2 || !fs::exists(argv[argc - 1])) {
    std::cerr << "usage: acceptance <path-to-psel-binary>" << std::endl;
    return 2;
  }
  g_cli = argv[argc - 1];
  std::cout << "acceptance suite (binary: " << g_cli << ")" << std::endl;

  criterion_1_geometry();
  criterion_2_gradients();
  criterion_3_threshold_semantics();
  criterion_4_stop_gradient();
  criterion_5_ema();
  double ped_corr = 0;
  criteria_6_7_11(&ped_corr);
  criterion_9_soft_supervision();
  fs::path run_a;
  const bool pipeline_ok = criterion_10_pipeline(&run_a);
  if (pipeline_ok) {
    criterion_8_threshold_curves(run_a);
  } else {
    report(8, false, "skipped: pipeline run unavailable");
  }

  std::cout << (g_failures == 0 ? "ALL CRITERIA PASSED" : std::to_string(g_failures) + " CRITERIA FAILED")
            << std::endl;
  return g_failures == 0 ? 0 : 1;
}
