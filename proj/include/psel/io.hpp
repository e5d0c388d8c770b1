#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "psel/config.hpp"
#include "psel/psm.hpp"
#include "psel/simworld.hpp"
#include "psel/ssl.hpp"

namespace psel {

using json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;
inline constexpr int kDatasetVersion = 1;

// Fixed-width float formatting for CSV outputs: 9 significant digits.
inline std::string fmt_float(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

// --------------------------------------------------------------------------
// Geometry / scene records

inline json to_json(const Box7& b) {
  return json::array({b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw});
}

inline Box7 box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 7) throw std::invalid_argument("box record must have 7 entries");
  return Box7{j[0], j[1], j[2], j[3], j[4], j[5], j[6]};
}

inline json to_json(const TeacherCandidate& c) {
  return json{{"box", to_json(c.box)},
              {"obj_logit", c.obj_logit},
              {"cls_logits", c.cls_logits},
              {"aug_box", to_json(c.aug_box)},
              {"aug_obj_logit", c.aug_obj_logit},
              {"v", c.iou_consistency},
              {"source_gt", c.source_gt}};
}

inline TeacherCandidate candidate_from_json(const json& j) {
  TeacherCandidate c;
  c.box = box_from_json(j.at("box"));
  c.obj_logit = j.at("obj_logit");
  c.cls_logits = j.at("cls_logits").get<std::vector<double>>();
  c.aug_box = box_from_json(j.at("aug_box"));
  c.aug_obj_logit = j.at("aug_obj_logit");
  c.iou_consistency = j.at("v");
  c.source_gt = j.at("source_gt");
  return c;
}

struct SceneRecord {
  Scene scene;
  std::vector<TeacherCandidate> candidates;
};

inline json to_json(const SceneRecord& r) {
  json objs = json::array();
  for (const auto& o : r.scene.objects) {
    objs.push_back(json{{"box", to_json(o.box)}, {"class_id", o.class_id}});
  }
  json cands = json::array();
  for (const auto& c : r.candidates) cands.push_back(to_json(c));
  return json{{"id", r.scene.id}, {"labeled", r.scene.labeled}, {"objects", objs}, {"candidates", cands}};
}

inline SceneRecord scene_record_from_json(const json& j) {
  SceneRecord r;
  r.scene.id = j.at("id");
  r.scene.labeled = j.at("labeled");
  for (const auto& o : j.at("objects")) {
    r.scene.objects.push_back(GtObject{box_from_json(o.at("box")), o.at("class_id")});
  }
  for (const auto& c : j.at("candidates")) r.candidates.push_back(candidate_from_json(c));
  return r;
}

inline void write_dataset(const std::filesystem::path& path, const std::vector<SceneRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<SceneRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path.string());
  std::vector<SceneRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(scene_record_from_json(json::parse(line)));
  }
  return out;
}

// --------------------------------------------------------------------------
// Config (full defaulting: missing fields materialize to defaults, and the
// resolved config serializes every field, so resolution is idempotent)

inline json to_json(const ClassModel& c) {
  return json{{"name", c.name},
              {"spawn_rate", c.spawn_rate},
              {"size_mean", c.size_mean},
              {"size_std", c.size_std},
              {"det_base", c.det_base},
              {"calib_gain", c.calib_gain},
              {"calib_bias", c.calib_bias},
              {"calib_noise", c.calib_noise},
              {"dist_penalty", c.dist_penalty},
              {"cls_sep", c.cls_sep},
              {"confusion", c.confusion}};
}

inline ClassModel class_model_from_json(const json& j, const ClassModel& def) {
  ClassModel c = def;
  c.name = j.value("name", def.name);
  c.spawn_rate = j.value("spawn_rate", def.spawn_rate);
  c.size_mean = j.value("size_mean", def.size_mean);
  c.size_std = j.value("size_std", def.size_std);
  c.det_base = j.value("det_base", def.det_base);
  c.calib_gain = j.value("calib_gain", def.calib_gain);
  c.calib_bias = j.value("calib_bias", def.calib_bias);
  c.calib_noise = j.value("calib_noise", def.calib_noise);
  c.dist_penalty = j.value("dist_penalty", def.dist_penalty);
  c.cls_sep = j.value("cls_sep", def.cls_sep);
  c.confusion = j.value("confusion", def.confusion);
  return c;
}

inline std::string iou_mode_name(IouMode m) { return m == IouMode::Bev ? "bev" : "3d"; }

inline IouMode iou_mode_from_name(const std::string& s) {
  if (s == "bev") return IouMode::Bev;
  if (s == "3d") return IouMode::Iou3d;
  throw std::invalid_argument("iou_mode must be \"bev\" or \"3d\": " + s);
}

inline json to_json(const GeneratorConfig& g) {
  json classes = json::array();
  for (const auto& c : g.classes) classes.push_back(to_json(c));
  return json{{"classes", classes},
              {"max_range", g.max_range},
              {"min_range", g.min_range},
              {"loc_noise_base", g.loc_noise_base},
              {"loc_noise_slope", g.loc_noise_slope},
              {"yaw_noise_base", g.yaw_noise_base},
              {"extra_candidate_rate", g.extra_candidate_rate},
              {"fp_rate", g.fp_rate},
              {"ped_overconf_frac", g.ped_overconf_frac},
              {"aug_corr_prob", g.aug_corr_prob},
              {"size_bias", g.size_bias},
              {"learning_state", g.learning_state},
              {"max_objects", g.max_objects},
              {"iou_mode", iou_mode_name(g.iou_mode)}};
}

inline GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig def = default_generator_config();
  GeneratorConfig g = def;
  if (j.contains("classes")) {
    g.classes.clear();
    std::size_t i = 0;
    for (const auto& cj : j.at("classes")) {
      const ClassModel& base = i < def.classes.size() ? def.classes[i] : def.classes.back();
      g.classes.push_back(class_model_from_json(cj, base));
      ++i;
    }
  }
  g.max_range = j.value("max_range", def.max_range);
  g.min_range = j.value("min_range", def.min_range);
  g.loc_noise_base = j.value("loc_noise_base", def.loc_noise_base);
  g.loc_noise_slope = j.value("loc_noise_slope", def.loc_noise_slope);
  g.yaw_noise_base = j.value("yaw_noise_base", def.yaw_noise_base);
  g.extra_candidate_rate = j.value("extra_candidate_rate", def.extra_candidate_rate);
  g.fp_rate = j.value("fp_rate", def.fp_rate);
  g.ped_overconf_frac = j.value("ped_overconf_frac", def.ped_overconf_frac);
  g.aug_corr_prob = j.value("aug_corr_prob", def.aug_corr_prob);
  g.size_bias = j.value("size_bias", def.size_bias);
  g.learning_state = j.value("learning_state", def.learning_state);
  g.max_objects = j.value("max_objects", def.max_objects);
  g.iou_mode = iou_mode_from_name(j.value("iou_mode", iou_mode_name(def.iou_mode)));
  return g;
}

inline json to_json(const RunConfig& c) {
  return json{{"seed", c.seed},
              {"dataset",
               json{{"labeled_scenes", c.dataset.labeled_scenes},
                    {"unlabeled_scenes", c.dataset.unlabeled_scenes}}},
              {"generator", to_json(c.generator)},
              {"psm",
               json{{"hidden", c.psm.hidden},
                    {"class_embed_dim", c.psm.class_embed_dim},
                    {"fourier_dim", c.psm.fourier_dim},
                    {"tau_iou", c.psm.tau_iou},
                    {"lr", c.psm.lr},
                    {"nms_iou_threshold", c.psm.nms_iou_threshold}}},
              {"burnin", json{{"epochs", c.burnin.epochs}, {"batch", c.burnin.batch}}},
              {"ssl",
               json{{"epochs", c.ssl.epochs},
                    {"student_batch", c.ssl.student_batch},
                    {"rho", c.ssl.rho},
                    {"unlabeled_per_labeled", c.ssl.unlabeled_per_labeled},
                    {"unlabeled_scenes_per_epoch", c.ssl.unlabeled_scenes_per_epoch},
                    {"val_scenes", c.ssl.val_scenes},
                    {"student_lr", c.ssl.student_lr},
                    {"softgt_quota_per_class", c.ssl.softgt_quota_per_class},
                    {"reweighting", c.ssl.reweighting},
                    {"psm_online_updates", c.ssl.psm_online_updates}}},
              {"match",
               json{{"class_iou_thresholds", c.match.class_iou_thresholds},
                    {"iou_mode", iou_mode_name(c.match.iou_mode)}}},
              {"out_dir", c.out_dir}};
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig def;
  RunConfig c;
  c.seed = j.value("seed", def.seed);
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    c.dataset.labeled_scenes = d.value("labeled_scenes", def.dataset.labeled_scenes);
    c.dataset.unlabeled_scenes = d.value("unlabeled_scenes", def.dataset.unlabeled_scenes);
  }
  if (j.contains("generator")) c.generator = generator_from_json(j.at("generator"));
  if (j.contains("psm")) {
    const auto& p = j.at("psm");
    c.psm.hidden = p.value("hidden", def.psm.hidden);
    c.psm.class_embed_dim = p.value("class_embed_dim", def.psm.class_embed_dim);
    c.psm.fourier_dim = p.value("fourier_dim", def.psm.fourier_dim);
    c.psm.tau_iou = p.value("tau_iou", def.psm.tau_iou);
    c.psm.lr = p.value("lr", def.psm.lr);
    c.psm.nms_iou_threshold = p.value("nms_iou_threshold", def.psm.nms_iou_threshold);
  }
  if (j.contains("burnin")) {
    const auto& b = j.at("burnin");
    c.burnin.epochs = b.value("epochs", def.burnin.epochs);
    c.burnin.batch = b.value("batch", def.burnin.batch);
  }
  if (j.contains("ssl")) {
    const auto& s = j.at("ssl");
    c.ssl.epochs = s.value("epochs", def.ssl.epochs);
    c.ssl.student_batch = s.value("student_batch", def.ssl.student_batch);
    c.ssl.rho = s.value("rho", def.ssl.rho);
    c.ssl.unlabeled_per_labeled = s.value("unlabeled_per_labeled", def.ssl.unlabeled_per_labeled);
    c.ssl.unlabeled_scenes_per_epoch =
        s.value("unlabeled_scenes_per_epoch", def.ssl.unlabeled_scenes_per_epoch);
    c.ssl.val_scenes = s.value("val_scenes", def.ssl.val_scenes);
    c.ssl.student_lr = s.value("student_lr", def.ssl.student_lr);
    c.ssl.softgt_quota_per_class = s.value("softgt_quota_per_class", def.ssl.softgt_quota_per_class);
    c.ssl.reweighting = s.value("reweighting", def.ssl.reweighting);
    c.ssl.psm_online_updates = s.value("psm_online_updates", def.ssl.psm_online_updates);
  }
  if (j.contains("match")) {
    const auto& m = j.at("match");
    c.match.class_iou_thresholds = m.value("class_iou_thresholds", def.match.class_iou_thresholds);
    c.match.iou_mode = iou_mode_from_name(m.value("iou_mode", iou_mode_name(def.match.iou_mode)));
  }
  c.out_dir = j.value("out_dir", def.out_dir);
  return c;
}

// --------------------------------------------------------------------------
// Model / optimizer / state checkpoints

inline json to_json(const Mlp& m) {
  return json{{"widths", m.widths},
              {"out_act", m.out_act == OutputActivation::Sigmoid ? "sigmoid" : "identity"},
              {"params", m.params}};
}

inline Mlp mlp_from_json(const json& j) {
  Mlp m;
  m.widths = j.at("widths").get<std::vector<int>>();
  m.out_act = j.at("out_act") == "sigmoid" ? OutputActivation::Sigmoid : OutputActivation::Identity;
  m.params = j.at("params").get<std::vector<double>>();
  if (m.params.size() != Mlp::count_params(m.widths)) {
    throw std::invalid_argument("mlp checkpoint: parameter count mismatch");
  }
  return m;
}

inline json to_json(const AdamState& s) {
  return json{{"step", s.step}, {"lr", s.lr},   {"beta1", s.beta1},    {"beta2", s.beta2},
              {"eps", s.eps},   {"m", s.m},     {"v", s.v},            {"skipped", s.skipped}};
}

inline AdamState adam_from_json(const json& j) {
  AdamState s;
  s.step = j.at("step");
  s.lr = j.at("lr");
  s.beta1 = j.at("beta1");
  s.beta2 = j.at("beta2");
  s.eps = j.at("eps");
  s.m = j.at("m").get<std::vector<double>>();
  s.v = j.at("v").get<std::vector<double>>();
  s.skipped = j.at("skipped");
  return s;
}

inline json to_json(const PsmModel& m) {
  return json{{"format_version", kCheckpointVersion},
              {"pqe", to_json(m.pqe)},
              {"cte", to_json(m.cte)},
              {"class_embed",
               json{{"rows", m.class_embed.rows}, {"dim", m.class_embed.dim}, {"entries", m.class_embed.entries}}},
              {"fourier_dim", m.fourier_dim},
              {"num_classes", m.num_classes},
              {"max_range", m.max_range},
              {"tau_iou", m.tau_iou},
              {"iou_mode", iou_mode_name(m.iou_mode)},
              {"trained", m.trained}};
}

inline PsmModel psm_from_json(const json& j) {
  if (j.value("format_version", 0) != kCheckpointVersion) {
    throw std::runtime_error("psm checkpoint: unsupported format version");
  }
  PsmModel m;
  m.pqe = mlp_from_json(j.at("pqe"));
  m.cte = mlp_from_json(j.at("cte"));
  const auto& e = j.at("class_embed");
  m.class_embed.rows = e.at("rows");
  m.class_embed.dim = e.at("dim");
  m.class_embed.entries = e.at("entries").get<std::vector<double>>();
  m.fourier_dim = j.at("fourier_dim");
  m.num_classes = j.at("num_classes");
  m.max_range = j.at("max_range");
  m.tau_iou = j.at("tau_iou");
  m.iou_mode = iou_mode_from_name(j.at("iou_mode"));
  m.trained = j.at("trained");
  return m;
}

inline json to_json(const EpochMetrics& m) {
  json per_class = json::array();
  for (const auto& c : m.pr.per_class) {
    per_class.push_back(json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}});
  }
  return json{{"epoch", m.epoch},
              {"per_class", per_class},
              {"l_pqe", m.l_pqe},
              {"l_cte", m.l_cte},
              {"loss_labeled", m.loss_labeled},
              {"loss_unlabeled", m.loss_unlabeled},
              {"learning_state", m.learning_state},
              {"refine_error", m.refine_error}};
}

inline EpochMetrics metrics_from_json(const json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch");
  for (const auto& c : j.at("per_class")) {
    PrCounts pc;
    pc.tp = c.at("tp");
    pc.fp = c.at("fp");
    pc.fn = c.at("fn");
    m.pr.per_class.push_back(pc);
    m.pr.overall += pc;
  }
  m.l_pqe = j.at("l_pqe");
  m.l_cte = j.at("l_cte");
  m.loss_labeled = j.at("loss_labeled");
  m.loss_unlabeled = j.at("loss_unlabeled");
  m.learning_state = j.at("learning_state");
  m.refine_error = j.at("refine_error");
  return m;
}

inline json to_json(const SslState& st) {
  json entries = json::array();
  for (const auto& e : st.softgt.entries) {
    entries.push_back(json{{"box", to_json(e.box)},
                           {"class_id", e.class_id},
                           {"w", e.weight},
                           {"scene_id", e.scene_id},
                           {"epoch", e.epoch},
                           {"source_box", to_json(e.source_box)},
                           {"has_source", e.has_source}});
  }
  json history = json::array();
  for (const auto& m : st.history) history.push_back(to_json(m));
  return json{{"format_version", kCheckpointVersion},
              {"psm", to_json(st.psm)},
              {"psm_opt", to_json(st.psm_opt)},
              {"student", json{{"refine", to_json(st.student.refine)}, {"num_classes", st.student.num_classes}}},
              {"student_opt", to_json(st.student_opt)},
              {"ema", json{{"teacher", st.ema.teacher}, {"rho", st.ema.rho}}},
              {"softgt", entries},
              {"quality_ema", st.quality_ema},
              {"initial_refine_error", st.initial_refine_error},
              {"epoch", st.epoch},
              {"history", history}};
}

inline SslState ssl_state_from_json(const json& j) {
  if (j.value("format_version", 0) != kCheckpointVersion) {
    throw std::runtime_error("ssl state: unsupported format version");
  }
  SslState st;
  st.psm = psm_from_json(j.at("psm"));
  st.psm_opt = adam_from_json(j.at("psm_opt"));
  st.student.refine = mlp_from_json(j.at("student").at("refine"));
  st.student.num_classes = j.at("student").at("num_classes");
  st.student_opt = adam_from_json(j.at("student_opt"));
  st.ema.teacher = j.at("ema").at("teacher").get<std::vector<double>>();
  st.ema.rho = j.at("ema").at("rho");
  for (const auto& e : j.at("softgt")) {
    st.softgt.entries.push_back(SoftGtEntry{box_from_json(e.at("box")), e.at("class_id"), e.at("w"),
                                            e.at("scene_id"), e.at("epoch"),
                                            box_from_json(e.at("source_box")), e.at("has_source")});
  }
  st.quality_ema = j.at("quality_ema");
  st.initial_refine_error = j.at("initial_refine_error");
  st.epoch = j.at("epoch");
  for (const auto& m : j.at("history")) st.history.push_back(metrics_from_json(m));
  return st;
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  out << j.dump(2) << '\n';
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  return json::parse(in);
}

// metrics.csv: one row per epoch, per-class breakdown inline.
inline std::string metrics_csv_header(const std::vector<std::string>& class_names) {
  std::string h = "epoch,precision,recall,f1,l_pqe,l_cte,loss_labeled,loss_unlabeled,learning_state,refine_error";
  for (const auto& n : class_names) {
    h += "," + n + "_precision," + n + "_recall," + n + "_f1," + n + "_tp," + n + "_fp," + n + "_fn";
  }
  return h;
}

inline std::string metrics_csv_row(const EpochMetrics& m) {
  std::ostringstream os;
  os << m.epoch << ',' << fmt_float(m.pr.overall.precision()) << ',' << fmt_float(m.pr.overall.recall())
     << ',' << fmt_float(m.pr.overall.f1()) << ',' << fmt_float(m.l_pqe) << ',' << fmt_float(m.l_cte)
     << ',' << fmt_float(m.loss_labeled) << ',' << fmt_float(m.loss_unlabeled) << ','
     << fmt_float(m.learning_state) << ',' << fmt_float(m.refine_error);
  for (const auto& c : m.pr.per_class) {
    os << ',' << fmt_float(c.precision()) << ',' << fmt_float(c.recall()) << ',' << fmt_float(c.f1())
       << ',' << c.tp << ',' << c.fp << ',' << c.fn;
  }
  return os.str();
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history,
                              const std::vector<std::string>& class_names) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  out << metrics_csv_header(class_names) << '\n';
  for (const auto& m : history) out << metrics_csv_row(m) << '\n';
}

}  // namespace psel
