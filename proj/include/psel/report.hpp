#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "psel/run.hpp"

namespace psel {

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

// Minimal SVG chart with the backing CSV embedded verbatim in <metadata>.
inline void write_svg_chart(const fs::path& path, const std::string& title,
                            const std::vector<Series>& series, const std::string& embedded_csv,
                            bool scatter = false) {
  const double width = 640, height = 420, margin = 50;
  double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      xlo = std::min(xlo, x);
      xhi = std::max(xhi, x);
      ylo = std::min(ylo, y);
      yhi = std::max(yhi, y);
    }
  }
  if (xlo > xhi) {
    xlo = 0;
    xhi = 1;
    ylo = 0;
    yhi = 1;
  }
  if (xhi == xlo) xhi = xlo + 1;
  if (yhi == ylo) yhi = ylo + 1;
  const auto px = [&](double x) { return margin + (x - xlo) / (xhi - xlo) * (width - 2 * margin); };
  const auto py = [&](double y) { return height - margin - (y - ylo) / (yhi - ylo) * (height - 2 * margin); };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n";
  out << "<metadata id=\"data\">" << xml_escape(embedded_csv) << "</metadata>\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
      << xml_escape(title) << "</text>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
      << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
      << height - margin << "\" stroke=\"black\"/>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = kColors[si % 6];
    if (scatter) {
      for (const auto& [x, y] : series[si].points) {
        out << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"2\" fill=\"" << color
            << "\" fill-opacity=\"0.5\"/>\n";
      }
    } else {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
      for (const auto& [x, y] : series[si].points) out << px(x) << ',' << py(y) << ' ';
      out << "\"/>\n";
    }
    out << "<text x=\"" << width - margin + 4 << "\" y=\"" << margin + 16.0 * si
        << "\" font-size=\"11\" fill=\"" << color << "\">" << xml_escape(series[si].label)
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace detail

struct ReportResult {
  std::vector<std::string> written;
  std::vector<std::string> missing;
};

// Emits threshold-vs-distance curves per class, PR-over-epoch series, and
// score-vs-GT-IoU scatter data with a correlation summary. Inputs that are
// absent are listed as gaps rather than aborting, unless nothing at all is
// present.
inline ReportResult run_report(const fs::path& run_dir) {
  ReportResult res;
  if (!fs::exists(config_path(run_dir))) {
    throw std::runtime_error("report: missing inputs in " + run_dir.string() +
                             ": config.json (run `gen` first)");
  }
  const RunConfig cfg = run_config_from_json(read_json_file(config_path(run_dir)));
  const auto names = class_names(cfg.generator);

  // pick the newest PSM: ssl state if present, else burn-in checkpoint
  PsmModel model;
  bool have_model = false;
  std::vector<EpochMetrics> history;
  if (fs::exists(ssl_state_path(run_dir))) {
    const SslState st = ssl_state_from_json(read_json_file(ssl_state_path(run_dir)));
    model = st.psm;
    history = st.history;
    have_model = true;
  } else if (fs::exists(burnin_ckpt_path(run_dir))) {
    model = psm_from_json(read_json_file(burnin_ckpt_path(run_dir)).at("model"));
    have_model = true;
  }

  if (have_model) {
    // CTE threshold curves by class and distance
    std::ostringstream csv;
    csv << "class,distance,threshold\n";
    std::vector<detail::Series> series;
    std::vector<double> grid;
    for (double d = 0.0; d <= cfg.generator.max_range; d += 1.0) grid.push_back(d);
    for (int c = 0; c < model.num_classes; ++c) {
      detail::Series s;
      s.label = names[c];
      for (const auto& [d, t] : threshold_curve(model, c, grid)) {
        csv << names[c] << ',' << fmt_float(d) << ',' << fmt_float(t) << '\n';
        s.points.emplace_back(d, t);
      }
      series.push_back(std::move(s));
    }
    std::ofstream(run_dir / "thresholds.csv") << csv.str();
    detail::write_svg_chart(run_dir / "thresholds.svg", "CTE threshold by class and distance", series,
                            csv.str());
    res.written.push_back("thresholds.csv");
    res.written.push_back("thresholds.svg");

    // score scatter + correlation summary on fresh labeled candidates
    GeneratorConfig gen = cfg.generator;
    std::vector<Scene> scenes;
    for (int i = 0; i < 100; ++i) {
      Rng rng = Rng::derive(cfg.seed, {0x60, static_cast<std::uint64_t>(i)});
      scenes.push_back(sample_scene(gen, 3000000u + i, true, rng));
    }
    Rng rng = Rng::derive(cfg.seed, {0x61});
    const auto cands = labeled_batch(gen, scenes, rng);
    std::ostringstream scatter;
    scatter << "gt_iou,objectness,max_cls_prob,iou_consistency,pqe\n";
    std::vector<double> giou, obj, maxcls, vcons, pqe;
    for (const auto& c : cands) {
      const double o = sigmoid(c.scores.obj_logit);
      const auto probs = softmax(c.scores.cls_logits);
      const double mc = *std::max_element(probs.begin(), probs.end());
      const double q = pqe_score(model, c.scores);
      scatter << fmt_float(c.gt_iou) << ',' << fmt_float(o) << ',' << fmt_float(mc) << ','
              << fmt_float(c.scores.iou_consistency) << ',' << fmt_float(q) << '\n';
      giou.push_back(c.gt_iou);
      obj.push_back(o);
      maxcls.push_back(mc);
      vcons.push_back(c.scores.iou_consistency);
      pqe.push_back(q);
    }
    std::ofstream(run_dir / "scatter.csv") << scatter.str();
    std::vector<detail::Series> panels;
    const std::vector<std::pair<std::string, const std::vector<double>*>> scores = {
        {"objectness", &obj}, {"max_cls_prob", &maxcls}, {"iou_consistency", &vcons}, {"pqe", &pqe}};
    std::vector<std::pair<std::string, double>> corrs;
    for (const auto& [label, values] : scores) {
      const auto r = correlation(*values, giou, CorrelationKind::Pearson);
      corrs.emplace_back(label, r.value_or(0.0));
      detail::Series s;
      s.label = label;
      for (std::size_t i = 0; i < giou.size(); ++i) s.points.emplace_back((*values)[i], giou[i]);
      panels.push_back(std::move(s));
    }
    std::sort(corrs.begin(), corrs.end(),
              [](const auto& a, const auto& b) { return a.second > b.second; });
    std::ostringstream ccsv;
    ccsv << "score,pearson_vs_gt_iou\n";
    for (const auto& [label, r] : corrs) ccsv << label << ',' << fmt_float(r) << '\n';
    std::ofstream(run_dir / "correlations.csv") << ccsv.str();
    detail::write_svg_chart(run_dir / "scatter.svg", "score vs GT-IoU", panels, scatter.str(), true);
    detail::write_svg_chart(run_dir / "correlations.svg", "Pearson correlation with GT-IoU", panels,
                            ccsv.str(), true);
    res.written.push_back("scatter.csv");
    res.written.push_back("scatter.svg");
    res.written.push_back("correlations.csv");
    res.written.push_back("correlations.svg");
  } else {
    res.missing.push_back("checkpoints (run `burnin` or `ssl` first)");
  }

  if (!history.empty()) {
    std::ostringstream csv;
    csv << "epoch,precision,recall,f1\n";
    detail::Series p{"precision", {}}, r{"recall", {}}, f{"f1", {}};
    for (const auto& m : history) {
      csv << m.epoch << ',' << fmt_float(m.pr.overall.precision()) << ','
          << fmt_float(m.pr.overall.recall()) << ',' << fmt_float(m.pr.overall.f1()) << '\n';
      p.points.emplace_back(m.epoch, m.pr.overall.precision());
      r.points.emplace_back(m.epoch, m.pr.overall.recall());
      f.points.emplace_back(m.epoch, m.pr.overall.f1());
    }
    std::ofstream(run_dir / "pr_epochs.csv") << csv.str();
    detail::write_svg_chart(run_dir / "pr_epochs.svg", "pseudo-label precision/recall by epoch",
                            {p, r, f}, csv.str());
    res.written.push_back("pr_epochs.csv");
    res.written.push_back("pr_epochs.svg");
  } else {
    res.missing.push_back("metrics history (run `ssl` first)");
  }

  json summary;
  summary["written"] = res.written;
  summary["missing"] = res.missing;
  write_json_file(run_dir / "report.json", summary);
  return res;
}

}  // namespace psel
