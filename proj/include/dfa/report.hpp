#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dfa/errors.hpp"
#include "dfa/metrics.hpp"

namespace dfa {

namespace detail {

inline std::string fmt(double v, int prec = 2) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);  // fixed newlines on every platform
  if (!f) throw DataError("report: cannot write '" + path + "'");
  f << content;
}

}  // namespace detail

// Minimal static bar chart; value labels on top, category labels underneath.
inline std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                                 const std::vector<double>& values) {
  if (labels.size() != values.size()) throw DimensionError("svg_bar_chart: label/value mismatch");
  const int width = 720, height = 400, ml = 50, mr = 20, mt = 40, mb = 60;
  const int plot_w = width - ml - mr, plot_h = height - mt - mb;
  double vmax = 1e-12;
  for (double v : values) vmax = std::max(vmax, v);

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
       "\" height=\"" + std::to_string(height) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + std::to_string(width / 2) + "\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">" +
       title + "</text>\n";
  const std::size_t n = values.size();
  if (n) {
    const double slot = static_cast<double>(plot_w) / static_cast<double>(n);
    const double bar_w = slot * 0.7;
    for (std::size_t i = 0; i < n; ++i) {
      const double h = plot_h * (values[i] / vmax);
      const double x = ml + slot * static_cast<double>(i) + (slot - bar_w) / 2.0;
      const double y = mt + (plot_h - h);
      s += "<rect x=\"" + detail::fmt(x, 1) + "\" y=\"" + detail::fmt(y, 1) + "\" width=\"" +
           detail::fmt(bar_w, 1) + "\" height=\"" + detail::fmt(h, 1) + "\" fill=\"#4878a8\"/>\n";
      s += "<text x=\"" + detail::fmt(x + bar_w / 2.0, 1) + "\" y=\"" + detail::fmt(y - 4.0, 1) +
           "\" font-size=\"10\" text-anchor=\"middle\">" + detail::fmt(values[i], 4) + "</text>\n";
      s += "<text x=\"" + detail::fmt(x + bar_w / 2.0, 1) + "\" y=\"" +
           std::to_string(mt + plot_h + 16) + "\" font-size=\"10\" text-anchor=\"middle\">" +
           labels[i] + "</text>\n";
    }
  }
  s += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(mt + plot_h) + "\" x2=\"" +
       std::to_string(width - mr) + "\" y2=\"" + std::to_string(mt + plot_h) +
       "\" stroke=\"black\"/>\n";
  s += "</svg>\n";
  return s;
}

// Renders the metrics file into table and plot files under out_dir; returns
// the list of files written. Accuracies in attack records are percentages.
inline std::vector<std::string> generate_report(const std::string& metrics_path,
                                                const std::string& out_dir) {
  const auto records = read_metrics(metrics_path);
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;

  // --- attack table -------------------------------------------------------
  {
    std::string t = "# Robustness\n\n";
    std::vector<double> accs;
    std::string rows;
    for (const auto& r : records) {
      if (r.kind != "attack") continue;
      const auto& d = r.data;
      const std::string name = d.value("name", std::string("?"));
      const double acc = d.value("accuracy", 0.0);
      rows += "| " + name + " | " + detail::fmt(acc) + " |\n";
      if (name != "clean") accs.push_back(acc);
      if (d.contains("clean_accuracy") && rows.find("| clean |") == std::string::npos)
        rows = "| clean | " + detail::fmt(d["clean_accuracy"].get<double>()) + " |\n" + rows;
    }
    if (rows.empty()) {
      t += "no data\n";
    } else {
      t += "| attack | accuracy (%) |\n|---|---|\n" + rows;
      if (!accs.empty()) {
        double mean = 0.0;
        for (double a : accs) mean += a;
        mean /= static_cast<double>(accs.size());
        double ss = 0.0;
        for (double a : accs) ss += (a - mean) * (a - mean);
        const double sd = std::sqrt(ss / static_cast<double>(accs.size()));
        t += "\nMean +- S.d. over " + std::to_string(accs.size()) + " attacks: " +
             detail::fmt(mean) + " +- " + detail::fmt(sd) + "\n";
      }
    }
    const std::string path = out_dir + "/attacks.md";
    detail::write_text_file(path, t);
    written.push_back(path);
  }

  // --- training curves ----------------------------------------------------
  {
    std::string t = "# Training\n\n";
    std::string rows;
    for (const auto& r : records) {
      if (r.kind != "epoch") continue;
      const auto& d = r.data;
      rows += "| " + std::to_string(d.value("epoch", 0)) + " | " + detail::fmt(d.value("l_a", 0.0), 6) +
              " | " + detail::fmt(d.value("l_c", 0.0), 6) + " | " + detail::fmt(d.value("l_t", 0.0), 6) +
              " | " + detail::fmt(d.value("clean_accuracy", 0.0)) + " |\n";
    }
    t += rows.empty() ? "no data\n"
                      : "| epoch | l_a | l_c | l_t | clean accuracy (%) |\n|---|---|---|---|---|\n" + rows;
    const std::string path = out_dir + "/training.md";
    detail::write_text_file(path, t);
    written.push_back(path);
  }

  // --- ood table ----------------------------------------------------------
  {
    std::string t = "# OOD detection\n\n";
    std::string rows;
    for (const auto& r : records) {
      if (r.kind != "ood") continue;
      const auto& d = r.data;
      rows += "| " + std::to_string(r.ts) + " | " + detail::fmt(d.value("best_f1", 0.0), 4) + " | " +
              detail::fmt(d.value("best_threshold", 0.0), 6) + " | " +
              std::to_string(d.value("n_id", 0)) + " | " + std::to_string(d.value("n_ood", 0)) + " |\n";
    }
    t += rows.empty() ? "no data\n"
                      : "| record | best F1 | threshold | #id | #ood |\n|---|---|---|---|---|\n" + rows;
    const std::string path = out_dir + "/ood.md";
    detail::write_text_file(path, t);
    written.push_back(path);
  }

  // --- analysis table + compactness charts ---------------------------------
  {
    std::string t = "# Embedding analysis\n\n";
    bool any = false;
    for (const auto& r : records) {
      if (r.kind != "analysis") continue;
      any = true;
      const auto& d = r.data;
      t += "## record " + std::to_string(r.ts) + "\n\n";
      if (d.contains("per_class_std")) {
        std::vector<std::string> labels;
        std::vector<double> values;
        std::size_t k = 0;
        for (const auto& v : d["per_class_std"]) {
          labels.push_back("c" + std::to_string(k++));
          values.push_back(v.get<double>());
        }
        labels.push_back("total");
        values.push_back(d.value("total_std", 0.0));
        const std::string svg_name = "compactness_" + std::to_string(r.ts) + ".svg";
        detail::write_text_file(out_dir + "/" + svg_name,
                                svg_bar_chart("embedding compactness (std)", labels, values));
        written.push_back(out_dir + "/" + svg_name);
        t += "compactness chart: " + svg_name + "\n\n";
      }
      if (d.contains("lipschitz_mean"))
        t += "mixing residual: mean " + detail::fmt(d["lipschitz_mean"].get<double>(), 6) + ", max " +
             detail::fmt(d.value("lipschitz_max", 0.0), 6) + "\n\n";
    }
    if (!any) t += "no data\n";
    const std::string path = out_dir + "/analysis.md";
    detail::write_text_file(path, t);
    written.push_back(path);
  }

  return written;
}

}  // namespace dfa
