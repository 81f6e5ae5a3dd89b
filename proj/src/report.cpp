/*
 * Copyright 2026 The mlim Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "mlim/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "mlim/error.hpp"

namespace mlim {

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string curve_csv(const ProbeCurve& curve) {
  std::ostringstream os;
  os << "mask_prob,mean,std,n\n";
  for (const auto& p : curve.points) {
    os << format_number(p.mask_prob) << ',' << format_number(p.mean) << ',' << format_number(p.std) << ',' << p.n
       << '\n';
  }
  return os.str();
}

namespace {

// Quotes a CSV field when it holds a separator, quote or newline.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,seed,pr_auc,init_hash,data_hash\n";
  for (const auto& r : rows) {
    os << csv_field(r.variant) << ',' << (r.seed ? std::to_string(*r.seed) : std::string("median")) << ','
       << format_number(r.pr_auc) << ',';
    if (r.seed) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%016llx,%016llx", static_cast<unsigned long long>(r.init_hash),
                    static_cast<unsigned long long>(r.data_hash));
      os << buf;
    } else {
      os << ',';
    }
    os << '\n';
  }
  return os.str();
}

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace

std::string curves_svg(const std::vector<const ProbeCurve*>& curves, const std::string& title) {
  const double width = 480, height = 320, left = 60, right = 150, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;

  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (const auto* c : curves) {
    for (const auto& p : c->points) {
      ymin = std::min(ymin, p.mean - p.std);
      ymax = std::max(ymax, p.mean + p.std);
    }
  }
  if (!std::isfinite(ymin)) ymin = 0.0, ymax = 1.0;
  ymin = std::max(0.0, ymin);
  if (ymax - ymin < 1e-9) ymax = ymin + 1.0;
  auto sx = [&](double x) { return left + x * pw; };
  auto sy = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << escape_xml(title)
     << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = t / 4.0;
    const double yv = ymin + (ymax - ymin) * t / 4.0;
    os << "<text x=\"" << format_number(sx(xv)) << "\" y=\"" << top + ph + 15 << "\" text-anchor=\"middle\">"
       << format_number(xv) << "</text>\n";
    os << "<text x=\"" << left - 5 << "\" y=\"" << format_number(sy(yv) + 4) << "\" text-anchor=\"end\">"
       << format_number(std::round(yv * 1000) / 1000) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">mask probability</text>\n";
  os << "<text x=\"15\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
     << top + ph / 2 << ")\">loss</text>\n";

  for (size_t k = 0; k < curves.size(); ++k) {
    const auto& c = *curves[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::string pts;
    for (const auto& p : c.points) {
      if (!pts.empty()) pts += ' ';
      pts += format_number(sx(p.mask_prob)) + ',' + format_number(sy(p.mean));
    }
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
    for (const auto& p : c.points) {
      os << "<circle cx=\"" << format_number(sx(p.mask_prob)) << "\" cy=\"" << format_number(sy(p.mean))
         << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = top + 10 + 16.0 * static_cast<double>(k);
    os << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 35 << "\" y=\"" << ly + 4 << "\">" << escape_xml(c.condition) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

nlohmann::json to_json(const ProbeCurve& curve) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : curve.points) {
    points.push_back({{"mask_prob", p.mask_prob}, {"mean", p.mean}, {"std", p.std}, {"n", p.n}});
  }
  return {{"task", curve.task}, {"condition", curve.condition}, {"points", points}};
}

ProbeCurve curve_from_json(const nlohmann::json& j) {
  try {
    ProbeCurve c;
    c.task = j.at("task").get<std::string>();
    c.condition = j.at("condition").get<std::string>();
    for (const auto& p : j.at("points")) {
      c.points.push_back({p.at("mask_prob").get<double>(), p.at("mean").get<double>(), p.at("std").get<double>(),
                          p.at("n").get<size_t>()});
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed probe result: ") + e.what());
  }
}

nlohmann::json to_json(const AblationRow& row) {
  nlohmann::json j = {{"variant", row.variant}, {"pr_auc", row.pr_auc}};
  if (row.seed) {
    j["seed"] = *row.seed;
    j["init_hash"] = row.init_hash;
    j["data_hash"] = row.data_hash;
  } else {
    j["seed"] = nullptr;
  }
  return j;
}

AblationRow ablation_row_from_json(const nlohmann::json& j) {
  try {
    AblationRow r;
    r.variant = j.at("variant").get<std::string>();
    r.pr_auc = j.at("pr_auc").get<double>();
    if (!j.at("seed").is_null()) {
      r.seed = j.at("seed").get<uint64_t>();
      r.init_hash = j.at("init_hash").get<uint64_t>();
      r.data_hash = j.at("data_hash").get<uint64_t>();
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed ablation result: ") + e.what());
  }
}

std::vector<std::filesystem::path> emit_report(const std::vector<ProbeCurve>& curves,
                                               const std::vector<AblationRow>& rows,
                                               const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  std::map<std::string, std::vector<const ProbeCurve*>> by_task;
  for (const auto& c : curves) {
    const std::string stem = "probe_" + c.task + "_" + c.condition;
    write_file(out_dir / (stem + ".csv"), curve_csv(c));
    write_file(out_dir / (stem + ".svg"), curves_svg({&c}, c.task + " loss, " + c.condition));
    written.push_back(out_dir / (stem + ".csv"));
    written.push_back(out_dir / (stem + ".svg"));
    by_task[c.task].push_back(&c);
  }
  for (const auto& [task, list] : by_task) {
    const auto path = out_dir / ("probe_" + task + ".svg");
    write_file(path, curves_svg(list, task + " loss by condition"));
    written.push_back(path);
  }
  if (!rows.empty()) {
    write_file(out_dir / "ablation.csv", ablation_csv(rows));
    written.push_back(out_dir / "ablation.csv");
  }
  return written;
}

}  // namespace mlim
