#include "gazemil/plot.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "gazemil/errors.hpp"

namespace gazemil {

namespace {

constexpr double kWidth = 520, kHeight = 440;
constexpr double kLeft = 60, kRight = 160, kTop = 40, kBottom = 50;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                   "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string line_chart_svg(const ChartSpec& spec, std::span<const LineSeries> series) {
  if (!(spec.x_max > spec.x_min) || !(spec.y_max > spec.y_min)) {
    throw InputError("chart axis ranges must be non-empty");
  }
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - spec.x_min) / (spec.x_max - spec.x_min) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - spec.y_min) / (spec.y_max - spec.y_min) * ph; };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
     << escape(spec.title) << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double fx = spec.x_min + (spec.x_max - spec.x_min) * i / 5.0;
    const double fy = spec.y_min + (spec.y_max - spec.y_min) * i / 5.0;
    os << "<line x1=\"" << px(fx) << "\" y1=\"" << kTop << "\" x2=\"" << px(fx) << "\" y2=\""
       << kTop + ph << "\" stroke=\"#e5e5e5\"/>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << py(fy) << "\" x2=\"" << kLeft + pw << "\" y2=\""
       << py(fy) << "\" stroke=\"#e5e5e5\"/>\n";
    os << "<text x=\"" << px(fx) << "\" y=\"" << kTop + ph + 16
       << "\" text-anchor=\"middle\" font-size=\"11\">" << std::setprecision(2) << fx << "</text>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(fy) + 4
       << "\" text-anchor=\"end\" font-size=\"11\">" << fy << "</text>\n";
  }
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12
     << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(spec.x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" font-size=\"13\" "
     << "transform=\"rotate(-90 16 " << kTop + ph / 2 << ")\">" << escape(spec.y_label)
     << "</text>\n";
  if (spec.diagonal) {
    os << "<line x1=\"" << px(spec.x_min) << "\" y1=\"" << py(spec.y_min) << "\" x2=\""
       << px(spec.x_max) << "\" y2=\"" << py(spec.y_max)
       << "\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& line = series[s];
    if (line.x.size() != line.y.size()) throw InputError("series x/y lengths differ");
    const char* color = kColors[s % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    os << std::setprecision(3);
    for (std::size_t i = 0; i < line.x.size(); ++i) {
      os << (i ? " " : "") << px(line.x[i]) << ',' << py(line.y[i]);
    }
    os << "\"/>\n" << std::setprecision(2);
    const double ly = kTop + 10 + 18 * static_cast<double>(s);
    os << "<line x1=\"" << kLeft + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << kLeft + pw + 32
       << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kLeft + pw + 36 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">"
       << escape(line.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_svg(const std::filesystem::path& path, const std::string& svg) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << svg;
  if (!os) throw IoError("write failed: " + path.string());
}

std::string roc_svg(std::span<const std::string> names, std::span<const RocCurve> curves) {
  if (names.size() != curves.size()) throw InputError("roc_svg: one name per curve required");
  std::vector<LineSeries> series;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    LineSeries s;
    std::ostringstream label;
    label << names[i] << " (AUC " << std::fixed << std::setprecision(4) << curves[i].auc << ")";
    s.name = label.str();
    for (const auto& p : curves[i].points) {
      s.x.push_back(p.fpr);
      s.y.push_back(p.tpr);
    }
    series.push_back(std::move(s));
  }
  ChartSpec spec{"ROC", "False positive rate", "True positive rate", 0, 1, 0, 1, true};
  return line_chart_svg(spec, series);
}

}  // namespace gazemil
