#include "iapnet/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "iapnet/error.hpp"

namespace iapnet::plot {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void open_svg(std::ostringstream& out, double w, double h) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\"" << num(h)
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

void text(std::ostringstream& out, double x, double y, const std::string& s, const char* anchor = "start",
          double rotate = 0.0) {
  out << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" text-anchor=\"" << anchor << "\"";
  if (rotate != 0.0) out << " transform=\"rotate(" << num(rotate) << ' ' << num(x) << ' ' << num(y) << ")\"";
  out << '>' << escape(s) << "</text>\n";
}

// Diverging blue-white-red for values in [-1, 1].
std::string diverging(double v) {
  v = std::clamp(v, -1.0, 1.0);
  int r, g, b;
  if (v >= 0) {
    r = 255;
    g = b = static_cast<int>(std::lround(255 * (1 - v)));
  } else {
    b = 255;
    r = g = static_cast<int>(std::lround(255 * (1 + v)));
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace

std::string histogram_panels(std::span<const IapHistogram> panels, const std::string& title) {
  const double pw = 260, ph = 220, margin = 40;
  std::ostringstream out;
  open_svg(out, margin + panels.size() * (pw + margin), ph + 2 * margin + 60);
  text(out, margin, 20, title);
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& h = panels[p];
    const double x0 = margin + p * (pw + margin), y0 = 2 * margin, base = y0 + ph;
    std::size_t peak = 1;
    for (const auto& [label, count] : h.bins) peak = std::max(peak, count);
    text(out, x0 + pw / 2, y0 - 8, h.subset.empty() ? h.iap : h.subset + " (n=" + std::to_string(h.total()) + ")",
         "middle");
    out << "<line x1=\"" << num(x0) << "\" y1=\"" << num(base) << "\" x2=\"" << num(x0 + pw) << "\" y2=\""
        << num(base) << "\" stroke=\"black\"/>\n";
    const double bw = h.bins.empty() ? 0 : pw / h.bins.size();
    for (std::size_t i = 0; i < h.bins.size(); ++i) {
      const auto& [label, count] = h.bins[i];
      const double bh = ph * static_cast<double>(count) / static_cast<double>(peak);
      const double bx = x0 + i * bw;
      out << "<rect x=\"" << num(bx + 1) << "\" y=\"" << num(base - bh) << "\" width=\"" << num(std::max(bw - 2, 1.0))
          << "\" height=\"" << num(bh) << "\" fill=\"#4c72b0\"><title>" << escape(label) << ": " << count
          << "</title></rect>\n";
      text(out, bx + bw / 2, base + 12, label, "end", -45);
    }
  }
  out << "</svg>\n";
  return out.str();
}

std::string correlation_heatmap(const CorrelationMatrix& m, const std::string& title) {
  const double cell = 36, left = 140, top = 50;
  const std::size_t k = m.size();
  std::ostringstream out;
  open_svg(out, left + k * cell + 20, top + k * cell + 130);
  text(out, left, 20, title);
  for (std::size_t i = 0; i < k; ++i) {
    text(out, left - 6, top + i * cell + cell / 2 + 4, m.names[i], "end");
    text(out, left + i * cell + cell / 2, top + k * cell + 10, m.names[i], "end", -45);
    for (std::size_t j = 0; j < k; ++j) {
      const auto& v = m.at(i, j);
      const double x = left + j * cell, y = top + i * cell;
      out << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(cell) << "\" height=\""
          << num(cell) << "\" fill=\"" << (v ? diverging(*v) : std::string("#cccccc")) << "\" stroke=\"white\"/>\n";
      text(out, x + cell / 2, y + cell / 2 + 4, v ? num(*v) : "n/a", "middle");
    }
  }
  out << "</svg>\n";
  return out.str();
}

std::string training_curve(const TrainingCurve& curve) {
  const double w = 520, h = 300, left = 60, top = 30;
  std::ostringstream out;
  open_svg(out, left + w + 30, top + h + 60);
  text(out, left, 18, "training curve (total loss)");
  if (curve.epochs.empty()) {
    out << "</svg>\n";
    return out.str();
  }
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& e : curve.epochs) {
    for (double v : {e.train_loss, e.val_loss}) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  // Log scale when the losses span more than a decade.
  const bool log_scale = lo > 0 && hi / lo > 10;
  auto tf = [&](double v) { return log_scale ? std::log10(v) : v; };
  const double a = tf(lo), b = tf(hi) > tf(lo) ? tf(hi) : tf(lo) + 1;
  const std::size_t n = curve.epochs.size();
  auto px = [&](std::size_t i) { return left + (n == 1 ? w / 2 : w * static_cast<double>(i) / (n - 1)); };
  auto py = [&](double v) { return top + h * (1 - (tf(v) - a) / (b - a)); };
  out << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  auto series = [&](auto get, const char* color, const char* name, double ly) {
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < n; ++i) out << num(px(i)) << ',' << num(py(get(curve.epochs[i]))) << ' ';
    out << "\"/>\n";
    text(out, left + w - 90, ly, name);
    out << "<line x1=\"" << num(left + w - 110) << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << num(left + w - 95)
        << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
  };
  series([](const EpochRecord& e) { return e.train_loss; }, "#4c72b0", "train", top + 16);
  series([](const EpochRecord& e) { return e.val_loss; }, "#dd8452", "validation", top + 32);
  for (std::size_t i = 0; i < n; ++i) {
    if (curve.epochs[i].improved) {
      out << "<circle cx=\"" << num(px(i)) << "\" cy=\"" << num(py(curve.epochs[i].val_loss))
          << "\" r=\"2.5\" fill=\"#dd8452\"/>\n";
    }
  }
  text(out, left, top + h + 16, "epoch 1");
  text(out, left + w, top + h + 16, "epoch " + std::to_string(curve.epochs.back().epoch), "end");
  text(out, left - 6, top + 10, num(hi), "end");
  text(out, left - 6, top + h, num(lo), "end");
  if (log_scale) text(out, left, top + h + 34, "log scale");
  out << "</svg>\n";
  return out.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace iapnet::plot
