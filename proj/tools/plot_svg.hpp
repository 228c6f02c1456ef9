#pragma once

#include <algorithm>
#include <cstdio>
#include <optional>
#include <string>

#include "scorediff/audio/controls.hpp"
#include "scorediff/audio/mel.hpp"

namespace scorediff::plot {

namespace detail_svg {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// viridis-like ramp through five anchors
inline std::string colour(double t) {
  static const double anchors[5][3] = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  t = std::clamp(t, 0.0, 1.0) * 4;
  const int i = std::min(3, int(t));
  const double f = t - i;
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", int(anchors[i][0] + f * (anchors[i + 1][0] - anchors[i][0])),
                int(anchors[i][1] + f * (anchors[i + 1][1] - anchors[i][1])),
                int(anchors[i][2] + f * (anchors[i + 1][2] - anchors[i][2])));
  return buf;
}

}  // namespace detail_svg

/// Stacked panels: log-mel spectrogram, melody strip (pitch class per
/// frame) and dynamics curve. Panels whose input is absent are skipped.
inline std::string panels(const MelSpectrogram& mel, const std::optional<MelodyControl>& melody,
                          const std::optional<DynamicsControl>& dynamics, const std::string& title = "") {
  using detail_svg::fmt;
  const double width = 640, left = 60, right = 10, panel_h = 160, strip_h = 96, curve_h = 100, gap = 28;
  const double plot_w = width - left - right;
  double y = title.empty() ? 10 : 30;
  std::string body;

  if (!title.empty()) body += "<text x=\"" + fmt(left) + "\" y=\"20\" font-size=\"13\">" + title + "</text>\n";

  // spectrogram
  {
    double lo = mel.log_floor, hi = mel.log_floor;
    for (double v : mel.values) hi = std::max(hi, v);
    const double cw = plot_w / double(std::max<std::size_t>(1, mel.frames));
    const double ch = panel_h / double(std::max<std::size_t>(1, mel.mel_bins));
    body += "<g shape-rendering=\"crispEdges\">\n";
    for (std::size_t t = 0; t < mel.frames; ++t)
      for (std::size_t m = 0; m < mel.mel_bins; ++m) {
        const double v = hi > lo ? (mel.at(t, m) - lo) / (hi - lo) : 0.0;
        body += "<rect x=\"" + fmt(left + double(t) * cw) + "\" y=\"" + fmt(y + panel_h - double(m + 1) * ch) +
                "\" width=\"" + fmt(cw + 0.05) + "\" height=\"" + fmt(ch + 0.05) + "\" fill=\"" + detail_svg::colour(v) +
                "\"/>\n";
      }
    body += "</g>\n<text x=\"4\" y=\"" + fmt(y + panel_h / 2) + "\" font-size=\"11\">mel</text>\n";
    y += panel_h + gap;
  }

  if (melody) {
    const double cw = plot_w / double(std::max<std::size_t>(1, melody->frames));
    const double ch = strip_h / 12.0;
    body += "<rect x=\"" + fmt(left) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(plot_w) + "\" height=\"" + fmt(strip_h) +
            "\" fill=\"none\" stroke=\"#999\"/>\n";
    for (std::size_t t = 0; t < melody->frames; ++t) {
      const int p = melody->pitch_at(t);
      if (p < 0) continue;
      body += "<rect x=\"" + fmt(left + double(t) * cw) + "\" y=\"" + fmt(y + strip_h - double(p + 1) * ch) +
              "\" width=\"" + fmt(cw + 0.05) + "\" height=\"" + fmt(ch) + "\" fill=\"#c0392b\"/>\n";
    }
    static const char* names[] = {"C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};
    for (int p = 0; p < 12; p += 2)
      body += "<text x=\"" + fmt(left - 18) + "\" y=\"" + fmt(y + strip_h - double(p) * ch - 1) + "\" font-size=\"8\">" +
              names[p] + "</text>\n";
    body += "<text x=\"4\" y=\"" + fmt(y + strip_h / 2) + "\" font-size=\"11\">melody</text>\n";
    y += strip_h + gap;
  }

  if (dynamics && dynamics->frames() > 0) {
    const double lo = -80, hi = 0;
    const double dx = plot_w / double(std::max<std::size_t>(1, dynamics->frames() - 1));
    std::string pts;
    for (std::size_t t = 0; t < dynamics->frames(); ++t) {
      const double v = std::clamp(dynamics->loudness_db[t], lo, hi);
      pts += fmt(left + double(t) * dx) + "," + fmt(y + curve_h * (hi - v) / (hi - lo)) + " ";
    }
    body += "<rect x=\"" + fmt(left) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(plot_w) + "\" height=\"" + fmt(curve_h) +
            "\" fill=\"none\" stroke=\"#999\"/>\n";
    body += "<polyline fill=\"none\" stroke=\"#2c3e50\" stroke-width=\"1.2\" points=\"" + pts + "\"/>\n";
    body += "<text x=\"" + fmt(left - 24) + "\" y=\"" + fmt(y + 8) + "\" font-size=\"8\">0 dB</text>\n";
    body += "<text x=\"" + fmt(left - 30) + "\" y=\"" + fmt(y + curve_h) + "\" font-size=\"8\">-80 dB</text>\n";
    body += "<text x=\"4\" y=\"" + fmt(y + curve_h / 2) + "\" font-size=\"11\">dB</text>\n";
    y += curve_h + gap;
  }

  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" + fmt(y) +
         "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n" + body + "</svg>\n";
}

}  // namespace scorediff::plot
