// Shot-boundary detection over raw RGB frame sequences, plus the .fseq
// container used to ship synthetic videos in fixtures.
//
// The boundary signal blends two equally weighted terms:
//   * mean per-pixel absolute HSV difference (each channel normalized to
//     [0,1]; hue distance is circular: min(|dh|, 1-|dh|)), and
//   * edge-change fraction (Sobel magnitude thresholded at 0.25 of the
//     frame's max magnitude; the fraction of pixels whose edge bit flips).
// A cut is declared between consecutive frames when the blended delta
// exceeds the threshold (default 0.3).
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "memseed/common.hpp"

namespace memseed {

struct Frame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major RGB24, 3 * width * height bytes

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool operator==(const Frame&) const = default;
};

struct FrameSequence {
  double fps = 0.0;
  std::vector<Frame> frames;  // uniform dimensions

  bool operator==(const FrameSequence&) const = default;
};

// Half-open span of frames [start, end) with its representative frame.
struct SceneSpan {
  int start = 0;
  int end = 0;
  int dominant = 0;  // index in [start, end)

  bool operator==(const SceneSpan&) const = default;
};

inline constexpr double kDefaultCutThreshold = 0.3;
inline constexpr double kEdgeThresholdFraction = 0.25;

namespace detail {

inline void validate_frame(const Frame& f, const std::string& where) {
  if (f.width <= 0 || f.height <= 0)
    throw ValidationError(where + ": frame dimensions must be positive");
  if (f.rgb.size() != f.pixel_count() * 3)
    throw ValidationError(where + ": rgb buffer size does not match dimensions");
}

inline void validate_pair(const Frame& a, const Frame& b) {
  validate_frame(a, "frame_delta");
  validate_frame(b, "frame_delta");
  if (a.width != b.width || a.height != b.height)
    throw ValidationError("frame_delta: frame dimensions differ");
}

// Per-frame analysis reused across pairwise deltas.
struct FrameAnalysis {
  std::vector<double> h, s, v;  // per pixel, each in [0,1]
  std::vector<bool> edge;       // Sobel magnitude above 0.25 * frame max
};

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  double mx = std::max(r, std::max(g, b));
  double mn = std::min(r, std::min(g, b));
  v = mx;
  s = mx == 0.0 ? 0.0 : (mx - mn) / mx;
  if (mx == mn) {
    h = 0.0;  // hue undefined on the gray axis; pin to 0
    return;
  }
  double d = mx - mn;
  double hh;
  if (mx == r)
    hh = std::fmod((g - b) / d, 6.0);
  else if (mx == g)
    hh = (b - r) / d + 2.0;
  else
    hh = (r - g) / d + 4.0;
  h = hh / 6.0;
  if (h < 0.0) h += 1.0;
}

inline FrameAnalysis analyze_frame(const Frame& f) {
  const std::size_t n = f.pixel_count();
  FrameAnalysis a;
  a.h.resize(n);
  a.s.resize(n);
  a.v.resize(n);

  std::vector<double> gray(n);
  for (std::size_t i = 0; i < n; ++i) {
    double r = f.rgb[3 * i] / 255.0;
    double g = f.rgb[3 * i + 1] / 255.0;
    double b = f.rgb[3 * i + 2] / 255.0;
    rgb_to_hsv(r, g, b, a.h[i], a.s[i], a.v[i]);
    gray[i] = (r + g + b) / 3.0;
  }

  // Sobel magnitude with clamp-to-edge borders.
  std::vector<double> mag(n, 0.0);
  double max_mag = 0.0;
  auto at = [&](int x, int y) {
    x = std::min(std::max(x, 0), f.width - 1);
    y = std::min(std::max(y, 0), f.height - 1);
    return gray[static_cast<std::size_t>(y) * f.width + x];
  };
  for (int y = 0; y < f.height; ++y) {
    for (int x = 0; x < f.width; ++x) {
      // Each kernel half is summed separately so that flat regions cancel
      // exactly (identical operands, identical rounding) instead of leaving
      // 2^-54-scale residue that would then dominate the frame max.
      double gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)) -
                  (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
      double gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)) -
                  (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
      double m = std::sqrt(gx * gx + gy * gy);
      mag[static_cast<std::size_t>(y) * f.width + x] = m;
      max_mag = std::max(max_mag, m);
    }
  }
  a.edge.resize(n);
  // The tiny floor keeps rounding residue from ever counting as an edge.
  const double thr = std::max(kEdgeThresholdFraction * max_mag, 1e-12);
  for (std::size_t i = 0; i < n; ++i) a.edge[i] = mag[i] > thr;
  return a;
}

inline double delta_from_analyses(const FrameAnalysis& a, const FrameAnalysis& b) {
  const std::size_t n = a.h.size();
  double hsv_sum = 0.0;
  std::size_t flips = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double dh = std::fabs(a.h[i] - b.h[i]);
    dh = std::min(dh, 1.0 - dh);
    double ds = std::fabs(a.s[i] - b.s[i]);
    double dv = std::fabs(a.v[i] - b.v[i]);
    hsv_sum += (dh + ds + dv) / 3.0;
    if (a.edge[i] != b.edge[i]) ++flips;
  }
  double hsv_term = hsv_sum / static_cast<double>(n);
  double edge_term = static_cast<double>(flips) / static_cast<double>(n);
  return 0.5 * hsv_term + 0.5 * edge_term;
}

}  // namespace detail

// Blended inter-frame difference in [0,1]; symmetric in its arguments.
inline double frame_delta(const Frame& a, const Frame& b) {
  detail::validate_pair(a, b);
  return detail::delta_from_analyses(detail::analyze_frame(a), detail::analyze_frame(b));
}

// Representative frame of [start, end): the one with the smallest mean delta
// to its neighbors inside the span (one-sided at the span edges); ties go to
// the earliest frame. A single-frame span returns its only frame.
inline int dominant_frame(const FrameSequence& seq, int start, int end) {
  if (start < 0 || end > static_cast<int>(seq.frames.size()) || start >= end)
    throw ValidationError("dominant_frame: invalid span [" + std::to_string(start) + "," +
                          std::to_string(end) + ")");
  if (end - start == 1) return start;

  std::vector<detail::FrameAnalysis> analyses;
  analyses.reserve(static_cast<std::size_t>(end - start));
  for (int i = start; i < end; ++i) analyses.push_back(detail::analyze_frame(seq.frames[i]));

  int best = start;
  double best_motion = 0.0;
  for (int i = start; i < end; ++i) {
    double sum = 0.0;
    int cnt = 0;
    if (i > start) {
      sum += detail::delta_from_analyses(analyses[i - start - 1], analyses[i - start]);
      ++cnt;
    }
    if (i < end - 1) {
      sum += detail::delta_from_analyses(analyses[i - start], analyses[i - start + 1]);
      ++cnt;
    }
    double motion = sum / cnt;
    if (i == start || motion < best_motion) {
      best = i;
      best_motion = motion;
    }
  }
  return best;
}

// Segment a sequence into scene spans. A cut lands between frames i-1 and i
// whenever their delta exceeds the threshold; every frame belongs to exactly
// one span and each span carries its dominant frame.
inline std::vector<SceneSpan> detect_cuts(const FrameSequence& seq,
                                          double threshold = kDefaultCutThreshold) {
  if (seq.frames.empty()) throw ValidationError("detect_cuts: empty sequence");
  if (!(threshold > 0.0)) throw ValidationError("detect_cuts: threshold must be positive");
  detail::validate_frame(seq.frames[0], "detect_cuts");
  for (std::size_t i = 1; i < seq.frames.size(); ++i) {
    detail::validate_frame(seq.frames[i], "detect_cuts");
    if (seq.frames[i].width != seq.frames[0].width || seq.frames[i].height != seq.frames[0].height)
      throw ValidationError("detect_cuts: frame dimensions differ at index " + std::to_string(i));
  }

  std::vector<detail::FrameAnalysis> analyses;
  analyses.reserve(seq.frames.size());
  for (const auto& f : seq.frames) analyses.push_back(detail::analyze_frame(f));

  std::vector<int> starts = {0};
  for (std::size_t i = 1; i < seq.frames.size(); ++i)
    if (detail::delta_from_analyses(analyses[i - 1], analyses[i]) > threshold)
      starts.push_back(static_cast<int>(i));

  std::vector<SceneSpan> spans;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    SceneSpan span;
    span.start = starts[k];
    span.end = k + 1 < starts.size() ? starts[k + 1] : static_cast<int>(seq.frames.size());
    span.dominant = dominant_frame(seq, span.start, span.end);
    spans.push_back(span);
  }
  return spans;
}

// ---------------------------------------------------------------------------
// .fseq container: "FSEQ1\n", an ASCII header line "width height fps nframes",
// then raw RGB24 frames back to back.
// ---------------------------------------------------------------------------

inline constexpr const char* kFseqMagic = "FSEQ1\n";

inline std::string dump_fseq(const FrameSequence& seq) {
  if (seq.frames.empty()) throw ValidationError("fseq: refusing to write an empty sequence");
  if (!(seq.fps > 0.0)) throw ValidationError("fseq: fps must be positive");
  const Frame& first = seq.frames[0];
  detail::validate_frame(first, "fseq");
  std::string out = kFseqMagic;
  out += std::to_string(first.width) + " " + std::to_string(first.height) + " " +
         format_double(seq.fps) + " " + std::to_string(seq.frames.size()) + "\n";
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const Frame& f = seq.frames[i];
    detail::validate_frame(f, "fseq frame " + std::to_string(i));
    if (f.width != first.width || f.height != first.height)
      throw ValidationError("fseq: frame dimensions differ at index " + std::to_string(i));
    out.append(reinterpret_cast<const char*>(f.rgb.data()), f.rgb.size());
  }
  return out;
}

inline void write_fseq(const std::string& path, const FrameSequence& seq) {
  write_file(path, dump_fseq(seq));
}

inline FrameSequence parse_fseq(std::string_view bytes, const std::string& origin) {
  const std::string_view magic = kFseqMagic;
  if (bytes.size() < magic.size() || bytes.substr(0, magic.size()) != magic)
    throw FormatError(origin + ": not an fseq file (bad magic)");
  std::size_t header_end = bytes.find('\n', magic.size());
  if (header_end == std::string_view::npos) throw FormatError(origin + ": truncated fseq header");
  std::string_view header = bytes.substr(magic.size(), header_end - magic.size());

  int width = 0, height = 0;
  double fps = 0.0;
  std::size_t nframes = 0;
  {
    const char* p = header.data();
    const char* end = header.data() + header.size();
    auto skip_space = [&] {
      while (p < end && *p == ' ') ++p;
    };
    auto r1 = std::from_chars(p, end, width);
    if (r1.ec != std::errc{}) throw FormatError(origin + ": bad fseq header (width)");
    p = r1.ptr;
    skip_space();
    auto r2 = std::from_chars(p, end, height);
    if (r2.ec != std::errc{}) throw FormatError(origin + ": bad fseq header (height)");
    p = r2.ptr;
    skip_space();
    auto r3 = std::from_chars(p, end, fps);
    if (r3.ec != std::errc{}) throw FormatError(origin + ": bad fseq header (fps)");
    p = r3.ptr;
    skip_space();
    auto r4 = std::from_chars(p, end, nframes);
    if (r4.ec != std::errc{}) throw FormatError(origin + ": bad fseq header (nframes)");
  }
  if (width <= 0 || height <= 0 || !(fps > 0.0) || nframes == 0)
    throw FormatError(origin + ": bad fseq header values");

  const std::size_t frame_bytes = static_cast<std::size_t>(width) * height * 3;
  std::size_t offset = header_end + 1;
  if (bytes.size() - offset != frame_bytes * nframes)
    throw FormatError(origin + ": fseq payload size mismatch (expected " +
                      std::to_string(frame_bytes * nframes) + " bytes, got " +
                      std::to_string(bytes.size() - offset) + ")");

  FrameSequence seq;
  seq.fps = fps;
  seq.frames.resize(nframes);
  for (std::size_t i = 0; i < nframes; ++i) {
    Frame& f = seq.frames[i];
    f.width = width;
    f.height = height;
    f.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                 bytes.begin() + static_cast<std::ptrdiff_t>(offset + frame_bytes));
    offset += frame_bytes;
  }
  return seq;
}

inline FrameSequence read_fseq(const std::string& path) {
  return parse_fseq(read_file(path), path);
}

// Convenience builders for flat and striped synthetic frames.
inline Frame solid_frame(int width, int height, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Frame f;
  f.width = width;
  f.height = height;
  f.rgb.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < f.pixel_count(); ++i) {
    f.rgb[3 * i] = r;
    f.rgb[3 * i + 1] = g;
    f.rgb[3 * i + 2] = b;
  }
  return f;
}

inline Frame stripe_frame(int width, int height, int stripe_width, std::uint8_t r1, std::uint8_t g1,
                          std::uint8_t b1, std::uint8_t r2, std::uint8_t g2, std::uint8_t b2,
                          bool vertical = true) {
  Frame f = solid_frame(width, height, r1, g1, b1);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      int band = (vertical ? x : y) / stripe_width;
      if (band % 2 == 1) {
        std::size_t i = static_cast<std::size_t>(y) * width + x;
        f.rgb[3 * i] = r2;
        f.rgb[3 * i + 1] = g2;
        f.rgb[3 * i + 2] = b2;
      }
    }
  }
  return f;
}

}  // namespace memseed
