#pragma once

#include <zlib.h>

#include <array>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "consis/activation_store.hpp"
#include "consis/interpret.hpp"
#include "consis/serialize.hpp"

namespace consis {

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
};

// Minimal RGB raster with a 5x7 bitmap font; enough for histogram panels and
// image grids.
class Canvas {
 public:
  Canvas(int w, int h, Color bg = {255, 255, 255}) : w_(w), h_(h), rgb_(3 * w * h) {
    fill_rect(0, 0, w, h, bg);
  }

  int width() const { return w_; }
  int height() const { return h_; }
  const std::vector<std::uint8_t>& rgb() const { return rgb_; }

  void set(int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    const std::size_t i = 3 * (static_cast<std::size_t>(y) * w_ + x);
    rgb_[i] = c.r;
    rgb_[i + 1] = c.g;
    rgb_[i + 2] = c.b;
  }

  void fill_rect(int x0, int y0, int w, int h, Color c) {
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) set(x, y, c);
  }

  void hline(int x0, int x1, int y, Color c) {
    for (int x = x0; x <= x1; ++x) set(x, y, c);
  }

  void vline(int x, int y0, int y1, Color c) {
    for (int y = y0; y <= y1; ++y) set(x, y, c);
  }

  void rect(int x0, int y0, int w, int h, Color c) {
    hline(x0, x0 + w - 1, y0, c);
    hline(x0, x0 + w - 1, y0 + h - 1, c);
    vline(x0, y0, y0 + h - 1, c);
    vline(x0 + w - 1, y0, y0 + h - 1, c);
  }

  // Nearest-neighbour blit of a [C,H,W] float image into a target rect.
  void blit_image(const float* chw, int c, int ih, int iw, int x0, int y0, int tw,
                  int th) {
    for (int y = 0; y < th; ++y) {
      const int sy = y * ih / th;
      for (int x = 0; x < tw; ++x) {
        const int sx = x * iw / tw;
        auto px = [&](int ch) {
          const float v = chw[(static_cast<std::size_t>(ch) * ih + sy) * iw + sx];
          return static_cast<std::uint8_t>(std::clamp(v, 0.0f, 1.0f) * 255.0f);
        };
        if (c >= 3)
          set(x0 + x, y0 + y, {px(0), px(1), px(2)});
        else
          set(x0 + x, y0 + y, {px(0), px(0), px(0)});
      }
    }
  }

  void text(int x, int y, const std::string& s, Color c, int scale = 1);

 private:
  int w_, h_;
  std::vector<std::uint8_t> rgb_;
};

namespace figure_detail {

// 5x7 column-major glyphs, LSB = top row.
inline const std::uint8_t* glyph(char ch) {
  static const std::uint8_t digits[10][5] = {
      {0x3E, 0x51, 0x49, 0x45, 0x3E}, {0x00, 0x42, 0x7F, 0x40, 0x00},
      {0x42, 0x61, 0x51, 0x49, 0x46}, {0x21, 0x41, 0x45, 0x4B, 0x31},
      {0x18, 0x14, 0x12, 0x7F, 0x10}, {0x27, 0x45, 0x45, 0x45, 0x39},
      {0x3C, 0x4A, 0x49, 0x49, 0x30}, {0x01, 0x71, 0x09, 0x05, 0x03},
      {0x36, 0x49, 0x49, 0x49, 0x36}, {0x06, 0x49, 0x49, 0x29, 0x1E}};
  static const std::uint8_t letters[26][5] = {
      {0x7E, 0x11, 0x11, 0x11, 0x7E}, {0x7F, 0x49, 0x49, 0x49, 0x36},
      {0x3E, 0x41, 0x41, 0x41, 0x22}, {0x7F, 0x41, 0x41, 0x22, 0x1C},
      {0x7F, 0x49, 0x49, 0x49, 0x41}, {0x7F, 0x09, 0x09, 0x09, 0x01},
      {0x3E, 0x41, 0x49, 0x49, 0x7A}, {0x7F, 0x08, 0x08, 0x08, 0x7F},
      {0x00, 0x41, 0x7F, 0x41, 0x00}, {0x20, 0x40, 0x41, 0x3F, 0x01},
      {0x7F, 0x08, 0x14, 0x22, 0x41}, {0x7F, 0x40, 0x40, 0x40, 0x40},
      {0x7F, 0x02, 0x0C, 0x02, 0x7F}, {0x7F, 0x04, 0x08, 0x10, 0x7F},
      {0x3E, 0x41, 0x41, 0x41, 0x3E}, {0x7F, 0x09, 0x09, 0x09, 0x06},
      {0x3E, 0x41, 0x51, 0x21, 0x5E}, {0x7F, 0x09, 0x19, 0x29, 0x46},
      {0x46, 0x49, 0x49, 0x49, 0x31}, {0x01, 0x01, 0x7F, 0x01, 0x01},
      {0x3F, 0x40, 0x40, 0x40, 0x3F}, {0x1F, 0x20, 0x40, 0x20, 0x1F},
      {0x3F, 0x40, 0x38, 0x40, 0x3F}, {0x63, 0x14, 0x08, 0x14, 0x63},
      {0x07, 0x08, 0x70, 0x08, 0x07}, {0x61, 0x51, 0x49, 0x45, 0x43}};
  static const std::uint8_t space[5] = {0, 0, 0, 0, 0};
  static const std::uint8_t dot[5] = {0x00, 0x60, 0x60, 0x00, 0x00};
  static const std::uint8_t dash[5] = {0x08, 0x08, 0x08, 0x08, 0x08};
  static const std::uint8_t underscore[5] = {0x40, 0x40, 0x40, 0x40, 0x40};
  static const std::uint8_t colon[5] = {0x00, 0x36, 0x36, 0x00, 0x00};
  static const std::uint8_t slash[5] = {0x20, 0x10, 0x08, 0x04, 0x02};
  static const std::uint8_t equals[5] = {0x14, 0x14, 0x14, 0x14, 0x14};
  static const std::uint8_t percent[5] = {0x23, 0x13, 0x08, 0x64, 0x62};
  static const std::uint8_t plus[5] = {0x08, 0x08, 0x3E, 0x08, 0x08};

  const unsigned char u = static_cast<unsigned char>(std::toupper(ch));
  if (u >= '0' && u <= '9') return digits[u - '0'];
  if (u >= 'A' && u <= 'Z') return letters[u - 'A'];
  switch (u) {
    case '.': return dot;
    case '-': return dash;
    case '_': return underscore;
    case ':': return colon;
    case '/': return slash;
    case '=': return equals;
    case '%': return percent;
    case '+': return plus;
    default: return space;
  }
}

}  // namespace figure_detail

inline void Canvas::text(int x, int y, const std::string& s, Color c, int scale) {
  int cx = x;
  for (const char ch : s) {
    const std::uint8_t* g = figure_detail::glyph(ch);
    for (int col = 0; col < 5; ++col)
      for (int row = 0; row < 7; ++row)
        if (g[col] & (1u << row))
          fill_rect(cx + col * scale, y + row * scale, scale, scale, c);
    cx += 6 * scale;
  }
}

// Truecolor 8-bit PNG via zlib; fixed filter 0 per scanline.
inline void write_png(const Canvas& canvas, const std::string& path) {
  const int w = canvas.width(), h = canvas.height();
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(h) * (1 + 3 * w));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);
    const std::uint8_t* row = canvas.rgb().data() + 3 * static_cast<std::size_t>(y) * w;
    raw.insert(raw.end(), row, row + 3 * w);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  require(compress2(compressed.data(), &bound, raw.data(),
                    static_cast<uLong>(raw.size()), 6) == Z_OK,
          ErrorCode::io_error, "png deflate failed");
  compressed.resize(bound);

  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::io_error, "cannot write " + path);
  auto be32 = [](std::uint32_t v) {
    return std::array<std::uint8_t, 4>{static_cast<std::uint8_t>(v >> 24),
                                       static_cast<std::uint8_t>(v >> 16),
                                       static_cast<std::uint8_t>(v >> 8),
                                       static_cast<std::uint8_t>(v)};
  };
  auto chunk = [&](const char type[4], const std::uint8_t* data, std::size_t n) {
    const auto len = be32(static_cast<std::uint32_t>(n));
    out.write(reinterpret_cast<const char*>(len.data()), 4);
    out.write(type, 4);
    if (n > 0) out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
    uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(type), 4);
    if (n > 0) crc = crc32(crc, data, static_cast<uInt>(n));
    const auto crc_be = be32(static_cast<std::uint32_t>(crc));
    out.write(reinterpret_cast<const char*>(crc_be.data()), 4);
  };

  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  out.write(reinterpret_cast<const char*>(sig), 8);
  std::uint8_t ihdr[13];
  const auto wb = be32(static_cast<std::uint32_t>(w));
  const auto hb = be32(static_cast<std::uint32_t>(h));
  std::copy(wb.begin(), wb.end(), ihdr);
  std::copy(hb.begin(), hb.end(), ihdr + 4);
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // truecolor
  ihdr[10] = 0;
  ihdr[11] = 0;
  ihdr[12] = 0;
  chunk("IHDR", ihdr, 13);
  chunk("IDAT", compressed.data(), compressed.size());
  chunk("IEND", nullptr, 0);
  out.flush();
  require(out.good(), ErrorCode::io_error, "short write to " + path);
}

namespace figure_detail {

inline void histogram_panel(Canvas& canvas, int x0, int y0, int pw, int ph,
                            const std::vector<int>& bins, const std::string& title,
                            Color bar) {
  const Color axis{40, 40, 40};
  const Color grid{210, 210, 210};
  const int margin_left = 26, margin_bottom = 18, margin_top = 16;
  const int plot_x = x0 + margin_left, plot_y = y0 + margin_top;
  const int plot_w = pw - margin_left - 8, plot_h = ph - margin_top - margin_bottom;

  canvas.text(x0 + 4, y0 + 3, title, axis);
  int max_count = 1;
  for (const int c : bins) max_count = std::max(max_count, c);

  for (int f = 1; f <= 3; ++f) {
    const int gy = plot_y + plot_h - plot_h * f / 4;
    canvas.hline(plot_x, plot_x + plot_w, gy, grid);
  }
  const int n = static_cast<int>(bins.size());
  for (int i = 0; i < n; ++i) {
    const int bx0 = plot_x + plot_w * i / n;
    const int bx1 = plot_x + plot_w * (i + 1) / n - 1;
    const int bh = static_cast<int>(
        static_cast<double>(bins[i]) / max_count * (plot_h - 2));
    canvas.fill_rect(bx0, plot_y + plot_h - bh, std::max(1, bx1 - bx0), bh, bar);
  }
  canvas.hline(plot_x, plot_x + plot_w, plot_y + plot_h, axis);
  canvas.vline(plot_x, plot_y, plot_y + plot_h, axis);
  canvas.text(plot_x - 2, plot_y + plot_h + 4, "0", axis);
  canvas.text(plot_x + plot_w - 6, plot_y + plot_h + 4, "1", axis);
  canvas.text(x0 + 2, plot_y - 8, std::to_string(max_count), axis);
}

}  // namespace figure_detail

struct FigureInputs {
  std::string layer;
  // (model name, summary) pairs; the first two become the histogram columns
  std::vector<std::pair<std::string, const LayerSummary*>> summaries;
  std::vector<NeuronGallery> galleries;
  std::function<Tensor<float>(const GalleryEntry&)> image_of;
};

// Writes figures/hist_<layer>.png (columns = models, rows = consis and
// consis_adv), per-neuron gallery strips, and reports/hist_<layer>.csv with
// the bin counts. Filenames are deterministic.
inline std::vector<std::string> emit_figures(const FigureInputs& inputs,
                                             const std::string& out_dir) {
  require(!inputs.summaries.empty(), ErrorCode::empty_summary,
          "no layer summaries to plot");
  for (const auto& [name, summary] : inputs.summaries)
    require(summary != nullptr && !summary->rows.empty(), ErrorCode::empty_summary,
            "summary for model '" + name + "' is empty");

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "figures");
  fs::create_directories(fs::path(out_dir) / "galleries");
  fs::create_directories(fs::path(out_dir) / "reports");
  std::vector<std::string> written;

  // 2x2 histogram figure
  {
    const int pw = 300, ph = 220, cols = static_cast<int>(
        std::min<std::size_t>(2, inputs.summaries.size()));
    Canvas canvas(pw * cols + 20, ph * 2 + 20);
    const Color clean_bar{70, 110, 200};
    const Color adv_bar{200, 90, 70};
    for (int col = 0; col < cols; ++col) {
      const auto& [name, summary] = inputs.summaries[col];
      figure_detail::histogram_panel(canvas, 10 + col * pw, 10, pw, ph,
                                     summary->hist_consis, name + " consis",
                                     clean_bar);
      figure_detail::histogram_panel(canvas, 10 + col * pw, 10 + ph, pw, ph,
                                     summary->hist_consis_adv, name + " consis adv",
                                     adv_bar);
    }
    const std::string path =
        (fs::path(out_dir) / "figures" / ("hist_" + inputs.layer + ".png")).string();
    write_png(canvas, path);
    written.push_back(path);
  }

  // histogram bin counts as csv
  {
    std::string csv = "model,metric,bin,count\n";
    char line[128];
    for (const auto& [name, summary] : inputs.summaries) {
      for (std::size_t b = 0; b < summary->hist_consis.size(); ++b) {
        std::snprintf(line, sizeof(line), "%s,consis,%zu,%d\n", name.c_str(), b,
                      summary->hist_consis[b]);
        csv += line;
        std::snprintf(line, sizeof(line), "%s,consis_adv,%zu,%d\n", name.c_str(), b,
                      summary->hist_consis_adv[b]);
        csv += line;
      }
    }
    const std::string path =
        (fs::path(out_dir) / "reports" / ("hist_" + inputs.layer + ".csv")).string();
    write_text_file(path, csv);
    written.push_back(path);
  }

  // gallery strips: top-k clean and adversarial images per neuron
  for (const auto& gallery : inputs.galleries) {
    require(static_cast<bool>(inputs.image_of), ErrorCode::invalid_config,
            "galleries need an image provider");
    auto strip = [&](const std::vector<GalleryEntry>& entries,
                     const std::string& suffix) {
      if (entries.empty()) return;
      const Tensor<float> first = inputs.image_of(entries.front());
      const int ih = static_cast<int>(first.dim(2));
      const int iw = static_cast<int>(first.dim(3));
      const int pad = 2, label_h = 12;
      Canvas canvas(pad + static_cast<int>(entries.size()) * (iw + pad),
                    ih + label_h + 2 * pad, {245, 245, 245});
      for (std::size_t i = 0; i < entries.size(); ++i) {
        const Tensor<float> img = inputs.image_of(entries[i]);
        const int x0 = pad + static_cast<int>(i) * (iw + pad);
        canvas.blit_image(img.ptr(), static_cast<int>(img.dim(1)), ih, iw, x0, pad,
                          iw, ih);
        char label[32];
        std::snprintf(label, sizeof(label), "%.2f", entries[i].activation);
        canvas.text(x0, pad + ih + 2, label, {40, 40, 40});
      }
      const std::string path =
          (fs::path(out_dir) / "galleries" /
           ("neuron_" + std::to_string(gallery.neuron) + "_" + suffix + ".png"))
              .string();
      write_png(canvas, path);
      written.push_back(path);
    };
    strip(gallery.clean, "clean");
    strip(gallery.adv, "adv");
  }
  return written;
}

}  // namespace consis
