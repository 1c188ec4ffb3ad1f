/*
 * Copyright 2025 The gradlab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "gradlab/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gradlab/error.hpp"
#include "gradlab/rng.hpp"

namespace gradlab {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, size_t off,
                   const std::string& path) {
  if (off + 4 > b.size()) {
    throw FormatError("'" + path + "': truncated at byte offset " +
                      std::to_string(off));
  }
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  auto ib = read_file(images_path);
  auto lb = read_file(labels_path);

  if (be32(ib, 0, images_path) != 0x00000803u) {
    throw FormatError("'" + images_path +
                      "': bad image magic at byte offset 0");
  }
  if (be32(lb, 0, labels_path) != 0x00000801u) {
    throw FormatError("'" + labels_path +
                      "': bad label magic at byte offset 0");
  }
  std::uint32_t n = be32(ib, 4, images_path);
  std::uint32_t h = be32(ib, 8, images_path);
  std::uint32_t w = be32(ib, 12, images_path);
  std::uint32_t nl = be32(lb, 4, labels_path);
  if (n != nl) {
    throw FormatError("image count " + std::to_string(n) +
                      " != label count " + std::to_string(nl));
  }
  size_t need = 16 + static_cast<size_t>(n) * h * w;
  if (ib.size() != need) {
    throw FormatError("'" + images_path + "': payload truncated at byte offset " +
                      std::to_string(ib.size()) + ", expected " +
                      std::to_string(need) + " bytes");
  }
  if (lb.size() != 8 + static_cast<size_t>(n)) {
    throw FormatError("'" + labels_path +
                      "': payload truncated at byte offset " +
                      std::to_string(lb.size()));
  }

  Dataset d;
  d.images = Tensor({static_cast<int>(n), 1, static_cast<int>(h),
                     static_cast<int>(w)});
  for (size_t i = 0; i < static_cast<size_t>(n) * h * w; ++i) {
    d.images.data[i] = ib[16 + i] / 255.0;
  }
  d.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    d.labels[i] = lb[8 + i];
    if (d.labels[i] > 9) {
      throw FormatError("'" + labels_path + "': label " +
                        std::to_string(d.labels[i]) + " out of range at index " +
                        std::to_string(i));
    }
  }
  d.num_classes = 10;
  return d;
}

namespace {

void image_extent(const Tensor& t, int& h, int& w) {
  if (t.shape.size() == 2) {
    h = t.shape[0];
    w = t.shape[1];
  } else {
    throw DimensionError("resize: expected a {H,W} image, got " +
                         Tensor::shape_str(t.shape));
  }
}

}  // namespace

Tensor resize_nearest(const Tensor& image, int out_h, int out_w) {
  int h = 0, w = 0;
  image_extent(image, h, w);
  if (out_h < 1 || out_w < 1) throw ContractError("resize: bad target size");
  Tensor out({out_h, out_w});
  for (int i = 0; i < out_h; ++i) {
    int si = std::min(h - 1, static_cast<int>(i * static_cast<double>(h) /
                                              out_h));
    for (int j = 0; j < out_w; ++j) {
      int sj = std::min(w - 1, static_cast<int>(j * static_cast<double>(w) /
                                                out_w));
      out.data[i * out_w + j] = image.data[si * w + sj];
    }
  }
  return out;
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
  int h = 0, w = 0;
  image_extent(image, h, w);
  if (out_h < 1 || out_w < 1) throw ContractError("resize: bad target size");
  Tensor out({out_h, out_w});
  for (int i = 0; i < out_h; ++i) {
    double fy = out_h == 1 ? 0.0
                           : static_cast<double>(i) * (h - 1) / (out_h - 1);
    int y0 = static_cast<int>(fy), y1 = std::min(h - 1, y0 + 1);
    double ty = fy - y0;
    for (int j = 0; j < out_w; ++j) {
      double fx = out_w == 1 ? 0.0
                             : static_cast<double>(j) * (w - 1) / (out_w - 1);
      int x0 = static_cast<int>(fx), x1 = std::min(w - 1, x0 + 1);
      double tx = fx - x0;
      double a = image.data[y0 * w + x0] * (1 - tx) +
                 image.data[y0 * w + x1] * tx;
      double b = image.data[y1 * w + x0] * (1 - tx) +
                 image.data[y1 * w + x1] * tx;
      out.data[i * out_w + j] = a * (1 - ty) + b * ty;
    }
  }
  return out;
}

namespace {

// 3x5 digit bitmaps, row-major, 1 = ink.
constexpr std::uint8_t kGlyphs[10][15] = {
    {1,1,1, 1,0,1, 1,0,1, 1,0,1, 1,1,1},  // 0
    {0,1,0, 1,1,0, 0,1,0, 0,1,0, 1,1,1},  // 1
    {1,1,1, 0,0,1, 1,1,1, 1,0,0, 1,1,1},  // 2
    {1,1,1, 0,0,1, 0,1,1, 0,0,1, 1,1,1},  // 3
    {1,0,1, 1,0,1, 1,1,1, 0,0,1, 0,0,1},  // 4
    {1,1,1, 1,0,0, 1,1,1, 0,0,1, 1,1,1},  // 5
    {1,1,1, 1,0,0, 1,1,1, 1,0,1, 1,1,1},  // 6
    {1,1,1, 0,0,1, 0,1,0, 0,1,0, 0,1,0},  // 7
    {1,1,1, 1,0,1, 1,1,1, 1,0,1, 1,1,1},  // 8
    {1,1,1, 1,0,1, 1,1,1, 0,0,1, 1,1,1},  // 9
};

}  // namespace

Dataset synthetic_digits(int n, std::uint64_t seed) {
  if (n < 1) throw ContractError("synthetic_digits: n must be >= 1");
  Rng rng(seed);
  const int size = 32, scale = 5;  // glyph fills 15x25 of the canvas
  Dataset d;
  d.images = Tensor({n, 1, size, size});
  d.labels.resize(n);
  d.num_classes = 10;
  d.split = "synthetic";
  for (int s = 0; s < n; ++s) {
    int digit = s % 10;
    d.labels[s] = digit;
    int ox = 8 + static_cast<int>(rng.below(5)) - 2;   // glyph origin jitter
    int oy = 3 + static_cast<int>(rng.below(5)) - 2;
    double ink = 0.75 + 0.25 * rng.uniform();
    double* img = d.images.data.data() +
                  static_cast<size_t>(s) * size * size;
    for (int i = 0; i < size * size; ++i) {
      img[i] = 0.04 * rng.uniform();  // faint background noise
    }
    for (int gy = 0; gy < 5; ++gy) {
      for (int gx = 0; gx < 3; ++gx) {
        if (!kGlyphs[digit][gy * 3 + gx]) continue;
        for (int dy = 0; dy < scale; ++dy) {
          for (int dx = 0; dx < scale; ++dx) {
            int y = oy + gy * scale + dy, x = ox + gx * scale + dx;
            if (y >= 0 && y < size && x >= 0 && x < size) {
              img[y * size + x] = ink * (0.9 + 0.1 * rng.uniform());
            }
          }
        }
      }
    }
    for (int i = 0; i < size * size; ++i) {
      img[i] = std::clamp(img[i], 0.0, 1.0);
    }
  }
  return d;
}

void save_pgm(const std::string& path, const Tensor& image) {
  int h = 0, w = 0;
  if (image.shape.size() == 2) {
    h = image.shape[0];
    w = image.shape[1];
  } else if (image.shape.size() == 4 && image.shape[0] == 1 &&
             image.shape[1] == 1) {
    h = image.shape[2];
    w = image.shape[3];
  } else {
    throw DimensionError("save_pgm: expected {H,W} or {1,1,H,W}, got " +
                         Tensor::shape_str(image.shape));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("save_pgm: cannot open '" + path + "'");
  f << "P5\n" << w << " " << h << "\n255\n";
  for (int i = 0; i < h * w; ++i) {
    double v = std::clamp(image.data[i], 0.0, 1.0);
    f.put(static_cast<char>(std::lround(v * 255.0)));
  }
}

Tensor load_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("load_pgm: cannot open '" + path + "'");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255 || w < 1 || h < 1) {
    throw FormatError("load_pgm: '" + path + "' is not an 8-bit P5 graymap");
  }
  f.get();  // single whitespace after the header
  Tensor out({h, w});
  for (int i = 0; i < h * w; ++i) {
    int c = f.get();
    if (c == EOF) {
      throw FormatError("load_pgm: '" + path + "' truncated at pixel " +
                        std::to_string(i));
    }
    out.data[i] = c / 255.0;
  }
  return out;
}

void save_csv(const std::string& path, const std::string& header,
              const std::vector<std::vector<double>>& rows) {
  std::ofstream f(path);
  if (!f) throw FormatError("save_csv: cannot open '" + path + "'");
  f << header << "\n";
  std::ostringstream os;
  os.precision(17);
  for (const auto& row : rows) {
    os.str("");
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) os << ',';
      os << row[i];
    }
    f << os.str() << "\n";
  }
}

Csv load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("load_csv: cannot open '" + path + "'");
  Csv out;
  std::string line;
  if (!std::getline(f, line)) {
    throw FormatError("load_csv: '" + path + "' is empty");
  }
  std::istringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) out.header.push_back(cell);
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream rs(line);
    std::vector<double> row;
    while (std::getline(rs, cell, ',')) {
      // from_chars, not stod: stod raises on subnormals, which save_csv
      // legitimately emits
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(),
                                       v);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw FormatError("load_csv: '" + path + "' bad number '" + cell +
                          "' at line " + std::to_string(lineno));
      }
      row.push_back(v);
    }
    if (row.size() != out.header.size()) {
      throw FormatError("load_csv: '" + path + "' column count mismatch at line " +
                        std::to_string(lineno));
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace gradlab
