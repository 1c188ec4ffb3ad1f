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
#ifndef GRADLAB_DATAIO_HPP_
#define GRADLAB_DATAIO_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "gradlab/tensor.hpp"

namespace gradlab {

struct Dataset {
  Tensor images;            // {N, 1, H, W}, values in [0, 1]
  std::vector<int> labels;  // class indices
  int num_classes = 10;
  std::string split;        // free-form tag
  int size() const { return images.shape.empty() ? 0 : images.shape[0]; }
};

// MNIST IDX pair (big-endian, magic 0x00000803 images / 0x00000801 labels).
// Pixels are scaled to [0, 1].
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path);

// Deterministic nearest-neighbor resize of a {H, W} grayscale image.
Tensor resize_nearest(const Tensor& image, int out_h, int out_w);
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

// Procedurally drawn 32x32 digit-like glyphs with labels; a CI-friendly
// stand-in when no MNIST files are available. Deterministic per seed.
Dataset synthetic_digits(int n, std::uint64_t seed);

// 8-bit binary PGM (P5). Values clamped to [0, 1] and scaled to 0..255.
void save_pgm(const std::string& path, const Tensor& image);
Tensor load_pgm(const std::string& path);

// Minimal CSV helpers: header row, '.' decimal separator, '\n' terminated.
void save_csv(const std::string& path, const std::string& header,
              const std::vector<std::vector<double>>& rows);

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};
Csv load_csv(const std::string& path);

}  // namespace gradlab

#endif  // GRADLAB_DATAIO_HPP_
