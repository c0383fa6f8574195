// Copyright 2026 The starflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "starflow/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "starflow/common.hpp"

namespace starflow {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

int color_type_for(int channels, const std::string& path) {
  switch (channels) {
    case 1:
      return PNG_COLOR_TYPE_GRAY;
    case 2:
      return PNG_COLOR_TYPE_GRAY_ALPHA;
    case 3:
      return PNG_COLOR_TYPE_RGB;
    case 4:
      return PNG_COLOR_TYPE_RGBA;
    default:
      throw ContractError("png write " + path + ": unsupported channel count " +
                          std::to_string(channels));
  }
}

// Shared reader; fills exactly one of out8/out16 depending on want_depth.
void read_png(const std::string& path, int want_depth, Image8* out8,
              Image16* out16) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open png: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed for " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng init failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("malformed png: " + path);
  }

  png_init_io(png, file.get());
  png_read_info(png, info);

  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  const int depth = png_get_bit_depth(png, info);
  if (depth != want_depth) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png " + path + " is " + std::to_string(depth) +
                      "-bit, want " + std::to_string(want_depth) + "-bit");
  }
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  const size_t row_bytes = png_get_rowbytes(png, info);

  std::vector<uint8_t> raw(static_cast<size_t>(height) * row_bytes);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = raw.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (want_depth == 8) {
    out8->width = width;
    out8->height = height;
    out8->channels = channels;
    out8->pixels.assign(raw.begin(), raw.end());
  } else {
    out16->width = width;
    out16->height = height;
    out16->channels = channels;
    out16->pixels.resize(static_cast<size_t>(width) * height * channels);
    // PNG stores 16-bit samples big-endian.
    for (size_t i = 0; i < out16->pixels.size(); ++i) {
      out16->pixels[i] = static_cast<uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
    }
  }
}

void write_png(const std::string& path, int depth, int width, int height,
               int channels, const uint8_t* bytes8, const uint16_t* samples16) {
  if (width < 1 || height < 1) {
    throw ContractError("png write " + path + ": empty image");
  }
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open png for writing: " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed for " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng init failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path);
  }

  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), depth,
               color_type_for(channels, path), PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  const size_t row_samples = static_cast<size_t>(width) * channels;
  if (depth == 8) {
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) {
      rows[y] = const_cast<png_bytep>(bytes8 + y * row_samples);
    }
    png_write_image(png, rows.data());
  } else {
    // Serialize big-endian regardless of host order.
    std::vector<uint8_t> raw(static_cast<size_t>(height) * row_samples * 2);
    for (size_t i = 0; i < static_cast<size_t>(height) * row_samples; ++i) {
      raw[2 * i] = static_cast<uint8_t>(samples16[i] >> 8);
      raw[2 * i + 1] = static_cast<uint8_t>(samples16[i] & 0xff);
    }
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = raw.data() + y * row_samples * 2;
    png_write_image(png, rows.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image8 read_png8(const std::string& path) {
  Image8 img;
  read_png(path, 8, &img, nullptr);
  return img;
}

Image16 read_png16(const std::string& path) {
  Image16 img;
  read_png(path, 16, nullptr, &img);
  return img;
}

void write_png8(const std::string& path, const Image8& img) {
  if (img.pixels.size() !=
      static_cast<size_t>(img.width) * img.height * img.channels) {
    throw ContractError("png write " + path + ": pixel buffer size mismatch");
  }
  write_png(path, 8, img.width, img.height, img.channels, img.pixels.data(),
            nullptr);
}

void write_png16(const std::string& path, const Image16& img) {
  if (img.pixels.size() !=
      static_cast<size_t>(img.width) * img.height * img.channels) {
    throw ContractError("png write " + path + ": pixel buffer size mismatch");
  }
  write_png(path, 16, img.width, img.height, img.channels, nullptr,
            img.pixels.data());
}

}  // namespace starflow
