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

#ifndef STARFLOW_PNG_IO_HPP
#define STARFLOW_PNG_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace starflow {

// Row-major, channel-interleaved images. channels is 1 (gray), 2 (gray +
// alpha), 3 (RGB) or 4 (RGBA).
struct Image8 {
  int width = 0, height = 0, channels = 0;
  std::vector<uint8_t> pixels;
};
struct Image16 {
  int width = 0, height = 0, channels = 0;
  std::vector<uint16_t> pixels;
};

// Readers insist on the matching bit depth: an 8-bit file is a format error
// for read_png16 and vice versa (no silent widening/narrowing).
Image8 read_png8(const std::string& path);
Image16 read_png16(const std::string& path);
void write_png8(const std::string& path, const Image8& img);
void write_png16(const std::string& path, const Image16& img);

}  // namespace starflow

#endif  // STARFLOW_PNG_IO_HPP
