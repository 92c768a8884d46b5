// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#pragma once

// Binary PGM/PPM (P5/P6), PCM16 mono WAV, and videos stored as a directory
// of numbered PPM/PGM frames.

#include "mclnf/task.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mclnf::io {

struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1; // 1 for P5, 3 for P6
    unsigned maxval = 255;
    std::vector<std::uint16_t> pixels; // row-major, channels interleaved
};

Image read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image& image);

struct Audio {
    std::uint32_t sample_rate = 16000;
    std::vector<std::int16_t> samples;
};

Audio read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Audio& audio);

// Pixels scaled to [0, 1]; audio to [-1, 1].
Signal to_signal(const Image& image, std::string id);
Signal to_signal(const Audio& audio, std::string id);
// Values are clamped to the signal range and rounded.
Image to_image(const Signal& signal, std::size_t frame = 0);
Audio to_audio(const Signal& signal, std::uint32_t sample_rate = 16000);

// Frames sorted by the number embedded in their file names.
Signal read_video(const std::filesystem::path& dir, std::string id = "");
void write_video(const std::filesystem::path& dir, const Signal& video);

// Dispatches on extension (.pgm .ppm .wav) or a directory of frames.
Signal load_signal(const std::filesystem::path& path);
// Writes `signal` in the format matching its kind; returns the path written.
std::filesystem::path save_signal(const std::filesystem::path& path, const Signal& signal);

} // namespace mclnf::io
