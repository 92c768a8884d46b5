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

#include "mclnf/io.hpp"

#include "mclnf/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace mclnf::io {

namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> slurp(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spill(const fs::path& path, const std::vector<unsigned char>& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("short write to " + path.string());
    }
}

// PNM header token reader; skips whitespace and # comments.
struct HeaderReader {
    const std::vector<unsigned char>& b;
    std::size_t pos = 0;
    const fs::path& path;

    unsigned long number()
    {
        for (;;) {
            if (pos >= b.size()) {
                throw IoError(path.string() + ": truncated header");
            }
            if (b[pos] == '#') {
                while (pos < b.size() && b[pos] != '\n') {
                    ++pos;
                }
            } else if (std::isspace(b[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        if (!std::isdigit(b[pos])) {
            throw IoError(path.string() + ": malformed header");
        }
        unsigned long v = 0;
        while (pos < b.size() && std::isdigit(b[pos])) {
            v = v * 10 + static_cast<unsigned long>(b[pos] - '0');
            if (v > 1000000000UL) {
                throw IoError(path.string() + ": header value too large");
            }
            ++pos;
        }
        return v;
    }
};

std::uint32_t le32(const std::vector<unsigned char>& b, std::size_t at)
{
    return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
           static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

std::uint16_t le16(const std::vector<unsigned char>& b, std::size_t at)
{
    return static_cast<std::uint16_t>(b[at] | b[at + 1] << 8);
}

void put32(std::vector<unsigned char>& b, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) {
        b.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
}

void put16(std::vector<unsigned char>& b, std::uint16_t v)
{
    b.push_back(static_cast<unsigned char>(v));
    b.push_back(static_cast<unsigned char>(v >> 8));
}

} // namespace

Image read_pnm(const fs::path& path)
{
    const auto b = slurp(path);
    if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6')) {
        throw IoError(path.string() + ": not a binary PGM/PPM (P5/P6)");
    }
    HeaderReader h{b, 2, path};
    Image img;
    img.channels = b[1] == '5' ? 1 : 3;
    img.width = h.number();
    img.height = h.number();
    const unsigned long maxval = h.number();
    if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 65535) {
        throw IoError(path.string() + ": bad dimensions or maxval");
    }
    img.maxval = static_cast<unsigned>(maxval);
    if (h.pos >= b.size() || !std::isspace(b[h.pos])) {
        throw IoError(path.string() + ": missing whitespace after maxval");
    }
    std::size_t pos = h.pos + 1;
    const std::size_t count = img.width * img.height * img.channels;
    const std::size_t bytes_per = maxval > 255 ? 2 : 1;
    if (b.size() - pos < count * bytes_per) {
        throw IoError(path.string() + ": truncated pixel data");
    }
    img.pixels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint16_t v = bytes_per == 2 ? static_cast<std::uint16_t>(b[pos] << 8 | b[pos + 1]) : b[pos];
        if (v > maxval) {
            throw IoError(path.string() + ": sample exceeds maxval");
        }
        img.pixels[i] = v;
        pos += bytes_per;
    }
    return img;
}

void write_pnm(const fs::path& path, const Image& img)
{
    require(img.channels == 1 || img.channels == 3, "pnm: 1 or 3 channels");
    require(img.maxval >= 1 && img.maxval <= 65535, "pnm: maxval out of range");
    require(img.pixels.size() == img.width * img.height * img.channels, "pnm: pixel count mismatch");
    const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) + " " +
                               std::to_string(img.height) + "\n" + std::to_string(img.maxval) + "\n";
    std::vector<unsigned char> b(header.begin(), header.end());
    for (std::uint16_t v : img.pixels) {
        if (img.maxval > 255) {
            b.push_back(static_cast<unsigned char>(v >> 8));
        }
        b.push_back(static_cast<unsigned char>(v));
    }
    spill(path, b);
}

Audio read_wav(const fs::path& path)
{
    const auto b = slurp(path);
    if (b.size() < 12 || std::string(b.begin(), b.begin() + 4) != "RIFF" ||
        std::string(b.begin() + 8, b.begin() + 12) != "WAVE") {
        throw IoError(path.string() + ": not a RIFF/WAVE file");
    }
    Audio audio;
    bool have_fmt = false;
    bool have_data = false;
    std::size_t pos = 12;
    while (pos + 8 <= b.size()) {
        const std::string tag(b.begin() + static_cast<std::ptrdiff_t>(pos),
                              b.begin() + static_cast<std::ptrdiff_t>(pos + 4));
        const std::size_t len = le32(b, pos + 4);
        const std::size_t body = pos + 8;
        if (len > b.size() - body) {
            throw IoError(path.string() + ": chunk '" + tag + "' runs past end of file");
        }
        if (tag == "fmt ") {
            if (len < 16) {
                throw IoError(path.string() + ": short fmt chunk");
            }
            const auto format = le16(b, body);
            const auto channels = le16(b, body + 2);
            audio.sample_rate = le32(b, body + 4);
            const auto bits = le16(b, body + 14);
            if (format != 1 || channels != 1 || bits != 16) {
                throw IoError(path.string() + ": only PCM16 mono is supported");
            }
            have_fmt = true;
        } else if (tag == "data") {
            if (!have_fmt) {
                throw IoError(path.string() + ": data chunk before fmt");
            }
            audio.samples.resize(len / 2);
            for (std::size_t i = 0; i < audio.samples.size(); ++i) {
                audio.samples[i] = static_cast<std::int16_t>(le16(b, body + 2 * i));
            }
            have_data = true;
        }
        pos = body + len + (len & 1);
    }
    if (!have_fmt || !have_data) {
        throw IoError(path.string() + ": missing fmt or data chunk");
    }
    return audio;
}

void write_wav(const fs::path& path, const Audio& audio)
{
    const auto data_len = static_cast<std::uint32_t>(2 * audio.samples.size());
    std::vector<unsigned char> b{'R', 'I', 'F', 'F'};
    put32(b, 36 + data_len);
    for (char c : std::string("WAVEfmt ")) {
        b.push_back(static_cast<unsigned char>(c));
    }
    put32(b, 16);
    put16(b, 1);
    put16(b, 1);
    put32(b, audio.sample_rate);
    put32(b, audio.sample_rate * 2);
    put16(b, 2);
    put16(b, 16);
    for (char c : std::string("data")) {
        b.push_back(static_cast<unsigned char>(c));
    }
    put32(b, data_len);
    for (std::int16_t s : audio.samples) {
        put16(b, static_cast<std::uint16_t>(s));
    }
    spill(path, b);
}

Signal to_signal(const Image& image, std::string id)
{
    Signal s;
    s.kind = SignalKind::Image;
    s.grid = {image.height, image.width};
    s.channels = image.channels;
    s.values = Tensor(Shape{image.height * image.width, image.channels});
    const double scale = 1.0 / image.maxval;
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        s.values[i] = image.pixels[i] * scale;
    }
    s.id = std::move(id);
    return s;
}

Signal to_signal(const Audio& audio, std::string id)
{
    require(!audio.samples.empty(), "audio clip is empty");
    Signal s;
    s.kind = SignalKind::Audio;
    s.grid = {audio.samples.size()};
    s.values = Tensor(Shape{audio.samples.size(), 1});
    for (std::size_t i = 0; i < audio.samples.size(); ++i) {
        s.values[i] = audio.samples[i] / 32768.0;
    }
    s.value_lo = -1.0;
    s.value_hi = 1.0;
    s.id = std::move(id);
    return s;
}

Image to_image(const Signal& signal, std::size_t frame)
{
    Image img;
    std::size_t offset = 0;
    if (signal.dims() == 3) {
        require(frame < signal.grid[0], "frame index out of range");
        img.height = signal.grid[1];
        img.width = signal.grid[2];
        offset = frame * img.height * img.width;
    } else {
        require(signal.dims() == 2, "image output needs a 2-d or 3-d grid");
        img.height = signal.grid[0];
        img.width = signal.grid[1];
    }
    require(signal.channels == 1 || signal.channels == 3, "image output needs 1 or 3 channels");
    img.channels = signal.channels;
    const std::size_t count = img.width * img.height * img.channels;
    img.pixels.resize(count);
    const double span = signal.value_hi - signal.value_lo;
    for (std::size_t i = 0; i < count; ++i) {
        const double v = std::clamp((signal.values[offset * img.channels + i] - signal.value_lo) / span, 0.0, 1.0);
        img.pixels[i] = static_cast<std::uint16_t>(std::lround(v * 255.0));
    }
    return img;
}

Audio to_audio(const Signal& signal, std::uint32_t sample_rate)
{
    require(signal.dims() == 1 && signal.channels == 1, "audio output needs a 1-d single-channel signal");
    Audio a;
    a.sample_rate = sample_rate;
    a.samples.resize(signal.samples());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const double v = std::clamp(signal.values[i], -1.0, 32767.0 / 32768.0);
        a.samples[i] = static_cast<std::int16_t>(std::lround(v * 32768.0));
    }
    return a;
}

Signal read_video(const fs::path& dir, std::string id)
{
    if (!fs::is_directory(dir)) {
        throw IoError(dir.string() + ": not a directory");
    }
    std::vector<std::pair<unsigned long long, fs::path>> frames;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto ext = entry.path().extension().string();
        if (!entry.is_regular_file() || (ext != ".ppm" && ext != ".pgm")) {
            continue;
        }
        const std::string stem = entry.path().stem().string();
        const auto last = stem.find_last_of("0123456789");
        if (last == std::string::npos) {
            continue;
        }
        auto first = stem.find_last_not_of("0123456789", last);
        first = first == std::string::npos ? 0 : first + 1;
        frames.emplace_back(std::stoull(stem.substr(first, last - first + 1)), entry.path());
    }
    if (frames.empty()) {
        throw IoError(dir.string() + ": no numbered PPM/PGM frames");
    }
    std::sort(frames.begin(), frames.end());
    Signal video;
    video.kind = SignalKind::Video;
    video.id = id.empty() ? dir.filename().string() : std::move(id);
    std::vector<double> values;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        if (f > 0 && frames[f].first == frames[f - 1].first) {
            throw IoError(dir.string() + ": duplicate frame number " + std::to_string(frames[f].first));
        }
        const Signal frame = to_signal(read_pnm(frames[f].second), "");
        if (f == 0) {
            video.grid = {frames.size(), frame.grid[0], frame.grid[1]};
            video.channels = frame.channels;
        } else if (frame.grid[0] != video.grid[1] || frame.grid[1] != video.grid[2] ||
                   frame.channels != video.channels) {
            throw IoError(frames[f].second.string() + ": frame size differs from the first frame");
        }
        values.insert(values.end(), frame.values.data().begin(), frame.values.data().end());
    }
    video.values = Tensor(Shape{video.samples(), video.channels}, std::move(values));
    return video;
}

void write_video(const fs::path& dir, const Signal& video)
{
    require(video.dims() == 3, "video output needs a (T, H, W) grid");
    fs::create_directories(dir);
    const char* ext = video.channels == 1 ? "pgm" : "ppm";
    for (std::size_t f = 0; f < video.grid[0]; ++f) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%05zu.%s", f, ext);
        write_pnm(dir / name, to_image(video, f));
    }
}

Signal load_signal(const fs::path& path)
{
    if (fs::is_directory(path)) {
        return read_video(path);
    }
    const auto ext = path.extension().string();
    const std::string id = path.stem().string();
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
        return to_signal(read_pnm(path), id);
    }
    if (ext == ".wav") {
        return to_signal(read_wav(path), id);
    }
    throw IoError(path.string() + ": unrecognized signal format");
}

fs::path save_signal(const fs::path& path, const Signal& signal)
{
    switch (signal.kind) {
    case SignalKind::Video:
        write_video(path, signal);
        return path;
    case SignalKind::Audio:
        write_wav(path, to_audio(signal));
        return path;
    default:
        if (signal.dims() == 1) {
            write_wav(path, to_audio(signal));
        } else {
            write_pnm(path, to_image(signal));
        }
        return path;
    }
}

} // namespace mclnf::io
