#include "s2i/data/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace s2i::data {

static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");

namespace {

struct FileCloser {
    void operator()(FILE* f) const
    {
        if (f)
            std::fclose(f);
    }
};
using File = std::unique_ptr<FILE, FileCloser>;

File open_file(const fs::path& path, const char* mode)
{
    File f(std::fopen(path.c_str(), mode));
    if (!f)
        throw DataError("cannot open " + path.string());
    return f;
}

// libpng reports through longjmp; the message is kept for the exception
// raised after unwinding back to the setjmp point.
thread_local char png_message[256];

[[noreturn]] void png_fail(png_structp png, png_const_charp msg)
{
    std::snprintf(png_message, sizeof png_message, "%s", msg);
    png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

} // namespace

Tensor read_png(const fs::path& path)
{
    File f = open_file(path, "rb");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8))
        throw DataError(path.string() + " is not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    std::vector<uint8_t> pixels;
    std::vector<png_bytep> rows;
    png_uint_32 w = 0, h = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(path.string() + ": " + png_message);
    }
    {
        png_init_io(png, f.get());
        png_set_sig_bytes(png, 8);
        png_read_info(png, info);
        w = png_get_image_width(png, info);
        h = png_get_image_height(png, info);
        const int color = png_get_color_type(png, info);
        if (png_get_bit_depth(png, info) == 16)
            png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE)
            png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
            if (png_get_bit_depth(png, info) < 8)
                png_set_expand_gray_1_2_4_to_8(png);
            png_set_gray_to_rgb(png);
        }
        if (color & PNG_COLOR_MASK_ALPHA)
            png_set_strip_alpha(png);
        png_read_update_info(png, info);
        if (png_get_rowbytes(png, info) != 3 * w) {
            png_destroy_read_struct(&png, &info, nullptr);
            throw DataError(path.string() + ": unsupported PNG layout");
        }
        pixels.resize(static_cast<size_t>(w) * h * 3);
        rows.resize(h);
        for (png_uint_32 y = 0; y < h; ++y)
            rows[y] = pixels.data() + static_cast<size_t>(y) * w * 3;
        png_read_image(png, rows.data());
        png_destroy_read_struct(&png, &info, nullptr);
    }
    Tensor img = Tensor::empty({3, h, w});
    float* d = img.data<float>();
    const size_t plane = static_cast<size_t>(w) * h;
    for (size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c)
            d[c * plane + i] = pixels[3 * i + c] / 127.5f - 1.0f;
    return img;
}

std::vector<uint8_t> to_rgb8(const Tensor& image)
{
    if (image.dim() != 3 || image.size(0) != 3)
        throw DimensionError("expected an image [3,H,W], got " + image.shape_str());
    const int64_t plane = image.size(1) * image.size(2);
    std::vector<uint8_t> rgb(3 * plane);
    for (int64_t i = 0; i < plane; ++i)
        for (int64_t c = 0; c < 3; ++c) {
            const double v = std::clamp((image.at(c * plane + i) + 1.0) * 127.5, 0.0, 255.0);
            rgb[3 * i + c] = static_cast<uint8_t>(std::lround(v));
        }
    return rgb;
}

void write_png_rgb8(const fs::path& path, const std::vector<uint8_t>& rgb, int64_t width, int64_t height)
{
    if (static_cast<int64_t>(rgb.size()) != 3 * width * height)
        throw DimensionError("rgb buffer does not match " + std::to_string(width) + "x" + std::to_string(height));
    File f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError(path.string() + ": " + png_message);
    }
    {
        png_init_io(png, f.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                     PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int64_t y = 0; y < height; ++y)
            png_write_row(png, rgb.data() + y * width * 3);
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    }
}

void write_png(const fs::path& path, const Tensor& image)
{
    write_png_rgb8(path, to_rgb8(image), image.size(2), image.size(1));
}

void write_features(const fs::path& path, const Tensor& frames)
{
    if (frames.dim() != 2)
        throw DimensionError("speech features must be [T,F], got " + frames.shape_str());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path.string());
    const uint32_t hdr[2] = {static_cast<uint32_t>(frames.size(0)), static_cast<uint32_t>(frames.size(1))};
    out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    Tensor f32 = frames.to(DType::F32);
    out.write(reinterpret_cast<const char*>(f32.data<float>()), static_cast<std::streamsize>(4 * f32.numel()));
    if (!out)
        throw DataError("short write to " + path.string());
}

std::pair<int64_t, int64_t> probe_features(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());
    uint32_t hdr[2];
    if (!in.read(reinterpret_cast<char*>(hdr), sizeof hdr))
        throw DataError(path.string() + ": truncated feature header");
    const auto expected = sizeof hdr + 4ull * hdr[0] * hdr[1];
    const auto actual = fs::file_size(path);
    if (actual != expected)
        throw DataError(path.string() + ": header says " + std::to_string(hdr[0]) + "x" + std::to_string(hdr[1]) +
                        " frames (" + std::to_string(expected) + " bytes), file has " + std::to_string(actual));
    if (hdr[0] == 0 || hdr[1] == 0)
        throw DataError(path.string() + ": empty feature record");
    return {hdr[0], hdr[1]};
}

Tensor read_features(const fs::path& path)
{
    auto [T, F] = probe_features(path);
    std::ifstream in(path, std::ios::binary);
    in.seekg(8);
    Tensor t = Tensor::empty({T, F});
    in.read(reinterpret_cast<char*>(t.data<float>()), static_cast<std::streamsize>(4 * T * F));
    if (!in)
        throw DataError("short read from " + path.string());
    return t;
}

namespace {

template <class T>
T read_le(std::istream& in)
{
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

template <class T>
void write_le(std::ostream& out, T v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

} // namespace

Wav read_wav(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());
    char tag[4];
    in.read(tag, 4);
    read_le<uint32_t>(in);
    char wave[4];
    in.read(wave, 4);
    if (!in || std::memcmp(tag, "RIFF", 4) || std::memcmp(wave, "WAVE", 4))
        throw DataError(path.string() + " is not a RIFF/WAVE file");
    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    bool have_fmt = false;
    while (in.read(tag, 4)) {
        const uint32_t len = read_le<uint32_t>(in);
        if (!std::memcmp(tag, "fmt ", 4)) {
            format = read_le<uint16_t>(in);
            channels = read_le<uint16_t>(in);
            rate = read_le<uint32_t>(in);
            in.ignore(6);
            bits = read_le<uint16_t>(in);
            in.ignore(len - 16 + (len & 1));
            have_fmt = true;
        } else if (!std::memcmp(tag, "data", 4)) {
            if (!have_fmt)
                throw DataError(path.string() + ": data chunk before fmt chunk");
            if (format != 1 || bits != 16 || channels == 0)
                throw DataError(path.string() + ": only 16-bit PCM is supported");
            const size_t frames = len / (2u * channels);
            Wav w;
            w.sample_rate = rate;
            w.samples.resize(frames);
            for (size_t i = 0; i < frames; ++i) {
                double acc = 0;
                for (uint16_t c = 0; c < channels; ++c)
                    acc += read_le<int16_t>(in) / 32768.0;
                w.samples[i] = acc / channels;
            }
            if (!in)
                throw DataError(path.string() + ": truncated sample data");
            return w;
        } else {
            in.ignore(len + (len & 1));
        }
    }
    throw DataError(path.string() + ": no data chunk");
}

void write_wav(const fs::path& path, const Wav& wav)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path.string());
    const uint32_t bytes = static_cast<uint32_t>(2 * wav.samples.size());
    out.write("RIFF", 4);
    write_le<uint32_t>(out, 36 + bytes);
    out.write("WAVEfmt ", 8);
    write_le<uint32_t>(out, 16);
    write_le<uint16_t>(out, 1);
    write_le<uint16_t>(out, 1);
    write_le<uint32_t>(out, static_cast<uint32_t>(wav.sample_rate));
    write_le<uint32_t>(out, static_cast<uint32_t>(2 * wav.sample_rate));
    write_le<uint16_t>(out, 2);
    write_le<uint16_t>(out, 16);
    out.write("data", 4);
    write_le<uint32_t>(out, bytes);
    for (double s : wav.samples)
        write_le<int16_t>(out, static_cast<int16_t>(std::lround(std::clamp(s, -1.0, 32767.0 / 32768.0) * 32768.0)));
}

} // namespace s2i::data
