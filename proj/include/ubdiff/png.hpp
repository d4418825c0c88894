#pragma once

#include <zlib.h>

#include <array>
#include <cstdint>
#include <fstream>
#include <vector>

#include "ubdiff/tensor.hpp"

namespace ubdiff {

namespace detail {

inline void png_be32(std::vector<std::uint8_t>& out, std::uint32_t x) {
    out.push_back(std::uint8_t(x >> 24));
    out.push_back(std::uint8_t(x >> 16));
    out.push_back(std::uint8_t(x >> 8));
    out.push_back(std::uint8_t(x));
}

inline void png_chunk(std::ofstream& f, const char type[4],
                      const std::vector<std::uint8_t>& payload) {
    std::vector<std::uint8_t> head;
    png_be32(head, std::uint32_t(payload.size()));
    f.write(reinterpret_cast<const char*>(head.data()), 4);
    std::vector<std::uint8_t> body(type, type + 4);
    body.insert(body.end(), payload.begin(), payload.end());
    f.write(reinterpret_cast<const char*>(body.data()), std::streamsize(body.size()));
    std::uint32_t crc = std::uint32_t(crc32(0, body.data(), uInt(body.size())));
    std::vector<std::uint8_t> tail;
    png_be32(tail, crc);
    f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace detail

// Minimal 8-bit RGB PNG writer (filter 0, fixed zlib level), byte-deterministic.
inline void write_png_rgb(const fs::path& path, int width, int height,
                          const std::vector<std::uint8_t>& rgb) {
    if (width < 1 || height < 1 || rgb.size() != std::size_t(width) * height * 3)
        throw std::invalid_argument("write_png_rgb: bad dimensions or buffer size");
    std::vector<std::uint8_t> raw;
    raw.reserve(std::size_t(height) * (std::size_t(width) * 3 + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);  // filter type none
        const std::uint8_t* row = rgb.data() + std::size_t(y) * width * 3;
        raw.insert(raw.end(), row, row + std::size_t(width) * 3);
    }
    uLongf zlen = compressBound(uLong(raw.size()));
    std::vector<std::uint8_t> z(zlen);
    if (compress2(z.data(), &zlen, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw std::runtime_error("write_png_rgb: zlib compression failed");
    z.resize(zlen);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    f.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<std::uint8_t> ihdr;
    detail::png_be32(ihdr, std::uint32_t(width));
    detail::png_be32(ihdr, std::uint32_t(height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type RGB
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace
    detail::png_chunk(f, "IHDR", ihdr);
    detail::png_chunk(f, "IDAT", z);
    detail::png_chunk(f, "IEND", {});
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

// Five-anchor viridis-like colormap over [0, 1].
inline std::array<std::uint8_t, 3> heat_color(float u) {
    static const float a[5][3] = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140},
                                  {94, 201, 98}, {253, 231, 37}};
    u = std::clamp(u, 0.0f, 1.0f) * 4.0f;
    const int k = std::min(3, int(u));
    const float t = u - float(k);
    std::array<std::uint8_t, 3> c{};
    for (int i = 0; i < 3; ++i)
        c[i] = std::uint8_t(std::lround(a[k][i] + t * (a[k + 1][i] - a[k][i])));
    return c;
}

// 2-D array -> heatmap PNG with an explicit shared color scale.
inline void write_heatmap(const fs::path& path, const Tensor& img, float lo, float hi) {
    if (img.shape.size() != 2) throw std::invalid_argument("write_heatmap expects a 2-D array");
    if (!(hi > lo)) throw std::invalid_argument("write_heatmap: color scale must have hi > lo");
    const int H = img.shape[0], W = img.shape[1];
    std::vector<std::uint8_t> rgb(std::size_t(H) * W * 3);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const auto c = heat_color((img.at(y, x) - lo) / (hi - lo));
            for (int i = 0; i < 3; ++i) rgb[(std::size_t(y) * W + x) * 3 + i] = c[i];
        }
    write_png_rgb(path, W, H, rgb);
}

}  // namespace ubdiff
