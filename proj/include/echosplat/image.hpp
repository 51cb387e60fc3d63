// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <png.h>

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "echosplat/common.hpp"

namespace echosplat {

// Row-major single-channel image, values nominally in [0,1] for intensity.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> px;

    Image() = default;
    Image(int w, int h, double fill = 0.0)
        : width(w), height(h), px(static_cast<std::size_t>(w) * h, fill) {}

    double& at(int x, int y) { return px[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return px[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return px.size(); }
    bool same_dims(const Image& o) const { return width == o.width && height == o.height; }
};

// 8-bit grayscale PNG. Values clamped to [0,1], scaled by 255 and rounded
// half-to-even before quantization.
inline void write_png_gray8(const std::string& path, const Image& img) {
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError(IoError::Kind::open_failed, "cannot open for write: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError(IoError::Kind::bad_content, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError(IoError::Kind::bad_content, "png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(IoError::Kind::bad_content, "png write error: " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<std::size_t>(img.width));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            // nearbyint with the default FP environment rounds half to even
            row[x] = static_cast<png_byte>(std::nearbyint(clamp01(img.at(x, y)) * 255.0));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline Image read_png_gray8(const std::string& path) {
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError(IoError::Kind::open_failed, "cannot open: " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        throw IoError(IoError::Kind::bad_magic, "not a PNG file: " + path);
    }

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError(IoError::Kind::bad_content, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError(IoError::Kind::bad_content, "png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(IoError::Kind::bad_content, "png read error: " + path);
    }

    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    // Normalize any input to 8-bit single-channel gray.
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    const png_byte color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray(png, 1, -1.0, -1.0);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    Image img(w, h);
    std::vector<png_byte> row(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) img.at(x, y) = row[x] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

// Lossless float image: magic "UGSI", u32 width, u32 height (little endian),
// then row-major 32-bit IEEE floats.
inline void write_ugsi(const std::string& path, const Image& img) {
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError(IoError::Kind::open_failed, "cannot open for write: " + path);

    const char magic[4] = {'U', 'G', 'S', 'I'};
    const std::uint32_t w = static_cast<std::uint32_t>(img.width);
    const std::uint32_t h = static_cast<std::uint32_t>(img.height);
    std::fwrite(magic, 1, 4, fp.get());
    std::fwrite(&w, 4, 1, fp.get());
    std::fwrite(&h, 4, 1, fp.get());
    std::vector<float> row(static_cast<std::size_t>(img.width));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) row[x] = static_cast<float>(img.at(x, y));
        if (std::fwrite(row.data(), 4, row.size(), fp.get()) != row.size())
            throw IoError(IoError::Kind::bad_content, "short write: " + path);
    }
}

inline Image read_ugsi(const std::string& path) {
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError(IoError::Kind::open_failed, "cannot open: " + path);

    char magic[4];
    if (std::fread(magic, 1, 4, fp.get()) != 4)
        throw IoError(IoError::Kind::truncated, "truncated header: " + path);
    if (std::memcmp(magic, "UGSI", 4) != 0)
        throw IoError(IoError::Kind::bad_magic, "bad magic in " + path);
    std::uint32_t w = 0, h = 0;
    if (std::fread(&w, 4, 1, fp.get()) != 1 || std::fread(&h, 4, 1, fp.get()) != 1)
        throw IoError(IoError::Kind::truncated, "truncated header: " + path);

    Image img(static_cast<int>(w), static_cast<int>(h));
    std::vector<float> row(w);
    for (std::uint32_t y = 0; y < h; ++y) {
        if (std::fread(row.data(), 4, w, fp.get()) != w)
            throw IoError(IoError::Kind::truncated, "truncated pixel data: " + path);
        for (std::uint32_t x = 0; x < w; ++x) img.at(static_cast<int>(x), static_cast<int>(y)) = row[x];
    }
    return img;
}

}  // namespace echosplat
