#pragma once

#include "enerf/common.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace enerf::img {

// Row-major RGB, values in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<real> rgb;

    static Image filled(int w, int h, const Vec3& color) {
        Image im;
        im.width = w;
        im.height = h;
        im.rgb.resize(static_cast<size_t>(w) * h * 3);
        for (int i = 0; i < w * h; ++i) {
            im.rgb[i * 3 + 0] = color[0];
            im.rgb[i * 3 + 1] = color[1];
            im.rgb[i * 3 + 2] = color[2];
        }
        return im;
    }

    Vec3 pixel(int x, int y) const {
        const size_t i = (static_cast<size_t>(y) * width + x) * 3;
        return Vec3(rgb[i], rgb[i + 1], rgb[i + 2]);
    }

    void set_pixel(int x, int y, const Vec3& c) {
        const size_t i = (static_cast<size_t>(y) * width + x) * 3;
        rgb[i] = c[0];
        rgb[i + 1] = c[1];
        rgb[i + 2] = c[2];
    }

    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

inline void write_png(const Image& im, const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw EnerfError("png: cannot open " + path + " for write");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw EnerfError("png: write failed for " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, im.width, im.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(static_cast<size_t>(im.width) * 3);
    for (int y = 0; y < im.height; ++y) {
        for (int x = 0; x < im.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                real v = im.rgb[(static_cast<size_t>(y) * im.width + x) * 3 + c];
                v = std::clamp(v, real(0), real(1));
                row[static_cast<size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline Image read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw EnerfError("png: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        std::fclose(fp);
        throw EnerfError("png: read failed for " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    Image im;
    im.width = static_cast<int>(png_get_image_width(png, info));
    im.height = static_cast<int>(png_get_image_height(png, info));
    im.rgb.resize(static_cast<size_t>(im.width) * im.height * 3);
    std::vector<unsigned char> row(static_cast<size_t>(im.width) * 3);
    for (int y = 0; y < im.height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < im.width * 3; ++x) {
            im.rgb[static_cast<size_t>(y) * im.width * 3 + x] = row[static_cast<size_t>(x)] / 255.0;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return im;
}

// Portable float map, color variant, little-endian (negative scale).
inline void write_pfm(const Image& im, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw EnerfError("pfm: cannot open " + path + " for write");
    os << "PF\n" << im.width << " " << im.height << "\n-1.0\n";
    // PFM scanlines run bottom to top.
    for (int y = im.height - 1; y >= 0; --y) {
        for (int x = 0; x < im.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                float v = static_cast<float>(im.rgb[(static_cast<size_t>(y) * im.width + x) * 3 + c]);
                os.write(reinterpret_cast<const char*>(&v), 4);
            }
        }
    }
    if (!os) throw EnerfError("pfm: write failed for " + path);
}

inline Image read_pfm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw EnerfError("pfm: cannot open " + path);
    std::string tag;
    is >> tag;
    if (tag != "PF") throw EnerfError("pfm: not a color PFM: " + path);
    Image im;
    real scale;
    is >> im.width >> im.height >> scale;
    is.get();  // single whitespace after header
    if (scale > 0) throw EnerfError("pfm: big-endian files unsupported: " + path);
    im.rgb.resize(static_cast<size_t>(im.width) * im.height * 3);
    for (int y = im.height - 1; y >= 0; --y) {
        for (int x = 0; x < im.width * 3; ++x) {
            float v;
            is.read(reinterpret_cast<char*>(&v), 4);
            im.rgb[static_cast<size_t>(y) * im.width * 3 + x] = v;
        }
    }
    if (!is) throw EnerfError("pfm: truncated file: " + path);
    return im;
}

}  // namespace enerf::img
