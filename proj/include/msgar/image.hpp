// Copyright (C) 2026 The msgar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "msgar/core.hpp"

namespace msgar {

/// 8-bit image, 1 (gray) or 3 (rgb) channels, row-major.
struct ImageU8 {
    int h = 0, w = 0, c = 1;
    std::vector<std::uint8_t> px;

    ImageU8() = default;
    ImageU8(int h_, int w_, int c_, std::uint8_t fill = 0)
        : h(h_), w(w_), c(c_), px(static_cast<std::size_t>(h_) * w_ * c_, fill) {
        if (c_ != 1 && c_ != 3) throw std::invalid_argument("ImageU8: channels must be 1 or 3");
    }

    std::uint8_t& at(int y, int x, int ch) {
        return px[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
    std::uint8_t at(int y, int x, int ch) const {
        return px[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
};

namespace detail {

inline void put_u32be(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

inline std::uint32_t get_u32be(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void append_chunk(std::string& out, const char type[4], const std::string& data) {
    put_u32be(out, static_cast<std::uint32_t>(data.size()));
    std::string body(type, 4);
    body += data;
    out += body;
    std::uint32_t crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                              static_cast<uInt>(body.size()));
    put_u32be(out, crc);
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail

/// Encodes an 8-bit gray or rgb image as a PNG byte string (filter 0 scanlines).
inline std::string encode_png(const ImageU8& img) {
    if (img.h <= 0 || img.w <= 0) throw std::invalid_argument("encode_png: empty image");
    std::string raw;
    const std::size_t stride = static_cast<std::size_t>(img.w) * img.c;
    raw.reserve((stride + 1) * img.h);
    for (int y = 0; y < img.h; ++y) {
        raw.push_back('\0');  // filter type 0
        raw.append(reinterpret_cast<const char*>(&img.px[y * stride]), stride);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("encode_png: deflate failed");

    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    detail::put_u32be(ihdr, static_cast<std::uint32_t>(img.w));
    detail::put_u32be(ihdr, static_cast<std::uint32_t>(img.h));
    ihdr.push_back(8);                            // bit depth
    ihdr.push_back(img.c == 1 ? '\0' : '\x02');   // color type: gray / truecolor
    ihdr.push_back('\0');                         // compression
    ihdr.push_back('\0');                         // filter method
    ihdr.push_back('\0');                         // no interlace
    detail::append_chunk(out, "IHDR", ihdr);
    detail::append_chunk(out, "IDAT",
                         std::string(reinterpret_cast<char*>(compressed.data()), bound));
    detail::append_chunk(out, "IEND", "");
    return out;
}

/// Decodes 8-bit gray or rgb PNGs (non-interlaced), handling all five scanline filters.
inline ImageU8 decode_png(const std::string& bytes) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data());
    const std::size_t n = bytes.size();
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (n < 8 || std::memcmp(p, sig, 8) != 0) throw std::runtime_error("decode_png: not a PNG");

    int w = 0, h = 0, channels = 0;
    std::string idat;
    std::size_t off = 8;
    bool seen_end = false;
    while (off + 8 <= n && !seen_end) {
        std::uint32_t len = detail::get_u32be(p + off);
        std::string type(reinterpret_cast<const char*>(p + off + 4), 4);
        if (off + 12 + len > n) throw std::runtime_error("decode_png: truncated chunk");
        const std::uint8_t* data = p + off + 8;
        if (type == "IHDR") {
            if (len != 13) throw std::runtime_error("decode_png: bad IHDR");
            w = static_cast<int>(detail::get_u32be(data));
            h = static_cast<int>(detail::get_u32be(data + 4));
            int depth = data[8], color = data[9], interlace = data[12];
            if (depth != 8) throw std::runtime_error("decode_png: only 8-bit supported");
            if (interlace != 0) throw std::runtime_error("decode_png: interlace unsupported");
            if (color == 0)
                channels = 1;
            else if (color == 2)
                channels = 3;
            else
                throw std::runtime_error("decode_png: only gray and rgb supported");
        } else if (type == "IDAT") {
            idat.append(reinterpret_cast<const char*>(data), len);
        } else if (type == "IEND") {
            seen_end = true;
        }
        off += 12 + len;
    }
    if (w <= 0 || h <= 0 || channels == 0) throw std::runtime_error("decode_png: missing IHDR");

    const std::size_t stride = static_cast<std::size_t>(w) * channels;
    std::vector<std::uint8_t> raw((stride + 1) * h);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    int zrc = uncompress(raw.data(), &raw_len, reinterpret_cast<const Bytef*>(idat.data()),
                         static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || raw_len != raw.size())
        throw std::runtime_error("decode_png: inflate failed");

    ImageU8 img(h, w, channels);
    const int bpp = channels;  // bytes per pixel at 8-bit depth
    std::vector<std::uint8_t> prior(stride, 0);
    for (int y = 0; y < h; ++y) {
        const std::uint8_t filter = raw[y * (stride + 1)];
        const std::uint8_t* src = &raw[y * (stride + 1) + 1];
        std::uint8_t* dst = &img.px[y * stride];
        for (std::size_t i = 0; i < stride; ++i) {
            int a = i >= static_cast<std::size_t>(bpp) ? dst[i - bpp] : 0;  // left
            int b = prior[i];                                              // up
            int cc = i >= static_cast<std::size_t>(bpp) ? prior[i - bpp] : 0;
            int x = src[i];
            switch (filter) {
                case 0: break;
                case 1: x += a; break;
                case 2: x += b; break;
                case 3: x += (a + b) / 2; break;
                case 4: x += detail::paeth(a, b, cc); break;
                default: throw std::runtime_error("decode_png: bad filter type");
            }
            dst[i] = static_cast<std::uint8_t>(x & 0xff);
        }
        std::memcpy(prior.data(), dst, stride);
    }
    return img;
}

inline void save_png(const std::filesystem::path& path, const ImageU8& img) {
    write_file_atomic(path, encode_png(img));
}

inline ImageU8 load_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

/// Image -> tensor with values in [0,255].
inline Tensor to_tensor(const ImageU8& img) {
    Tensor t(img.h, img.w, img.c);
    for (std::size_t i = 0; i < img.px.size(); ++i) t.v[i] = static_cast<double>(img.px[i]);
    return t;
}

/// Tensor -> image, rounding and clamping to [0,255].
inline ImageU8 to_image_u8(const Tensor& t) {
    if (t.c != 1 && t.c != 3) throw std::invalid_argument("to_image_u8: channels must be 1 or 3");
    ImageU8 img(t.h, t.w, t.c);
    for (std::size_t i = 0; i < t.v.size(); ++i) {
        double x = std::floor(t.v[i] + 0.5);
        img.px[i] = static_cast<std::uint8_t>(x < 0 ? 0 : (x > 255 ? 255 : x));
    }
    return img;
}

/// Grayscale view of an rgb image (rec601 luma); identity on single-channel input.
inline ImageU8 to_gray(const ImageU8& img) {
    if (img.c == 1) return img;
    ImageU8 g(img.h, img.w, 1);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double lum = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
            g.at(y, x, 0) = static_cast<std::uint8_t>(std::floor(lum + 0.5));
        }
    return g;
}

}  // namespace msgar
