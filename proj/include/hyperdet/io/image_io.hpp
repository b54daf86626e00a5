#pragma once

#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "hyperdet/core/error.hpp"
#include "hyperdet/core/image.hpp"

namespace hyperdet::io {

// ---------------------------------------------------------------------------
// PNG (via libpng); everything is decoded to 8-bit RGB, gray maps are written
// as 8-bit grayscale.

namespace detail_png {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail_png

inline Image load_png(const std::filesystem::path& path) {
    detail_png::FilePtr fp(std::fopen(path.c_str(), "rb"));
    require(bool(fp), errc::ingestion, "cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, errc::ingestion, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        fail(errc::ingestion, "png_create_info_struct failed");
    }
    std::vector<std::uint8_t> pixels;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(errc::ingestion, "corrupt PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const std::size_t h = png_get_image_height(png, info);
    const std::size_t w = png_get_image_width(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    pixels.resize(h * stride);
    rows.resize(h);
    for (std::size_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    return from_u8(pixels.data(), h, w, 3);
}

inline void save_png(const std::filesystem::path& path, const Image& img) {
    require(img.channels == 1 || img.channels == 3, errc::io,
            "save_png: expected 1 or 3 channels");
    detail_png::FilePtr fp(std::fopen(path.c_str(), "wb"));
    require(bool(fp), errc::io, "cannot create " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, errc::io, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        fail(errc::io, "png_create_info_struct failed");
    }
    std::vector<std::uint8_t> pixels = to_u8_buffer(img);
    std::vector<png_bytep> rows(img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        rows[y] = pixels.data() + y * img.width * img.channels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(errc::io, "PNG write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// JPEG (via libjpeg), in-memory codec so re-encode perturbations never touch
// disk. Encoding always uses 4:4:4 sampling for fidelity at high qualities.

namespace detail_jpeg {

struct ErrorMgr {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

inline void error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<ErrorMgr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, mgr->message);
    std::longjmp(mgr->jump, 1);
}

}  // namespace detail_jpeg

inline std::vector<std::uint8_t> encode_jpeg(const Image& img, int quality) {
    require(img.channels == 3, errc::io, "encode_jpeg: expected RGB");
    require(quality >= 1 && quality <= 100, errc::config, "jpeg quality must be in 1..100");
    std::vector<std::uint8_t> pixels = to_u8_buffer(img);

    jpeg_compress_struct cinfo;
    detail_jpeg::ErrorMgr err;
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = detail_jpeg::error_exit;

    unsigned char* buffer = nullptr;
    unsigned long buffer_size = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        if (buffer) free(buffer);
        fail(errc::io, std::string("JPEG encode failed: ") + err.message);
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buffer, &buffer_size);
    cinfo.image_width = JDIMENSION(img.width);
    cinfo.image_height = JDIMENSION(img.height);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    for (int c = 0; c < cinfo.num_components; ++c) {
        cinfo.comp_info[c].h_samp_factor = 1;  // 4:4:4
        cinfo.comp_info[c].v_samp_factor = 1;
    }
    jpeg_start_compress(&cinfo, TRUE);
    const std::size_t stride = img.width * 3;
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = pixels.data() + cinfo.next_scanline * stride;
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);

    std::vector<std::uint8_t> out(buffer, buffer + buffer_size);
    free(buffer);
    return out;
}

inline Image decode_jpeg(const std::uint8_t* data, std::size_t size) {
    jpeg_decompress_struct cinfo;
    detail_jpeg::ErrorMgr err;
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = detail_jpeg::error_exit;

    std::vector<std::uint8_t> pixels;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        fail(errc::ingestion, std::string("JPEG decode failed: ") + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, data, static_cast<unsigned long>(size));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    const std::size_t h = cinfo.output_height;
    const std::size_t w = cinfo.output_width;
    const std::size_t stride = w * std::size_t(cinfo.output_components);
    pixels.resize(h * stride);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = pixels.data() + cinfo.output_scanline * stride;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return from_u8(pixels.data(), h, w, 3);
}

inline Image decode_jpeg(const std::vector<std::uint8_t>& bytes) {
    return decode_jpeg(bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(bool(is), errc::ingestion, "cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(is),
                                     std::istreambuf_iterator<char>());
}

inline bool is_image_path(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    for (auto& ch : ext) ch = char(std::tolower(static_cast<unsigned char>(ch)));
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// Dispatch on magic bytes, not extension.
inline Image load_image(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    require(bytes.size() >= 8, errc::ingestion, "not an image: " + path.string());
    static const std::uint8_t png_magic[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (std::memcmp(bytes.data(), png_magic, 8) == 0) return load_png(path);
    if (bytes[0] == 0xff && bytes[1] == 0xd8) return decode_jpeg(bytes);
    fail(errc::ingestion, "unrecognized image format: " + path.string());
}

}  // namespace hyperdet::io
