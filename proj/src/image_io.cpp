#include "advpatch/image_io.hpp"

#include <png.h>
#include <jpeglib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "advpatch/io_util.hpp"

namespace advpatch {
namespace {

std::string lower_ext(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

struct PngReadState {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;
};

void png_read_from_memory(png_structp png, png_bytep out, png_size_t len) {
    auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
    if (st->pos + len > st->bytes.size()) {
        png_error(png, "unexpected end of PNG data");
    }
    std::memcpy(out, st->bytes.data() + st->pos, len);
    st->pos += len;
}

void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + len);
}

void png_flush_noop(png_structp) {}

struct PngInfo {
    Image image;
    std::optional<double> dpi;
};

PngInfo decode_png(const std::filesystem::path& path, bool pixels) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw std::runtime_error("'" + path.string() + "' is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("libpng initialization failed");
    }
    PngReadState state{bytes, 0};
    PngInfo result;
    std::vector<png_bytep> rows;
    std::vector<std::uint8_t> buffer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("corrupt PNG '" + path.string() + "'");
    }
    png_set_read_fn(png, &state, png_read_from_memory);
    png_read_info(png, info);
    png_uint_32 res_x = 0, res_y = 0;
    int unit = 0;
    if (png_get_pHYs(png, info, &res_x, &res_y, &unit) && unit == PNG_RESOLUTION_METER) {
        result.dpi = res_x * 0.0254;
    }
    if (pixels) {
        png_set_expand(png);
        png_set_strip_16(png);
        png_set_strip_alpha(png);
        png_set_gray_to_rgb(png);
        png_read_update_info(png, info);
        const png_uint_32 w = png_get_image_width(png, info);
        const png_uint_32 h = png_get_image_height(png, info);
        const std::size_t rowbytes = png_get_rowbytes(png, info);
        if (rowbytes != static_cast<std::size_t>(w) * 3) {
            longjmp(png_jmpbuf(png), 1);
        }
        buffer.resize(rowbytes * h);
        rows.resize(h);
        for (png_uint_32 y = 0; y < h; ++y) {
            rows[y] = buffer.data() + y * rowbytes;
        }
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
        result.image = Image(static_cast<int>(h), static_cast<int>(w), 3);
        std::transform(buffer.begin(), buffer.end(), result.image.values().begin(),
                       [](std::uint8_t v) { return v / 255.0; });
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return result;
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

Image decode_jpeg(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    jpeg_decompress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    std::vector<std::uint8_t> buffer;
    int w = 0, h = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw std::runtime_error("corrupt JPEG '" + path.string() + "'");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    w = static_cast<int>(cinfo.output_width);
    h = static_cast<int>(cinfo.output_height);
    buffer.resize(static_cast<std::size_t>(w) * h * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = buffer.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    Image img(h, w, 3);
    std::transform(buffer.begin(), buffer.end(), img.values().begin(),
                   [](std::uint8_t v) { return v / 255.0; });
    return img;
}

}  // namespace

bool is_image_file(const std::filesystem::path& path) {
    const std::string ext = lower_ext(path);
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

Image read_image(const std::filesystem::path& path) {
    const std::string ext = lower_ext(path);
    if (ext == ".png") {
        return decode_png(path, true).image;
    }
    if (ext == ".jpg" || ext == ".jpeg") {
        return decode_jpeg(path);
    }
    throw std::runtime_error("unsupported image type '" + path.string() + "'");
}

std::optional<double> read_png_dpi(const std::filesystem::path& path) { return decode_png(path, false).dpi; }

void write_png(const std::filesystem::path& path, const Image& image, std::optional<double> dpi) {
    if (image.channels() != 3 || image.empty()) {
        throw std::invalid_argument("write_png expects a non-empty RGB image");
    }
    std::vector<std::uint8_t> pixels(image.size());
    std::transform(image.values().begin(), image.values().end(), pixels.begin(), [](double v) {
        return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    });
    std::vector<std::uint8_t> encoded;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("libpng initialization failed");
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.height()));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("PNG encoding failed for '" + path.string() + "'");
    }
    png_set_write_fn(png, &encoded, png_write_to_vector, png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()),
                 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    if (dpi) {
        const auto ppm = static_cast<png_uint_32>(std::lround(*dpi / 0.0254));
        png_set_pHYs(png, info, ppm, ppm, PNG_RESOLUTION_METER);
    }
    png_write_info(png, info);
    for (int y = 0; y < image.height(); ++y) {
        rows[y] = pixels.data() + static_cast<std::size_t>(y) * image.width() * 3;
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    write_file_atomic(path, encoded);
}

}  // namespace advpatch
