#include "stylenerf/image_io.hpp"

#include "stylenerf/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>

#include <jpeglib.h>

namespace snerf {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArgumentError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Image decode_png(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw ArgumentError("bad png " + path + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.rgb.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ArgumentError("bad png " + path + ": " + img.message);
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_fail(j_common_ptr cinfo) {
  auto* e = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(e->jump, 1);
}

Image decode_jpeg(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_fail;
  Image out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ArgumentError("bad jpeg " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = static_cast<int>(cinfo.output_width);
  out.height = static_cast<int>(cinfo.output_height);
  out.rgb.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

Image load_image(const std::string& path) {
  const auto bytes = read_file(path);
  if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' &&
      bytes[3] == 'G') {
    return decode_png(bytes, path);
  }
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return decode_jpeg(bytes, path);
  }
  throw ArgumentError("unsupported image format: " + path);
}

std::vector<std::uint8_t> encode_jpeg(const Image& img, int quality) {
  if (img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3 || img.width < 1) {
    throw ArgumentError("image buffer size mismatch");
  }
  jpeg_compress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_fail;
  unsigned char* buf = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buf);
    throw ArgumentError("jpeg encoding failed");
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buf, &size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, std::clamp(quality, 1, 100), TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPROW>(img.rgb.data() + cinfo.next_scanline * img.width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<std::uint8_t> out(buf, buf + size);
  jpeg_destroy_compress(&cinfo);
  std::free(buf);
  return out;
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
    throw ArgumentError("image buffer size mismatch");
  }
  png_image p;
  std::memset(&p, 0, sizeof p);
  p.version = PNG_IMAGE_VERSION;
  p.width = static_cast<png_uint_32>(img.width);
  p.height = static_cast<png_uint_32>(img.height);
  p.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&p, nullptr, &size, 0, img.rgb.data(), 0, nullptr)) {
    throw ArgumentError(std::string("png encode failed: ") + p.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&p, out.data(), &size, 0, img.rgb.data(), 0, nullptr)) {
    throw ArgumentError(std::string("png encode failed: ") + p.message);
  }
  out.resize(size);
  return out;
}

void save_png(const std::string& path, const Image& img) {
  const auto bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ArgumentError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image center_crop(const Image& img) {
  const int s = std::min(img.width, img.height);
  const int x0 = (img.width - s) / 2;
  const int y0 = (img.height - s) / 2;
  Image out;
  out.width = out.height = s;
  out.rgb.resize(static_cast<std::size_t>(s) * s * 3);
  for (int y = 0; y < s; ++y) {
    std::memcpy(out.rgb.data() + static_cast<std::size_t>(y) * s * 3,
                img.rgb.data() + (static_cast<std::size_t>(y + y0) * img.width + x0) * 3,
                static_cast<std::size_t>(s) * 3);
  }
  return out;
}

namespace {

// One axis of the resampling: weights from source samples to each target sample.
std::vector<std::vector<std::pair<int, double>>> axis_weights(int src, int dst) {
  std::vector<std::vector<std::pair<int, double>>> w(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    auto& row = w[static_cast<std::size_t>(i)];
    if (scale > 1.0) {
      const double a = i * scale, b = (i + 1) * scale;
      for (int s = static_cast<int>(std::floor(a)); s < static_cast<int>(std::ceil(b)); ++s) {
        const double overlap = std::min(b, s + 1.0) - std::max(a, static_cast<double>(s));
        if (overlap > 0) row.emplace_back(std::min(s, src - 1), overlap / scale);
      }
    } else {
      const double c = (i + 0.5) * scale - 0.5;
      const int s0 = static_cast<int>(std::floor(c));
      const double t = c - s0;
      row.emplace_back(std::clamp(s0, 0, src - 1), 1.0 - t);
      row.emplace_back(std::clamp(s0 + 1, 0, src - 1), t);
    }
  }
  return w;
}

}  // namespace

Image resize(const Image& img, int width, int height) {
  if (width < 1 || height < 1) throw ArgumentError("resize target must be positive");
  const auto wx = axis_weights(img.width, width);
  const auto wy = axis_weights(img.height, height);
  std::vector<double> tmp(static_cast<std::size_t>(img.height) * width * 3, 0.0);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < width; ++x)
      for (const auto& [s, w] : wx[static_cast<std::size_t>(x)])
        for (int c = 0; c < 3; ++c)
          tmp[(static_cast<std::size_t>(y) * width + x) * 3 + c] +=
              w * img.rgb[(static_cast<std::size_t>(y) * img.width + s) * 3 + c];
  Image out;
  out.width = width;
  out.height = height;
  out.rgb.resize(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (const auto& [s, w] : wy[static_cast<std::size_t>(y)])
          acc += w * tmp[(static_cast<std::size_t>(s) * width + x) * 3 + c];
        out.rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c] =
            static_cast<std::uint8_t>(std::clamp(std::lround(acc), 0L, 255L));
      }
  return out;
}

ad::Mat image_to_grid(const Image& img) {
  if (img.width != img.height) throw ArgumentError("image must be square");
  ad::Mat m(static_cast<ad::Index>(img.width) * img.height, 3);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = img.rgb[static_cast<std::size_t>(i)] / 127.5 - 1.0;
  return m;
}

Image grid_to_image(const ad::Mat& grid, int res, int item) {
  const ad::Index per = static_cast<ad::Index>(res) * res;
  if (grid.cols() != 3 || grid.rows() < per * (item + 1)) throw ArgumentError("grid shape mismatch");
  Image out;
  out.width = out.height = res;
  out.rgb.resize(static_cast<std::size_t>(per) * 3);
  for (ad::Index p = 0; p < per; ++p)
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp((grid(item * per + p, c) + 1.0) * 127.5, 0.0, 255.0);
      out.rgb[static_cast<std::size_t>(p * 3 + c)] = static_cast<std::uint8_t>(std::lround(v));
    }
  return out;
}

Image scalar_to_image(const ad::Mat& values, int res, double lo, double hi, int item) {
  const ad::Index per = static_cast<ad::Index>(res) * res;
  if (values.rows() < per * (item + 1)) throw ArgumentError("grid shape mismatch");
  Image out;
  out.width = out.height = res;
  out.rgb.resize(static_cast<std::size_t>(per) * 3);
  const double span = hi > lo ? hi - lo : 1.0;
  for (ad::Index p = 0; p < per; ++p) {
    const double v = std::clamp((values(item * per + p, 0) - lo) / span, 0.0, 1.0) * 255.0;
    const auto b = static_cast<std::uint8_t>(std::lround(v));
    for (int c = 0; c < 3; ++c) out.rgb[static_cast<std::size_t>(p * 3 + c)] = b;
  }
  return out;
}

}  // namespace snerf
