#include "vod/image.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "vod/error.hpp"

namespace vod {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  *what = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

class PngReader {
 public:
  explicit PngReader(const std::filesystem::path& path) : path_(path), file_(open_file(path, "rb")) {
    png_byte sig[8];
    if (std::fread(sig, 1, sizeof sig, file_.get()) != sizeof sig || png_sig_cmp(sig, 0, 8) != 0) {
      throw IoError("'" + path.string() + "' is not a PNG file");
    }
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error_, png_error_fn, png_warning_fn);
    info_ = png_ ? png_create_info_struct(png_) : nullptr;
    if (!png_ || !info_) throw IoError("libpng initialization failed");
  }

  ~PngReader() { png_destroy_read_struct(&png_, &info_, nullptr); }

  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;

  ImageSize header() {
    if (setjmp(png_jmpbuf(png_))) fail();
    png_init_io(png_, file_.get());
    png_set_sig_bytes(png_, 8);
    png_read_info(png_, info_);
    return {static_cast<int>(png_get_image_width(png_, info_)),
            static_cast<int>(png_get_image_height(png_, info_))};
  }

  Image pixels(ImageSize size) {
    Image img(size.width, size.height);
    std::vector<png_bytep> rows(size.height);
    for (int y = 0; y < size.height; ++y) rows[y] = img.pixel(0, y);
    if (setjmp(png_jmpbuf(png_))) fail();
    png_set_expand(png_);
    png_set_strip_16(png_);
    png_set_strip_alpha(png_);
    png_set_gray_to_rgb(png_);
    png_set_interlace_handling(png_);
    png_read_update_info(png_, info_);
    if (png_get_rowbytes(png_, info_) != static_cast<png_size_t>(size.width) * 3) {
      throw IoError("'" + path_.string() + "': unsupported PNG layout");
    }
    png_read_image(png_, rows.data());
    png_read_end(png_, nullptr);
    return img;
  }

 private:
  [[noreturn]] void fail() { throw IoError("'" + path_.string() + "': " + error_); }

  std::filesystem::path path_;
  FilePtr file_;
  std::string error_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

}  // namespace

Image read_png(const std::filesystem::path& path) {
  PngReader reader(path);
  const ImageSize size = reader.header();
  return reader.pixels(size);
}

ImageSize read_png_size(const std::filesystem::path& path) { return PngReader(path).header(); }

void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.width < 1 || img.height < 1) throw IoError("cannot write empty image " + path.string());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file = open_file(path, "wb");
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = const_cast<png_bytep>(img.pixel(0, y));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("'" + path.string() + "': " + error);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image crop(const Image& img, const PixelRect& r) {
  Image out(r.width(), r.height());
  for (int y = 0; y < out.height; ++y) {
    const std::uint8_t* src = img.pixel(r.x_min, r.y_min + y);
    std::copy(src, src + static_cast<std::size_t>(out.width) * 3, out.pixel(0, y));
  }
  return out;
}

}  // namespace vod
