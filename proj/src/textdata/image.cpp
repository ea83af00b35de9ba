#include "t2i/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "t2i/errors.hpp"

namespace t2i {

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

int read_header_int(std::istream& in, const std::filesystem::path& path) {
  int c = in.peek();
  while (c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '#') {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int value = 0;
  if (!(in >> value)) throw IoError("malformed PPM header in " + path.string());
  return value;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw IoError("not a binary PPM: " + path.string());
  const int w = read_header_int(in, path);
  const int h = read_header_int(in, path);
  const int maxval = read_header_int(in, path);
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported PPM geometry in " + path.string());
  in.get();
  Image image(w, h);
  in.read(reinterpret_cast<char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (!in) throw IoError("truncated PPM " + path.string());
  return image;
}

Tensor images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const int w = images[0].width, h = images[0].height;
  std::vector<double> values(images.size() * 3 * static_cast<std::size_t>(w) * h);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& im = images[b];
    if (im.width != w || im.height != h) throw ShapeError("images_to_tensor: mixed image sizes");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          values[((b * 3 + c) * h + y) * w + x] = im.pixel(x, y)[c] / 127.5 - 1.0;
  }
  return Tensor({static_cast<std::int64_t>(images.size()), 3, h, w}, std::move(values));
}

Image tensor_to_image(const Tensor& batch, std::int64_t index) {
  if (batch.rank() != 4 || batch.dim(1) != 3) throw ShapeError("tensor_to_image: expected (B, 3, H, W)");
  const int h = static_cast<int>(batch.dim(2)), w = static_cast<int>(batch.dim(3));
  Image image(w, h);
  const auto v = batch.values();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double s = std::round((v[((index * 3 + c) * h + y) * w + x] + 1.0) * 127.5);
        image.pixel(x, y)[c] = static_cast<std::uint8_t>(std::clamp(s, 0.0, 255.0));
      }
  return image;
}

Image tile_grid(std::span<const Image> tiles, int columns, int gutter) {
  if (tiles.empty() || columns <= 0) throw ShapeError("tile_grid: nothing to tile");
  const int tw = tiles[0].width, th = tiles[0].height;
  const int rows = (static_cast<int>(tiles.size()) + columns - 1) / columns;
  Image grid(columns * tw + (columns + 1) * gutter, rows * th + (rows + 1) * gutter);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const int ox = gutter + static_cast<int>(i % columns) * (tw + gutter);
    const int oy = gutter + static_cast<int>(i / columns) * (th + gutter);
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x) std::copy_n(tiles[i].pixel(x, y), 3, grid.pixel(ox + x, oy + y));
  }
  return grid;
}

Image downsample(const Image& image, int factor) {
  if (factor <= 0 || image.width % factor || image.height % factor) {
    throw ShapeError("downsample: size not divisible by factor");
  }
  Image out(image.width / factor, image.height / factor);
  const int area = factor * factor;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c) {
        int acc = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) acc += image.pixel(x * factor + dx, y * factor + dy)[c];
        out.pixel(x, y)[c] = static_cast<std::uint8_t>((acc + area / 2) / area);
      }
  return out;
}

}  // namespace t2i
