#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "t2i/errors.hpp"
#include "t2i/rng.hpp"
#include "t2i/textdata.hpp"

namespace fs = std::filesystem;

namespace t2i {

namespace {

const std::array<std::uint8_t, 3> kBackground{18, 18, 24};

// Colour and shape words are substituted for {c} and {s}, size words for {z}.
// Attribute words always land within the first few tokens so truncation to
// the default max_len never removes them.
const std::array<const char*, 10> kTemplates{
    "একটি {c} {s}।",
    "ছবিতে একটি {c} রঙের {s} আছে।",
    "কালো পটভূমিতে {c} {s}।",
    "এটি একটি {z} {c} {s}।",
    "{c} রঙের একটি {z} {s} দেখা যাচ্ছে।",
    "একটি {s} যার রং {c}।",
    "অন্ধকার পটভূমির উপর একটি {z} {c} {s}।",
    "{s}, রং {c}, আকারে {z}।",
    "ছবির মধ্যে একটি {c} {s} রয়েছে।",
    "{z} আকারের {c} {s}।",
};

std::string fill_template(std::string text, const std::string& c, const std::string& s, const std::string& z) {
  auto replace = [&text](const std::string& key, const std::string& value) {
    for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
      text.replace(pos, key.size(), value);
    }
  };
  replace("{c}", c);
  replace("{s}", s);
  replace("{z}", z);
  return text;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

const std::array<std::uint8_t, 3>& toy_background() { return kBackground; }

ToySpec default_toy_spec(std::int64_t n_images, std::uint64_t seed) {
  ToySpec spec;
  spec.n_images = n_images;
  spec.seed = seed;
  spec.colors = {
      {"লাল", {220, 40, 40}},    {"সবুজ", {40, 180, 60}},    {"নীল", {50, 90, 230}},
      {"হলুদ", {235, 220, 50}},  {"কমলা", {245, 140, 30}},   {"বেগুনি", {150, 60, 200}},
      {"গোলাপি", {245, 130, 190}}, {"সাদা", {240, 240, 240}},
  };
  return spec;
}

std::string shape_word(ToyShape shape) {
  switch (shape) {
    case ToyShape::circle: return "বৃত্ত";
    case ToyShape::square: return "বর্গ";
    case ToyShape::triangle: return "ত্রিভুজ";
  }
  return {};
}

std::string shape_name(ToyShape shape) {
  switch (shape) {
    case ToyShape::circle: return "circle";
    case ToyShape::square: return "square";
    case ToyShape::triangle: return "triangle";
  }
  return {};
}

bool toy_covers(ToyShape shape, int cx, int cy, int half, int x, int y) {
  const int dx = x - cx, dy = y - cy;
  switch (shape) {
    case ToyShape::circle: return dx * dx + dy * dy <= half * half;
    case ToyShape::square: return std::abs(dx) <= half && std::abs(dy) <= half;
    case ToyShape::triangle: return dy >= -half && dy <= half && 2 * std::abs(dx) <= dy + half;
  }
  return false;
}

std::vector<ToyItem> render_toy(const ToySpec& spec) {
  if (spec.n_images < 1) throw DatasetError("toy spec needs n_images >= 1");
  if (spec.shapes.empty() || spec.colors.empty()) throw DatasetError("toy spec needs shapes and colours");
  if (spec.image_size < 16) throw DatasetError("toy image_size must be >= 16");
  if (spec.captions_per_image < 1) throw DatasetError("toy captions_per_image must be >= 1");
  for (const auto& c : spec.colors)
    if (c.rgb == kBackground) throw DatasetError("toy colour collides with the background");

  const int size = spec.image_size;
  const int max_half = size * 5 / 16;
  const int min_half = size * 5 / 32;
  const auto n_shapes = static_cast<std::int64_t>(spec.shapes.size());
  const auto n_classes = n_shapes * static_cast<std::int64_t>(spec.colors.size());
  RngStream rng(spec.seed, "toy");

  std::vector<ToyItem> items;
  items.reserve(static_cast<std::size_t>(spec.n_images));
  for (std::int64_t i = 0; i < spec.n_images; ++i) {
    ToyItem it;
    char stem[32];
    std::snprintf(stem, sizeof stem, "toy_%05lld", static_cast<long long>(i));
    it.stem = stem;
    it.class_label = i % n_classes;
    it.color = static_cast<int>(it.class_label / n_shapes);
    it.shape = static_cast<int>(it.class_label % n_shapes);
    it.half = min_half + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_half - min_half + 1)));
    it.big = it.half >= (min_half + max_half + 1) / 2;
    const int lo = it.half + 1, hi = size - it.half - 2;
    it.cx = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
    it.cy = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));

    const ToyShape shape = spec.shapes[static_cast<std::size_t>(it.shape)];
    const auto& rgb = spec.colors[static_cast<std::size_t>(it.color)].rgb;
    it.image = Image(size, size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const auto& px = toy_covers(shape, it.cx, it.cy, it.half, x, y) ? rgb : kBackground;
        std::copy(px.begin(), px.end(), it.image.pixel(x, y));
      }

    const std::string cw = spec.colors[static_cast<std::size_t>(it.color)].word;
    const std::string sw = shape_word(shape);
    const std::string zw = it.big ? "বড়" : "ছোট";
    for (int k = 0; k < spec.captions_per_image; ++k) {
      const auto t = static_cast<std::size_t>((i + k) % static_cast<std::int64_t>(kTemplates.size()));
      it.captions.push_back(fill_template(kTemplates[t], cw, sw, zw));
    }
    items.push_back(std::move(it));
  }
  return items;
}

std::vector<ToyItem> gen_toy_dataset(const ToySpec& spec, const fs::path& dir) {
  auto items = render_toy(spec);
  try {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "captions");
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("cannot create dataset directory: ") + e.what());
  }
  std::string classes, truth = "stem\tcolor\tshape\tcx\tcy\thalf\tsize\n";
  for (const auto& it : items) {
    write_ppm(dir / "images" / (it.stem + ".ppm"), it.image);
    std::string text;
    for (const auto& c : it.captions) text += c + "\n";
    write_text(dir / "captions" / (it.stem + ".txt"), text);
    classes += it.stem + "\t" + std::to_string(it.class_label) + "\n";
    truth += it.stem + "\t" + spec.colors[static_cast<std::size_t>(it.color)].word + "\t" +
             shape_name(spec.shapes[static_cast<std::size_t>(it.shape)]) + "\t" + std::to_string(it.cx) + "\t" +
             std::to_string(it.cy) + "\t" + std::to_string(it.half) + "\t" + (it.big ? "big" : "small") + "\n";
  }
  write_text(dir / "classes.tsv", classes);
  write_text(dir / "toy.tsv", truth);
  return items;
}

}  // namespace t2i
