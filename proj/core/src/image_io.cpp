#include "npath/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace npath {
namespace {

struct PnmHeader {
  std::string magic;
  std::size_t width = 0, height = 0;
  int maxval = 0;
};

PnmHeader read_header(std::istream& in, const std::filesystem::path& path) {
  PnmHeader h;
  auto next_token = [&]() {
    std::string tok;
    while (in) {
      const int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    in >> tok;
    return tok;
  };
  h.magic = next_token();
  try {
    h.width = std::stoul(next_token());
    h.height = std::stoul(next_token());
    h.maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    fail(path.string() + ": malformed pixmap header");
  }
  in.get();  // single whitespace before raster
  check(h.width > 0 && h.height > 0, path.string() + ": empty pixmap");
  check(h.maxval > 0 && h.maxval < 256, path.string() + ": only 8-bit pixmaps are supported");
  return h;
}

unsigned char to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

}  // namespace

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(static_cast<bool>(in), "cannot open " + path.string());
  const PnmHeader h = read_header(in, path);
  check(h.magic == "P6", path.string() + ": expected a P6 pixmap, got " + h.magic);
  std::vector<unsigned char> raster(h.width * h.height * 3);
  in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  check(in.gcount() == static_cast<std::streamsize>(raster.size()), path.string() + ": truncated raster");
  Tensor img({3, h.height, h.width});
  for (std::size_t y = 0; y < h.height; ++y)
    for (std::size_t x = 0; x < h.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = raster[(y * h.width + x) * 3 + c] / static_cast<double>(h.maxval);
  return img;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  check(image.rank() == 3 && image.dim(0) == 3, "write_ppm expects a (3, H, W) image");
  const std::size_t H = image.dim(1), W = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  check(static_cast<bool>(out), "cannot write " + path.string());
  out << "P6\n" << W << ' ' << H << "\n255\n";
  std::vector<unsigned char> raster(W * H * 3);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) raster[(y * W + x) * 3 + c] = to_byte(image.at(c, y, x));
  out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
}

Tensor read_pgm_mask(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(static_cast<bool>(in), "cannot open " + path.string());
  const PnmHeader h = read_header(in, path);
  check(h.magic == "P5", path.string() + ": expected a P5 graymap, got " + h.magic);
  std::vector<unsigned char> raster(h.width * h.height);
  in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  check(in.gcount() == static_cast<std::streamsize>(raster.size()), path.string() + ": truncated raster");
  Tensor mask({h.height, h.width});
  for (std::size_t i = 0; i < raster.size(); ++i) mask[i] = raster[i] ? 1.0 : 0.0;
  return mask;
}

void write_pgm_mask(const std::filesystem::path& path, const Tensor& mask) {
  check(mask.rank() == 2, "write_pgm_mask expects an (H, W) mask");
  std::ofstream out(path, std::ios::binary);
  check(static_cast<bool>(out), "cannot write " + path.string());
  out << "P5\n" << mask.dim(1) << ' ' << mask.dim(0) << "\n255\n";
  std::vector<unsigned char> raster(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) raster[i] = mask[i] != 0.0 ? 255 : 0;
  out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
}

std::vector<Tensor> Dataset::images() const {
  std::vector<Tensor> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.image);
  return out;
}

Dataset Dataset::of_class(int label) const {
  Dataset d;
  d.class_count = class_count;
  for (const auto& it : items)
    if (it.label == label) d.items.push_back(it);
  return d;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto index = dir / "labels.txt";
  std::ifstream in(index);
  check(static_cast<bool>(in), "dataset index not found: " + index.string());
  Dataset d;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    LabeledImage item;
    check(static_cast<bool>(ls >> item.name >> item.label) && item.label >= 0,
          index.string() + ":" + std::to_string(lineno) + ": expected '<file> <label>'");
    item.image = read_ppm(dir / item.name);
    d.class_count = std::max(d.class_count, item.label + 1);
    d.items.push_back(std::move(item));
  }
  check(!d.items.empty(), "dataset " + dir.string() + " is empty");
  return d;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "labels.txt");
  check(static_cast<bool>(index), "cannot write " + (dir / "labels.txt").string());
  for (const auto& it : dataset.items) {
    write_ppm(dir / it.name, it.image);
    index << it.name << ' ' << it.label << '\n';
  }
}

ChannelStats dataset_stats(const std::vector<Tensor>& images) {
  check(!images.empty(), "dataset_stats: no images");
  const std::size_t C = images.front().dim(0);
  ChannelStats s;
  s.mean.assign(C, 0.0);
  s.std.assign(C, 0.0);
  std::vector<double> count(C, 0.0);
  for (const auto& img : images) {
    check(img.rank() == 3 && img.dim(0) == C, "dataset_stats: inconsistent channel count");
    const std::size_t plane = img.dim(1) * img.dim(2);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < plane; ++i) s.mean[c] += img[c * plane + i];
      count[c] += static_cast<double>(plane);
    }
  }
  for (std::size_t c = 0; c < C; ++c) s.mean[c] /= count[c];
  for (const auto& img : images) {
    const std::size_t plane = img.dim(1) * img.dim(2);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = img[c * plane + i] - s.mean[c];
        s.std[c] += d * d;
      }
  }
  for (std::size_t c = 0; c < C; ++c) s.std[c] = std::sqrt(s.std[c] / count[c]);
  return s;
}

ChannelStats image_stats(const Tensor& image) { return dataset_stats({image}); }

}  // namespace npath
