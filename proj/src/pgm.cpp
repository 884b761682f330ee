#include "ptychoforge/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace ptychoforge {

void export_pgm(const RealImage2D& image, const std::filesystem::path& path, double min, double max) {
  if (!(max > min)) throw ArgumentError("export_pgm: max must exceed min");
  std::string bytes = "P5\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n65535\n";
  bytes.reserve(bytes.size() + 2 * image.size());
  const double scale = 65535.0 / (max - min);
  for (double v : image.values()) {
    double q = std::isnan(v) ? 0.0 : std::clamp((v - min) * scale, 0.0, 65535.0);
    const auto s = static_cast<std::uint16_t>(std::lround(q));
    bytes.push_back(static_cast<char>(s >> 8));
    bytes.push_back(static_cast<char>(s & 0xff));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Image2D<std::uint16_t> read_pgm16(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path.string());
  std::string magic;
  std::size_t width = 0;
  std::size_t height = 0;
  unsigned maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (!in || magic != "P5" || maxval != 65535) throw FormatError("not a 16-bit P5 file: " + path.string(), 0);
  in.get();  // single whitespace before the raster
  std::vector<unsigned char> raw(2 * width * height);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw FormatError("truncated PGM raster: " + path.string(), static_cast<std::uint64_t>(in.gcount()));
  }
  Image2D<std::uint16_t> img(height, width);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
  }
  return img;
}

}  // namespace ptychoforge
