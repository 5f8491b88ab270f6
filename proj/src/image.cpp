#include "gazemil/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "gazemil/errors.hpp"

namespace gazemil {

Image8 quantize(const ImageF& image) {
  Image8 out(image.width, image.height, image.channels);
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    double v = std::clamp(image.data[i], 0.0, 1.0);
    out.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

void write_pnm(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw InputError("write_pnm: unsupported channel count " +
                     std::to_string(image.channels));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << (image.channels == 1 ? "P5" : "P6") << '\n'
     << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.data.data()),
           static_cast<std::streamsize>(image.data.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Image8 read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  std::string magic = next_token(is);
  int channels = magic == "P5" ? 1 : magic == "P6" ? 3 : 0;
  if (channels == 0) throw IoError("not a binary PGM/PPM file: " + path.string());
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(is));
    h = std::stoi(next_token(is));
    maxval = std::stoi(next_token(is));
  } catch (const std::exception&) {
    throw IoError("malformed PNM header: " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw IoError("unsupported PNM geometry or depth: " + path.string());
  }
  Image8 image(w, h, channels);
  is.read(reinterpret_cast<char*>(image.data.data()),
          static_cast<std::streamsize>(image.data.size()));
  if (is.gcount() != static_cast<std::streamsize>(image.data.size())) {
    throw IoError("truncated PNM payload: " + path.string());
  }
  return image;
}

}  // namespace gazemil
