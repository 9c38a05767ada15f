#include "rcr/pnm.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>
#include <string>

namespace rcr {

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string token;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      if (!token.empty()) break;
    } else {
      token.push_back(static_cast<char>(c));
    }
    c = in.get();
  }
  return token;
}

std::size_t parse_dimension(const std::string& token, const std::filesystem::path& path) {
  try {
    std::size_t pos = 0;
    const unsigned long value = std::stoul(token, &pos);
    if (pos != token.size() || value == 0) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": bad PNM header field '" + token + "'");
  }
}

}  // namespace

PnmImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string magic = next_token(in);
  PnmImage image;
  if (magic == "P5") {
    image.channels = 1;
  } else if (magic == "P6") {
    image.channels = 3;
  } else {
    throw std::runtime_error(path.string() + ": not a binary PGM/PPM file");
  }
  image.width = parse_dimension(next_token(in), path);
  image.height = parse_dimension(next_token(in), path);
  if (parse_dimension(next_token(in), path) != 255) {
    throw std::runtime_error(path.string() + ": only maxval 255 is supported");
  }
  image.pixels.resize(image.width * image.height * image.channels);
  in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) {
    throw std::runtime_error(path.string() + ": truncated pixel data");
  }
  return image;
}

void write_pnm(const std::filesystem::path& path, const PnmImage& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("PNM supports 1 or 3 channels");
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw std::invalid_argument("PNM pixel buffer does not match dimensions");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace rcr
