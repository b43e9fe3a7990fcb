#include "ae/image_io.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace ae {

namespace {

// Reads the next header token, skipping whitespace and '#' comments that run
// to end of line. The netpbm spec allows comments anywhere between fields.
std::string next_token(const std::string& s, size_t& pos, const std::string& origin) {
  while (pos < s.size()) {
    if (std::isspace(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    } else if (s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  if (pos >= s.size()) throw ParseError(origin + ": truncated netpbm header");
  size_t start = pos;
  while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  return s.substr(start, pos - start);
}

int64_t header_int(const std::string& s, size_t& pos, const std::string& origin,
                   const char* what) {
  const std::string tok = next_token(s, pos, origin);
  try {
    size_t used = 0;
    long long v = std::stoll(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ParseError(std::string(origin) + ": bad " + what + " field '" + tok + "'");
  }
}

void write_binary(const std::string& path, const std::string& magic,
                  const std::vector<uint8_t>& samples, int64_t height, int64_t width,
                  int64_t channels, const std::string& header_comment) {
  if (samples.size() != static_cast<size_t>(height * width * channels)) {
    throw ValueError("pixel buffer size does not match " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << magic << "\n";
  if (!header_comment.empty()) {
    std::istringstream lines(header_comment);
    std::string line;
    while (std::getline(lines, line)) out << "# " << line << "\n";
  }
  out << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(samples.data()),
            static_cast<std::streamsize>(samples.size()));
  if (!out) throw IoError("short write to " + path);
}

}  // namespace

Image parse_netpbm(const std::string& bytes, const std::string& origin) {
  size_t pos = 0;
  const std::string magic = next_token(bytes, pos, origin);
  bool ascii;
  int64_t channels;
  if (magic == "P2") {
    ascii = true;
    channels = 1;
  } else if (magic == "P3") {
    ascii = true;
    channels = 3;
  } else if (magic == "P5") {
    ascii = false;
    channels = 1;
  } else if (magic == "P6") {
    ascii = false;
    channels = 3;
  } else {
    throw ParseError(origin + ": unsupported netpbm magic '" + magic + "'");
  }
  const int64_t width = header_int(bytes, pos, origin, "width");
  const int64_t height = header_int(bytes, pos, origin, "height");
  const int64_t maxval = header_int(bytes, pos, origin, "maxval");
  if (maxval > 255) throw ParseError(origin + ": only 1-byte samples supported");

  Image img;
  img.height = height;
  img.width = width;
  img.channels = channels;
  const int64_t count = channels * height * width;
  img.pixels.resize(static_cast<size_t>(count));

  const double inv = 1.0 / static_cast<double>(maxval);
  if (ascii) {
    for (int64_t i = 0; i < count; ++i) {
      const std::string tok = next_token(bytes, pos, origin);
      long long v;
      try {
        v = std::stoll(tok);
      } catch (const std::exception&) {
        throw ParseError(origin + ": bad sample '" + tok + "'");
      }
      if (v < 0 || v > maxval) throw ParseError(origin + ": sample out of range");
      // Interleaved in the file, channel-major in memory.
      const int64_t pix = i / channels, ch = i % channels;
      img.pixels[static_cast<size_t>(ch * height * width + pix)] = static_cast<double>(v) * inv;
    }
  } else {
    // Exactly one whitespace byte separates the header from binary data.
    ++pos;
    if (pos + static_cast<size_t>(count) > bytes.size()) {
      throw ParseError(origin + ": truncated pixel data");
    }
    for (int64_t i = 0; i < count; ++i) {
      const uint8_t v = static_cast<uint8_t>(bytes[pos + static_cast<size_t>(i)]);
      const int64_t pix = i / channels, ch = i % channels;
      img.pixels[static_cast<size_t>(ch * height * width + pix)] = static_cast<double>(v) * inv;
    }
  }
  return img;
}

Image read_netpbm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_netpbm(buf.str(), path);
}

void write_pgm(const std::string& path, const std::vector<uint8_t>& gray, int64_t height,
               int64_t width, const std::string& header_comment) {
  write_binary(path, "P5", gray, height, width, 1, header_comment);
}

void write_ppm(const std::string& path, const std::vector<uint8_t>& rgb, int64_t height,
               int64_t width, const std::string& header_comment) {
  // Interleave to the file's RGB-per-pixel order.
  std::vector<uint8_t> inter(rgb.size());
  const int64_t hw = height * width;
  for (int64_t p = 0; p < hw; ++p) {
    for (int64_t c = 0; c < 3; ++c) {
      inter[static_cast<size_t>(p * 3 + c)] = rgb[static_cast<size_t>(c * hw + p)];
    }
  }
  write_binary(path, "P6", inter, height, width, 3, header_comment);
}

Tensor image_to_tensor(const Image& img) {
  Tensor t = Tensor::zeros({img.channels, img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), t.mutable_data());
  return t;
}

}  // namespace ae
