#pragma once

// Portable graymap (P2 text / P5 binary) reading and writing.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>
#include <string>

#include "xsfl/errors.hpp"
#include "xsfl/tensor.hpp"

namespace xsfl::pgm {

namespace detail {

// Next whitespace-delimited header token, skipping '#' comments.
inline std::string token(std::istream& is, const std::string& what) {
  std::string tok;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      is.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
    } else {
      tok.push_back(c);
    }
  }
  if (tok.empty()) throw IngestionError(what + ": truncated PGM header");
  return tok;
}

inline std::size_t number(std::istream& is, const std::string& what) {
  const std::string tok = token(is, what);
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(tok, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != tok.size()) throw IngestionError(what + ": bad PGM header value '" + tok + "'");
  return v;
}

}  // namespace detail

/// Reads a PGM as a [1,H,W] tensor scaled to [0,1]. `what` names the source in errors.
inline Tensor read(std::istream& is, const std::string& what = "image") {
  const std::string magic = detail::token(is, what);
  if (magic != "P2" && magic != "P5") throw IngestionError(what + ": not a PGM file (magic '" + magic + "')");
  const std::size_t w = detail::number(is, what);
  const std::size_t h = detail::number(is, what);
  const std::size_t maxval = detail::number(is, what);
  if (w == 0 || h == 0) throw IngestionError(what + ": empty image");
  if (maxval == 0 || maxval > 65535) throw IngestionError(what + ": maxval out of range");
  Tensor img({1, h, w});
  auto d = img.data();
  const double scale = 1.0 / static_cast<double>(maxval);
  if (magic == "P2") {
    for (std::size_t i = 0; i < w * h; ++i) {
      const std::size_t v = detail::number(is, what);
      if (v > maxval) throw IngestionError(what + ": pixel exceeds maxval");
      d[i] = static_cast<double>(v) * scale;
    }
  } else {
    const bool wide = maxval > 255;
    for (std::size_t i = 0; i < w * h; ++i) {
      unsigned char b[2] = {0, 0};
      if (!is.read(reinterpret_cast<char*>(b), wide ? 2 : 1)) throw IngestionError(what + ": truncated pixel data");
      const std::size_t v = wide ? (static_cast<std::size_t>(b[0]) << 8 | b[1]) : b[0];
      if (v > maxval) throw IngestionError(what + ": pixel exceeds maxval");
      d[i] = static_cast<double>(v) * scale;
    }
  }
  return img;
}

inline Tensor read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError(path.string() + ": cannot open");
  return read(is, path.string());
}

/// Writes an [H,W] or [1,H,W] tensor with values in [0,1] as 8-bit PGM.
inline void write(std::ostream& os, const Tensor& img, bool binary = true) {
  const bool ok = img.rank() == 2 || (img.rank() == 3 && img.dim(0) == 1);
  if (!ok) throw DimensionError("PGM export needs [H,W] or [1,H,W], got " + shape_string(img.shape()));
  const std::size_t h = img.dim(img.rank() - 2), w = img.dim(img.rank() - 1);
  os << (binary ? "P5" : "P2") << '\n' << w << ' ' << h << "\n255\n";
  auto px = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  const auto d = img.data();
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const int v = px(d[r * w + c]);
      if (binary) {
        os.put(static_cast<char>(v));
      } else {
        os << v << (c + 1 == w ? '\n' : ' ');
      }
    }
  }
}

inline void write(const std::filesystem::path& path, const Tensor& img, bool binary = true) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestionError(path.string() + ": cannot create");
  write(os, img, binary);
  if (!os) throw IngestionError(path.string() + ": write failed");
}

}  // namespace xsfl::pgm
