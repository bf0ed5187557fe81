#include "sapg/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sapg::io {

namespace {

[[noreturn]] void io_error(const std::string& what, const std::filesystem::path& path) {
  throw Error(ErrorKind::io, what + ": " + path.string());
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) io_error("cannot open for writing", path);
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_error("cannot open for reading", path);
  return in;
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  char ch = 0;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

std::filesystem::path sidecar(const std::filesystem::path& path) { return path.string() + ".json"; }

}  // namespace

void write_pgm(const std::filesystem::path& path, const ImageVector& image, int maxval, const Metadata& metadata) {
  if (maxval < 1 || maxval > 65535) throw Error(ErrorKind::domain, "write_pgm: maxval out of range");
  auto out = open_out(path);
  out << "P5\n";
  for (const auto& [k, v] : metadata) out << "# " << k << "=" << v << "\n";
  out << image.shape().cols << " " << image.shape().rows << "\n" << maxval << "\n";
  const bool wide = maxval > 255;
  std::string buf;
  buf.reserve(image.size() * (wide ? 2 : 1));
  for (double v : image.values()) {
    const double c = std::clamp(std::round(v), 0.0, static_cast<double>(maxval));
    const auto q = static_cast<std::uint16_t>(c);
    if (wide) buf.push_back(static_cast<char>(q >> 8));
    buf.push_back(static_cast<char>(q & 0xff));
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) io_error("write failed", path);
}

ImageVector read_pgm(const std::filesystem::path& path) {
  auto in = open_in(path);
  if (pgm_token(in) != "P5") io_error("not a binary PGM (P5) file", path);
  std::size_t cols = 0, rows = 0;
  int maxval = 0;
  try {
    cols = std::stoul(pgm_token(in));
    rows = std::stoul(pgm_token(in));
    maxval = std::stoi(pgm_token(in));
  } catch (const std::exception&) {
    io_error("malformed PGM header", path);
  }
  if (maxval < 1 || maxval > 65535 || rows == 0 || cols == 0) io_error("malformed PGM header", path);
  const bool wide = maxval > 255;
  std::vector<unsigned char> bytes(rows * cols * (wide ? 2 : 1));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) io_error("truncated PGM data", path);
  ImageVector img(Shape::image(rows, cols), DomainTag::pixel);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = wide ? static_cast<double>((bytes[2 * i] << 8) | bytes[2 * i + 1]) : static_cast<double>(bytes[i]);
  }
  return img;
}

void write_raw(const std::filesystem::path& path, const ImageVector& image, const Metadata& metadata) {
  {
    auto out = open_out(path);
    std::string buf(image.size() * 8, '\0');
    for (std::size_t i = 0; i < image.size(); ++i) {
      auto bits = std::bit_cast<std::uint64_t>(image[i]);
      for (int b = 0; b < 8; ++b) buf[i * 8 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) io_error("write failed", path);
  }
  nlohmann::ordered_json j;
  const Shape& s = image.shape();
  j["shape"] = s.is_1d ? nlohmann::json::array({s.cols}) : nlohmann::json::array({s.rows, s.cols});
  j["domain_tag"] = to_string(image.tag());
  j["dtype"] = "float64-le";
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  for (const auto& [k, v] : metadata) meta[k] = v;
  j["metadata"] = meta;
  auto side = open_out(sidecar(path));
  side << j.dump(2) << "\n";
}

ImageVector read_raw(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    auto side = open_in(sidecar(path));
    side >> j;
  } catch (const nlohmann::json::exception&) {
    io_error("malformed JSON sidecar", sidecar(path));
  }
  Shape shape;
  try {
    const auto& dims = j.at("shape");
    if (dims.size() == 1) {
      shape = Shape::line(dims[0].get<std::size_t>());
    } else if (dims.size() == 2) {
      shape = Shape::image(dims[0].get<std::size_t>(), dims[1].get<std::size_t>());
    } else {
      io_error("sidecar shape must have 1 or 2 dimensions", path);
    }
  } catch (const nlohmann::json::exception&) {
    io_error("sidecar missing 'shape'", path);
  }
  const DomainTag tag = domain_tag_from_string(j.value("domain_tag", std::string("pixel")));
  auto in = open_in(path);
  std::string buf(shape.size() * 8, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!in) io_error("truncated raw data", path);
  ImageVector img(shape, tag);
  for (std::size_t i = 0; i < img.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i * 8 + static_cast<std::size_t>(b)])) << (8 * b);
    }
    img[i] = std::bit_cast<double>(bits);
  }
  return img;
}

}  // namespace sapg::io
