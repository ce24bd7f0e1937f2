#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dyndepth/io.hpp"

namespace dyndepth::io {

namespace {

static_assert(std::endian::native == std::endian::little,
              "file I/O assumes a little-endian host");

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_all(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "short write to '" + path.string() + "'");
}

/// Whitespace-separated header tokens of the netpbm family ('#' comments).
class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, const fs::path& path)
      : bytes_(bytes), path_(path) {}

  std::string token() {
    skip_space();
    std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_])))
      ++pos_;
    if (start == pos_) fail(ErrorKind::io, "truncated header in '" + path_.string() + "'");
    return bytes_.substr(start, pos_ - start);
  }

  long integer() {
    const std::string t = token();
    try {
      std::size_t used = 0;
      long v = std::stol(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      fail(ErrorKind::io, "bad integer '" + t + "' in '" + path_.string() + "'");
    }
  }

  double real() {
    const std::string t = token();
    try {
      return std::stod(t);
    } catch (const std::exception&) {
      fail(ErrorKind::io, "bad number '" + t + "' in '" + path_.string() + "'");
    }
  }

  /// Consumes the single whitespace byte that ends the header.
  std::size_t data_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_])))
      fail(ErrorKind::io, "malformed header in '" + path_.string() + "'");
    return pos_ + 1;
  }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& bytes_;
  const fs::path& path_;
  std::size_t pos_ = 0;
};

template <class T>
T load(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <class T>
void store(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

float byteswap_float(float f) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(f);
  u = ((u & 0xffu) << 24) | ((u & 0xff00u) << 8) | ((u >> 8) & 0xff00u) | (u >> 24);
  return std::bit_cast<float>(u);
}

std::vector<double> flat(const Eigen::Matrix3d& m) {
  std::vector<double> out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.push_back(m(r, c));
  return out;
}

}  // namespace

std::string read_text(const fs::path& path) { return read_all(path); }
void write_text(const fs::path& path, const std::string& text) {
  write_all(path, text);
}

// --- PFM --------------------------------------------------------------------

Raster<double> read_pfm(const fs::path& path) {
  const std::string bytes = read_all(path);
  HeaderReader header(bytes, path);
  const std::string magic = header.token();
  if (magic != "Pf")
    fail(ErrorKind::io, "'" + path.string() + "' is not a single-channel PFM");
  const long w = header.integer();
  const long h = header.integer();
  const double scale = header.real();
  if (w <= 0 || h <= 0 || scale == 0.0)
    fail(ErrorKind::io, "bad PFM header in '" + path.string() + "'");
  const std::size_t start = header.data_start();
  const std::size_t count = static_cast<std::size_t>(w) * h;
  if (bytes.size() < start + count * 4)
    fail(ErrorKind::io, "truncated PFM data in '" + path.string() + "'");
  const bool big_endian = scale > 0.0;
  Raster<double> raster(static_cast<int>(w), static_cast<int>(h));
  for (long row = 0; row < h; ++row) {
    const long y = h - 1 - row;  // stored bottom-to-top
    for (long x = 0; x < w; ++x) {
      float f = load<float>(bytes.data() + start + 4 * (row * w + x));
      if (big_endian) f = byteswap_float(f);
      raster.at(static_cast<int>(x), static_cast<int>(y)) = f;
    }
  }
  return raster;
}

void write_pfm(const fs::path& path, const Raster<double>& raster) {
  std::string out = "Pf\n" + std::to_string(raster.width) + " " +
                    std::to_string(raster.height) + "\n-1.0\n";
  out.reserve(out.size() + raster.size() * 4);
  for (int row = 0; row < raster.height; ++row) {
    const int y = raster.height - 1 - row;
    for (int x = 0; x < raster.width; ++x)
      store(out, static_cast<float>(raster.at(x, y)));
  }
  write_all(path, out);
}

// --- .flo -------------------------------------------------------------------

FlowField read_flo(const fs::path& path) {
  const std::string bytes = read_all(path);
  if (bytes.size() < 12) fail(ErrorKind::io, "truncated flow file '" + path.string() + "'");
  if (load<float>(bytes.data()) != 202021.25f)
    fail(ErrorKind::io, "'" + path.string() + "' has a bad flow magic number");
  const std::int32_t w = load<std::int32_t>(bytes.data() + 4);
  const std::int32_t h = load<std::int32_t>(bytes.data() + 8);
  if (w <= 0 || h <= 0) fail(ErrorKind::io, "bad flow size in '" + path.string() + "'");
  const std::size_t count = static_cast<std::size_t>(w) * h;
  if (bytes.size() < 12 + count * 8)
    fail(ErrorKind::io, "truncated flow data in '" + path.string() + "'");
  FlowField flow;
  flow.vectors = Raster<Eigen::Vector2d>(w, h);
  for (std::size_t k = 0; k < count; ++k) {
    const char* p = bytes.data() + 12 + 8 * k;
    flow.vectors.data[k] = Eigen::Vector2d(load<float>(p), load<float>(p + 4));
  }
  return flow;
}

void write_flo(const fs::path& path, const FlowField& flow) {
  std::string out;
  out.reserve(12 + flow.vectors.size() * 8);
  store(out, 202021.25f);
  store(out, static_cast<std::int32_t>(flow.width()));
  store(out, static_cast<std::int32_t>(flow.height()));
  for (const auto& v : flow.vectors.data) {
    store(out, static_cast<float>(v.x()));
    store(out, static_cast<float>(v.y()));
  }
  write_all(path, out);
}

// --- PGM --------------------------------------------------------------------

namespace {
Raster<std::uint8_t> read_pgm_raw(const fs::path& path) {
  const std::string bytes = read_all(path);
  HeaderReader header(bytes, path);
  if (header.token() != "P5") fail(ErrorKind::io, "'" + path.string() + "' is not a binary PGM");
  const long w = header.integer();
  const long h = header.integer();
  const long maxval = header.integer();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    fail(ErrorKind::io, "unsupported PGM header in '" + path.string() + "'");
  const std::size_t start = header.data_start();
  const std::size_t count = static_cast<std::size_t>(w) * h;
  if (bytes.size() < start + count)
    fail(ErrorKind::io, "truncated PGM data in '" + path.string() + "'");
  Raster<std::uint8_t> image(static_cast<int>(w), static_cast<int>(h));
  std::memcpy(image.data.data(), bytes.data() + start, count);
  return image;
}
}  // namespace

Mask read_pgm(const fs::path& path) {
  Mask mask = read_pgm_raw(path);
  for (auto& v : mask.data) v = v != 0 ? 1 : 0;
  return mask;
}

void write_pgm_bytes(const fs::path& path, const Raster<std::uint8_t>& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.data.data()), image.size());
  write_all(path, out);
}

void write_pgm(const fs::path& path, const Mask& mask) {
  Raster<std::uint8_t> image(mask.width, mask.height);
  for (std::size_t k = 0; k < mask.size(); ++k)
    image.data[k] = mask.data[k] != 0 ? 255 : 0;
  write_pgm_bytes(path, image);
}

// --- cameras ----------------------------------------------------------------

nlohmann::json cameras_to_json(const std::vector<Camera>& cameras) {
  nlohmann::json doc = nlohmann::json::array();
  for (const Camera& c : cameras) {
    nlohmann::json frame;
    frame["K"] = flat(c.K);
    frame["R"] = flat(c.R);
    frame["t"] = {c.t.x(), c.t.y(), c.t.z()};
    frame["width"] = c.width;
    frame["height"] = c.height;
    doc.push_back(std::move(frame));
  }
  return doc;
}

std::vector<Camera> cameras_from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) fail(ErrorKind::io, "camera document must be an array");
  std::vector<Camera> cameras;
  try {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const auto& f = doc[i];
      Camera c;
      const auto K = f.at("K").get<std::vector<double>>();
      const auto R = f.at("R").get<std::vector<double>>();
      const auto t = f.at("t").get<std::vector<double>>();
      if (K.size() != 9 || R.size() != 9 || t.size() != 3)
        fail(ErrorKind::io, "camera " + std::to_string(i) + " has malformed K/R/t");
      for (int r = 0; r < 3; ++r)
        for (int col = 0; col < 3; ++col) {
          c.K(r, col) = K[3 * r + col];
          c.R(r, col) = R[3 * r + col];
        }
      c.t = Eigen::Vector3d(t[0], t[1], t[2]);
      c.width = f.at("width").get<int>();
      c.height = f.at("height").get<int>();
      c.index = static_cast<int>(i);
      validate(c);
      cameras.push_back(c);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::io, std::string("malformed camera document: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::io) throw;
    fail(ErrorKind::io, std::string("invalid camera: ") + e.what());
  }
  return cameras;
}

std::vector<Camera> read_cameras(const fs::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_all(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::io, "cannot parse '" + path.string() + "': " + e.what());
  }
  return cameras_from_json(doc);
}

void write_cameras(const fs::path& path, const std::vector<Camera>& cameras) {
  write_all(path, cameras_to_json(cameras).dump(2) + "\n");
}

// --- checkpoint -------------------------------------------------------------

Checkpoint read_checkpoint(const fs::path& path) {
  const std::string bytes = read_all(path);
  const std::size_t newline = bytes.find('\n');
  if (newline == std::string::npos)
    fail(ErrorKind::io, "checkpoint '" + path.string() + "' has no header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, newline));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::io, "bad checkpoint header in '" + path.string() + "': " + e.what());
  }
  Checkpoint ck;
  std::size_t pos = newline + 1;
  try {
    ck.meta = header.value("meta", nlohmann::json::object());
    for (const auto& b : header.at("blocks")) {
      Checkpoint::Entry e;
      e.name = b.at("name").get<std::string>();
      e.rows = b.at("rows").get<int>();
      e.cols = b.at("cols").get<int>();
      if (e.rows <= 0 || e.cols <= 0)
        fail(ErrorKind::io, "checkpoint block '" + e.name + "' has a bad shape");
      const std::size_t n = static_cast<std::size_t>(e.rows) * e.cols;
      if (bytes.size() < pos + n * 8)
        fail(ErrorKind::io, "checkpoint '" + path.string() + "' is truncated");
      e.values.resize(n);
      std::memcpy(e.values.data(), bytes.data() + pos, n * 8);
      pos += n * 8;
      ck.blocks.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::io, "bad checkpoint header in '" + path.string() + "': " + e.what());
  }
  if (pos != bytes.size())
    fail(ErrorKind::io, "checkpoint '" + path.string() + "' has trailing bytes");
  return ck;
}

void write_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
  nlohmann::json header;
  header["format"] = "dyndepth-checkpoint";
  header["version"] = 1;
  header["meta"] = checkpoint.meta;
  header["blocks"] = nlohmann::json::array();
  for (const auto& b : checkpoint.blocks) {
    require(b.values.size() == static_cast<std::size_t>(b.rows) * b.cols,
            ErrorKind::structural, "checkpoint block '" + b.name + "' size mismatch");
    header["blocks"].push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  }
  std::string out = header.dump() + "\n";
  for (const auto& b : checkpoint.blocks)
    out.append(reinterpret_cast<const char*>(b.values.data()), b.values.size() * 8);
  write_all(path, out);
}

}  // namespace dyndepth::io
