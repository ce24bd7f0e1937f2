#pragma once

// File formats shared by the dataset layout and the run directory.
//
//   PFM   "Pf\n<w> <h>\n-1.0\n", little-endian float32, rows bottom-to-top.
//   .flo  float 202021.25, int32 w, int32 h, then (u, v) float32 pairs,
//         row-major from the top, all little-endian.
//   PGM   binary P5, maxval 255; nonzero bytes read back as 1.
//   cameras.json  array of {"K": [9], "R": [9], "t": [3], "width", "height"}.
//   checkpoint    one line of JSON ({"blocks": [{name, rows, cols}], ...})
//                 terminated by '\n', then the blocks' values as float64 LE.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dyndepth/autodiff.hpp"
#include "dyndepth/flow.hpp"
#include "dyndepth/geometry.hpp"
#include "dyndepth/raster.hpp"

namespace dyndepth::io {

namespace fs = std::filesystem;

Raster<double> read_pfm(const fs::path& path);
void write_pfm(const fs::path& path, const Raster<double>& raster);

/// Flow file; source/target indices are not stored in the file.
FlowField read_flo(const fs::path& path);
void write_flo(const fs::path& path, const FlowField& flow);

/// Mask with values in {0, 1}.
Mask read_pgm(const fs::path& path);
/// Writes 0 -> 0 and nonzero -> 255.
void write_pgm(const fs::path& path, const Mask& mask);
/// Writes an already-scaled 8-bit image verbatim.
void write_pgm_bytes(const fs::path& path, const Raster<std::uint8_t>& image);

std::vector<Camera> read_cameras(const fs::path& path);
void write_cameras(const fs::path& path, const std::vector<Camera>& cameras);
nlohmann::json cameras_to_json(const std::vector<Camera>& cameras);
std::vector<Camera> cameras_from_json(const nlohmann::json& doc);

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  struct Entry {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::vector<double> values;
  };
  std::vector<Entry> blocks;
};

Checkpoint read_checkpoint(const fs::path& path);
void write_checkpoint(const fs::path& path, const Checkpoint& checkpoint);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace dyndepth::io
